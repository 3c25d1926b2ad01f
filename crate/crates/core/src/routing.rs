//! Agreement-based routing of recovered thoughts and the linear prefix
//! adapter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};
use crate::structure::{AgentThoughtSets, AgreementVector};

/// Weight per agreement level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable(pub BTreeMap<usize, f64>);

impl WeightTable {
    /// `w_alpha = alpha / n_agents`, levels `0..=n_agents`.
    pub fn proportional(n_agents: usize) -> Self {
        Self((0..=n_agents).map(|a| (a, a as f64 / n_agents as f64)).collect())
    }

    pub fn uniform(n_agents: usize, w: f64) -> Self {
        Self((0..=n_agents).map(|a| (a, w)).collect())
    }

    pub fn get(&self, level: usize) -> Option<f64> {
        self.0.get(&level).copied()
    }

    /// Every level in `1..=n_agents` needs a finite weight.
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        for a in 1..=n_agents {
            match self.get(a) {
                Some(w) if w.is_finite() => {}
                _ => {
                    return Err(Error::InvalidArgument(format!("no finite weight for agreement level {a}")));
                }
            }
        }
        Ok(())
    }
}

/// One agent's weighted thoughts, highest agreement first, then by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedThoughts {
    pub values: Vec<f64>,
    pub indices: Vec<usize>,
    pub levels: Vec<usize>,
}

impl RoutedThoughts {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn route(
    latents_row: &[f64],
    sets: &AgentThoughtSets,
    alpha: &AgreementVector,
    weights: &WeightTable,
    agent: usize,
) -> Result<RoutedThoughts> {
    if agent >= sets.n_agents() {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} out of range for {} agents",
            sets.n_agents()
        )));
    }
    if alpha.len() != latents_row.len() {
        return Err(Error::InvalidArgument(format!(
            "agreement vector covers {} thoughts, latents have {}",
            alpha.len(),
            latents_row.len()
        )));
    }
    let mut selected: Vec<(usize, usize)> = Vec::with_capacity(sets.get(agent).len());
    for &j in sets.get(agent) {
        if j >= latents_row.len() {
            return Err(Error::InvalidArgument(format!("thought {j} out of range")));
        }
        selected.push((alpha.level(j), j));
    }
    selected.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out = RoutedThoughts {
        values: Vec::with_capacity(selected.len()),
        indices: Vec::with_capacity(selected.len()),
        levels: Vec::with_capacity(selected.len()),
    };
    for (level, j) in selected {
        let w = weights
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no weight for agreement level {level}")))?;
        out.values.push(w * latents_row[j]);
        out.indices.push(j);
        out.levels.push(level);
    }
    Ok(out)
}

/// Linear map from zero-padded routed thoughts to an `m x d` prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    /// `(m * d) x n_route`.
    pub weights: Matrix,
    pub prefix_len: usize,
    pub embed_dim: usize,
}

impl Adapter {
    pub fn new(weights: Matrix, prefix_len: usize, embed_dim: usize) -> Result<Self> {
        if weights.rows() != prefix_len * embed_dim {
            return Err(Error::InvalidArgument(format!(
                "adapter has {} outputs, a {prefix_len}x{embed_dim} prefix needs {}",
                weights.rows(),
                prefix_len * embed_dim
            )));
        }
        Ok(Self {
            weights,
            prefix_len,
            embed_dim,
        })
    }

    pub fn zeros(n_route: usize, prefix_len: usize, embed_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(prefix_len * embed_dim, n_route),
            prefix_len,
            embed_dim,
        }
    }

    pub fn random(n_route: usize, prefix_len: usize, embed_dim: usize, scale: f64, rng: &mut SeededRng) -> Self {
        Self {
            weights: Matrix::from_fn(prefix_len * embed_dim, n_route, |_, _| scale * rng.normal()),
            prefix_len,
            embed_dim,
        }
    }

    pub fn n_route(&self) -> usize {
        self.weights.cols()
    }

    /// Routed values zero-padded to `n_route`.
    pub fn padded_input(&self, routed: &RoutedThoughts) -> Result<Vec<f64>> {
        if routed.len() > self.n_route() {
            return Err(Error::InvalidArgument(format!(
                "{} routed thoughts exceed adapter width {}",
                routed.len(),
                self.n_route()
            )));
        }
        let mut x = routed.values.clone();
        x.resize(self.n_route(), 0.0);
        Ok(x)
    }
}

pub fn make_prefix(adapter: &Adapter, routed: &RoutedThoughts) -> Result<Matrix> {
    let x = adapter.padded_input(routed)?;
    let y = adapter.weights.mul_vec(&x)?;
    Matrix::new(adapter.prefix_len, adapter.embed_dim, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn sets() -> AgentThoughtSets {
        AgentThoughtSets {
            sets: vec![BTreeSet::from([0, 2]), BTreeSet::from([1, 2])],
        }
    }

    #[test]
    fn ordering_by_level_then_index() {
        let alpha = AgreementVector(vec![1, 1, 2]);
        let r = route(&[0.5, -0.2, 0.9], &sets(), &alpha, &WeightTable::uniform(2, 1.0), 0).unwrap();
        assert_eq!(r.values, vec![0.9, 0.5]);
        assert_eq!(r.levels, vec![2, 1]);
        assert_eq!(r.indices, vec![2, 0]);
    }

    #[test]
    fn equal_levels_keep_index_order() {
        let s = AgentThoughtSets {
            sets: vec![BTreeSet::from([0, 1, 2])],
        };
        let alpha = AgreementVector(vec![1, 1, 1]);
        let r = route(&[3.0, 1.0, 2.0], &s, &alpha, &WeightTable::uniform(1, 1.0), 0).unwrap();
        assert_eq!(r.values, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_weight_level_zeroes_entries() {
        let alpha = AgreementVector(vec![1, 1, 2]);
        let mut w = WeightTable::uniform(2, 1.0);
        w.0.insert(1, 0.0);
        let r = route(&[0.5, -0.2, 0.9], &sets(), &alpha, &w, 1).unwrap();
        assert_eq!(r.values, vec![0.9, 0.0]);
    }

    #[test]
    fn missing_weight_is_an_error() {
        let alpha = AgreementVector(vec![1, 1, 2]);
        let w = WeightTable(BTreeMap::from([(2, 1.0)]));
        assert!(matches!(
            route(&[0.5, -0.2, 0.9], &sets(), &alpha, &w, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn proportional_weights() {
        let w = WeightTable::proportional(4);
        assert_eq!(w.get(2), Some(0.5));
        assert!(w.validate(4).is_ok());
        assert!(WeightTable(BTreeMap::from([(1, 1.0)])).validate(2).is_err());
    }

    #[test]
    fn zero_adapter_gives_zero_prefix() {
        let a = Adapter::zeros(3, 2, 4);
        let r = RoutedThoughts {
            values: vec![1.0, 2.0],
            indices: vec![0, 1],
            levels: vec![1, 1],
        };
        let p = make_prefix(&a, &r).unwrap();
        assert_eq!(p, Matrix::zeros(2, 4));
    }

    #[test]
    fn single_token_prefix_is_a_vector() {
        let a = Adapter::random(3, 1, 5, 1.0, &mut SeededRng::new(1));
        let r = RoutedThoughts {
            values: vec![1.0],
            indices: vec![0],
            levels: vec![1],
        };
        assert_eq!(make_prefix(&a, &r).unwrap().shape(), (1, 5));
    }

    #[test]
    fn identity_adapter_pads_values() {
        let a = Adapter::new(Matrix::identity(4), 1, 4).unwrap();
        let r = RoutedThoughts {
            values: vec![0.9, 0.5],
            indices: vec![2, 0],
            levels: vec![2, 1],
        };
        assert_eq!(make_prefix(&a, &r).unwrap().data(), &[0.9, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn overflow_is_rejected() {
        let a = Adapter::zeros(1, 1, 1);
        let r = RoutedThoughts {
            values: vec![1.0, 2.0],
            indices: vec![0, 1],
            levels: vec![1, 1],
        };
        assert!(matches!(make_prefix(&a, &r), Err(Error::InvalidArgument(_))));
        assert!(Adapter::new(Matrix::zeros(3, 2), 2, 2).is_err());
    }
}
