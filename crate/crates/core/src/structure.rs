//! Reading the thought-agent structure off a trained model: estimated
//! support, per-agent thought sets, agreement levels and shared/private
//! splits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{decoder_jacobian, encode, MlpModel};
use crate::error::{Error, Result};
use crate::eval::hungarian;
use crate::numerics::Matrix;
use crate::synthgen::{AgentBlocks, SupportMatrix};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_PROBE_COUNT: usize = 256;

/// Mean absolute decoder Jacobian and its thresholded pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub mean_abs_jacobian: Matrix,
    /// Row-major 0/1, `n_h x n_latent`.
    pub support: Vec<u8>,
    pub tau: f64,
    pub n_probes: usize,
}

impl SupportEstimate {
    /// Thresholds a mean |J| matrix: columns are scaled by their maximum
    /// (all-zero columns stay zero) and entries `>= tau` are kept.
    pub fn from_mean_abs(mean_abs_jacobian: Matrix, tau: f64, n_probes: usize) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
        }
        let (rows, cols) = mean_abs_jacobian.shape();
        let mut support = vec![0u8; rows * cols];
        for c in 0..cols {
            let max = (0..rows).map(|r| mean_abs_jacobian.get(r, c)).fold(0.0, f64::max);
            if max <= 0.0 {
                continue;
            }
            for r in 0..rows {
                if mean_abs_jacobian.get(r, c) / max >= tau {
                    support[r * cols + c] = 1;
                }
            }
        }
        Ok(Self {
            mean_abs_jacobian,
            support,
            tau,
            n_probes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.mean_abs_jacobian.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.mean_abs_jacobian.cols()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.support[r * self.n_cols() + c] != 0
    }

    /// Normalized mean |J| (per-column max scaled to 1).
    pub fn normalized(&self) -> Matrix {
        let (rows, cols) = self.mean_abs_jacobian.shape();
        let maxes: Vec<f64> = (0..cols)
            .map(|c| (0..rows).map(|r| self.mean_abs_jacobian.get(r, c)).fold(0.0, f64::max))
            .collect();
        Matrix::from_fn(rows, cols, |r, c| {
            if maxes[c] > 0.0 {
                self.mean_abs_jacobian.get(r, c) / maxes[c]
            } else {
                0.0
            }
        })
    }

    /// Columns with no entry above threshold.
    pub fn inactive_thoughts(&self) -> Vec<usize> {
        (0..self.n_cols())
            .filter(|&c| (0..self.n_rows()).all(|r| !self.get(r, c)))
            .collect()
    }

    pub fn column_ones(&self, c: usize) -> BTreeSet<usize> {
        (0..self.n_rows()).filter(|&r| self.get(r, c)).collect()
    }
}

/// Mean |decoder Jacobian| at the encodings of `probes`, thresholded at `tau`.
pub fn estimate_support(model: &MlpModel, probes: &Matrix, tau: f64) -> Result<SupportEstimate> {
    if probes.rows() == 0 {
        return Err(Error::InvalidArgument("no probe states".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    let z = encode(model, probes)?;
    let mut acc = Matrix::zeros(model.n_h(), model.n_latent());
    for i in 0..z.rows() {
        let j = decoder_jacobian(model, z.row(i))?;
        for (a, v) in acc.data_mut().iter_mut().zip(j.data()) {
            *a += v.abs();
        }
    }
    let mean = acc.scale(1.0 / z.rows() as f64);
    SupportEstimate::from_mean_abs(mean, tau, probes.rows())
}

/// Per-agent sets of thought indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentThoughtSets {
    pub sets: Vec<BTreeSet<usize>>,
}

impl AgentThoughtSets {
    pub fn n_agents(&self) -> usize {
        self.sets.len()
    }

    pub fn get(&self, agent: usize) -> &BTreeSet<usize> {
        &self.sets[agent]
    }

    /// Ground-truth sets of a known support.
    pub fn from_support(support: &SupportMatrix) -> Self {
        Self {
            sets: (0..support.blocks().n_agents())
                .map(|k| support.agent_thoughts(k).into_iter().collect())
                .collect(),
        }
    }
}

/// `set_k = { j : some row of block k has an estimated nonzero in column j }`.
pub fn thought_sets(est: &SupportEstimate, blocks: &AgentBlocks) -> Result<AgentThoughtSets> {
    if blocks.n_h() > est.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "agent blocks span {} rows, support has {}",
            blocks.n_h(),
            est.n_rows()
        )));
    }
    let sets = blocks
        .ranges()
        .iter()
        .map(|range| {
            (0..est.n_cols())
                .filter(|&c| range.clone().any(|r| est.get(r, c)))
                .collect()
        })
        .collect();
    Ok(AgentThoughtSets { sets })
}

/// Number of agents holding each thought.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementVector(pub Vec<usize>);

impl AgreementVector {
    pub fn level(&self, thought: usize) -> usize {
        self.0[thought]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn agreement(sets: &AgentThoughtSets, n_z: usize) -> Result<AgreementVector> {
    let mut alpha = vec![0usize; n_z];
    for set in &sets.sets {
        for &j in set {
            if j >= n_z {
                return Err(Error::InvalidArgument(format!("thought index {j} out of range for {n_z} thoughts")));
            }
            alpha[j] += 1;
        }
    }
    Ok(AgreementVector(alpha))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedPrivate {
    pub shared: BTreeSet<usize>,
    pub private_i: BTreeSet<usize>,
    pub private_j: BTreeSet<usize>,
}

pub fn shared_private(sets: &AgentThoughtSets, i: usize, j: usize) -> Result<SharedPrivate> {
    let n = sets.n_agents();
    if i == j {
        return Err(Error::InvalidArgument("shared/private split needs two distinct agents".into()));
    }
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("agent index out of range for {n} agents")));
    }
    let (a, b) = (&sets.sets[i], &sets.sets[j]);
    Ok(SharedPrivate {
        shared: a.intersection(b).copied().collect(),
        private_i: a.difference(b).copied().collect(),
        private_j: b.difference(a).copied().collect(),
    })
}

/// One-to-one map between two index sets with a score per matched pair.
/// `mapping[i]` is the partner of `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationMap {
    pub mapping: Vec<usize>,
    pub scores: Vec<f64>,
}

impl PermutationMap {
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
            scores: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.mapping.len()];
        self.mapping.iter().all(|&m| m < seen.len() && !std::mem::replace(&mut seen[m], true))
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        inv
    }
}

/// Matches estimated columns to true columns by maximum overlap of nonzero
/// rows. If the column counts differ the narrower side is padded with empty
/// columns; `mapping` is indexed by (padded) estimated column.
pub fn match_columns(est: &SupportEstimate, truth: &SupportMatrix) -> Result<PermutationMap> {
    if est.n_rows() != truth.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} rows, truth has {}",
            est.n_rows(),
            truth.n_rows()
        )));
    }
    let n = est.n_cols().max(truth.n_cols());
    let overlap = |e: usize, t: usize| -> f64 {
        if e >= est.n_cols() || t >= truth.n_cols() {
            return 0.0;
        }
        (0..truth.n_rows()).filter(|&r| est.get(r, e) && truth.get(r, t)).count() as f64
    };
    let cost = Matrix::from_fn(n, n, |e, t| -overlap(e, t));
    let mut perm = hungarian(&cost)?;
    perm.scores = perm.mapping.iter().enumerate().map(|(e, &t)| overlap(e, t)).collect();
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{Activation, Layer, Mlp};

    fn blocks(d: &[usize]) -> AgentBlocks {
        AgentBlocks::from_dims(d).unwrap()
    }

    fn estimate_from(rows: &[Vec<u8>]) -> SupportEstimate {
        let m = Matrix::from_fn(rows.len(), rows[0].len(), |r, c| f64::from(rows[r][c]));
        SupportEstimate::from_mean_abs(m, 0.5, 1).unwrap()
    }

    fn linear_model(dec: Matrix) -> MlpModel {
        let (n_h, n_z) = dec.shape();
        let enc = Layer::new(Matrix::zeros(n_z, n_h), vec![0.0; n_z], Activation::Linear).unwrap();
        let dec = Layer::new(dec, vec![0.0; n_h], Activation::Linear).unwrap();
        MlpModel::new(Mlp::new(vec![enc]).unwrap(), Mlp::new(vec![dec]).unwrap()).unwrap()
    }

    #[test]
    fn linear_decoder_support_is_weight_pattern() {
        let w = Matrix::new(3, 2, vec![2.0, 0.0, 0.5, -1.0, 0.0, 3.0]).unwrap();
        let est = estimate_support(&linear_model(w), &Matrix::zeros(4, 3), 0.2).unwrap();
        assert_eq!(est.support, vec![1, 0, 1, 1, 0, 1]);
    }

    #[test]
    fn tau_near_one_keeps_column_maxima() {
        let w = Matrix::new(3, 3, vec![2.0, 0.0, 1.0, 0.5, -1.0, 0.9, 0.0, 3.0, 0.0]).unwrap();
        let est = estimate_support(&linear_model(w), &Matrix::zeros(1, 3), 1.0 - 1e-12).unwrap();
        assert_eq!(est.support, vec![1, 0, 1, 0, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn bad_tau_or_empty_probes_rejected() {
        let m = linear_model(Matrix::identity(2));
        assert!(estimate_support(&m, &Matrix::zeros(1, 2), 0.0).is_err());
        assert!(estimate_support(&m, &Matrix::zeros(1, 2), 1.0).is_err());
        assert!(estimate_support(&m, &Matrix::zeros(0, 2), 0.5).is_err());
    }

    #[test]
    fn zero_columns_are_inactive() {
        let est = estimate_from(&[vec![1, 0], vec![1, 0]]);
        assert_eq!(est.inactive_thoughts(), vec![1]);
    }

    #[test]
    fn shared_speed_thought_pattern() {
        let est = estimate_from(&[vec![1, 0, 1], vec![0, 1, 1]]);
        let sets = thought_sets(&est, &blocks(&[1, 1])).unwrap();
        assert_eq!(sets.sets[0], BTreeSet::from([0, 2]));
        assert_eq!(sets.sets[1], BTreeSet::from([1, 2]));
        assert_eq!(agreement(&sets, 3).unwrap(), AgreementVector(vec![1, 1, 2]));
        let sp = shared_private(&sets, 0, 1).unwrap();
        assert_eq!(sp.shared, BTreeSet::from([2]));
        assert_eq!(sp.private_i, BTreeSet::from([0]));
        assert_eq!(sp.private_j, BTreeSet::from([1]));
    }

    #[test]
    fn empty_support_gives_empty_sets() {
        let est = estimate_from(&[vec![0, 0], vec![0, 0]]);
        let sets = thought_sets(&est, &blocks(&[1, 1])).unwrap();
        assert!(sets.sets.iter().all(BTreeSet::is_empty));
        assert_eq!(agreement(&sets, 2).unwrap().0, vec![0, 0]);
    }

    #[test]
    fn single_block_holds_all_active_columns() {
        let est = estimate_from(&[vec![1, 0, 0], vec![0, 0, 1]]);
        let sets = thought_sets(&est, &blocks(&[2])).unwrap();
        assert_eq!(sets.sets[0], BTreeSet::from([0, 2]));
    }

    #[test]
    fn five_agents_agree_on_one_thought() {
        let sets = AgentThoughtSets {
            sets: vec![BTreeSet::from([0]); 5],
        };
        assert_eq!(agreement(&sets, 2).unwrap().0, vec![5, 0]);
    }

    #[test]
    fn agreement_rejects_out_of_range() {
        let sets = AgentThoughtSets {
            sets: vec![BTreeSet::from([3])],
        };
        assert!(agreement(&sets, 2).is_err());
    }

    #[test]
    fn shared_private_edge_cases() {
        let same = AgentThoughtSets {
            sets: vec![BTreeSet::from([0, 1]), BTreeSet::from([0, 1])],
        };
        let sp = shared_private(&same, 0, 1).unwrap();
        assert!(sp.private_i.is_empty() && sp.private_j.is_empty());
        let disjoint = AgentThoughtSets {
            sets: vec![BTreeSet::from([0]), BTreeSet::from([1])],
        };
        assert!(shared_private(&disjoint, 0, 1).unwrap().shared.is_empty());
        assert!(matches!(shared_private(&disjoint, 1, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matching_identity_and_reversal() {
        let rows = vec![vec![1, 0, 1], vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]];
        let truth = SupportMatrix::from_rows(&rows, blocks(&[2, 2])).unwrap();
        let est = estimate_from(&rows);
        let p = match_columns(&est, &truth).unwrap();
        assert_eq!(p.mapping, vec![0, 1, 2]);
        assert_eq!(p.scores, vec![2.0, 2.0, 3.0]);

        let reversed: Vec<Vec<u8>> = rows.iter().map(|r| r.iter().rev().copied().collect()).collect();
        let p = match_columns(&estimate_from(&reversed), &truth).unwrap();
        assert_eq!(p.mapping, vec![2, 1, 0]);
    }
}
