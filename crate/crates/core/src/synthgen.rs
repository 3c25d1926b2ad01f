//! Ground-truth latent worlds: support patterns, invertible mixing functions
//! with exactly prescribed Jacobian support, and sampled datasets.

use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{condition_number, finite_diff_jacobian, sample_laplace, Matrix, SeededRng};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Contiguous per-agent row ranges partitioning the state vector.
///
/// Serialized as a list of half-open `[start, end)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[usize; 2]>", into = "Vec<[usize; 2]>")]
pub struct AgentBlocks {
    ranges: Vec<Range<usize>>,
}

impl AgentBlocks {
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("at least one agent block is required".into()));
        }
        if let Some(k) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("agent {k} has an empty state block")));
        }
        let mut start = 0;
        let ranges = dims
            .iter()
            .map(|&d| {
                let r = start..start + d;
                start += d;
                r
            })
            .collect();
        Ok(Self { ranges })
    }

    pub fn n_agents(&self) -> usize {
        self.ranges.len()
    }

    /// Total state width.
    pub fn n_h(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn range(&self, agent: usize) -> Range<usize> {
        self.ranges[agent].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn dims(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    pub fn agent_of_row(&self, row: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&row))
    }
}

impl TryFrom<Vec<[usize; 2]>> for AgentBlocks {
    type Error = Error;

    fn try_from(pairs: Vec<[usize; 2]>) -> Result<Self> {
        let mut expected = 0;
        for &[s, e] in &pairs {
            if s != expected || e <= s {
                return Err(Error::InvalidArgument(format!(
                    "agent blocks must be contiguous, ordered and non-empty; got [{s}, {e})"
                )));
            }
            expected = e;
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("at least one agent block is required".into()));
        }
        Ok(Self {
            ranges: pairs.into_iter().map(|[s, e]| s..e).collect(),
        })
    }
}

impl From<AgentBlocks> for Vec<[usize; 2]> {
    fn from(b: AgentBlocks) -> Self {
        b.ranges.into_iter().map(|r| [r.start, r.end]).collect()
    }
}

/// A set of agents that jointly hold `count` thoughts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtGroup {
    pub agents: Vec<usize>,
    pub count: usize,
}

impl ThoughtGroup {
    pub fn new(agents: &[usize], count: usize) -> Self {
        Self {
            agents: agents.to_vec(),
            count,
        }
    }
}

/// Binary `n_h x n_z` thought-to-state dependency pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportMatrix {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<u8>,
    blocks: AgentBlocks,
}

impl SupportMatrix {
    /// Validates shape and the no-empty-column / no-thoughtless-agent rules.
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<u8>, blocks: AgentBlocks) -> Result<Self> {
        if entries.len() != n_rows * n_cols || blocks.n_h() != n_rows {
            return Err(Error::InvalidArgument("support shape does not match its blocks".into()));
        }
        if entries.iter().any(|&e| e > 1) {
            return Err(Error::InvalidArgument("support entries must be 0 or 1".into()));
        }
        let s = Self {
            n_rows,
            n_cols,
            entries,
            blocks,
        };
        if let Some(c) = (0..n_cols).find(|&c| s.column_rows(c).is_empty()) {
            return Err(Error::InvalidArgument(format!("thought {c} influences no state")));
        }
        if let Some(k) = (0..s.blocks.n_agents()).find(|&k| s.agent_thoughts(k).is_empty()) {
            return Err(Error::InvalidArgument(format!("agent {k} holds no thought")));
        }
        Ok(s)
    }

    /// Builds a support from a dense 0/1 row list, without the group logic.
    pub fn from_rows(rows: &[Vec<u8>], blocks: AgentBlocks) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidArgument("ragged support rows".into()));
        }
        Self::new(rows.len(), n_cols, rows.concat(), blocks)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn blocks(&self) -> &AgentBlocks {
        &self.blocks
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.entries[r * self.n_cols + c] != 0
    }

    pub fn column_rows(&self, c: usize) -> Vec<usize> {
        (0..self.n_rows).filter(|&r| self.get(r, c)).collect()
    }

    /// Agents whose block contains a nonzero entry of column `c`.
    pub fn column_agents(&self, c: usize) -> Vec<usize> {
        (0..self.blocks.n_agents())
            .filter(|&k| self.blocks.range(k).any(|r| self.get(r, c)))
            .collect()
    }

    pub fn agent_thoughts(&self, agent: usize) -> Vec<usize> {
        (0..self.n_cols)
            .filter(|&c| self.blocks.range(agent).any(|r| self.get(r, c)))
            .collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n_rows, self.n_cols, |r, c| f64::from(self.entries[r * self.n_cols + c]))
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|&&e| e != 0).count()
    }
}

/// Default within-block row density: dense for blocks of at most 4 rows,
/// 0.7 above that.
pub fn default_row_density(block_len: usize) -> f64 {
    if block_len > 4 {
        0.7
    } else {
        1.0
    }
}

/// Samples a support pattern. Each group contributes `count` columns whose
/// nonzero rows lie exactly in the member agents' blocks; columns follow the
/// group order. `row_density` overrides the per-block default.
pub fn sample_support(
    block_dims: &[usize],
    groups: &[ThoughtGroup],
    row_density: Option<f64>,
    rng: &mut SeededRng,
) -> Result<SupportMatrix> {
    let blocks = AgentBlocks::from_dims(block_dims)?;
    let n_agents = blocks.n_agents();
    validate_groups(groups, n_agents)?;
    if let Some(p) = row_density {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidArgument(format!("row density must be in (0, 1], got {p}")));
        }
    }
    let n_rows = blocks.n_h();
    let n_cols: usize = groups.iter().map(|g| g.count).sum();
    let mut entries = vec![0u8; n_rows * n_cols];
    let mut col = 0;
    for g in groups {
        for _ in 0..g.count {
            for &k in &g.agents {
                let range = blocks.range(k);
                let p = row_density.unwrap_or_else(|| default_row_density(range.len()));
                let mut any = false;
                for r in range.clone() {
                    if rng.bernoulli(p) {
                        entries[r * n_cols + col] = 1;
                        any = true;
                    }
                }
                if !any {
                    let r = range.start + rng.below(range.len());
                    entries[r * n_cols + col] = 1;
                }
            }
            col += 1;
        }
    }
    SupportMatrix::new(n_rows, n_cols, entries, blocks)
}

fn validate_groups(groups: &[ThoughtGroup], n_agents: usize) -> Result<()> {
    let mut covered = vec![false; n_agents];
    for g in groups {
        if g.agents.is_empty() {
            return Err(Error::InvalidArgument("thought group with no agents".into()));
        }
        let mut seen = vec![false; n_agents];
        for &k in &g.agents {
            if k >= n_agents {
                return Err(Error::InvalidArgument(format!("group names agent {k}, only {n_agents} exist")));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidArgument(format!("agent {k} listed twice in one group")));
            }
            if g.count > 0 {
                covered[k] = true;
            }
        }
    }
    if groups.iter().map(|g| g.count).sum::<usize>() == 0 {
        return Err(Error::InvalidArgument("groups define no thoughts".into()));
    }
    if let Some(k) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidArgument(format!("agent {k} would hold no thought")));
    }
    Ok(())
}

/// Elementwise `x + a tanh(x)`; strictly increasing for `|a| < 1`.
#[inline]
pub fn gain_map(x: f64, a: f64) -> f64 {
    x + a * x.tanh()
}

#[inline]
pub fn gain_map_derivative(x: f64, a: f64) -> f64 {
    let t = x.tanh();
    1.0 + a * (1.0 - t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingConfig {
    /// Largest accepted condition number of the masked linear layer.
    pub cond_max: f64,
    /// Elementwise gains are drawn from `[-amplitude, amplitude]`; 0 gives a
    /// purely linear masked mixing.
    pub gain_amplitude: f64,
    /// Magnitude range of nonzero weights; signs are random.
    pub weight_min: f64,
    pub weight_max: f64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            cond_max: 50.0,
            gain_amplitude: 0.9,
            weight_min: 0.5,
            weight_max: 1.5,
        }
    }
}

const MAX_MIXING_ATTEMPTS: usize = 100;
const SUPPORT_PROBE_POINTS: usize = 5;

/// `f = gain_out . (masked linear) . gain_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingFunction {
    pub input_gains: Vec<f64>,
    pub weights: Matrix,
    pub output_gains: Vec<f64>,
    pub mask: SupportMatrix,
    pub condition_number: f64,
}

impl MixingFunction {
    pub fn n_z(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_h(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = z.iter().zip(&self.input_gains).map(|(&x, &a)| gain_map(x, a)).collect();
        (0..self.n_h())
            .map(|i| {
                let v: f64 = self.weights.row(i).iter().zip(&u).map(|(w, x)| w * x).sum();
                gain_map(v, self.output_gains[i])
            })
            .collect()
    }

    pub fn apply_batch(&self, latents: &Matrix) -> Result<Matrix> {
        if latents.cols() != self.n_z() {
            return Err(Error::InvalidArgument(format!(
                "latent width {} does not match mixing input width {}",
                latents.cols(),
                self.n_z()
            )));
        }
        let mut out = Matrix::zeros(latents.rows(), self.n_h());
        for i in 0..latents.rows() {
            out.row_mut(i).copy_from_slice(&self.apply(latents.row(i)));
        }
        Ok(out)
    }

    /// Analytic Jacobian `diag(g_out'(W u)) W diag(g_in'(z))`.
    pub fn jacobian(&self, z: &[f64]) -> Matrix {
        let u: Vec<f64> = z.iter().zip(&self.input_gains).map(|(&x, &a)| gain_map(x, a)).collect();
        let din: Vec<f64> = z
            .iter()
            .zip(&self.input_gains)
            .map(|(&x, &a)| gain_map_derivative(x, a))
            .collect();
        Matrix::from_fn(self.n_h(), self.n_z(), |i, j| {
            let v: f64 = self.weights.row(i).iter().zip(&u).map(|(w, x)| w * x).sum();
            gain_map_derivative(v, self.output_gains[i]) * self.weights.get(i, j) * din[j]
        })
    }
}

/// Builds a random invertible mixing whose Jacobian support equals `support`.
///
/// Masked weights are resampled until the condition number of the masked
/// matrix is at most `cfg.cond_max`.
pub fn build_mixing(support: &SupportMatrix, rng: &mut SeededRng, cfg: &MixingConfig) -> Result<MixingFunction> {
    if !(cfg.cond_max > 1.0) {
        return Err(Error::InvalidArgument(format!("cond_max must exceed 1, got {}", cfg.cond_max)));
    }
    if !(0.0..=0.9).contains(&cfg.gain_amplitude) {
        return Err(Error::InvalidArgument(format!(
            "gain amplitude must be in [0, 0.9], got {}",
            cfg.gain_amplitude
        )));
    }
    if !(cfg.weight_min > 0.0 && cfg.weight_max >= cfg.weight_min) {
        return Err(Error::InvalidArgument("weight range must satisfy 0 < min <= max".into()));
    }
    let (n_h, n_z) = (support.n_rows(), support.n_cols());
    if n_h < n_z {
        return Err(Error::InvalidArgument(format!(
            "mixing from {n_z} thoughts into {n_h} states cannot be invertible"
        )));
    }
    let amp = cfg.gain_amplitude;
    let input_gains: Vec<f64> = (0..n_z).map(|_| rng.uniform_range(-amp, amp)).collect();
    let output_gains: Vec<f64> = (0..n_h).map(|_| rng.uniform_range(-amp, amp)).collect();

    let mut best = f64::INFINITY;
    for _ in 0..MAX_MIXING_ATTEMPTS {
        let weights = Matrix::from_fn(n_h, n_z, |r, c| {
            if support.get(r, c) {
                rng.sign() * rng.uniform_range(cfg.weight_min, cfg.weight_max)
            } else {
                0.0
            }
        });
        let cond = condition_number(&weights);
        if cond.is_finite() && cond < best {
            best = cond;
        }
        if cond <= cfg.cond_max {
            let f = MixingFunction {
                input_gains,
                weights,
                output_gains,
                mask: support.clone(),
                condition_number: cond,
            };
            check_jacobian_support(&f, rng)?;
            return Ok(f);
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_MIXING_ATTEMPTS,
        best_condition: best,
    })
}

/// Finite-difference audit at random points: zero off the mask everywhere,
/// and every on-mask entry clearly nonzero at some point.
fn check_jacobian_support(f: &MixingFunction, rng: &mut SeededRng) -> Result<()> {
    let (n_h, n_z) = (f.n_h(), f.n_z());
    let mut attained = vec![false; n_h * n_z];
    for _ in 0..SUPPORT_PROBE_POINTS {
        let z: Vec<f64> = (0..n_z).map(|_| rng.laplace(1.0)).collect();
        let j = finite_diff_jacobian(|x| f.apply(x), &z, 1e-5)?;
        for r in 0..n_h {
            for c in 0..n_z {
                let v = j.get(r, c).abs();
                if f.mask.get(r, c) {
                    attained[r * n_z + c] |= v > 1e-4;
                } else if v >= 1e-7 {
                    return Err(Error::Numeric(format!("Jacobian entry ({r}, {c}) leaks outside the mask")));
                }
            }
        }
    }
    let on_mask = (0..n_h * n_z).filter(|&k| f.mask.entries()[k] != 0);
    if let Some(k) = on_mask.clone().find(|&k| !attained[k]) {
        return Err(Error::Numeric(format!(
            "Jacobian entry ({}, {}) never leaves zero at probe points",
            k / n_z,
            k % n_z
        )));
    }
    Ok(())
}

/// Everything needed to regenerate a dataset from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub block_dims: Vec<usize>,
    pub groups: Vec<ThoughtGroup>,
    pub n_samples: usize,
    /// Overrides the per-block default row density when set.
    pub row_density: Option<f64>,
    pub mixing: MixingConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            block_dims: vec![3, 3],
            groups: vec![
                ThoughtGroup::new(&[0], 2),
                ThoughtGroup::new(&[1], 2),
                ThoughtGroup::new(&[0, 1], 2),
            ],
            n_samples: 20_000,
            row_density: None,
            mixing: MixingConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn n_z(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn n_h(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        AgentBlocks::from_dims(&self.block_dims)?;
        validate_groups(&self.groups, self.block_dims.len())?;
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        if self.n_h() < self.n_z() {
            return Err(Error::InvalidArgument(format!(
                "{} thoughts cannot be recovered from {} states",
                self.n_z(),
                self.n_h()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub generator: Option<GeneratorConfig>,
}

/// Sampled agent states with their ground-truth thoughts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub states: Matrix,
    /// Ground truth, for evaluation only.
    pub latents: Matrix,
    pub blocks: AgentBlocks,
    pub support: SupportMatrix,
    pub provenance: Provenance,
}

/// Draws `n_samples` Laplace(0, 1) thought vectors and mixes them.
pub fn generate_dataset(mixing: &MixingFunction, n_samples: usize, rng: &mut SeededRng) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let seed = rng.seed();
    let latents = sample_laplace(rng, n_samples, mixing.n_z(), 1.0)?;
    let states = mixing.apply_batch(&latents)?;
    Ok(Dataset {
        states,
        latents,
        blocks: mixing.mask.blocks().clone(),
        support: mixing.mask.clone(),
        provenance: Provenance { seed, generator: None },
    })
}

/// RNG streams used by [`generate`].
pub mod streams {
    pub const SUPPORT: u64 = 1;
    pub const MIXING: u64 = 2;
    pub const SAMPLES: u64 = 3;
}

/// Support, mixing and samples from one seed, each on its own stream.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<(Dataset, MixingFunction)> {
    cfg.validate()?;
    let support = sample_support(
        &cfg.block_dims,
        &cfg.groups,
        cfg.row_density,
        &mut SeededRng::derive(seed, streams::SUPPORT),
    )?;
    let mixing = build_mixing(&support, &mut SeededRng::derive(seed, streams::MIXING), &cfg.mixing)?;
    let mut data = generate_dataset(&mixing, cfg.n_samples, &mut SeededRng::derive(seed, streams::SAMPLES))?;
    data.provenance = Provenance {
        seed,
        generator: Some(cfg.clone()),
    };
    Ok((data, mixing))
}

/// `meta.json` sidecar of an on-disk dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n_samples: usize,
    pub n_h: usize,
    pub n_z: usize,
    pub blocks: AgentBlocks,
    pub support: Vec<u8>,
    pub seed: u64,
    pub generator: Option<GeneratorConfig>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.states.rows()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            n_samples: self.n_samples(),
            n_h: self.states.cols(),
            n_z: self.latents.cols(),
            blocks: self.blocks.clone(),
            support: self.support.entries().to_vec(),
            seed: self.provenance.seed,
            generator: self.provenance.generator.clone(),
        }
    }

    /// Writes `states.bin`, `latents.bin` (headerless little-endian f32,
    /// row-major) and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_f32(&dir.join("states.bin"), &self.states)?;
        write_f32(&dir.join("latents.bin"), &self.latents)?;
        let mut meta = serde_json::to_string_pretty(&self.meta())?;
        meta.push('\n');
        fs::write(dir.join("meta.json"), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        if meta.blocks.n_h() != meta.n_h {
            return Err(Error::InvalidArgument("meta.json blocks do not cover n_h".into()));
        }
        let states = read_f32(&dir.join("states.bin"), meta.n_samples, meta.n_h)?;
        let latents = read_f32(&dir.join("latents.bin"), meta.n_samples, meta.n_z)?;
        let support = SupportMatrix::new(meta.n_h, meta.n_z, meta.support, meta.blocks.clone())?;
        Ok(Self {
            states,
            latents,
            blocks: meta.blocks,
            support,
            provenance: Provenance {
                seed: meta.seed,
                generator: meta.generator,
            },
        })
    }
}

fn write_f32(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(m.data().len() * 4);
    for &x in m.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn read_f32(path: &Path, rows: usize, cols: usize) -> Result<Matrix> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() != rows * cols * 4 {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} bytes, expected {} for {rows}x{cols} f32",
            path.display(),
            buf.len(),
            rows * cols * 4
        )));
    }
    let data = buf
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basic_groups() -> Vec<ThoughtGroup> {
        vec![
            ThoughtGroup::new(&[0], 1),
            ThoughtGroup::new(&[1], 1),
            ThoughtGroup::new(&[0, 1], 1),
        ]
    }

    #[test]
    fn two_agent_three_thought_pattern() {
        let s = sample_support(&[1, 1], &basic_groups(), None, &mut SeededRng::new(0)).unwrap();
        assert_eq!(s.entries(), &[1, 0, 1, 0, 1, 1]);
    }

    #[test]
    fn single_agent_thoughts_are_private() {
        let s = sample_support(&[3], &[ThoughtGroup::new(&[0], 2)], None, &mut SeededRng::new(4)).unwrap();
        assert_eq!((s.n_rows(), s.n_cols()), (3, 2));
        for c in 0..2 {
            assert!(!s.column_rows(c).is_empty());
        }
    }

    #[test]
    fn support_constraints_hold_exhaustively() {
        let groups = vec![
            ThoughtGroup::new(&[0], 3),
            ThoughtGroup::new(&[1, 2], 2),
            ThoughtGroup::new(&[0, 1, 2], 2),
            ThoughtGroup::new(&[2], 1),
        ];
        for seed in 0..50 {
            let s = sample_support(&[6, 5, 7], &groups, None, &mut SeededRng::new(seed)).unwrap();
            let mut col = 0;
            for g in &groups {
                for _ in 0..g.count {
                    for k in 0..3 {
                        let hits = s.blocks().range(k).filter(|&r| s.get(r, col)).count();
                        if g.agents.contains(&k) {
                            assert!(hits >= 1, "seed {seed} col {col} agent {k}");
                        } else {
                            assert_eq!(hits, 0, "seed {seed} col {col} agent {k}");
                        }
                    }
                    col += 1;
                }
            }
        }
    }

    #[test]
    fn thoughtless_agent_is_rejected() {
        let groups = vec![ThoughtGroup::new(&[0], 2), ThoughtGroup::new(&[1], 0)];
        let err = sample_support(&[2, 2], &groups, None, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = sample_support(&[2, 2], &[ThoughtGroup::new(&[], 1)], None, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn identity_support_linear_mixing_is_diagonal() {
        let blocks = AgentBlocks::from_dims(&[1, 1, 1]).unwrap();
        let support = SupportMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]], blocks).unwrap();
        let cfg = MixingConfig {
            gain_amplitude: 0.0,
            ..MixingConfig::default()
        };
        let f = build_mixing(&support, &mut SeededRng::new(2), &cfg).unwrap();
        let z = [0.3, -1.0, 2.0];
        let j = f.jacobian(&z);
        assert!(j.max_abs_diff(&f.weights) < 1e-15);
        let h = f.apply(&z);
        for i in 0..3 {
            assert!((h[i] - f.weights.get(i, i) * z[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let (_, f) = generate(
            &GeneratorConfig {
                n_samples: 1,
                ..GeneratorConfig::default()
            },
            9,
        )
        .unwrap();
        let z = [0.4, -0.7, 1.1, 0.2, -1.5, 0.9];
        let fd = finite_diff_jacobian(|x| f.apply(x), &z, 1e-5).unwrap();
        assert!(fd.max_abs_diff(&f.jacobian(&z)) < 1e-8);
    }

    #[test]
    fn impossible_condition_bound_fails_with_best() {
        let s = sample_support(&[3, 3], &GeneratorConfig::default().groups, None, &mut SeededRng::new(1)).unwrap();
        let cfg = MixingConfig {
            cond_max: 1.0 + 1e-9,
            ..MixingConfig::default()
        };
        match build_mixing(&s, &mut SeededRng::new(1), &cfg) {
            Err(Error::GenerationFailed { attempts, best_condition }) => {
                assert_eq!(attempts, 100);
                assert!(best_condition > 1.0 && best_condition.is_finite());
            }
            other => panic!("expected generation failure, got {other:?}"),
        }
    }

    #[test]
    fn identity_mixing_single_sample() {
        let blocks = AgentBlocks::from_dims(&[2]).unwrap();
        let support = SupportMatrix::from_rows(&[vec![1, 0], vec![0, 1]], blocks).unwrap();
        let f = MixingFunction {
            input_gains: vec![0.0; 2],
            weights: Matrix::identity(2),
            output_gains: vec![0.0; 2],
            mask: support,
            condition_number: 1.0,
        };
        let d = generate_dataset(&f, 1, &mut SeededRng::new(5)).unwrap();
        assert_eq!(d.states, d.latents);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig {
            n_samples: 200,
            ..GeneratorConfig::default()
        };
        let (a, fa) = generate(&cfg, 11).unwrap();
        let (b, fb) = generate(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
    }

    #[test]
    fn latent_variance_matches_laplace() {
        let cfg = GeneratorConfig {
            n_samples: 50_000,
            ..GeneratorConfig::default()
        };
        let (d, _) = generate(&cfg, 3).unwrap();
        for c in 0..d.latents.cols() {
            let col = d.latents.column(c);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var - 2.0).abs() < 0.2, "column {c} variance {var}");
        }
    }

    #[test]
    fn blocks_reject_gaps() {
        assert!(AgentBlocks::try_from(vec![[0, 2], [3, 4]]).is_err());
        assert!(AgentBlocks::try_from(vec![[0, 2], [2, 2]]).is_err());
        let b = AgentBlocks::try_from(vec![[0, 2], [2, 5]]).unwrap();
        assert_eq!(b.dims(), vec![2, 3]);
        assert_eq!(b.agent_of_row(4), Some(1));
    }

    #[test]
    fn dataset_files_round_trip() {
        let cfg = GeneratorConfig {
            n_samples: 16,
            ..GeneratorConfig::default()
        };
        let (d, _) = generate(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join("states.bin")).unwrap();
        assert_eq!(bytes.len(), 16 * 6 * 4);
        assert_eq!(&bytes[..4], &(d.states.get(0, 0) as f32).to_le_bytes());
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.support, d.support);
        assert_eq!(back.provenance, d.provenance);
        assert!(back.states.max_abs_diff(&d.states) < 1e-5);
    }
}
