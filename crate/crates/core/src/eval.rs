//! Identifiability metrics: optimal matching, MCC, block-wise R², support F1
//! and the report that bundles them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{encode, holdout_start, MlpModel, TrainLog};
use crate::error::{Error, Result};
use crate::numerics::{gemm, solve_spd, Matrix};
use crate::structure::{estimate_support, match_columns, thought_sets, PermutationMap, SupportEstimate};
use crate::synthgen::{Dataset, SupportMatrix};

pub const REPORT_FORMAT_VERSION: u32 = 1;
/// Test-split fraction of [`block_r2`].
pub const R2_TEST_FRACTION: f64 = 0.2;
pub const RIDGE_PENALTY: f64 = 1e-6;

/// Minimum-cost assignment for a square cost matrix (Kuhn-Munkres with
/// potentials, O(n^3)). `mapping[row] = column`, `scores[row]` is the cost
/// of that cell.
pub fn hungarian(cost: &Matrix) -> Result<PermutationMap> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::InvalidArgument(format!(
            "assignment needs a square cost matrix, got {}x{}",
            cost.rows(),
            cost.cols()
        )));
    }
    if !cost.is_finite() {
        return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[owner[j] - 1] = j - 1;
    }
    let scores = mapping.iter().enumerate().map(|(i, &j)| cost.get(i, j)).collect();
    Ok(PermutationMap { mapping, scores })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Pearson,
    /// Pearson on within-column ranks.
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccResult {
    pub mcc: f64,
    /// Estimated column -> true column; scores are matched |corr|.
    pub permutation: PermutationMap,
    /// The narrower input was padded with zero columns.
    pub padded: bool,
    pub zero_variance_estimated: Vec<usize>,
    pub zero_variance_true: Vec<usize>,
}

/// Mean absolute correlation under the optimal one-to-one matching,
/// averaged over the true columns.
pub fn mcc(z_hat: &Matrix, z_true: &Matrix, kind: Correlation) -> Result<MccResult> {
    if z_hat.rows() != z_true.rows() {
        return Err(Error::InvalidArgument(format!(
            "row counts differ: {} estimated vs {} true",
            z_hat.rows(),
            z_true.rows()
        )));
    }
    if z_hat.rows() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two rows".into()));
    }
    let n = z_hat.cols().max(z_true.cols());
    let (a, zero_a) = standardized_columns(z_hat, kind);
    let (b, zero_b) = standardized_columns(z_true, kind);
    let rows = z_hat.rows() as f64;
    let mut corr = Matrix::zeros(n, n);
    for i in 0..a.len() {
        for j in 0..b.len() {
            let c: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>() / rows;
            corr.set(i, j, c.abs().min(1.0));
        }
    }
    let cost = corr.map(|c| 1.0 - c);
    let mut perm = hungarian(&cost)?;
    perm.scores = perm.mapping.iter().enumerate().map(|(i, &j)| corr.get(i, j)).collect();
    let total: f64 = perm
        .mapping
        .iter()
        .zip(&perm.scores)
        .filter(|(&j, _)| j < z_true.cols())
        .map(|(_, s)| s)
        .sum();
    let value = if z_true.cols() == 0 {
        0.0
    } else {
        (total / z_true.cols() as f64).clamp(0.0, 1.0)
    };
    Ok(MccResult {
        mcc: value,
        permutation: perm,
        padded: z_hat.cols() != z_true.cols(),
        zero_variance_estimated: zero_a,
        zero_variance_true: zero_b,
    })
}

/// Columns standardized to zero mean and unit population variance;
/// constant columns become all-zero and are listed.
fn standardized_columns(m: &Matrix, kind: Correlation) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut zero = Vec::new();
    let cols = (0..m.cols())
        .map(|j| {
            let mut col = m.column(j);
            if kind == Correlation::Spearman {
                col = ranks(&col);
            }
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            if var <= f64::EPSILON * mean.abs().max(1.0) * 1e-3 || !var.is_finite() {
                zero.push(j);
                vec![0.0; col.len()]
            } else {
                let sd = var.sqrt();
                col.iter().map(|x| (x - mean) / sd).collect()
            }
        })
        .collect();
    (cols, zero)
}

/// Average ranks (ties share the mean rank).
fn ranks(col: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut out = vec![0.0; col.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && col[idx[j + 1]] == col[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Result {
    pub r2: f64,
    /// Predictors were rank-deficient and a ridge penalty was added.
    pub ridge: bool,
}

/// Held-out R² of an OLS regression (with intercept) from all columns of
/// `predictors` onto each column of `targets`, averaged over targets. The
/// first 80% of rows fit, the last 20% score.
pub fn block_r2(predictors: &Matrix, targets: &Matrix) -> Result<R2Result> {
    let n = predictors.rows();
    if targets.rows() != n {
        return Err(Error::InvalidArgument("predictor and target row counts differ".into()));
    }
    if targets.cols() == 0 {
        return Err(Error::InvalidArgument("no target columns".into()));
    }
    let p = predictors.cols();
    let split = n - ((n as f64 * R2_TEST_FRACTION).ceil() as usize);
    if split < p + 2 || split == n {
        return Err(Error::InvalidArgument(format!(
            "{n} rows are too few to fit {p} predictors and keep a test split"
        )));
    }
    let x_train = predictors.row_range(0, split);
    let y_train = targets.row_range(0, split);
    let x_mean = column_means(&x_train);
    let y_mean = column_means(&y_train);
    let xc = center(&x_train, &x_mean);
    let yc = center(&y_train, &y_mean);

    let mut ridge = false;
    let beta = if p == 0 {
        Matrix::zeros(0, targets.cols())
    } else {
        let mut gram = Matrix::zeros(p, p);
        gemm(1.0, &xc, true, &xc, false, 0.0, &mut gram);
        let mut rhs = Matrix::zeros(p, targets.cols());
        gemm(1.0, &xc, true, &yc, false, 0.0, &mut rhs);
        if is_rank_deficient(&gram) {
            ridge = true;
            for i in 0..p {
                gram.set(i, i, gram.get(i, i) + RIDGE_PENALTY);
            }
        }
        match solve_spd(&gram, &rhs) {
            Some(b) => b,
            None => {
                ridge = true;
                for i in 0..p {
                    gram.set(i, i, gram.get(i, i) + RIDGE_PENALTY);
                }
                solve_spd(&gram, &rhs).ok_or_else(|| Error::Numeric("ridge regression failed".into()))?
            }
        }
    };

    let x_test = center(&predictors.row_range(split, n), &x_mean);
    let y_test = targets.row_range(split, n);
    let mut pred = Matrix::zeros(n - split, targets.cols());
    if p > 0 {
        gemm(1.0, &x_test, false, &beta, false, 0.0, &mut pred);
    }
    let test_mean = column_means(&y_test);
    let mut total = 0.0;
    for j in 0..targets.cols() {
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for i in 0..y_test.rows() {
            let y = y_test.get(i, j);
            let e = y - (pred.get(i, j) + y_mean[j]);
            ss_res += e * e;
            ss_tot += (y - test_mean[j]).powi(2);
        }
        total += if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    let r2 = total / targets.cols() as f64;
    if !r2.is_finite() {
        return Err(Error::Numeric("non-finite R²".into()));
    }
    Ok(R2Result { r2, ridge })
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, v) in s.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    s.iter().map(|v| v / m.rows() as f64).collect()
}

fn center(m: &Matrix, means: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) - means[j])
}

/// Eigenvalue spread of the correlation-scaled Gram matrix beyond 1e12.
fn is_rank_deficient(gram: &Matrix) -> bool {
    let p = gram.rows();
    let d: Vec<f64> = (0..p).map(|i| gram.get(i, i).sqrt()).collect();
    if d.iter().any(|&x| !(x > 0.0)) {
        return true;
    }
    let scaled = Matrix::from_fn(p, p, |i, j| gram.get(i, j) / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled.to_nalgebra()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    !(min > max * 1e-12)
}

/// F1 over binary entries of the column-permuted estimate against the truth.
/// `perm.mapping[e]` is the true column matched to estimated column `e`;
/// indices beyond either matrix are padding.
pub fn support_f1(est: &SupportEstimate, truth: &SupportMatrix, perm: &PermutationMap) -> Result<f64> {
    if est.n_rows() != truth.n_rows() {
        return Err(Error::InvalidArgument("support row counts differ".into()));
    }
    if perm.len() < est.n_cols().max(truth.n_cols()) {
        return Err(Error::InvalidArgument("permutation does not cover all columns".into()));
    }
    let predicted = est.support.iter().filter(|&&e| e != 0).count();
    let actual = truth.nnz();
    let mut tp = 0usize;
    for e in 0..est.n_cols() {
        let t = perm.mapping[e];
        if t < truth.n_cols() {
            tp += (0..truth.n_rows()).filter(|&r| est.get(r, e) && truth.get(r, t)).count();
        }
    }
    if predicted == 0 || actual == 0 || tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / actual as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// A latent group: the columns held by exactly the agents in `agents`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGroup {
    pub label: String,
    pub agents: BTreeSet<usize>,
    pub columns: Vec<usize>,
}

/// `private_A`, `private_B`, ... for single agents, `shared` when every agent
/// holds it, `shared_AC` otherwise.
pub fn group_label(agents: &BTreeSet<usize>, n_agents: usize) -> String {
    let name = |k: usize| -> String {
        if k < 26 {
            char::from(b'A' + k as u8).to_string()
        } else {
            format!("{k}")
        }
    };
    match agents.len() {
        0 => "inactive".to_string(),
        1 => format!("private_{}", name(*agents.iter().next().unwrap())),
        l if l == n_agents => "shared".to_string(),
        _ => format!("shared_{}", agents.iter().map(|&k| name(k)).collect::<String>()),
    }
}

/// Groups of true columns by holder set, in order of first appearance.
pub fn true_groups(truth: &SupportMatrix) -> Vec<LatentGroup> {
    let n_agents = truth.blocks().n_agents();
    let mut groups: Vec<LatentGroup> = Vec::new();
    for c in 0..truth.n_cols() {
        let agents: BTreeSet<usize> = truth.column_agents(c).into_iter().collect();
        match groups.iter_mut().find(|g| g.agents == agents) {
            Some(g) => g.columns.push(c),
            None => groups.push(LatentGroup {
                label: group_label(&agents, n_agents),
                agents,
                columns: vec![c],
            }),
        }
    }
    groups
}

/// Estimated columns whose holder set (read off the estimated support)
/// equals each true group's holder set.
pub fn estimated_groups(est: &SupportEstimate, truth: &SupportMatrix, reference: &[LatentGroup]) -> Result<Vec<LatentGroup>> {
    let sets = thought_sets(est, truth.blocks())?;
    let holders: Vec<BTreeSet<usize>> = (0..est.n_cols())
        .map(|c| (0..sets.n_agents()).filter(|&k| sets.get(k).contains(&c)).collect())
        .collect();
    Ok(reference
        .iter()
        .map(|g| LatentGroup {
            label: g.label.clone(),
            agents: g.agents.clone(),
            columns: (0..est.n_cols()).filter(|&c| holders[c] == g.agents).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Blocks {
    pub labels: Vec<String>,
    /// Row: estimated group, column: true group.
    pub values: Matrix,
    pub estimated_columns: Vec<Vec<usize>>,
    pub true_columns: Vec<Vec<usize>>,
    pub ridge_used: bool,
}

impl R2Blocks {
    pub fn mean_diagonal(&self) -> f64 {
        let g = self.values.rows();
        (0..g).map(|i| self.values.get(i, i)).sum::<f64>() / g as f64
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let g = self.values.rows();
        if g < 2 {
            return 0.0;
        }
        let s: f64 = (0..g)
            .flat_map(|i| (0..g).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| self.values.get(i, j))
            .sum();
        s / (g * g - g) as f64
    }

    /// Header row plus one row per estimated group.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimated\\true");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            s.push_str(l);
            for j in 0..self.values.cols() {
                let _ = write!(s, ",{}", self.values.get(i, j));
            }
            s.push('\n');
        }
        s
    }

    /// Grid rendering; fill is a linear ramp from white (R² <= 0) to
    /// `#08306b` (R² >= 1).
    pub fn to_svg(&self) -> String {
        let g = self.labels.len();
        let cell = 60;
        let margin = 90;
        let size = margin + cell * g + 10;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        for (j, l) in self.labels.iter().enumerate() {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                margin + j * cell + cell / 2,
                margin - 8,
                l
            );
        }
        for i in 0..g {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
                margin - 6,
                margin + i * cell + cell / 2 + 4,
                self.labels[i]
            );
            for j in 0..g {
                let v = self.values.get(i, j);
                let (r, gr, b) = ramp(v);
                let text = if v > 0.55 { "#ffffff" } else { "#000000" };
                let _ = writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"#{r:02x}{gr:02x}{b:02x}\" stroke=\"#888888\"/>",
                    margin + j * cell,
                    margin + i * cell
                );
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{text}\">{v:.2}</text>",
                    margin + j * cell + cell / 2,
                    margin + i * cell + cell / 2 + 4
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// White at 0, `#08306b` at 1, clamped.
pub fn ramp(v: f64) -> (u8, u8, u8) {
    let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// Block R² matrix between estimated groups (rows) and true groups.
pub fn r2_blocks(
    z_hat: &Matrix,
    z_true: &Matrix,
    est: &SupportEstimate,
    truth: &SupportMatrix,
) -> Result<R2Blocks> {
    let truths = true_groups(truth);
    let ests = estimated_groups(est, truth, &truths)?;
    let g = truths.len();
    let mut values = Matrix::zeros(g, g);
    let mut ridge_used = false;
    for (i, e) in ests.iter().enumerate() {
        let pred = z_hat.select_cols(&e.columns);
        for (j, t) in truths.iter().enumerate() {
            let r = block_r2(&pred, &z_true.select_cols(&t.columns))?;
            ridge_used |= r.ridge;
            values.set(i, j, r.r2);
        }
    }
    Ok(R2Blocks {
        labels: truths.iter().map(|t| t.label.clone()).collect(),
        values,
        estimated_columns: ests.into_iter().map(|e| e.columns).collect(),
        true_columns: truths.into_iter().map(|t| t.columns).collect(),
        ridge_used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tau: f64,
    pub probe_count: usize,
    pub correlation: Correlation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: crate::structure::DEFAULT_TAU,
            probe_count: crate::structure::DEFAULT_PROBE_COUNT,
            correlation: Correlation::Pearson,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.probe_count == 0 {
            return Err(Error::InvalidArgument("probe_count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub final_recon: f64,
    pub final_penalty: f64,
    pub final_holdout_recon: f64,
}

impl TrainingSummary {
    pub fn from_log(log: &TrainLog) -> Option<Self> {
        let last = log.last()?;
        Some(Self {
            epochs: log.epochs.len(),
            best_epoch: log.best_epoch,
            final_recon: last.recon,
            final_penalty: last.penalty,
            final_holdout_recon: last.holdout_recon,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub mcc: f64,
    pub mcc_detail: MccResult,
    pub r2_blocks: R2Blocks,
    pub support_f1: f64,
    /// Estimated support column -> true column.
    pub permutation: PermutationMap,
    pub support: SupportEstimate,
    pub inactive_thoughts: Vec<usize>,
    pub n_eval_rows: usize,
    pub config: serde_json::Value,
    pub training: Option<TrainingSummary>,
}

/// Inputs of [`assemble_report`].
#[derive(Debug, Clone)]
pub struct ReportPieces {
    pub mcc: MccResult,
    pub r2_blocks: R2Blocks,
    pub support_f1: f64,
    pub permutation: PermutationMap,
    pub support: SupportEstimate,
    pub n_eval_rows: usize,
    pub config: serde_json::Value,
    pub training: Option<TrainingSummary>,
}

pub fn assemble_report(p: ReportPieces) -> Result<EvalReport> {
    let invalid = |m: String| Err(Error::ReportInvalid(m));
    if !(0.0..=1.0).contains(&p.mcc.mcc) {
        return invalid(format!("mcc {} outside [0, 1]", p.mcc.mcc));
    }
    if !(0.0..=1.0).contains(&p.support_f1) {
        return invalid(format!("support F1 {} outside [0, 1]", p.support_f1));
    }
    if let Some(v) = p.r2_blocks.values.data().iter().find(|v| !v.is_finite() || **v > 1.0 + 1e-12) {
        return invalid(format!("R² entry {v} is not a finite value <= 1"));
    }
    if !p.permutation.is_bijection() || !p.mcc.permutation.is_bijection() {
        return invalid("permutation is not a bijection".into());
    }
    if p.permutation.scores.iter().chain(&p.mcc.permutation.scores).any(|s| !s.is_finite()) {
        return invalid("non-finite match score".into());
    }
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        mcc: p.mcc.mcc,
        inactive_thoughts: p.support.inactive_thoughts(),
        mcc_detail: p.mcc,
        r2_blocks: p.r2_blocks,
        support_f1: p.support_f1,
        permutation: p.permutation,
        support: p.support,
        n_eval_rows: p.n_eval_rows,
        config: p.config,
        training: p.training,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Full evaluation of a trained model on the dataset's held-out tail.
pub fn evaluate(
    model: &MlpModel,
    data: &Dataset,
    holdout_fraction: f64,
    cfg: &EvalConfig,
    config_echo: serde_json::Value,
    training: Option<TrainingSummary>,
) -> Result<EvalReport> {
    cfg.validate()?;
    if model.n_h() != data.states.cols() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} state columns, dataset has {}",
            model.n_h(),
            data.states.cols()
        )));
    }
    let n = data.n_samples();
    let start = holdout_start(n, holdout_fraction);
    let (states, latents) = if n - start >= 10 {
        (data.states.row_range(start, n), data.latents.row_range(start, n))
    } else {
        (data.states.clone(), data.latents.clone())
    };
    let z_hat = encode(model, &states)?;
    let probes = states.row_range(0, cfg.probe_count.min(states.rows()));
    let support = estimate_support(model, &probes, cfg.tau)?;
    let mcc_res = mcc(&z_hat, &latents, cfg.correlation)?;
    let perm = match_columns(&support, &data.support)?;
    let f1 = support_f1(&support, &data.support, &perm)?;
    let blocks = r2_blocks(&z_hat, &latents, &support, &data.support)?;
    assemble_report(ReportPieces {
        mcc: mcc_res,
        r2_blocks: blocks,
        support_f1: f1,
        permutation: perm,
        support,
        n_eval_rows: states.rows(),
        config: config_echo,
        training,
    })
}
