//! Dense linear algebra, seeded sampling, Adam and finite-difference
//! checking.
//!
//! Everything here is 64-bit and deterministic: identical seeds and inputs
//! produce bit-identical outputs on a given build.

use nalgebra::DMatrix;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    /// Rows `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Horizontal concatenation; all parts need the same row count.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::InvalidArgument("hstack row counts differ".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| x * c)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::InvalidArgument(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::InvalidArgument(format!(
                "vector length {} does not match {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
///
/// Shapes are asserted; this is the hot path of training.
pub fn gemm(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape mismatch");
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut c.data {
            *x *= beta;
        }
        return;
    }
    // SAFETY: strides and extents are derived from the matrices' own shapes,
    // checked above, so every access stays inside the backing vectors.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Ratio of largest to smallest singular value. Returns infinity for
/// rank-deficient or wide matrices (no full column rank).
pub fn condition_number(m: &Matrix) -> f64 {
    if m.rows < m.cols || m.cols == 0 {
        return f64::INFINITY;
    }
    let sv = m.to_nalgebra().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves the symmetric positive-definite system `a x = b` by Cholesky.
/// Returns `None` when `a` is not numerically positive definite.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Option<Matrix> {
    let chol = a.to_nalgebra().cholesky()?;
    let x = chol.solve(&b.to_nalgebra());
    x.iter().all(|v| v.is_finite()).then(|| Matrix::from_nalgebra(&x))
}

/// Least-squares solution of `a x = b` for full-column-rank `a`.
pub fn least_squares(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let ata = {
        let mut out = Matrix::zeros(a.cols, a.cols);
        gemm(1.0, a, true, a, false, 0.0, &mut out);
        out
    };
    let atb = a.transpose().mul_vec(b)?;
    let rhs = Matrix::new(atb.len(), 1, atb)?;
    solve_spd(&ata, &rhs)
        .map(Matrix::into_data)
        .ok_or_else(|| Error::Numeric("normal equations are not positive definite".into()))
}

/// Seeded xoshiro256++ generator.
///
/// The 256-bit state is expanded from the 64-bit seed with SplitMix64, as in
/// the reference implementation by Blackman and Vigna. Derived quantities:
///
/// * `uniform()` = `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
/// * `uniform_open()` = `((next_u64() >> 11) + 0.5) * 2^-53`, in `(0, 1)`.
/// * Laplace(0, b): `u = uniform_open() - 0.5`,
///   `x = -b * sign(u) * ln(1 - 2|u|)`.
/// * Standard normal: Box-Muller cosine branch,
///   `sqrt(-2 ln u1) * cos(2 pi u2)` with `u1 = uniform_open()`,
///   `u2 = uniform()`; one normal per two draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    position: u64,
    inner: Xoshiro256PlusPlus,
}

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            position: 0,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named sub-task: seeded with
    /// `splitmix64(seed ^ splitmix64(stream))`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(stream)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_MINUS_53
    }

    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's widening multiply, no rejection;
    /// bias is below 2^-32 for the sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn laplace(&mut self, scale: f64) -> f64 {
        let u = self.uniform_open() - 0.5;
        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `rows x cols` matrix of i.i.d. Laplace(0, `scale`) draws, filled row-major.
pub fn sample_laplace(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("Laplace scale must be positive, got {scale}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("Laplace sample needs rows, cols >= 1".into()));
    }
    let data = (0..rows * cols).map(|_| rng.laplace(scale)).collect();
    Matrix::new(rows, cols, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::InvalidArgument(format!(
                "adam expects {} parameter tensors, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::InvalidArgument(format!(
                    "adam shape mismatch: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (idx, p) in params.iter_mut().enumerate() {
            let g = grads[idx].data();
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Central-difference Jacobian of `f` at `point`:
/// `J[i][j] = (f(x + h e_j)[i] - f(x - h e_j)[i]) / 2h`.
pub fn finite_diff_jacobian<F>(f: F, point: &[f64], step: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let n_in = point.len();
    let mut x = point.to_vec();
    let mut columns = Vec::with_capacity(n_in);
    let mut n_out = None;
    for j in 0..n_in {
        x[j] = point[j] + step;
        let plus = f(&x);
        x[j] = point[j] - step;
        let minus = f(&x);
        x[j] = point[j];
        if plus.len() != minus.len() || n_out.is_some_and(|n| n != plus.len()) {
            return Err(Error::Numeric("function output length changed between evaluations".into()));
        }
        n_out = Some(plus.len());
        let col: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(p, m)| (p - m) / (2.0 * step))
            .collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite function output around input {j}")));
        }
        columns.push(col);
    }
    let n_out = n_out.unwrap_or_else(|| f(point).len());
    Ok(Matrix::from_fn(n_out, n_in, |i, j| columns[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_is_deterministic() {
        let a = sample_laplace(&mut SeededRng::new(7), 1, 1, 1.0).unwrap();
        let b = sample_laplace(&mut SeededRng::new(7), 1, 1, 1.0).unwrap();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }

    #[test]
    fn laplace_variance_matches_two_b_squared() {
        let m = sample_laplace(&mut SeededRng::new(7), 100_000, 1, 1.0).unwrap();
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 2.0).abs() < 0.05 * 2.0, "variance {var}");
    }

    #[test]
    fn laplace_mean_near_zero() {
        // sd of the mean is sqrt(2 * 0.25 / 1e5) ~ 2.2e-3, so 0.02 is ~9 sigma.
        let m = sample_laplace(&mut SeededRng::new(7), 100_000, 1, 0.5).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = SeededRng::new(1);
        assert!(matches!(sample_laplace(&mut rng, 2, 2, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(sample_laplace(&mut rng, 2, 2, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rng_position_counts_draws() {
        let mut rng = SeededRng::new(3);
        rng.uniform();
        rng.normal();
        assert_eq!(rng.position(), 3);
    }

    #[test]
    fn rng_matches_reference_stream() {
        // xoshiro256++ seeded through SplitMix64(0); first output taken from
        // the reference C implementation.
        let mut rng = SeededRng::new(0);
        let s = {
            let mut x = 0u64;
            let mut st = [0u64; 4];
            for w in &mut st {
                x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = x;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                *w = z ^ (z >> 31);
            }
            st
        };
        let expected = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        assert_eq!(rng.next_u64(), expected);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Matrix::new(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &[(1, 3)]);
        st.step(&mut [&mut p], &[Matrix::zeros(1, 3)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected both give 1, so the step is
        // lr * 1 / (1 + 1e-8).
        let mut p = Matrix::new(1, 1, vec![0.0]).unwrap();
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, &[(1, 1)]);
        st.step(&mut [&mut p], &[Matrix::new(1, 1, vec![1.0]).unwrap()]).unwrap();
        assert!((p.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_resumed_state_equals_two_step_run() {
        let g1 = Matrix::new(1, 2, vec![0.3, -1.0]).unwrap();
        let g2 = Matrix::new(1, 2, vec![-0.2, 0.5]).unwrap();
        let mut p = Matrix::new(1, 2, vec![1.0, 1.0]).unwrap();
        let mut st = AdamState::new(AdamConfig::default(), &[(1, 2)]);
        st.step(&mut [&mut p], &[g1.clone()]).unwrap();
        let (mut p_saved, mut st_saved) = (p.clone(), st.clone());
        st.step(&mut [&mut p], &[g2.clone()]).unwrap();
        st_saved.step(&mut [&mut p_saved], &[g2]).unwrap();
        assert_eq!(p, p_saved);
        assert_eq!(st, st_saved);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Matrix::zeros(2, 2);
        let mut st = AdamState::new(AdamConfig::default(), &[(2, 2)]);
        let err = st.step(&mut [&mut p], &[Matrix::zeros(1, 4)]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn finite_diff_identity() {
        let j = finite_diff_jacobian(|x| x.to_vec(), &[0.3, -1.2, 4.0], 1e-4).unwrap();
        assert!(j.max_abs_diff(&Matrix::identity(3)) < 1e-10);
    }

    #[test]
    fn finite_diff_linear_map() {
        let a = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5]).unwrap();
        let j = finite_diff_jacobian(|x| a.mul_vec(x).unwrap(), &[1.0, 2.0, 3.0], 1e-3).unwrap();
        assert!(j.max_abs_diff(&a) < 1e-8);
    }

    #[test]
    fn finite_diff_tanh_at_zero() {
        let j = finite_diff_jacobian(|x| x.iter().map(|v| v.tanh()).collect(), &[0.0, 0.0], 1e-5).unwrap();
        assert!(j.max_abs_diff(&Matrix::identity(2)) < 1e-8);
    }

    #[test]
    fn finite_diff_reports_non_finite() {
        let err = finite_diff_jacobian(|x| vec![1.0 / (x[0] - 1e-4)], &[0.0], 1e-4).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn gemm_transposes() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::new(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let mut c = Matrix::zeros(3, 2);
        gemm(1.0, &a, true, &b, false, 0.0, &mut c);
        let expected = a.transpose().matmul(&b).unwrap();
        assert!(c.max_abs_diff(&expected) < 1e-14);
        let mut d = Matrix::zeros(2, 2);
        gemm(1.0, &a, false, &a, true, 0.0, &mut d);
        assert!((d.get(0, 1) - 32.0).abs() < 1e-14);
    }

    #[test]
    fn condition_number_of_diagonal() {
        let m = Matrix::new(3, 2, vec![4.0, 0.0, 0.0, 0.5, 0.0, 0.0]).unwrap();
        assert!((condition_number(&m) - 8.0).abs() < 1e-12);
        assert!(condition_number(&Matrix::zeros(2, 2)).is_infinite());
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = Matrix::new(3, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let x = least_squares(&a, &[1.0, 3.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }
}
