//! Central finite-difference checks of the training gradient and of the
//! decoder Jacobian on small random models. A coordinate is skipped when the
//! perturbation flips the sign of any hidden preactivation, since the leaky
//! units have a kink there.

use latentcomm::autoencoder::{decode, decoder_jacobian, grad, loss, Activation, Mlp, MlpModel, ModelGrads, TrainConfig};
use latentcomm::{Matrix, SeededRng};

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub checked: usize,
    pub passed: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl CheckStats {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            return 0.0;
        }
        self.passed as f64 / self.checked as f64
    }

    pub fn merge(&mut self, o: CheckStats) {
        self.checked += o.checked;
        self.passed += o.passed;
        self.skipped += o.skipped;
        self.worst = self.worst.max(o.worst);
    }

    fn record(&mut self, analytic: f64, fd: f64, tol: f64) {
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        self.checked += 1;
        if rel < tol {
            self.passed += 1;
        }
        self.worst = self.worst.max(rel);
    }
}

fn signs(net: &Mlp, x: &Matrix, out: &mut Vec<bool>) -> Matrix {
    let cache = net.forward_cached(x).unwrap();
    for (layer, pre) in net.layers.iter().zip(&cache.preactivations) {
        if layer.activation != Activation::Linear {
            out.extend(pre.data().iter().map(|&p| p > 0.0));
        }
    }
    cache.output
}

fn pattern(model: &MlpModel, batch: &Matrix) -> Vec<bool> {
    let mut out = Vec::new();
    let z = signs(&model.encoder, batch, &mut out);
    signs(&model.decoder, &z, &mut out);
    out
}

/// Small model with widths at most 8 and a latent no wider than any layer,
/// so the encoder Jacobian keeps full row rank.
pub fn small_model(rng: &mut SeededRng) -> MlpModel {
    let n_h = 3 + rng.below(6);
    let n_latent = 2 + rng.below(n_h - 1);
    let width = n_latent + rng.below(9 - n_latent);
    let layers = 1 + rng.below(2);
    MlpModel::random(n_h, n_latent, width, layers, rng)
}

pub fn check_config() -> TrainConfig {
    TrainConfig {
        lambda_sparse: 0.1,
        lambda_likelihood: 0.3,
        jacobian_subsample: 3,
        batch_size: 6,
        ..TrainConfig::default()
    }
}

/// Every parameter of one seeded model against central differences of the
/// total loss.
pub fn gradient_check(seed: u64, step: f64, tol: f64) -> CheckStats {
    let mut rng = SeededRng::new(seed);
    let model = small_model(&mut rng);
    let batch = Matrix::from_fn(6, model.n_h(), |_, _| rng.normal());
    let cfg = check_config();
    let (_, ModelGrads(g)) = grad(&model, &batch, &cfg).unwrap();
    let base = pattern(&model, &batch);
    let mut stats = CheckStats::default();
    for (p, gp) in g.iter().enumerate() {
        for k in 0..gp.data().len() {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[p].data_mut()[k] += delta;
                m
            };
            let (plus, minus) = (shifted(step), shifted(-step));
            if pattern(&plus, &batch) != base || pattern(&minus, &batch) != base {
                stats.skipped += 1;
                continue;
            }
            let fd = (loss(&plus, &batch, &cfg).unwrap().total - loss(&minus, &batch, &cfg).unwrap().total) / (2.0 * step);
            stats.record(gp.data()[k], fd, tol);
        }
    }
    stats
}

/// Decoder Jacobian entries at a few random latents against central
/// differences of the decoder output.
pub fn jacobian_check(seed: u64, points: usize, step: f64, tol: f64) -> CheckStats {
    let mut rng = SeededRng::new(seed);
    let model = small_model(&mut rng);
    let mut stats = CheckStats::default();
    for _ in 0..points {
        let z: Vec<f64> = (0..model.n_latent()).map(|_| rng.normal()).collect();
        let j = decoder_jacobian(&model, &z).unwrap();
        let dec_pattern = |v: &[f64]| {
            let mut out = Vec::new();
            signs(&model.decoder, &Matrix::row_vector(v), &mut out);
            out
        };
        let base = dec_pattern(&z);
        for c in 0..z.len() {
            let mut zp = z.clone();
            zp[c] += step;
            let mut zm = z.clone();
            zm[c] -= step;
            if dec_pattern(&zp) != base || dec_pattern(&zm) != base {
                stats.skipped += j.rows();
                continue;
            }
            let hp = decode(&model, &Matrix::row_vector(&zp)).unwrap();
            let hm = decode(&model, &Matrix::row_vector(&zm)).unwrap();
            for r in 0..j.rows() {
                let fd = (hp.get(0, r) - hm.get(0, r)) / (2.0 * step);
                stats.record(j.get(r, c), fd, tol);
            }
        }
    }
    stats
}
