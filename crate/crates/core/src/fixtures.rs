//! Small synthetic datasets with known structure, shared by the verification suite, tests
//! and examples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Role, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::nn::gaussian::LN_2PI;
use crate::rng::stream;
use crate::vqvae::DensityEstimator;

/// One-step pairs with `s ≈ center·1` (uniform jitter of ±`spread`) and `a = s + 0.05·ε`.
///
/// Two clusters with opposite centers share the conditional rule and differ only in where
/// their states lie.
pub fn cluster(center: f64, dim: usize, n: usize, spread: f64, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, 0);
    let trajs = (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..dim).map(|_| center + spread * rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = s
                .iter()
                .map(|x| x + 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Trajectory::new(vec![Transition::new(s, a, 0.0, true)])
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(dim, dim, Role::Mixed, trajs)
}

/// One-step pairs with `s ~ N(0, I)` and `a = M s + 0.3 + 0.5·ε`, where `M[i][j] = 0.5` when
/// `i == j` and `0.1` otherwise.
pub fn linear_gaussian(obs_dim: usize, act_dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, 0);
    let trajs = (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..obs_dim).map(|_| rng.sample(StandardNormal)).collect();
            let a: Vec<f64> = (0..act_dim)
                .map(|i| {
                    let m: f64 = s.iter().enumerate().map(|(j, x)| if i == j { 0.5 * x } else { 0.1 * x }).sum();
                    m + 0.3 + 0.5 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            Trajectory::new(vec![Transition::new(s, a, 0.0, true)])
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(obs_dim, act_dim, Role::Mixed, trajs)
}

/// Exact `log p(a|s)` of a one-action estimator whose decoder is a single linear layer and
/// whose quantizer is off.
///
/// With `z ~ N(0, I)` and `a | z, s ~ N(w·z + v·s + b, σ²)` the marginal is
/// `N(v·s + b, ‖w‖² + σ²)`.
pub fn linear_marginal_1d(est: &DensityEstimator, s: &[f64], a: f64) -> Result<f64> {
    let c = est.config();
    if c.act_dim != 1 || c.quantize || est.decoder().layers().len() != 1 {
        return Err(Error::argument("closed form needs one action, one decoder layer, no quantizer"));
    }
    if s.len() != c.obs_dim {
        return Err(Error::argument("observation length mismatch"));
    }
    let layer = &est.decoder().layers()[0];
    let row = layer.weight().row(0);
    let (w, v) = row.split_at(c.latent_dim);
    let mean = v.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() + layer.bias()[0];
    let var = w.iter().map(|x| x * x).sum::<f64>() + est.decoder_log_var().get(0, 0).exp();
    Ok(-0.5 * (LN_2PI + var.ln() + (a - mean).powi(2) / var))
}
