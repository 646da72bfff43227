//! Diagonal Gaussians: the encoder head, reparameterised sampling and the log-density /
//! KL pieces used by the ELBO, both as plain functions and as tape operations.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mat::Mat;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// `ln(2π)`
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl GaussianHead {
    /// Log-variance is clamped into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::config("mean and log-variance lengths differ"));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(GaussianHead { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianHead {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    /// `log N(x; mean, diag(exp(log_var)))`
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.log_var)
            .map(|((x, m), lv)| -0.5 * ((x - m).powi(2) * (-lv).exp() + lv + LN_2PI))
            .sum()
    }

    /// `KL(self ‖ N(0, I))` in closed form.
    pub fn kl_to_standard(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
            .sum()
    }
}

/// `z = mean + exp(½·log_var) ⊙ noise`
pub fn reparam_sample(head: &GaussianHead, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != head.dim() {
        return Err(Error::config(format!(
            "noise length {} does not match head dimension {}",
            noise.len(),
            head.dim()
        )));
    }
    Ok(head
        .mean
        .iter()
        .zip(&head.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Mat::from_vec(rows, cols, data).expect("sized")
}

/// Log-density of a standard normal at `x`.
pub fn standard_log_prob(x: &[f64]) -> f64 {
    x.iter().map(|x| -0.5 * (x * x + LN_2PI)).sum()
}

// ---- tape versions, one row per sample ----

/// Row-wise reparameterised sample from `(mean, log_var)` with fixed `noise`.
pub fn reparam_rows(tape: &mut Tape, mean: Var, log_var: Var, noise: &Mat) -> Var {
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let eps = tape.constant(noise.clone());
    let scaled = tape.mul(std, eps);
    tape.add(mean, scaled)
}

/// Row-wise `log N(x; mean, diag(exp(log_var)))`, `[n×d] -> [n×1]`.
pub fn log_prob_rows(tape: &mut Tape, x: Var, mean: Var, log_var: Var) -> Var {
    let diff = tape.sub(x, mean);
    let sq = tape.square(diff);
    let neg = tape.scale(log_var, -1.0);
    let prec = tape.exp(neg);
    let maha = tape.mul(sq, prec);
    let inner = tape.add(maha, log_var);
    let total = tape.sum_cols(inner);
    let d = tape.value(x).cols() as f64;
    let scaled = tape.scale(total, -0.5);
    tape.offset(scaled, -0.5 * d * LN_2PI)
}

/// Like [`log_prob_rows`] with one `1×d` log-variance row shared by every sample.
pub fn log_prob_rows_shared(tape: &mut Tape, x: Var, mean: Var, log_var_row: Var) -> Var {
    let (n, d) = tape.value(x).shape();
    let zeros = tape.constant(Mat::zeros(n, d));
    let log_var = tape.add_row(zeros, log_var_row);
    log_prob_rows(tape, x, mean, log_var)
}

/// Row-wise standard-normal log-density, `[n×d] -> [n×1]`.
pub fn standard_log_prob_rows(tape: &mut Tape, x: Var) -> Var {
    let sq = tape.square(x);
    let s = tape.sum_cols(sq);
    let d = tape.value(x).cols() as f64;
    let scaled = tape.scale(s, -0.5);
    tape.offset(scaled, -0.5 * d * LN_2PI)
}

/// Row-wise `KL(N(mean, exp(log_var)) ‖ N(0, I))`, `[n×d] -> [n×1]`.
pub fn kl_standard_rows(tape: &mut Tape, mean: Var, log_var: Var) -> Var {
    let var = tape.exp(log_var);
    let m2 = tape.square(mean);
    let a = tape.add(var, m2);
    let b = tape.sub(a, log_var);
    let c = tape.offset(b, -1.0);
    let s = tape.sum_cols(c);
    tape.scale(s, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_returns_mean() {
        let h = GaussianHead::new(vec![0.3, -2.0], vec![0.0, 1.5]).unwrap();
        assert_eq!(reparam_sample(&h, &[0.0, 0.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn unit_head_returns_noise() {
        let h = GaussianHead::standard(2);
        assert_eq!(reparam_sample(&h, &[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn noise_length_is_checked() {
        assert!(reparam_sample(&GaussianHead::standard(2), &[1.0]).is_err());
    }

    #[test]
    fn log_var_is_clamped() {
        let h = GaussianHead::new(vec![0.0, 0.0], vec![-50.0, 50.0]).unwrap();
        assert_eq!(h.log_var(), &[LOG_VAR_MIN, LOG_VAR_MAX]);
    }

    #[test]
    fn sample_moments_match_head() {
        let h = GaussianHead::new(vec![1.5, -0.5], vec![0.7, -1.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let noise = standard_normal(&mut rng, n, 2);
        for d in 0..2 {
            let xs: Vec<f64> = (0..n)
                .map(|i| reparam_sample(&h, noise.row(i)).unwrap()[d])
                .collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let true_var = h.log_var()[d].exp();
            // 3σ Monte-Carlo bands for the sample mean and sample variance
            let se_mean = (true_var / n as f64).sqrt();
            let se_var = true_var * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - h.mean()[d]).abs() < 3.0 * se_mean, "mean {mean}");
            assert!((var - true_var).abs() < 3.0 * se_var, "var {var}");
        }
    }

    #[test]
    fn tape_helpers_match_closed_forms() {
        let h = GaussianHead::new(vec![0.2, -1.0, 0.5], vec![0.1, -0.3, 1.2]).unwrap();
        let x = [0.7, 0.0, -1.1];
        let mut t = Tape::new();
        let m = t.constant(Mat::row_vector(h.mean()));
        let lv = t.constant(Mat::row_vector(h.log_var()));
        let xv = t.constant(Mat::row_vector(&x));
        let lp = log_prob_rows(&mut t, xv, m, lv);
        let lps = log_prob_rows_shared(&mut t, xv, m, lv);
        let kl = kl_standard_rows(&mut t, m, lv);
        let sp = standard_log_prob_rows(&mut t, xv);
        assert!((t.value(lp).data()[0] - h.log_prob(&x)).abs() < 1e-12);
        assert!((t.value(lps).data()[0] - h.log_prob(&x)).abs() < 1e-12);
        assert!((t.value(kl).data()[0] - h.kl_to_standard()).abs() < 1e-12);
        assert!((t.value(sp).data()[0] - standard_log_prob(&x)).abs() < 1e-12);
    }
}
