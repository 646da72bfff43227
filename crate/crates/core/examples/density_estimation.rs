//! Fit a conditional VAE with a linear decoder to linear-Gaussian data, where the true
//! marginal of the model is known, and compare the ELBO and the importance-sampled density
//! against it.

use adrbc::ade::{train_elbo, AdeConfig};
use adrbc::data::Batch;
use adrbc::fixtures::{linear_gaussian, linear_marginal_1d};
use adrbc::nn::Mat;
use adrbc::rng::stream;
use adrbc::vqvae::{DensityEstimator, EstimatorConfig, EstimatorRole};
use adrbc::Result;

fn main() -> Result<()> {
    let train = linear_gaussian(2, 1, 2000, 1)?;
    let held = linear_gaussian(2, 1, 5, 2)?;
    let cfg = EstimatorConfig {
        latent_dim: 2,
        hidden_layers: 0,
        quantize: false,
        ..EstimatorConfig::new(2, 1)
    };
    let est = DensityEstimator::new(cfg, EstimatorRole::Expert, &mut stream(1, 0))?;
    let ade = AdeConfig {
        lambda1: 0.0,
        iterations: 1500,
        metrics_every: 0,
        ..AdeConfig::default()
    };
    let (est, losses) = train_elbo(est, &train, &ade, 1)?;
    println!("ELBO loss {:.3} -> {:.3}", losses[0], losses[losses.len() - 1]);

    let mut rng = stream(1, 9);
    println!("{:>10} {:>10} {:>10} {:>10}", "exact", "IS L=10", "IS L=1e4", "-ELBO");
    for t in held.iter_transitions() {
        let exact = linear_marginal_1d(&est, &t.obs, t.act[0])?;
        let coarse = est.log_density(&t.obs, &t.act, 10, &mut rng)?.log_density;
        let fine = est.log_density(&t.obs, &t.act, 10_000, &mut rng)?.log_density;
        let b = Batch::new(Mat::row_vector(&t.obs), Mat::row_vector(&t.act))?;
        let elbo = -est.elbo_loss(&b, None)?;
        println!("{exact:>10.4} {coarse:>10.4} {fine:>10.4} {elbo:>10.4}");
    }
    Ok(())
}
