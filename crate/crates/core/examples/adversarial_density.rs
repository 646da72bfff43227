//! Train the expert/suboptimal estimator pair on two clusters and look at the resulting
//! density weights: expert-like pairs should come out negative, suboptimal-like positive.

use adrbc::ade::{train_density, AdeConfig};
use adrbc::dwr::{density_weight, EstimatorPair};
use adrbc::fixtures::cluster;
use adrbc::rng::stream;
use adrbc::vqvae::EstimatorConfig;
use adrbc::Result;

fn main() -> Result<()> {
    let expert = cluster(1.0, 2, 200, 0.3, 1)?;
    let subopt = cluster(-1.0, 2, 200, 0.3, 2)?;
    let cfg = EstimatorConfig {
        latent_dim: 2,
        codebook_size: 8,
        hidden_dim: 16,
        ..EstimatorConfig::new(2, 2)
    };
    let ade = AdeConfig {
        iterations: 1000,
        batch_size: 32,
        metrics_every: 250,
        ..AdeConfig::default()
    };
    let trained = train_density(&expert, &subopt, &cfg, &ade, 1)?;
    print!("{}", adrbc::ade::metrics_table(&trained.metrics).render());

    let pair = EstimatorPair {
        expert: &trained.expert,
        suboptimal: &trained.suboptimal,
    };
    let mut rng = stream(1, 5);
    for (name, center, seed) in [("expert-like", 1.0, 3), ("suboptimal-like", -1.0, 4)] {
        let held = cluster(center, 2, 200, 0.3, seed)?.all();
        let w = density_weight(pair, &held, 8, &mut rng)?;
        let neg = w.values().iter().filter(|&&x| x < 0.0).count();
        println!("{name:>16}: mean weight {:>9.3}, negative on {neg}/200", w.mean());
    }
    Ok(())
}
