//! Every policy objective on the same data and estimators, ranked by final score.

use adrbc::config::RunConfig;
use adrbc::dwr::Objective;
use adrbc::pipeline::{ablate_seed, rank};
use adrbc::Result;

fn main() -> Result<()> {
    let cfg = RunConfig::default().apply_str(
        "env = point-mass-2d
         vae_iterations = 2000
         policy_iterations = 3000
         policy_lr = 1e-3
         policy_hidden = 64
         policy_layers = 3
         eval_every = 1000
         eval_episodes = 50",
    )?;
    let mut rows = Vec::new();
    for seed in 0..2 {
        rows.extend(ablate_seed(&cfg, &Objective::ALL, seed)?);
    }
    for r in &rows {
        println!("{:<15} seed {}  final {:>7.1} ± {:.1}", r.objective.tag(), r.seed, r.final_eval.mean, r.final_eval.std);
    }
    println!();
    for (i, (o, fin, best)) in rank(&rows).into_iter().enumerate() {
        println!("{}. {:<15} median final {fin:>7.1}  median best {best:>7.1}", i + 1, o.tag());
    }
    Ok(())
}
