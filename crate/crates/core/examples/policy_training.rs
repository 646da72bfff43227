//! Density-weighted policy training on the point-mass task from 5 demonstrations and 500
//! noisy trajectories, next to plain BC on the demonstrations alone.

use adrbc::config::RunConfig;
use adrbc::dwr::Objective;
use adrbc::pipeline::{build_corpus, prepare, train_estimators, train_policy_stage};
use adrbc::Result;

fn main() -> Result<()> {
    let cfg = RunConfig::default().apply_str(
        "env = point-mass-2d
         demos = 5
         vae_iterations = 2000
         policy_iterations = 3000
         policy_lr = 1e-3
         policy_hidden = 64
         policy_layers = 3
         eval_every = 500
         eval_episodes = 50",
    )?;
    let data = prepare(&build_corpus(&cfg, 0)?)?;
    println!(
        "{} demo transitions, {} mixed transitions",
        data.corpus.expert.num_transitions(),
        data.corpus.mixed.num_transitions()
    );
    let density = train_estimators(&cfg, &data, 0)?;

    for objective in [Objective::UpperBound, Objective::Bc] {
        let run = train_policy_stage(&cfg, &data, Some(&density), objective, 0)?;
        println!("{objective}");
        for m in &run.metrics {
            let score = m.eval.map_or(f64::NAN, |e| e.mean);
            println!("  iter {:>5}  loss {:>9.4}  mean weight {:>8.3}  score {score:>6.1}", m.iteration, m.loss, m.mean_weight);
        }
    }
    Ok(())
}
