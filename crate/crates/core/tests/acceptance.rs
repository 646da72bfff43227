//! Acceptance criteria. Runs every criterion, prints one line each, and exits nonzero if any
//! fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use adrbc::config::RunConfig;
use adrbc::data::Batch;
use adrbc::dwr::{weight_from_log_densities, EstimatorPair, Objective, TabularCase};
use adrbc::nn::gaussian::standard_normal;
use adrbc::nn::Mat;
use adrbc::pipeline::{ablate_seed, build_corpus, log_log_slope, median, prepare, time_update, train_estimators};
use adrbc::rng::stream;
use adrbc::verify::{cluster_pair_accuracy, fitted_linear_model, gradient_errors};
use adrbc::vqvae::DensityEstimator;

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// KL(π‖p*) − KL(π‖p̂) summed directly from the tables.
fn kl_difference(c: &TabularCase) -> f64 {
    let kl = |q: &[Vec<f64>], s: usize| -> f64 {
        c.policy[s].iter().zip(&q[s]).map(|(p, q)| p * (p.ln() - q.ln())).sum()
    };
    c.state_weight
        .iter()
        .enumerate()
        .map(|(s, d)| d * (kl(&c.expert, s) - kl(&c.suboptimal, s)))
        .sum()
}

fn theorem_identity() -> Outcome {
    let mut rng = stream(2024, 0);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let c = TabularCase::random(&mut rng, 2 + k % 7, 2 + k % 5);
        let w = c.weighted_sum(weight_from_log_densities).map_err(err)?;
        worst = worst.max((w - kl_difference(&c)).abs());
    }
    Ok((worst <= 1e-12, format!("max |gap| = {worst:.3e} over 100 tables")))
}

fn gradient_integrity() -> Outcome {
    let errs = gradient_errors(20, 11).map_err(err)?;
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((worst < 1e-4, format!("max rel err {worst:.2e} at 20 points each ({detail})")))
}

/// Exact `log p(a|s)` of a quantizer-free estimator with a single linear decoder layer:
/// `a ~ N(V s + b, W Wᵀ + diag σ²)` with the decoder weights split as `[W | V]`.
fn exact_log_marginal(est: &DensityEstimator, s: &[f64], a: &[f64]) -> f64 {
    let c = est.config();
    let layer = &est.decoder().layers()[0];
    let (k, n) = (c.latent_dim, a.len());
    let w = DMatrix::from_fn(n, k, |i, j| layer.weight().get(i, j));
    let v = DMatrix::from_fn(n, c.obs_dim, |i, j| layer.weight().get(i, k + j));
    let mean = &v * DVector::from_column_slice(s) + DVector::from_column_slice(layer.bias());
    let mut cov = &w * w.transpose();
    for i in 0..n {
        cov[(i, i)] += est.decoder_log_var().get(0, i).exp();
    }
    let chol = cov.cholesky().expect("covariance is positive definite");
    let r = DVector::from_column_slice(a) - mean;
    let y = chol.l().solve_lower_triangular(&r).expect("triangular solve");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + y.norm_squared())
}

fn elbo_bound() -> Outcome {
    let (est, held) = fitted_linear_model(5, 1500).map_err(err)?;
    let mut rng = stream(77, 0);
    let draws = 64;
    let mut below = 0usize;
    for t in held.iter_transitions() {
        let b = Batch::new(Mat::row_vector(&t.obs), Mat::row_vector(&t.act)).map_err(err)?;
        let vals = (0..draws)
            .map(|_| {
                let z = standard_normal(&mut rng, 1, est.config().latent_dim);
                est.elbo_loss(&b, Some(&z)).map(|l| -l)
            })
            .collect::<Result<Vec<f64>, _>>()
            .map_err(err)?;
        let m = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        if m <= exact_log_marginal(&est, &t.obs, &t.act) + 3.0 * sd / (draws as f64).sqrt() {
            below += 1;
        }
    }
    let frac = below as f64 / held.num_transitions() as f64;
    let mut worst: f64 = 0.0;
    for t in held.iter_transitions().take(10) {
        let is = est.log_density(&t.obs, &t.act, 10_000, &mut rng).map_err(err)?.log_density;
        worst = worst.max((is - exact_log_marginal(&est, &t.obs, &t.act)).abs());
    }
    Ok((
        frac >= 0.99 && worst <= 0.05,
        format!(
            "ELBO below exact on {:.1}% of {} points; max |IS − exact| = {worst:.4} nats (L = 10000)",
            100.0 * frac,
            held.num_transitions()
        ),
    ))
}

fn ade_discrimination() -> Outcome {
    let (mut ade, mut plain) = (0.0, 0.0);
    let seeds = 5;
    for seed in 0..seeds {
        ade += cluster_pair_accuracy(seed, 1.0, 1000, 500).map_err(err)?;
        plain += cluster_pair_accuracy(seed, 0.0, 1000, 500).map_err(err)?;
    }
    let (ade, plain) = (100.0 * ade / seeds as f64, 100.0 * plain / seeds as f64);
    Ok((
        ade >= 95.0 && ade - plain >= 3.0,
        format!("pair accuracy ADE {ade:.1}%, plain ELBO {plain:.1}%, gain {:.1} points", ade - plain),
    ))
}

fn desk_config(demos: usize) -> RunConfig {
    RunConfig::default()
        .apply_str(&format!(
            "env = point-mass-2d\n\
             demos = {demos}\n\
             corpus = scripted-expert:{demos};noisy-expert(0.5):500\n\
             vae_iterations = 2000\n\
             policy_iterations = 3000\n\
             policy_lr = 1e-3\n\
             policy_hidden = 64\n\
             policy_layers = 3\n\
             eval_every = 1000\n\
             eval_episodes = 50\n"
        ))
        .expect("desk config parses")
}

fn method_ordering() -> Outcome {
    let cfg = desk_config(5);
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..5 {
        for r in ablate_seed(&cfg, &Objective::ALL, seed).map_err(err)? {
            scores.entry(r.objective.tag()).or_default().push(r.final_eval.mean);
        }
    }
    let m = |o: Objective| median(&scores[o.tag()]);
    let ub = m(Objective::UpperBound);
    let ok = ub > m(Objective::AdeDivergence) && ub > m(Objective::MaxAde) && ub >= m(Objective::Bc) + 10.0;
    let detail = Objective::ALL
        .iter()
        .map(|&o| format!("{} {:.1}", o.tag(), m(o)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ok, format!("median final score over 5 seeds: {detail}")))
}

fn demo_efficiency() -> Outcome {
    let score = |demos: usize| -> Result<f64, String> {
        let cfg = desk_config(demos);
        let v = (0..5)
            .map(|s| ablate_seed(&cfg, &[Objective::UpperBound], s).map(|r| r[0].final_eval.mean))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        Ok(median(&v))
    };
    let (two, ten) = (score(2)?, score(10)?);
    Ok((two >= 0.9 * ten, format!("median score 2 demos {two:.1}, 10 demos {ten:.1} (ratio {:.3})", two / ten)))
}

fn complexity() -> Outcome {
    let cfg = desk_config(5);
    let data = prepare(&build_corpus(&cfg, 0).map_err(err)?).map_err(err)?;
    let d = train_estimators(&cfg, &data, 0).map_err(err)?;
    let pair = EstimatorPair {
        expert: &d.expert,
        suboptimal: &d.suboptimal,
    };
    let set = &data.corpus.mixed;
    let sizes = [32usize, 64, 128, 256, 512, 1024];
    let times = sizes
        .iter()
        .map(|&b| time_update(&cfg, set, pair, Objective::UpperBound, b, 9, 0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let xs: Vec<f64> = sizes.iter().map(|&b| b as f64).collect();
    let slope = log_log_slope(&xs, &times);
    let dwr = time_update(&cfg, set, pair, Objective::UpperBound, 300, 9, 0).map_err(err)?;
    let div = time_update(&cfg, set, pair, Objective::AdeDivergence, 300, 9, 0).map_err(err)?;
    Ok((
        (0.8..=1.2).contains(&slope) && div > dwr,
        format!("log-log slope {slope:.3}; at b = 300 ADE-divergence {div:.2e} s vs DWR {dwr:.2e} s"),
    ))
}

fn run_cli(dir: &Path, cfg: &Path, args: &[&str]) -> Result<(), String> {
    let st = Command::new(env!("CARGO_BIN_EXE_adrbc"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .map_err(err)?;
    if !st.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&st.stderr)));
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?);
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(err)?;
    let cfg = root.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "env = point-mass-2d\ncorpus = scripted-expert:5;noisy-expert(0.5):40\nvae_iterations = 300\n\
         policy_iterations = 400\npolicy_hidden = 32\npolicy_layers = 2\neval_every = 200\neval_episodes = 5\n",
    )
    .map_err(err)?;
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        for cmd in [&["gen-data"][..], &["train"], &["eval"], &["ablate"]] {
            run_cli(&dir, &cfg, cmd)?;
        }
        snaps.push(snapshot(&dir)?);
    }
    let differing: Vec<&String> = snaps[0]
        .iter()
        .filter(|(k, v)| snaps[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    Ok((
        differing.is_empty() && snaps[0].len() == snaps[1].len(),
        format!("{} artifacts compared, differing: {differing:?}", snaps[0].len()),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 theorem identity", theorem_identity),
        ("2 gradient integrity", gradient_integrity),
        ("3 ELBO bound and IS consistency", elbo_bound),
        ("4 ADE discrimination", ade_discrimination),
        ("5 method ordering", method_ordering),
        ("6 demo efficiency", demo_efficiency),
        ("7 batch-size complexity", complexity),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let (ok, witness) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {name}: {witness} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} criteria, {failed} failed", criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
