//! Self-checks of the library's mathematical invariants, runnable from the command line.
//!
//! Every check reports its module, the invariant, a witness value and its wall time. A
//! [`Mutation`] can be injected to confirm that the checks notice a broken weight step.

use std::fmt::Write as _;
use std::time::Instant;

use crate::ade::{contrastive_objective, train_density, AdeConfig, BatchNoise, Surrogate};
use crate::data::{sample_batch, Batch, Dataset, NormStats};
use crate::dwr::{
    density_weight_with, objective_on_tape, weight_from_log_densities, ActionNoise, DensityWeights, EstimatorPair,
    Objective, ObjectiveInputs, Policy, TabularCase, WeightFn,
};
use crate::envs::{evaluate, normalized_score, score_refs, Controller, ControllerActor, ScoreRefs, Task, CALIBRATION_EPISODES, CALIBRATION_SEED};
use crate::error::Result;
use crate::fixtures::{cluster, linear_gaussian, linear_marginal_1d};
use crate::nn::gaussian::standard_normal;
use crate::nn::gradcheck::{finite_difference, relative_error};
use crate::nn::{grad, Tape};
use crate::rng::stream;
use crate::vqvae::{DensityEstimator, EstimatorConfig, EstimatorRole};

/// A deliberate defect for checking that the suite detects it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Density weights come out as `expert − suboptimal`.
    FlipWeightSign,
}

impl Mutation {
    fn weight_fn(self) -> WeightFn {
        match self {
            Mutation::None => weight_from_log_densities,
            Mutation::FlipWeightSign => flipped_weights,
        }
    }
}

fn flipped_weights(subopt: &[f64], expert: &[f64]) -> Result<DensityWeights> {
    weight_from_log_densities(expert, subopt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub invariant: &'static str,
    pub passed: bool,
    pub witness: String,
    pub seconds: f64,
}

/// Names of the objectives covered by [`gradient_errors`].
pub const GRADIENT_OBJECTIVES: [&str; 7] = [
    "elbo+vq",
    "ade-contrast",
    "dwr-plain",
    "dwr-upper-bound",
    "max-ade",
    "ade-divergence",
    "bc",
];

fn toy_estimator(seed: u64, role: EstimatorRole, quantize: bool) -> Result<DensityEstimator> {
    let cfg = EstimatorConfig {
        latent_dim: 2,
        codebook_size: 4,
        hidden_dim: 5,
        hidden_layers: 1,
        quantize,
        ..EstimatorConfig::new(2, 2)
    };
    DensityEstimator::new(cfg, role, &mut stream(seed, role.tag() as u64))
}

fn toy_batch(seed: u64, id: u64, n: usize) -> Result<Batch> {
    let mut rng = stream(seed, id);
    Batch::new(standard_normal(&mut rng, n, 2), standard_normal(&mut rng, n, 2))
}

fn estimator_gradient_error(seed: u64, contrast: bool) -> Result<f64> {
    let quantize = seed % 2 == 0;
    let est = toy_estimator(seed, EstimatorRole::Expert, quantize)?;
    let own = toy_batch(seed, 10, 5)?;
    let other = toy_batch(seed, 11, 5)?;
    let surrogate = if contrast && seed % 3 == 0 {
        Surrogate::ImportanceSampled(3)
    } else {
        Surrogate::NegElbo
    };
    let no = BatchNoise::draw(&mut stream(seed, 12), 5, 2, surrogate);
    let nt = BatchNoise::draw(&mut stream(seed, 13), 5, 2, surrogate);
    let cfg = AdeConfig {
        surrogate,
        ..AdeConfig::default()
    };
    let weight = if contrast { 1.0 } else { 0.0 };
    let mut captured = None;
    let (_, analytic) = grad(&est, |t, vars| {
        let v = est.bind(vars);
        let out = contrastive_objective(t, &est, &v, (&own, &no), Some((&other, &nt)), weight, &cfg, None)?;
        captured = Some(out.freeze);
        Ok(out.loss)
    })?;
    let numeric = finite_difference(&est, 1e-5, |p| {
        let mut t = Tape::new();
        let v = p.on_tape(&mut t, false);
        let out = contrastive_objective(&mut t, p, &v, (&own, &no), Some((&other, &nt)), weight, &cfg, captured.as_ref())?;
        Ok(t.scalar(out.loss))
    })?;
    Ok(relative_error(&analytic, &numeric))
}

fn policy_gradient_error(seed: u64, objective: Objective) -> Result<f64> {
    let quantize = seed % 2 == 0;
    let e = toy_estimator(seed, EstimatorRole::Expert, quantize)?.freeze();
    let s = toy_estimator(seed, EstimatorRole::Suboptimal, quantize)?.freeze();
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &s,
    };
    let policy = Policy::new(2, 2, 6, 3, 1.5, NormStats::identity(2), &mut stream(seed, 20))?;
    let batch = toy_batch(seed, 21, 6)?;
    let weights = DensityWeights::new(standard_normal(&mut stream(seed, 22), 6, 1).into_vec())?;
    let noise = ActionNoise::draw(pair, 6, 2, &mut stream(seed, 23));
    let inputs = ObjectiveInputs {
        weights: Some(&weights),
        estimators: Some(pair),
        noise: Some(&noise),
        replay: None,
    };
    let mut captured = None;
    let (_, analytic) = grad(&policy, |t, vars| {
        let v = policy.bind(vars);
        let (l, f) = objective_on_tape(t, objective, &policy, &v, &batch, inputs)?;
        captured = Some(f);
        Ok(l)
    })?;
    let replay = ObjectiveInputs {
        replay: captured.as_ref(),
        ..inputs
    };
    let numeric = finite_difference(&policy, 1e-5, |p| {
        let mut t = Tape::new();
        let v = p.on_tape(&mut t, false);
        let (l, _) = objective_on_tape(&mut t, objective, p, &v, &batch, replay)?;
        Ok(t.scalar(l))
    })?;
    Ok(relative_error(&analytic, &numeric))
}

/// Largest finite-difference relative error of each objective over `points` random
/// parameter/batch draws (ε = 1e-5, central differences), in [`GRADIENT_OBJECTIVES`] order.
///
/// Quantized passes replay the code choices of the analytic pass, so the differences probe
/// the same piecewise-smooth branch.
pub fn gradient_errors(points: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::with_capacity(GRADIENT_OBJECTIVES.len());
    for (k, name) in GRADIENT_OBJECTIVES.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for p in 0..points as u64 {
            let s = seed.wrapping_mul(1_000).wrapping_add(p);
            let err = match k {
                0 => estimator_gradient_error(s, false)?,
                1 => estimator_gradient_error(s, true)?,
                2 => policy_gradient_error(s, Objective::Plain)?,
                3 => policy_gradient_error(s, Objective::UpperBound)?,
                4 => policy_gradient_error(s, Objective::MaxAde)?,
                5 => policy_gradient_error(s, Objective::AdeDivergence)?,
                _ => policy_gradient_error(s, Objective::Bc)?,
            };
            worst = worst.max(err);
        }
        out.push((*name, worst));
    }
    Ok(out)
}

/// Largest `|kl_gap − weighted_sum|` over `cases` random tables.
pub fn tabular_identity_error(cases: usize, seed: u64, weight: WeightFn) -> Result<f64> {
    let mut rng = stream(seed, 0);
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let case = TabularCase::random(&mut rng, 2 + k % 5, 2 + k % 7);
        worst = worst.max((case.kl_gap() - case.weighted_sum(weight)?).abs());
    }
    Ok(worst)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median held-out weight of suboptimal-cluster pairs minus that of expert-cluster pairs,
/// after a short adversarial training run.
pub fn cluster_weight_gap(seed: u64, weight: WeightFn) -> Result<f64> {
    let expert = cluster(1.0, 2, 200, 0.3, seed)?;
    let subopt = cluster(-1.0, 2, 200, 0.3, seed + 1)?;
    let cfg = EstimatorConfig {
        latent_dim: 2,
        codebook_size: 8,
        hidden_dim: 16,
        ..EstimatorConfig::new(2, 2)
    };
    let ade = AdeConfig {
        iterations: 400,
        batch_size: 32,
        metrics_every: 0,
        ..AdeConfig::default()
    };
    let trained = train_density(&expert, &subopt, &cfg, &ade, seed)?;
    let pair = EstimatorPair {
        expert: &trained.expert,
        suboptimal: &trained.suboptimal,
    };
    let held_e = cluster(1.0, 2, 100, 0.3, seed + 2)?.all();
    let held_s = cluster(-1.0, 2, 100, 0.3, seed + 3)?.all();
    let mut rng = stream(seed, 50);
    let mut we = density_weight_with(pair, &held_e, 4, &mut rng, weight)?.values().to_vec();
    let mut ws = density_weight_with(pair, &held_s, 4, &mut rng, weight)?.values().to_vec();
    Ok(median(&mut ws) - median(&mut we))
}

/// Fraction of held-out `(expert, suboptimal)` pairs on which the trained expert estimator
/// gives the expert sample the higher log-density. `lambda1 = 0` is plain ELBO training.
pub fn cluster_pair_accuracy(seed: u64, lambda1: f64, iterations: u64, pairs: usize) -> Result<f64> {
    let expert = cluster(1.0, 2, 200, 0.3, seed)?;
    let subopt = cluster(-1.0, 2, 200, 0.3, seed + 1)?;
    let cfg = EstimatorConfig {
        latent_dim: 2,
        codebook_size: 8,
        hidden_dim: 16,
        ..EstimatorConfig::new(2, 2)
    };
    let ade = AdeConfig {
        lambda1,
        iterations,
        batch_size: 32,
        metrics_every: 0,
        ..AdeConfig::default()
    };
    let trained = train_density(&expert, &subopt, &cfg, &ade, seed)?;
    let held_e = cluster(1.0, 2, pairs, 0.3, seed + 2)?.all();
    let held_s = cluster(-1.0, 2, pairs, 0.3, seed + 3)?.all();
    let mut rng = stream(seed, 51);
    let le = trained.expert.log_density_batch(&held_e.obs, &held_e.act, 16, &mut rng)?;
    let ls = trained.expert.log_density_batch(&held_s.obs, &held_s.act, 16, &mut rng)?;
    let wins = le.iter().zip(&ls).filter(|(e, s)| e > s).count();
    Ok(wins as f64 / pairs as f64)
}

/// A one-action linear estimator fitted to linear-Gaussian data, plus held-out pairs.
pub fn fitted_linear_model(seed: u64, iterations: u64) -> Result<(DensityEstimator, Dataset)> {
    let train = linear_gaussian(2, 1, 2000, seed)?;
    let held = linear_gaussian(2, 1, 500, seed + 1)?;
    let cfg = EstimatorConfig {
        latent_dim: 2,
        hidden_layers: 0,
        quantize: false,
        ..EstimatorConfig::new(2, 1)
    };
    let ade = AdeConfig {
        lambda1: 0.0,
        iterations,
        batch_size: 64,
        metrics_every: 0,
        ..AdeConfig::default()
    };
    let trained = train_density(&train, &train, &cfg, &ade, seed)?;
    Ok((trained.expert.to_trainable(), held))
}

/// Fraction of held-out pairs whose ELBO (averaged over `draws` noise samples) stays below
/// the exact log-likelihood plus three standard errors.
pub fn elbo_bound_fraction(est: &DensityEstimator, held: &Dataset, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, 60);
    let mut ok = 0usize;
    for t in held.iter_transitions() {
        let b = Batch::new(crate::nn::Mat::row_vector(&t.obs), crate::nn::Mat::row_vector(&t.act))?;
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let n = standard_normal(&mut rng, 1, est.config().latent_dim);
                est.elbo_loss(&b, Some(&n)).map(|l| -l)
            })
            .collect::<Result<_>>()?;
        let m = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.max(2) - 1) as f64).sqrt();
        let exact = linear_marginal_1d(est, &t.obs, t.act[0])?;
        if m <= exact + 3.0 * sd / (draws as f64).sqrt() + 1e-12 {
            ok += 1;
        }
    }
    Ok(ok as f64 / held.num_transitions() as f64)
}

/// Largest `|IS estimate − exact|` over the first `points` held-out pairs with `l` samples.
pub fn is_consistency_error(est: &DensityEstimator, held: &Dataset, points: usize, l: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, 70);
    let mut worst: f64 = 0.0;
    for t in held.iter_transitions().take(points) {
        let v = est.log_density(&t.obs, &t.act, l, &mut rng)?.log_density;
        worst = worst.max((v - linear_marginal_1d(est, &t.obs, t.act[0])?).abs());
    }
    Ok(worst)
}

fn timed(module: &'static str, invariant: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, witness) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        module,
        invariant,
        passed,
        witness,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Runs the whole suite.
pub fn run_checks(mutation: Mutation) -> Vec<CheckResult> {
    let weight = mutation.weight_fn();
    let mut out = Vec::new();
    out.push(timed("dwr", "tabular density-weight identity", || {
        let e = tabular_identity_error(100, 1, weight)?;
        Ok((e <= 1e-12, format!("max |gap| = {e:.3e} over 100 tables")))
    }));
    out.push(timed("dwr", "suboptimal pairs outweigh expert pairs", || {
        let g = cluster_weight_gap(3, weight)?;
        Ok((g > 0.0, format!("median weight gap = {g:.4}")))
    }));
    out.push(timed("nn", "analytic gradients match finite differences", || {
        let errs = gradient_errors(2, 7)?;
        let worst = errs.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        Ok((worst.1 < 1e-4, format!("worst {} rel err = {:.3e}", worst.0, worst.1)))
    }));
    let mut linear = None;
    out.push(timed("vqvae", "ELBO never exceeds the exact log-likelihood", || {
        let (est, held) = linear.insert(fitted_linear_model(5, 1500)?);
        let f = elbo_bound_fraction(est, held, 64, 5)?;
        Ok((f >= 0.99, format!("fraction below bound = {f:.4}")))
    }));
    out.push(timed("vqvae", "importance-sampled density converges", || {
        let (est, held) = match &linear {
            Some(m) => m,
            None => return Ok((false, "linear model unavailable".into())),
        };
        let e = is_consistency_error(est, held, 10, 10_000, 5)?;
        Ok((e < 0.05, format!("max |IS − exact| = {e:.4} nats (L = 10000)")))
    }));
    out.push(timed("envs", "normalized score is affine", || {
        let refs = ScoreRefs::new(-30.0, -5.0)?;
        let mut worst: f64 = 0.0;
        for k in 0..=10 {
            let a = k as f64 / 10.0;
            let r = a * refs.expert_return + (1.0 - a) * refs.random_return;
            worst = worst.max((normalized_score(r, &refs)? - 100.0 * a).abs());
        }
        Ok((worst < 1e-12, format!("max deviation = {worst:.3e}")))
    }));
    out.push(timed("envs", "scripted expert scores 100", || {
        let task = Task::PointMass2d;
        let refs = score_refs(task)?;
        let mut a = ControllerActor::new(Controller::ScriptedExpert);
        let s = evaluate(&mut a, task, CALIBRATION_EPISODES, CALIBRATION_SEED, &refs)?;
        Ok(((s.mean - 100.0).abs() < 1e-9, format!("mean = {:.12}", s.mean)))
    }));
    out.push(timed("data", "dataset files round-trip bit-exactly", || {
        let ds = cluster(0.5, 3, 20, 0.2, 9)?;
        let back = crate::data::dataset_from_bytes(&crate::data::dataset_to_bytes(&ds)?)?;
        let mut rng = stream(9, 0);
        let same = back.trajectories() == ds.trajectories() && sample_batch(&back, &mut rng.clone(), 4)? == sample_batch(&ds, &mut rng, 4)?;
        Ok((same, format!("{} transitions", ds.num_transitions())))
    }));
    out
}

pub fn render_report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(
            s,
            "[{}] {}: {} ({}; {:.2}s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.module,
            r.invariant,
            r.witness,
            r.seconds
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(s, "{} checks, {} failed", results.len(), failed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_breaks_weight_checks() {
        assert!(tabular_identity_error(20, 1, Mutation::FlipWeightSign.weight_fn()).unwrap() > 1e-3);
        assert!(tabular_identity_error(20, 1, Mutation::None.weight_fn()).unwrap() <= 1e-12);
    }
}
