use super::*;
use crate::ade::init_estimators;
use crate::data::{Role, Trajectory, Transition};
use crate::nn::gradcheck::{finite_difference, relative_error};
use crate::nn::{Gradient, Layer};
use crate::vqvae::{DensityEstimator, EstimatorConfig, EstimatorRole};
use proptest::prelude::{prop, prop_assert, proptest};

fn zero_policy(obs_dim: usize, act_dim: usize) -> Policy {
    let net = MlpParams::zeros(&[obs_dim, act_dim], Activation::Relu, Activation::Tanh);
    Policy::from_parts(net, 1.0, NormStats::identity(obs_dim)).unwrap()
}

fn small_policy(seed: u64) -> Policy {
    Policy::new(2, 2, 6, 3, 1.5, NormStats::identity(2), &mut stream(seed, 0)).unwrap()
}

fn small_estimators(seed: u64, quantize: bool) -> (FrozenEstimator, FrozenEstimator) {
    let cfg = EstimatorConfig {
        latent_dim: 2,
        codebook_size: 4,
        hidden_dim: 5,
        hidden_layers: 1,
        quantize,
        ..EstimatorConfig::new(2, 2)
    };
    let (e, s) = init_estimators(&cfg, seed).unwrap();
    (e.freeze(), s.freeze())
}

fn random_batch(seed: u64, n: usize) -> Batch {
    let mut rng = stream(seed, 3);
    Batch::new(standard_normal(&mut rng, n, 2), standard_normal(&mut rng, n, 2)).unwrap()
}

fn weights(v: &[f64]) -> DensityWeights {
    DensityWeights::new(v.to_vec()).unwrap()
}

#[test]
fn hand_set_densities() {
    assert_eq!(weight_from_log_densities(&[-1.0], &[-3.0]).unwrap().values(), &[2.0]);
    assert!(weight_from_log_densities(&[1.0, 2.0], &[1.0]).is_err());
    assert!(weight_from_log_densities(&[f64::INFINITY], &[0.0]).is_err());
}

#[test]
fn identical_estimators_give_zero_weights() {
    let (e, _) = small_estimators(1, true);
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &e,
    };
    let w = density_weight(pair, &random_batch(1, 16), 3, &mut stream(0, 0)).unwrap();
    assert!(w.values().iter().all(|&x| x == 0.0));
}

#[test]
fn weights_match_direct_densities() {
    let (e, s) = small_estimators(2, true);
    let b = random_batch(2, 8);
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &s,
    };
    let w = density_weight(pair, &b, 2, &mut stream(5, 0)).unwrap();
    let noise = standard_normal(&mut stream(5, 0), 16, 2);
    let le = e.log_density_with_noise(&b.obs, &b.act, &noise).unwrap();
    let ls = s.log_density_with_noise(&b.obs, &b.act, &noise).unwrap();
    for i in 0..8 {
        assert_eq!(w.values()[i], ls[i] - le[i]);
    }
}

#[test]
fn zero_weights_give_zero_loss() {
    let p = small_policy(1);
    let b = random_batch(1, 5);
    assert_eq!(dwr_loss(&weights(&[0.0; 5]), &p, &b).unwrap(), 0.0);
    assert_eq!(dwr_upper_bound_loss(&weights(&[0.0; 5]), &p, &b).unwrap(), 0.0);
}

#[test]
fn exact_policy_has_zero_residual() {
    let p = zero_policy(1, 2);
    let b = Batch::new(Mat::row_vector(&[0.3]), Mat::row_vector(&[0.0, 0.0])).unwrap();
    assert_eq!(dwr_loss(&weights(&[1.0]), &p, &b).unwrap(), 0.0);
    assert_eq!(bc_loss(&p, &b).unwrap(), 0.0);
}

#[test]
fn weighted_and_upper_bound_arithmetic() {
    // zero policy: residual norms are the action norms, 2 and 4
    let p = zero_policy(1, 2);
    let b = Batch::new(Mat::col_vector(&[0.0, 0.0]), Mat::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap()).unwrap();
    let w = weights(&[1.0, 3.0]);
    assert_eq!(dwr_loss(&w, &p, &b).unwrap(), 7.0);
    // correlated weights and residuals put the batch form below the weighted mean
    assert_eq!(dwr_upper_bound_loss(&w, &p, &b).unwrap(), 6.0);
    assert_eq!(bc_loss(&p, &b).unwrap(), 3.0);
}

#[test]
fn constant_weights_make_both_forms_agree() {
    let p = small_policy(3);
    let b = random_batch(3, 9);
    // a power of two keeps the products exact
    let w = weights(&[0.25; 9]);
    assert_eq!(dwr_loss(&w, &p, &b).unwrap(), dwr_upper_bound_loss(&w, &p, &b).unwrap());
    let w = weights(&[1.7; 9]);
    let (x, y) = (dwr_loss(&w, &p, &b).unwrap(), dwr_upper_bound_loss(&w, &p, &b).unwrap());
    assert!((x - y).abs() <= 1e-14 * x.abs());
    assert_eq!(dwr_loss(&weights(&[1.0; 9]), &p, &b).unwrap(), bc_loss(&p, &b).unwrap());
}

proptest! {
    #[test]
    fn policy_outputs_stay_in_bounds(obs in prop::collection::vec(-100.0f64..100.0, 2), seed in 0u64..50) {
        let p = small_policy(seed);
        for a in p.act(&obs).unwrap() {
            prop_assert!(a.abs() <= p.bound());
        }
    }
}

fn weighted_gradient(policy: &Policy, objective: Objective, b: &Batch, w: &DensityWeights) -> Gradient {
    let inputs = ObjectiveInputs {
        weights: Some(w),
        ..Default::default()
    };
    grad(policy, |t, vars| {
        let v = policy.bind(vars);
        Ok(objective_on_tape(t, objective, policy, &v, b, inputs)?.0)
    })
    .unwrap()
    .1
}

#[test]
fn upper_bound_gradient_is_scaled_bc_gradient() {
    let p = small_policy(4);
    let b = random_batch(4, 7);
    let w = weights(&[0.5, -1.0, 2.0, 0.3, 0.0, 1.1, -0.4]);
    let g = weighted_gradient(&p, Objective::UpperBound, &b, &w);
    let bc = weighted_gradient(&p, Objective::Bc, &b, &w);
    let m = w.mean();
    for (x, y) in g.flatten().iter().zip(bc.flatten()) {
        assert!((x - m * y).abs() <= 1e-12 * (1.0 + y.abs()));
    }
    // shifting every weight by c moves the gradient by c·∇mean‖π − a‖
    let c = 0.75;
    let shifted = weights(&w.values().iter().map(|x| x + c).collect::<Vec<_>>());
    let gs = weighted_gradient(&p, Objective::UpperBound, &b, &shifted);
    for ((x, y), z) in gs.flatten().iter().zip(g.flatten()).zip(bc.flatten()) {
        assert!((x - y - c * z).abs() <= 1e-12 * (1.0 + z.abs()));
    }
}

fn fd_error(objective: Objective, seed: u64, quantize: bool) -> f64 {
    let p = small_policy(seed);
    let (e, s) = small_estimators(seed + 100, quantize);
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &s,
    };
    let b = random_batch(seed, 6);
    let w = weights(&standard_normal(&mut stream(seed, 8), 6, 1).into_vec());
    let noise = ActionNoise::draw(pair, 6, 2, &mut stream(seed, 9));
    let inputs = ObjectiveInputs {
        weights: Some(&w),
        estimators: Some(pair),
        noise: Some(&noise),
        replay: None,
    };
    let mut freeze = None;
    let (_, analytic) = grad(&p, |t, vars| {
        let v = p.bind(vars);
        let (l, f) = objective_on_tape(t, objective, &p, &v, &b, inputs)?;
        freeze = Some(f);
        Ok(l)
    })
    .unwrap();
    let replay = ObjectiveInputs {
        replay: freeze.as_ref(),
        ..inputs
    };
    let numeric = finite_difference(&p, 1e-5, |q| {
        let mut t = Tape::new();
        let v = q.on_tape(&mut t, false);
        let (l, _) = objective_on_tape(&mut t, objective, q, &v, &b, replay)?;
        Ok(t.scalar(l))
    })
    .unwrap();
    relative_error(&analytic, &numeric)
}

#[test]
fn objective_gradients_match_finite_differences() {
    for objective in Objective::ALL {
        for quantize in [true, false] {
            let err = fd_error(objective, 11, quantize);
            assert!(err < 1e-4, "{objective} quantize={quantize}: {err}");
        }
    }
}

/// 1-d estimator with `log p(a|s) = log N(a; mode, 1)` exactly.
fn gaussian_estimator(mode: f64) -> FrozenEstimator {
    let cfg = EstimatorConfig {
        latent_dim: 1,
        codebook_size: 1,
        hidden_dim: 1,
        hidden_layers: 0,
        ..EstimatorConfig::new(1, 1)
    };
    let enc = MlpParams::zeros(&[2, 2], Activation::Relu, Activation::Identity);
    let dec = MlpParams::new(vec![Layer::new(Mat::zeros(1, 2), vec![mode], Activation::Identity).unwrap()]).unwrap();
    DensityEstimator::from_parts(cfg, EstimatorRole::Expert, enc, dec, Mat::zeros(1, 1), Mat::zeros(1, 1))
        .unwrap()
        .freeze()
}

fn constant_policy(out: f64) -> Policy {
    // bias atanh(out) makes the squashed output exactly `out` up to rounding
    let layer = Layer::new(Mat::zeros(1, 1), vec![out.atanh()], Activation::Tanh).unwrap();
    Policy::from_parts(MlpParams::new(vec![layer]).unwrap(), 1.0, NormStats::identity(1)).unwrap()
}

#[test]
fn max_ade_is_smallest_at_the_density_mode() {
    let mode = 0.3;
    let est = gaussian_estimator(mode);
    let b = Batch::new(Mat::col_vector(&[0.0, 0.5]), Mat::zeros(2, 1)).unwrap();
    let grid: Vec<f64> = (-18..=18).map(|k| k as f64 * 0.05).collect();
    let losses: Vec<f64> = grid
        .iter()
        .map(|&a| max_ade_loss(&est, &constant_policy(a), &b, 1, &mut stream(0, 0)).unwrap())
        .collect();
    let best = (0..grid.len()).min_by(|&i, &j| losses[i].total_cmp(&losses[j])).unwrap();
    assert!((grid[best] - mode).abs() < 1e-9);
    // oracle: −log N(mode; mode, 1)
    let at_mode = 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((losses[best] - at_mode).abs() < 1e-9);
}

#[test]
fn density_losses_are_reproducible_and_zero_for_identical_estimators() {
    let (e, _) = small_estimators(5, true);
    let p = small_policy(5);
    let b = random_batch(5, 6);
    let x = max_ade_loss(&e, &p, &b, 2, &mut stream(1, 1)).unwrap();
    let y = max_ade_loss(&e, &p.clone(), &b, 2, &mut stream(1, 1)).unwrap();
    assert_eq!(x, y);
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &e,
    };
    assert_eq!(ade_divergence_loss(pair, &p, &b, 2, &mut stream(1, 1)).unwrap(), 0.0);
}

#[test]
fn divergence_prefers_the_expert_mode() {
    let e = gaussian_estimator(0.5);
    let s = gaussian_estimator(-0.5);
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &s,
    };
    let b = Batch::new(Mat::col_vector(&[0.0]), Mat::zeros(1, 1)).unwrap();
    let at = |a: f64| ade_divergence_loss(pair, &constant_policy(a), &b, 1, &mut stream(0, 0)).unwrap();
    assert!(at(0.5) < at(-0.5));
}

#[test]
fn tabular_identity_holds() {
    let mut rng = stream(12, 0);
    for _ in 0..100 {
        let case = TabularCase::random(&mut rng, 4, 5);
        let lhs = case.kl_gap();
        let rhs = case.weighted_sum(weight_from_log_densities).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }
}

#[test]
fn policy_checkpoint_round_trip() {
    let p = Policy::new(
        3,
        2,
        4,
        2,
        2.0,
        NormStats {
            mean: vec![0.1, 0.2, 0.3],
            std: vec![1.0, 2.0, 3.0],
        },
        &mut stream(1, 0),
    )
    .unwrap();
    let bytes = policy_to_bytes(&p).unwrap();
    assert_eq!(policy_from_bytes(&bytes).unwrap(), p);
    assert_eq!(&crate::nn::checkpoint::mlp_from_bytes(&bytes).unwrap(), p.net());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(policy_from_bytes(&extra), Err(Error::Format { .. })));
}

fn line_dataset(n: usize) -> Dataset {
    let trajs = (0..n)
        .map(|i| {
            let s = i as f64 / n as f64 - 0.5;
            Trajectory::new(vec![Transition::new(vec![s, -s], vec![0.5 * s, s], 0.0, true)]).unwrap()
        })
        .collect();
    Dataset::new(2, 2, Role::Mixed, trajs).unwrap()
}

#[test]
fn zero_iterations_return_the_initial_policy() {
    let ds = line_dataset(10);
    let cfg = DwrConfig {
        objective: Objective::Bc,
        iterations: 0,
        hidden_dim: 8,
        ..DwrConfig::default()
    };
    let out = train_policy(None, &ds, 1.0, &cfg, 3, None).unwrap();
    assert_eq!(out.policy, init_policy(&ds, 1.0, &cfg, 3).unwrap());
    assert!(out.metrics.is_empty());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let ds = line_dataset(40);
    let (e, s) = small_estimators(7, true);
    let pair = EstimatorPair {
        expert: &e,
        suboptimal: &s,
    };
    for objective in Objective::ALL {
        let cfg = DwrConfig {
            objective,
            iterations: 60,
            batch_size: 16,
            eval_every: 20,
            lr: 1e-3,
            hidden_dim: 8,
            layers: 2,
            ..DwrConfig::default()
        };
        let a = train_policy(Some(pair), &ds, 1.0, &cfg, 9, None).unwrap();
        let b = train_policy(Some(pair), &ds, 1.0, &cfg, 9, None).unwrap();
        assert_eq!(policy_to_bytes(&a.policy).unwrap(), policy_to_bytes(&b.policy).unwrap());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.len(), 3);
    }
    let cfg = DwrConfig {
        objective: Objective::Bc,
        iterations: 300,
        batch_size: 16,
        lr: 1e-2,
        hidden_dim: 8,
        layers: 2,
        ..DwrConfig::default()
    };
    let p0 = init_policy(&ds, 1.0, &cfg, 1).unwrap();
    let trained = train_policy(None, &ds, 1.0, &cfg, 1, None).unwrap().policy;
    let all = ds.all();
    assert!(bc_loss(&trained, &all).unwrap() < 0.5 * bc_loss(&p0, &all).unwrap());
}

#[test]
fn density_objectives_require_estimators() {
    let ds = line_dataset(4);
    let cfg = DwrConfig {
        hidden_dim: 4,
        ..DwrConfig::default()
    };
    assert!(matches!(train_policy(None, &ds, 1.0, &cfg, 0, None), Err(Error::Argument(_))));
    assert_eq!("ade_divergence".parse::<Objective>().unwrap(), Objective::AdeDivergence);
    assert!("adr".parse::<Objective>().is_err());
}
