use super::*;
use crate::data::{Role, Trajectory, Transition};
use crate::nn::gradcheck::{finite_difference, relative_error};
use proptest::prelude::{prop, prop_assert, proptest};

fn toy_cfg(quantize: bool) -> EstimatorConfig {
    EstimatorConfig {
        latent_dim: 2,
        codebook_size: 4,
        hidden_dim: 5,
        hidden_layers: 1,
        quantize,
        ..EstimatorConfig::new(2, 2)
    }
}

fn cluster(sign: f64, n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, 0);
    let trajs = (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..2).map(|_| sign + 0.2 * rng.random_range(-1.0..1.0)).collect();
            let a = s.clone();
            Trajectory::new(vec![Transition::new(s, a, 0.0, true)]).unwrap()
        })
        .collect();
    Dataset::new(2, 2, Role::Mixed, trajs).unwrap()
}

fn noise(seed: u64, b: &Batch, latent: usize, s: Surrogate) -> BatchNoise {
    BatchNoise::draw(&mut stream(seed, 99), b.len(), latent, s)
}

#[test]
fn identical_scores_give_zero() {
    assert_eq!(adversarial_term(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
}

#[test]
fn contrast_limits() {
    let j = adversarial_term(&[800.0], &[-800.0]).unwrap();
    assert_eq!(j, 1.0);
}

#[test]
fn contrast_arithmetic() {
    assert_eq!(adversarial_term(&[0.0], &[0.0]).unwrap(), 0.0);
    let j = adversarial_term(&[3f64.ln()], &[0.0]).unwrap();
    assert!((j - 0.25).abs() < 1e-15);
}

proptest! {
    #[test]
    fn contrast_is_bounded(pos in prop::collection::vec(-50.0f64..50.0, 1..8), neg in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let j = adversarial_term(&pos, &neg).unwrap();
        // σ rounds to exactly 0 or 1 beyond |d| ≈ 37, closing the interval in f64
        prop_assert!((-1.0..=1.0).contains(&j));
    }

    #[test]
    fn contrast_is_strictly_bounded_before_rounding(pos in prop::collection::vec(-30.0f64..30.0, 1..8), neg in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let j = adversarial_term(&pos, &neg).unwrap();
        prop_assert!(j > -1.0 && j < 1.0);
    }
}

#[test]
fn zero_weight_reduces_to_elbo() {
    let mut rng = stream(1, 0);
    let (est, _) = init_estimators(&toy_cfg(true), 1).unwrap();
    let e = sample_batch(&cluster(1.0, 10, 1), &mut rng, 8).unwrap();
    let s = sample_batch(&cluster(-1.0, 10, 2), &mut rng, 8).unwrap();
    let ne = noise(1, &e, 2, Surrogate::NegElbo);
    let ns = noise(2, &s, 2, Surrogate::NegElbo);
    let cfg = AdeConfig {
        lambda1: 0.0,
        ..AdeConfig::default()
    };
    let plain = est.elbo_loss(&e, Some(&ne.elbo)).unwrap();
    assert_eq!(ade_loss(&est, (&e, &ne), (&s, &ns), &cfg).unwrap(), plain);
    // identical batches: the contrast vanishes
    let cfg1 = AdeConfig::default();
    assert_eq!(ade_loss(&est, (&e, &ne), (&e, &ne), &cfg1).unwrap(), plain);
}

#[test]
fn role_mismatch_is_rejected() {
    let (e, s) = init_estimators(&toy_cfg(true), 1).unwrap();
    let mut rng = stream(1, 0);
    let b = sample_batch(&cluster(1.0, 4, 1), &mut rng, 4).unwrap();
    let n = noise(1, &b, 2, Surrogate::NegElbo);
    let cfg = AdeConfig::default();
    assert!(matches!(ade_loss(&s, (&b, &n), (&b, &n), &cfg), Err(Error::Argument(_))));
    assert!(matches!(subopt_loss(&e, (&b, &n), (&b, &n), &cfg), Err(Error::Argument(_))));
}

fn check_gradient(quantize: bool, surrogate: Surrogate, of_density: bool, seed: u64) -> f64 {
    let (est, _) = init_estimators(&toy_cfg(quantize), seed).unwrap();
    let mut rng = stream(seed, 5);
    let e = sample_batch(&cluster(1.0, 10, seed), &mut rng, 5).unwrap();
    let s = sample_batch(&cluster(-1.0, 10, seed + 1), &mut rng, 5).unwrap();
    let ne = noise(seed, &e, 2, surrogate);
    let ns = noise(seed + 1, &s, 2, surrogate);
    let cfg = AdeConfig {
        surrogate,
        sigmoid_of_density: of_density,
        ..AdeConfig::default()
    };
    let mut captured = None;
    let (_, analytic) = grad(&est, |t, vars| {
        let v = est.bind(vars);
        let out = contrastive_objective(t, &est, &v, (&e, &ne), Some((&s, &ns)), 1.0, &cfg, None)?;
        captured = Some(out.freeze);
        Ok(out.loss)
    })
    .unwrap();
    let numeric = finite_difference(&est, 1e-5, |p| {
        let mut t = Tape::new();
        let v = p.on_tape(&mut t, false);
        let out = contrastive_objective(&mut t, p, &v, (&e, &ne), Some((&s, &ns)), 1.0, &cfg, captured.as_ref())?;
        Ok(t.scalar(out.loss))
    })
    .unwrap();
    relative_error(&analytic, &numeric)
}

#[test]
fn ade_gradient_matches_finite_differences() {
    for (q, sur, lit) in [
        (true, Surrogate::NegElbo, false),
        (false, Surrogate::NegElbo, false),
        (true, Surrogate::ImportanceSampled(3), false),
        (false, Surrogate::NegElbo, true),
    ] {
        let err = check_gradient(q, sur, lit, 21);
        assert!(err < 1e-4, "{q} {sur:?} {lit}: {err}");
    }
}

#[test]
fn zero_iterations_return_initial_estimators() {
    let cfg = AdeConfig {
        iterations: 0,
        ..AdeConfig::default()
    };
    let ec = toy_cfg(true);
    let (e0, s0) = init_estimators(&ec, 3).unwrap();
    let out = train_density(&cluster(1.0, 5, 1), &cluster(-1.0, 5, 2), &ec, &cfg, 3).unwrap();
    assert_eq!(out.expert.to_trainable(), e0);
    assert_eq!(out.suboptimal.to_trainable(), s0);
    assert!(out.metrics.is_empty());
}

#[test]
fn training_is_deterministic() {
    let cfg = AdeConfig {
        iterations: 30,
        batch_size: 8,
        metrics_every: 10,
        ..AdeConfig::default()
    };
    let ec = toy_cfg(true);
    let (e, s) = (cluster(1.0, 20, 1), cluster(-1.0, 20, 2));
    let a = train_density(&e, &s, &ec, &cfg, 7).unwrap();
    let b = train_density(&e, &s, &ec, &cfg, 7).unwrap();
    assert_eq!(
        crate::vqvae::estimator_to_bytes(&a.expert).unwrap(),
        crate::vqvae::estimator_to_bytes(&b.expert).unwrap()
    );
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.len(), 3);
}

#[test]
fn zero_weight_trace_equals_plain_training() {
    let cfg = AdeConfig {
        lambda1: 0.0,
        iterations: 40,
        batch_size: 8,
        metrics_every: 0,
        ..AdeConfig::default()
    };
    let ec = toy_cfg(true);
    let ds = cluster(1.0, 20, 1);
    let adv = train_density(&ds, &ds, &ec, &cfg, 5).unwrap();
    let (e0, _) = init_estimators(&ec, 5).unwrap();
    let (plain, trace) = train_elbo(e0, &ds, &cfg, 5).unwrap();
    for (x, y) in adv.expert_losses.iter().zip(&trace) {
        assert!((x - y).abs() <= 1e-12);
    }
    assert_eq!(*adv.expert, plain);
}
