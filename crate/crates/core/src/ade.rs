//! Adversarial density estimation.
//!
//! The expert estimator minimizes its ELBO loss on expert samples while pushing a
//! sigmoid contrast between expert and suboptimal samples up; the suboptimal estimator
//! trains on its own data, plainly unless `lambda2 > 0`.

use rand::Rng;

use crate::csv::{fmt_f64, CsvTable};
use crate::data::{sample_batch, Batch, Dataset};
use crate::error::{Error, Result};
use crate::nn::gaussian::standard_normal;
use crate::nn::tape::sigmoid;
use crate::nn::{grad, Mat, OptimState, Tape, Var};
use crate::rng::stream;
use crate::vqvae::{
    DensityEstimator, EstimatorConfig, EstimatorRole, EstimatorVars, FrozenEstimator, QuantFreeze,
};

/// Per-sample score fed to the contrast.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surrogate {
    /// `−(NLL + KL)` from the training pass.
    NegElbo,
    /// Importance-sampled log-density with this many samples.
    ImportanceSampled(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdeConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub surrogate: Surrogate,
    /// Apply the sigmoid to `exp(score)` instead of the score.
    pub sigmoid_of_density: bool,
    /// Metrics row every this many iterations (and after the last one); 0 disables rows.
    pub metrics_every: u64,
}

impl Default for AdeConfig {
    fn default() -> Self {
        AdeConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            batch_size: 64,
            iterations: 5000,
            lr: 1e-3,
            surrogate: Surrogate::NegElbo,
            sigmoid_of_density: false,
            metrics_every: 1000,
        }
    }
}

impl AdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::config("lambda1 and lambda2 must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.surrogate == Surrogate::ImportanceSampled(0) {
            return Err(Error::config("importance sampling needs L ≥ 1"));
        }
        Ok(())
    }
}

/// `mean σ(d_pos) − mean σ(d_neg)`.
pub fn adversarial_term(d_pos: &[f64], d_neg: &[f64]) -> Result<f64> {
    if d_pos.is_empty() || d_neg.is_empty() {
        return Err(Error::argument("contrast needs non-empty batches"));
    }
    let m = |d: &[f64]| d.iter().map(|&x| sigmoid(x)).sum::<f64>() / d.len() as f64;
    Ok(m(d_pos) - m(d_neg))
}

/// Tape form of [`adversarial_term`] over `[n×1]` score columns.
pub fn adversarial_term_on_tape(tape: &mut Tape, d_pos: Var, d_neg: Var, of_density: bool) -> Var {
    let squash = |tape: &mut Tape, d: Var| {
        let x = if of_density { tape.exp(d) } else { d };
        let s = tape.sigmoid(x);
        tape.mean(s)
    };
    let p = squash(tape, d_pos);
    let n = squash(tape, d_neg);
    tape.sub(p, n)
}

/// Latent noise for one batch.
#[derive(Clone, Debug)]
pub struct BatchNoise {
    /// `[b×latent]` for the ELBO pass.
    pub elbo: Mat,
    /// `[(b·L)×latent]` when the importance-sampled surrogate is used.
    pub is: Option<Mat>,
}

impl BatchNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, rows: usize, latent: usize, surrogate: Surrogate) -> Self {
        let elbo = standard_normal(rng, rows, latent);
        let is = match surrogate {
            Surrogate::NegElbo => None,
            Surrogate::ImportanceSampled(l) => Some(standard_normal(rng, rows * l, latent)),
        };
        BatchNoise { elbo, is }
    }
}

struct Scored {
    objective: Var,
    score: Var,
    z_e: Var,
    freeze: PassFreeze,
}

/// Quantization captures of one batch pass (ELBO pass, importance-sampled pass).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassFreeze {
    pub elbo: Option<QuantFreeze>,
    pub is: Option<QuantFreeze>,
}

/// Quantization captures of a whole contrastive objective, for replay.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContrastFreeze {
    pub own: PassFreeze,
    pub other: Option<PassFreeze>,
}

/// Loss node plus the latent and code choices of the own-batch pass.
pub struct ContrastOutput {
    pub loss: Var,
    pub z_e: Var,
    pub indices: Vec<usize>,
    pub freeze: ContrastFreeze,
}

fn scored_pass(
    tape: &mut Tape,
    est: &DensityEstimator,
    v: &EstimatorVars,
    batch: &Batch,
    noise: &BatchNoise,
    surrogate: Surrogate,
    replay: Option<&PassFreeze>,
) -> Result<Scored> {
    let o = tape.constant(batch.obs.clone());
    let a = tape.constant(batch.act.clone());
    let terms = est.elbo_terms(tape, v, o, a, Some(&noise.elbo), replay.and_then(|r| r.elbo.as_ref()))?;
    let neg_elbo = DensityEstimator::neg_elbo_rows(tape, &terms);
    let objective = est.elbo_objective(tape, &terms);
    let (score, is_freeze) = match (surrogate, &noise.is) {
        (Surrogate::NegElbo, _) => (tape.scale(neg_elbo, -1.0), None),
        (Surrogate::ImportanceSampled(_), Some(n)) => {
            est.log_density_on_tape(tape, v, o, a, n, replay.and_then(|r| r.is.as_ref()))?
        }
        (Surrogate::ImportanceSampled(_), None) => {
            return Err(Error::config("importance-sampled surrogate needs IS noise"))
        }
    };
    Ok(Scored {
        objective,
        score,
        z_e: terms.z_e,
        freeze: PassFreeze {
            elbo: terms.freeze,
            is: is_freeze,
        },
    })
}

/// Builds `ELBO(own) − weight·contrast(own, other)` on `tape`; the contrast is skipped when
/// `weight == 0`.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_objective(
    tape: &mut Tape,
    est: &DensityEstimator,
    v: &EstimatorVars,
    own: (&Batch, &BatchNoise),
    other: Option<(&Batch, &BatchNoise)>,
    weight: f64,
    cfg: &AdeConfig,
    replay: Option<&ContrastFreeze>,
) -> Result<ContrastOutput> {
    let pos = scored_pass(tape, est, v, own.0, own.1, cfg.surrogate, replay.map(|r| &r.own))?;
    let (loss, other_freeze) = if weight == 0.0 {
        (pos.objective, None)
    } else {
        let (nb, nn) = other.ok_or_else(|| Error::argument("contrast needs a second batch"))?;
        let neg = scored_pass(tape, est, v, nb, nn, cfg.surrogate, replay.and_then(|r| r.other.as_ref()))?;
        let j = adversarial_term_on_tape(tape, pos.score, neg.score, cfg.sigmoid_of_density);
        let wj = tape.scale(j, weight);
        (tape.sub(pos.objective, wj), Some(neg.freeze))
    };
    Ok(ContrastOutput {
        loss,
        z_e: pos.z_e,
        indices: pos.freeze.elbo.as_ref().map(|f| f.indices.clone()).unwrap_or_default(),
        freeze: ContrastFreeze {
            own: pos.freeze,
            other: other_freeze,
        },
    })
}

/// Expert objective: mean ELBO loss on the expert batch minus `lambda1 · J`.
pub fn ade_loss(
    est: &DensityEstimator,
    expert: (&Batch, &BatchNoise),
    subopt: (&Batch, &BatchNoise),
    cfg: &AdeConfig,
) -> Result<f64> {
    if est.role() != EstimatorRole::Expert {
        return Err(Error::argument("ade_loss needs the expert estimator"));
    }
    let mut tape = Tape::new();
    let v = est.on_tape(&mut tape, false);
    let out = contrastive_objective(&mut tape, est, &v, expert, Some(subopt), cfg.lambda1, cfg, None)?;
    Ok(tape.scalar(out.loss))
}

/// Suboptimal objective: its ELBO loss, minus `lambda2 · J` with the roles of the batches
/// swapped when `lambda2 > 0`.
pub fn subopt_loss(
    est: &DensityEstimator,
    subopt: (&Batch, &BatchNoise),
    expert: (&Batch, &BatchNoise),
    cfg: &AdeConfig,
) -> Result<f64> {
    if est.role() != EstimatorRole::Suboptimal {
        return Err(Error::argument("subopt_loss needs the suboptimal estimator"));
    }
    let mut tape = Tape::new();
    let v = est.on_tape(&mut tape, false);
    let out = contrastive_objective(&mut tape, est, &v, subopt, Some(expert), cfg.lambda2, cfg, None)?;
    Ok(tape.scalar(out.loss))
}

/// Optimizer, data and private random streams for one estimator.
pub struct EstimatorTrainer<'a> {
    est: DensityEstimator,
    opt: OptimState,
    own: &'a Dataset,
    other: &'a Dataset,
    weight: f64,
    batch_rng: rand_chacha::ChaCha8Rng,
    noise_rng: rand_chacha::ChaCha8Rng,
    other_rng: rand_chacha::ChaCha8Rng,
    code_rng: rand_chacha::ChaCha8Rng,
}

impl<'a> EstimatorTrainer<'a> {
    /// `stream_base` selects four consecutive stream ids of `seed`.
    pub fn new(
        est: DensityEstimator,
        own: &'a Dataset,
        other: &'a Dataset,
        weight: f64,
        cfg: &AdeConfig,
        seed: u64,
        stream_base: u64,
    ) -> Self {
        EstimatorTrainer {
            opt: OptimState::new(&est, cfg.lr),
            est,
            own,
            other,
            weight,
            batch_rng: stream(seed, stream_base),
            noise_rng: stream(seed, stream_base + 1),
            other_rng: stream(seed, stream_base + 2),
            code_rng: stream(seed, stream_base + 3),
        }
    }

    pub fn estimator(&self) -> &DensityEstimator {
        &self.est
    }

    pub fn into_estimator(self) -> DensityEstimator {
        self.est
    }

    /// One Adam update; returns the objective value before the update.
    pub fn step(&mut self, cfg: &AdeConfig) -> Result<f64> {
        let latent = self.est.config().latent_dim;
        let b = sample_batch(self.own, &mut self.batch_rng, cfg.batch_size)?;
        let noise = BatchNoise::draw(&mut self.noise_rng, b.len(), latent, cfg.surrogate);
        let other = if self.weight > 0.0 {
            let ob = sample_batch(self.other, &mut self.other_rng, cfg.batch_size)?;
            let on = BatchNoise::draw(&mut self.other_rng, ob.len(), latent, cfg.surrogate);
            Some((ob, on))
        } else {
            None
        };
        let est = &self.est;
        let mut used = Vec::new();
        let mut recent = Mat::zeros(0, latent);
        let (value, g) = grad(est, |tape, vars| {
            let v = est.bind(vars);
            let out = contrastive_objective(
                tape,
                est,
                &v,
                (&b, &noise),
                other.as_ref().map(|(x, y)| (x, y)),
                self.weight,
                cfg,
                None,
            )?;
            recent = tape.value(out.z_e).clone();
            used = out.indices;
            Ok(out.loss)
        })?;
        self.opt.adam_step(&mut self.est, &g)?;
        self.est.note_code_usage(&used, &recent, &mut self.code_rng);
        Ok(value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdeMetrics {
    pub iteration: u64,
    pub expert_elbo: f64,
    pub subopt_elbo: f64,
    pub j_iota: f64,
    pub codebook_active_count: usize,
}

pub fn metrics_table(rows: &[AdeMetrics]) -> CsvTable {
    let mut t = CsvTable::new(&["iteration", "expert_elbo", "subopt_elbo", "j_iota", "codebook_active_count"]);
    for m in rows {
        t.push(vec![
            m.iteration.to_string(),
            fmt_f64(m.expert_elbo),
            fmt_f64(m.subopt_elbo),
            fmt_f64(m.j_iota),
            m.codebook_active_count.to_string(),
        ]);
    }
    t
}

pub struct DensityTraining {
    pub expert: FrozenEstimator,
    pub suboptimal: FrozenEstimator,
    pub metrics: Vec<AdeMetrics>,
    /// Expert objective before each update.
    pub expert_losses: Vec<f64>,
    /// Suboptimal objective before each update.
    pub subopt_losses: Vec<f64>,
}

// stream ids for one training run
const EXPERT_INIT: u64 = 0;
const SUBOPT_INIT: u64 = 1;
const EXPERT_STREAMS: u64 = 10;
const SUBOPT_STREAMS: u64 = 20;
const METRIC_STREAM: u64 = 30;

/// Fresh expert and suboptimal estimators for `seed`.
pub fn init_estimators(cfg: &EstimatorConfig, seed: u64) -> Result<(DensityEstimator, DensityEstimator)> {
    let e = DensityEstimator::new(cfg.clone(), EstimatorRole::Expert, &mut stream(seed, EXPERT_INIT))?;
    let s = DensityEstimator::new(cfg.clone(), EstimatorRole::Suboptimal, &mut stream(seed, SUBOPT_INIT))?;
    Ok((e, s))
}

fn snapshot(
    it: u64,
    expert: &DensityEstimator,
    subopt: &DensityEstimator,
    expert_ds: &Dataset,
    subopt_ds: &Dataset,
    cfg: &AdeConfig,
    seed: u64,
) -> Result<AdeMetrics> {
    let mut rng = stream(seed, METRIC_STREAM);
    let eb = sample_batch(expert_ds, &mut rng, cfg.batch_size)?;
    let sb = sample_batch(subopt_ds, &mut rng, cfg.batch_size)?;
    let d = |est: &DensityEstimator, b: &Batch| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = est.on_tape(&mut tape, false);
        let o = tape.constant(b.obs.clone());
        let a = tape.constant(b.act.clone());
        let t = est.elbo_terms(&mut tape, &v, o, a, None, None)?;
        let ne = DensityEstimator::neg_elbo_rows(&mut tape, &t);
        Ok(tape.value(ne).data().iter().map(|x| -x).collect())
    };
    Ok(AdeMetrics {
        iteration: it,
        expert_elbo: expert.elbo_loss(&eb, None)?,
        subopt_elbo: subopt.elbo_loss(&sb, None)?,
        j_iota: adversarial_term(&d(expert, &eb)?, &d(expert, &sb)?)?,
        codebook_active_count: expert.active_codes(),
    })
}

/// Paired training: each iteration updates the expert estimator, then the suboptimal one,
/// each on freshly drawn batches. Both are returned frozen.
pub fn train_density(
    expert_ds: &Dataset,
    subopt_ds: &Dataset,
    est_cfg: &EstimatorConfig,
    cfg: &AdeConfig,
    seed: u64,
) -> Result<DensityTraining> {
    let (e, s) = init_estimators(est_cfg, seed)?;
    train_density_from(e, s, expert_ds, subopt_ds, cfg, seed)
}

/// [`train_density`] starting from given estimators.
pub fn train_density_from(
    expert: DensityEstimator,
    subopt: DensityEstimator,
    expert_ds: &Dataset,
    subopt_ds: &Dataset,
    cfg: &AdeConfig,
    seed: u64,
) -> Result<DensityTraining> {
    cfg.validate()?;
    if expert_ds.is_empty() || subopt_ds.is_empty() {
        return Err(Error::argument("both datasets must be non-empty"));
    }
    if expert.role() != EstimatorRole::Expert || subopt.role() != EstimatorRole::Suboptimal {
        return Err(Error::argument("estimator roles are swapped"));
    }
    let mut et = EstimatorTrainer::new(expert, expert_ds, subopt_ds, cfg.lambda1, cfg, seed, EXPERT_STREAMS);
    let mut st = EstimatorTrainer::new(subopt, subopt_ds, expert_ds, cfg.lambda2, cfg, seed, SUBOPT_STREAMS);
    let mut metrics = Vec::new();
    let mut expert_losses = Vec::with_capacity(cfg.iterations as usize);
    let mut subopt_losses = Vec::with_capacity(cfg.iterations as usize);
    for it in 1..=cfg.iterations {
        expert_losses.push(et.step(cfg).map_err(|e| e.at_stage("expert density", it))?);
        subopt_losses.push(st.step(cfg).map_err(|e| e.at_stage("suboptimal density", it))?);
        if cfg.metrics_every > 0 && (it % cfg.metrics_every == 0 || it == cfg.iterations) {
            metrics.push(snapshot(it, et.estimator(), st.estimator(), expert_ds, subopt_ds, cfg, seed)?);
        }
    }
    Ok(DensityTraining {
        expert: et.into_estimator().freeze(),
        suboptimal: st.into_estimator().freeze(),
        metrics,
        expert_losses,
        subopt_losses,
    })
}

/// Plain ELBO training of one estimator on one dataset, using the same streams as the
/// expert side of [`train_density`].
pub fn train_elbo(est: DensityEstimator, ds: &Dataset, cfg: &AdeConfig, seed: u64) -> Result<(DensityEstimator, Vec<f64>)> {
    cfg.validate()?;
    let mut t = EstimatorTrainer::new(est, ds, ds, 0.0, cfg, seed, EXPERT_STREAMS);
    let mut losses = Vec::with_capacity(cfg.iterations as usize);
    for it in 1..=cfg.iterations {
        losses.push(t.step(cfg).map_err(|e| e.at_stage("density", it))?);
    }
    Ok((t.into_estimator(), losses))
}

#[cfg(test)]
mod tests;
