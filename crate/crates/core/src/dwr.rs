//! Density-weighted regression: per-sample weights from two frozen density estimators
//! and the policy objectives built on them.
//!
//! The weight of a pair is `log p̂(a|s) − log p*(a|s)` (suboptimal minus expert log-density),
//! so expert-like pairs get negative weights and suboptimal-like pairs positive ones. The
//! sign is used as is; [`DwrConfig::weight_clamp`] optionally bounds its magnitude.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::csv::{fmt_f64, CsvTable};
use crate::data::{sample_batch, Batch, Dataset, NormStats};
use crate::envs::{evaluate, Actor, Env, EvalStats, ScoreRefs, Task};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_mlp_block, write_mlp_block, ByteReader, ByteWriter, WEIGHTS_MAGIC, WEIGHTS_VERSION};
use crate::nn::gaussian::standard_normal;
use crate::nn::{grad, Activation, Mat, MlpParams, MlpVars, OptimState, Params, Tape, Var};
use crate::rng::stream;
use crate::vqvae::{FrozenEstimator, QuantFreeze};

/// Deterministic MLP policy squashed by `tanh` into `[−bound, bound]` per action component.
///
/// Observations are normalized with the stored statistics before the network sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    net: MlpParams,
    bound: f64,
    norm: NormStats,
}

impl Policy {
    /// `layers` linear layers, all but the last `hidden` wide with ReLU.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        layers: usize,
        bound: f64,
        norm: NormStats,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 || hidden == 0 || obs_dim == 0 || act_dim == 0 {
            return Err(Error::config("policy needs positive dims and at least one layer"));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend(std::iter::repeat_n(hidden, layers - 1));
        sizes.push(act_dim);
        Self::from_parts(MlpParams::init(&sizes, Activation::Relu, Activation::Tanh, rng), bound, norm)
    }

    pub fn from_parts(net: MlpParams, bound: f64, norm: NormStats) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::config(format!("action bound must be positive, got {bound}")));
        }
        if norm.mean.len() != net.in_dim() || norm.std.len() != net.in_dim() {
            return Err(Error::config("normalization stats do not match the policy input"));
        }
        if net.layers().last().map(|l| l.activation()) != Some(Activation::Tanh) {
            return Err(Error::config("policy output layer must be tanh"));
        }
        Ok(Policy { net, bound, norm })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn obs_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.net.out_dim()
    }

    /// Action for a raw (unnormalized) observation.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.net.forward(&self.norm.apply(obs))?;
        a.iter_mut().for_each(|x| *x *= self.bound);
        Ok(a)
    }

    /// Actions for rows of already-normalized observations.
    pub fn act_normalized(&self, obs: &Mat) -> Result<Mat> {
        Ok(self.net.forward_batch(obs)?.map(|x| x * self.bound))
    }

    pub fn on_tape(&self, tape: &mut Tape, tracked: bool) -> MlpVars {
        self.net.on_tape(tape, tracked)
    }

    pub fn bind(&self, vars: &[Var]) -> MlpVars {
        self.net.bind(vars)
    }

    /// Squashed actions for normalized observations on `tape`.
    pub fn apply(&self, tape: &mut Tape, v: &MlpVars, obs: Var) -> Var {
        let y = v.apply(tape, obs);
        tape.scale(y, self.bound)
    }
}

impl Params for Policy {
    fn tensors(&self) -> Vec<&Mat> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.net.tensors_mut()
    }
}

impl Actor for Policy {
    fn act(&mut self, _env: &Env, obs: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Policy::act(self, obs)
    }
}

/// The policy network block followed by `bound`, `obs_dim` and the normalization vectors.
///
/// The prefix is a plain weights file, so generic MLP loaders can read the network alone.
pub fn policy_to_bytes(p: &Policy) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(WEIGHTS_MAGIC);
    w.u32(WEIGHTS_VERSION);
    write_mlp_block(&mut w, &p.net)?;
    w.f64(p.bound);
    w.len_u32(p.norm.mean.len())?;
    w.f64s(&p.norm.mean);
    w.f64s(&p.norm.std);
    Ok(w.into_inner())
}

pub fn policy_from_bytes(bytes: &[u8]) -> Result<Policy> {
    let mut r = ByteReader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    r.version(WEIGHTS_VERSION)?;
    let net = read_mlp_block(&mut r)?;
    let at = r.offset();
    let bound = r.f64("action bound")?;
    let dim = r.u32("obs dim")? as usize;
    let mean = r.f64s(dim, "norm mean")?;
    let std = r.f64s(dim, "norm std")?;
    if !r.is_at_end() {
        return Err(Error::format(r.offset(), "trailing bytes after policy"));
    }
    Policy::from_parts(net, bound, NormStats { mean, std }).map_err(|e| Error::format(at, e.to_string()))
}

pub fn save_policy(p: &Policy, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, policy_to_bytes(p)?)?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    policy_from_bytes(&std::fs::read(path)?)
}

/// Per-sample density weights of one batch, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityWeights(Vec<f64>);

impl DensityWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|w| !w.is_finite()) {
            return Err(Error::non_finite(format!("density weight {i}"), None));
        }
        Ok(DensityWeights(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.0.iter().sum::<f64>() / self.0.len() as f64
        }
    }

    /// Clamps every weight into `[−limit, limit]`.
    pub fn clamped(mut self, limit: f64) -> Self {
        self.0.iter_mut().for_each(|w| *w = w.clamp(-limit, limit));
        self
    }
}

/// `subopt − expert` element-wise.
pub fn weight_from_log_densities(subopt: &[f64], expert: &[f64]) -> Result<DensityWeights> {
    if subopt.len() != expert.len() {
        return Err(Error::argument(format!(
            "log-density lengths differ: {} vs {}",
            subopt.len(),
            expert.len()
        )));
    }
    DensityWeights::new(subopt.iter().zip(expert).map(|(s, e)| s - e).collect())
}

/// Maps `(suboptimal, expert)` log-densities to weights.
pub type WeightFn = fn(&[f64], &[f64]) -> Result<DensityWeights>;

/// Both frozen estimators, expert first.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorPair<'a> {
    pub expert: &'a FrozenEstimator,
    pub suboptimal: &'a FrozenEstimator,
}

/// Noise for both estimators: shared when their latent sizes agree.
fn paired_noise<R: Rng + ?Sized>(pair: EstimatorPair<'_>, rows: usize, rng: &mut R) -> (Mat, Option<Mat>) {
    let le = pair.expert.config().latent_dim;
    let ls = pair.suboptimal.config().latent_dim;
    let e = standard_normal(rng, rows, le);
    let s = (ls != le).then(|| standard_normal(rng, rows, ls));
    (e, s)
}

/// Importance-sampled weights with `l` samples per pair.
///
/// Both estimators see the same standard-normal draws, so two copies of one estimator give
/// exactly zero weights.
pub fn density_weight<R: Rng + ?Sized>(pair: EstimatorPair<'_>, batch: &Batch, l: usize, rng: &mut R) -> Result<DensityWeights> {
    density_weight_with(pair, batch, l, rng, weight_from_log_densities)
}

/// [`density_weight`] with a replaceable combination step.
pub fn density_weight_with<R: Rng + ?Sized>(
    pair: EstimatorPair<'_>,
    batch: &Batch,
    l: usize,
    rng: &mut R,
    weight: WeightFn,
) -> Result<DensityWeights> {
    if l == 0 {
        return Err(Error::argument("L must be at least 1"));
    }
    let (ne, ns) = paired_noise(pair, batch.len() * l, rng);
    let lp_e = pair.expert.log_density_with_noise(&batch.obs, &batch.act, &ne)?;
    let lp_s = pair
        .suboptimal
        .log_density_with_noise(&batch.obs, &batch.act, ns.as_ref().unwrap_or(&ne))?;
    weight(&lp_s, &lp_e)
}

/// Which policy objective to minimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `mean(λ) · mean‖π(s) − a‖`.
    UpperBound,
    /// `mean(λ · ‖π(s) − a‖)`.
    Plain,
    /// `−mean log p*(π(s)|s)`.
    MaxAde,
    /// `mean[log p̂(π(s)|s) − log p*(π(s)|s)]`.
    AdeDivergence,
    /// `mean‖π(s) − a‖` on demonstrations.
    Bc,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::UpperBound,
        Objective::Plain,
        Objective::MaxAde,
        Objective::AdeDivergence,
        Objective::Bc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Objective::UpperBound => "upper_bound",
            Objective::Plain => "plain",
            Objective::MaxAde => "max_ade",
            Objective::AdeDivergence => "ade_divergence",
            Objective::Bc => "bc",
        }
    }

    pub fn needs_estimators(self) -> bool {
        self != Objective::Bc
    }

    fn uses_weights(self) -> bool {
        matches!(self, Objective::UpperBound | Objective::Plain)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DwrConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Importance samples per pair for weights and policy-action densities.
    pub density_samples: usize,
    pub weight_clamp: Option<f64>,
    pub hidden_dim: usize,
    pub layers: usize,
}

impl Default for DwrConfig {
    fn default() -> Self {
        DwrConfig {
            objective: Objective::UpperBound,
            batch_size: 64,
            iterations: 20_000,
            lr: 1e-4,
            eval_every: 1000,
            eval_episodes: 10,
            density_samples: 1,
            weight_clamp: None,
            hidden_dim: 256,
            layers: 4,
        }
    }
}

impl DwrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("policy batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("policy lr must be positive"));
        }
        if self.density_samples == 0 {
            return Err(Error::config("density_samples must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be at least 1"));
        }
        if self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::config("policy needs positive width and depth"));
        }
        if let Some(c) = self.weight_clamp {
            if !(c > 0.0) {
                return Err(Error::config("weight_clamp must be positive"));
            }
        }
        Ok(())
    }
}

/// Quantizer choices of the policy-action density passes, for replay in finite differences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionDensityFreeze {
    pub expert: Option<QuantFreeze>,
    pub suboptimal: Option<QuantFreeze>,
}

/// Noise driving policy-action densities: `(b·L)×latent` per estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionNoise {
    expert: Mat,
    suboptimal: Option<Mat>,
}

impl ActionNoise {
    pub fn draw<R: Rng + ?Sized>(pair: EstimatorPair<'_>, rows: usize, l: usize, rng: &mut R) -> Self {
        let (expert, suboptimal) = paired_noise(pair, rows * l, rng);
        ActionNoise { expert, suboptimal }
    }
}

/// Extra inputs an objective may need besides the policy and batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct ObjectiveInputs<'a> {
    pub weights: Option<&'a DensityWeights>,
    pub estimators: Option<EstimatorPair<'a>>,
    pub noise: Option<&'a ActionNoise>,
    pub replay: Option<&'a ActionDensityFreeze>,
}

fn residual_norms(tape: &mut Tape, policy: &Policy, v: &MlpVars, batch: &Batch) -> Result<Var> {
    if batch.obs.cols() != policy.obs_dim() || batch.act.cols() != policy.act_dim() {
        return Err(Error::argument("batch dims do not match the policy"));
    }
    let obs = tape.constant(batch.obs.clone());
    let act = tape.constant(batch.act.clone());
    let pred = policy.apply(tape, v, obs);
    let diff = tape.sub(pred, act);
    Ok(tape.row_norm(diff))
}

fn action_log_density(
    tape: &mut Tape,
    est: &FrozenEstimator,
    obs: Var,
    act: Var,
    noise: &Mat,
    replay: Option<&QuantFreeze>,
) -> Result<(Var, Option<QuantFreeze>)> {
    let ev = est.on_tape(tape, false);
    est.log_density_on_tape(tape, &ev, obs, act, noise, replay)
}

/// Builds `objective` on `tape` and returns the scalar loss with the quantizer choices made.
pub fn objective_on_tape(
    tape: &mut Tape,
    objective: Objective,
    policy: &Policy,
    v: &MlpVars,
    batch: &Batch,
    inputs: ObjectiveInputs<'_>,
) -> Result<(Var, ActionDensityFreeze)> {
    let mut freeze = ActionDensityFreeze::default();
    let loss = match objective {
        Objective::Bc => {
            let r = residual_norms(tape, policy, v, batch)?;
            tape.mean(r)
        }
        Objective::UpperBound | Objective::Plain => {
            let w = inputs
                .weights
                .ok_or_else(|| Error::argument(format!("{objective} needs density weights")))?;
            if w.len() != batch.len() {
                return Err(Error::argument(format!(
                    "{} weights for a batch of {}",
                    w.len(),
                    batch.len()
                )));
            }
            let r = residual_norms(tape, policy, v, batch)?;
            if objective == Objective::UpperBound {
                let m = tape.mean(r);
                tape.scale(m, w.mean())
            } else {
                let wc = tape.constant(Mat::col_vector(w.values()));
                let wr = tape.mul(wc, r);
                tape.mean(wr)
            }
        }
        Objective::MaxAde | Objective::AdeDivergence => {
            let pair = inputs
                .estimators
                .ok_or_else(|| Error::argument(format!("{objective} needs density estimators")))?;
            let noise = inputs
                .noise
                .ok_or_else(|| Error::argument(format!("{objective} needs action noise")))?;
            if batch.obs.cols() != policy.obs_dim() {
                return Err(Error::argument("batch dims do not match the policy"));
            }
            let obs = tape.constant(batch.obs.clone());
            let act = policy.apply(tape, v, obs);
            let replay = inputs.replay;
            let (lp_e, fe) = action_log_density(
                tape,
                pair.expert,
                obs,
                act,
                &noise.expert,
                replay.and_then(|r| r.expert.as_ref()),
            )?;
            freeze.expert = fe;
            if objective == Objective::MaxAde {
                let m = tape.mean(lp_e);
                tape.scale(m, -1.0)
            } else {
                let ns = noise.suboptimal.as_ref().unwrap_or(&noise.expert);
                let (lp_s, fs) = action_log_density(
                    tape,
                    pair.suboptimal,
                    obs,
                    act,
                    ns,
                    replay.and_then(|r| r.suboptimal.as_ref()),
                )?;
                freeze.suboptimal = fs;
                let d = tape.sub(lp_s, lp_e);
                tape.mean(d)
            }
        }
    };
    Ok((loss, freeze))
}

fn eval_objective(objective: Objective, policy: &Policy, batch: &Batch, inputs: ObjectiveInputs<'_>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = policy.on_tape(&mut tape, false);
    let (l, _) = objective_on_tape(&mut tape, objective, policy, &v, batch, inputs)?;
    tape.check_finite(l, objective.tag())?;
    Ok(tape.scalar(l))
}

pub fn dwr_loss(weights: &DensityWeights, policy: &Policy, batch: &Batch) -> Result<f64> {
    let inputs = ObjectiveInputs {
        weights: Some(weights),
        ..Default::default()
    };
    eval_objective(Objective::Plain, policy, batch, inputs)
}

pub fn dwr_upper_bound_loss(weights: &DensityWeights, policy: &Policy, batch: &Batch) -> Result<f64> {
    let inputs = ObjectiveInputs {
        weights: Some(weights),
        ..Default::default()
    };
    eval_objective(Objective::UpperBound, policy, batch, inputs)
}

pub fn bc_loss(policy: &Policy, batch: &Batch) -> Result<f64> {
    eval_objective(Objective::Bc, policy, batch, ObjectiveInputs::default())
}

/// `−mean log p*(π(s)|s)`; only the expert estimator is read.
pub fn max_ade_loss<R: Rng + ?Sized>(expert: &FrozenEstimator, policy: &Policy, batch: &Batch, l: usize, rng: &mut R) -> Result<f64> {
    let pair = EstimatorPair {
        expert,
        suboptimal: expert,
    };
    action_density_loss(Objective::MaxAde, pair, policy, batch, l, rng)
}

pub fn ade_divergence_loss<R: Rng + ?Sized>(pair: EstimatorPair<'_>, policy: &Policy, batch: &Batch, l: usize, rng: &mut R) -> Result<f64> {
    action_density_loss(Objective::AdeDivergence, pair, policy, batch, l, rng)
}

fn action_density_loss<R: Rng + ?Sized>(
    objective: Objective,
    pair: EstimatorPair<'_>,
    policy: &Policy,
    batch: &Batch,
    l: usize,
    rng: &mut R,
) -> Result<f64> {
    if l == 0 {
        return Err(Error::argument("L must be at least 1"));
    }
    let noise = ActionNoise::draw(pair, batch.len(), l, rng);
    let inputs = ObjectiveInputs {
        estimators: Some(pair),
        noise: Some(&noise),
        ..Default::default()
    };
    eval_objective(objective, policy, batch, inputs)
}

/// Where and how to score the policy during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSetup {
    pub task: Task,
    pub refs: ScoreRefs,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMetrics {
    pub iteration: u64,
    pub loss: f64,
    pub mean_weight: f64,
    pub eval: Option<EvalStats>,
}

pub fn policy_metrics_table(rows: &[PolicyMetrics]) -> CsvTable {
    let mut t = CsvTable::new(&["iteration", "loss", "mean_weight", "eval_score_mean", "eval_score_std"]);
    for m in rows {
        let (em, es) = m.eval.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.std));
        t.push(vec![
            m.iteration.to_string(),
            fmt_f64(m.loss),
            fmt_f64(m.mean_weight),
            fmt_f64(em),
            fmt_f64(es),
        ]);
    }
    t
}

const POLICY_INIT: u64 = 40;
const POLICY_BATCH: u64 = 41;
const POLICY_NOISE: u64 = 42;

/// One policy, its optimizer and its sampling streams.
pub struct PolicyTrainer<'a> {
    policy: Policy,
    opt: OptimState,
    data: &'a Dataset,
    estimators: Option<EstimatorPair<'a>>,
    batch_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

impl<'a> PolicyTrainer<'a> {
    pub fn new(policy: Policy, data: &'a Dataset, estimators: Option<EstimatorPair<'a>>, cfg: &DwrConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.objective.needs_estimators() && estimators.is_none() {
            return Err(Error::argument(format!("{} needs density estimators", cfg.objective)));
        }
        if data.is_empty() {
            return Err(Error::argument("policy training data is empty"));
        }
        if data.obs_dim() != policy.obs_dim() || data.act_dim() != policy.act_dim() {
            return Err(Error::argument("dataset dims do not match the policy"));
        }
        Ok(PolicyTrainer {
            opt: OptimState::new(&policy, cfg.lr),
            policy,
            data,
            estimators,
            batch_rng: stream(seed, POLICY_BATCH),
            noise_rng: stream(seed, POLICY_NOISE),
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    /// One Adam step on a fresh batch; returns the loss before the update and the mean weight
    /// (zero when the objective uses none).
    pub fn step(&mut self, cfg: &DwrConfig) -> Result<(f64, f64)> {
        let batch = sample_batch(self.data, &mut self.batch_rng, cfg.batch_size)?;
        let l = cfg.density_samples;
        let weights = match (cfg.objective.uses_weights(), self.estimators) {
            (true, Some(pair)) => {
                let w = density_weight(pair, &batch, l, &mut self.noise_rng)?;
                Some(match cfg.weight_clamp {
                    Some(c) => w.clamped(c),
                    None => w,
                })
            }
            _ => None,
        };
        let noise = match (cfg.objective, self.estimators) {
            (Objective::MaxAde | Objective::AdeDivergence, Some(pair)) => {
                Some(ActionNoise::draw(pair, batch.len(), l, &mut self.noise_rng))
            }
            _ => None,
        };
        let inputs = ObjectiveInputs {
            weights: weights.as_ref(),
            estimators: self.estimators,
            noise: noise.as_ref(),
            replay: None,
        };
        let policy = &self.policy;
        let (loss, g) = grad(policy, |t, vars| {
            let v = policy.bind(vars);
            Ok(objective_on_tape(t, cfg.objective, policy, &v, &batch, inputs)?.0)
        })?;
        self.opt.adam_step(&mut self.policy, &g)?;
        Ok((loss, weights.map_or(0.0, |w| w.mean())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTraining {
    pub policy: Policy,
    pub metrics: Vec<PolicyMetrics>,
    /// Evaluation of the returned policy.
    pub final_eval: Option<EvalStats>,
    /// Highest evaluation mean seen during training, including the final one.
    pub best_eval: Option<f64>,
}

/// Fresh policy for `data`, using its normalization statistics (identity when absent).
pub fn init_policy(data: &Dataset, bound: f64, cfg: &DwrConfig, seed: u64) -> Result<Policy> {
    let norm = data
        .norm()
        .cloned()
        .unwrap_or_else(|| NormStats::identity(data.obs_dim()));
    Policy::new(
        data.obs_dim(),
        data.act_dim(),
        cfg.hidden_dim,
        cfg.layers,
        bound,
        norm,
        &mut stream(seed, POLICY_INIT),
    )
}

/// Trains a policy on `data` (mixed corpus for weighted and density objectives, demonstrations
/// for BC).
///
/// Every `eval_every` iterations a metrics row is recorded, with an evaluation when `eval` is
/// given.
pub fn train_policy(
    estimators: Option<EstimatorPair<'_>>,
    data: &Dataset,
    bound: f64,
    cfg: &DwrConfig,
    seed: u64,
    eval: Option<&EvalSetup>,
) -> Result<PolicyTraining> {
    cfg.validate()?;
    let policy = init_policy(data, bound, cfg, seed)?;
    let mut trainer = PolicyTrainer::new(policy, data, estimators, cfg, seed)?;
    let run_eval = |p: &Policy| -> Result<Option<EvalStats>> {
        match eval {
            Some(e) => {
                let mut actor = p.clone();
                evaluate(&mut actor, e.task, cfg.eval_episodes, e.seed, &e.refs).map(Some)
            }
            None => Ok(None),
        }
    };
    let mut metrics = Vec::new();
    let mut best: Option<f64> = None;
    for it in 1..=cfg.iterations {
        let (loss, mean_weight) = trainer.step(cfg).map_err(|e| e.at_stage("policy", it))?;
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 {
            let ev = run_eval(trainer.policy()).map_err(|e| e.at_stage("policy evaluation", it))?;
            if let Some(e) = ev {
                best = Some(best.map_or(e.mean, |b: f64| b.max(e.mean)));
            }
            metrics.push(PolicyMetrics {
                iteration: it,
                loss,
                mean_weight,
                eval: ev,
            });
        }
    }
    let policy = trainer.into_policy();
    let final_eval = run_eval(&policy).map_err(|e| e.at_stage("policy evaluation", cfg.iterations))?;
    if let Some(e) = final_eval {
        best = Some(best.map_or(e.mean, |b: f64| b.max(e.mean)));
    }
    Ok(PolicyTraining {
        policy,
        metrics,
        final_eval,
        best_eval: best,
    })
}

/// A finite state–action problem: state weights and three conditional action tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularCase {
    pub state_weight: Vec<f64>,
    pub policy: Vec<Vec<f64>>,
    pub expert: Vec<Vec<f64>>,
    pub suboptimal: Vec<Vec<f64>>,
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // floor keeps every entry strictly positive so all logs are finite
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

impl TabularCase {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, actions: usize) -> Self {
        let table = |rng: &mut R| (0..states).map(|_| random_simplex(rng, actions)).collect();
        TabularCase {
            state_weight: random_simplex(rng, states),
            policy: table(rng),
            expert: table(rng),
            suboptimal: table(rng),
        }
    }

    /// `Σ d(s) Σ π(a|s) [log(π/p*) − log(π/p̂)]`, the gap between the two KL objectives.
    pub fn kl_gap(&self) -> f64 {
        let mut total = 0.0;
        for (s, d) in self.state_weight.iter().enumerate() {
            for (a, pi) in self.policy[s].iter().enumerate() {
                let to_expert = (pi / self.expert[s][a]).ln();
                let to_subopt = (pi / self.suboptimal[s][a]).ln();
                total += d * pi * (to_expert - to_subopt);
            }
        }
        total
    }

    /// `Σ d(s) Σ π(a|s) λ(s, a)` with `λ` from `weight`.
    pub fn weighted_sum(&self, weight: WeightFn) -> Result<f64> {
        let mut total = 0.0;
        for (s, d) in self.state_weight.iter().enumerate() {
            let ls: Vec<f64> = self.suboptimal[s].iter().map(|p| p.ln()).collect();
            let le: Vec<f64> = self.expert[s].iter().map(|p| p.ln()).collect();
            let w = weight(&ls, &le)?;
            total += d * self.policy[s].iter().zip(w.values()).map(|(pi, l)| pi * l).sum::<f64>();
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests;
