//! Conditional VQ-VAE behavior-density estimator.
//!
//! The encoder maps `(s, a)` to a diagonal Gaussian over the latent, the sample is snapped
//! to the nearest codebook row (straight-through), and the decoder maps `(z_q, s)` to the
//! mean of a Gaussian over actions whose log-variance is one learned row shared by all
//! states.

mod checkpoint;
mod quantize;

use rand::Rng;

pub use checkpoint::{
    estimator_from_bytes, estimator_to_bytes, load_estimator, save_estimator,
};
pub use quantize::{nearest_code, nearest_codes, quantize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::gaussian::{
    kl_standard_rows, log_prob_rows, log_prob_rows_shared, reparam_rows, standard_log_prob_rows,
    standard_normal, GaussianHead, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::nn::{Activation, Mat, MlpParams, MlpVars, Params, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorRole {
    Expert,
    Suboptimal,
}

impl EstimatorRole {
    pub fn tag(self) -> u8 {
        match self {
            EstimatorRole::Expert => 1,
            EstimatorRole::Suboptimal => 2,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(EstimatorRole::Expert),
            2 => Some(EstimatorRole::Suboptimal),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub hidden_dim: usize,
    /// Hidden layers in each of encoder and decoder; 0 makes both affine.
    pub hidden_layers: usize,
    /// `false` skips the codebook and decodes the continuous latent.
    pub quantize: bool,
    pub commitment: f64,
    /// Codes unused this many steps are re-seeded from recent encoder outputs; 0 disables.
    pub dead_code_steps: u64,
}

impl EstimatorConfig {
    /// Small desk-scale model; hidden width is twice the action dimension.
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        EstimatorConfig {
            obs_dim,
            act_dim,
            latent_dim: 8,
            codebook_size: 64,
            hidden_dim: 2 * act_dim,
            hidden_layers: 2,
            quantize: true,
            commitment: 0.25,
            dead_code_steps: 2000,
        }
    }

    /// Latent 750 and 4096 codes.
    pub fn paper_scale(obs_dim: usize, act_dim: usize) -> Self {
        EstimatorConfig {
            latent_dim: 750,
            codebook_size: 4096,
            ..Self::new(obs_dim, act_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 || self.latent_dim == 0 {
            return Err(Error::config("estimator dims must be positive"));
        }
        if self.quantize && self.codebook_size == 0 {
            return Err(Error::config("codebook must be non-empty"));
        }
        if self.hidden_layers > 0 && self.hidden_dim == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if !(self.commitment >= 0.0) {
            return Err(Error::config("commitment must be non-negative"));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.hidden_dim).take(self.hidden_layers));
        w.push(output);
        w
    }
}

/// Indices and values captured from one quantization, so a later evaluation can replay it
/// with the discrete choice held fixed.
///
/// Replaying makes the loss a smooth function of the parameters whose true gradient is the
/// straight-through gradient at the capture point, which is what finite differences check.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantFreeze {
    pub indices: Vec<usize>,
    delta: Mat,
    z_q: Mat,
    z_e: Mat,
}

/// Per-sample ELBO pieces, each `[n×1]`.
#[derive(Clone, Debug)]
pub struct ElboTerms {
    pub nll: Var,
    pub kl: Var,
    pub codebook: Var,
    pub commit: Var,
    pub z_e: Var,
    pub freeze: Option<QuantFreeze>,
}

/// Estimator parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct EstimatorVars {
    enc: MlpVars,
    dec: MlpVars,
    dec_log_var: Var,
    codebook: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimator {
    cfg: EstimatorConfig,
    role: EstimatorRole,
    encoder: MlpParams,
    decoder: MlpParams,
    dec_log_var: Mat,
    codebook: Mat,
    // step of last use per code; None = never used
    last_used: Vec<Option<u64>>,
    // step of last use or reseed, for dead-code detection
    last_touch: Vec<u64>,
    steps: u64,
}

/// Importance-sampled log-density with its sample count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityValue {
    pub log_density: f64,
    pub samples: usize,
}

impl DensityEstimator {
    pub fn new<R: Rng + ?Sized>(cfg: EstimatorConfig, role: EstimatorRole, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = MlpParams::init(
            &cfg.widths(cfg.obs_dim + cfg.act_dim, 2 * cfg.latent_dim),
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        let decoder = MlpParams::init(
            &cfg.widths(cfg.latent_dim + cfg.obs_dim, cfg.act_dim),
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        let k = if cfg.quantize { cfg.codebook_size } else { 0 };
        let bound = 1.0 / k.max(1) as f64;
        let cb: Vec<f64> = (0..k * cfg.latent_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let codebook = Mat::from_vec(k, cfg.latent_dim, cb)?;
        Self::from_parts(cfg, role, encoder, decoder, Mat::zeros(1, 0), codebook)
    }

    /// Assembles an estimator from explicit parameters.
    ///
    /// An empty `dec_log_var` means zeros.
    pub fn from_parts(
        cfg: EstimatorConfig,
        role: EstimatorRole,
        encoder: MlpParams,
        decoder: MlpParams,
        dec_log_var: Mat,
        codebook: Mat,
    ) -> Result<Self> {
        cfg.validate()?;
        if encoder.in_dim() != cfg.obs_dim + cfg.act_dim || encoder.out_dim() != 2 * cfg.latent_dim {
            return Err(Error::config("encoder shape does not match estimator config"));
        }
        if decoder.in_dim() != cfg.latent_dim + cfg.obs_dim || decoder.out_dim() != cfg.act_dim {
            return Err(Error::config("decoder shape does not match estimator config"));
        }
        let dec_log_var = if dec_log_var.is_empty() {
            Mat::zeros(1, cfg.act_dim)
        } else {
            dec_log_var
        };
        if dec_log_var.shape() != (1, cfg.act_dim) {
            return Err(Error::config("decoder log-variance must be 1×act_dim"));
        }
        let k = if cfg.quantize { cfg.codebook_size } else { 0 };
        if codebook.shape() != (k, cfg.latent_dim) && !(k == 0 && codebook.is_empty()) {
            return Err(Error::config(format!(
                "codebook must be {k}×{}, got {:?}",
                cfg.latent_dim,
                codebook.shape()
            )));
        }
        if !codebook.is_finite() || !dec_log_var.is_finite() {
            return Err(Error::non_finite("estimator parameters", None));
        }
        let codebook = if k == 0 { Mat::zeros(0, cfg.latent_dim) } else { codebook };
        Ok(DensityEstimator {
            last_used: vec![None; k],
            last_touch: vec![0; k],
            steps: 0,
            cfg,
            role,
            encoder,
            decoder,
            dec_log_var,
            codebook,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn role(&self) -> EstimatorRole {
        self.role
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub fn decoder_log_var(&self) -> &Mat {
        &self.dec_log_var
    }

    pub fn codebook(&self) -> &Mat {
        &self.codebook
    }

    pub fn set_codebook(&mut self, codebook: Mat) -> Result<()> {
        if codebook.shape() != self.codebook.shape() {
            return Err(Error::config("codebook shape cannot change"));
        }
        self.codebook = codebook;
        Ok(())
    }

    /// Encoder head and latent for one `(s, a)`; `noise = None` returns the head mean.
    pub fn encode(&self, s: &[f64], a: &[f64], noise: Option<&[f64]>) -> Result<(GaussianHead, Vec<f64>)> {
        self.check_dims(s.len(), a.len())?;
        let x: Vec<f64> = s.iter().chain(a).copied().collect();
        let out = self.encoder.forward(&x)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("encoder output", None));
        }
        let d = self.cfg.latent_dim;
        let head = GaussianHead::new(out[..d].to_vec(), out[d..].to_vec())?;
        let z = match noise {
            Some(e) => crate::nn::gaussian::reparam_sample(&head, e)?,
            None => head.mean().to_vec(),
        };
        Ok((head, z))
    }

    fn check_dims(&self, obs: usize, act: usize) -> Result<()> {
        if obs != self.cfg.obs_dim || act != self.cfg.act_dim {
            return Err(Error::config(format!(
                "estimator expects ({}, {}) got ({obs}, {act})",
                self.cfg.obs_dim, self.cfg.act_dim
            )));
        }
        Ok(())
    }

    /// Places every parameter on `tape`, tracked or as constants.
    pub fn on_tape(&self, tape: &mut Tape, tracked: bool) -> EstimatorVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| {
                if tracked {
                    tape.input(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        self.bind(&vars)
    }

    /// Pairs vars given in [`Params::tensors`] order with this estimator's layout.
    pub fn bind(&self, vars: &[Var]) -> EstimatorVars {
        let ne = 2 * self.encoder.layers().len();
        let nd = 2 * self.decoder.layers().len();
        assert_eq!(vars.len(), ne + nd + 2, "var count mismatch");
        EstimatorVars {
            enc: self.encoder.bind(&vars[..ne]),
            dec: self.decoder.bind(&vars[ne..ne + nd]),
            dec_log_var: vars[ne + nd],
            codebook: vars[ne + nd + 1],
        }
    }

    fn head_on_tape(&self, tape: &mut Tape, v: &EstimatorVars, obs: Var, act: Var) -> (Var, Var) {
        let x = tape.concat_cols(obs, act);
        let h = v.enc.apply(tape, x);
        let d = self.cfg.latent_dim;
        let mean = tape.slice_cols(h, 0, d);
        let raw = tape.slice_cols(h, d, d);
        let lv = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
        (mean, lv)
    }

    // z_st, codebook term, commitment term, capture
    fn quantize_on_tape(
        &self,
        tape: &mut Tape,
        v: &EstimatorVars,
        z_e: Var,
        replay: Option<&QuantFreeze>,
    ) -> (Var, Var, Var, Option<QuantFreeze>) {
        let n = tape.value(z_e).rows();
        if !self.cfg.quantize {
            let zero = tape.constant(Mat::zeros(n, 1));
            return (z_e, zero, zero, None);
        }
        match replay {
            None => {
                let idx = nearest_codes(tape.value(z_e), tape.value(v.codebook));
                let z_q = tape.gather_rows(v.codebook, idx.clone());
                let diff = tape.sub(z_q, z_e);
                let delta = tape.detach(diff);
                let z_st = tape.add(z_e, delta);
                let ze_d = tape.detach(z_e);
                let cb_diff = tape.sub(ze_d, z_q);
                let cb_sq = tape.square(cb_diff);
                let cb = tape.sum_cols(cb_sq);
                let zq_d = tape.detach(z_q);
                let cm_diff = tape.sub(z_e, zq_d);
                let cm_sq = tape.square(cm_diff);
                let commit = tape.sum_cols(cm_sq);
                let freeze = QuantFreeze {
                    indices: idx,
                    delta: tape.value(delta).clone(),
                    z_q: tape.value(z_q).clone(),
                    z_e: tape.value(z_e).clone(),
                };
                (z_st, cb, commit, Some(freeze))
            }
            Some(f) => {
                let z_q = tape.gather_rows(v.codebook, f.indices.clone());
                let delta = tape.constant(f.delta.clone());
                let z_st = tape.add(z_e, delta);
                let ze_d = tape.constant(f.z_e.clone());
                let cb_diff = tape.sub(ze_d, z_q);
                let cb_sq = tape.square(cb_diff);
                let cb = tape.sum_cols(cb_sq);
                let zq_d = tape.constant(f.z_q.clone());
                let cm_diff = tape.sub(z_e, zq_d);
                let cm_sq = tape.square(cm_diff);
                let commit = tape.sum_cols(cm_sq);
                (z_st, cb, commit, Some(f.clone()))
            }
        }
    }

    fn decode_log_prob(&self, tape: &mut Tape, v: &EstimatorVars, z: Var, obs: Var, act: Var) -> Var {
        let x = tape.concat_cols(z, obs);
        let mu = v.dec.apply(tape, x);
        let lv = tape.clamp(v.dec_log_var, LOG_VAR_MIN, LOG_VAR_MAX);
        log_prob_rows_shared(tape, act, mu, lv)
    }

    /// Builds the per-sample ELBO pieces for rows of `obs`/`act`.
    ///
    /// `noise = None` is evaluation mode (the latent is the head mean).
    pub fn elbo_terms(
        &self,
        tape: &mut Tape,
        v: &EstimatorVars,
        obs: Var,
        act: Var,
        noise: Option<&Mat>,
        replay: Option<&QuantFreeze>,
    ) -> Result<ElboTerms> {
        let (n, o) = tape.value(obs).shape();
        self.check_dims(o, tape.value(act).cols())?;
        if n == 0 {
            return Err(Error::argument("empty batch"));
        }
        let (mean, lv) = self.head_on_tape(tape, v, obs, act);
        let z_e = match noise {
            Some(e) => {
                if e.shape() != (n, self.cfg.latent_dim) {
                    return Err(Error::config("noise shape does not match batch × latent"));
                }
                reparam_rows(tape, mean, lv, e)
            }
            None => mean,
        };
        let (z_st, codebook, commit, freeze) = self.quantize_on_tape(tape, v, z_e, replay);
        let lp = self.decode_log_prob(tape, v, z_st, obs, act);
        let nll = tape.scale(lp, -1.0);
        let kl = kl_standard_rows(tape, mean, lv);
        Ok(ElboTerms {
            nll,
            kl,
            codebook,
            commit,
            z_e,
            freeze,
        })
    }

    /// Per-sample `−ELBO = NLL + KL`, `[n×1]`.
    pub fn neg_elbo_rows(tape: &mut Tape, t: &ElboTerms) -> Var {
        tape.add(t.nll, t.kl)
    }

    /// Batch objective: mean of `NLL + KL + codebook + commitment·commit`.
    pub fn elbo_objective(&self, tape: &mut Tape, t: &ElboTerms) -> Var {
        let ne = Self::neg_elbo_rows(tape, t);
        let c = tape.scale(t.commit, self.cfg.commitment);
        let vq = tape.add(t.codebook, c);
        let all = tape.add(ne, vq);
        tape.mean(all)
    }

    /// Value of the training objective on `batch` with the given latent noise.
    pub fn elbo_loss(&self, batch: &Batch, noise: Option<&Mat>) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.on_tape(&mut tape, false);
        let obs = tape.constant(batch.obs.clone());
        let act = tape.constant(batch.act.clone());
        let t = self.elbo_terms(&mut tape, &v, obs, act, noise, None)?;
        for (var, what) in [(t.nll, "reconstruction term"), (t.kl, "KL term"), (t.codebook, "codebook term"), (t.commit, "commitment term")] {
            if !tape.value(var).is_finite() {
                return Err(Error::non_finite(what, None));
            }
        }
        let l = self.elbo_objective(&mut tape, &t);
        Ok(tape.scalar(l))
    }

    /// Importance-sampled `log p(a|s)` for every row, `[n×1]`, with `L = noise.rows() / n`.
    ///
    /// Each row uses `L` encoder samples: the decoder likelihood is evaluated at the
    /// quantized sample, the prior and proposal at the continuous one.
    pub fn log_density_on_tape(
        &self,
        tape: &mut Tape,
        v: &EstimatorVars,
        obs: Var,
        act: Var,
        noise: &Mat,
        replay: Option<&QuantFreeze>,
    ) -> Result<(Var, Option<QuantFreeze>)> {
        let (n, o) = tape.value(obs).shape();
        self.check_dims(o, tape.value(act).cols())?;
        if n == 0 || noise.rows() % n != 0 || noise.rows() == 0 || noise.cols() != self.cfg.latent_dim {
            return Err(Error::config("noise must be (n·L)×latent with L ≥ 1"));
        }
        let l = noise.rows() / n;
        let (mean, lv) = self.head_on_tape(tape, v, obs, act);
        let (mean_r, lv_r, obs_r, act_r) = if l == 1 {
            (mean, lv, obs, act)
        } else {
            (
                tape.repeat_rows(mean, l),
                tape.repeat_rows(lv, l),
                tape.repeat_rows(obs, l),
                tape.repeat_rows(act, l),
            )
        };
        let z = reparam_rows(tape, mean_r, lv_r, noise);
        let (z_st, _, _, freeze) = self.quantize_on_tape(tape, v, z, replay);
        let lp = self.decode_log_prob(tape, v, z_st, obs_r, act_r);
        let prior = standard_log_prob_rows(tape, z);
        let q = log_prob_rows(tape, z, mean_r, lv_r);
        let a = tape.add(lp, prior);
        let w = tape.sub(a, q);
        let out = if l == 1 {
            w
        } else {
            let grid = tape.reshape(w, n, l);
            let lse = tape.log_sum_exp_rows(grid);
            tape.offset(lse, -(l as f64).ln())
        };
        Ok((out, freeze))
    }

    /// Importance-sampled log-density of each batch row, drawing `l` samples per row.
    pub fn log_density_batch<R: Rng + ?Sized>(&self, obs: &Mat, act: &Mat, l: usize, rng: &mut R) -> Result<Vec<f64>> {
        if l == 0 {
            return Err(Error::argument("L must be at least 1"));
        }
        let noise = standard_normal(rng, obs.rows() * l, self.cfg.latent_dim);
        self.log_density_with_noise(obs, act, &noise)
    }

    /// As [`Self::log_density_batch`] with explicit `(n·L)×latent` noise.
    pub fn log_density_with_noise(&self, obs: &Mat, act: &Mat, noise: &Mat) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.on_tape(&mut tape, false);
        let o = tape.constant(obs.clone());
        let a = tape.constant(act.clone());
        let (ld, _) = self.log_density_on_tape(&mut tape, &v, o, a, noise, None)?;
        Ok(tape.value(ld).data().to_vec())
    }

    /// Single-pair log-density.
    pub fn log_density<R: Rng + ?Sized>(&self, s: &[f64], a: &[f64], l: usize, rng: &mut R) -> Result<DensityValue> {
        self.check_dims(s.len(), a.len())?;
        let v = self.log_density_batch(&Mat::row_vector(s), &Mat::row_vector(a), l, rng)?;
        Ok(DensityValue {
            log_density: v[0],
            samples: l,
        })
    }

    /// Records which codes a training step used and re-seeds long-idle ones from `recent_z`.
    ///
    /// Returns the number of codes re-seeded.
    pub fn note_code_usage<R: Rng + ?Sized>(&mut self, used: &[usize], recent_z: &Mat, rng: &mut R) -> usize {
        if !self.cfg.quantize {
            return 0;
        }
        self.steps += 1;
        for &k in used {
            self.last_used[k] = Some(self.steps);
            self.last_touch[k] = self.steps;
        }
        if self.cfg.dead_code_steps == 0 || recent_z.rows() == 0 {
            return 0;
        }
        let mut reseeded = 0;
        for k in 0..self.codebook.rows() {
            if self.steps - self.last_touch[k] >= self.cfg.dead_code_steps {
                let r = rng.random_range(0..recent_z.rows() as u64) as usize;
                self.codebook.row_mut(k).copy_from_slice(recent_z.row(r));
                self.last_touch[k] = self.steps;
                reseeded += 1;
            }
        }
        reseeded
    }

    /// Codes used within the last `dead_code_steps` steps (every use ever when that is 0).
    pub fn active_codes(&self) -> usize {
        let window = self.cfg.dead_code_steps;
        self.last_used
            .iter()
            .filter(|u| match u {
                Some(s) => window == 0 || self.steps - s < window,
                None => false,
            })
            .count()
    }

    pub fn freeze(self) -> FrozenEstimator {
        FrozenEstimator(self)
    }
}

impl Params for DensityEstimator {
    fn tensors(&self) -> Vec<&Mat> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t.push(&self.dec_log_var);
        t.push(&self.codebook);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t.push(&mut self.dec_log_var);
        t.push(&mut self.codebook);
        t
    }
}

/// A trained estimator that can only be queried.
///
/// There is no way to get a mutable reference to the inner estimator:
///
/// ```compile_fail
/// # use adrbc::vqvae::*;
/// # use adrbc::nn::Params;
/// # use rand::SeedableRng;
/// # let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
/// let est = DensityEstimator::new(EstimatorConfig::new(1, 1), EstimatorRole::Expert, &mut rng).unwrap();
/// let mut frozen = est.freeze();
/// frozen.tensors_mut();
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEstimator(DensityEstimator);

impl FrozenEstimator {
    /// A trainable copy; the frozen original is untouched.
    pub fn to_trainable(&self) -> DensityEstimator {
        self.0.clone()
    }
}

impl std::ops::Deref for FrozenEstimator {
    type Target = DensityEstimator;

    fn deref(&self) -> &DensityEstimator {
        &self.0
    }
}
