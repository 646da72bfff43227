//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment line, blank lines are ignored. Unknown or repeated
//! keys are errors. Every key has a desk-scale default; [`RunConfig::paper_scale`] switches
//! the sizes and budgets to the full-size values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ade::{AdeConfig, Surrogate};
use crate::dwr::{DwrConfig, Objective};
use crate::envs::{CorpusSpec, Task};
use crate::error::{Error, Result};
use crate::vqvae::EstimatorConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: Task,
    pub seed: u64,
    /// Number of consecutive seeds `ablate` runs, starting at `seed`.
    pub seeds: u64,
    pub demos: usize,
    /// Corpus recipe; `None` means `scripted-expert:<demos>;noisy-expert(0.5):500`.
    pub corpus: Option<CorpusSpec>,
    pub out: PathBuf,
    /// Directory holding the datasets; `None` means `out`.
    pub data_dir: Option<PathBuf>,

    pub latent_dim: usize,
    pub codebook_size: usize,
    /// `None` means twice the action dimension.
    pub vae_hidden_dim: Option<usize>,
    pub vae_hidden_layers: usize,
    pub quantize: bool,
    pub commitment: f64,
    pub dead_code_steps: u64,

    pub lambda1: f64,
    pub lambda2: f64,
    pub vae_batch_size: usize,
    pub vae_iterations: u64,
    pub vae_lr: f64,
    pub surrogate: Surrogate,
    pub sigmoid_of_density: bool,
    pub vae_metrics_every: u64,

    pub objective: Objective,
    pub policy_batch_size: usize,
    pub policy_iterations: u64,
    pub policy_lr: f64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub density_samples: usize,
    pub weight_clamp: Option<f64>,
    pub policy_hidden: usize,
    pub policy_layers: usize,

    pub timing_batches: Vec<usize>,
    pub timing_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ade = AdeConfig::default();
        let dwr = DwrConfig::default();
        let est = EstimatorConfig::new(1, 1);
        RunConfig {
            env: Task::PointMass2d,
            seed: 0,
            seeds: 1,
            demos: 5,
            corpus: None,
            out: PathBuf::from("runs"),
            data_dir: None,
            latent_dim: est.latent_dim,
            codebook_size: est.codebook_size,
            vae_hidden_dim: None,
            vae_hidden_layers: est.hidden_layers,
            quantize: est.quantize,
            commitment: est.commitment,
            dead_code_steps: est.dead_code_steps,
            lambda1: ade.lambda1,
            lambda2: ade.lambda2,
            vae_batch_size: ade.batch_size,
            vae_iterations: ade.iterations,
            vae_lr: ade.lr,
            surrogate: ade.surrogate,
            sigmoid_of_density: ade.sigmoid_of_density,
            vae_metrics_every: ade.metrics_every,
            objective: dwr.objective,
            policy_batch_size: dwr.batch_size,
            policy_iterations: dwr.iterations,
            policy_lr: dwr.lr,
            eval_every: dwr.eval_every,
            eval_episodes: dwr.eval_episodes,
            density_samples: dwr.density_samples,
            weight_clamp: dwr.weight_clamp,
            policy_hidden: dwr.hidden_dim,
            policy_layers: dwr.layers,
            timing_batches: vec![10, 20, 50, 100, 200, 300],
            timing_repeats: 5,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

/// Integers also accept exponent form such as `5e3`.
fn parse_count(key: &str, v: &str) -> Result<u64> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = parse_num(key, v)?;
    if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(Error::config(format!("{key}: {v:?} is not a non-negative integer")))
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn parse_surrogate(v: &str) -> Result<Surrogate> {
    if v == "elbo" {
        return Ok(Surrogate::NegElbo);
    }
    v.strip_prefix("is:")
        .and_then(|l| l.parse::<usize>().ok())
        .filter(|&l| l > 0)
        .map(Surrogate::ImportanceSampled)
        .ok_or_else(|| Error::config(format!("surrogate: expected elbo or is:<L>, got {v:?}")))
}

fn render_surrogate(s: Surrogate) -> String {
    match s {
        Surrogate::NegElbo => "elbo".into(),
        Surrogate::ImportanceSampled(l) => format!("is:{l}"),
    }
}

impl RunConfig {
    /// Full-size networks and budgets.
    pub fn paper_scale(mut self) -> Self {
        let est = EstimatorConfig::paper_scale(1, 1);
        self.latent_dim = est.latent_dim;
        self.codebook_size = est.codebook_size;
        self.vae_iterations = 100_000;
        self.policy_iterations = 1_000_000;
        self.policy_lr = 1e-4;
        self.policy_hidden = 256;
        self.policy_layers = 4;
        self
    }

    /// Applies every pair in `src` on top of `self`. `#` starts a comment anywhere on a line.
    pub fn apply_str(mut self, src: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in src.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("line {}: key {k} repeated", n + 1)));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", n + 1)),
                other => Error::config(format!("line {}: {other}", n + 1)),
            })?;
        }
        Ok(self)
    }

    pub fn load(self, path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        self.apply_str(&src)
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "env" => self.env = v.parse().map_err(|_| Error::config(format!("env: unknown task {v:?}")))?,
            "seed" => self.seed = parse_count(k, v)?,
            "seeds" => self.seeds = parse_count(k, v)?,
            "demos" => self.demos = parse_count(k, v)? as usize,
            "corpus" => {
                self.corpus = Some(CorpusSpec::parse(v).map_err(|e| Error::config(format!("corpus: {e}")))?)
            }
            "out" => self.out = PathBuf::from(v),
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "latent_dim" => self.latent_dim = parse_count(k, v)? as usize,
            "codebook_size" => self.codebook_size = parse_count(k, v)? as usize,
            "vae_hidden_dim" => self.vae_hidden_dim = Some(parse_count(k, v)? as usize),
            "vae_hidden_layers" => self.vae_hidden_layers = parse_count(k, v)? as usize,
            "quantize" => self.quantize = parse_bool(k, v)?,
            "commitment" => self.commitment = parse_num(k, v)?,
            "dead_code_steps" => self.dead_code_steps = parse_count(k, v)?,
            "lambda1" => self.lambda1 = parse_num(k, v)?,
            "lambda2" => self.lambda2 = parse_num(k, v)?,
            "vae_batch_size" => self.vae_batch_size = parse_count(k, v)? as usize,
            "vae_iterations" => self.vae_iterations = parse_count(k, v)?,
            "vae_lr" => self.vae_lr = parse_num(k, v)?,
            "surrogate" => self.surrogate = parse_surrogate(v)?,
            "sigmoid_of_density" => self.sigmoid_of_density = parse_bool(k, v)?,
            "vae_metrics_every" => self.vae_metrics_every = parse_count(k, v)?,
            "objective" => self.objective = v.parse()?,
            "policy_batch_size" => self.policy_batch_size = parse_count(k, v)? as usize,
            "policy_iterations" => self.policy_iterations = parse_count(k, v)?,
            "policy_lr" => self.policy_lr = parse_num(k, v)?,
            "eval_every" => self.eval_every = parse_count(k, v)?,
            "eval_episodes" => self.eval_episodes = parse_count(k, v)? as usize,
            "density_samples" => self.density_samples = parse_count(k, v)? as usize,
            "weight_clamp" => {
                self.weight_clamp = if v == "none" { None } else { Some(parse_num(k, v)?) }
            }
            "policy_hidden" => self.policy_hidden = parse_count(k, v)? as usize,
            "policy_layers" => self.policy_layers = parse_count(k, v)? as usize,
            "timing_batches" => {
                self.timing_batches = v
                    .split(',')
                    .map(|x| parse_count(k, x.trim()).map(|n| n as usize))
                    .collect::<Result<_>>()?
            }
            "timing_repeats" => self.timing_repeats = parse_count(k, v)? as usize,
            _ => return Err(Error::config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`Self::apply_str`] reads back.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.name().into());
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        kv("demos", self.demos.to_string());
        if let Some(c) = &self.corpus {
            kv("corpus", c.render());
        }
        kv("out", self.out.display().to_string());
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        kv("latent_dim", self.latent_dim.to_string());
        kv("codebook_size", self.codebook_size.to_string());
        if let Some(h) = self.vae_hidden_dim {
            kv("vae_hidden_dim", h.to_string());
        }
        kv("vae_hidden_layers", self.vae_hidden_layers.to_string());
        kv("quantize", self.quantize.to_string());
        kv("commitment", self.commitment.to_string());
        kv("dead_code_steps", self.dead_code_steps.to_string());
        kv("lambda1", self.lambda1.to_string());
        kv("lambda2", self.lambda2.to_string());
        kv("vae_batch_size", self.vae_batch_size.to_string());
        kv("vae_iterations", self.vae_iterations.to_string());
        kv("vae_lr", self.vae_lr.to_string());
        kv("surrogate", render_surrogate(self.surrogate));
        kv("sigmoid_of_density", self.sigmoid_of_density.to_string());
        kv("vae_metrics_every", self.vae_metrics_every.to_string());
        kv("objective", self.objective.tag().into());
        kv("policy_batch_size", self.policy_batch_size.to_string());
        kv("policy_iterations", self.policy_iterations.to_string());
        kv("policy_lr", self.policy_lr.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("density_samples", self.density_samples.to_string());
        kv(
            "weight_clamp",
            self.weight_clamp.map_or("none".into(), |c| c.to_string()),
        );
        kv("policy_hidden", self.policy_hidden.to_string());
        kv("policy_layers", self.policy_layers.to_string());
        kv(
            "timing_batches",
            self.timing_batches
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("timing_repeats", self.timing_repeats.to_string());
        s
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        self.corpus.clone().unwrap_or_else(|| {
            CorpusSpec::parse(&format!("scripted-expert:{};noisy-expert(0.5):500", self.demos))
                .expect("default corpus parses")
        })
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.out)
    }

    pub fn estimator(&self) -> Result<EstimatorConfig> {
        let (o, a) = (self.env.obs_dim(), self.env.act_dim());
        let c = EstimatorConfig {
            latent_dim: self.latent_dim,
            codebook_size: self.codebook_size,
            hidden_dim: self.vae_hidden_dim.unwrap_or(2 * a),
            hidden_layers: self.vae_hidden_layers,
            quantize: self.quantize,
            commitment: self.commitment,
            dead_code_steps: self.dead_code_steps,
            ..EstimatorConfig::new(o, a)
        };
        c.validate()?;
        Ok(c)
    }

    pub fn ade(&self) -> Result<AdeConfig> {
        let c = AdeConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            batch_size: self.vae_batch_size,
            iterations: self.vae_iterations,
            lr: self.vae_lr,
            surrogate: self.surrogate,
            sigmoid_of_density: self.sigmoid_of_density,
            metrics_every: self.vae_metrics_every,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dwr(&self) -> Result<DwrConfig> {
        let c = DwrConfig {
            objective: self.objective,
            batch_size: self.policy_batch_size,
            iterations: self.policy_iterations,
            lr: self.policy_lr,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            density_samples: self.density_samples,
            weight_clamp: self.weight_clamp,
            hidden_dim: self.policy_hidden,
            layers: self.policy_layers,
        };
        c.validate()?;
        Ok(c)
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.estimator()?;
        self.ade()?;
        self.dwr()?;
        if self.demos == 0 {
            return Err(Error::config("demos must be at least 1"));
        }
        if self.corpus_spec().total() <= self.demos {
            return Err(Error::config("corpus must hold more trajectories than demos"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds must be at least 1"));
        }
        if self.timing_batches.is_empty() || self.timing_batches.contains(&0) || self.timing_repeats == 0 {
            return Err(Error::config("timing needs positive batch sizes and repeats"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::default().paper_scale().validate().unwrap();
    }

    #[test]
    fn pairs_override_defaults() {
        let c = RunConfig::default()
            .apply_str("# comment\n\nenv = bandit-1d\nvae_iterations = 5e3\nobjective = bc   # trailing note\nweight_clamp = 2.5\nsurrogate = is:4\n")
            .unwrap();
        assert_eq!(c.env, Task::Bandit1d);
        assert_eq!(c.vae_iterations, 5000);
        assert_eq!(c.objective, Objective::Bc);
        assert_eq!(c.weight_clamp, Some(2.5));
        assert_eq!(c.surrogate, Surrogate::ImportanceSampled(4));
        assert_eq!(c.estimator().unwrap().hidden_dim, 2);
    }

    #[test]
    fn unknown_and_repeated_keys_fail() {
        let e = RunConfig::default().apply_str("seed = 1\nlearning_rate = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 2") && m.contains("learning_rate")));
        assert!(RunConfig::default().apply_str("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::default().apply_str("seed 1\n").is_err());
        assert!(RunConfig::default().apply_str("vae_iterations = 1.5\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let c = RunConfig::default()
            .apply_str("env = arc-reach-2d\ncorpus = random:7;noisy-expert(0.25):40\ntiming_batches = 8,16\nvae_hidden_dim = 9\n")
            .unwrap();
        assert_eq!(RunConfig::default().apply_str(&c.render()).unwrap(), c);
        let p = RunConfig::default().paper_scale();
        assert_eq!(RunConfig::default().apply_str(&p.render()).unwrap(), p);
    }
}
