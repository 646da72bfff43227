//! Synthetic continuous-control tasks, scripted controllers, rollouts and normalized scores.
//!
//! * `point-mass-2d`: a point at `pos` moves by `0.1·a` toward a goal placed at unit distance
//!   in a random direction; obs `(pos, goal)`.
//! * `arc-reach-2d`: start near the origin, reach a goal on the upper unit arc; obs
//!   `(x, y, goal_angle)`. Its noisy expert rotates every action by a per-episode ±45°,
//!   so suboptimal data is bimodal.
//! * `bandit-1d`: one step, obs `s ~ U[−1, 1]`, best action `0.6·s + 0.2`.
//!
//! Rewards are `−distance` after each step (`−|a − a*|` for the bandit); returns are
//! undiscounted.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Role, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::rng::stream;

const STEP: f64 = 0.1;
const GAIN: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    PointMass2d,
    ArcReach2d,
    Bandit1d,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::PointMass2d, Task::ArcReach2d, Task::Bandit1d];

    pub fn name(self) -> &'static str {
        match self {
            Task::PointMass2d => "point-mass-2d",
            Task::ArcReach2d => "arc-reach-2d",
            Task::Bandit1d => "bandit-1d",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Task::PointMass2d => 4,
            Task::ArcReach2d => 3,
            Task::Bandit1d => 1,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            Task::PointMass2d | Task::ArcReach2d => 2,
            Task::Bandit1d => 1,
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            Task::PointMass2d => 50,
            Task::ArcReach2d => 30,
            Task::Bandit1d => 1,
        }
    }

    /// Every action component lies in `[−bound, bound]`.
    pub fn action_bound(self) -> f64 {
        1.0
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown env {s:?}")))
    }
}

/// One task instance with its own reset stream.
#[derive(Clone, Debug)]
pub struct Env {
    task: Task,
    rng: ChaCha8Rng,
    pos: [f64; 2],
    goal: [f64; 2],
    goal_angle: f64,
    bandit_obs: f64,
    t: usize,
}

pub fn make_env(name: &str, seed: u64) -> Result<Env> {
    Ok(Env::new(name.parse()?, seed))
}

impl Env {
    pub fn new(task: Task, seed: u64) -> Self {
        Env {
            task,
            rng: stream(seed, 0),
            pos: [0.0; 2],
            goal: [0.0; 2],
            goal_angle: 0.0,
            bandit_obs: 0.0,
            t: 0,
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn obs_dim(&self) -> usize {
        self.task.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.task.act_dim()
    }

    pub fn horizon(&self) -> usize {
        self.task.horizon()
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    /// Draws a fresh initial state and returns its observation.
    pub fn reset(&mut self) -> Vec<f64> {
        self.t = 0;
        match self.task {
            Task::PointMass2d => {
                let heading = self.rng.random_range(-PI..PI);
                for i in 0..2 {
                    self.pos[i] = self.rng.random_range(-1.0..1.0);
                }
                self.goal = [self.pos[0] + heading.cos(), self.pos[1] + heading.sin()];
            }
            Task::ArcReach2d => {
                self.goal_angle = self.rng.random_range(0.0..PI);
                self.goal = [self.goal_angle.cos(), self.goal_angle.sin()];
                for i in 0..2 {
                    self.pos[i] = self.rng.random_range(-0.05..0.05);
                }
            }
            Task::Bandit1d => {
                self.bandit_obs = self.rng.random_range(-1.0..1.0);
            }
        }
        self.observe()
    }

    pub fn observe(&self) -> Vec<f64> {
        match self.task {
            Task::PointMass2d => vec![self.pos[0], self.pos[1], self.goal[0], self.goal[1]],
            Task::ArcReach2d => vec![self.pos[0], self.pos[1], self.goal_angle],
            Task::Bandit1d => vec![self.bandit_obs],
        }
    }

    fn distance(&self) -> f64 {
        ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt()
    }

    /// Applies `a` (clipped to the action box) and returns `(obs, reward, done)`.
    pub fn step(&mut self, a: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        if a.len() != self.act_dim() {
            return Err(Error::argument(format!(
                "{} expects {} action dims, got {}",
                self.task,
                self.act_dim(),
                a.len()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("action", None));
        }
        if self.t >= self.horizon() {
            return Err(Error::argument("episode already finished"));
        }
        let b = self.task.action_bound();
        self.t += 1;
        let reward = match self.task {
            Task::PointMass2d | Task::ArcReach2d => {
                for i in 0..2 {
                    self.pos[i] += STEP * a[i].clamp(-b, b);
                }
                -self.distance()
            }
            Task::Bandit1d => -(a[0].clamp(-b, b) - bandit_target(self.bandit_obs)).abs(),
        };
        Ok((self.observe(), reward, self.t >= self.horizon()))
    }

    /// The scripted expert's action at the current state.
    pub fn expert_action(&self) -> Vec<f64> {
        let b = self.task.action_bound();
        match self.task {
            Task::PointMass2d | Task::ArcReach2d => (0..2)
                .map(|i| (GAIN * (self.goal[i] - self.pos[i])).clamp(-b, b))
                .collect(),
            Task::Bandit1d => vec![bandit_target(self.bandit_obs)],
        }
    }
}

fn bandit_target(s: f64) -> f64 {
    0.6 * s + 0.2
}

/// Anything that picks actions from observations.
pub trait Actor {
    /// Called once at the start of each episode.
    fn begin_episode(&mut self, _rng: &mut ChaCha8Rng) {}

    fn act(&mut self, env: &Env, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Controller {
    ScriptedExpert,
    /// Expert plus Gaussian noise of this std (and, on arc-reach, a per-episode ±45° turn).
    NoisyExpert(f64),
    Random,
}

impl Controller {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scripted-expert" | "expert" => Ok(Controller::ScriptedExpert),
            "random" => Ok(Controller::Random),
            _ => {
                let sigma = s
                    .strip_prefix("noisy-expert(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|x| x.parse::<f64>().ok())
                    .filter(|x| *x >= 0.0)
                    .ok_or_else(|| Error::argument(format!("unknown controller {s:?}")))?;
                Ok(Controller::NoisyExpert(sigma))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Controller::ScriptedExpert => "scripted-expert".into(),
            Controller::NoisyExpert(s) => format!("noisy-expert({s})"),
            Controller::Random => "random".into(),
        }
    }
}

/// A controller with its per-episode state.
#[derive(Clone, Debug)]
pub struct ControllerActor {
    kind: Controller,
    turn: f64,
}

impl ControllerActor {
    pub fn new(kind: Controller) -> Self {
        ControllerActor { kind, turn: 0.0 }
    }
}

impl Actor for ControllerActor {
    fn begin_episode(&mut self, rng: &mut ChaCha8Rng) {
        if let Controller::NoisyExpert(_) = self.kind {
            self.turn = if rng.random_bool(0.5) { FRAC_PI_4 } else { -FRAC_PI_4 };
        }
    }

    fn act(&mut self, env: &Env, _obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let b = env.task().action_bound();
        Ok(match self.kind {
            Controller::ScriptedExpert => env.expert_action(),
            Controller::Random => (0..env.act_dim()).map(|_| rng.random_range(-b..b)).collect(),
            Controller::NoisyExpert(sigma) => {
                let mut a = env.expert_action();
                if env.task() == Task::ArcReach2d {
                    let (s, c) = self.turn.sin_cos();
                    a = vec![c * a[0] - s * a[1], s * a[0] + c * a[1]];
                }
                a.iter()
                    .map(|x| (x + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(-b, b))
                    .collect()
            }
        })
    }
}

/// Runs one episode from a fresh reset.
pub fn rollout<A: Actor + ?Sized>(env: &mut Env, actor: &mut A, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let mut obs = env.reset();
    actor.begin_episode(rng);
    let mut steps = Vec::with_capacity(env.horizon());
    loop {
        let a = actor.act(env, &obs, rng)?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("policy action", None));
        }
        let (next, r, done) = env.step(&a)?;
        steps.push(Transition::new(obs, a, r, done));
        obs = next;
        if done {
            break;
        }
    }
    Trajectory::new(steps)
}

/// Controllers and episode counts making up a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub parts: Vec<(Controller, usize)>,
}

impl CorpusSpec {
    /// `controller:count` pairs separated by `;`, e.g. `scripted-expert:5;noisy-expert(0.5):500`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts = s
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                let (c, n) = p
                    .rsplit_once(':')
                    .ok_or_else(|| Error::argument(format!("corpus part {p:?} lacks ':count'")))?;
                let n = n
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::argument(format!("bad count in {p:?}")))?;
                Ok((Controller::parse(c.trim())?, n))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorpusSpec { parts })
    }

    pub fn render(&self) -> String {
        self.parts
            .iter()
            .map(|(c, n)| format!("{}:{n}", c.label()))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn total(&self) -> usize {
        self.parts.iter().map(|p| p.1).sum()
    }
}

/// Rolls out every part of `spec` in order; the result is tagged mixed.
pub fn generate_corpus(task: Task, spec: &CorpusSpec, seed: u64) -> Result<Dataset> {
    let mut env = Env::new(task, seed);
    let mut rng = stream(seed, 1);
    let mut trajs = Vec::with_capacity(spec.total());
    for &(c, n) in &spec.parts {
        let mut actor = ControllerActor::new(c);
        for _ in 0..n {
            trajs.push(rollout(&mut env, &mut actor, &mut rng)?);
        }
    }
    Dataset::new(task.obs_dim(), task.act_dim(), Role::Mixed, trajs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRefs {
    pub random_return: f64,
    pub expert_return: f64,
}

impl ScoreRefs {
    pub fn new(random_return: f64, expert_return: f64) -> Result<Self> {
        if !(expert_return > random_return) || !random_return.is_finite() || !expert_return.is_finite() {
            return Err(Error::argument(format!(
                "degenerate score references: random {random_return}, expert {expert_return}"
            )));
        }
        Ok(ScoreRefs {
            random_return,
            expert_return,
        })
    }
}

pub const CALIBRATION_SEED: u64 = 20_240_101;
pub const CALIBRATION_EPISODES: usize = 1000;

fn mean_return(task: Task, c: Controller, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = Env::new(task, seed);
    let mut rng = stream(seed, 1);
    let mut actor = ControllerActor::new(c);
    let mut total = 0.0;
    for _ in 0..episodes {
        total += rollout(&mut env, &mut actor, &mut rng)?.ret();
    }
    Ok(total / episodes as f64)
}

/// Mean random and scripted-expert returns over fixed-seed episodes.
pub fn calibrate(task: Task) -> Result<ScoreRefs> {
    let r = mean_return(task, Controller::Random, CALIBRATION_EPISODES, CALIBRATION_SEED)?;
    let e = mean_return(task, Controller::ScriptedExpert, CALIBRATION_EPISODES, CALIBRATION_SEED)?;
    ScoreRefs::new(r, e)
}

/// [`calibrate`], computed once per task per process.
pub fn score_refs(task: Task) -> Result<ScoreRefs> {
    static CACHE: OnceLock<Mutex<HashMap<Task, ScoreRefs>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("score cache").get(&task) {
        return Ok(*r);
    }
    let r = calibrate(task)?;
    cache.lock().expect("score cache").insert(task, r);
    Ok(r)
}

/// `env,random_ref,expert_ref` table for every task.
pub fn render_score_table(rows: &[(Task, ScoreRefs)]) -> String {
    let mut s = String::from("env,random_ref,expert_ref\n");
    for (t, r) in rows {
        s.push_str(&format!(
            "{},{},{}\n",
            t.name(),
            crate::csv::fmt_f64(r.random_return),
            crate::csv::fmt_f64(r.expert_return)
        ));
    }
    s
}

pub fn parse_score_table(src: &str) -> Result<Vec<(Task, ScoreRefs)>> {
    src.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(Error::argument(format!("bad score row {l:?}")));
            }
            let num = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::argument(format!("bad number {x:?}")))
            };
            Ok((f[0].trim().parse()?, ScoreRefs::new(num(f[1])?, num(f[2])?)?))
        })
        .collect()
}

/// `100·(ret − random)/(expert − random)`.
pub fn normalized_score(ret: f64, refs: &ScoreRefs) -> Result<f64> {
    let span = refs.expert_return - refs.random_return;
    if !(span > 0.0) {
        return Err(Error::argument("degenerate score references"));
    }
    Ok(100.0 * (ret - refs.random_return) / span)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of normalized scores over `n` episodes.
///
/// Episodes follow the calibration scheme: one environment seeded with `seed`, reset in
/// sequence, with actor noise from a second stream.
pub fn evaluate<A: Actor + ?Sized>(actor: &mut A, task: Task, n: usize, seed: u64, refs: &ScoreRefs) -> Result<EvalStats> {
    if n == 0 {
        return Err(Error::argument("need at least one episode"));
    }
    let mut env = Env::new(task, seed);
    let mut rng = stream(seed, 1);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        scores.push(normalized_score(rollout(&mut env, actor, &mut rng)?.ret(), refs)?);
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(EvalStats { mean, std: var.sqrt() })
}
