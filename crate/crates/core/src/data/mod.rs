//! Trajectories, datasets, batches and demonstration selection.
//!
//! Rewards are kept on [`Transition`] for ranking and scoring but never reach a [`Batch`];
//! every training loss consumes batches, so no loss can read a reward.

mod format;
mod text;

use rand::Rng;

pub use format::{dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use text::{import_text, parse_text};

use crate::error::{Error, Result};
use crate::nn::Mat;

/// Floor applied to per-dimension observation std.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    reward: f64,
    pub done: bool,
}

impl Transition {
    pub fn new(obs: Vec<f64>, act: Vec<f64>, reward: f64, done: bool) -> Self {
        Transition { obs, act, reward, done }
    }

    /// Environment reward. Only ranking and scoring code reads this.
    pub fn reward(&self) -> f64 {
        self.reward
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::argument("trajectory must hold at least one transition"));
        }
        Ok(Trajectory { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Undiscounted return, always recomputed from the member rewards.
    pub fn ret(&self) -> f64 {
        self.transitions.iter().map(Transition::reward).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Expert,
    Suboptimal,
    Mixed,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Expert => "expert",
            Role::Suboptimal => "suboptimal",
            Role::Mixed => "mixed",
        }
    }
}

/// Per-dimension observation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn apply_in_place(&self, obs: &mut [f64]) {
        for ((x, m), s) in obs.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    obs_dim: usize,
    act_dim: usize,
    role: Role,
    trajectories: Vec<Trajectory>,
    norm: Option<NormStats>,
    // offsets[i] = number of transitions before trajectory i; one extra entry for the total
    offsets: Vec<usize>,
}

impl Dataset {
    pub fn new(obs_dim: usize, act_dim: usize, role: Role, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            for (j, tr) in t.transitions().iter().enumerate() {
                if tr.obs.len() != obs_dim || tr.act.len() != act_dim {
                    return Err(Error::argument(format!(
                        "trajectory {i} step {j}: dims ({}, {}) do not match ({obs_dim}, {act_dim})",
                        tr.obs.len(),
                        tr.act.len()
                    )));
                }
                if !tr.obs.iter().chain(&tr.act).all(|v| v.is_finite()) {
                    return Err(Error::non_finite(format!("trajectory {i} step {j}"), None));
                }
            }
        }
        let mut offsets = Vec::with_capacity(trajectories.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for t in &trajectories {
            acc += t.len();
            offsets.push(acc);
        }
        Ok(Dataset {
            obs_dim,
            act_dim,
            role,
            trajectories,
            norm: None,
            offsets,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn norm(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn num_transitions(&self) -> usize {
        *self.offsets.last().expect("offsets never empty")
    }

    pub fn is_empty(&self) -> bool {
        self.num_transitions() == 0
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(Trajectory::ret).collect()
    }

    /// Transition by flat index, trajectories laid end to end.
    pub fn transition(&self, idx: usize) -> &Transition {
        let t = self.offsets.partition_point(|&o| o <= idx) - 1;
        &self.trajectories[t].transitions()[idx - self.offsets[t]]
    }

    pub fn iter_transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions().iter())
    }

    /// Every transition as one batch, in storage order.
    pub fn all(&self) -> Batch {
        let n = self.num_transitions();
        let mut obs = Mat::zeros(n, self.obs_dim);
        let mut act = Mat::zeros(n, self.act_dim);
        for (i, tr) in self.iter_transitions().enumerate() {
            obs.row_mut(i).copy_from_slice(&tr.obs);
            act.row_mut(i).copy_from_slice(&tr.act);
        }
        Batch { obs, act }
    }

    /// Concatenates datasets with equal dims.
    pub fn concat(role: Role, parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::argument("nothing to concatenate"))?;
        let mut trajs = Vec::new();
        for p in parts {
            if p.obs_dim != first.obs_dim || p.act_dim != first.act_dim {
                return Err(Error::argument("datasets have different dims"));
            }
            trajs.extend(p.trajectories.iter().cloned());
        }
        Dataset::new(first.obs_dim, first.act_dim, role, trajs)
    }
}

/// Observations and actions only.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Mat,
    pub act: Mat,
}

impl Batch {
    pub fn new(obs: Mat, act: Mat) -> Result<Self> {
        if obs.rows() != act.rows() || obs.rows() == 0 {
            return Err(Error::argument(format!(
                "batch needs matching non-zero row counts, got {} and {}",
                obs.rows(),
                act.rows()
            )));
        }
        Ok(Batch { obs, act })
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.rows() == 0
    }
}

/// Top `k` trajectories by return (ties go to the earlier index) and the rest.
///
/// Both parts keep the original trajectory order.
pub fn split_by_return(ds: &Dataset, k: usize) -> Result<(Dataset, Dataset)> {
    let n = ds.trajectories.len();
    if k == 0 || k >= n {
        return Err(Error::argument(format!("k = {k} must lie in [1, {})", n)));
    }
    let returns = ds.returns();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps earlier indices first among equal returns
    order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]));
    let mut is_top = vec![false; n];
    for &i in &order[..k] {
        is_top[i] = true;
    }
    let (mut top, mut rest) = (Vec::with_capacity(k), Vec::with_capacity(n - k));
    for (i, t) in ds.trajectories.iter().enumerate() {
        if is_top[i] {
            top.push(t.clone());
        } else {
            rest.push(t.clone());
        }
    }
    let mut expert = Dataset::new(ds.obs_dim, ds.act_dim, Role::Expert, top)?;
    let mut sub = Dataset::new(ds.obs_dim, ds.act_dim, Role::Suboptimal, rest)?;
    expert.norm = ds.norm.clone();
    sub.norm = ds.norm.clone();
    Ok((expert, sub))
}

/// `b` transitions drawn uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(ds: &Dataset, rng: &mut R, b: usize) -> Result<Batch> {
    let n = ds.num_transitions();
    if n == 0 {
        return Err(Error::argument("cannot sample from an empty dataset"));
    }
    if b == 0 {
        return Err(Error::argument("batch size must be at least 1"));
    }
    let mut obs = Mat::zeros(b, ds.obs_dim);
    let mut act = Mat::zeros(b, ds.act_dim);
    for i in 0..b {
        // integer draw keeps the index sequence platform independent
        let idx = rng.random_range(0..n as u64) as usize;
        let tr = ds.transition(idx);
        obs.row_mut(i).copy_from_slice(&tr.obs);
        act.row_mut(i).copy_from_slice(&tr.act);
    }
    Ok(Batch { obs, act })
}

/// Per-dimension mean and floored population std over every observation.
pub fn obs_stats(ds: &Dataset) -> Result<NormStats> {
    let n = ds.num_transitions();
    if n == 0 {
        return Err(Error::argument("cannot normalize an empty dataset"));
    }
    let d = ds.obs_dim;
    let mut mean = vec![0.0; d];
    for tr in ds.iter_transitions() {
        for (m, x) in mean.iter_mut().zip(&tr.obs) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for tr in ds.iter_transitions() {
        for ((v, x), m) in var.iter_mut().zip(&tr.obs).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

/// Applies `stats` to every observation and records them on the result.
pub fn apply_norm(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.mean.len() != ds.obs_dim || stats.std.len() != ds.obs_dim {
        return Err(Error::argument("normalization stats do not match obs_dim"));
    }
    if stats.std.iter().any(|&s| !(s >= STD_FLOOR)) {
        return Err(Error::argument("normalization std below floor"));
    }
    let mut out = ds.clone();
    for t in &mut out.trajectories {
        for tr in &mut t.transitions {
            stats.apply_in_place(&mut tr.obs);
        }
    }
    out.norm = Some(stats.clone());
    Ok(out)
}

/// Standardizes observations with the dataset's own statistics.
pub fn normalize_obs(ds: &Dataset) -> Result<Dataset> {
    apply_norm(ds, &obs_stats(ds)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(ret: f64, len: usize, tag: f64) -> Trajectory {
        let per = ret / len as f64;
        Trajectory::new(
            (0..len)
                .map(|i| Transition::new(vec![tag, i as f64], vec![tag], per, i + 1 == len))
                .collect(),
        )
        .unwrap()
    }

    fn ds(returns: &[f64]) -> Dataset {
        let t = returns
            .iter()
            .enumerate()
            .map(|(i, &r)| traj(r, 2, i as f64))
            .collect();
        Dataset::new(2, 1, Role::Mixed, t).unwrap()
    }

    #[test]
    fn split_picks_argmax() {
        let (e, s) = split_by_return(&ds(&[3.0, 9.0, 1.0]), 1).unwrap();
        assert_eq!(e.returns(), vec![9.0]);
        assert_eq!(s.returns(), vec![3.0, 1.0]);
        assert_eq!(e.role(), Role::Expert);
    }

    #[test]
    fn split_with_n_minus_one_leaves_minimum() {
        let (_, s) = split_by_return(&ds(&[3.0, 9.0, 1.0, 4.0]), 3).unwrap();
        assert_eq!(s.returns(), vec![1.0]);
    }

    #[test]
    fn split_ties_prefer_earlier() {
        let d = ds(&[5.0, 5.0, 5.0]);
        let (e, _) = split_by_return(&d, 1).unwrap();
        assert_eq!(e.trajectories()[0], d.trajectories()[0]);
    }

    #[test]
    fn split_rejects_bad_k() {
        let d = ds(&[1.0, 2.0]);
        assert!(matches!(split_by_return(&d, 0), Err(Error::Argument(_))));
        assert!(matches!(split_by_return(&d, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn single_transition_is_repeated() {
        let d = Dataset::new(1, 1, Role::Mixed, vec![Trajectory::new(vec![Transition::new(vec![2.0], vec![3.0], 0.0, true)]).unwrap()]).unwrap();
        let b = sample_batch(&d, &mut ChaCha8Rng::seed_from_u64(0), 4).unwrap();
        assert_eq!(b.obs.data(), &[2.0; 4]);
        assert_eq!(b.act.data(), &[3.0; 4]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let d = ds(&[1.0, 2.0, 3.0]);
        let rng = ChaCha8Rng::seed_from_u64(4);
        let a = sample_batch(&d, &mut rng.clone(), 16).unwrap();
        let b = sample_batch(&d, &mut rng.clone(), 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_cannot_be_sampled() {
        let d = Dataset::new(1, 1, Role::Mixed, vec![]).unwrap();
        assert!(sample_batch(&d, &mut ChaCha8Rng::seed_from_u64(0), 1).is_err());
    }

    #[test]
    fn flat_indexing_spans_trajectories() {
        let t = vec![traj(0.0, 3, 0.0), traj(0.0, 1, 1.0), traj(0.0, 2, 2.0)];
        let d = Dataset::new(2, 1, Role::Mixed, t).unwrap();
        let tags: Vec<f64> = (0..6).map(|i| d.transition(i).obs[0]).collect();
        assert_eq!(tags, vec![0.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let t = vec![traj(0.0, 4, 7.0)];
        let d = Dataset::new(2, 1, Role::Mixed, t).unwrap();
        let n = normalize_obs(&d).unwrap();
        assert_eq!(n.norm().unwrap().std[0], STD_FLOOR);
        assert!(n.iter_transitions().all(|tr| tr.obs[0] == 0.0));
    }

    #[test]
    fn standardized_data_is_unchanged() {
        // column values ±1 have mean 0 and population std 1
        let t = Trajectory::new(
            [1.0, -1.0, 1.0, -1.0]
                .iter()
                .map(|&x| Transition::new(vec![x], vec![0.0], 0.0, false))
                .collect(),
        )
        .unwrap();
        let d = Dataset::new(1, 1, Role::Mixed, vec![t]).unwrap();
        let n = normalize_obs(&d).unwrap();
        for (a, b) in d.iter_transitions().zip(n.iter_transitions()) {
            assert!((a.obs[0] - b.obs[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dims_are_validated() {
        let t = Trajectory::new(vec![Transition::new(vec![1.0], vec![0.0, 1.0], 0.0, true)]).unwrap();
        assert!(Dataset::new(1, 1, Role::Mixed, vec![t]).is_err());
        assert!(Trajectory::new(vec![]).is_err());
    }
}
