//! `ADRB` dataset files.
//!
//! ```text
//! "ADRB" | version u32 | obs_dim u32 | act_dim u32 | traj_count u32 |
//!   per trajectory: length u32 | length × (obs f64[obs_dim] | act f64[act_dim] | reward f64 | done u8)
//! ```
//!
//! Role tags and normalization stats are not stored; loaded datasets are tagged mixed.

use std::path::Path;

use super::{Dataset, Role, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{ByteReader, ByteWriter};

pub const DATASET_MAGIC: &[u8; 4] = b"ADRB";
pub const DATASET_VERSION: u32 = 1;

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.len_u32(ds.obs_dim())?;
    w.len_u32(ds.act_dim())?;
    w.len_u32(ds.trajectories().len())?;
    for t in ds.trajectories() {
        w.len_u32(t.len())?;
        for tr in t.transitions() {
            w.f64s(&tr.obs);
            w.f64s(&tr.act);
            w.f64(tr.reward());
            w.u8(tr.done as u8);
        }
    }
    Ok(w.into_inner())
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let obs_dim = r.u32("obs_dim")? as usize;
    let act_dim = r.u32("act_dim")? as usize;
    let count = r.u32("trajectory count")? as usize;
    let mut trajs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.offset();
        let len = r.u32("trajectory length")? as usize;
        if len == 0 {
            return Err(Error::format(at, "zero-length trajectory"));
        }
        let mut steps = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            let obs = r.f64s(obs_dim, "observation")?;
            let act = r.f64s(act_dim, "action")?;
            let reward = r.f64("reward")?;
            let at = r.offset();
            let done = match r.u8("done flag")? {
                0 => false,
                1 => true,
                v => return Err(Error::format(at, format!("done flag {v} is not 0/1"))),
            };
            steps.push(Transition::new(obs, act, reward, done));
        }
        trajs.push(Trajectory::new(steps)?);
    }
    if !r.is_at_end() {
        return Err(Error::format(r.offset(), "trailing bytes after last trajectory"));
    }
    Dataset::new(obs_dim, act_dim, Role::Mixed, trajs)
        .map_err(|e| Error::format(0, e.to_string()))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}
