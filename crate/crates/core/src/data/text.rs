//! Hand-written fixtures: one transition per line as `obs..., act..., reward, done`,
//! blank lines between trajectories, `#` starts a comment.

use std::path::Path;

use super::{Dataset, Role, Trajectory, Transition};
use crate::error::{Error, Result};

pub fn parse_text(src: &str, obs_dim: usize, act_dim: usize) -> Result<Dataset> {
    let width = obs_dim + act_dim + 2;
    let mut trajs = Vec::new();
    let mut cur: Vec<Transition> = Vec::new();
    for (no, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            // a comment-only line does not end a trajectory
            if raw.trim().is_empty() && !cur.is_empty() {
                trajs.push(Trajectory::new(std::mem::take(&mut cur))?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(Error::argument(format!(
                "line {}: expected {width} fields, found {}",
                no + 1,
                fields.len()
            )));
        }
        let nums = fields[..width - 1]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::argument(format!("line {}: bad number {f:?}", no + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let done = match fields[width - 1] {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(Error::argument(format!("line {}: bad done flag {other:?}", no + 1)))
            }
        };
        cur.push(Transition::new(
            nums[..obs_dim].to_vec(),
            nums[obs_dim..obs_dim + act_dim].to_vec(),
            nums[obs_dim + act_dim],
            done,
        ));
    }
    if !cur.is_empty() {
        trajs.push(Trajectory::new(cur)?);
    }
    Dataset::new(obs_dim, act_dim, Role::Mixed, trajs)
}

pub fn import_text(path: impl AsRef<Path>, obs_dim: usize, act_dim: usize) -> Result<Dataset> {
    parse_text(&std::fs::read_to_string(path)?, obs_dim, act_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_trajectories() {
        let src = "# obs, act, r, done\n0.5, 1, -1, 0\n0.6, 1, 2, 1\n\n\n1.5, -1, 3, 1\n";
        let d = parse_text(src, 1, 1).unwrap();
        assert_eq!(d.trajectories().len(), 2);
        assert_eq!(d.returns(), vec![1.0, 3.0]);
        assert!(d.trajectories()[0].transitions()[1].done);
    }

    #[test]
    fn wrong_width_names_line() {
        let err = parse_text("1,2,3\n", 1, 1).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
