use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActionId, AgentError, StateKey};
use crate::gridworld::ObsDigest;

/// One decision of the policy over options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub state_key: StateKey,
    pub obs_digest: ObsDigest,
    pub action_id: ActionId,
    /// Undiscounted reward collected while the action ran.
    pub reward: f64,
}

/// One episode, stored as a JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<TrajStep>,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: bool,
}

impl Trajectory {
    pub fn decisions(&self) -> usize {
        self.steps.len()
    }
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), AgentError> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, AgentError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{make_named_env, Pos};

    #[test]
    fn jsonl_record_shape() {
        let task = make_named_env("four_rooms", Pos::new(1, 3)).unwrap();
        let s = task.reset();
        let t = Trajectory {
            task_id: task.task_id.clone(),
            seed: 9,
            steps: vec![TrajStep {
                state_key: StateKey(s.agent_pos),
                obs_digest: task.digest_at(s.agent_pos),
                action_id: ActionId(3),
                reward: -0.001,
            }],
            episode_return: 0.998,
            success: true,
        };
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["task_id"], "four_rooms/1,3");
        assert_eq!(v["return"], 0.998);
        assert_eq!(v["steps"][0]["state_key"], "1,1");
        assert_eq!(v["steps"][0]["action_id"], 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trajectories(&path, &[t.clone(), t.clone()]).unwrap();
        assert_eq!(read_trajectories(&path).unwrap(), vec![t.clone(), t]);
    }
}
