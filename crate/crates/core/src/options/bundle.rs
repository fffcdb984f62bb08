//! On-disk hierarchy bundle.
//!
//! ```text
//! <dir>/hierarchy.json         manifest: b, strength, cap, per-level selection
//! <dir>/action_space.json
//! <dir>/level_<l>/clusterer.json
//! <dir>/usefulness_L<l>.csv
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Hierarchy, LevelRecord, OptionError};
use crate::agent::ActionSpace;
use crate::clustering::{Clusterer, GeneralisationStrength};
use crate::usefulness::{write_score_report, UsefulnessScore};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LevelEntry {
    level: u32,
    selected: Vec<usize>,
    scores: Vec<(usize, UsefulnessScore)>,
    clusterer: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    b: usize,
    strength: GeneralisationStrength,
    candidate_cap: usize,
    fingerprint: String,
    levels: Vec<LevelEntry>,
}

impl Hierarchy {
    /// SHA-256 over the first `depth` levels; equal prefixes hash equal.
    pub fn fingerprint(&self, depth: u32) -> String {
        let mut h = Sha256::new();
        h.update(self.b.to_le_bytes());
        h.update(serde_json::to_vec(&self.strength).expect("serialisable"));
        for rec in self.levels.iter().take(depth as usize) {
            h.update(serde_json::to_vec(rec).expect("serialisable"));
        }
        format!("{:x}", h.finalize())
    }

    pub fn save(&self, dir: &Path) -> Result<(), OptionError> {
        fs::create_dir_all(dir)?;
        let mut levels = Vec::new();
        for rec in &self.levels {
            let rel = format!("level_{}/clusterer.json", rec.level);
            fs::create_dir_all(dir.join(format!("level_{}", rec.level)))?;
            rec.clusterer.save(&dir.join(&rel))?;
            write_score_report(
                &dir.join(format!("usefulness_L{}.csv", rec.level)),
                rec.level,
                &rec.scores,
                &rec.selected,
            )?;
            levels.push(LevelEntry {
                level: rec.level,
                selected: rec.selected.clone(),
                scores: rec.scores.clone(),
                clusterer: rel,
            });
        }
        let manifest = Manifest {
            version: BUNDLE_VERSION,
            b: self.b,
            strength: self.strength,
            candidate_cap: self.candidate_cap,
            fingerprint: self.fingerprint(self.depth()),
            levels,
        };
        fs::write(dir.join("hierarchy.json"), serde_json::to_vec_pretty(&manifest)?)?;
        fs::write(
            dir.join("action_space.json"),
            serde_json::to_vec_pretty(&self.action_space)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Hierarchy, OptionError> {
        let path = dir.join("hierarchy.json");
        let text = fs::read(&path).map_err(|e| OptionError::Bundle(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        if manifest.version != BUNDLE_VERSION {
            return Err(OptionError::Bundle(format!(
                "unsupported bundle version {}",
                manifest.version
            )));
        }
        let mut h = Hierarchy::new(manifest.b, manifest.strength);
        h.candidate_cap = manifest.candidate_cap;
        for entry in manifest.levels {
            let clusterer = Clusterer::load(&dir.join(&entry.clusterer))?;
            h.push_level(clusterer, entry.scores, entry.selected)?;
        }
        let space: ActionSpace = serde_json::from_slice(&fs::read(dir.join("action_space.json"))?)?;
        if space != h.action_space {
            return Err(OptionError::Bundle(
                "action_space.json disagrees with the levels".into(),
            ));
        }
        if h.fingerprint(h.depth()) != manifest.fingerprint {
            return Err(OptionError::Bundle("fingerprint mismatch".into()));
        }
        Ok(h)
    }

    pub fn level(&self, level: u32) -> Option<&LevelRecord> {
        self.levels.get(level.checked_sub(1)? as usize)
    }
}
