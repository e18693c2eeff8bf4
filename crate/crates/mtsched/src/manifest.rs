//! Benchmark manifest and line-delimited instance dumps.

use std::io::{self, Write};

use mtsched_core::bench::{SplitData, Target, WORDS};
use mtsched_core::sched::TaskGroup;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task: String,
    pub kind: String,
    pub group: TaskGroup,
    pub split: String,
    pub count: usize,
    /// Scene seeds `seed_start..seed_end` (wrapping) were consumed.
    pub seed_start: u64,
    pub seed_end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub benchmark_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_splits(seed: u64, splits: &[&SplitData]) -> Self {
        Manifest {
            benchmark_seed: seed,
            entries: splits
                .iter()
                .map(|s| ManifestEntry {
                    task: s.task.clone(),
                    kind: s.kind.as_str().into(),
                    group: s.kind.group(),
                    split: s.split.as_str().into(),
                    count: s.instances.len(),
                    seed_start: s.seed_start,
                    seed_end: s.seed_end,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub task: String,
    pub group: TaskGroup,
    pub words: Vec<String>,
    pub target: Target,
    pub observed: Target,
    pub scene_seed: u64,
    /// Seeds of every image the instance uses, in input order.
    pub image_seeds: Vec<u64>,
}

/// Writes one JSON record per instance.
pub fn write_instances(out: &mut impl Write, split: &SplitData) -> io::Result<()> {
    for inst in &split.instances {
        let rec = InstanceRecord {
            task: split.task.clone(),
            group: inst.group,
            words: inst.words.iter().map(|&w| WORDS[w].to_string()).collect(),
            target: inst.target.clone(),
            observed: inst.observed.clone(),
            scene_seed: inst.scene_seed(),
            image_seeds: inst.scenes.iter().map(|s| s.seed).collect(),
        };
        serde_json::to_writer(&mut *out, &rec).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
