//! Run-directory persistence: `config.json` (resolved config + hash),
//! `trajectory.jsonl` (one step record per line, flushed per step),
//! `best_prompt.txt`, `final_prompt.txt`.

use super::{RunConfig, StepRecord};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.json";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const BEST_PROMPT_FILE: &str = "best_prompt.txt";
pub const FINAL_PROMPT_FILE: &str = "final_prompt.txt";

/// Hex sha-256 over the canonical JSON form of the config.
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StoredConfig {
    pub config: RunConfig,
    pub config_hash: String,
    /// Field -> source ("default" | "file" | "flag" | "env"), recorded by
    /// the CLI when it resolved the config.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    trajectory: File,
}

impl RunDir {
    /// Create a fresh run directory and store the config before step 1.
    /// Refuses to reuse a directory that already holds a run unless
    /// `force` wipes it first.
    pub fn create(
        root: &Path,
        config: &RunConfig,
        provenance: BTreeMap<String, String>,
        force: bool,
    ) -> Result<Self> {
        if root.join(CONFIG_FILE).exists() {
            if !force {
                return Err(Error::RunDir(format!(
                    "{} already holds a run; pass force to overwrite",
                    root.display()
                )));
            }
            fs::remove_dir_all(root)?;
        }
        fs::create_dir_all(root)?;
        let stored = StoredConfig {
            config: config.clone(),
            config_hash: config_hash(config),
            provenance,
        };
        fs::write(
            root.join(CONFIG_FILE),
            serde_json::to_string_pretty(&stored)?,
        )?;
        let trajectory = OpenOptions::new()
            .create(true)
            .append(true)
            .open(root.join(TRAJECTORY_FILE))?;
        Ok(Self {
            root: root.to_path_buf(),
            trajectory,
        })
    }

    /// Reopen an existing run directory for resuming: verifies the stored
    /// hash still matches the stored config.
    pub fn reopen(root: &Path) -> Result<(Self, RunConfig)> {
        let config_path = root.join(CONFIG_FILE);
        if !config_path.exists() {
            return Err(Error::RunDir(format!(
                "{} is not a run directory (missing {CONFIG_FILE})",
                root.display()
            )));
        }
        let stored: StoredConfig = serde_json::from_str(&fs::read_to_string(&config_path)?)?;
        let actual = config_hash(&stored.config);
        if actual != stored.config_hash {
            return Err(Error::ConfigHashMismatch {
                stored: stored.config_hash,
                actual,
            });
        }
        let trajectory = OpenOptions::new()
            .create(true)
            .append(true)
            .open(root.join(TRAJECTORY_FILE))?;
        Ok((
            Self {
                root: root.to_path_buf(),
                trajectory,
            },
            stored.config,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn append_step(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.trajectory, "{}", serde_json::to_string(record)?)?;
        self.trajectory.flush()?;
        Ok(())
    }

    /// Replace the trajectory with the given intact records; used when a
    /// resume finds a corrupt trailing line.
    pub fn rewrite_trajectory(&mut self, records: &[StepRecord]) -> Result<()> {
        let path = self.root.join(TRAJECTORY_FILE);
        let mut fresh = File::create(&path)?;
        for r in records {
            writeln!(fresh, "{}", serde_json::to_string(r)?)?;
        }
        fresh.flush()?;
        self.trajectory = OpenOptions::new().append(true).open(&path)?;
        Ok(())
    }

    pub fn write_best_prompt(&self, text: &str) -> Result<()> {
        fs::write(self.root.join(BEST_PROMPT_FILE), text)?;
        Ok(())
    }

    pub fn write_final_prompt(&self, text: &str) -> Result<()> {
        fs::write(self.root.join(FINAL_PROMPT_FILE), text)?;
        Ok(())
    }
}

/// Read the trajectory, dropping a trailing corrupt/partial record with a
/// warning instead of failing the resume.
pub fn read_trajectory(root: &Path) -> Result<(Vec<StepRecord>, Vec<String>)> {
    let path = root.join(TRAJECTORY_FILE);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    if !path.exists() {
        return Ok((records, warnings));
    }
    let reader = BufReader::new(File::open(&path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StepRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                warnings.push(format!(
                    "{}:{}: dropping unreadable step record ({e}); resuming from last intact step",
                    path.display(),
                    idx + 1
                ));
                break;
            }
        }
    }
    Ok((records, warnings))
}
