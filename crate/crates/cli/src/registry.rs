//! On-disk run registry: run files plus a manifest with content hashes.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json          config hash, runs, cells, artifact hashes
//! config.toml            the experiment config
//! runs/<run_id>.csv      per-step metrics
//! runs/<run_id>.json     the full run, used to resume sweeps
//! ...                    artifacts written by subcommands
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gradnoise::parsim::{replay_metrics, Termination, TrainRun};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub steps: usize,
    pub termination: Termination,
    pub csv: String,
    pub csv_sha256: String,
    pub json: String,
    pub json_sha256: String,
}

/// Outcome of one (B, ε) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub status: CellStatus,
    /// Mean steps to the hardest goal, when every seed reached it.
    pub steps_to_goal: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Reached,
    Unreached,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub batch_size: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub runs: BTreeMap<String, RunEntry>,
    #[serde(default)]
    pub cells: Vec<CellEntry>,
    #[serde(default)]
    pub batch_failures: Vec<BatchFailure>,
    /// Other files, by path relative to the registry root.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn file_stem(run_id: &str) -> String {
    run_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.+".contains(c) { c } else { '_' }).collect()
}

impl Registry {
    /// Opens the registry at `root` for the config with `config_hash`,
    /// creating it if absent. A registry made by a different config is an
    /// error rather than being overwritten.
    pub fn open(root: &Path, config_hash: &str) -> Result<Self, CliError> {
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            let m: Manifest = serde_json::from_slice(&read(&path)?)?;
            if m.config_hash != config_hash {
                return Err(CliError::Registry(format!(
                    "{} holds results of a different config (hash {}); use another output directory",
                    root.display(),
                    m.config_hash
                )));
            }
            m
        } else {
            Manifest { config_hash: config_hash.to_string(), ..Manifest::default() }
        };
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    /// Loads an existing registry without checking the config.
    pub fn load(root: &Path) -> Result<Option<Self>, CliError> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let manifest = serde_json::from_slice(&read(&path)?)?;
        Ok(Some(Self { root: root.to_path_buf(), manifest }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    pub fn save(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        write(&self.root.join(MANIFEST), text.as_bytes())
    }

    /// A previously recorded run, if its files are intact.
    pub fn lookup(&self, run_id: &str) -> Result<Option<TrainRun>, CliError> {
        let Some(entry) = self.manifest.runs.get(run_id) else {
            return Ok(None);
        };
        let json_path = self.root.join(&entry.json);
        let csv_path = self.root.join(&entry.csv);
        if !json_path.exists() || !csv_path.exists() {
            return Ok(None);
        }
        let bytes = read(&json_path)?;
        if sha256_hex(&bytes) != entry.json_sha256 || sha256_hex(&read(&csv_path)?) != entry.csv_sha256 {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    /// Writes a run's CSV and JSON and records them in the manifest.
    pub fn record(&mut self, run: &TrainRun) -> Result<(), CliError> {
        let stem = file_stem(&run.run_id);
        let csv_rel = format!("runs/{stem}.csv");
        let json_rel = format!("runs/{stem}.json");
        let csv = replay_metrics(run).to_csv_string()?;
        let json = serde_json::to_vec(run)?;
        write(&self.root.join(&csv_rel), csv.as_bytes())?;
        write(&self.root.join(&json_rel), &json)?;
        let last = run.records.last();
        self.manifest.runs.insert(
            run.run_id.clone(),
            RunEntry {
                batch_size: last.map_or(run.layout.global_batch(), |r| r.batch),
                learning_rate: run.optimizer.learning_rate,
                seed: run.seed,
                steps: run.steps(),
                termination: run.termination,
                csv: csv_rel,
                csv_sha256: sha256_hex(csv.as_bytes()),
                json: json_rel,
                json_sha256: sha256_hex(&json),
            },
        );
        Ok(())
    }

    /// Writes an artifact at `rel` (relative to the root) and records its hash.
    pub fn write_artifact(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        write(&path, bytes)?;
        self.manifest.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json_artifact<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_artifact(rel, text.as_bytes())
    }

    pub fn read_artifact(&self, rel: &str) -> Result<Option<Vec<u8>>, CliError> {
        if !self.manifest.artifacts.contains_key(rel) {
            return Ok(None);
        }
        Ok(Some(read(&self.root.join(rel))?))
    }

    /// Every file referenced by the manifest exists and matches its hash,
    /// and no unreferenced file sits in the registry.
    pub fn verify(&self) -> Result<(), CliError> {
        let mut expected: BTreeMap<String, &str> = BTreeMap::new();
        for entry in self.manifest.runs.values() {
            expected.insert(entry.csv.clone(), &entry.csv_sha256);
            expected.insert(entry.json.clone(), &entry.json_sha256);
        }
        for (rel, hash) in &self.manifest.artifacts {
            expected.insert(rel.clone(), hash);
        }
        for (rel, hash) in &expected {
            let path = self.root.join(rel);
            if !path.exists() {
                return Err(CliError::Registry(format!("missing file {rel}")));
            }
            if sha256_hex(&read(&path)?) != *hash {
                return Err(CliError::Registry(format!("hash mismatch for {rel}")));
            }
        }
        for rel in list_files(&self.root)? {
            if rel != MANIFEST && !expected.contains_key(&rel) {
                return Err(CliError::Registry(format!("orphan file {rel}")));
            }
        }
        Ok(())
    }
}

/// Files under `root`, as sorted `/`-separated relative paths.
pub fn list_files(root: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("listed under root");
                out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradnoise::landscape::QuadraticSpec;
    use gradnoise::optim::OptimizerConfig;
    use gradnoise::parsim::{train, FixedSchedule, TrainConfig, WorkerLayout};

    fn small_run() -> TrainRun {
        let task = QuadraticSpec::log_spaced(4, 0.1, 1.0, 1.0).build().unwrap();
        let mut cfg = TrainConfig::new(OptimizerConfig::sgd(0.3), WorkerLayout::new(4, 2).unwrap(), 300, 5);
        cfg.run_id = "B8-lr3.000000e-1-s5".into();
        train(&task, &cfg, &mut FixedSchedule).unwrap()
    }

    #[test]
    fn file_stems_are_path_safe() {
        assert_eq!(file_stem("B8-lr3.000000e-1-s5"), "B8-lr3.000000e-1-s5");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }

    #[test]
    fn recorded_run_reloads_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let run = small_run();
        let mut reg = Registry::open(dir.path(), "h").unwrap();
        assert!(reg.lookup(&run.run_id).unwrap().is_none());
        reg.record(&run).unwrap();
        reg.save().unwrap();
        let reopened = Registry::open(dir.path(), "h").unwrap();
        let loaded = reopened.lookup(&run.run_id).unwrap().unwrap();
        assert_eq!(loaded, run);
        let entry = &reopened.manifest().runs[&run.run_id];
        assert_eq!((entry.batch_size, entry.steps, entry.seed), (8, 300, 5));
        reopened.verify().unwrap();
    }

    #[test]
    fn corrupt_json_is_a_cache_miss() {
        let dir = tempfile::tempdir().unwrap();
        let run = small_run();
        let mut reg = Registry::open(dir.path(), "h").unwrap();
        reg.record(&run).unwrap();
        fs::write(dir.path().join(&reg.manifest().runs[&run.run_id].json), b"{}").unwrap();
        assert!(reg.lookup(&run.run_id).unwrap().is_none());
    }

    #[test]
    fn artifacts_are_hashed() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open(dir.path(), "h").unwrap();
        reg.write_artifact("x/y.txt", b"abc").unwrap();
        assert_eq!(
            reg.manifest().artifacts["x/y.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(reg.read_artifact("x/y.txt").unwrap().unwrap(), b"abc");
        assert!(reg.read_artifact("absent").unwrap().is_none());
        assert!(list_files(dir.path()).unwrap() == vec!["x/y.txt".to_string()]);
    }
}
