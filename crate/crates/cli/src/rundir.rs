//! Run directories and their manifest.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use agentrl_core::pipeline::RunConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const EVAL: &str = "eval.csv";
pub const EVENTS: &str = "events.jsonl";
pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const POLICY: &str = "policy.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub metrics_csv: String,
    pub eval_csv: String,
    pub event_log: String,
    pub trajectory_jsonl: Option<String>,
    pub policy: String,
    pub summary: String,
}

/// Written once, before training starts, and never touched again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Every field, defaults included.
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub outputs: OutputPaths,
    pub code_version: String,
}

impl RunManifest {
    pub fn new(run_id: &str, config: &RunConfig) -> Self {
        RunManifest {
            run_id: run_id.to_string(),
            config: config.clone(),
            seeds: vec![config.seed],
            outputs: OutputPaths {
                metrics_csv: METRICS.into(),
                eval_csv: EVAL.into(),
                event_log: EVENTS.into(),
                trajectory_jsonl: config.write_trajectories.then(|| TRAJECTORIES.into()),
                policy: POLICY.into(),
                summary: SUMMARY.into(),
            },
            code_version: format!("agentrl {}", env!("CARGO_PKG_VERSION")),
        }
    }

    pub fn read(run_dir: &Path) -> Result<Self, CliError> {
        let p = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(format!("reading {}", p.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    }

    /// Fails rather than overwrite an existing manifest.
    pub fn write_new(&self, run_dir: &Path) -> Result<(), CliError> {
        use std::io::Write;
        let p = run_dir.join(MANIFEST);
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&p)
            .map_err(|e| CliError::io(format!("creating {}", p.display()), e))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        f.write_all(text.as_bytes())
            .map_err(|e| CliError::io(format!("writing {}", p.display()), e))
    }
}

/// Creates the next unused `run-NNNN` directory under `out`.
pub fn allocate(out: &Path) -> Result<(String, PathBuf), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let mut n = fs::read_dir(out)
        .map_err(|e| CliError::io(format!("listing {}", out.display()), e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("run-")?.parse::<u32>().ok())
        .max()
        .map_or(1, |m| m + 1);
    loop {
        let id = format!("run-{n:04}");
        let dir = out.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(CliError::io(format!("creating {}", dir.display()), e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_increase_and_never_reuse() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, _) = allocate(tmp.path()).unwrap();
        let (b, _) = allocate(tmp.path()).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("run-0001", "run-0002"));
        fs::create_dir(tmp.path().join("run-0007")).unwrap();
        assert_eq!(allocate(tmp.path()).unwrap().0, "run-0008");
    }

    #[test]
    fn manifest_is_write_once() {
        let tmp = tempfile::tempdir().unwrap();
        let m = RunManifest::new("run-0001", &RunConfig::default());
        m.write_new(tmp.path()).unwrap();
        assert!(m.write_new(tmp.path()).is_err());
        assert_eq!(RunManifest::read(tmp.path()).unwrap(), m);
    }
}
