//! `report`: throughput summary recomputed from a run's event log.

use std::io::{BufRead, BufReader};
use std::path::Path;

use agentrl_core::pipeline::{throughput_report, Event, ThroughputReport};

use crate::rundir::{RunManifest, EVENTS};
use crate::CliError;

pub fn read_events(path: &Path) -> Result<Vec<Event>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        events.push(e);
    }
    Ok(events)
}

pub fn cmd_report(run_dir: &Path) -> Result<ThroughputReport, CliError> {
    let log = RunManifest::read(run_dir)
        .map(|m| m.outputs.event_log)
        .unwrap_or_else(|_| EVENTS.to_string());
    let events = read_events(&run_dir.join(log))?;
    throughput_report(&events).map_err(|e| CliError::Config(format!("{}: {e}", run_dir.display())))
}
