//! Timestamped pipeline events and the throughput summary derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStarted,
    GroupStarted,
    GroupEnqueued,
    GroupDropped,
    EngineBlocked,
    TrainStarted,
    TrainFinished,
    RunFinished,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds since run start, on whichever clock the runtime uses.
    pub ts: f64,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_id: Option<usize>,
    pub version: u64,
    pub queue_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staleness: Option<f64>,
}

impl Event {
    pub fn new(ts: f64, event: EventKind, version: u64, queue_size: usize) -> Self {
        Event {
            ts,
            event,
            engine_id: None,
            version,
            queue_size,
            groups: None,
            trajectories: None,
            staleness: None,
        }
    }

    pub fn engine(mut self, id: usize) -> Self {
        self.engine_id = Some(id);
        self
    }

    pub fn batch(mut self, groups: usize, trajectories: usize, staleness: f64) -> Self {
        self.groups = Some(groups);
        self.trajectories = Some(trajectories);
        self.staleness = Some(staleness);
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub elapsed_s: f64,
    pub groups: usize,
    pub trajectories: usize,
    pub groups_per_s: f64,
    pub trajectories_per_s: f64,
    /// Share of the run the trainer spent outside a training step.
    pub consumer_idle_fraction: f64,
    /// Group-weighted mean lag between trainer version and group version.
    pub mean_staleness: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("event log is empty")]
    EmptyLog,
    #[error("event log spans no time")]
    ZeroSpan,
}

/// Summarizes a run from its events: consumed groups and trajectories per
/// second over the log's span, trainer idle share, and mean staleness.
pub fn throughput_report(events: &[Event]) -> Result<ThroughputReport, ReportError> {
    let first = events.first().ok_or(ReportError::EmptyLog)?;
    let start = events.iter().map(|e| e.ts).fold(first.ts, f64::min);
    let end = events.iter().map(|e| e.ts).fold(first.ts, f64::max);
    let elapsed = end - start;
    if !(elapsed > 0.0) {
        return Err(ReportError::ZeroSpan);
    }
    let mut groups = 0;
    let mut trajectories = 0;
    let mut lag_sum = 0.0;
    let mut busy = 0.0;
    let mut open: Option<f64> = None;
    for e in events {
        match e.event {
            EventKind::TrainStarted => {
                let g = e.groups.unwrap_or(0);
                groups += g;
                trajectories += e.trajectories.unwrap_or(0);
                lag_sum += e.staleness.unwrap_or(0.0) * g as f64;
                open = Some(e.ts);
            }
            EventKind::TrainFinished => {
                if let Some(t0) = open.take() {
                    busy += e.ts - t0;
                }
            }
            _ => {}
        }
    }
    if let Some(t0) = open {
        busy += end - t0;
    }
    Ok(ThroughputReport {
        elapsed_s: elapsed,
        groups,
        trajectories,
        groups_per_s: groups as f64 / elapsed,
        trajectories_per_s: trajectories as f64 / elapsed,
        consumer_idle_fraction: (1.0 - busy / elapsed).clamp(0.0, 1.0),
        mean_staleness: if groups > 0 { lag_sum / groups as f64 } else { 0.0 },
    })
}
