//! `eval`: per-task success rate of one snapshot.

use std::sync::Arc;

use agentrl_core::algorithms::LinearSoftmaxPolicy;
use agentrl_core::envs::TaskRegistry;
use agentrl_core::pipeline::{evaluate, EvalConfig, EvalRow, RunConfig};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub tasks: Vec<String>,
    /// Passes over the sample set; mean and std are taken across passes.
    pub repeats: usize,
    pub samples: u64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalOptions {
            tasks: vec!["bisect".into(), "kvstore".into(), "gridtext".into()],
            repeats: e.repeats,
            samples: e.samples,
            temperature: e.temperature,
            seed: 0,
        }
    }
}

pub fn cmd_eval(policy: &LinearSoftmaxPolicy, opts: &EvalOptions) -> Result<Vec<EvalRow>, CliError> {
    if opts.repeats == 0 || opts.samples == 0 {
        return Err(CliError::Config("n and samples must be positive".into()));
    }
    if !(opts.temperature >= 0.0 && opts.temperature.is_finite()) {
        return Err(CliError::Config("temperature must be finite and non-negative".into()));
    }
    let registry = TaskRegistry::standard();
    let specs = opts
        .tasks
        .iter()
        .map(|t| {
            registry
                .spec(t)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("unknown task {t:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = RunConfig {
        tasks: opts.tasks.clone(),
        seed: opts.seed,
        eval: EvalConfig {
            samples: opts.samples,
            repeats: opts.repeats,
            temperature: opts.temperature,
            ..EvalConfig::default()
        },
        ..RunConfig::default()
    };
    let gateway = crate::train::local_gateway(&cfg);
    let policy = Arc::new(policy.clone());
    Ok(evaluate(&policy, gateway.as_ref(), &specs, &cfg, policy.version()))
}

/// CSV with a `# n=...` comment line ahead of the header.
pub fn to_csv(rows: &[EvalRow], opts: &EvalOptions) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "success_mean", "success_std", "n", "episodes_per_repeat"])
        .map_err(|e| CliError::Failed(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.task.clone(),
            r.success_mean.to_string(),
            r.success_std.to_string(),
            r.repeats.to_string(),
            r.episodes_per_repeat.to_string(),
        ])
        .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?)
        .expect("csv output is utf-8");
    Ok(format!(
        "# n={} temperature={} samples={} seed={}\n{body}",
        opts.repeats, opts.temperature, opts.samples, opts.seed
    ))
}
