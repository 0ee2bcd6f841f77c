//! `serve-controller`: the environment controller as a TCP service.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentrl_core::envs::{controller_handler, Controller, ControllerConfig, LocalWorker, Server, SystemClock, TaskRegistry};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: String,
    pub workers: usize,
    pub capacity: usize,
    pub interaction_timeout: f64,
    /// Seconds; `None` serves until the stop flag is raised.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServeSummary {
    pub addr: String,
    pub workers: usize,
    /// Sessions still running at shutdown, cancelled by the drain.
    pub drained: usize,
    /// Live sessions left after the drain; zero on a clean exit.
    pub leaked: usize,
}

/// A flag raised by Ctrl-C. Only the first call installs the handler.
pub fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        tracing::warn!(error = %e, "no interrupt handler");
    }
    flag
}

/// Serves until `stop` is raised or the duration runs out, then stops
/// accepting, cancels running sessions and reports what was left.
/// `on_ready` receives the bound address.
pub fn cmd_serve_controller(
    opts: &ServeOptions,
    stop: Arc<AtomicBool>,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<ServeSummary, CliError> {
    if opts.workers == 0 || opts.capacity == 0 {
        return Err(CliError::Config("workers and capacity must be positive".into()));
    }
    if !(opts.interaction_timeout > 0.0 && opts.interaction_timeout.is_finite()) {
        return Err(CliError::Config("interaction timeout must be positive".into()));
    }
    let ctl = Arc::new(Controller::new(
        ControllerConfig {
            interaction_timeout: Duration::from_secs_f64(opts.interaction_timeout),
            default_capacity: opts.capacity,
            ..ControllerConfig::default()
        },
        Arc::new(SystemClock::new()),
    ));
    for _ in 0..opts.workers {
        ctl.register_worker(Arc::new(LocalWorker::new(TaskRegistry::standard())), Some(opts.capacity));
    }
    let server = Server::bind(opts.bind.as_str(), controller_handler(ctl.clone())).map_err(|source| CliError::Bind {
        addr: opts.bind.clone(),
        source,
    })?;
    let addr = server.addr();
    tracing::info!(%addr, workers = opts.workers, "controller listening");
    on_ready(addr);

    let maint_stop = Arc::new(AtomicBool::new(false));
    let maint = ctl.spawn_maintenance(Duration::from_millis(100), maint_stop.clone());
    let t0 = Instant::now();
    while !stop.load(Ordering::SeqCst) && opts.duration.is_none_or(|d| t0.elapsed().as_secs_f64() < d) {
        std::thread::sleep(Duration::from_millis(20));
    }
    server.shutdown();
    maint_stop.store(true, Ordering::SeqCst);
    let _ = maint.join();
    let drained = ctl.drain();
    let leaked = ctl.live_total();
    tracing::info!(drained, leaked, "controller stopped");
    Ok(ServeSummary {
        addr: addr.to_string(),
        workers: opts.workers,
        drained,
        leaked,
    })
}
