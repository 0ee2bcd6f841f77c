//! Environment service: toy tasks, workers that host them, and the
//! controller that routes sessions to workers.

pub mod bisect;
pub mod clock;
pub mod controller;
pub mod error;
pub mod gridtext;
pub mod kvstore;
pub mod protocol;
pub mod task;
pub mod worker;

pub use clock::{Clock, ManualClock, SystemClock};
pub use controller::{
    local_controller, Controller, ControllerConfig, Gateway, Health, SessionInfo, Started, WorkerInfo,
};
pub use error::ControllerError;
pub use protocol::{controller_handler, worker_handler, Client, RemoteWorker, Request, Server, TcpGateway};
pub use task::{
    episode_seed, EnvOutcome, EnvSession, Environment, SessionState, StepResult, TaskFactory, TaskRegistry,
};
pub use worker::{LocalWorker, Worker};
