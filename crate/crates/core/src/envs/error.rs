use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("no capacity")]
    NoCapacity,
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session terminal")]
    SessionTerminal(String),
    #[error("session busy")]
    SessionBusy(String),
    #[error("unknown worker {0}")]
    UnknownWorker(u64),
    #[error("worker {0} deregistered")]
    Deregistered(u64),
    #[error("worker failure: {0}")]
    WorkerFailure(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ControllerError {
    /// Stable machine-readable name used in wire error envelopes.
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerError::UnknownTask(_) => "unknown_task",
            ControllerError::NoCapacity => "no_capacity",
            ControllerError::UnknownSession(_) => "unknown_session",
            ControllerError::SessionTerminal(_) => "session_terminal",
            ControllerError::SessionBusy(_) => "session_busy",
            ControllerError::UnknownWorker(_) => "unknown_worker",
            ControllerError::Deregistered(_) => "deregistered",
            ControllerError::WorkerFailure(_) => "worker_failure",
            ControllerError::Transport(_) => "transport",
            ControllerError::BadRequest(_) => "bad_request",
        }
    }

    pub fn retryable(&self) -> bool {
        matches!(
            self,
            ControllerError::NoCapacity | ControllerError::SessionBusy(_) | ControllerError::Transport(_)
        )
    }

    /// Rebuilds an error from its wire envelope.
    pub fn from_wire(kind: &str, message: &str) -> Self {
        let m = message.to_string();
        match kind {
            "unknown_task" => ControllerError::UnknownTask(m),
            "no_capacity" => ControllerError::NoCapacity,
            "unknown_session" => ControllerError::UnknownSession(m),
            "session_terminal" => ControllerError::SessionTerminal(m),
            "session_busy" => ControllerError::SessionBusy(m),
            "unknown_worker" => ControllerError::UnknownWorker(m.parse().unwrap_or(0)),
            "deregistered" => ControllerError::Deregistered(m.parse().unwrap_or(0)),
            "worker_failure" => ControllerError::WorkerFailure(m),
            "bad_request" => ControllerError::BadRequest(m),
            _ => ControllerError::Transport(m),
        }
    }

    /// The payload `from_wire` expects back.
    pub fn wire_message(&self) -> String {
        match self {
            ControllerError::UnknownTask(m)
            | ControllerError::UnknownSession(m)
            | ControllerError::SessionTerminal(m)
            | ControllerError::SessionBusy(m)
            | ControllerError::WorkerFailure(m)
            | ControllerError::Transport(m)
            | ControllerError::BadRequest(m) => m.clone(),
            ControllerError::UnknownWorker(id) | ControllerError::Deregistered(id) => id.to_string(),
            ControllerError::NoCapacity => String::new(),
        }
    }
}
