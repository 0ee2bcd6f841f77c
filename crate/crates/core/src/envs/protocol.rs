//! Line-delimited JSON wire protocol over TCP.
//!
//! Each request is one JSON object with an `"op"` field; each response is one
//! JSON object, or an error envelope `{"error", "kind", "retryable"}`.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::controller::{Controller, Gateway, SessionInfo, Started, WorkerInfo};
use super::error::ControllerError;
use super::task::{SessionState, StepResult};
use super::worker::Worker;
use crate::domain::{ToolCall, ToolSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    StartSample {
        task_id: String,
        sample_id: u64,
        seed: u64,
    },
    Interact {
        session_id: String,
        call: ToolCall,
    },
    Cancel {
        session_id: String,
    },
    ListSessions {
        #[serde(default)]
        status: Option<SessionState>,
    },
    ListWorkers,
    /// Worker-host operations, spoken between a controller and a remote
    /// worker.
    WorkerTasks,
    WorkerStart {
        handle: String,
        task_id: String,
        sample_id: u64,
        seed: u64,
    },
    WorkerInteract {
        handle: String,
        call: ToolCall,
    },
    WorkerRelease {
        handle: String,
    },
    Ping,
}

pub type Handler = Arc<dyn Fn(Request) -> Result<Value, ControllerError> + Send + Sync>;

pub fn error_envelope(e: &ControllerError) -> Value {
    json!({"error": e.to_string(), "kind": e.kind(), "retryable": e.retryable(), "detail": e.wire_message()})
}

fn to_value<T: Serialize>(x: T) -> Result<Value, ControllerError> {
    serde_json::to_value(x).map_err(|e| ControllerError::Transport(e.to_string()))
}

/// Serves the controller's public operations.
pub fn controller_handler(controller: Arc<Controller>) -> Handler {
    Arc::new(move |req| match req {
        Request::StartSample {
            task_id,
            sample_id,
            seed,
        } => to_value(controller.start_sample(&task_id, sample_id, seed)?),
        Request::Interact { session_id, call } => to_value(controller.interact(&session_id, &call)?),
        Request::Cancel { session_id } => {
            controller.cancel_session(&session_id)?;
            Ok(json!({"ok": true}))
        }
        Request::ListSessions { status } => Ok(json!({"sessions": controller.list_sessions(status)})),
        Request::ListWorkers => Ok(json!({"workers": controller.list_workers()})),
        Request::Ping => Ok(json!({"ok": true})),
        other => Err(ControllerError::BadRequest(format!("unsupported op {other:?}"))),
    })
}

/// Serves one worker's host operations.
pub fn worker_handler(worker: Arc<dyn Worker>) -> Handler {
    Arc::new(move |req| match req {
        Request::WorkerTasks => Ok(json!({"tasks": worker.tasks()})),
        Request::WorkerStart {
            handle,
            task_id,
            sample_id,
            seed,
        } => {
            let (observation, tools) = worker
                .start(&handle, &task_id, sample_id, seed)
                .map_err(ControllerError::WorkerFailure)?;
            Ok(json!({"observation": observation, "tools": tools}))
        }
        Request::WorkerInteract { handle, call } => {
            to_value(worker.interact(&handle, &call).map_err(ControllerError::WorkerFailure)?)
        }
        Request::WorkerRelease { handle } => {
            worker.release(&handle);
            Ok(json!({"ok": true}))
        }
        Request::Ping => Ok(json!({"ok": worker.ping()})),
        other => Err(ControllerError::BadRequest(format!("unsupported op {other:?}"))),
    })
}

/// A running TCP service. Dropping it does not stop it; call `shutdown`.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<thread::JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, handler: Handler) -> std::io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::spawn(move || {
            let mut conns = Vec::new();
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let h = handler.clone();
                        let f = flag.clone();
                        conns.push(thread::spawn(move || serve_connection(stream, h, f)));
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        tracing::warn!(error = %e, "accept failed");
                        thread::sleep(Duration::from_millis(5));
                    }
                }
                conns.retain(|c: &thread::JoinHandle<()>| !c.is_finished());
            }
            for c in conns {
                let _ = c.join();
            }
        });
        Ok(Server {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Stops accepting, lets open connections notice, and joins them.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the stop flag is set elsewhere.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(stream: TcpStream, handler: Handler, stop: Arc<AtomicBool>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let _ = stream.set_nodelay(true);
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) => {
                let reply = match serde_json::from_str::<Request>(line.trim()) {
                    Ok(req) => match handler(req) {
                        Ok(v) => v,
                        Err(e) => error_envelope(&e),
                    },
                    Err(e) => error_envelope(&ControllerError::BadRequest(e.to_string())),
                };
                line.clear();
                let mut out = reply.to_string();
                out.push('\n');
                if writer.write_all(out.as_bytes()).is_err() {
                    return;
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
            }
            Err(_) => return,
        }
    }
}

/// Blocking request/response client over one connection.
pub struct Client {
    conn: Mutex<(BufReader<TcpStream>, TcpStream)>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, ControllerError> {
        let stream = TcpStream::connect(addr).map_err(|e| ControllerError::Transport(e.to_string()))?;
        let _ = stream.set_nodelay(true);
        let writer = stream
            .try_clone()
            .map_err(|e| ControllerError::Transport(e.to_string()))?;
        Ok(Client {
            conn: Mutex::new((BufReader::new(stream), writer)),
        })
    }

    pub fn call(&self, req: &Request) -> Result<Value, ControllerError> {
        let t = |e: std::io::Error| ControllerError::Transport(e.to_string());
        let mut conn = self.conn.lock().unwrap();
        let mut line = serde_json::to_string(req).map_err(|e| ControllerError::Transport(e.to_string()))?;
        line.push('\n');
        conn.1.write_all(line.as_bytes()).map_err(t)?;
        let mut reply = String::new();
        if conn.0.read_line(&mut reply).map_err(t)? == 0 {
            return Err(ControllerError::Transport("connection closed".into()));
        }
        let v: Value = serde_json::from_str(&reply).map_err(|e| ControllerError::Transport(e.to_string()))?;
        if let Some(kind) = v.get("kind").and_then(Value::as_str) {
            if v.get("error").is_some() {
                let detail = v.get("detail").and_then(Value::as_str).unwrap_or("");
                return Err(ControllerError::from_wire(kind, detail));
            }
        }
        Ok(v)
    }

    fn typed<T: for<'de> Deserialize<'de>>(&self, req: &Request) -> Result<T, ControllerError> {
        serde_json::from_value(self.call(req)?).map_err(|e| ControllerError::Transport(e.to_string()))
    }
}

/// Gateway that talks to a controller service.
pub struct TcpGateway {
    client: Client,
}

impl TcpGateway {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ControllerError> {
        Ok(TcpGateway {
            client: Client::connect(addr)?,
        })
    }

    pub fn list_sessions(&self, status: Option<SessionState>) -> Result<Vec<SessionInfo>, ControllerError> {
        let v = self.client.call(&Request::ListSessions { status })?;
        serde_json::from_value(v["sessions"].clone()).map_err(|e| ControllerError::Transport(e.to_string()))
    }

    pub fn list_workers(&self) -> Result<Vec<WorkerInfo>, ControllerError> {
        let v = self.client.call(&Request::ListWorkers)?;
        serde_json::from_value(v["workers"].clone()).map_err(|e| ControllerError::Transport(e.to_string()))
    }
}

impl Gateway for TcpGateway {
    fn start_sample(&self, task_id: &str, sample_id: u64, seed: u64) -> Result<Started, ControllerError> {
        self.client.typed(&Request::StartSample {
            task_id: task_id.to_string(),
            sample_id,
            seed,
        })
    }

    fn interact(&self, session_id: &str, call: &ToolCall) -> Result<StepResult, ControllerError> {
        self.client.typed(&Request::Interact {
            session_id: session_id.to_string(),
            call: call.clone(),
        })
    }

    fn cancel(&self, session_id: &str) -> Result<(), ControllerError> {
        self.client
            .call(&Request::Cancel {
                session_id: session_id.to_string(),
            })
            .map(|_| ())
    }
}

/// Worker reached over the wire protocol.
pub struct RemoteWorker {
    client: Client,
    tasks: Vec<String>,
}

impl RemoteWorker {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ControllerError> {
        let client = Client::connect(addr)?;
        let v = client.call(&Request::WorkerTasks)?;
        let tasks = serde_json::from_value(v["tasks"].clone())
            .map_err(|e| ControllerError::Transport(e.to_string()))?;
        Ok(RemoteWorker { client, tasks })
    }
}

impl Worker for RemoteWorker {
    fn tasks(&self) -> Vec<String> {
        self.tasks.clone()
    }

    fn start(
        &self,
        handle: &str,
        task_id: &str,
        sample_id: u64,
        seed: u64,
    ) -> Result<(String, Vec<ToolSchema>), String> {
        #[derive(Deserialize)]
        struct Reply {
            observation: String,
            tools: Vec<ToolSchema>,
        }
        let r: Reply = self
            .client
            .typed(&Request::WorkerStart {
                handle: handle.to_string(),
                task_id: task_id.to_string(),
                sample_id,
                seed,
            })
            .map_err(|e| e.to_string())?;
        Ok((r.observation, r.tools))
    }

    fn interact(&self, handle: &str, call: &ToolCall) -> Result<StepResult, String> {
        self.client
            .typed(&Request::WorkerInteract {
                handle: handle.to_string(),
                call: call.clone(),
            })
            .map_err(|e| e.to_string())
    }

    fn release(&self, handle: &str) {
        let _ = self.client.call(&Request::WorkerRelease {
            handle: handle.to_string(),
        });
    }

    fn ping(&self) -> bool {
        self.client
            .call(&Request::Ping)
            .map(|v| v["ok"].as_bool() == Some(true))
            .unwrap_or(false)
    }
}
