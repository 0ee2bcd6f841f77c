use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use agentrl_core::domain::ToolCall;
use agentrl_core::envs::bisect::BisectGuess;
use agentrl_core::envs::{
    controller_handler, local_controller, worker_handler, Clock, Controller, ControllerConfig, ControllerError,
    Gateway, LocalWorker, ManualClock, RemoteWorker, Server, SessionState, SystemClock, TaskRegistry, TcpGateway,
};

fn serve(ctl: &Arc<Controller>) -> Server {
    Server::bind("127.0.0.1:0", controller_handler(ctl.clone())).unwrap()
}

/// Plays bisect by halving the interval; returns the observations seen.
fn play_bisect(gw: &dyn Gateway, sample: u64) -> Vec<String> {
    let started = gw.start_sample("bisect", sample, 0).unwrap();
    let mut seen = vec![started.observation];
    let (mut lo, mut hi) = (0i64, 15i64);
    loop {
        let mid = (lo + hi) / 2;
        let r = gw.interact(&started.session_id, &ToolCall::new("query").arg("x", mid)).unwrap();
        seen.push(r.observation.clone());
        match r.observation.as_str() {
            "higher" => lo = mid + 1,
            "lower" => hi = mid - 1,
            _ => {
                let r = gw.interact(&started.session_id, &ToolCall::new("answer").arg("x", mid)).unwrap();
                assert!(r.done);
                assert_eq!(r.correct, Some(true));
                return seen;
            }
        }
    }
}

#[test]
fn tcp_gateway_matches_in_process_play() {
    let ctl = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 2);
    let server = serve(&ctl);
    let gw = TcpGateway::connect(server.addr()).unwrap();
    let local = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
    for s in 0..10 {
        assert_eq!(play_bisect(&gw, s), play_bisect(local.as_ref(), s));
    }
    assert_eq!(gw.list_workers().unwrap().len(), 2);
    assert!(gw.list_sessions(Some(SessionState::Running)).unwrap().is_empty());
    assert_eq!(ctl.live_total(), 0);
    server.shutdown();
}

#[test]
fn errors_cross_the_wire_with_their_kind() {
    let ctl = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
    let server = serve(&ctl);
    let gw = TcpGateway::connect(server.addr()).unwrap();
    assert!(matches!(gw.start_sample("nope", 0, 0), Err(ControllerError::UnknownTask(_))));
    assert!(matches!(
        gw.interact("missing", &ToolCall::new("query").arg("x", 1)),
        Err(ControllerError::UnknownSession(_))
    ));

    let s = gw.start_sample("bisect", 2, 0).unwrap();
    let hidden = BisectGuess::hidden_for(2, 0);
    gw.interact(&s.session_id, &ToolCall::new("answer").arg("x", hidden)).unwrap();
    assert!(matches!(
        gw.interact(&s.session_id, &ToolCall::new("answer").arg("x", hidden)),
        Err(ControllerError::SessionTerminal(_))
    ));
    server.shutdown();
}

#[test]
fn malformed_lines_get_an_error_reply_and_the_connection_survives() {
    let ctl = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
    let server = serve(&ctl);
    let mut stream = TcpStream::connect(server.addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut ask = |line: &str| {
        stream.write_all(format!("{line}\n").as_bytes()).unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        serde_json::from_str::<serde_json::Value>(&reply).unwrap()
    };
    let bad = ask("{not json");
    assert_eq!(bad["kind"], "bad_request");
    let ok = ask(r#"{"op":"start_sample","task_id":"gridtext","sample_id":0,"seed":0}"#);
    assert!(ok["session_id"].is_string());
    assert_eq!(ask(r#"{"op":"ping"}"#)["ok"], true);
    server.shutdown();
}

#[test]
fn capacity_is_enforced_and_freed_by_cancel() {
    let ctl = Arc::new(Controller::new(ControllerConfig::default(), Arc::new(SystemClock::new())));
    ctl.register_worker(Arc::new(LocalWorker::new(TaskRegistry::standard())), Some(2));
    let a = ctl.start_sample("kvstore", 0, 0).unwrap();
    ctl.start_sample("kvstore", 1, 0).unwrap();
    assert!(matches!(ctl.start_sample("kvstore", 2, 0), Err(ControllerError::NoCapacity)));
    ctl.cancel_session(&a.session_id).unwrap();
    ctl.cancel_session(&a.session_id).unwrap();
    ctl.start_sample("kvstore", 2, 0).unwrap();
    assert_eq!(ctl.live_total(), 2);
    assert_eq!(ctl.drain(), 2);
    assert_eq!(ctl.live_total(), 0);
}

#[test]
fn sessions_run_on_a_remote_worker() {
    let host = Server::bind("127.0.0.1:0", worker_handler(Arc::new(LocalWorker::new(TaskRegistry::standard())))).unwrap();
    let ctl = Arc::new(Controller::new(ControllerConfig::default(), Arc::new(SystemClock::new())));
    ctl.register_worker(Arc::new(RemoteWorker::connect(host.addr()).unwrap()), Some(4));
    let local = local_controller(ControllerConfig::default(), Arc::new(SystemClock::new()), 1);
    assert_eq!(play_bisect(ctl.as_ref(), 5), play_bisect(local.as_ref(), 5));
    assert_eq!(ctl.live_total(), 0);
    host.shutdown();
}

#[test]
fn idle_sessions_time_out_and_later_calls_see_it() {
    let clock = Arc::new(ManualClock::new());
    let config = ControllerConfig {
        interaction_timeout: Duration::from_secs(5),
        ..ControllerConfig::default()
    };
    let ctl = local_controller(config, clock.clone(), 1);
    let idle = ctl.start_sample("bisect", 0, 0).unwrap();
    clock.advance(Duration::from_secs(3));
    let busy = ctl.start_sample("bisect", 1, 0).unwrap();
    clock.advance(Duration::from_secs(3));
    assert_eq!(ctl.reap_timeouts(clock.now()), vec![idle.session_id.clone()]);
    assert!(ctl.interact(&idle.session_id, &ToolCall::new("query").arg("x", 3)).is_err());
    assert!(ctl.interact(&busy.session_id, &ToolCall::new("query").arg("x", 3)).is_ok());
    let timed_out = ctl.list_sessions(Some(SessionState::Timeout));
    assert_eq!(timed_out.len(), 1);
    assert_eq!(timed_out[0].session_id, idle.session_id);
}
