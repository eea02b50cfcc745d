use std::net::TcpStream;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use base64::Engine;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

use usscan_cli::protocol::{Command, ServerMessage, StateMessage};
use usscan_cli::service::{serve_workflow, ServiceHandle, ServiceOptions};
use usscan_cli::trace::replay;
use usscan_cli::workflow::{Phase, Workflow};
use usscan_core::config::SceneConfig;
use usscan_core::control::ControlMode;

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn landed() -> &'static Mutex<Workflow> {
    static CELL: OnceLock<Mutex<Workflow>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut wf = Workflow::new(SceneConfig::default()).unwrap();
        wf.run_to(Phase::Landed).unwrap();
        Mutex::new(wf)
    })
}

fn start(opts: ServiceOptions) -> ServiceHandle {
    let mut wf = landed().lock().unwrap();
    serve_workflow(&mut wf, ServiceOptions { bind: "127.0.0.1:0".into(), ..opts }).unwrap()
}

fn client(handle: &ServiceHandle) -> Client {
    let (mut ws, _) = connect(handle.url()).unwrap();
    match ws.get_mut() {
        MaybeTlsStream::Plain(s) => s.set_read_timeout(Some(Duration::from_secs(5))).unwrap(),
        _ => unreachable!(),
    }
    match next_message(&mut ws) {
        ServerMessage::Hello { chart, publish_hz, .. } => {
            assert!(!chart.faces.is_empty());
            assert_eq!(chart.uv.len(), chart.vertices.len());
            assert_eq!(publish_hz, 60.0);
        }
        other => panic!("expected hello, got {other:?}"),
    }
    ws
}

fn send(ws: &mut Client, cmd: &Command) {
    ws.send(Message::text(cmd.to_json())).unwrap();
}

fn next_message(ws: &mut Client) -> ServerMessage {
    loop {
        if let Message::Text(t) = ws.read().unwrap() {
            return ServerMessage::parse(t.as_str()).unwrap();
        }
    }
}

fn next_state(ws: &mut Client) -> StateMessage {
    loop {
        if let ServerMessage::State(s) = next_message(ws) {
            return s;
        }
    }
}

#[test]
fn streams_decimated_state() {
    let handle = start(ServiceOptions { frame_every: 0, ..Default::default() });
    let mut ws = client(&handle);
    let a = next_state(&mut ws);
    let b = next_state(&mut ws);
    assert_eq!(b.tick - a.tick, 50);
    assert_eq!(a.phase, Phase::Landed);
    assert_eq!(a.mode, ControlMode::Autonomous);
    assert!(a.wrench[2] < -0.2, "probe should be in contact: {:?}", a.wrench);
    let q = a.probe_pose.quaternion;
    assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    handle.shutdown().unwrap();
}

#[test]
fn teleop_delta_round_trip() {
    let handle = start(ServiceOptions { frame_every: 0, ..Default::default() });
    let mut ws = client(&handle);
    send(&mut ws, &Command::SetMode { mode: ControlMode::Teleop });
    let before = loop {
        let s = next_state(&mut ws);
        if s.mode == ControlMode::Teleop {
            break s;
        }
    };
    // Below the per-tick rate limit, so one tick applies all of it.
    let delta = 1e-5;
    send(&mut ws, &Command::TeleopDelta { delta: [delta, 0.0] });
    let mut seen = 0;
    let after = loop {
        let s = next_state(&mut ws);
        seen += 1;
        if s.rho_d[0] != before.rho_d[0] {
            break s;
        }
        assert!(seen < 5, "delta not reflected");
    };
    assert_eq!(after.rho_d[0], before.rho_d[0] + delta);
    assert_eq!(after.rho_d[1], before.rho_d[1]);
    assert!(seen <= 2, "reflected after {seen} states");
    handle.shutdown().unwrap();
}

#[test]
fn malformed_command_gets_error_frame() {
    let handle = start(ServiceOptions { frame_every: 0, ..Default::default() });
    let mut ws = client(&handle);
    let t0 = next_state(&mut ws).tick;
    for bad in ["{", r#"{"type":"warp"}"#, r#"{"v":9,"type":"stop"}"#, r#"{"type":"set_margin","margin":-0.1}"#] {
        ws.send(Message::text(bad)).unwrap();
        loop {
            match next_message(&mut ws) {
                ServerMessage::Error { message, .. } => {
                    assert!(!message.is_empty());
                    break;
                }
                ServerMessage::State(_) => {}
                other => panic!("unexpected {other:?}"),
            }
        }
    }
    send(&mut ws, &Command::TeleopDelta { delta: [0.01, 0.0] });
    let rejected = loop {
        if let ServerMessage::Error { message, .. } = next_message(&mut ws) {
            break message;
        }
    };
    assert!(rejected.contains("teleop"), "{rejected}");
    let later = next_state(&mut ws);
    assert!(later.tick > t0);
    assert_eq!(later.phase, Phase::Landed);
    handle.shutdown().unwrap();
}

#[test]
fn disconnect_freezes_setpoint() {
    let handle = start(ServiceOptions { frame_every: 0, ..Default::default() });
    let mut ws = client(&handle);
    send(&mut ws, &Command::SetMode { mode: ControlMode::Teleop });
    let start_s = next_state(&mut ws).rho_d[0];
    // Large enough to take about half a second at the rate limit.
    send(&mut ws, &Command::TeleopDelta { delta: [0.1, 0.0] });
    let moving = loop {
        let s = next_state(&mut ws);
        if s.rho_d[0] > start_s {
            break s;
        }
    };
    drop(ws);
    std::thread::sleep(Duration::from_millis(50));
    let mut ws = client(&handle);
    let a = next_state(&mut ws);
    std::thread::sleep(Duration::from_millis(100));
    let mut b = next_state(&mut ws);
    while b.tick < a.tick + 300 {
        b = next_state(&mut ws);
    }
    assert_eq!(a.rho_d, b.rho_d, "setpoint must hold after the drop");
    assert!(a.rho_d[0] < start_s + 0.1 - 1e-3, "delta must stop: {} vs {}", a.rho_d[0], moving.rho_d[0]);
    handle.shutdown().unwrap();
}

#[test]
fn frames_served_by_id() {
    let handle = start(ServiceOptions { frame_every: 100, ..Default::default() });
    let mut ws = client(&handle);
    let deadline = Instant::now() + Duration::from_secs(10);
    let id = loop {
        let s = next_state(&mut ws);
        if let Some(id) = s.us_frame {
            break id;
        }
        assert!(Instant::now() < deadline, "no frame rendered");
    };
    send(&mut ws, &Command::GetFrame { id });
    let frame = loop {
        if let ServerMessage::Frame(f) = next_message(&mut ws) {
            break f;
        }
    };
    assert_eq!(frame.id, id);
    let bytes = base64::engine::general_purpose::STANDARD.decode(frame.pgm_base64).unwrap();
    let header = format!("P5\n{} {}\n255\n", frame.width, frame.height);
    assert!(bytes.starts_with(header.as_bytes()));
    assert_eq!(bytes.len(), header.len() + frame.width * frame.height);
    assert!(bytes[header.len()..].iter().any(|b| *b > 0), "in-contact frame should show tissue");
    send(&mut ws, &Command::GetFrame { id: id + 1_000_000 });
    loop {
        match next_message(&mut ws) {
            ServerMessage::Error { message, .. } => {
                assert!(message.contains("not available"));
                break;
            }
            ServerMessage::State(_) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
    handle.shutdown().unwrap();
}

#[test]
fn recorded_session_replays() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(ServiceOptions {
        frame_every: 0,
        realtime: false,
        max_ticks: Some(1500),
        record: Some(dir.path().to_path_buf()),
        ..Default::default()
    });
    let report = handle.wait().unwrap();
    assert_eq!(report.ticks, 1500);
    assert_eq!(report.dropped_samples, 0);
    let r = replay(dir.path()).unwrap();
    assert_eq!(r.ticks, 1500);
    assert!(r.max_error <= 1e-9, "replay error {}", r.max_error);
    let rows = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap().lines().count();
    assert_eq!(rows, 1501);
}
