//! WebSocket streaming service.
//!
//! Roles and the queues between them:
//! - the control loop thread owns a [`ControlLoop`], drains the inbound
//!   command queue at each tick boundary and pushes decimated state snapshots
//!   (and optionally every tick's sample) into bounded drop-oldest queues;
//! - the publisher fans snapshots and command errors out to client outboxes;
//! - one thread per client reads commands and writes its outbox;
//! - the renderer turns probe poses into ultrasound frames;
//! - the recorder streams full-rate samples to disk.
//!
//! Nothing the loop touches can block it.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use base64::Engine;
use crossbeam_queue::ArrayQueue;
use tungstenite::{Message, WebSocket};

use usscan_core::config::SceneConfig;
use usscan_core::kinematics::{JointState, JointVector};
use usscan_core::sim::{LandingTrace, SimState, SliceParams, TraceSample, VoxelPhantom, World};

use crate::control_loop::ControlLoop;
use crate::protocol::{parse_command, ChartMessage, Command, FrameMessage, ServerMessage, StateMessage, PROTOCOL_VERSION};
use crate::trace::{metadata, trace_row, TracePaths, TAU_COLUMNS, TRACE_COLUMNS};
use crate::workflow::{stage_rng, Phase, Workflow};

const IDLE: Duration = Duration::from_millis(1);
const CLIENT_POLL: Duration = Duration::from_millis(2);
const FRAME_CACHE: usize = 16;
const RENDER_STREAM: u64 = 12;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Address to bind, e.g. `127.0.0.1:8765`; port 0 picks a free one.
    pub bind: String,
    pub publish_hz: f64,
    pub state_queue: usize,
    pub command_queue: usize,
    pub client_queue: usize,
    /// Pace ticks to wall-clock time; otherwise run as fast as possible.
    pub realtime: bool,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
    /// Ticks between ultrasound frames; 0 disables rendering.
    pub frame_every: u64,
    /// Directory receiving a full-rate trace of the session.
    pub record: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            publish_hz: 60.0,
            state_queue: 64,
            command_queue: 256,
            client_queue: 128,
            realtime: true,
            max_ticks: None,
            frame_every: 300,
            record: None,
        }
    }
}

/// What the renderer needs to draw ultrasound frames.
#[derive(Clone)]
pub struct FrameSource {
    pub world: Arc<World>,
    pub volume: Arc<VoxelPhantom>,
    pub params: SliceParams,
    pub seed: u64,
}

enum Inbound {
    Command { client: u64, command: Command },
    ClientLost,
}

/// Per-tick timing collected by the loop thread.
#[derive(Debug, Clone, Default)]
pub struct LoopReport {
    pub ticks: u64,
    /// Wall time of each tick's work, excluding the pacing sleep (ns).
    pub tick_nanos: Vec<u64>,
    /// Snapshots overwritten before the publisher took them.
    pub dropped_states: u64,
    pub published_states: u64,
    /// Samples the recorder could not keep up with.
    pub dropped_samples: u64,
    pub commands_applied: u64,
    pub final_state: Option<StateMessage>,
    pub final_joints: Option<JointState>,
    pub error: Option<String>,
}

impl LoopReport {
    fn sorted(&self) -> Vec<u64> {
        let mut v = self.tick_nanos.clone();
        v.sort_unstable();
        v
    }

    /// Nearest-rank percentile of the tick durations (ns).
    pub fn percentile(&self, p: f64) -> u64 {
        let v = self.sorted();
        if v.is_empty() {
            return 0;
        }
        let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
        v[rank.min(v.len()) - 1]
    }

    pub fn median(&self) -> u64 {
        self.percentile(50.0)
    }

    pub fn max(&self) -> u64 {
        self.tick_nanos.iter().copied().max().unwrap_or(0)
    }
}

struct Shared {
    stop: AtomicBool,
    loop_done: AtomicBool,
    commands: ArrayQueue<Inbound>,
    states: ArrayQueue<StateMessage>,
    errors: ArrayQueue<(u64, String)>,
    clients: Mutex<Vec<(u64, Arc<ArrayQueue<String>>)>>,
    next_client: AtomicU64,
    frame_requests: ArrayQueue<(u64, JointVector)>,
    frames: Mutex<VecDeque<(u64, Vec<u8>, usize, usize)>>,
    /// Id of the newest rendered frame plus one; zero when none.
    latest_frame: AtomicU64,
}

struct Recording {
    paths: TracePaths,
    config: SceneConfig,
    initial: JointState,
}

pub struct ServiceHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    control: Option<JoinHandle<LoopReport>>,
    workers: Vec<JoinHandle<()>>,
    record: Option<Recording>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn is_finished(&self) -> bool {
        self.shared.loop_done.load(Ordering::Acquire)
    }

    /// Blocks until the loop stops by itself (tick limit or error), then shuts down.
    pub fn wait(mut self) -> io::Result<LoopReport> {
        self.wait_inner()
    }

    /// Stops every thread and returns the loop's timing report.
    pub fn shutdown(mut self) -> io::Result<LoopReport> {
        self.shared.stop.store(true, Ordering::Release);
        self.wait_inner()
    }

    fn wait_inner(&mut self) -> io::Result<LoopReport> {
        let report = self.control.take().map(|h| h.join().expect("control loop panicked")).unwrap_or_default();
        self.finish(&report)?;
        Ok(report)
    }

    fn finish(&mut self, report: &LoopReport) -> io::Result<()> {
        self.shared.stop.store(true, Ordering::Release);
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
        if let (Some(rec), Some(joints)) = (self.record.take(), report.final_joints) {
            let trace = LandingTrace {
                samples: Vec::new(),
                final_state: SimState { joints, ..Default::default() },
                error: None,
            };
            let mut meta = metadata("service", &rec.config, &rec.initial, &trace);
            meta.ticks = report.ticks as usize;
            meta.error = report.error.clone();
            if report.dropped_samples > 0 {
                meta.error = Some(format!("recorder dropped {} samples", report.dropped_samples));
            }
            std::fs::write(&rec.paths.meta, serde_json::to_string_pretty(&meta).map_err(io::Error::other)?)?;
        }
        Ok(())
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
    }
}

/// Serves a workflow that has landed: the loop starts from the landed state
/// and setpoint, and renders frames from the phantom volume.
pub fn serve_workflow(wf: &mut Workflow, opts: ServiceOptions) -> io::Result<ServiceHandle> {
    let not_ready = || io::Error::new(io::ErrorKind::InvalidInput, "workflow has not landed");
    if !matches!(wf.phase(), Phase::Landed | Phase::Scanning) {
        return Err(not_ready());
    }
    let session = wf.session().ok_or_else(not_ready)?;
    let joints = wf.landed_state().ok_or_else(not_ready)?;
    let setpoint = wf.landed_setpoint().ok_or_else(not_ready)?;
    let config = wf.config().clone();
    let chart = ChartMessage::from(session.chart.as_ref());
    let frames = (opts.frame_every > 0).then(|| FrameSource {
        world: session.world.clone(),
        volume: wf.volume(),
        params: config.ultrasound.slice,
        seed: config.seed,
    });
    let control = ControlLoop::new(session, config.clone(), joints, setpoint, Phase::Landed);
    serve(control, config, chart, frames, opts)
}

/// Starts the service threads and returns immediately.
pub fn serve(
    control: ControlLoop,
    config: SceneConfig,
    chart: ChartMessage,
    frames: Option<FrameSource>,
    opts: ServiceOptions,
) -> io::Result<ServiceHandle> {
    let listener = TcpListener::bind(&opts.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        loop_done: AtomicBool::new(false),
        commands: ArrayQueue::new(opts.command_queue.max(1)),
        states: ArrayQueue::new(opts.state_queue.max(1)),
        errors: ArrayQueue::new(64),
        clients: Mutex::new(Vec::new()),
        next_client: AtomicU64::new(1),
        frame_requests: ArrayQueue::new(2),
        frames: Mutex::new(VecDeque::new()),
        latest_frame: AtomicU64::new(0),
    });
    let mut workers = Vec::new();
    let (recorder, record) = match &opts.record {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let paths = TracePaths::new(dir, "trace");
            let queue = Arc::new(ArrayQueue::new(1 << 16));
            workers.push(spawn_recorder(paths.clone(), queue.clone(), shared.clone())?);
            (Some(queue), Some(Recording { paths, config: config.clone(), initial: control.state().joints }))
        }
        None => (None, None),
    };
    let hello = Arc::new(
        ServerMessage::Hello { v: PROTOCOL_VERSION, dt: config.dt, publish_hz: opts.publish_hz, chart }.to_json(),
    );
    let render = frames.is_some() && opts.frame_every > 0;
    if let Some(src) = frames {
        let s = shared.clone();
        workers.push(thread::spawn(move || render_frames(src, s)));
    }
    {
        let s = shared.clone();
        workers.push(thread::spawn(move || publish(s)));
    }
    {
        let s = shared.clone();
        let queue = opts.client_queue.max(1);
        workers.push(thread::spawn(move || accept_clients(listener, s, hello, queue)));
    }
    let s = shared.clone();
    let o = opts.clone();
    let control = thread::spawn(move || run_loop(control, s, o, render, recorder, config.dt));
    Ok(ServiceHandle { addr, shared, control: Some(control), workers, record })
}

fn run_loop(
    mut lp: ControlLoop,
    shared: Arc<Shared>,
    opts: ServiceOptions,
    render: bool,
    recorder: Option<Arc<ArrayQueue<TraceSample>>>,
    dt: f64,
) -> LoopReport {
    let decimation = ((1.0 / (dt * opts.publish_hz)).round() as u64).max(1);
    let period = Duration::from_secs_f64(dt);
    let mut report = LoopReport { tick_nanos: Vec::with_capacity(1 << 16), ..Default::default() };
    let mut deadline = Instant::now();
    let mut ticks = 0u64;
    while !shared.stop.load(Ordering::Acquire) && opts.max_ticks.is_none_or(|m| ticks < m) {
        let start = Instant::now();
        while let Some(inbound) = shared.commands.pop() {
            match inbound {
                Inbound::ClientLost => lp.safe_hold(),
                Inbound::Command { client, command } => match lp.apply(&command) {
                    Ok(()) => report.commands_applied += 1,
                    Err(e) => {
                        let _ = shared.errors.force_push((client, e.to_string()));
                    }
                },
            }
        }
        if let Err(e) = lp.tick() {
            report.error = Some(e.to_string());
            break;
        }
        ticks += 1;
        if let (Some(q), Some(sample)) = (&recorder, lp.last_sample()) {
            if q.force_push(*sample).is_some() {
                report.dropped_samples += 1;
            }
        }
        if render && ticks % opts.frame_every == 0 {
            let _ = shared.frame_requests.force_push((ticks / opts.frame_every, lp.state().joints.q));
        }
        let latest = shared.latest_frame.load(Ordering::Acquire);
        lp.set_us_frame(latest.checked_sub(1));
        if ticks % decimation == 0 {
            report.published_states += 1;
            if shared.states.force_push(lp.snapshot()).is_some() {
                report.dropped_states += 1;
            }
        }
        report.tick_nanos.push(start.elapsed().as_nanos() as u64);
        if opts.realtime {
            deadline += period;
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            } else if now - deadline > 100 * period {
                deadline = now;
            }
        }
    }
    report.ticks = ticks;
    report.final_state = Some(lp.snapshot());
    report.final_joints = Some(lp.state().joints);
    shared.loop_done.store(true, Ordering::Release);
    report
}

fn publish(shared: Arc<Shared>) {
    loop {
        let mut idle = true;
        while let Some(state) = shared.states.pop() {
            idle = false;
            let text = ServerMessage::State(state).to_json();
            for (_, outbox) in shared.clients.lock().expect("client list").iter() {
                outbox.force_push(text.clone());
            }
        }
        while let Some((client, message)) = shared.errors.pop() {
            idle = false;
            let text = ServerMessage::error(message).to_json();
            if let Some((_, outbox)) = shared.clients.lock().expect("client list").iter().find(|(id, _)| *id == client) {
                outbox.force_push(text);
            }
        }
        if shared.stop.load(Ordering::Acquire) {
            return;
        }
        if idle {
            thread::sleep(IDLE);
        }
    }
}

fn accept_clients(listener: TcpListener, shared: Arc<Shared>, hello: Arc<String>, queue: usize) {
    let mut handles = Vec::new();
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                let s = shared.clone();
                let h = hello.clone();
                handles.push(thread::spawn(move || {
                    let _ = serve_client(stream, s, &h, queue);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
    for h in handles {
        let _ = h.join();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn serve_client(stream: TcpStream, shared: Arc<Shared>, hello: &str, queue: usize) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(CLIENT_POLL))?;
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let outbox = Arc::new(ArrayQueue::new(queue));
    ws.send(Message::text(hello))?;
    shared.clients.lock().expect("client list").push((id, outbox.clone()));
    let result = client_session(&mut ws, id, &outbox, &shared);
    shared.clients.lock().expect("client list").retain(|(c, _)| *c != id);
    // Connection gone: stop whatever the operator was driving.
    let _ = shared.commands.force_push(Inbound::ClientLost);
    if shared.stop.load(Ordering::Acquire) {
        let _ = ws.close(None);
        let _ = ws.flush();
    }
    result
}

fn client_session(
    ws: &mut WebSocket<TcpStream>,
    id: u64,
    outbox: &ArrayQueue<String>,
    shared: &Shared,
) -> Result<(), tungstenite::Error> {
    while !shared.stop.load(Ordering::Acquire) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(reply) = handle_text(text.as_str(), id, shared) {
                    ws.send(Message::text(reply.to_json()))?;
                }
            }
            Ok(Message::Binary(_)) => ws.send(Message::text(ServerMessage::error("binary frames are not accepted").to_json()))?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        while let Some(text) = outbox.pop() {
            ws.send(Message::text(text))?;
        }
    }
    Ok(())
}

/// Immediate reply to a client message, if any; loop commands are queued.
fn handle_text(text: &str, client: u64, shared: &Shared) -> Option<ServerMessage> {
    match parse_command(text) {
        Err(e) => Some(ServerMessage::error(e.to_string())),
        Ok(Command::GetFrame { id }) => Some(frame_reply(shared, id)),
        Ok(command) => match shared.commands.push(Inbound::Command { client, command }) {
            Ok(()) => None,
            Err(_) => Some(ServerMessage::error("command queue full")),
        },
    }
}

fn frame_reply(shared: &Shared, id: u64) -> ServerMessage {
    let frames = shared.frames.lock().expect("frame cache");
    match frames.iter().find(|(f, ..)| *f == id) {
        Some((_, pgm, width, height)) => ServerMessage::Frame(FrameMessage {
            v: PROTOCOL_VERSION,
            id,
            width: *width,
            height: *height,
            pgm_base64: base64::engine::general_purpose::STANDARD.encode(pgm),
        }),
        None => ServerMessage::error(format!("frame {id} not available")),
    }
}

fn render_frames(src: FrameSource, shared: Arc<Shared>) {
    let mut rng = stage_rng(src.seed, RENDER_STREAM);
    while !shared.stop.load(Ordering::Acquire) {
        let Some((id, q)) = shared.frame_requests.pop() else {
            thread::sleep(IDLE);
            continue;
        };
        let image = crate::workflow::render_frame(&src.world, &src.volume, &src.params, &q, &mut rng);
        let mut frames = shared.frames.lock().expect("frame cache");
        frames.push_back((id, image.to_pgm(), image.width, image.height));
        while frames.len() > FRAME_CACHE {
            frames.pop_front();
        }
        drop(frames);
        shared.latest_frame.store(id + 1, Ordering::Release);
    }
}

fn spawn_recorder(paths: TracePaths, queue: Arc<ArrayQueue<TraceSample>>, shared: Arc<Shared>) -> io::Result<JoinHandle<()>> {
    let mut csv = csv::Writer::from_writer(BufWriter::new(File::create(&paths.csv)?));
    let mut tau = csv::Writer::from_writer(BufWriter::new(File::create(&paths.tau)?));
    Ok(thread::spawn(move || {
        let _ = csv.write_record(TRACE_COLUMNS);
        let _ = tau.write_record(TAU_COLUMNS);
        loop {
            let done = shared.loop_done.load(Ordering::Acquire) || shared.stop.load(Ordering::Acquire);
            let mut idle = true;
            while let Some(s) = queue.pop() {
                idle = false;
                let _ = csv.write_record(trace_row(&s));
                let _ = tau.write_record(s.tau.iter().map(|v| v.to_string()));
            }
            if done && queue.is_empty() {
                break;
            }
            if idle {
                thread::sleep(IDLE);
            }
        }
        let _ = csv.flush();
        let _ = tau.flush();
    }))
}
