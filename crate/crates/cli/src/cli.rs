//! Command-line front end. `run` parses arguments, executes one verb and
//! returns the process exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde_json::json;

use usscan_core::config::{ConfigError, SceneConfig};
use usscan_core::control::{raster_path, ScanPath};
use usscan_core::mesh::ply::write_ply;
use usscan_core::scene::write_depth_image;
use usscan_core::se3::RigidTransform;
use usscan_core::sim::{axial_force, LandingTrace};

use crate::service::{serve_workflow, ServiceOptions};
use crate::trace::{replay, write_trace, TraceError};
use crate::workflow::{Phase, Workflow, WorkflowError, CONTACT_THRESHOLD};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_FAULT: i32 = 2;
pub const EXIT_BAD_CONFIG: i32 = 3;

/// Largest joint difference accepted when replaying a trace (rad).
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "usscan", version, about = "Simulated robotic ultrasound scanning cell")]
pub struct Cli {
    /// Scene configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Fit the table plane from the marker observations.
    Localise,
    /// Capture depth views, fuse them into a mesh and build its chart.
    Reconstruct,
    /// Land the probe on the phantom and record the trace.
    Land,
    /// Land, then follow a chart path in contact.
    Scan {
        /// `raster` or a JSON file with `waypoints` and `speed`.
        #[arg(long, default_value = "raster")]
        path: String,
        /// Write an ultrasound frame every this many ticks; 0 disables.
        #[arg(long, default_value_t = 0)]
        frames: usize,
    },
    /// Land, then stream state and accept commands over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Stop after this many seconds; runs until killed when omitted.
        #[arg(long)]
        duration: Option<f64>,
        /// Record the full-rate session trace into the output directory.
        #[arg(long)]
        record: bool,
    },
    /// Print the effective configuration as JSON.
    Config,
    /// Re-run a trace's torques open loop and compare the final joint state.
    Replay { trace: PathBuf },
}

enum Failure {
    Config(String),
    Fault(WorkflowError),
    Io(String),
    Replay(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Config(c) => Failure::Config(c.to_string()),
            TraceError::Workflow(w) => Failure::Fault(w),
            other => Failure::Io(other.to_string()),
        }
    }
}

impl From<usscan_core::mesh::MeshError> for Failure {
    fn from(e: usscan_core::mesh::MeshError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<usscan_core::scene::SceneError> for Failure {
    fn from(e: usscan_core::scene::SceneError) -> Self {
        Failure::Io(e.to_string())
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SceneConfig, ConfigError> {
    let mut config = match path {
        Some(p) => SceneConfig::load(p)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Parses `args` (including the program name) and runs the verb.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            eprintln!("bad config: {m}");
            EXIT_BAD_CONFIG
        }
        Err(Failure::Fault(e)) => {
            eprintln!("fault({}): {e}", e.kind());
            EXIT_FAULT
        }
        Err(Failure::Replay(m)) => {
            eprintln!("replay mismatch: {m}");
            EXIT_FAULT
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            EXIT_IO
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Verb::Replay { trace } = &cli.verb {
        let r = replay(trace)?;
        println!("replayed {} ticks; max joint difference {:.3e} rad", r.ticks, r.max_error);
        return if r.max_error <= REPLAY_TOLERANCE {
            Ok(())
        } else {
            Err(Failure::Replay(format!("{:.3e} rad exceeds {REPLAY_TOLERANCE:e}", r.max_error)))
        };
    }
    let config = load_config(cli.config.as_deref(), cli.seed).map_err(|e| Failure::Config(e.to_string()))?;
    if let Verb::Config = cli.verb {
        println!("{}", config.to_json());
        return Ok(());
    }
    let scan_path = match &cli.verb {
        Verb::Scan { path, .. } => Some(load_path(path, &config)?),
        _ => None,
    };
    let mut wf = Workflow::new(config).map_err(|e| Failure::Config(e.to_string()))?;
    fs::create_dir_all(&cli.out)?;
    let target = match cli.verb {
        Verb::Localise => Phase::Localised,
        Verb::Reconstruct => Phase::Reconstructed,
        Verb::Land | Verb::Serve { .. } => Phase::Landed,
        Verb::Scan { .. } => Phase::Landed,
        Verb::Replay { .. } | Verb::Config => unreachable!("handled above"),
    };
    let mut result = wf.run_to(target);
    if result.is_ok() {
        if let Some(path) = &scan_path {
            result = wf.scan(path).map(|_| ());
        }
    }
    write_artifacts(&wf, &cli.out)?;
    write_status(&wf, &cli.out)?;
    result.map_err(Failure::Fault)?;

    match &cli.verb {
        Verb::Scan { frames, .. } if *frames > 0 => write_frames(&mut wf, &cli.out, *frames)?,
        Verb::Serve { port, host, duration, record } => {
            let opts = ServiceOptions {
                bind: format!("{host}:{port}"),
                record: record.then(|| cli.out.join("session")),
                ..Default::default()
            };
            let handle = serve_workflow(&mut wf, opts)?;
            println!("serving on {}", handle.url());
            let start = Instant::now();
            while duration.is_none_or(|d| start.elapsed().as_secs_f64() < d) && !handle.is_finished() {
                std::thread::sleep(Duration::from_millis(50));
            }
            let report = handle.shutdown()?;
            println!(
                "ran {} ticks; tick median {:.1} us, p99.9 {:.1} us, max {:.1} us; {} states published, {} dropped",
                report.ticks,
                report.median() as f64 / 1e3,
                report.percentile(99.9) as f64 / 1e3,
                report.max() as f64 / 1e3,
                report.published_states,
                report.dropped_states
            );
            if let Some(e) = report.error {
                return Err(Failure::Io(e));
            }
        }
        _ => {}
    }
    Ok(())
}

fn load_path(spec: &str, config: &SceneConfig) -> Result<ScanPath, Failure> {
    let path = if spec == "raster" {
        raster_path(&config.scan.region, config.scan.spacing, config.scan.speed).map_err(|e| Failure::Config(e.to_string()))?
    } else {
        let text = fs::read_to_string(spec).map_err(|e| Failure::Config(format!("{spec}: {e}")))?;
        serde_json::from_str::<ScanPath>(&text).map_err(|e| Failure::Config(format!("{spec}: {e}")))?
    };
    path.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(path)
}

fn pose_json(t: &RigidTransform) -> serde_json::Value {
    let m = t.to_homogeneous();
    json!((0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn trace_summary(trace: &LandingTrace) -> serde_json::Value {
    json!({
        "ticks": trace.samples.len(),
        "first_contact_time": trace.first_contact(CONTACT_THRESHOLD).map(|i| trace.samples[i].t),
        "peak_axial_force": trace.peak_axial_force(),
        "final_axial_force": trace.samples.last().map(|s| axial_force(&s.wrench)),
        "final_distance": trace.samples.last().map(|s| s.d),
        "error": trace.error.as_ref().map(|e| e.to_string()),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?)?;
    Ok(())
}

fn write_status(wf: &Workflow, out: &Path) -> Result<(), Failure> {
    let fault = wf.state().fault();
    write_json(
        &out.join("workflow.json"),
        &json!({
            "phase": wf.phase(),
            "fault": fault.map(|e| json!({ "kind": e.kind(), "message": e.to_string() })),
            "seed": wf.config().seed,
            "config_hash": crate::trace::config_hash(wf.config()),
        }),
    )
}

fn write_artifacts(wf: &Workflow, out: &Path) -> Result<(), Failure> {
    if let Some(plane) = &wf.plane {
        let markers: Vec<_> = wf.markers.iter().map(|m| json!({ "id": m.marker_id, "center_cam": [m.center_cam.x, m.center_cam.y, m.center_cam.z] })).collect();
        write_json(
            &out.join("plane.json"),
            &json!({
                "center": [plane.center.x, plane.center.y, plane.center.z],
                "normal": [plane.normal.x, plane.normal.y, plane.normal.z],
                "markers": markers,
            }),
        )?;
    }
    if let (Some(rec), Some(chart)) = (&wf.reconstruction, &wf.chart) {
        let dir = out.join("captures");
        fs::create_dir_all(&dir)?;
        for (k, image) in wf.captures.iter().enumerate() {
            write_depth_image(&dir.join(format!("view_{k:02}")), image)?;
        }
        write_ply(&out.join("mesh.ply"), &rec.mesh, None)?;
        write_ply(&out.join("chart.ply"), chart.mesh(), Some(chart.uv()))?;
        let stats = chart.stats();
        write_json(
            &out.join("reconstruction.json"),
            &json!({
                "object_pose": pose_json(&rec.object_pose),
                "reference_view": pose_json(&rec.reference_view),
                "object_in_base": pose_json(&rec.object_in_base()),
                "empty_fraction": rec.empty_fraction,
                "vertices": rec.mesh.vertices().len(),
                "faces": rec.mesh.faces().len(),
                "chart": {
                    "scale": chart.scale(),
                    "max_conformal_distortion": stats.max_conformal_distortion,
                    "min_uv_area": stats.min_uv_area,
                },
            }),
        )?;
    }
    let initial = usscan_core::kinematics::JointState::at_rest(wf.config().initial_q());
    if let Some(trace) = &wf.landing {
        write_trace(out, "landing", "landing", wf.config(), &initial, trace)?;
        write_json(&out.join("landing.summary.json"), &trace_summary(trace))?;
    }
    if let (Some(trace), Some(start)) = (&wf.scan, wf.landed_state()) {
        write_trace(out, "scan", "scan", wf.config(), &start, trace)?;
        write_json(&out.join("scan.summary.json"), &trace_summary(trace))?;
    }
    Ok(())
}

fn write_frames(wf: &mut Workflow, out: &Path, every: usize) -> Result<(), Failure> {
    let dir = out.join("us");
    fs::create_dir_all(&dir)?;
    let qs: Vec<_> = wf.scan.as_ref().map(|t| t.samples.iter().step_by(every).map(|s| s.q).collect()).unwrap_or_default();
    let mut rng = wf.ultrasound_rng();
    for (k, q) in qs.iter().enumerate() {
        wf.ultrasound_frame(q, &mut rng).write_pgm(&dir.join(format!("frame_{k:05}.pgm")))?;
    }
    Ok(())
}
