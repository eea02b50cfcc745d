//! Trace recording and open-loop replay.
//!
//! A trace is three files sharing a stem: `<stem>.csv` with the 19 logged
//! channels at nine significant digits, `<stem>.tau.csv` with the applied
//! joint torques at full precision, and `<stem>.meta.json` with the config,
//! its hash, the seed and the initial and final joint states.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use usscan_core::config::{ConfigError, SceneConfig};
use usscan_core::kinematics::{JointState, JointVector, DOF};
use usscan_core::sim::{LandingTrace, SimError, TraceSample, World};

use crate::workflow::{build_world, WorkflowError};

pub const TRACE_COLUMNS: [&str; 19] = [
    "t", "d", "d_d", "eps1", "eps2", "eps3", "fx", "fy", "fz", "tx", "ty", "tz", "q1", "q2", "q3", "q4", "q5", "q6", "q7",
];
pub const TAU_COLUMNS: [&str; DOF] = ["tau1", "tau2", "tau3", "tau4", "tau5", "tau6", "tau7"];
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("replay diverged: {0}")]
    Sim(#[from] SimError),
    #[error("malformed trace: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub format: u32,
    /// What produced the trace, e.g. `landing` or `scan`.
    pub kind: String,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub dt: f64,
    pub ticks: usize,
    pub columns: Vec<String>,
    pub initial_q: [f64; DOF],
    pub initial_dq: [f64; DOF],
    pub final_q: [f64; DOF],
    pub final_dq: [f64; DOF],
    /// Set when the run stopped early.
    pub error: Option<String>,
    pub config: SceneConfig,
}

/// Paths of the three files of one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracePaths {
    pub csv: PathBuf,
    pub tau: PathBuf,
    pub meta: PathBuf,
}

impl TracePaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            csv: dir.join(format!("{stem}.csv")),
            tau: dir.join(format!("{stem}.tau.csv")),
            meta: dir.join(format!("{stem}.meta.json")),
        }
    }

    /// Accepts a directory holding `trace.*`, any of the three files, or the bare stem.
    pub fn locate(path: &Path) -> Self {
        if path.is_dir() {
            let stems: Vec<String> = std::fs::read_dir(path)
                .into_iter()
                .flatten()
                .filter_map(|e| e.ok()?.file_name().to_str()?.strip_suffix(".meta.json").map(str::to_string))
                .collect();
            let stem = match stems.as_slice() {
                [only] => only.as_str(),
                _ => "trace",
            };
            return Self::new(path, stem);
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("trace");
        let stem = [".meta.json", ".tau.csv", ".csv"]
            .iter()
            .find_map(|suffix| name.strip_suffix(suffix))
            .unwrap_or(name);
        Self::new(dir, stem)
    }
}

pub fn config_hash(config: &SceneConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Nine significant digits in scientific notation.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn trace_row(s: &TraceSample) -> Vec<String> {
    let mut row = Vec::with_capacity(TRACE_COLUMNS.len());
    row.extend([s.t, s.d, s.d_d].map(sig9));
    row.extend(s.eps.iter().chain(s.wrench.iter()).chain(s.q.iter()).map(|v| sig9(*v)));
    row
}

pub fn trace_csv(samples: &[TraceSample]) -> Result<Vec<u8>, TraceError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS)?;
    for s in samples {
        w.write_record(trace_row(s))?;
    }
    w.into_inner().map_err(|e| TraceError::Io(e.into_error()))
}

/// Torques with shortest round-trip formatting, so parsing recovers them exactly.
pub fn tau_csv(samples: &[TraceSample]) -> Result<Vec<u8>, TraceError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TAU_COLUMNS)?;
    for s in samples {
        w.write_record(s.tau.iter().map(|v| v.to_string()))?;
    }
    w.into_inner().map_err(|e| TraceError::Io(e.into_error()))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("usscan".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("trace_format".to_string(), FORMAT_VERSION.to_string()),
    ])
}

pub fn metadata(kind: &str, config: &SceneConfig, initial: &JointState, trace: &LandingTrace) -> TraceMetadata {
    let fin = trace.final_state.joints;
    TraceMetadata {
        format: FORMAT_VERSION,
        kind: kind.to_string(),
        config_hash: config_hash(config),
        seed: config.seed,
        versions: versions(),
        dt: config.dt,
        ticks: trace.samples.len(),
        columns: TRACE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        initial_q: initial.q.into(),
        initial_dq: initial.dq.into(),
        final_q: fin.q.into(),
        final_dq: fin.dq.into(),
        error: trace.error.as_ref().map(|e| e.to_string()),
        config: config.clone(),
    }
}

/// Writes `<stem>.csv`, `<stem>.tau.csv` and `<stem>.meta.json` into `dir`.
pub fn write_trace(
    dir: &Path,
    stem: &str,
    kind: &str,
    config: &SceneConfig,
    initial: &JointState,
    trace: &LandingTrace,
) -> Result<TracePaths, TraceError> {
    fs::create_dir_all(dir)?;
    let paths = TracePaths::new(dir, stem);
    fs::write(&paths.csv, trace_csv(&trace.samples)?)?;
    fs::write(&paths.tau, tau_csv(&trace.samples)?)?;
    let meta = metadata(kind, config, initial, trace);
    fs::write(&paths.meta, serde_json::to_string_pretty(&meta)?)?;
    Ok(paths)
}

pub fn read_metadata(path: &Path) -> Result<TraceMetadata, TraceError> {
    let meta: TraceMetadata = serde_json::from_str(&fs::read_to_string(path)?)?;
    if meta.format != FORMAT_VERSION {
        return Err(TraceError::Format(format!("unsupported trace format {}", meta.format)));
    }
    meta.config.validate()?;
    Ok(meta)
}

pub fn read_torques(path: &Path) -> Result<Vec<JointVector>, TraceError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != DOF {
            return Err(TraceError::Format(format!("row {} has {} torques", line + 1, record.len())));
        }
        let mut tau = JointVector::zeros();
        for (k, field) in record.iter().enumerate() {
            tau[k] = field.parse().map_err(|_| TraceError::Format(format!("row {}: bad number {field:?}", line + 1)))?;
        }
        out.push(tau);
    }
    Ok(out)
}

/// Applies `torques` open loop from `initial`, returning the final joint state.
pub fn replay_torques(world: &World, initial: JointState, torques: &[JointVector]) -> Result<JointState, SimError> {
    let mut state = world.initial_state(initial);
    for tau in torques {
        state = world.step(&state, tau)?;
    }
    Ok(state.joints)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub ticks: usize,
    pub recorded: JointVector,
    pub replayed: JointVector,
    /// Largest absolute joint difference (rad).
    pub max_error: f64,
}

/// Re-runs a recorded trace open loop and compares the final joint position.
pub fn replay(path: &Path) -> Result<ReplayReport, TraceError> {
    let paths = TracePaths::locate(path);
    let meta = read_metadata(&paths.meta)?;
    let torques = read_torques(&paths.tau)?;
    if torques.len() != meta.ticks {
        return Err(TraceError::Format(format!("{} torque rows for {} ticks", torques.len(), meta.ticks)));
    }
    let world = build_world(&meta.config)?;
    let initial = JointState { q: meta.initial_q.into(), dq: meta.initial_dq.into() };
    let replayed = replay_torques(&world, initial, &torques)?.q;
    let recorded = JointVector::from(meta.final_q);
    Ok(ReplayReport { ticks: torques.len(), recorded, replayed, max_error: (replayed - recorded).amax() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3, Vector6};
    use usscan_core::sim::SimState;

    fn sample(t: f64) -> TraceSample {
        TraceSample {
            t,
            d: 0.0123456789123,
            d_d: -0.002,
            eps: Vector3::new(1e-7, -2.5e-3, 0.0),
            wrench: Vector6::new(0.1, 0.2, -0.5, 0.0, 1e-4, -1e-4),
            q: JointVector::from([0.0, 0.77, 0.0, -1.6, 0.0, 0.77, 0.0]),
            tau: JointVector::from([0.1, 1.0 / 3.0, -2.0, 3.5e-9, 0.0, -0.0, 1e10]),
            s: Vector2::new(0.5, 0.5),
            s_d: Vector2::new(0.5, 0.5),
        }
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.0123456789123), "1.23456789e-2");
        assert_eq!(sig9(-2.0), "-2.00000000e0");
        assert_eq!(sig9(0.0), "0.00000000e0");
        let back: f64 = sig9(std::f64::consts::PI).parse().unwrap();
        assert!((back - std::f64::consts::PI).abs() / std::f64::consts::PI < 5e-9);
    }

    #[test]
    fn csv_has_header_and_nineteen_columns() {
        let bytes = trace_csv(&[sample(0.0), sample(1.0 / 3000.0)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TRACE_COLUMNS.join(","));
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 19));
        assert!(lines[2].starts_with("3.33333333e-4,1.23456789e-2,-2.00000000e-3,"));
    }

    #[test]
    fn torques_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tau.csv");
        let samples = [sample(0.0), sample(1.0)];
        fs::write(&path, tau_csv(&samples).unwrap()).unwrap();
        let back = read_torques(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(samples.iter()) {
            assert!(a.iter().zip(b.tau.iter()).all(|(x, y)| x.to_bits() == y.to_bits() || (*x == 0.0 && *y == 0.0)));
        }
    }

    #[test]
    fn hash_tracks_config() {
        let a = SceneConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn locate_accepts_any_member() {
        let want = TracePaths::new(Path::new("out"), "landing");
        for p in ["out/landing.csv", "out/landing.tau.csv", "out/landing.meta.json", "out/landing"] {
            assert_eq!(TracePaths::locate(Path::new(p)), want);
        }
    }

    #[test]
    fn metadata_round_trips() {
        let trace = LandingTrace {
            samples: vec![sample(0.0)],
            final_state: SimState { joints: JointState::at_rest(sample(0.0).q), ..Default::default() },
            error: None,
        };
        let cfg = SceneConfig::default();
        let meta = metadata("landing", &cfg, &JointState::at_rest(sample(0.0).q), &trace);
        let back: TraceMetadata = serde_json::from_str(&serde_json::to_string(&meta).unwrap()).unwrap();
        assert_eq!(back, meta);
        assert_eq!(back.columns.len(), 19);
    }

    #[test]
    fn malformed_torque_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tau.csv");
        fs::write(&path, "tau1,tau2,tau3,tau4,tau5,tau6,tau7\n1,2,3,4,5,6,x\n").unwrap();
        assert!(matches!(read_torques(&path), Err(TraceError::Format(_))));
    }
}
