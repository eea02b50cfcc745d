//! Wire messages of the streaming service. Every message is a JSON object
//! with a `type` tag and a protocol version `v`; unknown fields are ignored.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use usscan_core::chart::SurfaceChart;
use usscan_core::control::ControlMode;
use usscan_core::se3::RigidTransform;

use crate::workflow::Phase;

pub const PROTOCOL_VERSION: u32 = 1;

/// JSON schema of every message, kept next to the code that produces them.
pub const SCHEMA: &str = include_str!("../schema/protocol.schema.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u64),
    #[error("rejected: {0}")]
    Rejected(String),
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetMode { mode: ControlMode },
    /// Chart displacement (s₁, s₂) to apply, rate limited by the loop.
    TeleopDelta { delta: [f64; 2] },
    /// Stand-off distance above the surface (m).
    SetMargin { margin: f64 },
    StartScan { path: String },
    Stop,
    /// Request the PGM bytes of an ultrasound frame.
    GetFrame { id: u64 },
}

/// Parses a command, checking the version when one is given.
pub fn parse_command(text: &str) -> Result<Command, ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match value.get("v") {
        None => {}
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 && n <= PROTOCOL_VERSION as u64 => {}
            Some(n) => return Err(ProtocolError::Version(n)),
            None => return Err(ProtocolError::Malformed("v must be a positive integer".into())),
        },
    }
    let cmd: Command = serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    cmd.validate()?;
    Ok(cmd)
}

impl Command {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::Rejected(m.to_string()));
        match self {
            Command::TeleopDelta { delta } if !delta.iter().all(|v| v.is_finite()) => bad("teleop delta must be finite"),
            Command::SetMargin { margin } if !(*margin > 0.0 && *margin <= 0.05) => bad("margin must lie in (0, 0.05] m"),
            Command::StartScan { path } if path.is_empty() => bad("empty path id"),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("command serializes");
        value["v"] = PROTOCOL_VERSION.into();
        value.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePose {
    /// Tip position in the base frame (m).
    pub position: [f64; 3],
    /// Orientation as (w, x, y, z).
    pub quaternion: [f64; 4],
}

impl From<&RigidTransform> for ProbePose {
    fn from(t: &RigidTransform) -> Self {
        let q = t.quaternion();
        Self { position: t.translation.into(), quaternion: [q.w, q.i, q.j, q.k] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub v: u32,
    pub tick: u64,
    pub time: f64,
    pub phase: Phase,
    pub mode: ControlMode,
    /// (s₁, s₂, d, ε₁, ε₂, ε₃).
    pub rho: [f64; 6],
    pub rho_d: [f64; 6],
    /// F/T reading in the probe frame (N, N·m).
    pub wrench: [f64; 6],
    pub probe_pose: ProbePose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub us_frame: Option<u64>,
}

/// Surface mesh in the base frame with its chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartMessage {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Vec<[f64; 2]>,
}

impl From<&SurfaceChart> for ChartMessage {
    fn from(chart: &SurfaceChart) -> Self {
        Self {
            vertices: chart.mesh().vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: chart.mesh().faces().to_vec(),
            uv: chart.uv().iter().map(|u| [u.x, u.y]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub v: u32,
    pub id: u64,
    pub width: usize,
    pub height: usize,
    /// Binary PGM (P5), base64 encoded.
    pub pgm_base64: String,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { v: u32, dt: f64, publish_hz: f64, chart: ChartMessage },
    State(StateMessage),
    Frame(FrameMessage),
    Error { v: u32, message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { v: PROTOCOL_VERSION, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}
