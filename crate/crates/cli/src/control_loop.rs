//! The fixed-rate control loop behind the service: applies commands at tick
//! boundaries, generates setpoints for each mode and steps the simulation.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector6};
use rand_chacha::ChaCha8Rng;

use usscan_core::config::SceneConfig;
use usscan_core::control::{hands_on_gains, raster_path, teleop_update, ControlMode, ImpedanceGains, ScanPath, SetpointState};
use usscan_core::kinematics::JointState;
use usscan_core::sim::{closed_loop_tick, SimError, SimState, TraceSample};

use crate::protocol::{Command, ProbePose, ProtocolError, StateMessage, PROTOCOL_VERSION};
use crate::workflow::{stage_rng, Phase, Session};

/// Joint damping applied once the controller has faulted (N·m·s/rad).
const FAULT_BRAKE: f64 = 5.0;
const SERVICE_STREAM: u64 = 11;

#[derive(Debug, Clone)]
struct ActiveScan {
    path: ScanPath,
    start_tick: u64,
}

/// Deterministic controller state; the service runs one of these on its loop thread.
pub struct ControlLoop {
    session: Session,
    config: SceneConfig,
    state: SimState,
    setpoint: SetpointState,
    d_target: f64,
    phase: Phase,
    scan: Option<ActiveScan>,
    pending: Vector2<f64>,
    paths: BTreeMap<String, ScanPath>,
    rng: ChaCha8Rng,
    reading: Vector6<f64>,
    rho: Vector6<f64>,
    fault: Option<String>,
    us_frame: Option<u64>,
    last: Option<TraceSample>,
}

impl ControlLoop {
    pub fn new(session: Session, config: SceneConfig, joints: JointState, setpoint: SetpointState, phase: Phase) -> Self {
        let mut paths = BTreeMap::new();
        if let Ok(p) = raster_path(&config.scan.region, config.scan.spacing, config.scan.speed) {
            paths.insert("raster".to_string(), p);
        }
        let state = session.world.initial_state(joints);
        let rng = stage_rng(config.seed, SERVICE_STREAM);
        let mut lp = Self {
            session,
            d_target: setpoint.d(),
            config,
            state,
            setpoint,
            phase,
            scan: None,
            pending: Vector2::zeros(),
            paths,
            rng,
            reading: Vector6::zeros(),
            rho: setpoint.rho_d,
            fault: None,
            us_frame: None,
            last: None,
        };
        lp.setpoint.drho_d = Vector6::zeros();
        lp
    }

    /// Registers an extra path for `start_scan`.
    pub fn add_path(&mut self, id: &str, path: ScanPath) {
        self.paths.insert(id.to_string(), path);
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn setpoint(&self) -> &SetpointState {
        &self.setpoint
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn mode(&self) -> ControlMode {
        self.setpoint.mode
    }

    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn scanning(&self) -> bool {
        self.scan.is_some()
    }

    pub fn set_us_frame(&mut self, id: Option<u64>) {
        self.us_frame = id;
    }

    /// Gains in effect for the current mode.
    pub fn gains(&self) -> ImpedanceGains {
        match self.setpoint.mode {
            ControlMode::HandsOn => hands_on_gains(&self.session.gains),
            _ => self.session.gains,
        }
    }

    fn hold_here(&mut self) {
        self.scan = None;
        self.pending = Vector2::zeros();
        self.setpoint = self.setpoint.frozen();
    }

    /// Cancels motion and freezes the setpoint; used when a client drops.
    pub fn safe_hold(&mut self) {
        self.hold_here();
        self.d_target = self.setpoint.d();
    }

    /// Applies a command. Called only between ticks.
    pub fn apply(&mut self, cmd: &Command) -> Result<(), ProtocolError> {
        if self.phase == Phase::Fault {
            return Err(ProtocolError::Rejected(format!("controller faulted: {}", self.fault.as_deref().unwrap_or("unknown"))));
        }
        match cmd {
            Command::SetMode { mode } => {
                if *mode != self.setpoint.mode {
                    self.hold_here();
                    if self.setpoint.mode == ControlMode::HandsOn {
                        // The operator moved the probe; adopt where it is now.
                        self.setpoint.rho_d[0] = self.rho[0];
                        self.setpoint.rho_d[1] = self.rho[1];
                    }
                    self.setpoint.mode = *mode;
                }
            }
            Command::TeleopDelta { delta } => {
                if self.setpoint.mode != ControlMode::Teleop {
                    return Err(ProtocolError::Rejected("teleop_delta requires teleop mode".into()));
                }
                self.pending += Vector2::from(*delta);
            }
            Command::SetMargin { margin } => self.d_target = *margin,
            Command::StartScan { path } => {
                if self.setpoint.mode != ControlMode::Autonomous {
                    return Err(ProtocolError::Rejected("start_scan requires autonomous mode".into()));
                }
                let p = self.paths.get(path).ok_or_else(|| ProtocolError::Rejected(format!("unknown path {path:?}")))?;
                let here = [self.setpoint.rho_d[0], self.setpoint.rho_d[1]];
                let mut waypoints = vec![here];
                waypoints.extend(p.waypoints.iter().filter(|w| **w != here));
                self.scan = Some(ActiveScan { path: ScanPath { waypoints, speed: p.speed }, start_tick: self.state.tick });
                self.d_target = self.config.scan.distance;
                self.phase = Phase::Scanning;
            }
            Command::Stop => self.hold_here(),
            Command::GetFrame { .. } => {}
        }
        Ok(())
    }

    fn update_setpoint(&mut self) {
        let dt = self.session.world.dt;
        if let Some(scan) = &self.scan {
            let t = (self.state.tick - scan.start_tick) as f64 * dt;
            let next = scan.path.setpoint(t, self.setpoint.d());
            let done = t >= scan.path.duration();
            self.setpoint.rho_d = next.rho_d;
            self.setpoint.drho_d = next.drho_d;
            if done {
                self.hold_here();
            }
        }
        if self.setpoint.mode == ControlMode::Teleop && self.pending != Vector2::zeros() {
            let limits = self.config.scan.teleop;
            let before = self.setpoint.s();
            self.setpoint = teleop_update(&self.setpoint, &self.pending, &limits);
            let moved = self.setpoint.s() - before;
            self.pending -= moved;
            if moved.norm() < 1e-15 || self.pending.norm() < 1e-15 {
                self.pending = Vector2::zeros();
            }
        }
        let rate = self.config.landing.profile.rate;
        let d = self.setpoint.d();
        let gap = self.d_target - d;
        if gap.abs() <= rate * dt {
            self.setpoint.rho_d[2] = self.d_target;
            self.setpoint.drho_d[2] = 0.0;
        } else {
            self.setpoint.rho_d[2] = d + rate * dt * gap.signum();
            self.setpoint.drho_d[2] = rate * gap.signum();
        }
    }

    /// One control period. Never blocks; an error leaves the arm braked.
    pub fn tick(&mut self) -> Result<(), SimError> {
        self.update_setpoint();
        let world = &self.session.world;
        self.reading = world.ft_sensor_read(&self.state, self.config.ft_noise, &mut self.rng);
        if self.phase != Phase::Fault {
            let gains = self.gains();
            match closed_loop_tick(world, &self.session.chart, &self.state, &self.setpoint, &gains, &Vector6::zeros()) {
                Ok((next, out)) => {
                    self.rho = out.control.rho.to_vector();
                    self.last = Some(self.sample(out.tau));
                    self.state = next;
                    return Ok(());
                }
                Err(e) => {
                    self.phase = Phase::Fault;
                    self.fault = Some(e.to_string());
                    self.scan = None;
                }
            }
        }
        let q = &self.state.joints;
        let tau = world.dynamics.gravity_torque(&q.q) - q.dq * FAULT_BRAKE;
        let next = world.step(&self.state, &tau)?;
        self.last = Some(self.sample(tau));
        self.state = next;
        Ok(())
    }

    fn sample(&self, tau: usscan_core::kinematics::JointVector) -> TraceSample {
        TraceSample {
            t: self.state.time,
            d: self.rho[2],
            d_d: self.setpoint.d(),
            eps: self.rho.fixed_rows::<3>(3).into_owned(),
            wrench: self.reading,
            q: self.state.joints.q,
            tau,
            s: Vector2::new(self.rho[0], self.rho[1]),
            s_d: self.setpoint.s(),
        }
    }

    /// Record of the most recent tick.
    pub fn last_sample(&self) -> Option<&TraceSample> {
        self.last.as_ref()
    }

    pub fn snapshot(&self) -> StateMessage {
        let probe = self.session.world.dynamics.chain().forward_kinematics(&self.state.joints.q);
        StateMessage {
            v: PROTOCOL_VERSION,
            tick: self.state.tick,
            time: self.state.time,
            phase: self.phase,
            mode: self.setpoint.mode,
            rho: self.rho.into(),
            rho_d: self.setpoint.rho_d.into(),
            wrench: self.reading.into(),
            probe_pose: ProbePose::from(&probe),
            us_frame: self.us_frame,
        }
    }
}
