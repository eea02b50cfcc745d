//! Fixed-step arm simulation with a soft phantom, F/T sensing and a
//! closed-loop tick shared by experiments and the streaming service.

mod experiment;
mod ultrasound;

pub use experiment::{run_closed_loop, run_landing_experiment, LandingExperiment, LandingTrace, TickInputs, TraceSample};
pub use ultrasound::{us_slice, GrayImage, Inclusion, SliceParams, VoxelPhantom};

use nalgebra::{Cholesky, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{control_torque, ControlContext, ControlError, ControlOutput, ImpedanceGains, SetpointState};
use crate::dynamics::ArmDynamics;
use crate::kinematics::{JointState, JointVector};
use crate::mesh::TriMesh;
use crate::se3::RigidTransform;
use crate::chart::SurfaceChart;

pub const DEFAULT_DT: f64 = 1.0 / 3000.0;
pub const MAX_JOINT_SPEED: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time step {0} outside (0, 0.01]")]
    InvalidStep(f64),
    #[error("non-finite joint torque")]
    NonFiniteTorque,
    #[error("simulation diverged at t = {:.4} s", .0.time)]
    NumericalDivergence(Box<SimState>),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Contact parameters of the soft phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping on penetration (N·s/m).
    pub damping: f64,
    /// Tangential viscosity (N·s/m).
    pub viscosity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 500.0, damping: 2.0, viscosity: 5.0 }
    }
}

/// Ground-truth tissue surface in the base frame with its contact law.
#[derive(Debug, Clone)]
pub struct PhantomModel {
    pub surface: TriMesh,
    pub contact: ContactParams,
}

/// Kelvin–Voigt point contact at the probe tip, as a base-frame wrench
/// (force; torque). `probe_vel` is the tip twist (v; ω).
pub fn contact_wrench(phantom: &PhantomModel, probe: &RigidTransform, probe_vel: &Vector6<f64>) -> Vector6<f64> {
    let tip = probe.translation;
    let foot = phantom.surface.closest_point(&tip);
    let d = foot.distance;
    if d >= 0.0 {
        return Vector6::zeros();
    }
    let n = foot.normal;
    let v = Vector3::new(probe_vel[0], probe_vel[1], probe_vel[2]);
    let dd = n.dot(&v);
    let c = &phantom.contact;
    let fn_mag = (c.stiffness * (-d) + c.damping * (-dd).max(0.0)).max(0.0);
    let v_tan = v - n * dd;
    let f = n * fn_mag - v_tan * c.viscosity;
    Vector6::new(f.x, f.y, f.z, 0.0, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimState {
    pub joints: JointState,
    pub tick: u64,
    pub time: f64,
    /// Contact wrench on the probe at the tip, base frame.
    pub contact_wrench: Vector6<f64>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub dynamics: ArmDynamics,
    pub phantom: Option<PhantomModel>,
    pub dt: f64,
}

impl World {
    pub fn new(dynamics: ArmDynamics, phantom: Option<PhantomModel>) -> Self {
        Self { dynamics, phantom, dt: DEFAULT_DT }
    }

    fn wrench_at(&self, joints: &JointState) -> Vector6<f64> {
        match &self.phantom {
            None => Vector6::zeros(),
            Some(p) => {
                let chain = self.dynamics.chain();
                let probe = chain.forward_kinematics(&joints.q);
                let vel = chain.geometric_jacobian(&joints.q) * joints.dq;
                contact_wrench(p, &probe, &vel)
            }
        }
    }

    pub fn initial_state(&self, joints: JointState) -> SimState {
        SimState { joints, tick: 0, time: 0.0, contact_wrench: self.wrench_at(&joints) }
    }

    /// Semi-implicit Euler: q̇ ← q̇ + dt·M⁻¹(τ + J_xᵀF − C q̇ − g), then q ← q + dt·q̇.
    pub fn step(&self, state: &SimState, tau: &JointVector) -> Result<SimState, SimError> {
        self.step_with(state, tau, &Vector6::zeros())
    }

    /// As [`World::step`] with an additional external wrench at the tip (base frame).
    pub fn step_with(&self, state: &SimState, tau: &JointVector, external: &Vector6<f64>) -> Result<SimState, SimError> {
        if !(self.dt > 0.0 && self.dt <= 1e-2) {
            return Err(SimError::InvalidStep(self.dt));
        }
        if !tau.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteTorque);
        }
        let JointState { q, dq } = state.joints;
        let jx = self.dynamics.chain().geometric_jacobian(&q);
        let (m, cdq, g) = self.dynamics.terms(&q, &dq);
        let rhs = tau + jx.transpose() * (self.wrench_at(&state.joints) + external) - cdq - g;
        let ddq = match Cholesky::new(m) {
            Some(ch) => ch.solve(&rhs),
            None => JointVector::repeat(f64::NAN),
        };
        let dq_next = dq + ddq * self.dt;
        let q_next = q + dq_next * self.dt;
        let joints = JointState { q: q_next, dq: dq_next };
        let tick = state.tick + 1;
        let mut next = SimState { joints, tick, time: tick as f64 * self.dt, contact_wrench: Vector6::zeros() };
        if !dq_next.iter().all(|v| v.is_finite()) || dq_next.norm() > MAX_JOINT_SPEED {
            return Err(SimError::NumericalDivergence(Box::new(next)));
        }
        next.contact_wrench = self.wrench_at(&joints);
        Ok(next)
    }

    /// Contact wrench in the probe frame plus optional Gaussian noise on every channel.
    pub fn ft_sensor_read<R: Rng>(&self, state: &SimState, noise_sigma: f64, rng: &mut R) -> Vector6<f64> {
        let r = self.dynamics.chain().forward_kinematics(&state.joints.q).rotation.transpose();
        let w = &state.contact_wrench;
        let f = r * Vector3::new(w[0], w[1], w[2]);
        let t = r * Vector3::new(w[3], w[4], w[5]);
        let mut out = Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z);
        if noise_sigma > 0.0 {
            let n = Normal::new(0.0, noise_sigma).expect("finite sigma");
            out += Vector6::from_fn(|_, _| n.sample(rng));
        }
        out
    }

    /// Kinetic energy plus ½ eᵀ K e for the given task error.
    pub fn closed_loop_energy(&self, joints: &JointState, error: &Vector6<f64>, gains: &ImpedanceGains) -> f64 {
        self.dynamics.kinetic_energy(&joints.q, &joints.dq) + 0.5 * error.dot(&(gains.stiffness * error))
    }
}

/// Force pressing the probe into the tissue along its axis (probe frame reading).
pub fn axial_force(sensor: &Vector6<f64>) -> f64 {
    -sensor[2]
}

/// Result of one control tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub control: ControlOutput,
    /// Torque actually applied: control torque plus gravity compensation.
    pub tau: JointVector,
}

/// Computes the impedance torque (with gravity compensation) for the current
/// state and advances the world one step.
pub fn closed_loop_tick(
    world: &World,
    chart: &SurfaceChart,
    state: &SimState,
    setpoint: &SetpointState,
    gains: &ImpedanceGains,
    external: &Vector6<f64>,
) -> Result<(SimState, TickOutput), SimError> {
    let ctx = ControlContext { chain: world.dynamics.chain(), chart, dynamics: &world.dynamics };
    let control = control_torque(&ctx, &state.joints.q, &state.joints.dq, setpoint, gains)?;
    let tau = control.tau + world.dynamics.gravity_torque(&state.joints.q);
    let next = world.step_with(state, &tau, external)?;
    Ok((next, TickOutput { control, tau }))
}
