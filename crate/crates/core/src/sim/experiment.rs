use nalgebra::{Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{closed_loop_tick, SimError, SimState, World};
use crate::chart::SurfaceChart;
use crate::control::{landing_setpoint, ImpedanceGains, LandingProfile, SetpointState};
use crate::kinematics::{JointState, JointVector};

/// One recorded control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub d: f64,
    pub d_d: f64,
    pub eps: Vector3<f64>,
    /// F/T reading in the probe frame (N, N·m).
    pub wrench: Vector6<f64>,
    pub q: JointVector,
    /// Applied joint torque.
    pub tau: JointVector,
    pub s: Vector2<f64>,
    pub s_d: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct LandingTrace {
    pub samples: Vec<TraceSample>,
    pub final_state: SimState,
    /// Why the run stopped early, if it did.
    pub error: Option<SimError>,
}

impl LandingTrace {
    /// Index of the first sample with a non-zero true contact force.
    pub fn first_contact(&self, threshold: f64) -> Option<usize> {
        self.samples.iter().position(|s| super::axial_force(&s.wrench) > threshold)
    }

    pub fn peak_axial_force(&self) -> f64 {
        self.samples.iter().map(|s| super::axial_force(&s.wrench)).fold(0.0, f64::max)
    }
}

/// Per-tick inputs chosen by a schedule.
#[derive(Debug, Clone, Copy)]
pub struct TickInputs {
    pub setpoint: SetpointState,
    pub gains: ImpedanceGains,
    /// Additional wrench on the probe tip (base frame), e.g. an operator's hand.
    pub external: Vector6<f64>,
}

/// Runs the impedance loop for `duration` seconds, recording every tick.
/// The F/T reading is drawn from a generator seeded with `seed`.
pub fn run_closed_loop<F>(
    world: &World,
    chart: &SurfaceChart,
    initial: JointState,
    duration: f64,
    ft_noise: f64,
    seed: u64,
    mut schedule: F,
) -> LandingTrace
where
    F: FnMut(&SimState) -> TickInputs,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ticks = (duration / world.dt).round() as u64;
    let mut state = world.initial_state(initial);
    let mut samples = Vec::with_capacity(ticks as usize);
    for _ in 0..ticks {
        let inputs = schedule(&state);
        let reading = world.ft_sensor_read(&state, ft_noise, &mut rng);
        match closed_loop_tick(world, chart, &state, &inputs.setpoint, &inputs.gains, &inputs.external) {
            Ok((next, out)) => {
                samples.push(TraceSample {
                    t: state.time,
                    d: out.control.rho.d,
                    d_d: inputs.setpoint.d(),
                    eps: out.control.rho.eps,
                    wrench: reading,
                    q: state.joints.q,
                    tau: out.tau,
                    s: out.control.rho.s,
                    s_d: inputs.setpoint.s(),
                });
                state = next;
            }
            Err(e) => return LandingTrace { samples, final_state: state, error: Some(e) },
        }
    }
    LandingTrace { samples, final_state: state, error: None }
}

#[derive(Debug, Clone, Copy)]
pub struct LandingExperiment {
    pub initial: JointVector,
    /// Chart position held during landing.
    pub s: Vector2<f64>,
    pub profile: LandingProfile,
    /// Time spent at `d_start` before the ramp begins (s).
    pub settle_time: f64,
    /// Time spent at `d_end` after the ramp (s).
    pub hold_time: f64,
    pub gains: ImpedanceGains,
    pub ft_noise: f64,
    pub seed: u64,
}

impl LandingExperiment {
    pub fn duration(&self) -> f64 {
        self.settle_time + self.profile.duration() + self.hold_time
    }

    pub fn setpoint(&self, t: f64) -> SetpointState {
        landing_setpoint(t - self.settle_time, &self.profile, self.s)
    }
}

/// Lowers the probe along the landing schedule inside the fixed-rate loop.
pub fn run_landing_experiment(world: &World, chart: &SurfaceChart, exp: &LandingExperiment) -> LandingTrace {
    run_closed_loop(world, chart, JointState::at_rest(exp.initial), exp.duration(), exp.ft_noise, exp.seed, |state| TickInputs {
        setpoint: exp.setpoint(state.time),
        gains: exp.gains,
        external: Vector6::zeros(),
    })
}
