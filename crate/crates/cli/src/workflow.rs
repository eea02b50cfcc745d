//! Phase machine and the end-to-end pipeline: localise the table, reconstruct
//! the phantom, build its chart, land, scan.

use std::sync::Arc;

use nalgebra::{Vector2, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use usscan_core::chart::{ChartError, SurfaceChart};
use usscan_core::config::SceneConfig;
use usscan_core::control::{ControlError, ImpedanceGains, ScanPath, SetpointState};
use usscan_core::dynamics::{ArmDynamics, DynamicsError};
use usscan_core::kinematics::{JointState, JointVector, KinematicsError, SerialChain};
use usscan_core::scene::{
    alignment_pose, capture_depth, fit_plane, markers_at, orbit_plan, reconstruct_mesh, DepthImage, MarkerObservation,
    ReconstructedSurface, SceneError, ScenePlane,
};
use usscan_core::sim::{
    axial_force, run_closed_loop, run_landing_experiment, us_slice, GrayImage, LandingExperiment, LandingTrace,
    SimError, TickInputs, VoxelPhantom, World,
};

/// Axial force above which the probe counts as touching (N).
pub const CONTACT_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Localised,
    Reconstructed,
    Landed,
    Scanning,
    Fault,
}

impl Phase {
    pub const ALL: [Phase; 6] = [Phase::Init, Phase::Localised, Phase::Reconstructed, Phase::Landed, Phase::Scanning, Phase::Fault];

    /// The next phase of a successful run.
    pub fn successor(self) -> Option<Phase> {
        match self {
            Phase::Init => Some(Phase::Localised),
            Phase::Localised => Some(Phase::Reconstructed),
            Phase::Reconstructed => Some(Phase::Landed),
            Phase::Landed => Some(Phase::Scanning),
            Phase::Scanning | Phase::Fault => None,
        }
    }

    pub fn allows(self, to: Phase) -> bool {
        match to {
            Phase::Fault => self != Phase::Fault,
            _ => self.successor() == Some(to),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Localised => "localised",
            Phase::Reconstructed => "reconstructed",
            Phase::Landed => "landed",
            Phase::Scanning => "scanning",
            Phase::Fault => "fault",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: Phase, to: Phase },
    #[error("landing finished without contact")]
    NoContact,
}

impl WorkflowError {
    /// Short machine-readable name of the fault.
    pub fn kind(&self) -> String {
        let name = match self {
            WorkflowError::Scene(e) => format!("{e:?}"),
            WorkflowError::Chart(e) => format!("{e:?}"),
            WorkflowError::Kinematics(e) => format!("{e:?}"),
            WorkflowError::Dynamics(e) => format!("{e:?}"),
            WorkflowError::Control(e) => format!("{e:?}"),
            WorkflowError::Sim(e) => format!("{e:?}"),
            other => format!("{other:?}"),
        };
        name.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
    }
}

/// Current phase plus the fault that ended the run, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowState {
    phase: Phase,
    fault: Option<WorkflowError>,
}

impl Default for WorkflowState {
    fn default() -> Self {
        Self { phase: Phase::Init, fault: None }
    }
}

impl WorkflowState {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn fault(&self) -> Option<&WorkflowError> {
        self.fault.as_ref()
    }

    pub fn advance(&mut self, to: Phase) -> Result<(), WorkflowError> {
        if !self.phase.allows(to) || to == Phase::Fault {
            return Err(WorkflowError::IllegalTransition { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }

    /// Moves to `fault` and keeps the error. A second fault is ignored.
    pub fn fail(&mut self, err: WorkflowError) {
        if self.phase != Phase::Fault {
            self.phase = Phase::Fault;
            self.fault = Some(err);
        }
    }
}

/// Arm, phantom and time step described by `config`.
pub fn build_world(config: &SceneConfig) -> Result<World, WorkflowError> {
    let dynamics = ArmDynamics::new(config.chain.build()?, &config.dynamics)?;
    let mut world = World::new(dynamics, Some(config.phantom.model()));
    world.dt = config.dt;
    Ok(world)
}

/// Random stream ids, one per stochastic stage.
mod stream {
    pub const MARKERS: u64 = 1;
    pub const DEPTH: u64 = 2;
    pub const LANDING: u64 = 3;
    pub const SCAN: u64 = 4;
    pub const ULTRASOUND: u64 = 5;
}

pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stage_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Everything needed to drive the arm against the reconstructed chart.
#[derive(Clone)]
pub struct Session {
    pub world: Arc<World>,
    pub chart: Arc<SurfaceChart>,
    pub gains: ImpedanceGains,
}

pub struct Workflow {
    config: SceneConfig,
    state: WorkflowState,
    chain: SerialChain,
    world: Arc<World>,
    pub markers: Vec<MarkerObservation>,
    pub plane: Option<ScenePlane>,
    pub captures: Vec<DepthImage>,
    pub reconstruction: Option<ReconstructedSurface>,
    pub chart: Option<Arc<SurfaceChart>>,
    pub landing: Option<LandingTrace>,
    pub scan: Option<LandingTrace>,
    volume: Option<Arc<VoxelPhantom>>,
}

impl Workflow {
    /// Builds the simulated cell. Fails only on an inconsistent configuration.
    pub fn new(config: SceneConfig) -> Result<Self, WorkflowError> {
        let world = build_world(&config)?;
        let chain = world.dynamics.chain().clone();
        Ok(Self {
            config,
            state: WorkflowState::default(),
            chain,
            world: Arc::new(world),
            markers: Vec::new(),
            plane: None,
            captures: Vec::new(),
            reconstruction: None,
            chart: None,
            landing: None,
            scan: None,
            volume: None,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn state(&self) -> &WorkflowState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn chain(&self) -> &SerialChain {
        &self.chain
    }

    fn guarded<T>(&mut self, to: Phase, step: impl FnOnce(&mut Self) -> Result<T, WorkflowError>) -> Result<T, WorkflowError> {
        if !self.state.phase.allows(to) {
            return Err(WorkflowError::IllegalTransition { from: self.state.phase, to });
        }
        match step(self) {
            Ok(v) => {
                self.state.advance(to)?;
                Ok(v)
            }
            Err(e) => {
                self.state.fail(e.clone());
                Err(e)
            }
        }
    }

    /// Observes the table markers from the start pose and fits the table plane.
    pub fn localise(&mut self) -> Result<ScenePlane, WorkflowError> {
        self.guarded(Phase::Localised, |wf| {
            let camera = wf.chain.camera_pose(&wf.config.initial_q());
            let mut rng = stage_rng(wf.config.seed, stream::MARKERS);
            let table = wf.config.phantom.table_plane();
            wf.markers = markers_at(&table, &camera, &wf.config.markers.offsets, wf.config.markers.sigma, &mut rng);
            let plane = fit_plane(&wf.markers)?.transformed(&camera);
            wf.plane = Some(plane);
            Ok(plane)
        })
    }

    /// Captures the orbit of depth views, fuses them and parameterises the result.
    pub fn reconstruct(&mut self) -> Result<Arc<SurfaceChart>, WorkflowError> {
        self.guarded(Phase::Reconstructed, |wf| {
            let plane = wf.plane.expect("localised before reconstruct");
            let cam = &wf.config.camera;
            let base = alignment_pose(&plane, cam.view_angle, cam.view_distance);
            let scene = wf.config.phantom.capture_scene();
            let mut rng = stage_rng(wf.config.seed, stream::DEPTH);
            let mut captures = Vec::with_capacity(cam.views);
            for view in orbit_plan(&base, &plane, cam.views) {
                let mut image = capture_depth(&scene, &view, &cam.intrinsics)?;
                if cam.depth_noise > 0.0 {
                    image.add_noise(cam.depth_noise, &mut rng);
                }
                captures.push(image);
            }
            wf.captures = captures;
            let rec = reconstruct_mesh(&wf.captures, &plane, &wf.config.reconstruction)?;
            let chart = Arc::new(SurfaceChart::build(rec.mesh.transformed(&rec.object_in_base()))?);
            wf.reconstruction = Some(rec);
            wf.chart = Some(chart.clone());
            Ok(chart)
        })
    }

    pub fn session(&self) -> Option<Session> {
        let chart = self.chart.clone()?;
        let gains = ImpedanceGains::from_config(&self.config.gains, chart.scale());
        Some(Session { world: self.world.clone(), chart, gains })
    }

    pub fn landing_experiment(&self) -> Option<LandingExperiment> {
        let session = self.session()?;
        let landing = &self.config.landing;
        Some(LandingExperiment {
            initial: self.config.initial_q(),
            s: self.config.landing_s(),
            profile: landing.profile,
            settle_time: landing.settle_time,
            hold_time: landing.hold_time,
            gains: session.gains,
            ft_noise: self.config.ft_noise,
            seed: stage_seed(self.config.seed, stream::LANDING),
        })
    }

    /// Runs the landing schedule from the start configuration.
    pub fn land(&mut self) -> Result<&LandingTrace, WorkflowError> {
        self.guarded(Phase::Landed, |wf| {
            let exp = wf.landing_experiment().expect("reconstructed before landing");
            let chart = wf.chart.clone().expect("chart present");
            let trace = run_landing_experiment(&wf.world, &chart, &exp);
            let result = match (&trace.error, trace.samples.last()) {
                (Some(e), _) => Err(WorkflowError::Sim(e.clone())),
                (None, Some(last)) if axial_force(&last.wrench) > CONTACT_THRESHOLD => Ok(()),
                _ => Err(WorkflowError::NoContact),
            };
            wf.landing = Some(trace);
            result
        })?;
        Ok(self.landing.as_ref().expect("landing recorded"))
    }

    /// Joint state at the end of landing.
    pub fn landed_state(&self) -> Option<JointState> {
        self.landing.as_ref().map(|t| t.final_state.joints)
    }

    /// Setpoint held at the end of landing.
    pub fn landed_setpoint(&self) -> Option<SetpointState> {
        let exp = self.landing_experiment()?;
        Some(exp.setpoint(exp.duration()))
    }

    /// Follows `path` in contact, starting from the landed state. The probe
    /// first slides from the landing point to the start of the path while the
    /// distance setpoint moves to the scan value at the landing rate.
    pub fn scan(&mut self, path: &ScanPath) -> Result<&LandingTrace, WorkflowError> {
        self.guarded(Phase::Scanning, |wf| {
            path.validate()?;
            let session = wf.session().expect("chart present");
            let hold = wf.landed_setpoint().expect("landed");
            let start = wf.landed_state().expect("landed");
            let first = [hold.rho_d[0], hold.rho_d[1]];
            let mut waypoints = vec![first];
            waypoints.extend(path.waypoints.iter().filter(|w| **w != first));
            let full = ScanPath { waypoints, speed: path.speed };
            let (d0, d1) = (hold.d(), wf.config.scan.distance);
            let ramp = (d1 - d0).abs() / wf.config.landing.profile.rate;
            let duration = full.duration().max(ramp);
            let trace = run_closed_loop(
                &wf.world,
                &session.chart,
                start,
                duration,
                wf.config.ft_noise,
                stage_seed(wf.config.seed, stream::SCAN),
                |state| {
                    let d = if ramp > 0.0 { d0 + (d1 - d0) * (state.time / ramp).min(1.0) } else { d1 };
                    TickInputs { setpoint: full.setpoint(state.time, d), gains: session.gains, external: Vector6::zeros() }
                },
            );
            let result = match &trace.error {
                Some(e) => Err(WorkflowError::Sim(e.clone())),
                None => Ok(()),
            };
            wf.scan = Some(trace);
            result
        })?;
        Ok(self.scan.as_ref().expect("scan recorded"))
    }

    /// Runs the pipeline up to `target`, stopping at the first fault.
    /// Reaching `Scanning` follows the configured raster.
    pub fn run_to(&mut self, target: Phase) -> Result<(), WorkflowError> {
        while self.phase() != target {
            match self.phase() {
                Phase::Init => self.localise().map(|_| ())?,
                Phase::Localised => self.reconstruct().map(|_| ())?,
                Phase::Reconstructed => self.land().map(|_| ())?,
                Phase::Landed => {
                    let scan = &self.config.scan;
                    let path = usscan_core::control::raster_path(&scan.region, scan.spacing, scan.speed);
                    match path {
                        Ok(p) => self.scan(&p).map(|_| ())?,
                        Err(e) => {
                            let e = WorkflowError::from(e);
                            self.state.fail(e.clone());
                            return Err(e);
                        }
                    }
                }
                Phase::Scanning | Phase::Fault => {
                    return Err(WorkflowError::IllegalTransition { from: self.phase(), to: target });
                }
            }
        }
        Ok(())
    }

    /// Echogenicity volume of the phantom, built on first use.
    pub fn volume(&mut self) -> Arc<VoxelPhantom> {
        if self.volume.is_none() {
            self.volume = Some(Arc::new(self.config.ultrasound.voxel_phantom(&self.config.phantom)));
        }
        self.volume.clone().expect("volume built")
    }

    /// B-mode frame for joint position `q`, using the true probe-to-tissue distance.
    pub fn ultrasound_frame(&mut self, q: &JointVector, rng: &mut ChaCha8Rng) -> GrayImage {
        let volume = self.volume();
        render_frame(&self.world, &volume, &self.config.ultrasound.slice, q, rng)
    }

    pub fn ultrasound_rng(&self) -> ChaCha8Rng {
        stage_rng(self.config.seed, stream::ULTRASOUND)
    }
}

/// B-mode frame at joint position `q`.
pub fn render_frame(
    world: &World,
    volume: &VoxelPhantom,
    params: &usscan_core::sim::SliceParams,
    q: &JointVector,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let probe = world.dynamics.chain().forward_kinematics(q);
    let distance = world.phantom.as_ref().map_or(f64::INFINITY, |p| p.surface.closest_point(&probe.translation).distance);
    us_slice(volume, &probe, distance, params, rng)
}

/// Outcome of [`run_workflow`].
pub struct WorkflowReport {
    pub workflow: Workflow,
    pub result: Result<(), WorkflowError>,
}

impl WorkflowReport {
    pub fn phase(&self) -> Phase {
        self.workflow.phase()
    }
}

/// Runs the whole pipeline from `init` to `target`.
pub fn run_workflow(config: SceneConfig, target: Phase) -> Result<WorkflowReport, WorkflowError> {
    let mut workflow = Workflow::new(config)?;
    let result = workflow.run_to(target);
    Ok(WorkflowReport { workflow, result })
}

/// Chart position of a landed probe.
pub fn chart_position(trace: &LandingTrace) -> Option<Vector2<f64>> {
    trace.samples.last().map(|s| s.s)
}
