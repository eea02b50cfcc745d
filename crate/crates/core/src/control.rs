//! Impedance control in surface coordinates, damping design and setpoint generation.

use nalgebra::{Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::SurfaceChart;
use crate::dynamics::{ArmDynamics, JointMatrix};
use crate::kinematics::{Jacobian, JointVector, SerialChain};
use crate::surface::{surface_sample, task_jacobian, SurfaceError, SurfacePose, SurfaceSample};

pub const DEFAULT_DAMPING_RATIO: f64 = 0.7;
pub const DEFAULT_NULLSPACE_DAMPING: f64 = 2.0;
pub const DEFAULT_MAX_CHART_SPEED: f64 = 0.2;
/// Relative eigenvalue floor used when inverting J M⁻¹ Jᵀ.
const INERTIA_REGULARISATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("task-space inertia is not positive definite")]
    IndefiniteInertia,
    #[error("invalid scan region or spacing: {0}")]
    InvalidRegion(String),
    #[error("invalid landing profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[default]
    Autonomous,
    Teleop,
    HandsOn,
}

/// Gains in controller units: the (s₁, s₂) rows act on unitless chart error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    pub stiffness: Matrix6<f64>,
    pub damping_ratio: Vector6<f64>,
    pub nullspace_damping: f64,
    /// Extra damping on the (s₁, s₂) block, active regardless of stiffness.
    pub tangential_damping: f64,
    /// Value `tangential_damping` takes in hands-on mode.
    pub hands_on_damping: f64,
}

/// Metric gain specification as stored in the scene file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainsConfig {
    /// Tangential stiffness (N/m), converted to chart units with the chart scale.
    pub tangential: f64,
    /// Stiffness along the normal (N/m).
    pub normal: f64,
    /// Rotational stiffness (N·m/rad).
    pub rotational: f64,
    pub damping_ratio: f64,
    /// Nullspace joint damping (N·m·s/rad).
    pub nullspace_damping: f64,
    /// Tangential damping kept in hands-on mode (N·s/m).
    pub hands_on_damping: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self {
            tangential: 300.0,
            normal: 500.0,
            rotational: 5.0,
            damping_ratio: DEFAULT_DAMPING_RATIO,
            nullspace_damping: DEFAULT_NULLSPACE_DAMPING,
            hands_on_damping: 20.0,
        }
    }
}

impl ImpedanceGains {
    /// Converts metric gains for a chart with `scale` metres per chart unit.
    pub fn from_config(cfg: &GainsConfig, scale: f64) -> Self {
        let s2 = scale * scale;
        let k = Vector6::new(cfg.tangential * s2, cfg.tangential * s2, cfg.normal, cfg.rotational, cfg.rotational, cfg.rotational);
        Self {
            stiffness: Matrix6::from_diagonal(&k),
            damping_ratio: Vector6::repeat(cfg.damping_ratio),
            nullspace_damping: cfg.nullspace_damping,
            tangential_damping: 0.0,
            hands_on_damping: cfg.hands_on_damping * s2,
        }
    }

    pub fn diagonal(k: Vector6<f64>, zeta: f64) -> Self {
        Self {
            stiffness: Matrix6::from_diagonal(&k),
            damping_ratio: Vector6::repeat(zeta),
            nullspace_damping: DEFAULT_NULLSPACE_DAMPING,
            tangential_damping: 0.0,
            hands_on_damping: 0.0,
        }
    }
}

/// Copy of `base` with zero (s₁, s₂) stiffness and only light tangential damping,
/// leaving distance and orientation regulation unchanged.
pub fn hands_on_gains(base: &ImpedanceGains) -> ImpedanceGains {
    let mut g = *base;
    for i in 0..2 {
        g.stiffness.row_mut(i).fill(0.0);
        g.stiffness.column_mut(i).fill(0.0);
    }
    g.tangential_damping = base.hands_on_damping;
    g
}

/// Λ = (J M⁻¹ Jᵀ)⁻¹ with small eigenvalues of J M⁻¹ Jᵀ floored.
pub fn task_inertia(jacobian: &Jacobian, mass: &JointMatrix) -> Result<Matrix6<f64>, ControlError> {
    let m_inv = mass.cholesky().ok_or(ControlError::IndefiniteInertia)?.inverse();
    let a = jacobian * m_inv * jacobian.transpose();
    let a = 0.5 * (a + a.transpose());
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) || !max.is_finite() {
        return Err(ControlError::IndefiniteInertia);
    }
    let floor = INERTIA_REGULARISATION * max;
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    Ok(eig.eigenvectors * Matrix6::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Double-diagonalisation damping: with Λ^{-1/2} K Λ^{-1/2} = V diag(k₀) Vᵀ,
/// D = Λ^{1/2} V diag(2ζₘ√k₀) Vᵀ Λ^{1/2}. Per-coordinate ratios are mixed
/// into each mode with the squared eigenvector components as weights.
pub fn design_damping(
    stiffness: &Matrix6<f64>,
    damping_ratio: &Vector6<f64>,
    task_inertia: &Matrix6<f64>,
) -> Result<Matrix6<f64>, ControlError> {
    let lambda = 0.5 * (task_inertia + task_inertia.transpose());
    let eig = lambda.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(ControlError::IndefiniteInertia);
    }
    let u = &eig.eigenvectors;
    let sqrt = u * Matrix6::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * u.transpose();
    let inv_sqrt = u * Matrix6::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * u.transpose();
    let whitened = inv_sqrt * stiffness * inv_sqrt;
    let modes = (0.5 * (whitened + whitened.transpose())).symmetric_eigen();
    let v = &modes.eigenvectors;
    let per_mode = Vector6::from_fn(|m, _| {
        let zeta: f64 = (0..6).map(|i| v[(i, m)] * v[(i, m)] * damping_ratio[i]).sum();
        2.0 * zeta * modes.eigenvalues[m].max(0.0).sqrt()
    });
    let d = sqrt * v * Matrix6::from_diagonal(&per_mode) * v.transpose() * sqrt;
    Ok(0.5 * (d + d.transpose()))
}

/// Desired surface coordinates and their rate for one control tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SetpointState {
    pub rho_d: Vector6<f64>,
    pub drho_d: Vector6<f64>,
    pub mode: ControlMode,
}

impl SetpointState {
    pub fn hold(s: Vector2<f64>, d: f64, mode: ControlMode) -> Self {
        Self { rho_d: Vector6::new(s.x, s.y, d, 0.0, 0.0, 0.0), drho_d: Vector6::zeros(), mode }
    }

    pub fn s(&self) -> Vector2<f64> {
        Vector2::new(self.rho_d[0], self.rho_d[1])
    }

    pub fn d(&self) -> f64 {
        self.rho_d[2]
    }

    /// Same setpoint with zero rate (used for safe hold).
    pub fn frozen(&self) -> Self {
        Self { drho_d: Vector6::zeros(), ..*self }
    }
}

/// Distance schedule for probe landing: a constant-rate descent whose speed
/// rises and falls along half-cosines lasting `blend` seconds at either end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandingProfile {
    pub d_start: f64,
    pub d_end: f64,
    /// Approach speed (m/s).
    pub rate: f64,
    /// Acceleration and deceleration time (s); zero gives a plain ramp.
    pub blend: f64,
}

impl Default for LandingProfile {
    fn default() -> Self {
        Self { d_start: 0.02, d_end: -0.002, rate: 0.002, blend: 2.0 }
    }
}

impl LandingProfile {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.d_start > self.d_end) {
            return Err(ControlError::InvalidProfile("d_start must exceed d_end".into()));
        }
        if !(self.rate > 0.0) {
            return Err(ControlError::InvalidProfile("rate must be positive".into()));
        }
        if !(self.blend >= 0.0) {
            return Err(ControlError::InvalidProfile("blend must be non-negative".into()));
        }
        Ok(())
    }

    fn effective_blend(&self) -> f64 {
        self.blend.clamp(0.0, (self.d_start - self.d_end) / self.rate)
    }

    /// Time at which the schedule reaches `d_end`.
    pub fn duration(&self) -> f64 {
        (self.d_start - self.d_end) / self.rate + self.effective_blend()
    }

    /// Distance travelled and speed at time `t` after the start of the descent.
    fn progress(&self, t: f64) -> (f64, f64) {
        let (r, b) = (self.rate, self.effective_blend());
        let total = self.d_start - self.d_end;
        let cruise = total / r - b;
        let t = t.clamp(0.0, self.duration());
        let w = std::f64::consts::PI / b;
        if b > 0.0 && t < b {
            (r * (0.5 * t - (w * t).sin() / (2.0 * w)), 0.5 * r * (1.0 - (w * t).cos()))
        } else if t < b + cruise {
            (r * (0.5 * b + (t - b)), r)
        } else if b > 0.0 && t < self.duration() {
            let u = t - b - cruise;
            (r * (0.5 * b + cruise + 0.5 * u + (w * u).sin() / (2.0 * w)), 0.5 * r * (1.0 + (w * u).cos()))
        } else {
            (total, 0.0)
        }
    }
}

/// Landing setpoint at time `t`: aligned orientation, fixed chart position,
/// distance following the profile from `d_start` down to `d_end`.
pub fn landing_setpoint(t: f64, profile: &LandingProfile, s: Vector2<f64>) -> SetpointState {
    let (x, v) = profile.progress(t);
    let d = if t >= profile.duration() { profile.d_end } else { profile.d_start - x };
    let mut sp = SetpointState::hold(s, d, ControlMode::Autonomous);
    sp.drho_d[2] = -v;
    sp
}

/// Constant stand-off `margin` above the surface with aligned orientation.
pub fn safety_margin_setpoint(margin: f64, s: Vector2<f64>) -> SetpointState {
    SetpointState::hold(s, margin, ControlMode::Autonomous)
}

/// Axis-aligned rectangle in the chart domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartRegion {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl ChartRegion {
    pub const UNIT: ChartRegion = ChartRegion { min: [0.0, 0.0], max: [1.0, 1.0] };

    pub fn contains(&self, s: &Vector2<f64>) -> bool {
        (0..2).all(|i| s[i] >= self.min[i] && s[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPath {
    pub waypoints: Vec<[f64; 2]>,
    /// Chart units per second.
    pub speed: f64,
}

impl ScanPath {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.waypoints.is_empty() {
            return Err(ControlError::InvalidRegion("path has no waypoints".into()));
        }
        if !(self.speed > 0.0) {
            return Err(ControlError::InvalidRegion("path speed must be positive".into()));
        }
        if !self.waypoints.iter().all(|w| ChartRegion::UNIT.contains(&Vector2::from(*w))) {
            return Err(ControlError::InvalidRegion("waypoint outside the chart domain".into()));
        }
        if self.waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(ControlError::InvalidRegion("repeated consecutive waypoint".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (Vector2::from(w[1]) - Vector2::from(w[0])).norm()).sum()
    }

    pub fn duration(&self) -> f64 {
        self.length() / self.speed
    }

    /// Position and velocity along the path at time `t`, holding at the ends.
    pub fn sample(&self, t: f64) -> (Vector2<f64>, Vector2<f64>) {
        let mut remaining = (t.max(0.0)) * self.speed;
        for w in self.waypoints.windows(2) {
            let (a, b) = (Vector2::from(w[0]), Vector2::from(w[1]));
            let len = (b - a).norm();
            if remaining < len {
                let dir = (b - a) / len;
                return (a + dir * remaining, dir * self.speed);
            }
            remaining -= len;
        }
        (Vector2::from(*self.waypoints.last().expect("validated path")), Vector2::zeros())
    }

    /// Setpoint tracking the path at distance `d` with aligned orientation.
    pub fn setpoint(&self, t: f64, d: f64) -> SetpointState {
        let (s, ds) = self.sample(t);
        let mut sp = SetpointState::hold(s, d, ControlMode::Autonomous);
        sp.drho_d[0] = ds.x;
        sp.drho_d[1] = ds.y;
        sp
    }
}

/// Boustrophedon lines parallel to s₁, `spacing` apart in s₂.
pub fn raster_path(region: &ChartRegion, spacing: f64, speed: f64) -> Result<ScanPath, ControlError> {
    let [x0, y0] = region.min;
    let [x1, y1] = region.max;
    let inside_unit = ChartRegion::UNIT.contains(&Vector2::from(region.min)) && ChartRegion::UNIT.contains(&Vector2::from(region.max));
    if !(x1 > x0 && y1 >= y0) || !inside_unit {
        return Err(ControlError::InvalidRegion(format!("{region:?}")));
    }
    if !(spacing > 0.0) {
        return Err(ControlError::InvalidRegion("spacing must be positive".into()));
    }
    let height = y1 - y0;
    let ys: Vec<f64> = if spacing >= height {
        vec![0.5 * (y0 + y1)]
    } else {
        let lines = (height / spacing + 1e-9).floor() as usize + 1;
        (0..lines).map(|k| (y0 + k as f64 * spacing).min(y1)).collect()
    };
    let mut waypoints = Vec::with_capacity(2 * ys.len());
    for (k, y) in ys.into_iter().enumerate() {
        let (a, b) = if k % 2 == 0 { (x0, x1) } else { (x1, x0) };
        waypoints.push([a, y]);
        waypoints.push([b, y]);
    }
    Ok(ScanPath { waypoints, speed })
}

/// Operator input limits for teleoperation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopLimits {
    /// Chart units per second.
    pub max_chart_speed: f64,
    /// Control tick (s).
    pub tick: f64,
}

impl Default for TeleopLimits {
    fn default() -> Self {
        Self { max_chart_speed: DEFAULT_MAX_CHART_SPEED, tick: 1.0 / 3000.0 }
    }
}

/// Moves (s₁, s₂)_d by `input`, rate-limited and clamped to the unit square.
/// Distance and orientation setpoints are untouched; other modes ignore input.
pub fn teleop_update(current: &SetpointState, input: &Vector2<f64>, limits: &TeleopLimits) -> SetpointState {
    if current.mode != ControlMode::Teleop || !input.iter().all(|v| v.is_finite()) {
        return *current;
    }
    let max_step = limits.max_chart_speed * limits.tick;
    let norm = input.norm();
    let step = if norm > max_step { input * (max_step / norm) } else { *input };
    let mut next = *current;
    next.rho_d[0] = (current.rho_d[0] + step.x).clamp(0.0, 1.0);
    next.rho_d[1] = (current.rho_d[1] + step.y).clamp(0.0, 1.0);
    next.drho_d[0] = 0.0;
    next.drho_d[1] = 0.0;
    next
}

/// Everything the control law needs besides state and setpoint.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    pub chain: &'a SerialChain,
    pub chart: &'a SurfaceChart,
    pub dynamics: &'a ArmDynamics,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub tau: JointVector,
    pub rho: SurfacePose,
    pub drho: Vector6<f64>,
    pub sample: SurfaceSample,
    pub jacobian: Jacobian,
    pub damping: Matrix6<f64>,
}

/// Nullspace projector I − J⁺J.
pub fn nullspace_projector(jacobian: &Jacobian) -> JointMatrix {
    let pinv = jacobian.pseudo_inverse(1e-10).expect("SVD of a finite matrix");
    JointMatrix::identity() - pinv * jacobian
}

/// τ = J_ρᵀ[K(ρ_d − ρ) + D(ρ̇_d − ρ̇)] − k_n (I − J_ρ⁺J_ρ) q̇.
pub fn control_torque(
    ctx: &ControlContext,
    q: &JointVector,
    dq: &JointVector,
    setpoint: &SetpointState,
    gains: &ImpedanceGains,
) -> Result<ControlOutput, ControlError> {
    let probe = ctx.chain.forward_kinematics(q);
    let sample = surface_sample(ctx.chart, &probe)?;
    let jacobian = task_jacobian(ctx.chart, ctx.chain, q)?;
    let mass = ctx.dynamics.mass_matrix(q);
    let lambda = task_inertia(&jacobian, &mass)?;
    let mut damping = design_damping(&gains.stiffness, &gains.damping_ratio, &lambda)?;
    damping[(0, 0)] += gains.tangential_damping;
    damping[(1, 1)] += gains.tangential_damping;
    let rho = sample.pose;
    let drho = jacobian * dq;
    let tau = impedance_torque(&jacobian, &gains.stiffness, &damping, &(setpoint.rho_d - rho.to_vector()), &(setpoint.drho_d - drho))
        - nullspace_projector(&jacobian) * dq * gains.nullspace_damping;
    Ok(ControlOutput { tau, rho, drho, sample, jacobian, damping })
}

/// J_ρᵀ (K e + D ė).
pub fn impedance_torque(
    jacobian: &Jacobian,
    stiffness: &Matrix6<f64>,
    damping: &Matrix6<f64>,
    error: &Vector6<f64>,
    rate_error: &Vector6<f64>,
) -> JointVector {
    jacobian.transpose() * (stiffness * error + damping * rate_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::testing::default_dynamics;
    use crate::mesh::shapes::grid_mesh;
    use crate::se3::RigidTransform;
    use nalgebra::{Matrix6, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const Q0: [f64; 7] = [0.0, 0.6, 0.0, -1.4, 0.0, 1.1, 0.0];

    fn chart_under_probe(dynamics: &ArmDynamics, gap: f64) -> SurfaceChart {
        let q = JointVector::from_column_slice(&Q0);
        let tip = dynamics.chain().forward_kinematics(&q).translation;
        let mesh = grid_mesh(20, 20, 0.2, 0.2, |x, y| 0.01 * (x * 20.0).sin() * (y * 15.0).cos());
        SurfaceChart::build(mesh.transformed(&RigidTransform::from_translation(tip - Vector3::z() * gap))).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> Matrix6<f64> {
        let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        a * a.transpose() * scale + Matrix6::identity() * 0.05 * scale
    }

    #[test]
    fn decoupled_damping() {
        let k = Vector6::new(300.0, 200.0, 500.0, 5.0, 4.0, 3.0);
        let d = design_damping(&Matrix6::from_diagonal(&k), &Vector6::repeat(0.7), &Matrix6::identity()).unwrap();
        let expected = Matrix6::from_diagonal(&k.map(|v| 2.0 * 0.7 * v.sqrt()));
        assert!((d - expected).amax() < 1e-12);
    }

    #[test]
    fn scaled_inertia_damping() {
        let d = design_damping(&Matrix6::identity(), &Vector6::repeat(0.7), &(Matrix6::identity() * 2.0)).unwrap();
        assert!((d - Matrix6::identity() * (2.0 * 0.7 * 2f64.sqrt())).amax() < 1e-12);
    }

    #[test]
    fn damping_is_spd_for_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let k = random_spd(&mut rng, 100.0);
            let lambda = random_spd(&mut rng, 2.0);
            let d = design_damping(&k, &Vector6::repeat(0.7), &lambda).unwrap();
            assert!((d - d.transpose()).amax() < 1e-10);
            assert!(d.symmetric_eigenvalues().min() > 0.0);
            // Generalised eigenproblem oracle: D Λ⁻¹ D = 4ζ² K.
            let lhs = d * lambda.try_inverse().unwrap() * d;
            assert!((lhs - k * (4.0 * 0.49)).amax() < 1e-8 * k.amax());
        }
    }

    #[test]
    fn indefinite_inertia_rejected() {
        let mut lambda = Matrix6::identity();
        lambda[(3, 3)] = -1.0;
        assert_eq!(design_damping(&Matrix6::identity(), &Vector6::repeat(0.7), &lambda), Err(ControlError::IndefiniteInertia));
    }

    #[test]
    fn landing_schedule() {
        let p = LandingProfile { d_start: 0.02, d_end: -0.003, rate: 0.002, blend: 0.0 };
        assert_eq!(landing_setpoint(0.0, &p, Vector2::new(0.5, 0.5)).d(), 0.02);
        let sp = landing_setpoint(5.0, &p, Vector2::new(0.5, 0.5));
        assert!((sp.d() - 0.010).abs() < 1e-15);
        assert_eq!(sp.drho_d[2], -0.002);
        let late = landing_setpoint(1e6, &p, Vector2::new(0.5, 0.5));
        assert_eq!((late.d(), late.drho_d[2]), (-0.003, 0.0));
        assert_eq!(late.rho_d.fixed_rows::<3>(3).into_owned(), Vector3::zeros());
        assert!(LandingProfile { d_start: 0.0, d_end: 0.0, rate: 1.0, blend: 0.0 }.validate().is_err());
        assert!(LandingProfile { blend: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn blended_landing_is_smooth_and_consistent() {
        let p = LandingProfile { d_start: 0.02, d_end: -0.002, rate: 0.002, blend: 1.0 };
        let s = Vector2::new(0.5, 0.5);
        assert!((p.duration() - 12.0).abs() < 1e-12);
        assert_eq!(landing_setpoint(0.0, &p, s).drho_d[2], 0.0);
        assert_eq!(landing_setpoint(p.duration(), &p, s).d(), -0.002);
        let h = 1e-5;
        let mut t = 0.0;
        while t < p.duration() - h {
            let (a, b) = (landing_setpoint(t, &p, s), landing_setpoint(t + h, &p, s));
            assert!(b.d() <= a.d());
            let fd = (b.d() - a.d()) / h;
            let mid = landing_setpoint(t + 0.5 * h, &p, s).drho_d[2];
            assert!((fd - mid).abs() < 1e-8, "t={t} fd={fd} v={mid}");
            assert!(mid >= -p.rate - 1e-15);
            t += 0.01;
        }
        assert!(landing_setpoint(p.duration() - 1e-6, &p, s).drho_d[2].abs() < 1e-9);
        let short = LandingProfile { blend: 100.0, ..p };
        assert!((short.duration() - 22.0).abs() < 1e-12);
        assert!((landing_setpoint(11.0, &short, s).d() - 0.009).abs() < 1e-12);
    }

    #[test]
    fn safety_margin_holds() {
        let sp = safety_margin_setpoint(0.005, Vector2::new(0.2, 0.3));
        assert_eq!(sp.rho_d, Vector6::new(0.2, 0.3, 0.005, 0.0, 0.0, 0.0));
        assert_eq!(sp.drho_d, Vector6::zeros());
        assert_eq!(safety_margin_setpoint(0.0, Vector2::new(0.2, 0.3)).d(), 0.0);
    }

    #[test]
    fn raster_counts() {
        let p = raster_path(&ChartRegion::UNIT, 0.5, 0.1).unwrap();
        assert_eq!(p.waypoints, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.0, 0.5], [0.0, 1.0], [1.0, 1.0]]);
        let single = raster_path(&ChartRegion { min: [0.2, 0.4], max: [0.8, 0.5] }, 0.1, 0.1).unwrap();
        assert_eq!(single.waypoints.len(), 2);
        assert!(raster_path(&ChartRegion::UNIT, 0.0, 0.1).is_err());
        assert!(raster_path(&ChartRegion { min: [0.5, 0.0], max: [0.5, 1.0] }, 0.1, 0.1).is_err());
    }

    #[test]
    fn path_sampling() {
        let p = raster_path(&ChartRegion::UNIT, 0.5, 0.1).unwrap();
        assert!((p.duration() - 40.0).abs() < 1e-12);
        let (s, v) = p.sample(12.0);
        assert!((s - Vector2::new(1.0, 0.2)).norm() < 1e-12);
        assert!((v - Vector2::new(0.0, 0.1)).norm() < 1e-12);
        assert_eq!(p.sample(100.0), (Vector2::new(1.0, 1.0), Vector2::zeros()));
    }

    #[test]
    fn teleop_accumulates_and_clamps() {
        let limits = TeleopLimits { max_chart_speed: 0.2, tick: 0.01 };
        let mut sp = SetpointState::hold(Vector2::new(0.5, 0.5), 0.001, ControlMode::Teleop);
        assert_eq!(teleop_update(&sp, &Vector2::zeros(), &limits), sp);
        for _ in 0..50 {
            sp = teleop_update(&sp, &Vector2::new(0.001, -0.0005), &limits);
        }
        assert!((sp.s() - Vector2::new(0.55, 0.475)).norm() < 1e-12);
        assert_eq!(sp.d(), 0.001);
        let fast = teleop_update(&sp, &Vector2::new(1.0, 0.0), &limits);
        assert!((fast.s().x - sp.s().x - 0.002).abs() < 1e-15);
        let mut edge = SetpointState::hold(Vector2::new(0.999, 0.0), 0.0, ControlMode::Teleop);
        edge = teleop_update(&edge, &Vector2::new(0.0015, -0.001), &limits);
        assert_eq!(edge.s(), Vector2::new(1.0, 0.0));
        let auto = SetpointState::hold(Vector2::new(0.5, 0.5), 0.0, ControlMode::Autonomous);
        assert_eq!(teleop_update(&auto, &Vector2::new(0.001, 0.0), &limits), auto);
    }

    #[test]
    fn hands_on_is_idempotent_and_psd() {
        let base = ImpedanceGains::from_config(&GainsConfig::default(), 0.2);
        let once = hands_on_gains(&base);
        assert_eq!(hands_on_gains(&once), once);
        assert_eq!(once.stiffness.fixed_view::<2, 6>(0, 0).amax(), 0.0);
        assert_eq!(once.stiffness.fixed_view::<4, 4>(2, 2), base.stiffness.fixed_view::<4, 4>(2, 2));
        assert!(once.stiffness.symmetric_eigenvalues().min() >= 0.0);
        assert!(once.tangential_damping > 0.0);
    }

    #[test]
    fn equilibrium_torque_is_exactly_zero() {
        let dynamics = default_dynamics();
        let chart = chart_under_probe(&dynamics, 0.01);
        let ctx = ControlContext { chain: dynamics.chain(), chart: &chart, dynamics: &dynamics };
        let q = JointVector::from_column_slice(&Q0);
        let gains = ImpedanceGains::from_config(&GainsConfig::default(), chart.scale());
        let rho = surface_sample(&chart, &dynamics.chain().forward_kinematics(&q)).unwrap().pose;
        for mode in [ControlMode::Autonomous, ControlMode::Teleop, ControlMode::HandsOn] {
            let sp = SetpointState { rho_d: rho.to_vector(), drho_d: Vector6::zeros(), mode };
            let g = if mode == ControlMode::HandsOn { hands_on_gains(&gains) } else { gains };
            let out = control_torque(&ctx, &q, &JointVector::zeros(), &sp, &g).unwrap();
            assert_eq!(out.tau, JointVector::zeros());
        }
    }

    #[test]
    fn matches_direct_formula() {
        let dynamics = default_dynamics();
        let chart = chart_under_probe(&dynamics, 0.02);
        let ctx = ControlContext { chain: dynamics.chain(), chart: &chart, dynamics: &dynamics };
        let gains = ImpedanceGains::from_config(&GainsConfig::default(), chart.scale());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q = JointVector::from_column_slice(&Q0) + JointVector::from_fn(|_, _| rng.random_range(-0.05..0.05));
            let dq = JointVector::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let sp = SetpointState {
                rho_d: Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01)) + Vector6::new(0.5, 0.5, 0.0, 0.0, 0.0, 0.0),
                drho_d: Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01)),
                mode: ControlMode::Autonomous,
            };
            let out = control_torque(&ctx, &q, &dq, &sp, &gains).unwrap();
            // Independent transcription: Λ via explicit inverses, D via the generalised eigenproblem.
            let j = out.jacobian;
            let m = dynamics.mass_matrix(&q);
            let lambda = (j * m.try_inverse().unwrap() * j.transpose()).try_inverse().unwrap();
            let d = out.damping;
            assert!((d * lambda.try_inverse().unwrap() * d - gains.stiffness * (4.0 * 0.49)).amax() < 1e-6 * gains.stiffness.amax());
            let rho = crate::surface::surface_pose_at(&chart, dynamics.chain(), &q).unwrap().to_vector();
            let task = j.transpose() * (gains.stiffness * (sp.rho_d - rho) + d * (sp.drho_d - j * dq));
            let n = JointMatrix::identity() - j.transpose() * (j * j.transpose()).try_inverse().unwrap() * j;
            let expected = task - n * dq * gains.nullspace_damping;
            assert!((out.tau - expected).amax() < 1e-9 * (1.0 + expected.amax()));
        }
    }

    #[test]
    fn pure_distance_error_on_flat_mesh() {
        let dynamics = default_dynamics();
        let q = JointVector::from_column_slice(&Q0);
        let tip = dynamics.chain().forward_kinematics(&q).translation;
        let flat = grid_mesh(10, 10, 0.2, 0.2, |_, _| 0.0).transformed(&RigidTransform::from_translation(tip - Vector3::z() * 0.01));
        let chart = SurfaceChart::build(flat).unwrap();
        let ctx = ControlContext { chain: dynamics.chain(), chart: &chart, dynamics: &dynamics };
        let gains = ImpedanceGains::diagonal(Vector6::new(10.0, 10.0, 500.0, 5.0, 5.0, 5.0), 0.7);
        let rho = surface_sample(&chart, &dynamics.chain().forward_kinematics(&q)).unwrap().pose.to_vector();
        let mut rho_d = rho;
        rho_d[2] -= 0.004;
        let sp = SetpointState { rho_d, drho_d: Vector6::zeros(), mode: ControlMode::Autonomous };
        let out = control_torque(&ctx, &q, &JointVector::zeros(), &sp, &gains).unwrap();
        let expected = out.jacobian.transpose() * Vector6::new(0.0, 0.0, 500.0 * -0.004, 0.0, 0.0, 0.0);
        assert!((out.tau - expected).amax() < 1e-12);
        // On a horizontal plane the d row is the vertical row of J_x.
        let jx = dynamics.chain().geometric_jacobian(&q);
        assert!((out.jacobian.row(2) - jx.row(2)).amax() < 1e-6);
    }

    proptest! {
        #[test]
        fn torque_is_linear_in_error(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = Jacobian::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let k = random_spd(&mut rng, 50.0);
            let d = random_spd(&mut rng, 5.0);
            let e1 = Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
            let e2 = Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
            let z = Vector6::zeros();
            let lhs = impedance_torque(&j, &k, &d, &(e1 * a + e2 * b), &z);
            let rhs = impedance_torque(&j, &k, &d, &e1, &z) * a + impedance_torque(&j, &k, &d, &e2, &z) * b;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn raster_waypoints_stay_inside(x0 in 0.0f64..0.5, y0 in 0.0f64..0.5, w in 0.01f64..0.5, h in 0.0f64..0.5, spacing in 0.005f64..0.6) {
            let region = ChartRegion { min: [x0, y0], max: [x0 + w, y0 + h] };
            let path = raster_path(&region, spacing, 0.1).unwrap();
            prop_assert!(path.validate().is_ok());
            for wp in &path.waypoints {
                prop_assert!(region.contains(&Vector2::from(*wp)));
            }
        }
    }
}
