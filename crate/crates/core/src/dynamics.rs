//! Rigid-body dynamics of the 7-DoF chain: mass matrix, its configuration
//! derivatives, Christoffel-symbol Coriolis matrix and gravity torques.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ChainFrames, JointVector, SerialChain, DOF};
use crate::se3::skew;

pub type JointMatrix = SMatrix<f64, DOF, DOF>;
type Block = SMatrix<f64, 3, DOF>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("expected {DOF} links, got {0}")]
    WrongLinkCount(usize),
    #[error("link {0} has non-positive mass or inertia")]
    NonPhysical(usize),
}

/// Inertial parameters of one link, expressed in the frame of the joint that moves it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: [f64; 3],
    /// Principal moments about the centre of mass, along the link-frame axes.
    pub inertia: [f64; 3],
}

impl LinkInertia {
    /// Solid cylinder of `length` along +z starting at the joint.
    pub fn cylinder(mass: f64, radius: f64, length: f64) -> Self {
        let lateral = mass * (3.0 * radius * radius + length * length) / 12.0;
        Self { mass, com: [0.0, 0.0, 0.5 * length], inertia: [lateral, lateral, 0.5 * mass * radius * radius] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub links: Vec<LinkInertia>,
    /// Reflected rotor inertia per joint (kg·m²).
    pub armature: [f64; DOF],
    pub gravity: [f64; 3],
}

impl Default for DynamicsConfig {
    /// Link masses of a ~20 kg medical arm, modelled as on-axis cylinders.
    fn default() -> Self {
        let c = LinkInertia::cylinder;
        Self {
            links: vec![
                c(4.0, 0.07, 0.10),
                c(4.0, 0.06, 0.40),
                c(2.5, 0.06, 0.10),
                c(2.7, 0.05, 0.39),
                c(1.5, 0.05, 0.10),
                c(1.2, 0.04, 0.08),
                c(0.9, 0.04, 0.20),
            ],
            armature: [0.05, 0.05, 0.03, 0.03, 0.01, 0.01, 0.01],
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmDynamics {
    chain: SerialChain,
    links: [LinkInertia; DOF],
    armature: JointVector,
    pub gravity: Vector3<f64>,
}

/// Per-link quantities shared by the mass matrix and its derivatives.
struct LinkTerms {
    com: Vector3<f64>,
    jv: Block,
    jw: Block,
    /// Inertia about the COM in base coordinates.
    world_inertia: Matrix3<f64>,
}

impl ArmDynamics {
    pub fn new(chain: SerialChain, config: &DynamicsConfig) -> Result<Self, DynamicsError> {
        if config.links.len() != DOF {
            return Err(DynamicsError::WrongLinkCount(config.links.len()));
        }
        for (i, l) in config.links.iter().enumerate() {
            if !(l.mass > 0.0) || l.inertia.iter().any(|v| !(*v > 0.0)) || config.armature[i] < 0.0 {
                return Err(DynamicsError::NonPhysical(i));
            }
        }
        Ok(Self {
            chain,
            links: std::array::from_fn(|i| config.links[i]),
            armature: JointVector::from(config.armature),
            gravity: Vector3::from(config.gravity),
        })
    }

    pub fn chain(&self) -> &SerialChain {
        &self.chain
    }

    fn link_terms(&self, frames: &ChainFrames) -> [LinkTerms; DOF] {
        std::array::from_fn(|l| {
            let frame = &frames.links[l];
            let com = frame.transform_point(&Vector3::from(self.links[l].com));
            let j = frames.point_jacobian(l, &com);
            let r = frame.rotation;
            LinkTerms {
                com,
                jv: j.fixed_rows::<3>(0).into_owned(),
                jw: j.fixed_rows::<3>(3).into_owned(),
                world_inertia: r * Matrix3::from_diagonal(&Vector3::from(self.links[l].inertia)) * r.transpose(),
            }
        })
    }

    pub fn mass_matrix(&self, q: &JointVector) -> JointMatrix {
        let frames = self.chain.frames(q);
        let mut m = JointMatrix::from_diagonal(&self.armature);
        for (l, t) in self.link_terms(&frames).iter().enumerate() {
            m += self.links[l].mass * t.jv.transpose() * t.jv + t.jw.transpose() * t.world_inertia * t.jw;
        }
        m
    }

    /// M(q) and ∂M/∂q_i for each joint, in closed form.
    pub fn mass_matrix_derivatives(&self, q: &JointVector) -> (JointMatrix, [JointMatrix; DOF]) {
        let frames = self.chain.frames(q);
        let a = &frames.axes;
        let mut m = JointMatrix::from_diagonal(&self.armature);
        let mut dm = [JointMatrix::zeros(); DOF];
        for (l, t) in self.link_terms(&frames).iter().enumerate() {
            let mass = self.links[l].mass;
            m += mass * t.jv.transpose() * t.jv + t.jw.transpose() * t.world_inertia * t.jw;
            for i in 0..=l {
                let mut djv = Block::zeros();
                let mut djw = Block::zeros();
                for j in 0..=l {
                    let (cv, cw) = if i <= j {
                        (a[i].cross(&t.jv.column(j).into_owned()), a[i].cross(&a[j]))
                    } else {
                        (a[j].cross(&t.jv.column(i).into_owned()), Vector3::zeros())
                    };
                    djv.set_column(j, &cv);
                    djw.set_column(j, &cw);
                }
                let s = skew(&a[i]);
                let dw = s * t.world_inertia - t.world_inertia * s;
                let lin = mass * djv.transpose() * t.jv;
                let ang = djw.transpose() * t.world_inertia * t.jw;
                dm[i] += lin + lin.transpose() + ang + ang.transpose() + t.jw.transpose() * dw * t.jw;
            }
        }
        (m, dm)
    }

    /// Coriolis/centrifugal matrix from Christoffel symbols of the first kind,
    /// so that Ṁ − 2C is skew-symmetric.
    pub fn coriolis_matrix(&self, q: &JointVector, dq: &JointVector) -> JointMatrix {
        let (_, dm) = self.mass_matrix_derivatives(q);
        christoffel(&dm, dq)
    }

    /// Ṁ = Σ ∂M/∂q_i · q̇_i.
    pub fn mass_matrix_rate(&self, q: &JointVector, dq: &JointVector) -> JointMatrix {
        let (_, dm) = self.mass_matrix_derivatives(q);
        (0..DOF).fold(JointMatrix::zeros(), |acc, i| acc + dm[i] * dq[i])
    }

    /// Joint torques that balance gravity, g(q) = ∂V/∂q.
    pub fn gravity_torque(&self, q: &JointVector) -> JointVector {
        let frames = self.chain.frames(q);
        self.link_terms(&frames)
            .iter()
            .enumerate()
            .fold(JointVector::zeros(), |acc, (l, t)| acc - t.jv.transpose() * (self.gravity * self.links[l].mass))
    }

    pub fn kinetic_energy(&self, q: &JointVector, dq: &JointVector) -> f64 {
        0.5 * dq.dot(&(self.mass_matrix(q) * dq))
    }

    pub fn potential_energy(&self, q: &JointVector) -> f64 {
        let frames = self.chain.frames(q);
        self.link_terms(&frames)
            .iter()
            .enumerate()
            .map(|(l, t)| -self.links[l].mass * self.gravity.dot(&t.com))
            .sum()
    }

    /// M(q), C(q, q̇)·q̇ and g(q) in one pass.
    pub fn terms(&self, q: &JointVector, dq: &JointVector) -> (JointMatrix, JointVector, JointVector) {
        let (m, dm) = self.mass_matrix_derivatives(q);
        (m, christoffel(&dm, dq) * dq, self.gravity_torque(q))
    }
}

fn christoffel(dm: &[JointMatrix; DOF], dq: &JointVector) -> JointMatrix {
    let mut c = JointMatrix::zeros();
    for k in 0..DOF {
        for j in 0..DOF {
            let mut acc = 0.0;
            for i in 0..DOF {
                acc += 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * dq[i];
            }
            c[(k, j)] = acc;
        }
    }
    c
}
