//! Positional kinematics of a 7-DOF serial arm.
//!
//! Link parameters follow the *modified* (Craig) Denavit–Hartenberg
//! convention: row `i` of the table holds `(a_{i-1}, d_i, alpha_{i-1},
//! theta_offset_i)` and the transform from frame `i-1` to frame `i` is
//!
//! ```text
//! RotX(alpha_{i-1}) * TransX(a_{i-1}) * RotZ(q_i + theta_offset_i) * TransZ(d_i)
//! ```
//!
//! An optional fixed tool transform (`RotX(alpha) * TransX(a) * TransZ(d)`)
//! follows the last joint and locates the point that carries the object.
//! All quantities are expressed in the arm base frame `A`: X and Y
//! horizontal, Z up.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_JOINTS: usize = 7;

/// Joint positions [rad] or velocities [rad/s].
pub type JointVector = SVector<f64, NUM_JOINTS>;
pub type Vec3 = Vector3<f64>;
/// Maps joint velocity to end-effector linear velocity.
pub type PositionJacobian = SMatrix<f64, 3, NUM_JOINTS>;
pub type PositionJacobianPinv = SMatrix<f64, NUM_JOINTS, 3>;
pub type PlanarJacobian = SMatrix<f64, 2, NUM_JOINTS>;

/// Singular values at or below this are dropped by default when inverting.
pub const DEFAULT_PINV_CUTOFF: f64 = 1e-4;

/// Horizontal offsets shorter than this leave the arm yaw undefined.
const YAW_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("end effector lies on the base axis; arm yaw undefined")]
    DegenerateYaw,
    #[error("failed to read arm model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse arm model: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One row of a modified-DH table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DhLink {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhLink {
    pub const fn new(a: f64, d: f64, alpha: f64, theta_offset: f64) -> Self {
        Self {
            a,
            d,
            alpha,
            theta_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub q_min: JointVector,
    pub q_max: JointVector,
    pub qd_min: JointVector,
    pub qd_max: JointVector,
}

impl JointLimits {
    /// Symmetric velocity limits, unbounded-ish positions. Handy for tests.
    pub fn symmetric(q_abs: f64, qd_abs: f64) -> Self {
        Self {
            q_min: JointVector::repeat(-q_abs),
            q_max: JointVector::repeat(q_abs),
            qd_min: JointVector::repeat(-qd_abs),
            qd_max: JointVector::repeat(qd_abs),
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for i in 0..NUM_JOINTS {
            let (lo, hi) = (self.q_min[i], self.q_max[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i}: position limits [{lo}, {hi}] must be finite with min < max"
                )));
            }
            let (vlo, vhi) = (self.qd_min[i], self.qd_max[i]);
            if !(vlo.is_finite() && vhi.is_finite() && vlo < 0.0 && vhi > 0.0) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i}: velocity limits [{vlo}, {vhi}] must straddle zero"
                )));
            }
        }
        Ok(())
    }

    pub fn within_position(&self, q: &JointVector) -> bool {
        (0..NUM_JOINTS).all(|i| q[i] >= self.q_min[i] && q[i] <= self.q_max[i])
    }
}

/// Kinematic chain, mounting height and limits of the arm. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub name: String,
    pub links: [DhLink; NUM_JOINTS],
    /// Fixed transform after the last joint (theta_offset ignored).
    pub tool: DhLink,
    /// Height of the arm base frame above the ground plane [m].
    pub base_height: f64,
    pub limits: JointLimits,
}

/// On-disk layout of an arm parameter file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArmFile {
    #[serde(default)]
    name: String,
    dh: Vec<[f64; 4]>,
    #[serde(default)]
    tool: Option<[f64; 3]>,
    base_height: f64,
    q_min: Vec<f64>,
    q_max: Vec<f64>,
    qd_min: Vec<f64>,
    qd_max: Vec<f64>,
}

fn joint_vector(name: &str, v: &[f64]) -> Result<JointVector, KinematicsError> {
    if v.len() != NUM_JOINTS {
        return Err(KinematicsError::InvalidModel(format!(
            "`{name}` has {} entries, expected {NUM_JOINTS}",
            v.len()
        )));
    }
    Ok(JointVector::from_column_slice(v))
}

const PANDA_JSON: &str = include_str!("../data/panda.json");

impl ArmModel {
    /// The bundled default: a Franka Emika Panda with its hand TCP as tool.
    pub fn panda() -> Self {
        Self::from_json(PANDA_JSON).expect("bundled arm model is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let file: ArmFile = serde_json::from_str(text)?;
        Self::from_file_repr(file)
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ArmFile {
            name: self.name.clone(),
            dh: self
                .links
                .iter()
                .map(|l| [l.a, l.d, l.alpha, l.theta_offset])
                .collect(),
            tool: Some([self.tool.a, self.tool.d, self.tool.alpha]),
            base_height: self.base_height,
            q_min: self.limits.q_min.iter().copied().collect(),
            q_max: self.limits.q_max.iter().copied().collect(),
            qd_min: self.limits.qd_min.iter().copied().collect(),
            qd_max: self.limits.qd_max.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&file).expect("arm model serializes")
    }

    fn from_file_repr(file: ArmFile) -> Result<Self, KinematicsError> {
        if file.dh.len() != NUM_JOINTS {
            return Err(KinematicsError::InvalidModel(format!(
                "`dh` has {} rows, expected {NUM_JOINTS}",
                file.dh.len()
            )));
        }
        let mut links = [DhLink::default(); NUM_JOINTS];
        for (link, row) in links.iter_mut().zip(&file.dh) {
            *link = DhLink::new(row[0], row[1], row[2], row[3]);
        }
        let tool = file
            .tool
            .map(|t| DhLink::new(t[0], t[1], t[2], 0.0))
            .unwrap_or_default();
        let model = Self {
            name: file.name,
            links,
            tool,
            base_height: file.base_height,
            limits: JointLimits {
                q_min: joint_vector("q_min", &file.q_min)?,
                q_max: joint_vector("q_max", &file.q_max)?,
                qd_min: joint_vector("qd_min", &file.qd_min)?,
                qd_max: joint_vector("qd_max", &file.qd_max)?,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let finite = self
            .links
            .iter()
            .chain(std::iter::once(&self.tool))
            .all(|l| {
                l.a.is_finite()
                    && l.d.is_finite()
                    && l.alpha.is_finite()
                    && l.theta_offset.is_finite()
            });
        if !finite || !self.base_height.is_finite() {
            return Err(KinematicsError::InvalidModel(
                "link parameters and base height must be finite".into(),
            ));
        }
        self.limits.validate()?;
        if !forward_position(self, &JointVector::zeros())
            .iter()
            .all(|c| c.is_finite())
        {
            return Err(KinematicsError::InvalidModel(
                "forward kinematics at the zero configuration is not finite".into(),
            ));
        }
        Ok(())
    }

    /// Planar test chain: two unit links about parallel vertical axes,
    /// remaining joints collocated at the tip.
    pub fn planar_two_link() -> Self {
        let mut links = [DhLink::default(); NUM_JOINTS];
        links[1].a = 1.0;
        links[2].a = 1.0;
        Self {
            name: "planar-two-link".into(),
            links,
            tool: DhLink::default(),
            base_height: 0.0,
            limits: JointLimits::symmetric(PI, 2.0),
        }
    }
}

fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Joint axes, points on those axes and the tool point, all in frame `A`.
struct Chain {
    axes: [Vec3; NUM_JOINTS],
    origins: [Vec3; NUM_JOINTS],
    tip: Vec3,
}

fn chain(model: &ArmModel, q: &JointVector) -> Chain {
    let mut rot = Matrix3::identity();
    let mut pos = Vec3::zeros();
    let mut axes = [Vec3::zeros(); NUM_JOINTS];
    let mut origins = [Vec3::zeros(); NUM_JOINTS];
    for (i, link) in model.links.iter().enumerate() {
        rot *= rot_x(link.alpha);
        pos += rot * Vec3::new(link.a, 0.0, 0.0);
        axes[i] = rot.column(2).into_owned();
        origins[i] = pos;
        rot *= rot_z(q[i] + link.theta_offset);
        pos += rot * Vec3::new(0.0, 0.0, link.d);
    }
    let tool = &model.tool;
    rot *= rot_x(tool.alpha);
    pos += rot * Vec3::new(tool.a, 0.0, tool.d);
    Chain {
        axes,
        origins,
        tip: pos,
    }
}

/// End-effector position `A⃗E` in the arm base frame.
pub fn forward_position(model: &ArmModel, q: &JointVector) -> Vec3 {
    chain(model, q).tip
}

/// Positional Jacobian: column `i` is `z_i × (p − o_i)`.
pub fn jacobian_position(model: &ArmModel, q: &JointVector) -> PositionJacobian {
    let c = chain(model, q);
    let mut jac = PositionJacobian::zeros();
    for i in 0..NUM_JOINTS {
        jac.set_column(i, &c.axes[i].cross(&(c.tip - c.origins[i])));
    }
    jac
}

/// Position and Jacobian from a single chain evaluation.
pub fn position_and_jacobian(model: &ArmModel, q: &JointVector) -> (Vec3, PositionJacobian) {
    let c = chain(model, q);
    let mut jac = PositionJacobian::zeros();
    for i in 0..NUM_JOINTS {
        jac.set_column(i, &c.axes[i].cross(&(c.tip - c.origins[i])));
    }
    (c.tip, jac)
}

/// Moore–Penrose pseudoinverse by SVD; singular values `<= cutoff` are dropped.
pub fn pseudoinverse(jac: &PositionJacobian, cutoff: f64) -> PositionJacobianPinv {
    assert!(cutoff > 0.0, "pseudoinverse cutoff must be positive");
    jac.svd(true, true)
        .pseudo_inverse(cutoff)
        .expect("U and V were requested")
}

/// Singular values of the positional Jacobian, descending.
pub fn singular_values(jac: &PositionJacobian) -> [f64; 3] {
    let s = jac.singular_values();
    let mut out = [s[0], s[1], s[2]];
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// XY rows of the positional Jacobian.
pub fn xy_jacobian(model: &ArmModel, q: &JointVector) -> PlanarJacobian {
    jacobian_position(model, q).fixed_rows::<2>(0).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopSingular {
    pub value: f64,
    /// Left singular vector of the largest singular value.
    pub direction: Vector2<f64>,
    /// False when the matrix is (numerically) zero and `direction` is arbitrary.
    pub valid: bool,
}

pub fn max_singular(jac_xy: &PlanarJacobian) -> TopSingular {
    let svd = jac_xy.svd(true, false);
    let u = svd.u.expect("U was requested");
    let k = if svd.singular_values[0] >= svd.singular_values[1] {
        0
    } else {
        1
    };
    let value = svd.singular_values[k];
    let mut direction = u.column(k).into_owned();
    let norm = direction.norm();
    let valid = value > 1e-12 && norm > 0.0;
    if valid {
        direction /= norm;
    } else {
        direction = Vector2::new(1.0, 0.0);
    }
    TopSingular {
        value,
        direction,
        valid,
    }
}

/// Planar angle of a horizontal offset, in (−π, π].
pub fn planar_yaw(offset: &Vec3) -> Result<f64, KinematicsError> {
    if offset.x.hypot(offset.y) <= YAW_EPS {
        return Err(KinematicsError::DegenerateYaw);
    }
    let yaw = offset.y.atan2(offset.x);
    Ok(if yaw <= -PI { PI } else { yaw })
}

/// Yaw of the end effector's horizontal offset from the base axis.
pub fn arm_yaw(model: &ArmModel, q: &JointVector) -> Result<f64, KinematicsError> {
    planar_yaw(&forward_position(model, q))
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}
