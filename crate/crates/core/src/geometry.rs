//! Task spaces, poses and the encodings fed to reachability models.
//!
//! A [`Pose`] stores raw coordinates (`x, y, θ` for SE(2), position plus a unit
//! quaternion `w, x, y, z` for SE(3)). Models never see those directly: they see
//! [`encode`]d vectors where orientation is replaced by rotation-matrix entries,
//! which keeps the model input continuous across the ±π seam.
//!
//! The SE(2) encoding keeps only `(cos θ, sin θ)`. The other two entries of the
//! 2×2 rotation matrix are exact duplicates of these (up to sign).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deviation of a stored SE(3) quaternion from unit norm.
pub const QUATERNION_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskSpace {
    R2,
    SE2,
    R3,
    SE3,
}

impl TaskSpace {
    /// Tangent dimension of a pose (`M_r`). This is also the number of
    /// decision variables a pose contributes to a planning problem.
    pub fn pose_dim(self) -> usize {
        match self {
            TaskSpace::R2 => 2,
            TaskSpace::SE2 => 3,
            TaskSpace::R3 => 3,
            TaskSpace::SE3 => 6,
        }
    }

    /// Number of stored coordinates.
    pub fn stored_dim(self) -> usize {
        match self {
            TaskSpace::SE3 => 7,
            other => other.pose_dim(),
        }
    }

    /// Length of the model input vector (`M_x`).
    pub fn input_dim(self) -> usize {
        match self {
            TaskSpace::R2 => 2,
            TaskSpace::SE2 => 4,
            TaskSpace::R3 => 3,
            TaskSpace::SE3 => 12,
        }
    }

    pub fn has_orientation(self) -> bool {
        matches!(self, TaskSpace::SE2 | TaskSpace::SE3)
    }

    /// Whether stored coordinate `i` is an angle (wraps at ±π).
    pub fn is_angle_coord(self, i: usize) -> bool {
        self == TaskSpace::SE2 && i == 2
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskSpace::R2 => "R2",
            TaskSpace::SE2 => "SE2",
            TaskSpace::R3 => "R3",
            TaskSpace::SE3 => "SE3",
        }
    }
}

impl fmt::Display for TaskSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R2" => Ok(TaskSpace::R2),
            "SE2" => Ok(TaskSpace::SE2),
            "R3" => Ok(TaskSpace::R3),
            "SE3" => Ok(TaskSpace::SE3),
            _ => Err(Error::Parse(format!("unknown task space `{s}`"))),
        }
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A point in a task space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    space: TaskSpace,
    coords: Vec<f64>,
}

impl Pose {
    /// Builds a pose from stored coordinates, validating length and (for SE3)
    /// the quaternion norm. SE2 angles are normalized.
    pub fn new(space: TaskSpace, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != space.stored_dim() {
            return Err(Error::Dimension {
                what: "pose coordinates",
                expected: space.stored_dim(),
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPose("non-finite coordinate".into()));
        }
        let mut pose = Pose { space, coords };
        match space {
            TaskSpace::SE2 => pose.coords[2] = normalize_angle(pose.coords[2]),
            TaskSpace::SE3 => {
                let n = pose.coords[3..7].iter().map(|c| c * c).sum::<f64>().sqrt();
                if (n - 1.0).abs() > QUATERNION_NORM_TOL {
                    return Err(Error::InvalidPose(format!("quaternion norm {n} is not 1")));
                }
            }
            _ => {}
        }
        Ok(pose)
    }

    pub fn r2(x: f64, y: f64) -> Self {
        Pose {
            space: TaskSpace::R2,
            coords: vec![x, y],
        }
    }

    pub fn se2(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            space: TaskSpace::SE2,
            coords: vec![x, y, normalize_angle(theta)],
        }
    }

    pub fn r3(x: f64, y: f64, z: f64) -> Self {
        Pose {
            space: TaskSpace::R3,
            coords: vec![x, y, z],
        }
    }

    /// SE(3) pose from a position and a rotation. The quaternion is stored
    /// with a non-negative scalar part.
    pub fn se3(position: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        let q = rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        Pose {
            space: TaskSpace::SE3,
            coords: vec![
                position.x,
                position.y,
                position.z,
                s * q.w,
                s * q.i,
                s * q.j,
                s * q.k,
            ],
        }
    }

    pub fn identity(space: TaskSpace) -> Self {
        let mut coords = vec![0.0; space.stored_dim()];
        if space == TaskSpace::SE3 {
            coords[3] = 1.0;
        }
        Pose { space, coords }
    }

    pub fn space(&self) -> TaskSpace {
        self.space
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn position(&self) -> &[f64] {
        match self.space {
            TaskSpace::R2 | TaskSpace::SE2 => &self.coords[..2],
            TaskSpace::R3 | TaskSpace::SE3 => &self.coords[..3],
        }
    }

    /// Heading of an SE(2) pose, zero for position-only spaces.
    pub fn theta(&self) -> f64 {
        if self.space == TaskSpace::SE2 {
            self.coords[2]
        } else {
            0.0
        }
    }

    fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(Quaternion::new(
            self.coords[3],
            self.coords[4],
            self.coords[5],
            self.coords[6],
        ))
    }

    /// Rotation as a 3×3 matrix (planar rotations act about z).
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        match self.space {
            TaskSpace::R2 | TaskSpace::R3 => Matrix3::identity(),
            TaskSpace::SE2 => {
                let (s, c) = self.coords[2].sin_cos();
                Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
            }
            TaskSpace::SE3 => *self.quaternion().to_rotation_matrix().matrix(),
        }
    }

    fn check_same_space(&self, other: &Pose) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch {
                expected: self.space,
                got: other.space,
            });
        }
        Ok(())
    }

    /// Rigid composition `self ∘ other`. Position-only spaces add.
    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        self.check_same_space(other)?;
        Ok(match self.space {
            TaskSpace::R2 | TaskSpace::R3 => Pose {
                space: self.space,
                coords: self
                    .coords
                    .iter()
                    .zip(&other.coords)
                    .map(|(a, b)| a + b)
                    .collect(),
            },
            TaskSpace::SE2 => {
                let (s, c) = self.coords[2].sin_cos();
                let (x, y) = (other.coords[0], other.coords[1]);
                Pose::se2(
                    self.coords[0] + c * x - s * y,
                    self.coords[1] + s * x + c * y,
                    self.coords[2] + other.coords[2],
                )
            }
            TaskSpace::SE3 => {
                let qa = self.quaternion();
                let qb = other.quaternion();
                let pa = Vector3::new(self.coords[0], self.coords[1], self.coords[2]);
                let pb = Vector3::new(other.coords[0], other.coords[1], other.coords[2]);
                Pose::se3(pa + qa * pb, qa * qb)
            }
        })
    }

    pub fn inverse(&self) -> Pose {
        match self.space {
            TaskSpace::R2 | TaskSpace::R3 => Pose {
                space: self.space,
                coords: self.coords.iter().map(|c| -c).collect(),
            },
            TaskSpace::SE2 => {
                let (s, c) = self.coords[2].sin_cos();
                let (x, y) = (self.coords[0], self.coords[1]);
                Pose::se2(-(c * x + s * y), s * x - c * y, -self.coords[2])
            }
            TaskSpace::SE3 => {
                let qi = self.quaternion().inverse();
                let p = Vector3::new(self.coords[0], self.coords[1], self.coords[2]);
                Pose::se3(-(qi * p), qi)
            }
        }
    }

    /// Pose of `other` expressed in the frame of `self`, i.e. `self⁻¹ ∘ other`.
    pub fn relative(&self, other: &Pose) -> Result<Pose> {
        self.inverse().compose(other)
    }

    /// Midpoint of two poses; headings average along the shortest arc.
    pub fn midpoint(&self, other: &Pose) -> Result<Pose> {
        self.check_same_space(other)?;
        Ok(match self.space {
            TaskSpace::R2 | TaskSpace::R3 => Pose {
                space: self.space,
                coords: self
                    .coords
                    .iter()
                    .zip(&other.coords)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
            },
            TaskSpace::SE2 => Pose::se2(
                0.5 * (self.coords[0] + other.coords[0]),
                0.5 * (self.coords[1] + other.coords[1]),
                self.coords[2] + 0.5 * normalize_angle(other.coords[2] - self.coords[2]),
            ),
            TaskSpace::SE3 => {
                let qa = self.quaternion();
                let qb = other.quaternion();
                let p = 0.5
                    * (Vector3::new(self.coords[0], self.coords[1], self.coords[2])
                        + Vector3::new(other.coords[0], other.coords[1], other.coords[2]));
                Pose::se3(p, qa.slerp(&qb, 0.5))
            }
        })
    }

    /// Component-wise distance used for convergence checks; SE2 angles wrap.
    pub fn distance(&self, other: &Pose) -> Result<f64> {
        self.check_same_space(other)?;
        let mut sq = 0.0;
        for i in 0..self.position().len() {
            let d = self.coords[i] - other.coords[i];
            sq += d * d;
        }
        match self.space {
            TaskSpace::SE2 => {
                let d = normalize_angle(self.coords[2] - other.coords[2]);
                sq += d * d;
            }
            TaskSpace::SE3 => {
                let a = self.quaternion().angle_to(&other.quaternion());
                sq += a * a;
            }
            _ => {}
        }
        Ok(sq.sqrt())
    }

    /// Reflection across the x-axis: `(x, y, θ) → (x, −y, −θ)`.
    pub fn mirrored(&self) -> Pose {
        let mut coords = self.coords.clone();
        match self.space {
            TaskSpace::R2 | TaskSpace::R3 => coords[1] = -coords[1],
            TaskSpace::SE2 => {
                coords[1] = -coords[1];
                coords[2] = normalize_angle(-coords[2]);
            }
            TaskSpace::SE3 => {
                // Reflection y → −y conjugates the rotation: R' = S R S.
                coords[1] = -coords[1];
                coords[4] = -coords[4];
                coords[6] = -coords[6];
            }
        }
        Pose {
            space: self.space,
            coords,
        }
    }

    /// CSV fields in the stored coordinate order.
    pub fn to_csv_fields(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.to_string()).collect()
    }
}

/// Model input for a pose.
pub fn encode(pose: &Pose) -> Vec<f64> {
    let c = &pose.coords;
    match pose.space {
        TaskSpace::R2 | TaskSpace::R3 => c.clone(),
        TaskSpace::SE2 => {
            let (s, co) = c[2].sin_cos();
            vec![c[0], c[1], co, s]
        }
        TaskSpace::SE3 => {
            let r = pose.rotation_matrix();
            let mut out = Vec::with_capacity(12);
            out.extend_from_slice(&c[..3]);
            for i in 0..3 {
                for j in 0..3 {
                    out.push(r[(i, j)]);
                }
            }
            out
        }
    }
}

/// Model input for the pose of `r1` relative to `r0`.
///
/// Position-only spaces use the plain difference `r1 − r0`; oriented spaces
/// encode `r0⁻¹ ∘ r1`.
pub fn encode_rel(r0: &Pose, r1: &Pose) -> Result<Vec<f64>> {
    r0.check_same_space(r1)?;
    match r0.space {
        TaskSpace::R2 | TaskSpace::R3 => Ok(r1
            .coords
            .iter()
            .zip(&r0.coords)
            .map(|(b, a)| b - a)
            .collect()),
        TaskSpace::SE2 => {
            // Kept unnormalized so the Jacobian below is exact everywhere.
            let (s0, c0) = r0.coords[2].sin_cos();
            let dx = r1.coords[0] - r0.coords[0];
            let dy = r1.coords[1] - r0.coords[1];
            let (sp, cp) = (r1.coords[2] - r0.coords[2]).sin_cos();
            Ok(vec![c0 * dx + s0 * dy, -s0 * dx + c0 * dy, cp, sp])
        }
        TaskSpace::SE3 => Ok(encode(&r0.relative(r1)?)),
    }
}

/// Row-major `rows × cols` matrix, used for the small Jacobians exchanged with
/// the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Jacobian {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize, scale: f64) -> Self {
        let mut j = Jacobian::zeros(n, n);
        for i in 0..n {
            j.data[i * n + i] = scale;
        }
        j
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `vᵀ J` for a row vector `v` of length `rows`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += vr * self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Analytic `(∂x_rel/∂r0, ∂x_rel/∂r1)`, each `M_x × M_r`.
pub fn jac_rel(r0: &Pose, r1: &Pose) -> Result<(Jacobian, Jacobian)> {
    r0.check_same_space(r1)?;
    match r0.space {
        TaskSpace::R2 | TaskSpace::R3 => {
            let n = r0.space.pose_dim();
            Ok((Jacobian::identity(n, -1.0), Jacobian::identity(n, 1.0)))
        }
        TaskSpace::SE2 => {
            let (s0, c0) = r0.coords[2].sin_cos();
            let dx = r1.coords[0] - r0.coords[0];
            let dy = r1.coords[1] - r0.coords[1];
            let xr = c0 * dx + s0 * dy;
            let yr = -s0 * dx + c0 * dy;
            let (sp, cp) = (r1.coords[2] - r0.coords[2]).sin_cos();
            let d0 = Jacobian {
                rows: 4,
                cols: 3,
                data: vec![
                    -c0, -s0, yr, //
                    s0, -c0, -xr, //
                    0.0, 0.0, sp, //
                    0.0, 0.0, -cp,
                ],
            };
            let d1 = Jacobian {
                rows: 4,
                cols: 3,
                data: vec![
                    c0, s0, 0.0, //
                    -s0, c0, 0.0, //
                    0.0, 0.0, -sp, //
                    0.0, 0.0, cp,
                ],
            };
            Ok((d0, d1))
        }
        TaskSpace::SE3 => Err(Error::UnsupportedSpace {
            space: TaskSpace::SE3,
            what: "relative-pose Jacobian",
        }),
    }
}

/// Jacobian of [`encode`] w.r.t. the pose coordinates (`M_x × M_r`).
pub fn jac_encode(pose: &Pose) -> Result<Jacobian> {
    jac_rel(&Pose::identity(pose.space), pose).map(|(_, d1)| d1)
}
