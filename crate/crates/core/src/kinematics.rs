//! Serial kinematic chains: forward kinematics, Jacobians, damped
//! least-squares IK and a joint-grid reachability oracle.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose, TaskSpace};

/// Rigid transform in serialization-friendly form (translation + roll/pitch/yaw).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Transform {
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Transform {
            translation: [x, y, z],
            rpy: [0.0; 3],
        }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Transform {
            translation: [x, y, 0.0],
            rpy: [0.0, 0.0, yaw],
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    #[serde(default = "revolute")]
    pub kind: JointKind,
    /// Unit axis in the joint frame. Planar chains use `[0, 0, 1]` for
    /// revolute joints.
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    /// Transform from this joint's moving frame to the next joint.
    #[serde(default)]
    pub offset: Transform,
}

fn revolute() -> JointKind {
    JointKind::Revolute
}

impl Joint {
    pub fn revolute_z(lo: f64, hi: f64, offset: Transform) -> Self {
        Joint {
            kind: JointKind::Revolute,
            axis: [0.0, 0.0, 1.0],
            limits: [lo, hi],
            offset,
        }
    }

    pub fn prismatic(axis: [f64; 3], lo: f64, hi: f64) -> Self {
        Joint {
            kind: JointKind::Prismatic,
            axis,
            limits: [lo, hi],
            offset: Transform::default(),
        }
    }

    fn axis_vec(&self) -> Vector3<f64> {
        Vector3::from(self.axis)
    }

    fn motion(&self, q: f64) -> Isometry3<f64> {
        let axis = nalgebra::Unit::new_normalize(self.axis_vec());
        match self.kind {
            JointKind::Revolute => Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&axis, q),
            ),
            JointKind::Prismatic => Isometry3::from_parts(
                Translation3::from(axis.into_inner() * q),
                UnitQuaternion::identity(),
            ),
        }
    }
}

/// Segment between the origins of two chain frames, inflated by `radius`.
///
/// Frame `0` is the chain base (location of joint 0); frame `i` is the
/// location of joint `i`; frame `n` is the end effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub from: usize,
    pub to: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialChain {
    #[serde(default)]
    pub name: String,
    pub space: TaskSpace,
    #[serde(default)]
    pub base: Transform,
    pub joints: Vec<Joint>,
    #[serde(default)]
    pub capsules: Vec<Capsule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            damping: 0.1,
            max_iters: 200,
            tol: 1e-4,
            restarts: 10,
            rng_seed: 0,
        }
    }
}

impl IkOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.damping > 0.0) || self.restarts < 1 || self.max_iters < 1 {
            return Err(Error::InvalidConfig(
                "IK options need tol > 0, damping > 0, restarts ≥ 1, max_iters ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        IkOptions {
            rng_seed: seed,
            ..self.clone()
        }
    }
}

impl SerialChain {
    pub fn new(
        name: impl Into<String>,
        space: TaskSpace,
        base: Transform,
        joints: Vec<Joint>,
        capsules: Vec<Capsule>,
    ) -> Result<Self> {
        let chain = SerialChain {
            name: name.into(),
            space,
            base,
            joints,
            capsules,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidChain("chain has no joints".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limits[0] < j.limits[1]) {
                return Err(Error::InvalidChain(format!(
                    "joint {i}: lower limit {} is not below upper limit {}",
                    j.limits[0], j.limits[1]
                )));
            }
            let n = j.axis_vec().norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidChain(format!(
                    "joint {i}: axis is not unit length"
                )));
            }
        }
        for c in &self.capsules {
            if c.from > self.dof() || c.to > self.dof() || c.from == c.to || !(c.radius > 0.0) {
                return Err(Error::InvalidChain(format!("bad capsule {c:?}")));
            }
        }
        Ok(())
    }

    /// The planar 2-DoF evaluation arm: unit links, `ψ1 ∈ [0, π/2]`,
    /// `ψ2 ∈ [0, π]`. Home pose (zero configuration) is `(2, 0)`.
    pub fn planar_2dof() -> Self {
        SerialChain {
            name: "arm2".into(),
            space: TaskSpace::R2,
            base: Transform::default(),
            joints: vec![
                Joint::revolute_z(0.0, FRAC_PI_2, Transform::translation(1.0, 0.0, 0.0)),
                Joint::revolute_z(0.0, PI, Transform::translation(1.0, 0.0, 0.0)),
            ],
            capsules: vec![],
        }
    }

    /// Planar 3R arm producing an SE(2) hand pose relative to the waist.
    /// Used for the hand map of the loco-manipulation demo.
    pub fn planar_hand() -> Self {
        SerialChain {
            name: "hand3".into(),
            space: TaskSpace::SE2,
            base: Transform::planar(0.0, -0.2, 0.0),
            joints: vec![
                Joint::revolute_z(-1.4, 0.9, Transform::translation(0.35, 0.0, 0.0)),
                Joint::revolute_z(0.0, 2.2, Transform::translation(0.35, 0.0, 0.0)),
                Joint::revolute_z(-1.2, 1.2, Transform::translation(0.05, 0.0, 0.0)),
            ],
            capsules: vec![],
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Dimension {
                what: "joint vector",
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// World transforms of frames `0..=n` (see [`Capsule`]).
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>> {
        self.check_q(q)?;
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut t = self.base.isometry();
        out.push(t);
        for (j, &qi) in self.joints.iter().zip(q) {
            t = t * j.motion(qi) * j.offset.isometry();
            out.push(t);
        }
        Ok(out)
    }

    /// End-effector pose in the chain's task space. Limits are not enforced.
    pub fn fk(&self, q: &[f64]) -> Result<Pose> {
        let frames = self.frames(q)?;
        Ok(project(self.space, frames.last().unwrap()))
    }

    /// Analytic Jacobian of [`fk`](Self::fk), `M_r × n`. SE2 rows are
    /// `x, y, θ`; SE3 rows are linear then angular velocity (world frame).
    pub fn fk_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let frames = self.frames(q)?;
        let ee = frames.last().unwrap().translation.vector;
        let rows = self.space.pose_dim();
        let mut jac = DMatrix::zeros(rows, self.dof());
        for (i, joint) in self.joints.iter().enumerate() {
            // Joint i moves about/along its axis expressed at frame i.
            let frame = &frames[i];
            let axis = frame.rotation * joint.axis_vec();
            let (lin, ang) = match joint.kind {
                JointKind::Revolute => (axis.cross(&(ee - frame.translation.vector)), axis),
                JointKind::Prismatic => (axis, Vector3::zeros()),
            };
            match self.space {
                TaskSpace::R2 => {
                    jac[(0, i)] = lin.x;
                    jac[(1, i)] = lin.y;
                }
                TaskSpace::SE2 => {
                    jac[(0, i)] = lin.x;
                    jac[(1, i)] = lin.y;
                    jac[(2, i)] = ang.z;
                }
                TaskSpace::R3 => {
                    for k in 0..3 {
                        jac[(k, i)] = lin[k];
                    }
                }
                TaskSpace::SE3 => {
                    for k in 0..3 {
                        jac[(k, i)] = lin[k];
                        jac[(k + 3, i)] = ang[k];
                    }
                }
            }
        }
        Ok(jac)
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q)
                .all(|(j, &v)| v >= j.limits[0] && v <= j.limits[1])
    }

    fn clamp(&self, q: &mut [f64]) {
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            *v = v.clamp(j.limits[0], j.limits[1]);
        }
    }

    /// Uniform random configuration within the joint limits.
    pub fn random_configuration<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.joints
            .iter()
            .map(|j| rng.gen_range(j.limits[0]..=j.limits[1]))
            .collect()
    }

    /// True iff any two declared capsules that do not share a frame intersect.
    pub fn self_collision(&self, q: &[f64]) -> Result<bool> {
        if self.capsules.len() < 2 {
            return Ok(false);
        }
        let frames = self.frames(q)?;
        let origin = |i: usize| frames[i].translation.vector;
        for (a_idx, a) in self.capsules.iter().enumerate() {
            for b in &self.capsules[a_idx + 1..] {
                if a.from == b.from || a.from == b.to || a.to == b.from || a.to == b.to {
                    continue;
                }
                let d =
                    segment_distance(origin(a.from), origin(a.to), origin(b.from), origin(b.to));
                if d < a.radius + b.radius {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Damped least-squares IK with per-step clamping to the joint limits and
    /// random restarts. Returns `None` when no restart reaches `opts.tol`.
    pub fn solve_ik(&self, target: &Pose, opts: &IkOptions) -> Result<Option<Vec<f64>>> {
        opts.validate()?;
        if target.space() != self.space {
            return Err(Error::SpaceMismatch {
                expected: self.space,
                got: target.space(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
        let n = self.dof();
        let m = self.space.pose_dim();
        let damping2 = opts.damping * opts.damping;
        for _ in 0..opts.restarts {
            let mut q = self.random_configuration(&mut rng);
            let mut err = task_error(self.space, &self.fk(&q)?, target);
            let mut err_norm = err.norm();
            let mut stalled = 0;
            for _ in 0..opts.max_iters {
                if err_norm <= opts.tol {
                    break;
                }
                let jac = self.fk_jacobian(&q)?;
                let jjt = &jac * jac.transpose() + DMatrix::identity(m, m) * damping2;
                let Some(chol) = jjt.cholesky() else { break };
                let dq = jac.transpose() * chol.solve(&err);
                for (qi, d) in q.iter_mut().zip(dq.iter()) {
                    *qi += d;
                }
                self.clamp(&mut q);
                let next = task_error(self.space, &self.fk(&q)?, target);
                let next_norm = next.norm();
                // Clamped against a limit or sitting in a local minimum.
                if next_norm > err_norm * (1.0 - 1e-4) {
                    stalled += 1;
                    if stalled >= 5 {
                        err = next;
                        err_norm = next_norm;
                        break;
                    }
                } else {
                    stalled = 0;
                }
                err = next;
                err_norm = next_norm;
            }
            debug_assert_eq!(q.len(), n);
            if err_norm <= opts.tol && !self.self_collision(&q)? {
                return Ok(Some(q));
            }
        }
        Ok(None)
    }

    /// Dense joint-grid reachability test. See [`GridOracle`].
    pub fn oracle_reachable(&self, point: &Pose, grid_resolution: usize) -> Result<bool> {
        GridOracle::new(self, grid_resolution)?.contains(point)
    }
}

fn project(space: TaskSpace, t: &Isometry3<f64>) -> Pose {
    let p = t.translation.vector;
    match space {
        TaskSpace::R2 => Pose::r2(p.x, p.y),
        TaskSpace::SE2 => {
            let r = t.rotation.to_rotation_matrix();
            Pose::se2(p.x, p.y, r[(1, 0)].atan2(r[(0, 0)]))
        }
        TaskSpace::R3 => Pose::r3(p.x, p.y, p.z),
        TaskSpace::SE3 => Pose::se3(p, t.rotation),
    }
}

/// `target − current` in the tangent coordinates used by the Jacobian rows.
fn task_error(space: TaskSpace, current: &Pose, target: &Pose) -> DVector<f64> {
    let c = current.coords();
    let t = target.coords();
    match space {
        TaskSpace::R2 | TaskSpace::R3 => {
            DVector::from_iterator(c.len(), t.iter().zip(c).map(|(a, b)| a - b))
        }
        TaskSpace::SE2 => {
            DVector::from_vec(vec![t[0] - c[0], t[1] - c[1], normalize_angle(t[2] - c[2])])
        }
        TaskSpace::SE3 => {
            let rc = current.rotation_matrix();
            let rt = target.rotation_matrix();
            let rot = Rotation3::from_matrix_unchecked(rt * rc.transpose());
            let w = rot.scaled_axis();
            DVector::from_vec(vec![t[0] - c[0], t[1] - c[1], t[2] - c[2], w.x, w.y, w.z])
        }
    }
}

/// Distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(
    p0: Vector3<f64>,
    p1: Vector3<f64>,
    q0: Vector3<f64>,
    q1: Vector3<f64>,
) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-12;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p0 + d1 * s;
    let c2 = q0 + d2 * t;
    (c1 - c2).norm()
}

/// Precomputed joint-grid FK sweep for chains with at most three joints.
///
/// A point is reachable iff some grid configuration `q` maps within half a grid
/// cell's workspace displacement of it: per task coordinate `k`,
/// `|p_k − fk(q)_k| ≤ ½ Σ_j |J_kj(q)| Δq_j`. Self-colliding grid
/// configurations are skipped.
pub struct GridOracle {
    space: TaskSpace,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Vec<f64>>,
    tolerances: Vec<Vec<f64>>,
}

impl GridOracle {
    pub fn new(chain: &SerialChain, grid_resolution: usize) -> Result<Self> {
        let n = chain.dof();
        if n > 3 {
            return Err(Error::InvalidChain(format!(
                "grid oracle supports at most 3 joints, chain has {n}"
            )));
        }
        if grid_resolution < 2 {
            return Err(Error::InvalidConfig("grid resolution must be ≥ 2".into()));
        }
        let steps: Vec<f64> = chain
            .joints
            .iter()
            .map(|j| (j.limits[1] - j.limits[0]) / (grid_resolution - 1) as f64)
            .collect();
        let total = grid_resolution.pow(n as u32);
        let mut points = Vec::with_capacity(total);
        let mut tolerances = Vec::with_capacity(total);
        let mut q = vec![0.0; n];
        for flat in 0..total {
            let mut rem = flat;
            for (j, joint) in chain.joints.iter().enumerate() {
                let idx = rem % grid_resolution;
                rem /= grid_resolution;
                q[j] = joint.limits[0] + steps[j] * idx as f64;
            }
            if chain.self_collision(&q)? {
                continue;
            }
            let pose = chain.fk(&q)?;
            let jac = chain.fk_jacobian(&q)?;
            let tol: Vec<f64> = (0..jac.nrows())
                .map(|k| 0.5 * (0..n).map(|j| jac[(k, j)].abs() * steps[j]).sum::<f64>())
                .collect();
            points.push(pose.into_coords());
            tolerances.push(tol);
        }
        let cell = tolerances
            .iter()
            .flat_map(|t| t.iter().take(2))
            .fold(0.0f64, |a, &b| a.max(b))
            .max(1e-9);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(bucket(p, cell)).or_default().push(i);
        }
        Ok(GridOracle {
            space: chain.space,
            cell,
            buckets,
            points,
            tolerances,
        })
    }

    pub fn contains(&self, point: &Pose) -> Result<bool> {
        if point.space() != self.space {
            return Err(Error::SpaceMismatch {
                expected: self.space,
                got: point.space(),
            });
        }
        if self.space == TaskSpace::SE3 {
            return Err(Error::UnsupportedSpace {
                space: TaskSpace::SE3,
                what: "grid oracle",
            });
        }
        let p = point.coords();
        let (bx, by) = bucket(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(ids) = self.buckets.get(&(bx + dx, by + dy)) else {
                    continue;
                };
                for &i in ids {
                    let g = &self.points[i];
                    let tol = &self.tolerances[i];
                    let inside = (0..p.len()).all(|k| {
                        let d = if self.space.is_angle_coord(k) {
                            normalize_angle(p[k] - g[k])
                        } else {
                            p[k] - g[k]
                        };
                        d.abs() <= tol[k]
                    });
                    if inside {
                        return Ok(true);
                    }
                }
            }
        }
        Ok(false)
    }
}

fn bucket(p: &[f64], cell: f64) -> (i64, i64) {
    ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Planar lower body: two legs hanging from a common waist frame.
///
/// Each leg maps waist-frame SE(2) coordinates to a foot pose through a hip yaw
/// joint followed by stride and lateral prismatic joints. The right leg is the
/// mirror image of the left. Feet are capsules along their x-axis and must not
/// overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biped {
    pub left: SerialChain,
    pub right: SerialChain,
    pub foot_half_length: f64,
    pub foot_radius: f64,
}

impl Biped {
    pub fn planar() -> Self {
        let left = SerialChain {
            name: "left_leg".into(),
            space: TaskSpace::SE2,
            base: Transform::planar(0.0, 0.1, 0.0),
            joints: vec![
                Joint::revolute_z(-0.35, 0.7, Transform::default()),
                Joint::prismatic([1.0, 0.0, 0.0], -0.25, 0.35),
                Joint::prismatic([0.0, 1.0, 0.0], -0.12, 0.18),
            ],
            capsules: vec![],
        };
        let right = SerialChain {
            name: "right_leg".into(),
            space: TaskSpace::SE2,
            base: Transform::planar(0.0, -0.1, 0.0),
            joints: vec![
                Joint::revolute_z(-0.7, 0.35, Transform::default()),
                Joint::prismatic([1.0, 0.0, 0.0], -0.25, 0.35),
                Joint::prismatic([0.0, 1.0, 0.0], -0.18, 0.12),
            ],
            capsules: vec![],
        };
        Biped {
            left,
            right,
            foot_half_length: 0.1,
            foot_radius: 0.05,
        }
    }

    pub fn leg(&self, side: Side) -> &SerialChain {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn feet_collide(&self, a: &Pose, b: &Pose) -> bool {
        let seg = |p: &Pose| {
            let (s, c) = p.theta().sin_cos();
            let h = self.foot_half_length;
            let x = p.coords()[0];
            let y = p.coords()[1];
            (
                Vector3::new(x - h * c, y - h * s, 0.0),
                Vector3::new(x + h * c, y + h * s, 0.0),
            )
        };
        let (a0, a1) = seg(a);
        let (b0, b1) = seg(b);
        segment_distance(a0, a1, b0, b1) < 2.0 * self.foot_radius
    }

    /// Whether both feet can be held at the given world poses with the waist
    /// on the stance foot, on the swing foot, or at their midpoint.
    pub fn step_feasible(
        &self,
        stance: &Pose,
        swing: &Pose,
        swing_side: Side,
        opts: &IkOptions,
    ) -> Result<bool> {
        if stance.space() != TaskSpace::SE2 || swing.space() != TaskSpace::SE2 {
            return Err(Error::UnsupportedSpace {
                space: stance.space(),
                what: "biped step check (needs SE2)",
            });
        }
        if self.feet_collide(stance, swing) {
            return Ok(false);
        }
        let anchors = [stance.clone(), swing.clone(), stance.midpoint(swing)?];
        let stance_leg = self.leg(swing_side.other());
        let swing_leg = self.leg(swing_side);
        for (k, waist) in anchors.iter().enumerate() {
            let o = opts.with_seed(opts.rng_seed.wrapping_add(k as u64 * 7919));
            let stance_local = waist.relative(stance)?;
            if stance_leg.solve_ik(&stance_local, &o)?.is_none() {
                continue;
            }
            let swing_local = waist.relative(swing)?;
            if swing_leg.solve_ik(&swing_local, &o)?.is_some() {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Swing-left reachability with the right stance foot at the origin.
    pub fn left_from_right_reachable(&self, rel: &Pose, opts: &IkOptions) -> Result<bool> {
        self.step_feasible(&Pose::identity(TaskSpace::SE2), rel, Side::Left, opts)
    }
}
