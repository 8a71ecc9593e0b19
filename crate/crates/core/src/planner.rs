//! Sequential QP planning over poses constrained by learned reachability maps.
//!
//! Each iteration linearizes every reachability constraint
//! `f_R(x_rel(from, to)) ≥ margin` at the current poses, solves a convex QP for
//! the update `Δ` inside a trust box and applies it. Poses marked fixed are
//! constants and do not appear in the QP.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_rel, jac_rel, normalize_angle, Pose, TaskSpace};
use crate::models::{Mirrored, ReachabilityMap};
use crate::qpsolver::{solve_qp, QpProblem, QpStatus};
use crate::sampling::sample_rng;

pub type MapHandle = Arc<dyn ReachabilityMap>;

/// Added to the QP Hessian diagonal.
pub const Q_REGULARIZATION: f64 = 1e-8;

const ELASTIC_PENALTY: f64 = 1e3;
const MIN_TRUST_SCALE: f64 = 1e-6;
/// Floor of the ℓ1 merit penalty weight; raised to twice the largest QP
/// multiplier seen.
const MIN_MERIT_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One pose reaching a target from the origin.
    Basic,
    /// A base pose (index 0) and end-effector poses sharing it.
    Simultaneous,
    /// A chain of poses, each reachable from its predecessor.
    Sequential,
    /// `Sequential` plus scalar trajectory parameters.
    SequentialWithParam,
}

/// Per-dimension trust radii; expanded to one bound per QP variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRadius {
    pub position: f64,
    pub angle: f64,
    /// May be zero, which freezes the parameters.
    pub param: f64,
}

impl Default for TrustRadius {
    fn default() -> Self {
        TrustRadius {
            position: 0.1,
            angle: 0.2,
            param: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpConfig {
    /// Weight of the base target (Simultaneous) or of the smoothing term
    /// between consecutive poses (Sequential variants).
    pub lambda: f64,
    pub trust_radius: TrustRadius,
    pub max_iters: usize,
    pub step_tol: f64,
    pub constraint_tol: f64,
    pub rng_seed: u64,
    /// Uniform jitter added to free initial positions; zero disables it.
    pub init_jitter: f64,
    /// Required value of every reachability constraint built by the
    /// `plan_*` helpers.
    pub margin: f64,
    pub qp_tol: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            lambda: 1.0,
            trust_radius: TrustRadius::default(),
            max_iters: 100,
            step_tol: 1e-6,
            constraint_tol: 1e-6,
            rng_seed: 0,
            init_jitter: 0.0,
            margin: 0.0,
            qp_tol: 1e-9,
        }
    }
}

impl SqpConfig {
    /// Defaults with the placement weighting of the base target.
    pub fn placement() -> Self {
        SqpConfig {
            lambda: 1e-2,
            ..SqpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trust_radius;
        let ok = self.lambda >= 0.0
            && self.lambda.is_finite()
            && t.position > 0.0
            && t.angle > 0.0
            && t.param >= 0.0
            && t.position.is_finite()
            && t.angle.is_finite()
            && t.param.is_finite()
            && self.step_tol > 0.0
            && self.constraint_tol > 0.0
            && self.qp_tol > 0.0
            && self.init_jitter >= 0.0
            && self.margin.is_finite()
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid SQP config: {self:?}"
            )))
        }
    }
}

/// A pose that moves with a scalar parameter.
pub trait PoseTrajectory: Send + Sync {
    fn pose(&self, s: f64) -> Pose;
    /// `d(pose coordinates)/ds`.
    fn derivative(&self, s: f64) -> Vec<f64>;
}

/// SE2 arc `(cx + r cos s, cy + r sin s, s)`, e.g. a door handle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcTrajectory {
    pub center: [f64; 2],
    pub radius: f64,
}

impl PoseTrajectory for ArcTrajectory {
    fn pose(&self, s: f64) -> Pose {
        let (sn, cs) = s.sin_cos();
        Pose::se2(
            self.center[0] + self.radius * cs,
            self.center[1] + self.radius * sn,
            s,
        )
    }

    fn derivative(&self, s: f64) -> Vec<f64> {
        let (sn, cs) = s.sin_cos();
        vec![-self.radius * sn, self.radius * cs, 1.0]
    }
}

/// Where one side of a reachability constraint sits.
#[derive(Clone)]
pub enum Anchor {
    Pose(usize),
    /// Midpoint of two poses, e.g. a waist during double support.
    Midpoint(usize, usize),
    /// `trajectory(s_k)` for parameter `k`.
    Trajectory {
        param: usize,
        trajectory: Arc<dyn PoseTrajectory>,
    },
    Fixed(Pose),
}

/// `model(x_rel(from, to)) ≥ margin`.
#[derive(Clone)]
pub struct ReachConstraint {
    pub model: MapHandle,
    pub from: Anchor,
    pub to: Anchor,
    pub margin: f64,
    pub label: String,
}

/// `Σ a·r_i + Σ b·s_k ≥ lower` over raw pose coordinates and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub pose_terms: Vec<(usize, Vec<f64>)>,
    pub param_terms: Vec<(usize, f64)>,
    pub lower: f64,
}

/// Half-plane `normal · (x, y) ≥ offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl HalfPlane {
    pub fn on_pose(&self, pose: usize, space: TaskSpace) -> LinearConstraint {
        let mut a = vec![0.0; space.pose_dim()];
        a[0] = self.normal[0];
        a[1] = self.normal[1];
        LinearConstraint {
            pose_terms: vec![(pose, a)],
            param_terms: vec![],
            lower: self.offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub pose: usize,
    pub value: Pose,
}

#[derive(Clone)]
pub struct PlanProblem {
    pub variant: Variant,
    pub space: TaskSpace,
    /// Initial guesses for `r_0..r_N`.
    pub poses: Vec<Pose>,
    pub fixed: Vec<bool>,
    /// Initial guesses for the trajectory parameters.
    pub params: Vec<f64>,
    pub fixed_params: Vec<bool>,
    pub targets: Vec<Target>,
    pub constraints: Vec<ReachConstraint>,
    pub linear: Vec<LinearConstraint>,
    /// Smoothing couples `r_i` with `r_{i+stride}`. Footstep chains use 2 so
    /// each foot is smoothed against its own previous placement.
    pub smoothing_stride: usize,
}

impl PlanProblem {
    fn empty(variant: Variant, space: TaskSpace, poses: Vec<Pose>) -> Self {
        let n = poses.len();
        PlanProblem {
            variant,
            space,
            poses,
            fixed: vec![false; n],
            params: vec![],
            fixed_params: vec![],
            targets: vec![],
            constraints: vec![],
            linear: vec![],
            smoothing_stride: 1,
        }
    }

    /// One pose `r` with target `target` and `model(encode(r)) ≥ margin`.
    pub fn basic(model: MapHandle, target: Pose, initial: Pose, margin: f64) -> Self {
        let space = target.space();
        let mut p = PlanProblem::empty(Variant::Basic, space, vec![initial]);
        p.targets.push(Target {
            pose: 0,
            value: target,
        });
        p.constraints.push(ReachConstraint {
            model,
            from: Anchor::Fixed(Pose::identity(space)),
            to: Anchor::Pose(0),
            margin,
            label: "reach".into(),
        });
        p
    }

    /// Base `r_0` plus end effectors `r_1..r_N`, each reachable from `r_0`.
    /// End effectors start at their targets.
    pub fn simultaneous(
        model: MapHandle,
        base_initial: Pose,
        base_target: Pose,
        ee_targets: &[Pose],
        margin: f64,
    ) -> Self {
        let space = base_initial.space();
        let mut poses = vec![base_initial];
        poses.extend(ee_targets.iter().cloned());
        let mut p = PlanProblem::empty(Variant::Simultaneous, space, poses);
        p.targets.push(Target {
            pose: 0,
            value: base_target,
        });
        for (i, t) in ee_targets.iter().enumerate() {
            p.targets.push(Target {
                pose: i + 1,
                value: t.clone(),
            });
            p.constraints.push(ReachConstraint {
                model: model.clone(),
                from: Anchor::Pose(0),
                to: Anchor::Pose(i + 1),
                margin,
                label: format!("ee{}", i + 1),
            });
        }
        p
    }

    /// Chain `r_0..r_N` where edge `i → i+1` uses `edge_models[i]`.
    pub fn sequential(edge_models: &[MapHandle], initial: Vec<Pose>, margin: f64) -> Result<Self> {
        if initial.len() != edge_models.len() + 1 {
            return Err(Error::Dimension {
                what: "sequential poses (edges + 1)",
                expected: edge_models.len() + 1,
                got: initial.len(),
            });
        }
        let space = initial[0].space();
        let mut p = PlanProblem::empty(Variant::Sequential, space, initial);
        for (i, m) in edge_models.iter().enumerate() {
            p.constraints.push(ReachConstraint {
                model: m.clone(),
                from: Anchor::Pose(i),
                to: Anchor::Pose(i + 1),
                margin,
                label: format!("edge{i}"),
            });
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.space == TaskSpace::SE3 {
            return Err(Error::UnsupportedSpace {
                space: TaskSpace::SE3,
                what: "planning",
            });
        }
        if self.poses.is_empty() {
            return Err(Error::InvalidConfig("plan needs at least one pose".into()));
        }
        if self.variant != Variant::Basic && self.poses.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "{:?} plan needs at least two poses",
                self.variant
            )));
        }
        if self.smoothing_stride == 0 {
            return Err(Error::InvalidConfig(
                "smoothing stride must be positive".into(),
            ));
        }
        if self.fixed.len() != self.poses.len() {
            return Err(Error::Dimension {
                what: "fixed flags",
                expected: self.poses.len(),
                got: self.fixed.len(),
            });
        }
        if self.fixed_params.len() != self.params.len() {
            return Err(Error::Dimension {
                what: "fixed parameter flags",
                expected: self.params.len(),
                got: self.fixed_params.len(),
            });
        }
        if self.params.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        let pose_ok = |i: usize| -> Result<()> {
            if i < self.poses.len() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("pose index {i} out of range")))
            }
        };
        let param_ok = |k: usize| -> Result<()> {
            if k < self.params.len() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "parameter index {k} out of range"
                )))
            }
        };
        for p in &self.poses {
            if p.space() != self.space {
                return Err(Error::SpaceMismatch {
                    expected: self.space,
                    got: p.space(),
                });
            }
        }
        for t in &self.targets {
            pose_ok(t.pose)?;
            if t.value.space() != self.space {
                return Err(Error::SpaceMismatch {
                    expected: self.space,
                    got: t.value.space(),
                });
            }
        }
        for c in &self.constraints {
            if c.model.space() != self.space {
                return Err(Error::SpaceMismatch {
                    expected: self.space,
                    got: c.model.space(),
                });
            }
            if c.model.input_dim() != self.space.input_dim() {
                return Err(Error::Dimension {
                    what: "reachability model input",
                    expected: self.space.input_dim(),
                    got: c.model.input_dim(),
                });
            }
            for a in [&c.from, &c.to] {
                match a {
                    Anchor::Pose(i) => pose_ok(*i)?,
                    Anchor::Midpoint(i, j) => {
                        pose_ok(*i)?;
                        pose_ok(*j)?;
                    }
                    Anchor::Trajectory { param, .. } => param_ok(*param)?,
                    Anchor::Fixed(p) => {
                        if p.space() != self.space {
                            return Err(Error::SpaceMismatch {
                                expected: self.space,
                                got: p.space(),
                            });
                        }
                    }
                }
            }
        }
        for l in &self.linear {
            for (i, a) in &l.pose_terms {
                pose_ok(*i)?;
                if a.len() != self.space.pose_dim() {
                    return Err(Error::Dimension {
                        what: "linear constraint coefficients",
                        expected: self.space.pose_dim(),
                        got: a.len(),
                    });
                }
            }
            for (k, _) in &l.param_terms {
                param_ok(*k)?;
            }
        }
        Ok(())
    }

    fn state(&self) -> State {
        State {
            poses: self.poses.clone(),
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    poses: Vec<Pose>,
    params: Vec<f64>,
}

/// Column of each free pose block and free parameter in the QP.
struct Layout {
    dim: usize,
    pose_col: Vec<Option<usize>>,
    param_col: Vec<Option<usize>>,
    n: usize,
}

impl Layout {
    fn new(p: &PlanProblem) -> Self {
        let dim = p.space.pose_dim();
        let mut n = 0;
        let pose_col = p
            .fixed
            .iter()
            .map(|&f| {
                (!f).then(|| {
                    n += dim;
                    n - dim
                })
            })
            .collect();
        let param_col = p
            .fixed_params
            .iter()
            .map(|&f| {
                (!f).then(|| {
                    n += 1;
                    n - 1
                })
            })
            .collect();
        Layout {
            dim,
            pose_col,
            param_col,
            n,
        }
    }

    fn radii(&self, space: TaskSpace, t: &TrustRadius) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for col in self.pose_col.iter().flatten() {
            for k in 0..self.dim {
                r[col + k] = if space.is_angle_coord(k) {
                    t.angle
                } else {
                    t.position
                };
            }
        }
        for col in self.param_col.iter().flatten() {
            r[*col] = t.param;
        }
        r
    }
}

/// `a ⊖ b` on raw coordinates with wrapped SE2 headings.
fn pose_diff(a: &Pose, b: &Pose) -> Vec<f64> {
    let space = a.space();
    a.coords()
        .iter()
        .zip(b.coords())
        .enumerate()
        .map(|(k, (x, y))| {
            if space.is_angle_coord(k) {
                normalize_angle(x - y)
            } else {
                x - y
            }
        })
        .collect()
}

fn target_weight(p: &PlanProblem, t: &Target, lambda: f64) -> f64 {
    if p.variant == Variant::Simultaneous && t.pose == 0 {
        lambda
    } else {
        1.0
    }
}

fn smoothing_active(p: &PlanProblem) -> bool {
    matches!(
        p.variant,
        Variant::Sequential | Variant::SequentialWithParam
    )
}

fn objective(p: &PlanProblem, st: &State, lambda: f64) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut obj = 0.0;
    for t in &p.targets {
        obj += 0.5 * target_weight(p, t, lambda) * sq(&pose_diff(&st.poses[t.pose], &t.value));
    }
    if smoothing_active(p) && lambda > 0.0 {
        let k = p.smoothing_stride;
        for i in 0..st.poses.len().saturating_sub(k) {
            obj += 0.5 * lambda * sq(&pose_diff(&st.poses[i + k], &st.poses[i]));
        }
        if p.variant == Variant::SequentialWithParam {
            for w in st.params.windows(2) {
                obj += 0.5 * lambda * (w[1] - w[0]).powi(2);
            }
        }
    }
    obj
}

fn anchor_pose(a: &Anchor, st: &State) -> Result<Pose> {
    match a {
        Anchor::Pose(i) => Ok(st.poses[*i].clone()),
        Anchor::Midpoint(i, j) => st.poses[*i].midpoint(&st.poses[*j]),
        Anchor::Trajectory { param, trajectory } => Ok(trajectory.pose(st.params[*param])),
        Anchor::Fixed(p) => Ok(p.clone()),
    }
}

/// Adds `v · ∂anchor/∂(free variables)` into `row`.
fn scatter(a: &Anchor, st: &State, v: &[f64], layout: &Layout, row: &mut [f64]) {
    let add_pose = |i: usize, w: f64, row: &mut [f64]| {
        if let Some(col) = layout.pose_col[i] {
            for (k, vk) in v.iter().enumerate() {
                row[col + k] += w * vk;
            }
        }
    };
    match a {
        Anchor::Pose(i) => add_pose(*i, 1.0, row),
        Anchor::Midpoint(i, j) => {
            add_pose(*i, 0.5, row);
            add_pose(*j, 0.5, row);
        }
        Anchor::Trajectory { param, trajectory } => {
            if let Some(col) = layout.param_col[*param] {
                let d = trajectory.derivative(st.params[*param]);
                row[col] += v.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Anchor::Fixed(_) => {}
    }
}

/// Value and gradient row of one reachability constraint.
fn linearize(c: &ReachConstraint, st: &State, layout: &Layout) -> Result<(f64, Vec<f64>)> {
    let from = anchor_pose(&c.from, st)?;
    let to = anchor_pose(&c.to, st)?;
    let x = encode_rel(&from, &to)?;
    let f = c.model.value_unchecked(&x);
    let g = c.model.grad_unchecked(&x);
    let (j0, j1) = jac_rel(&from, &to)?;
    let mut row = vec![0.0; layout.n];
    scatter(&c.from, st, &j0.left_mul(&g), layout, &mut row);
    scatter(&c.to, st, &j1.left_mul(&g), layout, &mut row);
    Ok((f, row))
}

fn reach_values(p: &PlanProblem, st: &State) -> Result<Vec<f64>> {
    p.constraints
        .iter()
        .map(|c| {
            let x = encode_rel(&anchor_pose(&c.from, st)?, &anchor_pose(&c.to, st)?)?;
            Ok(c.model.value_unchecked(&x))
        })
        .collect()
}

/// `Σ a·r + Σ b·s − lower` (non-negative when satisfied).
fn linear_slack(l: &LinearConstraint, st: &State) -> f64 {
    let mut v = -l.lower;
    for (i, a) in &l.pose_terms {
        v += a
            .iter()
            .zip(st.poses[*i].coords())
            .map(|(a, x)| a * x)
            .sum::<f64>();
    }
    for (k, b) in &l.param_terms {
        v += b * st.params[*k];
    }
    v
}

/// Sum of constraint violations (the ℓ1 merit term).
fn total_violation(p: &PlanProblem, st: &State, values: &[f64]) -> f64 {
    let reach: f64 = p
        .constraints
        .iter()
        .zip(values)
        .map(|(c, f)| (c.margin - f).max(0.0))
        .sum();
    let lin: f64 = p
        .linear
        .iter()
        .map(|l| (-linear_slack(l, st)).max(0.0))
        .sum();
    reach + lin
}

fn max_violation(p: &PlanProblem, st: &State, values: &[f64]) -> f64 {
    let reach = p
        .constraints
        .iter()
        .zip(values)
        .map(|(c, f)| (c.margin - f).max(0.0));
    let lin = p.linear.iter().map(|l| (-linear_slack(l, st)).max(0.0));
    reach.chain(lin).fold(0.0, f64::max)
}

fn apply_step(p: &PlanProblem, st: &State, layout: &Layout, dz: &[f64]) -> Result<State> {
    let mut out = st.clone();
    for (i, col) in layout.pose_col.iter().enumerate() {
        if let Some(col) = col {
            let coords: Vec<f64> = st.poses[i]
                .coords()
                .iter()
                .enumerate()
                .map(|(k, x)| x + dz[col + k])
                .collect();
            out.poses[i] = Pose::new(p.space, coords)?;
        }
    }
    for (k, col) in layout.param_col.iter().enumerate() {
        if let Some(col) = col {
            out.params[k] += dz[*col];
        }
    }
    Ok(out)
}

fn build_qp(
    p: &PlanProblem,
    st: &State,
    cfg: &SqpConfig,
    layout: &Layout,
    trust_scale: f64,
    multipliers: &[f64],
) -> Result<(QpProblem, Vec<usize>)> {
    let n = layout.n;
    let d = layout.dim;
    let mut q = DMatrix::<f64>::identity(n, n) * Q_REGULARIZATION;
    if multipliers.iter().any(|m| *m > 0.0) {
        q += constraint_curvature(p, st, layout, multipliers)?;
    }
    let mut c = DVector::<f64>::zeros(n);

    for t in &p.targets {
        if let Some(col) = layout.pose_col[t.pose] {
            let w = target_weight(p, t, cfg.lambda);
            let diff = pose_diff(&st.poses[t.pose], &t.value);
            for k in 0..d {
                q[(col + k, col + k)] += w;
                c[col + k] += w * diff[k];
            }
        }
    }

    if smoothing_active(p) && cfg.lambda > 0.0 {
        let w = cfg.lambda;
        // w/2 ‖(b + Δb) − (a + Δa)‖² for consecutive blocks a, b.
        let mut pair = |ca: Option<usize>, cb: Option<usize>, diff: &[f64]| {
            for (k, dk) in diff.iter().enumerate() {
                if let Some(a) = ca {
                    q[(a + k, a + k)] += w;
                    c[a + k] -= w * dk;
                }
                if let Some(b) = cb {
                    q[(b + k, b + k)] += w;
                    c[b + k] += w * dk;
                }
                if let (Some(a), Some(b)) = (ca, cb) {
                    q[(a + k, b + k)] -= w;
                    q[(b + k, a + k)] -= w;
                }
            }
        };
        let stride = p.smoothing_stride;
        for i in 0..st.poses.len().saturating_sub(stride) {
            let diff = pose_diff(&st.poses[i + stride], &st.poses[i]);
            pair(layout.pose_col[i], layout.pose_col[i + stride], &diff);
        }
        if p.variant == Variant::SequentialWithParam {
            for k in 0..st.params.len().saturating_sub(1) {
                let diff = [st.params[k + 1] - st.params[k]];
                let (ca, cb) = (layout.param_col[k], layout.param_col[k + 1]);
                let mut pp = |ca: Option<usize>, cb: Option<usize>| {
                    if let Some(a) = ca {
                        q[(a, a)] += w;
                        c[a] -= w * diff[0];
                    }
                    if let Some(b) = cb {
                        q[(b, b)] += w;
                        c[b] += w * diff[0];
                    }
                    if let (Some(a), Some(b)) = (ca, cb) {
                        q[(a, b)] -= w;
                        q[(b, a)] -= w;
                    }
                };
                pp(ca, cb);
            }
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut owners = Vec::new();
    for (j, con) in p.constraints.iter().enumerate() {
        let (f, row) = linearize(con, st, layout)?;
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        owners.push(j);
        rows.push(row);
        rhs.push(-(f - con.margin));
    }
    for l in &p.linear {
        let mut row = vec![0.0; n];
        for (i, a) in &l.pose_terms {
            if let Some(col) = layout.pose_col[*i] {
                for (k, ak) in a.iter().enumerate() {
                    row[col + k] += ak;
                }
            }
        }
        for (k, b) in &l.param_terms {
            if let Some(col) = layout.param_col[*k] {
                row[col] += b;
            }
        }
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        rows.push(row);
        rhs.push(-linear_slack(l, st));
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let radii = layout.radii(p.space, &cfg.trust_radius);
    let qp = QpProblem {
        q,
        c,
        a,
        b: DVector::from_vec(rhs),
        lower: DVector::from_iterator(n, radii.iter().map(|r| -r * trust_scale)),
        upper: DVector::from_iterator(n, radii.iter().map(|r| r * trust_scale)),
    };
    Ok((qp, owners))
}

/// Positive semidefinite part of `−Σ μ_j ∇²f_j`, the curvature the
/// reachability constraints add to the Lagrangian. Second derivatives come
/// from central differences of the analytic constraint rows.
fn constraint_curvature(
    p: &PlanProblem,
    st: &State,
    layout: &Layout,
    multipliers: &[f64],
) -> Result<DMatrix<f64>> {
    let n = layout.n;
    let h = 1e-5;
    let active: Vec<usize> = (0..p.constraints.len())
        .filter(|&j| multipliers[j] > 0.0)
        .collect();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = h;
        let plus = apply_step(p, st, layout, &e)?;
        e[col] = -h;
        let minus = apply_step(p, st, layout, &e)?;
        for &j in &active {
            let (_, rp) = linearize(&p.constraints[j], &plus, layout)?;
            let (_, rm) = linearize(&p.constraints[j], &minus, layout)?;
            for r in 0..n {
                hess[(r, col)] -= multipliers[j] * (rp[r] - rm[r]) / (2.0 * h);
            }
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

/// Same QP with one non-negative slack per general row, priced by a large
/// linear penalty. Always feasible.
fn elastic(qp: &QpProblem) -> QpProblem {
    let n = qp.n();
    let m = qp.m();
    let mut q = DMatrix::<f64>::zeros(n + m, n + m);
    q.view_mut((0, 0), (n, n)).copy_from(&qp.q);
    let mut c = DVector::<f64>::zeros(n + m);
    c.rows_mut(0, n).copy_from(&qp.c);
    let mut a = DMatrix::<f64>::zeros(m, n + m);
    a.view_mut((0, 0), (m, n)).copy_from(&qp.a);
    let mut lower = DVector::<f64>::zeros(n + m);
    let mut upper = DVector::<f64>::from_element(n + m, f64::INFINITY);
    lower.rows_mut(0, n).copy_from(&qp.lower);
    upper.rows_mut(0, n).copy_from(&qp.upper);
    for i in 0..m {
        q[(n + i, n + i)] = 1.0;
        c[n + i] = ELASTIC_PENALTY;
        a[(i, n + i)] = 1.0;
    }
    QpProblem {
        q,
        c,
        a,
        b: qp.b.clone(),
        lower,
        upper,
    }
}

/// The local QP at the problem's initial poses with the full trust region.
/// Variables stack the free pose blocks in order, then the free parameters.
/// Later SQP iterations add constraint curvature weighted by the previous
/// multipliers; this first QP has none.
pub fn build_local_qp(problem: &PlanProblem, cfg: &SqpConfig) -> Result<QpProblem> {
    problem.validate()?;
    cfg.validate()?;
    let layout = Layout::new(problem);
    let none = vec![0.0; problem.constraints.len()];
    build_qp(problem, &problem.state(), cfg, &layout, 1.0, &none).map(|(qp, _)| qp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub space: TaskSpace,
    pub poses: Vec<Pose>,
    pub params: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Final `f_R` of every reachability constraint, in problem order.
    pub constraint_values: Vec<f64>,
    pub constraint_labels: Vec<String>,
    /// Final slack of every linear constraint (non-negative when satisfied).
    pub linear_slacks: Vec<f64>,
    /// Distance of each targeted pose to its target, in problem order.
    pub target_residuals: Vec<f64>,
    pub max_violation: f64,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub violation_trace: Vec<f64>,
    /// Every accepted QP step.
    pub accepted_steps: Vec<Vec<f64>>,
    /// Full trust radius per QP variable.
    pub trust_radius: Vec<f64>,
    /// `‖Δ‖∞` of the last QP solution.
    pub last_step_norm: f64,
    /// For each pose, the lowest `f_R` among constraints touching it.
    pub pose_min_values: Vec<Option<f64>>,
    /// For each parameter, the lowest `f_R` among constraints using it.
    pub param_min_values: Vec<Option<f64>>,
}

impl PlanResult {
    /// One row per pose (`kind = pose`) and per parameter (`kind = param`,
    /// value in the first coordinate column), with the lowest touching `f_R`.
    pub fn to_csv(&self) -> String {
        let names: &[&str] = match self.space {
            TaskSpace::R2 => &["x", "y"],
            TaskSpace::SE2 => &["x", "y", "theta"],
            TaskSpace::R3 => &["x", "y", "z"],
            TaskSpace::SE3 => &["x", "y", "z", "qw", "qx", "qy", "qz"],
        };
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let mut out = format!("kind,index,{},f_r\n", names.join(","));
        for (i, p) in self.poses.iter().enumerate() {
            let coords: Vec<String> = p.coords().iter().map(|c| format!("{c}")).collect();
            out += &format!(
                "pose,{i},{},{}\n",
                coords.join(","),
                opt(self.pose_min_values[i])
            );
        }
        for (k, s) in self.params.iter().enumerate() {
            let pad = ",".repeat(names.len() - 1);
            out += &format!("param,{k},{s}{pad},{}\n", opt(self.param_min_values[k]));
        }
        out
    }
}

fn touches_pose(a: &Anchor, i: usize) -> bool {
    match a {
        Anchor::Pose(j) => *j == i,
        Anchor::Midpoint(j, k) => *j == i || *k == i,
        _ => false,
    }
}

fn touches_param(a: &Anchor, k: usize) -> bool {
    matches!(a, Anchor::Trajectory { param, .. } if *param == k)
}

fn finish(
    p: &PlanProblem,
    st: State,
    layout: &Layout,
    cfg: &SqpConfig,
    trace: Trace,
) -> Result<PlanResult> {
    let values = reach_values(p, &st)?;
    let min_over = |pred: &dyn Fn(&ReachConstraint) -> bool| {
        p.constraints
            .iter()
            .zip(&values)
            .filter(|(c, _)| pred(c))
            .map(|(_, v)| *v)
            .reduce(f64::min)
    };
    let pose_min_values = (0..st.poses.len())
        .map(|i| min_over(&|c| touches_pose(&c.from, i) || touches_pose(&c.to, i)))
        .collect();
    let param_min_values = (0..st.params.len())
        .map(|k| min_over(&|c| touches_param(&c.from, k) || touches_param(&c.to, k)))
        .collect();
    let target_residuals = p
        .targets
        .iter()
        .map(|t| {
            pose_diff(&st.poses[t.pose], &t.value)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(PlanResult {
        space: p.space,
        constraint_labels: p.constraints.iter().map(|c| c.label.clone()).collect(),
        linear_slacks: p.linear.iter().map(|l| linear_slack(l, &st)).collect(),
        max_violation: max_violation(p, &st, &values),
        constraint_values: values,
        target_residuals,
        converged: trace.converged,
        iterations: trace.iterations,
        objective_trace: trace.objective,
        violation_trace: trace.violation,
        accepted_steps: trace.steps,
        trust_radius: layout.radii(p.space, &cfg.trust_radius),
        last_step_norm: trace.last_step_norm,
        pose_min_values,
        param_min_values,
        poses: st.poses,
        params: st.params,
    })
}

#[derive(Default)]
struct Trace {
    converged: bool,
    iterations: usize,
    objective: Vec<f64>,
    violation: Vec<f64>,
    steps: Vec<Vec<f64>>,
    last_step_norm: f64,
}

/// Runs the trust-region SQP loop. Failing to converge is reported through
/// `PlanResult::converged`, not as an error.
pub fn sqp_solve(problem: &PlanProblem, cfg: &SqpConfig) -> Result<PlanResult> {
    problem.validate()?;
    cfg.validate()?;
    let layout = Layout::new(problem);
    let radii = layout.radii(problem.space, &cfg.trust_radius);
    let mut st = problem.state();
    if cfg.init_jitter > 0.0 {
        let mut rng = sample_rng(cfg.rng_seed, 0);
        for (i, col) in layout.pose_col.iter().enumerate() {
            if col.is_some() {
                let mut coords = st.poses[i].coords().to_vec();
                for (k, x) in coords.iter_mut().enumerate() {
                    if !problem.space.is_angle_coord(k) {
                        *x += rng.gen_range(-cfg.init_jitter..=cfg.init_jitter);
                    }
                }
                st.poses[i] = Pose::new(problem.space, coords)?;
            }
        }
    }

    let mut trace = Trace::default();
    let mut values = reach_values(problem, &st)?;
    let mut viol = max_violation(problem, &st, &values);
    let mut obj = objective(problem, &st, cfg.lambda);
    trace.objective.push(obj);
    trace.violation.push(viol);
    if layout.n == 0 {
        trace.converged = viol <= cfg.constraint_tol;
        return finish(problem, st, &layout, cfg, trace);
    }

    let mut scale = 1.0;
    let mut accepted_since_shrink = 0;
    let mut multipliers = vec![0.0; problem.constraints.len()];
    let mut penalty = MIN_MERIT_PENALTY;
    for it in 1..=cfg.max_iters {
        trace.iterations = it;
        let (qp, owners) = build_qp(problem, &st, cfg, &layout, scale, &multipliers)?;
        let max_qp_iter = 50 * (qp.n() + qp.m()).max(10);
        let mut sol = solve_qp(&qp, cfg.qp_tol, max_qp_iter)?;
        let mut relaxed = false;
        if sol.status != QpStatus::Optimal {
            sol = solve_qp(&elastic(&qp), cfg.qp_tol, max_qp_iter)?;
            relaxed = true;
        }
        multipliers.iter_mut().for_each(|m| *m = 0.0);
        for (row, &j) in owners.iter().enumerate() {
            multipliers[j] = sol.multipliers[row];
        }
        let step: Vec<f64> = sol.z.iter().take(layout.n).copied().collect();
        let step_norm = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        trace.last_step_norm = step_norm;
        let on_trust_boundary = step
            .iter()
            .zip(&radii)
            .any(|(s, r)| *r > 0.0 && s.abs() >= 0.999 * r * scale);
        if step_norm <= cfg.step_tol && !on_trust_boundary {
            if !relaxed && viol <= cfg.constraint_tol {
                trace.converged = true;
                break;
            }
            if relaxed {
                // Stationary for the relaxed QP while still infeasible.
                break;
            }
        }

        for &u in &sol.multipliers[..qp.m()] {
            penalty = penalty.max(2.0 * u);
        }
        let merit = obj + penalty * total_violation(problem, &st, &values);
        // Merit decrease, and never a step that raises both the violation and
        // the objective.
        let acceptable = |t: &State, t_values: &[f64]| {
            let t_viol = max_violation(problem, t, t_values);
            let t_obj = objective(problem, t, cfg.lambda);
            let t_merit = t_obj + penalty * total_violation(problem, t, t_values);
            t_merit < merit && (t_viol <= viol || t_obj < obj)
        };
        let mut step = step;
        let mut trial = apply_step(problem, &st, &layout, &step)?;
        let mut trial_values = reach_values(problem, &trial)?;
        let mut accept = acceptable(&trial, &trial_values);
        if !accept && !relaxed {
            // Second-order correction: re-solve with the constraint values
            // measured at the trial point, which bends tangent steps back
            // onto a curved boundary.
            let mut soc = qp.clone();
            for (row, &j) in owners.iter().enumerate() {
                let shift: f64 = soc.a.row(row).iter().zip(&step).map(|(a, d)| a * d).sum();
                soc.b[row] = -(trial_values[j] - problem.constraints[j].margin) + shift;
            }
            let corrected = solve_qp(&soc, cfg.qp_tol, max_qp_iter)?;
            if corrected.status == QpStatus::Optimal {
                let step2: Vec<f64> = corrected.z.iter().copied().collect();
                let trial2 = apply_step(problem, &st, &layout, &step2)?;
                let values2 = reach_values(problem, &trial2)?;
                if acceptable(&trial2, &values2) {
                    step = step2;
                    trial = trial2;
                    trial_values = values2;
                    accept = true;
                }
            }
        }
        let trial_viol = max_violation(problem, &trial, &trial_values);
        let trial_obj = objective(problem, &trial, cfg.lambda);
        if !accept {
            scale *= 0.5;
            accepted_since_shrink = 0;
            if scale < MIN_TRUST_SCALE {
                break;
            }
            continue;
        }
        st = trial;
        values = trial_values;
        viol = trial_viol;
        obj = trial_obj;
        trace.objective.push(obj);
        trace.violation.push(viol);
        trace.steps.push(step);
        if scale < 1.0 {
            accepted_since_shrink += 1;
            if accepted_since_shrink >= 2 {
                scale = 1.0;
                accepted_since_shrink = 0;
            }
        }
        if step_norm <= cfg.step_tol && viol <= cfg.constraint_tol && !relaxed {
            trace.converged = true;
            break;
        }
    }
    let _ = values;
    finish(problem, st, &layout, cfg, trace)
}

/// Maps for the two swing sides of a step.
#[derive(Clone)]
pub struct FootMaps {
    /// Left foot relative to the right stance foot.
    pub left_from_right: MapHandle,
    pub right_from_left: MapHandle,
}

impl FootMaps {
    /// Derives the right-from-left map by reflecting the input of the
    /// left-from-right map across the stance foot's x-axis.
    pub fn mirrored(left_from_right: MapHandle) -> Self {
        let right_from_left: MapHandle = Arc::new(Mirrored {
            inner: left_from_right.clone(),
        });
        FootMaps {
            left_from_right,
            right_from_left,
        }
    }

    /// Map for the edge `i → i+1`; even indices are right-foot poses.
    pub fn for_edge(&self, i: usize) -> MapHandle {
        if i.is_multiple_of(2) {
            self.left_from_right.clone()
        } else {
            self.right_from_left.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootPair {
    pub right: Pose,
    pub left: Pose,
}

/// Linear interpolation with the heading along the shortest arc.
pub fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Result<Pose> {
    let d = pose_diff(b, a);
    let coords = a
        .coords()
        .iter()
        .zip(&d)
        .map(|(x, dx)| x + t * dx)
        .collect();
    Pose::new(a.space(), coords)
}

/// Initial footstep chain `r_0..r_{n_steps+1}`: the start pair, then each
/// foot interpolated from its start to its goal.
fn footstep_chain(start: &FootPair, goal: &FootPair, n_steps: usize) -> Result<Vec<Pose>> {
    let last = n_steps + 1;
    let count = |parity: usize| (0..=last).filter(|i| i % 2 == parity).count();
    let (n_right, n_left) = (count(0), count(1));
    (0..=last)
        .map(|i| {
            let (from, to, total) = if i % 2 == 0 {
                (&start.right, &goal.right, n_right)
            } else {
                (&start.left, &goal.left, n_left)
            };
            let t = (i / 2) as f64 / (total - 1).max(1) as f64;
            interpolate_pose(from, to, t)
        })
        .collect()
}

fn check_foot_pair(p: &FootPair, what: &str) -> Result<()> {
    for pose in [&p.right, &p.left] {
        if pose.space() != TaskSpace::SE2 {
            return Err(Error::SpaceMismatch {
                expected: TaskSpace::SE2,
                got: pose.space(),
            });
        }
    }
    if !what.is_empty() {
        Ok(())
    } else {
        unreachable!()
    }
}

/// Footstep problem over `r_0..r_{n_steps+1}` (even = right foot). The start
/// pair is fixed and the last two poses carry the goal as targets.
pub fn footstep_problem(
    start: &FootPair,
    goal: &FootPair,
    n_steps: usize,
    maps: &FootMaps,
    margin: f64,
    obstacles: &[HalfPlane],
) -> Result<PlanProblem> {
    if n_steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "footstep planning needs at least 2 steps, got {n_steps}"
        )));
    }
    check_foot_pair(start, "start")?;
    check_foot_pair(goal, "goal")?;
    let poses = footstep_chain(start, goal, n_steps)?;
    let last = poses.len() - 1;
    let edges: Vec<MapHandle> = (0..last).map(|i| maps.for_edge(i)).collect();
    let mut p = PlanProblem::sequential(&edges, poses, margin)?;
    p.smoothing_stride = 2;
    p.fixed[0] = true;
    p.fixed[1] = true;
    for i in [last - 1, last] {
        let value = if i % 2 == 0 {
            goal.right.clone()
        } else {
            goal.left.clone()
        };
        p.targets.push(Target { pose: i, value });
    }
    for i in 2..=last {
        for h in obstacles {
            p.linear.push(h.on_pose(i, TaskSpace::SE2));
        }
    }
    Ok(p)
}

pub fn plan_footsteps(
    start: &FootPair,
    goal: &FootPair,
    n_steps: usize,
    maps: &FootMaps,
    cfg: &SqpConfig,
    obstacles: &[HalfPlane],
) -> Result<PlanResult> {
    let p = footstep_problem(start, goal, n_steps, maps, cfg.margin, obstacles)?;
    sqp_solve(&p, cfg)
}

/// Base placement: `r_0` is the base, `r_1..r_N` end effectors that should
/// reach `targets`. Without a base target the base is pulled toward its
/// initial pose. `cfg.lambda` weights the base term.
pub fn plan_placement(
    targets: &[Pose],
    base_initial: &Pose,
    base_target: Option<&Pose>,
    map: MapHandle,
    cfg: &SqpConfig,
) -> Result<PlanResult> {
    if targets.is_empty() {
        return Err(Error::InvalidConfig(
            "placement needs at least one target".into(),
        ));
    }
    let base_target = base_target.unwrap_or(base_initial).clone();
    let p = PlanProblem::simultaneous(map, base_initial.clone(), base_target, targets, cfg.margin);
    sqp_solve(&p, cfg)
}

/// Walking while a hand follows `trajectory(s)`.
#[derive(Clone)]
pub struct TrajectoryTask {
    pub start: FootPair,
    /// Optional goal stance; without it the feet only move as far as the
    /// hand constraints require.
    pub goal: Option<FootPair>,
    pub n_steps: usize,
    pub trajectory: Arc<dyn PoseTrajectory>,
    pub s_start: f64,
    pub s_end: f64,
}

/// Problem for [`plan_with_trajectory_param`]. Phase `k` (1-based) has the
/// waist at the midpoint of `r_{k−1}` and `r_k` and the hand at
/// `trajectory(s_k)`; `s_1 = s_start` and `s_N = s_end` are fixed and the
/// intermediate `s_k` are non-decreasing.
pub fn trajectory_problem(
    task: &TrajectoryTask,
    hand_map: MapHandle,
    foot_maps: &FootMaps,
    margin: f64,
) -> Result<PlanProblem> {
    if task.n_steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "trajectory planning needs at least 2 steps, got {}",
            task.n_steps
        )));
    }
    if !(task.s_start.is_finite() && task.s_end.is_finite() && task.s_end >= task.s_start) {
        return Err(Error::InvalidConfig(format!(
            "parameter range [{}, {}] is not increasing",
            task.s_start, task.s_end
        )));
    }
    check_foot_pair(&task.start, "start")?;
    let goal = task.goal.clone().unwrap_or_else(|| task.start.clone());
    check_foot_pair(&goal, "goal")?;
    let poses = footstep_chain(&task.start, &goal, task.n_steps)?;
    let last = poses.len() - 1;
    let edges: Vec<MapHandle> = (0..last).map(|i| foot_maps.for_edge(i)).collect();
    let mut p = PlanProblem::sequential(&edges, poses, margin)?;
    p.variant = Variant::SequentialWithParam;
    p.smoothing_stride = 2;
    p.fixed[0] = true;
    p.fixed[1] = true;
    if let Some(g) = &task.goal {
        for i in [last - 1, last] {
            let value = if i % 2 == 0 {
                g.right.clone()
            } else {
                g.left.clone()
            };
            p.targets.push(Target { pose: i, value });
        }
    }
    let phases = last;
    p.params = (0..phases)
        .map(|k| {
            let t = k as f64 / (phases - 1) as f64;
            task.s_start + t * (task.s_end - task.s_start)
        })
        .collect();
    p.fixed_params = vec![false; phases];
    p.fixed_params[0] = true;
    p.fixed_params[phases - 1] = true;
    for k in 0..phases {
        p.constraints.push(ReachConstraint {
            model: hand_map.clone(),
            from: Anchor::Midpoint(k, k + 1),
            to: Anchor::Trajectory {
                param: k,
                trajectory: task.trajectory.clone(),
            },
            margin,
            label: format!("hand{}", k + 1),
        });
    }
    for k in 0..phases - 1 {
        p.linear.push(LinearConstraint {
            pose_terms: vec![],
            param_terms: vec![(k + 1, 1.0), (k, -1.0)],
            lower: 0.0,
        });
    }
    Ok(p)
}

pub fn plan_with_trajectory_param(
    task: &TrajectoryTask,
    hand_map: MapHandle,
    foot_maps: &FootMaps,
    cfg: &SqpConfig,
) -> Result<PlanResult> {
    let p = trajectory_problem(task, hand_map, foot_maps, cfg.margin)?;
    sqp_solve(&p, cfg)
}
