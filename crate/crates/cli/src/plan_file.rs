//! JSON planning problem files.
//!
//! ```json
//! {
//!   "kind": "footsteps",
//!   "model": "foot.json",
//!   "start": {"right": [0, -0.1, 0], "left": [0, 0.1, 0]},
//!   "goal": {"right": [1.5, -0.1, 0], "left": [1.5, 0.1, 0]},
//!   "n_steps": 10,
//!   "obstacles": [{"normal": [-1, 0], "offset": -1.0}],
//!   "sqp": {"lambda": 0.01}
//! }
//! ```
//!
//! Model paths are relative to the problem file. Poses are stored
//! coordinates in the model's task space. Omitted `sqp` fields take the
//! library defaults (placement defaults for `placement` when `sqp` is absent).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use reachmap::models::ReachabilityModel;
use reachmap::planner::{
    plan_footsteps, plan_placement, plan_with_trajectory_param, sqp_solve, ArcTrajectory, FootMaps,
    FootPair, HalfPlane, MapHandle, PlanProblem, PlanResult, SqpConfig, TrajectoryTask,
};
use reachmap::{Error, Pose, Result, TaskSpace};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootPairFile {
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanFile {
    Basic {
        model: PathBuf,
        target: Vec<f64>,
        /// Defaults to the target.
        initial: Option<Vec<f64>>,
        #[serde(default)]
        margin: f64,
        sqp: Option<SqpConfig>,
    },
    Placement {
        model: PathBuf,
        targets: Vec<Vec<f64>>,
        base_initial: Vec<f64>,
        base_target: Option<Vec<f64>>,
        sqp: Option<SqpConfig>,
    },
    Footsteps {
        /// Left foot relative to the right stance foot; the other side is
        /// its mirror image.
        model: PathBuf,
        start: FootPairFile,
        goal: FootPairFile,
        n_steps: usize,
        #[serde(default)]
        obstacles: Vec<HalfPlane>,
        sqp: Option<SqpConfig>,
    },
    Trajectory {
        hand_model: PathBuf,
        foot_model: PathBuf,
        start: FootPairFile,
        goal: Option<FootPairFile>,
        n_steps: usize,
        arc: ArcTrajectory,
        s_start: f64,
        s_end: f64,
        sqp: Option<SqpConfig>,
    },
}

impl PlanFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn solve(&self, dir: &Path) -> Result<PlanResult> {
        let load = |p: &Path| -> Result<(MapHandle, TaskSpace)> {
            let m = ReachabilityModel::load(dir.join(p))?;
            let space = reachmap::models::ReachabilityMap::space(&m);
            Ok((Arc::new(m), space))
        };
        match self {
            PlanFile::Basic {
                model,
                target,
                initial,
                margin,
                sqp,
            } => {
                let (map, space) = load(model)?;
                let target = Pose::new(space, target.clone())?;
                let initial = match initial {
                    Some(c) => Pose::new(space, c.clone())?,
                    None => target.clone(),
                };
                let p = PlanProblem::basic(map, target, initial, *margin);
                sqp_solve(&p, &sqp.clone().unwrap_or_default())
            }
            PlanFile::Placement {
                model,
                targets,
                base_initial,
                base_target,
                sqp,
            } => {
                let (map, space) = load(model)?;
                let targets = targets
                    .iter()
                    .map(|c| Pose::new(space, c.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let base = Pose::new(space, base_initial.clone())?;
                let base_target = base_target
                    .as_ref()
                    .map(|c| Pose::new(space, c.clone()))
                    .transpose()?;
                let cfg = sqp.clone().unwrap_or_else(SqpConfig::placement);
                plan_placement(&targets, &base, base_target.as_ref(), map, &cfg)
            }
            PlanFile::Footsteps {
                model,
                start,
                goal,
                n_steps,
                obstacles,
                sqp,
            } => {
                let (map, space) = load(model)?;
                let maps = FootMaps::mirrored(map);
                plan_footsteps(
                    &foot_pair(start, space)?,
                    &foot_pair(goal, space)?,
                    *n_steps,
                    &maps,
                    &sqp.clone().unwrap_or_default(),
                    obstacles,
                )
            }
            PlanFile::Trajectory {
                hand_model,
                foot_model,
                start,
                goal,
                n_steps,
                arc,
                s_start,
                s_end,
                sqp,
            } => {
                let (hand, space) = load(hand_model)?;
                let (foot, foot_space) = load(foot_model)?;
                if space != foot_space {
                    return Err(Error::SpaceMismatch {
                        expected: foot_space,
                        got: space,
                    });
                }
                let task = TrajectoryTask {
                    start: foot_pair(start, space)?,
                    goal: goal.as_ref().map(|g| foot_pair(g, space)).transpose()?,
                    n_steps: *n_steps,
                    trajectory: Arc::new(*arc),
                    s_start: *s_start,
                    s_end: *s_end,
                };
                plan_with_trajectory_param(
                    &task,
                    hand,
                    &FootMaps::mirrored(foot),
                    &sqp.clone().unwrap_or_default(),
                )
            }
        }
    }
}

fn foot_pair(f: &FootPairFile, space: TaskSpace) -> Result<FootPair> {
    Ok(FootPair {
        right: Pose::new(space, f.right.clone())?,
        left: Pose::new(space, f.left.clone())?,
    })
}
