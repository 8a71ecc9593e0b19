//! Learn a footstep reachability map for the planar biped and plan a walk.
//!
//! `cargo run --release -p reachmap --example footsteps`

use std::sync::Arc;

use reachmap::eval::compute_iou;
use reachmap::kinematics::{Biped, IkOptions};
use reachmap::models::{train_svm, ReachabilityModel, SvmConfig};
use reachmap::planner::{plan_footsteps, FootMaps, FootPair, HalfPlane, SqpConfig};
use reachmap::sampling::{footstep_bounds, sample_ik};
use reachmap::Pose;

fn main() -> reachmap::Result<()> {
    let biped = Biped::planar();
    let data = sample_ik(&biped, &footstep_bounds(), 20_000, 7, &IkOptions::default())?;
    let (train, test) = data.split(0.8, 11);
    let (svm, _) = train_svm(&train, &SvmConfig::default())?;
    println!("holdout IoU {:.3}", compute_iou(&svm, &test, None)?.iou);

    let maps = FootMaps::mirrored(Arc::new(ReachabilityModel::from(svm)));
    let start = FootPair {
        right: Pose::se2(0.0, -0.1, 0.0),
        left: Pose::se2(0.0, 0.1, 0.0),
    };
    let goal = FootPair {
        right: Pose::se2(1.5, -0.1, 0.0),
        left: Pose::se2(1.5, 0.1, 0.0),
    };
    let cfg = SqpConfig {
        lambda: 0.01,
        ..SqpConfig::default()
    };
    let wall = HalfPlane {
        normal: [-1.0, 0.0],
        offset: -1.0,
    };

    for obstacles in [vec![], vec![wall]] {
        let plan = plan_footsteps(&start, &goal, 10, &maps, &cfg, &obstacles)?;
        println!(
            "{} obstacle(s): converged {} in {} iterations",
            obstacles.len(),
            plan.converged,
            plan.iterations
        );
        print!("{}", plan.to_csv());
    }
    Ok(())
}
