//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test --release -p reachmap-cli --test acceptance`.

use std::f64::consts::FRAC_PI_3;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reachmap::eval::{compute_iou, offset_sweep, oracle_grid_test_set};
use reachmap::kinematics::{Biped, IkOptions, SerialChain, Side};
use reachmap::models::{
    train_mlp, train_ocsvm, train_svm, MlpConfig, MlpModel, ReachabilityMap, ReachabilityModel,
    SvmConfig,
};
use reachmap::planner::{
    plan_footsteps, plan_placement, plan_with_trajectory_param, ArcTrajectory, FootMaps, FootPair,
    HalfPlane, MapHandle, PlanResult, PoseTrajectory, SqpConfig, TrajectoryTask,
};
use reachmap::qpsolver::{solve_qp, QpProblem, QpStatus};
use reachmap::sampling::{
    default_ik_bounds, footstep_bounds, random_pose, sample_fk, sample_ik, SampleSet,
};
use reachmap::{encode, Pose, Result};

const BOX_2DOF: [[f64; 2]; 2] = [[-2.2, 2.2], [-2.2, 2.2]];
const GRID_RES: usize = 100;
const ORACLE_RES: usize = 401;

const IOU_SVM: f64 = 0.95;
const IOU_OCSVM: f64 = 0.95;
const IOU_MLP: f64 = 0.94;
const MLP_SWEEP_SPREAD: f64 = 0.02;
const IOU_FOOTSTEP: f64 = 0.90;
const TRAIN_SECONDS: f64 = 60.0;
const GRAD_POINTS: usize = 1000;
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-5;
/// Points closer than this to an MLP rectifier kink are skipped.
const KINK_GAP: f64 = 1e-3;
const QP_INSTANCES: usize = 100;
const QP_MATCH_TOL: f64 = 1e-6;
const QP_KKT_TOL: f64 = 1e-8;
const FOOT_MAX_ITERS: usize = 50;
const FOOT_MAX_SECONDS: f64 = 1.0;
const OBSTACLE_TOL: f64 = 1e-8;
const HAND_TOL: f64 = 1e-6;
const INFEASIBLE_RESIDUAL: f64 = 1e-3;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, outcome: Result<(bool, String)>) {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {detail}");
    }
}

struct TwoDof {
    chain: SerialChain,
    grid: SampleSet,
    ik: SampleSet,
    svm: Option<ReachabilityModel>,
    mlp: Option<MlpModel>,
}

struct Footstep {
    svm: ReachabilityModel,
    mlp: MlpModel,
}

fn main() {
    let mut report = Report { failures: 0 };
    let started = Instant::now();

    let chain = SerialChain::planar_2dof();
    let setup = (|| -> Result<TwoDof> {
        let grid = oracle_grid_test_set(&chain, BOX_2DOF, GRID_RES, ORACLE_RES)?;
        let ik = sample_ik(&chain, &BOX_2DOF, 10_000, 1, &IkOptions::default())?;
        Ok(TwoDof {
            chain: chain.clone(),
            grid,
            ik,
            svm: None,
            mlp: None,
        })
    })();
    let mut two = match setup {
        Ok(t) => Some(t),
        Err(e) => {
            for id in [1, 2, 3, 4] {
                report.record(id, "2-DoF setup", Ok((false, format!("error: {e}"))));
            }
            None
        }
    };

    if let Some(t) = two.as_mut() {
        report.record(1, "2-DoF regular SVM IoU", criterion_svm(t));
        let oc = (|| -> Result<_> {
            let fk = sample_fk(&t.chain, 10_000, 2)?;
            Ok(train_ocsvm(&fk, &SvmConfig::default())?.0)
        })();
        report.record(
            2,
            "2-DoF one-class SVM IoU",
            oc.as_ref().map_err(|e| e.to_string()).map_or_else(
                |e| Ok((false, format!("error: {e}"))),
                |m| {
                    let iou = compute_iou(m, &t.grid, None)?.iou;
                    Ok((
                        iou >= IOU_OCSVM,
                        format!("IoU {iou:.4} (need >= {IOU_OCSVM})"),
                    ))
                },
            ),
        );
        report.record(3, "2-DoF MLP IoU", criterion_mlp(t));
        report.record(
            4,
            "offset sweep",
            oc.and_then(|oc| criterion_offset_sweep(t, &oc)),
        );
    }

    let foot = (|| -> Result<(f64, f64, Footstep)> {
        let data = sample_ik(
            &Biped::planar(),
            &footstep_bounds(),
            20_000,
            7,
            &IkOptions::default(),
        )?;
        let (train, test) = data.split(0.8, 11);
        let (svm, _) = train_svm(&train, &SvmConfig::default())?;
        let (mlp, _) = train_mlp(&train, &MlpConfig::default())?;
        let svm_iou = compute_iou(&svm, &test, None)?.iou;
        let mlp_iou = compute_iou(&mlp, &test, None)?.iou;
        println!("       footstep holdout: SVM {svm_iou:.4}, MLP {mlp_iou:.4}");
        Ok((
            svm_iou,
            mlp_iou,
            Footstep {
                svm: svm.into(),
                mlp,
            },
        ))
    })()
    .map(|(s, m, f)| {
        report.record(
            5,
            "SE2 footstep IoU (20k samples)",
            Ok((
                s >= IOU_FOOTSTEP && m >= IOU_FOOTSTEP,
                format!("SVM {s:.4}, MLP {m:.4} (need >= {IOU_FOOTSTEP})"),
            )),
        );
        f
    });
    let foot = match foot {
        Ok(f) => Some(f),
        Err(e) => {
            report.record(5, "SE2 footstep IoU (20k samples)", Err(e));
            None
        }
    };

    report.record(
        6,
        "analytic gradients vs central differences",
        criterion_gradients(two.as_ref(), foot.as_ref()),
    );
    report.record(7, "QP vs exhaustive active-set enumeration", criterion_qp());

    match &foot {
        Some(f) => report.record(8, "footstep planning", criterion_footsteps(f)),
        None => report.record(
            8,
            "footstep planning",
            Ok((false, "no footstep model".into())),
        ),
    }
    match two.as_ref().and_then(|t| t.svm.as_ref().map(|m| (t, m))) {
        Some((t, m)) => report.record(9, "placement planning", criterion_placement(&t.chain, m)),
        None => report.record(9, "placement planning", Ok((false, "no 2-DoF SVM".into()))),
    }
    match &foot {
        Some(f) => report.record(
            10,
            "door-arc trajectory-parameter planning",
            criterion_door(f),
        ),
        None => report.record(
            10,
            "door-arc trajectory-parameter planning",
            Ok((false, "no footstep model".into())),
        ),
    }
    report.record(11, "pipeline rerun from manifests", criterion_determinism());

    println!(
        "{} of 11 criteria passed in {:.1} s",
        11 - report.failures,
        started.elapsed().as_secs_f64()
    );
    if report.failures > 0 {
        std::process::exit(1);
    }
}

fn criterion_svm(t: &mut TwoDof) -> Result<(bool, String)> {
    let start = Instant::now();
    let (m, _) = train_svm(&t.ik, &SvmConfig::default())?;
    let secs = start.elapsed().as_secs_f64();
    let iou = compute_iou(&m, &t.grid, None)?.iou;
    t.svm = Some(m.into());
    Ok((
        iou >= IOU_SVM && secs <= TRAIN_SECONDS,
        format!("IoU {iou:.4} (need >= {IOU_SVM}), training {secs:.1} s (limit {TRAIN_SECONDS} s)"),
    ))
}

fn criterion_mlp(t: &mut TwoDof) -> Result<(bool, String)> {
    let (m, _) = train_mlp(&t.ik, &MlpConfig::default())?;
    let iou = compute_iou(&m, &t.grid, None)?.iou;
    t.mlp = Some(m);
    Ok((iou >= IOU_MLP, format!("IoU {iou:.4} (need >= {IOU_MLP})")))
}

fn criterion_offset_sweep(t: &TwoDof, oc: &impl ReachabilityMap) -> Result<(bool, String)> {
    let oc_sweep = offset_sweep(oc, &t.grid, &[0.0, 0.1])?;
    let (oc0, oc1) = (oc_sweep[0].1, oc_sweep[1].1);
    let mlp = t
        .mlp
        .as_ref()
        .ok_or_else(|| reachmap::Error::InvalidConfig("MLP missing".into()))?;
    let rhos: Vec<f64> = (0..=4).map(|k| 0.05 * k as f64).collect();
    let sweep = offset_sweep(mlp, &t.grid, &rhos)?;
    let lo = sweep.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = sweep.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((
        oc1 > oc0 && hi - lo <= MLP_SWEEP_SPREAD,
        format!(
            "OC-SVM IoU {oc0:.4} at rho 0 -> {oc1:.4} at rho 0.1; MLP spread {:.4} over rho 0..0.2 (limit {MLP_SWEEP_SPREAD})",
            hi - lo
        ),
    ))
}

fn central_difference(m: &dyn ReachabilityMap, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[k] += GRAD_STEP;
            down[k] -= GRAD_STEP;
            (m.value_unchecked(&up) - m.value_unchecked(&down)) / (2.0 * GRAD_STEP)
        })
        .collect()
}

/// `‖g − g_fd‖∞ / max(1, ‖g_fd‖∞)` worst case over random poses in `bounds`.
fn worst_gradient_error(
    m: &dyn ReachabilityMap,
    bounds: &[[f64; 2]],
    seed: u64,
    skip: impl Fn(&[f64]) -> bool,
) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < GRAD_POINTS {
        let x = encode(&random_pose(m.space(), bounds, &mut rng)?);
        if skip(&x) {
            continue;
        }
        let g = m.eval_grad(&x)?;
        let fd = central_difference(m, &x);
        let scale = fd.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let diff = g
            .iter()
            .zip(&fd)
            .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
        worst = worst.max(diff / scale);
        checked += 1;
    }
    Ok((worst, checked))
}

fn criterion_gradients(two: Option<&TwoDof>, foot: Option<&Footstep>) -> Result<(bool, String)> {
    let (Some(two), Some(foot)) = (two, foot) else {
        return Ok((false, "models missing".into()));
    };
    let (Some(svm2), Some(mlp2)) = (&two.svm, &two.mlp) else {
        return Ok((false, "2-DoF models missing".into()));
    };
    let fb = footstep_bounds();
    let no_skip = |_: &[f64]| false;
    fn kink(m: &MlpModel) -> impl Fn(&[f64]) -> bool + '_ {
        move |x| m.min_hidden_preactivation(x) < KINK_GAP
    }
    let cases = [
        (
            "SVM 2-DoF",
            worst_gradient_error(svm2, &BOX_2DOF, 21, no_skip)?,
        ),
        (
            "MLP 2-DoF",
            worst_gradient_error(mlp2, &BOX_2DOF, 22, kink(mlp2))?,
        ),
        (
            "SVM SE2",
            worst_gradient_error(&foot.svm, &fb, 23, no_skip)?,
        ),
        (
            "MLP SE2",
            worst_gradient_error(&foot.mlp, &fb, 24, kink(&foot.mlp))?,
        ),
    ];
    let pass = cases
        .iter()
        .all(|(_, (e, n))| *e <= GRAD_REL_TOL && *n == GRAD_POINTS);
    let detail = cases
        .iter()
        .map(|(name, (e, n))| format!("{name} {e:.1e} on {n} pts"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((pass, format!("{detail} (limit {GRAD_REL_TOL:.0e})")))
}

/// General rows plus finite bounds as `(a, b)` with `a·z ≥ b`.
fn stacked_rows(p: &QpProblem) -> Vec<(DVector<f64>, f64)> {
    let n = p.n();
    let mut rows: Vec<(DVector<f64>, f64)> = (0..p.m())
        .map(|i| (p.a.row(i).transpose(), p.b[i]))
        .collect();
    for j in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == j { 1.0 } else { 0.0 });
        if p.lower[j].is_finite() {
            rows.push((e.clone(), p.lower[j]));
        }
        if p.upper[j].is_finite() {
            rows.push((-e, -p.upper[j]));
        }
    }
    rows
}

/// Best feasible KKT point over every subset of constraints held at equality.
fn enumerate_active_sets(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let rows = stacked_rows(p);
    let n = p.n();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << rows.len()) {
        let set: Vec<usize> = (0..rows.len()).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let dim = n + set.len();
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.q);
        rhs.rows_mut(0, n).copy_from(&(-&p.c));
        for (r, &i) in set.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = rows[i].0[j];
                kkt[(j, n + r)] = -rows[i].0[j];
            }
            rhs[n + r] = rows[i].1;
        }
        let Some(sol) = kkt.clone().full_piv_lu().solve(&rhs) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        let multipliers_ok = (0..set.len()).all(|r| sol[n + r] >= -1e-9);
        let feasible = rows.iter().all(|(a, b)| a.dot(&z) - b >= -1e-9);
        if feasible && multipliers_ok {
            let obj = p.objective(&z);
            if best.as_ref().is_none_or(|(_, o)| obj < *o) {
                best = Some((z, obj));
            }
        }
    }
    best
}

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(0..=4);
    let b_mat = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = b_mat.transpose() * &b_mat + DMatrix::identity(n, n) * 0.05;
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    // Feasible by construction: rows hold with slack at a random point.
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let b = &a * &z0 - DVector::from_fn(m, |_, _| rng.gen_range(0.0..0.5));
    let mut p = QpProblem::unconstrained(q, c);
    p.a = a;
    p.b = b;
    if rng.gen_bool(0.5) {
        for j in 0..n {
            p.lower[j] = rng.gen_range(-1.5..-0.6);
            p.upper[j] = rng.gen_range(0.6..1.5);
        }
    }
    p
}

fn criterion_qp() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_z, mut worst_obj, mut worst_kkt): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut mismatches = 0;
    for _ in 0..QP_INSTANCES {
        let p = random_qp(&mut rng);
        let s = solve_qp(&p, 1e-9, 1000)?;
        let Some((z, obj)) = enumerate_active_sets(&p) else {
            mismatches += 1;
            continue;
        };
        if s.status != QpStatus::Optimal {
            mismatches += 1;
            continue;
        }
        worst_z = worst_z.max((&s.z - &z).amax());
        worst_obj = worst_obj.max((s.objective - obj).abs());
        worst_kkt = worst_kkt.max(s.kkt_residual);
    }
    Ok((
        mismatches == 0 && worst_z <= QP_MATCH_TOL && worst_obj <= QP_MATCH_TOL && worst_kkt <= QP_KKT_TOL,
        format!(
            "{QP_INSTANCES} instances, max |dz| {worst_z:.1e}, max |dobj| {worst_obj:.1e}, max KKT {worst_kkt:.1e}, {mismatches} status mismatches"
        ),
    ))
}

fn steps_feasible(biped: &Biped, r: &PlanResult) -> Result<usize> {
    let opts = IkOptions::default();
    let mut bad = 0;
    for i in 0..r.poses.len() - 1 {
        // Odd poses are left feet, so stepping onto pose i + 1 swings the left
        // leg when i is even.
        let side = if i % 2 == 0 { Side::Left } else { Side::Right };
        if !biped.step_feasible(&r.poses[i], &r.poses[i + 1], side, &opts)? {
            bad += 1;
        }
    }
    Ok(bad)
}

fn criterion_footsteps(f: &Footstep) -> Result<(bool, String)> {
    let biped = Biped::planar();
    let map: MapHandle = Arc::new(f.svm.clone());
    let maps = FootMaps::mirrored(map);
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

    let t = Instant::now();
    let r = plan_footsteps(&start, &goal, 10, &maps, &cfg, &[])?;
    let secs = t.elapsed().as_secs_f64();
    let bad = steps_feasible(&biped, &r)?;
    let residual = r.target_residuals.iter().copied().fold(0.0, f64::max);

    let wall = HalfPlane {
        normal: [-1.0, 0.0],
        offset: -1.0,
    };
    let ro = plan_footsteps(&start, &goal, 10, &maps, &cfg, &[wall])?;
    let worst_wall = ro
        .poses
        .iter()
        .map(|p| wall.normal[0] * p.coords()[0] + wall.normal[1] * p.coords()[1] - wall.offset)
        .fold(f64::INFINITY, f64::min);
    let bad_o = steps_feasible(&biped, &ro)?;

    let pass = r.converged
        && r.iterations <= FOOT_MAX_ITERS
        && secs < FOOT_MAX_SECONDS
        && bad == 0
        && ro.converged
        && worst_wall >= -OBSTACLE_TOL
        && bad_o == 0;
    Ok((
        pass,
        format!(
            "converged {} in {} iters, {:.3} s, goal residual {residual:.1e}, {bad} infeasible steps; \
             with wall x <= 1: converged {}, min slack {worst_wall:.1e}, {bad_o} infeasible steps",
            r.converged, r.iterations, secs, ro.converged
        ),
    ))
}

fn criterion_placement(chain: &SerialChain, model: &ReachabilityModel) -> Result<(bool, String)> {
    let map: MapHandle = Arc::new(model.clone());
    let waypoints: Vec<Pose> = (0..5)
        .map(|k| {
            let a = 0.9 + 0.25 * k as f64;
            Pose::r2(1.5 * a.cos(), 1.5 * a.sin())
        })
        .collect();
    let cfg = SqpConfig {
        margin: 0.1,
        ..SqpConfig::placement()
    };
    let r = plan_placement(&waypoints, &Pose::r2(0.3, -0.3), None, map.clone(), &cfg)?;
    let base = &r.poses[0];
    let mut reachable = 0;
    for w in &waypoints {
        if chain
            .solve_ik(&base.relative(w)?, &IkOptions::default())?
            .is_some()
        {
            reachable += 1;
        }
    }

    let far = [Pose::r2(-5.0, 0.0), Pose::r2(5.0, 0.0)];
    let ri = plan_placement(
        &far,
        &Pose::r2(0.0, 0.0),
        None,
        map,
        &SqpConfig::placement(),
    )?;
    let residual = ri.target_residuals.iter().copied().fold(0.0, f64::max);
    let flagged = !ri.converged || residual > INFEASIBLE_RESIDUAL;

    Ok((
        r.converged && reachable == waypoints.len() && flagged,
        format!(
            "arc: converged {} in {} iters, {reachable}/5 waypoints IK-reachable; \
             infeasible instance: converged {}, max violation {:.2}, target residual {residual:.2}",
            r.converged, r.iterations, ri.converged, ri.max_violation
        ),
    ))
}

fn criterion_door(f: &Footstep) -> Result<(bool, String)> {
    let hand = SerialChain::planar_hand();
    let bounds = default_ik_bounds(&hand, 2000, 3)?;
    let data = sample_ik(&hand, &bounds, 20_000, 5, &IkOptions::default())?;
    let (hm, _) = train_svm(&data, &SvmConfig::default())?;
    let hand_map: MapHandle = Arc::new(ReachabilityModel::from(hm));
    let foot = FootMaps::mirrored(Arc::new(f.svm.clone()));

    let traj = Arc::new(ArcTrajectory {
        center: [0.0, 0.0],
        radius: 0.8,
    });
    // Stances that hold the hand in a comfortable pose relative to the waist.
    let nominal = hand.fk(&[-0.25, 1.1, 0.0])?;
    let stance = |s: f64| -> Result<FootPair> {
        let waist = traj.pose(s).compose(&nominal.inverse())?;
        Ok(FootPair {
            right: waist.compose(&Pose::se2(0.0, -0.1, 0.0))?,
            left: waist.compose(&Pose::se2(0.0, 0.1, 0.0))?,
        })
    };
    let task = TrajectoryTask {
        start: stance(0.0)?,
        goal: Some(stance(FRAC_PI_3)?),
        n_steps: 6,
        trajectory: traj.clone(),
        s_start: 0.0,
        s_end: FRAC_PI_3,
    };
    let r = plan_with_trajectory_param(&task, hand_map, &foot, &SqpConfig::default())?;

    let monotone = r.params.windows(2).all(|w| w[1] >= w[0] - HAND_TOL);
    let hand_min = r
        .constraint_labels
        .iter()
        .zip(&r.constraint_values)
        .filter(|(l, _)| l.starts_with("hand"))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut ik_fail = 0;
    for k in 0..r.params.len() {
        let waist = r.poses[k].midpoint(&r.poses[k + 1])?;
        let target = waist.relative(&traj.pose(r.params[k]))?;
        if hand.solve_ik(&target, &IkOptions::default())?.is_none() {
            ik_fail += 1;
        }
    }
    Ok((
        r.converged && monotone && hand_min >= -HAND_TOL && ik_fail == 0,
        format!(
            "converged {} in {} iters, s monotone {monotone}, min hand f_R {hand_min:.2e}, {ik_fail}/{} phases fail hand IK",
            r.converged,
            r.iterations,
            r.params.len()
        ),
    ))
}

fn cli(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_reachmap"))
        .args(args)
        .output()?;
    if !out.status.success() {
        return Err(reachmap::Error::InvalidConfig(format!(
            "`reachmap {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(())
}

fn criterion_determinism() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    std::fs::write(
        d.join("plan.json"),
        r#"{"kind": "basic", "model": "m.json", "target": [3.0, 0.0], "initial": [0.8, 1.2]}"#,
    )?;
    let steps: Vec<Vec<String>> = vec![
        vec![
            "chain".into(),
            "--name".into(),
            "arm2".into(),
            "--out".into(),
            p("arm2.json"),
        ],
        vec![
            "sample".into(),
            "--chain".into(),
            p("arm2.json"),
            "--method".into(),
            "ik".into(),
            "--count".into(),
            "2000".into(),
            "--seed".into(),
            "7".into(),
            "--bounds".into(),
            "-2.2:2.2,-2.2:2.2".into(),
            "--out".into(),
            p("s.csv"),
        ],
        vec![
            "split".into(),
            "--data".into(),
            p("s.csv"),
            "--out".into(),
            p("train.csv"),
            "--test-out".into(),
            p("test.csv"),
        ],
        vec![
            "train".into(),
            "--model".into(),
            "svm".into(),
            "--data".into(),
            p("train.csv"),
            "--out".into(),
            p("m.json"),
        ],
        vec![
            "eval".into(),
            "--model".into(),
            p("m.json"),
            "--test".into(),
            p("test.csv"),
            "--out".into(),
            p("r.csv"),
        ],
        vec![
            "plan".into(),
            "--problem".into(),
            p("plan.json"),
            "--out".into(),
            p("plan.csv"),
        ],
        vec![
            "heatmap".into(),
            "--model".into(),
            p("m.json"),
            "--res".into(),
            "40".into(),
            "--out".into(),
            p("h.csv"),
        ],
    ];
    for s in &steps {
        cli(&s.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    let outputs = [
        "arm2.json",
        "s.csv",
        "train.csv",
        "test.csv",
        "m.json",
        "r.csv",
        "plan.csv",
        "h.csv",
    ];
    let manifests = [
        "arm2.json",
        "s.csv",
        "train.csv",
        "m.json",
        "r.csv",
        "plan.csv",
        "h.csv",
    ];
    let rerun = d.join("rerun");
    for m in manifests {
        let manifest = format!("{}.manifest.json", p(m));
        cli(&[
            "rerun",
            "--manifest",
            &manifest,
            "--out-dir",
            &rerun.to_string_lossy(),
        ])?;
    }
    let differing: Vec<&str> = outputs
        .iter()
        .copied()
        .filter(|name| !same_bytes(&d.join(name), &rerun.join(name)))
        .collect();
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} outputs byte-identical after rerun", outputs.len())
        } else {
            format!("outputs differ: {}", differing.join(", "))
        },
    ))
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
