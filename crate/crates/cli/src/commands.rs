use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use reachmap::eval::{compute_iou, median_inference_seconds, oracle_grid_test_set, EvalReport};
use reachmap::kinematics::{Biped, IkOptions, SerialChain};
use reachmap::models::{
    train_mlp, train_ocsvm, train_svm, MlpConfig, ReachabilityMap, ReachabilityModel, SvmConfig,
};
use reachmap::sampling::{default_ik_bounds, footstep_bounds, sample_fk, sample_ik, SampleSet};
use reachmap::{encode, Error, Pose, Result, TaskSpace};
use serde::{Deserialize, Serialize};

use crate::args::{
    BuiltinChain, ChainArgs, Command, EvalArgs, GridArgs, HeatmapArgs, Method, ModelKind, PlanArgs,
    RerunArgs, SampleArgs, SplitArgs, TrainArgs,
};
use crate::plan_file::PlanFile;

/// Probe configurations used to size the default IK sampling box.
const BOUNDS_PROBE: usize = 2000;

/// A chain file holds either a serial chain or a biped.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ChainFile {
    Biped(Biped),
    Serial(SerialChain),
}

impl ChainFile {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let chain: ChainFile = serde_json::from_str(&text)?;
        if let ChainFile::Serial(c) = &chain {
            c.validate()?;
        }
        Ok(chain)
    }

    fn serial(self, what: &str) -> Result<SerialChain> {
        match self {
            ChainFile::Serial(c) => Ok(c),
            ChainFile::Biped(_) => Err(Error::InvalidConfig(format!(
                "{what} needs a serial chain, got a biped"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    #[serde(flatten)]
    command: Command,
    outputs: Vec<PathBuf>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn run(command: Command) -> Result<()> {
    let mut command = command;
    if let Command::Rerun(args) = command {
        return rerun(&args);
    }
    absolutize(&mut command)?;
    let outputs = match &mut command {
        Command::Chain(a) => cmd_chain(a)?,
        Command::Sample(a) => cmd_sample(a)?,
        Command::Grid(a) => cmd_grid(a)?,
        Command::Split(a) => cmd_split(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Plan(a) => cmd_plan(a)?,
        Command::Heatmap(a) => cmd_heatmap(a)?,
        Command::Rerun(_) => unreachable!(),
    };
    let manifest = Manifest {
        tool: "reachmap".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        outputs: outputs.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(manifest_path(&outputs[0]), text)?;
    Ok(())
}

fn abs(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p)?;
    Ok(())
}

/// Rewrites every path argument as absolute so the manifest can be replayed
/// from any working directory.
fn absolutize(c: &mut Command) -> Result<()> {
    match c {
        Command::Chain(a) => abs(&mut a.out),
        Command::Sample(a) => {
            abs(&mut a.chain)?;
            abs(&mut a.out)
        }
        Command::Grid(a) => {
            abs(&mut a.chain)?;
            abs(&mut a.out)
        }
        Command::Split(a) => {
            abs(&mut a.data)?;
            abs(&mut a.out)?;
            abs(&mut a.test_out)
        }
        Command::Train(a) => {
            abs(&mut a.data)?;
            abs(&mut a.out)
        }
        Command::Eval(a) => {
            abs(&mut a.model)?;
            abs(&mut a.test)?;
            abs(&mut a.out)
        }
        Command::Plan(a) => {
            abs(&mut a.problem)?;
            abs(&mut a.out)
        }
        Command::Heatmap(a) => {
            abs(&mut a.model)?;
            abs(&mut a.out)
        }
        Command::Rerun(_) => Ok(()),
    }
}

fn rerun(args: &RerunArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.manifest)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut command = manifest.command;
    if let Command::Rerun(_) = command {
        return Err(Error::InvalidConfig(
            "a manifest cannot record a rerun".into(),
        ));
    }
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        let relocate = |p: &mut PathBuf| {
            if let Some(name) = p.file_name() {
                *p = dir.join(name);
            }
        };
        match &mut command {
            Command::Chain(a) => relocate(&mut a.out),
            Command::Sample(a) => relocate(&mut a.out),
            Command::Grid(a) => relocate(&mut a.out),
            Command::Split(a) => {
                relocate(&mut a.out);
                relocate(&mut a.test_out);
            }
            Command::Train(a) => relocate(&mut a.out),
            Command::Eval(a) => relocate(&mut a.out),
            Command::Plan(a) => relocate(&mut a.out),
            Command::Heatmap(a) => relocate(&mut a.out),
            Command::Rerun(_) => {}
        }
    }
    run(command)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_samples(path: &Path) -> Result<SampleSet> {
    SampleSet::read_csv(BufReader::new(File::open(path)?))
}

fn write_samples(set: &SampleSet, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    set.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses `lo:hi,lo:hi,...`.
pub fn parse_bounds(s: &str) -> Result<Vec<[f64; 2]>> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("bound `{part}` is not lo:hi")))?;
            let num = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number `{t}` in bounds")))
            };
            let (lo, hi) = (num(lo)?, num(hi)?);
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("empty bound {lo}:{hi}")));
            }
            Ok([lo, hi])
        })
        .collect()
}

fn cmd_chain(a: &ChainArgs) -> Result<Vec<PathBuf>> {
    let chain = match a.name {
        BuiltinChain::Arm2 => ChainFile::Serial(SerialChain::planar_2dof()),
        BuiltinChain::Hand3 => ChainFile::Serial(SerialChain::planar_hand()),
        BuiltinChain::Biped => ChainFile::Biped(Biped::planar()),
    };
    let mut text = serde_json::to_string_pretty(&chain)?;
    text.push('\n');
    std::fs::write(&a.out, text)?;
    println!("wrote {}", a.out.display());
    Ok(vec![a.out.clone()])
}

fn cmd_sample(a: &mut SampleArgs) -> Result<Vec<PathBuf>> {
    let chain = ChainFile::load(&a.chain)?;
    let opts = IkOptions {
        restarts: a.restarts,
        rng_seed: a.seed,
        ..IkOptions::default()
    };
    let set = match (a.method, chain) {
        (Method::Fk, ChainFile::Serial(c)) => sample_fk(&c, a.count, a.seed)?,
        (Method::Fk, ChainFile::Biped(_)) => {
            return Err(Error::InvalidConfig(
                "FK sampling needs a serial chain; bipeds are sampled with IK".into(),
            ))
        }
        (Method::Ik, chain) => {
            let bounds = match (&a.bounds, &chain) {
                (Some(b), _) => parse_bounds(b)?,
                (None, ChainFile::Biped(_)) => footstep_bounds(),
                (None, ChainFile::Serial(c)) => default_ik_bounds(c, BOUNDS_PROBE, a.seed)?,
            };
            a.bounds = Some(format_bounds(&bounds));
            match &chain {
                ChainFile::Serial(c) => sample_ik(c, &bounds, a.count, a.seed, &opts)?,
                ChainFile::Biped(b) => sample_ik(b, &bounds, a.count, a.seed, &opts)?,
            }
        }
    };
    write_samples(&set, &a.out)?;
    println!(
        "wrote {} samples ({} positive) to {}",
        set.len(),
        set.count_positive(),
        a.out.display()
    );
    Ok(vec![a.out.clone()])
}

fn format_bounds(b: &[[f64; 2]]) -> String {
    b.iter()
        .map(|[lo, hi]| format!("{lo}:{hi}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn plane_bounds(s: &str) -> Result<[[f64; 2]; 2]> {
    let b = parse_bounds(s)?;
    if b.len() != 2 {
        return Err(Error::Dimension {
            what: "grid bounds",
            expected: 2,
            got: b.len(),
        });
    }
    Ok([b[0], b[1]])
}

fn cmd_grid(a: &GridArgs) -> Result<Vec<PathBuf>> {
    let chain = ChainFile::load(&a.chain)?.serial("grid")?;
    let set = oracle_grid_test_set(&chain, plane_bounds(&a.bounds)?, a.res, a.oracle_res)?;
    write_samples(&set, &a.out)?;
    println!(
        "wrote {} grid points ({} reachable) to {}",
        set.len(),
        set.count_positive(),
        a.out.display()
    );
    Ok(vec![a.out.clone()])
}

fn cmd_split(a: &SplitArgs) -> Result<Vec<PathBuf>> {
    if !(a.frac > 0.0 && a.frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction {} is not in (0, 1)",
            a.frac
        )));
    }
    let data = read_samples(&a.data)?;
    let (train, test) = data.split(a.frac, a.seed);
    write_samples(&train, &a.out)?;
    write_samples(&test, &a.test_out)?;
    println!("train {} / test {}", train.len(), test.len());
    Ok(vec![a.out.clone(), a.test_out.clone()])
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad layer width `{t}`")))
        })
        .collect()
}

fn cmd_train(a: &mut TrainArgs) -> Result<Vec<PathBuf>> {
    let data = read_samples(&a.data)?;
    let offset = *a.offset.get_or_insert(match a.model {
        ModelKind::Svm | ModelKind::Ocsvm => SvmConfig::default().offset,
        ModelKind::Mlp => MlpConfig::default().offset,
    });
    let start = Instant::now();
    let model: ReachabilityModel = match a.model {
        ModelKind::Svm | ModelKind::Ocsvm => {
            let cfg = SvmConfig {
                c: a.c,
                nu: a.nu,
                gamma: a.gamma,
                tol: a.tol,
                max_passes: a.max_passes,
                offset,
                cache_bytes: a.cache_mb << 20,
            };
            let (m, report) = if a.model == ModelKind::Svm {
                train_svm(&data, &cfg)?
            } else {
                train_ocsvm(&data, &cfg)?
            };
            println!(
                "{} support vectors, {} iterations, converged {}",
                m.n_support(),
                report.iterations,
                report.converged
            );
            m.into()
        }
        ModelKind::Mlp => {
            let cfg = MlpConfig {
                hidden: parse_hidden(&a.hidden)?,
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                rng_seed: a.seed,
                offset,
            };
            let (m, report) = train_mlp(&data, &cfg)?;
            if let Some(loss) = report.loss_curve.last() {
                println!("final training loss {loss}");
            }
            m.into()
        }
    };
    eprintln!("training time: {:.3} s", start.elapsed().as_secs_f64());
    model.save(&a.out)?;
    println!("wrote {} model to {}", model.kind_name(), a.out.display());
    Ok(vec![a.out.clone()])
}

fn cmd_eval(a: &EvalArgs) -> Result<Vec<PathBuf>> {
    let model = ReachabilityModel::load(&a.model)?;
    let test = read_samples(&a.test)?;
    let mut report: EvalReport = compute_iou(&model, &test, a.rho)?;
    report.model_kind = model.kind_name().to_string();
    if let Some(name) = a.test.file_name() {
        report.test_set = name.to_string_lossy().into_owned();
    }
    let mut w = create(&a.out)?;
    writeln!(w, "{}", EvalReport::CSV_HEADER)?;
    writeln!(w, "{}", report.csv_row())?;
    w.flush()?;
    println!("{report}");
    if a.timing {
        let t = median_inference_seconds(&model, &test, test.len().min(2000));
        eprintln!("median inference: {:.3} us/sample", t * 1e6);
    }
    Ok(vec![a.out.clone()])
}

fn cmd_plan(a: &PlanArgs) -> Result<Vec<PathBuf>> {
    let problem = PlanFile::load(&a.problem)?;
    let dir = a.problem.parent().unwrap_or(Path::new("."));
    let start = Instant::now();
    let result = problem.solve(dir)?;
    eprintln!("planning time: {:.3} s", start.elapsed().as_secs_f64());
    std::fs::write(&a.out, result.to_csv())?;
    println!(
        "converged {} after {} iterations, max violation {:e}",
        result.converged, result.iterations, result.max_violation
    );
    if !result.target_residuals.is_empty() {
        let worst = result.target_residuals.iter().copied().fold(0.0, f64::max);
        println!("largest target residual {worst:e}");
    }
    Ok(vec![a.out.clone()])
}

/// Value of the fixed coordinate named by `--slice`.
fn slice_value(space: TaskSpace, slice: Option<&str>) -> Result<Option<f64>> {
    let expected = match space {
        TaskSpace::R2 => None,
        TaskSpace::SE2 => Some("theta"),
        TaskSpace::R3 => Some("z"),
        TaskSpace::SE3 => {
            return Err(Error::UnsupportedSpace {
                space,
                what: "heatmap",
            })
        }
    };
    match (expected, slice) {
        (None, None) => Ok(None),
        (None, Some(s)) => {
            eprintln!("warning: planar position map has no sliced coordinate; ignoring `{s}`");
            Ok(None)
        }
        (Some(_), None) => Ok(Some(0.0)),
        (Some(name), Some(s)) => {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("slice `{s}` is not name=value")))?;
            if key.trim() != name {
                return Err(Error::InvalidConfig(format!(
                    "{space} maps are sliced by `{name}`, got `{key}`"
                )));
            }
            let v = value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad slice value `{value}`")))?;
            Ok(Some(v))
        }
    }
}

/// Grid pose at `(x, y)` with the sliced coordinate fixed.
pub fn heatmap_pose(space: TaskSpace, x: f64, y: f64, fixed: Option<f64>) -> Pose {
    match space {
        TaskSpace::SE2 => Pose::se2(x, y, fixed.unwrap_or(0.0)),
        TaskSpace::R3 => Pose::r3(x, y, fixed.unwrap_or(0.0)),
        _ => Pose::r2(x, y),
    }
}

fn cmd_heatmap(a: &mut HeatmapArgs) -> Result<Vec<PathBuf>> {
    let model = ReachabilityModel::load(&a.model)?;
    let space = model.space();
    let fixed = slice_value(space, a.slice.as_deref())?;
    if let (Some(v), TaskSpace::SE2) = (fixed, space) {
        a.slice = Some(format!("theta={v}"));
    } else if let (Some(v), TaskSpace::R3) = (fixed, space) {
        a.slice = Some(format!("z={v}"));
    }
    if a.res < 2 {
        return Err(Error::InvalidConfig(
            "heatmap resolution must be ≥ 2".into(),
        ));
    }
    let [bx, by] = plane_bounds(&a.bounds)?;
    let axis = |b: [f64; 2], i: usize| b[0] + (b[1] - b[0]) * i as f64 / (a.res - 1) as f64;
    let mut w = create(&a.out)?;
    writeln!(w, "x,y,value")?;
    for iy in 0..a.res {
        let y = axis(by, iy);
        for ix in 0..a.res {
            let x = axis(bx, ix);
            let v = model.eval_value(&encode(&heatmap_pose(space, x, y, fixed)))?;
            writeln!(w, "{x},{y},{v}")?;
        }
    }
    w.flush()?;
    println!("wrote {}x{} grid to {}", a.res, a.res, a.out.display());
    Ok(vec![a.out.clone()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_round_trip() {
        let b = parse_bounds("-2.2:2.2,-1:0.5").unwrap();
        assert_eq!(b, vec![[-2.2, 2.2], [-1.0, 0.5]]);
        assert_eq!(parse_bounds(&format_bounds(&b)).unwrap(), b);
        assert!(parse_bounds("1:0").is_err());
        assert!(parse_bounds("1").is_err());
        assert!(parse_bounds("a:1").is_err());
    }

    #[test]
    fn slices_follow_the_space() {
        assert_eq!(
            slice_value(TaskSpace::SE2, Some("theta=0.5")).unwrap(),
            Some(0.5)
        );
        assert_eq!(slice_value(TaskSpace::SE2, None).unwrap(), Some(0.0));
        assert_eq!(slice_value(TaskSpace::R3, Some("z=1")).unwrap(), Some(1.0));
        assert_eq!(slice_value(TaskSpace::R2, None).unwrap(), None);
        assert_eq!(slice_value(TaskSpace::R2, Some("theta=0")).unwrap(), None);
        assert!(slice_value(TaskSpace::SE2, Some("z=0")).is_err());
        assert!(slice_value(TaskSpace::SE3, None).is_err());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("out/s.csv")),
            PathBuf::from("out/s.csv.manifest.json")
        );
    }
}
