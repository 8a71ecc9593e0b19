//! Labeled task-space datasets.
//!
//! Two generators are provided. [`sample_fk`] draws joint configurations and
//! records the resulting end-effector poses (positives only). [`sample_ik`]
//! draws task-space poses and labels each by whether IK finds a valid
//! configuration.
//!
//! Every sample owns an RNG stream derived from `(seed, index)`, so datasets are
//! identical whether generated serially or in parallel.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode, Pose, TaskSpace};
use crate::kinematics::{Biped, IkOptions, SerialChain};

/// Attempts per FK sample before declaring the chain degenerate.
const MAX_FK_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Fk,
    Ik,
}

impl fmt::Display for SampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMethod::Fk => "fk",
            SampleMethod::Ik => "ik",
        })
    }
}

impl FromStr for SampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fk" => Ok(SampleMethod::Fk),
            "ik" => Ok(SampleMethod::Ik),
            _ => Err(Error::Parse(format!("unknown sampling method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub chain: String,
    pub method: SampleMethod,
    pub seed: u64,
    /// Per-dimension `[lo, hi]` sampling box for IK-based sets.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
}

/// Labeled samples `(x_i, y_i)` with `x_i` already encoded (`M_x` wide).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub space: TaskSpace,
    inputs: Vec<f64>,
    labels: Vec<i8>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn new(
        space: TaskSpace,
        rows: Vec<Vec<f64>>,
        labels: Vec<i8>,
        meta: SampleMeta,
    ) -> Result<Self> {
        let dim = space.input_dim();
        if rows.len() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let mut inputs = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::Dimension {
                    what: "sample row",
                    expected: dim,
                    got: r.len(),
                });
            }
            inputs.extend_from_slice(r);
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
            return Err(Error::InvalidData(format!("label {bad} is not ±1")));
        }
        Ok(SampleSet {
            space,
            inputs,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.space.input_dim()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], i8)> + '_ {
        self.inputs
            .chunks_exact(self.dim())
            .zip(self.labels.iter().copied())
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    pub fn count_negative(&self) -> usize {
        self.len() - self.count_positive()
    }

    pub fn has_both_labels(&self) -> bool {
        self.count_positive() > 0 && self.count_negative() > 0
    }

    /// Subset by row indices (order preserved as given).
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        let d = self.dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        SampleSet {
            space: self.space,
            inputs,
            labels,
            meta: self.meta.clone(),
        }
    }

    /// Only the positive rows.
    pub fn positives(&self) -> SampleSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] > 0).collect();
        self.subset(&idx)
    }

    /// Deterministic shuffled split; the first part holds `round(frac · L)` rows.
    pub fn split(&self, frac: f64, seed: u64) -> (SampleSet, SampleSet) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let k = ((self.len() as f64) * frac).round() as usize;
        let (a, b) = idx.split_at(k.min(idx.len()));
        (self.subset(a), self.subset(b))
    }

    /// Writes the CSV format: a `space,method,seed,count` header, one line
    /// with those values, then `x1..xM,label` per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["space", "method", "seed", "count"])
            .map_err(csv_err)?;
        w.write_record([
            self.space.to_string(),
            self.meta.method.to_string(),
            self.meta.seed.to_string(),
            self.len().to_string(),
        ])
        .map_err(csv_err)?;
        for (x, y) in self.rows() {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<SampleSet> {
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != ["space", "method", "seed", "count"] {
            return Err(Error::InvalidData(
                "missing `space,method,seed,count` header".into(),
            ));
        }
        let mut records = r.records();
        let meta_rec = records
            .next()
            .ok_or_else(|| Error::InvalidData("missing metadata line".into()))?
            .map_err(csv_err)?;
        if meta_rec.len() != 4 {
            return Err(Error::InvalidData("metadata line needs 4 fields".into()));
        }
        let space: TaskSpace = meta_rec[0].parse()?;
        let method: SampleMethod = meta_rec[1].parse()?;
        let seed: u64 = meta_rec[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad seed `{}`", &meta_rec[2])))?;
        let count: usize = meta_rec[3]
            .parse()
            .map_err(|_| Error::Parse(format!("bad count `{}`", &meta_rec[3])))?;
        let dim = space.input_dim();
        let mut rows = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for rec in records {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != dim + 1 {
                return Err(Error::Dimension {
                    what: "CSV sample row",
                    expected: dim + 1,
                    got: rec.len(),
                });
            }
            let row = rec
                .iter()
                .take(dim)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let label: i8 = rec[dim]
                .parse()
                .map_err(|_| Error::Parse(format!("bad label `{}`", &rec[dim])))?;
            rows.push(row);
            labels.push(label);
        }
        if rows.len() != count {
            return Err(Error::InvalidData(format!(
                "header announces {count} rows, found {}",
                rows.len()
            )));
        }
        SampleSet::new(
            space,
            rows,
            labels,
            SampleMeta {
                chain: String::new(),
                method,
                seed,
                bounds: None,
            },
        )
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// RNG stream owned by sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Something that can decide reachability of a task-space pose by IK.
pub trait IkLabeler: Sync {
    fn space(&self) -> TaskSpace;
    fn id(&self) -> String;
    fn is_reachable(&self, target: &Pose, opts: &IkOptions) -> Result<bool>;
}

impl IkLabeler for SerialChain {
    fn space(&self) -> TaskSpace {
        self.space
    }

    fn id(&self) -> String {
        self.name.clone()
    }

    fn is_reachable(&self, target: &Pose, opts: &IkOptions) -> Result<bool> {
        Ok(self.solve_ik(target, opts)?.is_some())
    }
}

/// Swing-left foot poses relative to the right stance foot.
impl IkLabeler for Biped {
    fn space(&self) -> TaskSpace {
        TaskSpace::SE2
    }

    fn id(&self) -> String {
        "biped:left-from-right".into()
    }

    fn is_reachable(&self, target: &Pose, opts: &IkOptions) -> Result<bool> {
        self.left_from_right_reachable(target, opts)
    }
}

/// Positives from uniformly drawn, non-self-colliding joint configurations.
pub fn sample_fk(chain: &SerialChain, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be ≥ 1".into()));
    }
    chain.validate()?;
    let drawn: Vec<Result<(Vec<f64>, usize)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            for attempt in 1..=MAX_FK_ATTEMPTS {
                let q = chain.random_configuration(&mut rng);
                if !chain.self_collision(&q)? {
                    return Ok((encode(&chain.fk(&q)?), attempt));
                }
            }
            Err(Error::SamplingAborted(format!(
                "sample {i}: {MAX_FK_ATTEMPTS} consecutive self-colliding configurations"
            )))
        })
        .collect();
    let mut rows = Vec::with_capacity(count);
    let mut attempts = 0usize;
    for d in drawn {
        let (row, a) = d?;
        rows.push(row);
        attempts += a;
    }
    let rejection = 1.0 - count as f64 / attempts as f64;
    if rejection > 0.99 {
        return Err(Error::SamplingAborted(format!(
            "self-collision rejection rate {:.2}% exceeds 99%",
            rejection * 100.0
        )));
    }
    SampleSet::new(
        chain.space,
        rows,
        vec![1; count],
        SampleMeta {
            chain: chain.name.clone(),
            method: SampleMethod::Fk,
            seed,
            bounds: None,
        },
    )
}

/// FK workspace bounding box (from `probe` random configurations) with each
/// side pushed out by 10% of the extent. SE2 gets the full angle range.
pub fn default_ik_bounds(chain: &SerialChain, probe: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let space = chain.space;
    let npos = match space {
        TaskSpace::R2 | TaskSpace::SE2 => 2,
        _ => 3,
    };
    let mut lo = vec![f64::INFINITY; npos];
    let mut hi = vec![f64::NEG_INFINITY; npos];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probe.max(1) {
        let q = chain.random_configuration(&mut rng);
        let p = chain.fk(&q)?;
        for k in 0..npos {
            lo[k] = lo[k].min(p.coords()[k]);
            hi[k] = hi[k].max(p.coords()[k]);
        }
    }
    let mut bounds: Vec<[f64; 2]> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let pad = 0.1 * (h - l).max(1e-3);
            [l - pad, h + pad]
        })
        .collect();
    if space == TaskSpace::SE2 {
        bounds.push([-PI, PI]);
    }
    Ok(bounds)
}

/// Draws a pose uniformly within `bounds`. SE2 angles use the third bound
/// when given, otherwise `(−π, π]`; SE3 rotations are uniform on SO(3).
pub fn random_pose<R: Rng>(space: TaskSpace, bounds: &[[f64; 2]], rng: &mut R) -> Result<Pose> {
    let npos = match space {
        TaskSpace::R2 | TaskSpace::SE2 => 2,
        _ => 3,
    };
    let needed = match space {
        TaskSpace::SE2 => 2..=3,
        _ => npos..=npos,
    };
    if !needed.contains(&bounds.len()) {
        return Err(Error::Dimension {
            what: "sampling bounds",
            expected: *needed.end(),
            got: bounds.len(),
        });
    }
    for b in bounds {
        if !(b[0] <= b[1]) {
            return Err(Error::InvalidConfig(format!("empty bound {b:?}")));
        }
    }
    let draw = |rng: &mut R, b: [f64; 2]| {
        if b[0] == b[1] {
            b[0]
        } else {
            rng.gen_range(b[0]..b[1])
        }
    };
    let pos: Vec<f64> = bounds.iter().take(npos).map(|&b| draw(rng, b)).collect();
    Ok(match space {
        TaskSpace::R2 => Pose::r2(pos[0], pos[1]),
        TaskSpace::R3 => Pose::r3(pos[0], pos[1], pos[2]),
        TaskSpace::SE2 => {
            // (−π, π]: draw from [−π, π) and reflect.
            let theta = match bounds.get(2) {
                Some(&b) => draw(rng, b),
                None => -rng.gen_range(-PI..PI),
            };
            Pose::se2(pos[0], pos[1], theta)
        }
        TaskSpace::SE3 => {
            // Uniform unit quaternion (Shoemake).
            let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
            let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
            let q = nalgebra::Quaternion::new(
                b * (2.0 * PI * u3).cos(),
                a * (2.0 * PI * u2).sin(),
                a * (2.0 * PI * u2).cos(),
                b * (2.0 * PI * u3).sin(),
            );
            Pose::se3(
                Vector3::new(pos[0], pos[1], pos[2]),
                UnitQuaternion::from_quaternion(q),
            )
        }
    })
}

/// Uniform poses in `bounds`, labeled `+1` iff the labeler's IK succeeds.
///
/// `bounds` should enclose the reachable region; poses outside the box are
/// never sampled.
pub fn sample_ik<L: IkLabeler + ?Sized>(
    labeler: &L,
    bounds: &[[f64; 2]],
    count: usize,
    seed: u64,
    ik_opts: &IkOptions,
) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be ≥ 1".into()));
    }
    ik_opts.validate()?;
    let space = labeler.space();
    let drawn: Vec<Result<(Vec<f64>, i8)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let pose = random_pose(space, bounds, &mut rng)?;
            let opts = ik_opts.with_seed(rng.gen());
            let label = if labeler.is_reachable(&pose, &opts)? {
                1
            } else {
                -1
            };
            Ok((encode(&pose), label))
        })
        .collect();
    let mut rows = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for d in drawn {
        let (row, l) = d?;
        rows.push(row);
        labels.push(l);
    }
    SampleSet::new(
        space,
        rows,
        labels,
        SampleMeta {
            chain: labeler.id(),
            method: SampleMethod::Ik,
            seed,
            bounds: Some(bounds.to_vec()),
        },
    )
}

/// Sampling box for swing-left poses relative to the right stance foot.
pub fn footstep_bounds() -> Vec<[f64; 2]> {
    vec![[-0.8, 0.7], [-0.2, 0.7], [-0.95, 1.65]]
}
