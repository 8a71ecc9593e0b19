//! Classification quality of reachability maps and label-only baselines.

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, TaskSpace};
use crate::kinematics::{GridOracle, SerialChain};
use crate::models::ReachabilityMap;
use crate::sampling::{SampleMeta, SampleMethod, SampleSet};

/// Anything that labels encoded inputs as reachable or not.
///
/// Every [`ReachabilityMap`] is a classifier through its sign; the baselines
/// below only produce labels and so cannot be used as planning constraints.
pub trait Classifier: Sync {
    fn kind(&self) -> String;

    /// Predicted label. `rho_override` replaces a map's stored offset and is
    /// ignored by label-only baselines.
    fn predict(&self, x: &[f64], rho_override: Option<f64>) -> bool;

    /// The offset used when no override is given, if the classifier has one.
    fn stored_offset(&self) -> Option<f64> {
        None
    }

    fn input_dim(&self) -> usize;
}

impl<M: ReachabilityMap + ?Sized> Classifier for M {
    fn kind(&self) -> String {
        format!("map:{}", self.space())
    }

    fn predict(&self, x: &[f64], rho_override: Option<f64>) -> bool {
        let v = self.value_unchecked(x);
        let v = match rho_override {
            Some(rho) => v - self.offset() + rho,
            None => v,
        };
        v >= 0.0
    }

    fn stored_offset(&self) -> Option<f64> {
        Some(self.offset())
    }

    fn input_dim(&self) -> usize {
        ReachabilityMap::input_dim(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Median wall time of one single-sample prediction, when measured.
    pub inference_seconds: Option<f64>,
    pub model_kind: String,
    pub test_set: String,
    /// Offset in effect during evaluation (`None` for label-only baselines).
    pub rho: Option<f64>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub const CSV_HEADER: &'static str = "model_kind,test_set,rho,iou,tp,fp,fn,tn";

    /// One CSV row matching [`EvalReport::CSV_HEADER`]. Timing is left out so
    /// reports stay reproducible.
    pub fn csv_row(&self) -> String {
        let rho = self.rho.map(|r| r.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model_kind, self.test_set, rho, self.iou, self.tp, self.fp, self.fn_, self.tn
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model:   {}", self.model_kind)?;
        writeln!(f, "test:    {} ({} samples)", self.test_set, self.total())?;
        if let Some(rho) = self.rho {
            writeln!(f, "offset:  {rho}")?;
        }
        writeln!(f, "IoU:     {:.4}", self.iou)?;
        write!(
            f,
            "tp {}  fp {}  fn {}  tn {}",
            self.tp, self.fp, self.fn_, self.tn
        )?;
        if let Some(t) = self.inference_seconds {
            write!(f, "\ninference: {:.3} us/sample (median)", t * 1e6)?;
        }
        Ok(())
    }
}

fn test_set_id(test: &SampleSet) -> String {
    format!(
        "{}:{}:{}",
        test.meta.chain, test.meta.method, test.meta.seed
    )
}

/// IoU of the predicted-positive and actual-positive sets.
pub fn compute_iou<C: Classifier + ?Sized>(
    clf: &C,
    test: &SampleSet,
    rho_override: Option<f64>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidData("empty test set".into()));
    }
    if test.dim() != clf.input_dim() {
        return Err(Error::Dimension {
            what: "test set input",
            expected: clf.input_dim(),
            got: test.dim(),
        });
    }
    let predicted: Vec<bool> = (0..test.len())
        .into_par_iter()
        .map(|i| clf.predict(test.input(i), rho_override))
        .collect();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, &l) in predicted.iter().zip(test.labels()) {
        match (*p, l > 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let union = tp + fp + fn_;
    let iou = if union == 0 {
        1.0
    } else {
        tp as f64 / union as f64
    };
    Ok(EvalReport {
        iou,
        tp,
        fp,
        fn_,
        tn,
        inference_seconds: None,
        model_kind: clf.kind(),
        test_set: test_set_id(test),
        rho: rho_override.or(clf.stored_offset()),
    })
}

/// Median time of `evals` single-sample predictions cycling through `test`.
pub fn median_inference_seconds<C: Classifier + ?Sized>(
    clf: &C,
    test: &SampleSet,
    evals: usize,
) -> f64 {
    if test.is_empty() || evals == 0 {
        return 0.0;
    }
    let mut times: Vec<f64> = (0..evals)
        .map(|k| {
            let x = test.input(k % test.len());
            let start = Instant::now();
            std::hint::black_box(clf.predict(std::hint::black_box(x), None));
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// IoU for each offset value.
pub fn offset_sweep<M: ReachabilityMap + ?Sized>(
    model: &M,
    test: &SampleSet,
    rho_values: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if rho_values.len() < 2 {
        return Err(Error::InvalidConfig(
            "offset sweep needs at least two values".into(),
        ));
    }
    rho_values
        .iter()
        .map(|&rho| Ok((rho, compute_iou(model, test, Some(rho))?.iou)))
        .collect()
}

/// Majority vote of the `k` nearest training samples (Euclidean distance on
/// encoded inputs; ties in distance go to the lower index).
pub struct KnnClassifier {
    train: SampleSet,
    k: usize,
}

impl KnnClassifier {
    pub fn new(train: SampleSet, k: usize) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "k must be odd and positive, got {k}"
            )));
        }
        if train.len() < k {
            return Err(Error::InvalidData(format!(
                "k = {k} exceeds training set size {}",
                train.len()
            )));
        }
        Ok(KnnClassifier { train, k })
    }

    pub fn classify(&self, x: &[f64]) -> i8 {
        let mut d: Vec<(f64, usize)> = (0..self.train.len())
            .map(|i| {
                let xi = self.train.input(i);
                (xi.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
        }
        let votes: i32 = d[..self.k]
            .iter()
            .map(|&(_, i)| i32::from(self.train.label(i)))
            .sum();
        if votes > 0 {
            1
        } else {
            -1
        }
    }
}

impl Classifier for KnnClassifier {
    fn kind(&self) -> String {
        format!("knn:{}", self.k)
    }

    fn predict(&self, x: &[f64], _rho_override: Option<f64>) -> bool {
        self.classify(x) > 0
    }

    fn input_dim(&self) -> usize {
        self.train.dim()
    }
}

/// Convex hull of reachable samples as a half-space intersection
/// `n_k · x ≤ d_k`.
pub struct ConvexHull {
    space: TaskSpace,
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    eps: f64,
}

impl ConvexHull {
    /// Hull of the positive rows of `train` (R2 or R3 only).
    pub fn from_positives(train: &SampleSet) -> Result<Self> {
        let points: Vec<Vec<f64>> = train
            .rows()
            .filter(|(_, l)| *l > 0)
            .map(|(x, _)| x.to_vec())
            .collect();
        match train.space {
            TaskSpace::R2 => hull_2d(&points),
            TaskSpace::R3 => hull_3d(&points),
            space => Err(Error::UnsupportedSpace {
                space,
                what: "convex hull baseline",
            }),
        }
    }

    pub fn n_facets(&self) -> usize {
        self.normals.len()
    }

    pub fn classify(&self, x: &[f64]) -> i8 {
        let inside = self
            .normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, d)| n.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() <= d + self.eps);
        if inside {
            1
        } else {
            -1
        }
    }
}

impl Classifier for ConvexHull {
    fn kind(&self) -> String {
        "convex-hull".into()
    }

    fn predict(&self, x: &[f64], _rho_override: Option<f64>) -> bool {
        self.classify(x) > 0
    }

    fn input_dim(&self) -> usize {
        self.space.input_dim()
    }
}

fn extent(points: &[Vec<f64>]) -> f64 {
    let dim = points.first().map_or(0, |p| p.len());
    (0..dim)
        .map(|k| {
            let lo = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = points
                .iter()
                .map(|p| p[k])
                .fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn cross2(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain.
fn hull_2d(points: &[Vec<f64>]) -> Result<ConvexHull> {
    if points.len() < 3 {
        return Err(Error::DegenerateHull(format!(
            "{} points in the plane",
            points.len()
        )));
    }
    let scale = extent(points).max(1e-300);
    let mut pts: Vec<&Vec<f64>> = points.iter().collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let mut hull: Vec<&Vec<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &&Vec<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::DegenerateHull("all points are collinear".into()));
    }
    let mut normals = Vec::with_capacity(hull.len());
    let mut offsets = Vec::with_capacity(hull.len());
    for k in 0..hull.len() {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        // Counter-clockwise order: the outward normal of edge a→b is (dy, −dx).
        let n = [b[1] - a[1], -(b[0] - a[0])];
        let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
        let n = vec![n[0] / len, n[1] / len];
        offsets.push(n[0] * a[0] + n[1] * a[1]);
        normals.push(n);
    }
    Ok(ConvexHull {
        space: TaskSpace::R2,
        normals,
        offsets,
        eps: 1e-12 * scale,
    })
}

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

/// Incremental hull: start from a maximal tetrahedron, then for each point
/// outside the current hull replace its visible faces by a cone to the horizon.
fn hull_3d(points: &[Vec<f64>]) -> Result<ConvexHull> {
    if points.len() < 4 {
        return Err(Error::DegenerateHull(format!(
            "{} points in space",
            points.len()
        )));
    }
    let p: Vec<V3> = points.iter().map(|v| [v[0], v[1], v[2]]).collect();
    let scale = extent(points).max(1e-300);
    let eps = 1e-10 * scale;

    let i0 = 0;
    let i1 = (0..p.len())
        .max_by(|&a, &b| norm(sub(p[a], p[i0])).total_cmp(&norm(sub(p[b], p[i0]))))
        .unwrap();
    let axis = sub(p[i1], p[i0]);
    if norm(axis) <= eps {
        return Err(Error::DegenerateHull("all points coincide".into()));
    }
    let line_dist = |k: usize| norm(cross(axis, sub(p[k], p[i0]))) / norm(axis);
    let i2 = (0..p.len())
        .max_by(|&a, &b| line_dist(a).total_cmp(&line_dist(b)))
        .unwrap();
    if line_dist(i2) <= eps {
        return Err(Error::DegenerateHull("all points are collinear".into()));
    }
    let plane_n = cross(axis, sub(p[i2], p[i0]));
    let plane_dist = |k: usize| dot(plane_n, sub(p[k], p[i0])).abs() / norm(plane_n);
    let i3 = (0..p.len())
        .max_by(|&a, &b| plane_dist(a).total_cmp(&plane_dist(b)))
        .unwrap();
    if plane_dist(i3) <= eps {
        return Err(Error::DegenerateHull("all points are coplanar".into()));
    }

    let centroid = {
        let s = [i0, i1, i2, i3].iter().fold([0.0; 3], |acc, &k| {
            [acc[0] + p[k][0], acc[1] + p[k][1], acc[2] + p[k][2]]
        });
        [s[0] / 4.0, s[1] / 4.0, s[2] / 4.0]
    };
    let orient = |f: [usize; 3]| -> [usize; 3] {
        let n = cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]));
        if dot(n, sub(centroid, p[f[0]])) > 0.0 {
            [f[0], f[2], f[1]]
        } else {
            f
        }
    };
    let mut faces: Vec<[usize; 3]> = vec![
        orient([i0, i1, i2]),
        orient([i0, i1, i3]),
        orient([i0, i2, i3]),
        orient([i1, i2, i3]),
    ];
    let face_plane = |f: &[usize; 3]| -> (V3, f64) {
        let n = cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]));
        let len = norm(n);
        let n = [n[0] / len, n[1] / len, n[2] / len];
        (n, dot(n, p[f[0]]))
    };

    for k in 0..p.len() {
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| {
                let (n, d) = face_plane(f);
                dot(n, p[k]) - d > eps
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for e in 0..3 {
                edges.insert((f[e], f[(e + 1) % 3]));
            }
        }
        let mut next: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(f, _)| *f)
            .collect();
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .filter(|(a, b)| !edges.contains(&(*b, *a)))
            .copied()
            .collect();
        horizon.sort_unstable();
        for (a, b) in horizon {
            next.push([a, b, k]);
        }
        faces = next;
    }

    let (normals, offsets) = faces
        .iter()
        .map(|f| {
            let (n, d) = face_plane(f);
            (n.to_vec(), d)
        })
        .unzip();
    Ok(ConvexHull {
        space: TaskSpace::R3,
        normals,
        offsets,
        eps,
    })
}

/// `res × res` grid over a planar box, labeled by the grid oracle of `chain`.
pub fn oracle_grid_test_set(
    chain: &SerialChain,
    bounds: [[f64; 2]; 2],
    res: usize,
    oracle_resolution: usize,
) -> Result<SampleSet> {
    if chain.space != TaskSpace::R2 {
        return Err(Error::UnsupportedSpace {
            space: chain.space,
            what: "oracle grid test set",
        });
    }
    if res < 2 {
        return Err(Error::InvalidConfig("grid resolution must be ≥ 2".into()));
    }
    let oracle = GridOracle::new(chain, oracle_resolution)?;
    let coord = |b: [f64; 2], i: usize| b[0] + (b[1] - b[0]) * i as f64 / (res - 1) as f64;
    let labeled: Vec<Result<(Vec<f64>, i8)>> = (0..res * res)
        .into_par_iter()
        .map(|k| {
            let x = coord(bounds[0], k % res);
            let y = coord(bounds[1], k / res);
            let inside = oracle.contains(&Pose::r2(x, y))?;
            Ok((vec![x, y], if inside { 1 } else { -1 }))
        })
        .collect();
    let mut rows = Vec::with_capacity(res * res);
    let mut labels = Vec::with_capacity(res * res);
    for r in labeled {
        let (x, l) = r?;
        rows.push(x);
        labels.push(l);
    }
    SampleSet::new(
        TaskSpace::R2,
        rows,
        labels,
        SampleMeta {
            chain: format!("{}:grid{res}", chain.name),
            method: SampleMethod::Ik,
            seed: 0,
            bounds: Some(bounds.to_vec()),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{SvmKind, SvmModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> SampleMeta {
        SampleMeta {
            chain: "toy".into(),
            method: SampleMethod::Ik,
            seed: 0,
            bounds: None,
        }
    }

    fn set(space: TaskSpace, rows: Vec<Vec<f64>>, labels: Vec<i8>) -> SampleSet {
        SampleSet::new(space, rows, labels, meta()).unwrap()
    }

    /// Label-only classifier that returns a fixed answer per index of `x[0]`.
    struct Table(Vec<bool>);

    impl Classifier for Table {
        fn kind(&self) -> String {
            "table".into()
        }
        fn predict(&self, x: &[f64], _: Option<f64>) -> bool {
            self.0[x[0] as usize]
        }
        fn input_dim(&self) -> usize {
            2
        }
    }

    #[test]
    fn iou_definition_arithmetic() {
        // 100 samples: actual positives 0..50, predicted positives 25..75.
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 0.0]).collect();
        let labels: Vec<i8> = (0..100).map(|i| if i < 50 { 1 } else { -1 }).collect();
        let test = set(TaskSpace::R2, rows, labels.clone());
        let pred = Table((0..100).map(|i| (25..75).contains(&i)).collect());
        let r = compute_iou(&pred, &test, None).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (25, 25, 25, 25));
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.total(), 100);

        let perfect = Table(labels.iter().map(|&l| l > 0).collect());
        assert_eq!(compute_iou(&perfect, &test, None).unwrap().iou, 1.0);
    }

    #[test]
    fn iou_is_row_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels: Vec<i8> = rows
            .iter()
            .map(|r| if r[0] > r[1] { 1 } else { -1 })
            .collect();
        let test = set(TaskSpace::R2, rows, labels);
        let model = toy_model();
        let a = compute_iou(&model, &test, None).unwrap();
        let mut idx: Vec<usize> = (0..200).collect();
        idx.reverse();
        let b = compute_iou(&model, &test.subset(&idx), None).unwrap();
        assert_eq!(a.iou, b.iou);
    }

    fn toy_model() -> SvmModel {
        SvmModel::from_parts(
            SvmKind::Regular,
            TaskSpace::R2,
            2.0,
            vec![1.0, -1.0],
            vec![vec![0.5, -0.5], vec![-0.5, 0.5]],
            0.0,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn offset_override_equals_clone_with_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels: Vec<i8> = rows
            .iter()
            .map(|r| if r[0] > r[1] { 1 } else { -1 })
            .collect();
        let test = set(TaskSpace::R2, rows, labels);
        let model = toy_model();
        let mut zero = model.clone();
        zero.offset = 0.0;
        let a = compute_iou(&model, &test, Some(0.0)).unwrap();
        let b = compute_iou(&zero, &test, None).unwrap();
        assert_eq!((a.iou, a.tp, a.fp), (b.iou, b.tp, b.fp));
        assert_eq!(a.rho, Some(0.0));

        let sweep = offset_sweep(&model, &test, &[-10.0, 10.0]).unwrap();
        assert_eq!(sweep[0].1, 0.0);
        let prior = test.count_positive() as f64 / test.len() as f64;
        assert!((sweep[1].1 - prior).abs() < 1e-12);
        assert!(offset_sweep(&model, &test, &[0.0]).is_err());
    }

    #[test]
    fn empty_or_mismatched_test_set_is_an_error() {
        let model = toy_model();
        let wide = set(TaskSpace::R3, vec![vec![0.0; 3]], vec![1]);
        assert!(matches!(
            compute_iou(&model, &wide, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn knn_examples() {
        let train = set(
            TaskSpace::R2,
            vec![
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![5.0, 5.0],
            ],
            vec![1, 1, -1, -1],
        );
        let knn = KnnClassifier::new(train.clone(), 1).unwrap();
        for i in 0..train.len() {
            assert_eq!(knn.classify(train.input(i)), train.label(i));
        }
        let knn3 = KnnClassifier::new(train.clone(), 3).unwrap();
        assert_eq!(knn3.classify(&[0.4, 0.1]), 1);
        assert!(KnnClassifier::new(train.clone(), 2).is_err());
        assert!(KnnClassifier::new(train, 5).is_err());
    }

    #[test]
    fn hull_2d_square() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![0.2, 0.7],
        ];
        let train = set(TaskSpace::R2, rows.clone(), vec![1; 6]);
        let hull = ConvexHull::from_positives(&train).unwrap();
        assert_eq!(hull.n_facets(), 4);
        let centroid = [
            rows.iter().map(|r| r[0]).sum::<f64>() / 6.0,
            rows.iter().map(|r| r[1]).sum::<f64>() / 6.0,
        ];
        assert_eq!(hull.classify(&centroid), 1);
        assert_eq!(hull.classify(&[1.0, 1.0]), 1);
        assert_eq!(hull.classify(&[1.01, 0.5]), -1);
        assert_eq!(hull.classify(&[-0.5, -0.5]), -1);
    }

    #[test]
    fn hull_degenerate_inputs() {
        let line = set(
            TaskSpace::R2,
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]],
            vec![1; 3],
        );
        assert!(matches!(
            ConvexHull::from_positives(&line),
            Err(Error::DegenerateHull(_))
        ));
        let two = set(
            TaskSpace::R2,
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![1; 2],
        );
        assert!(matches!(
            ConvexHull::from_positives(&two),
            Err(Error::DegenerateHull(_))
        ));
        let flat = set(
            TaskSpace::R3,
            (0..10)
                .map(|i| vec![i as f64, (i * i) as f64, 0.0])
                .collect(),
            vec![1; 10],
        );
        assert!(matches!(
            ConvexHull::from_positives(&flat),
            Err(Error::DegenerateHull(_))
        ));
        let se2 = set(
            TaskSpace::SE2,
            vec![vec![0.0, 0.0, 1.0, 0.0]; 4],
            vec![1; 4],
        );
        assert!(matches!(
            ConvexHull::from_positives(&se2),
            Err(Error::UnsupportedSpace { .. })
        ));
    }

    #[test]
    fn hull_3d_matches_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows: Vec<Vec<f64>> = (0..8)
            .map(|c| vec![(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64])
            .collect();
        rows.extend((0..300).map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect()));
        rows.rotate_left(150);
        let train = set(TaskSpace::R3, rows.clone(), vec![1; rows.len()]);
        let hull = ConvexHull::from_positives(&train).unwrap();
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..1.5)).collect();
            let in_cube = x.iter().all(|v| (0.0..=1.0).contains(v));
            let margin = x
                .iter()
                .map(|v| v.abs().min((v - 1.0).abs()))
                .fold(f64::INFINITY, f64::min);
            if margin > 1e-6 {
                assert_eq!(hull.classify(&x) > 0, in_cube, "{x:?}");
            }
        }
        for r in &rows {
            assert_eq!(hull.classify(r), 1);
        }
    }

    #[test]
    fn hull_3d_sphere_contains_samples_and_excludes_far_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter().map(|a| a / n).collect()
            })
            .collect();
        let train = set(TaskSpace::R3, rows.clone(), vec![1; 500]);
        let hull = ConvexHull::from_positives(&train).unwrap();
        assert!(rows.iter().all(|r| hull.classify(r) == 1));
        assert_eq!(hull.classify(&[0.0, 0.0, 0.0]), 1);
        assert_eq!(hull.classify(&[1.01, 0.0, 0.0]), -1);
        // Euler: a triangulated sphere with V vertices has 2V − 4 faces.
        let mut verts = HashSet::new();
        for r in &rows {
            let on_boundary =
                hull.normals.iter().zip(&hull.offsets).any(|(n, d)| {
                    (n.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() - d).abs() < 1e-9
                });
            if on_boundary {
                verts.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
        }
        assert_eq!(hull.n_facets(), 2 * verts.len() - 4);
    }

    #[test]
    fn oracle_grid_labels() {
        let chain = SerialChain::planar_2dof();
        let test = oracle_grid_test_set(&chain, [[-2.2, 2.2], [-2.2, 2.2]], 21, 101).unwrap();
        assert_eq!(test.len(), 441);
        let pos = test.count_positive();
        assert!(pos > 0 && pos < 441);
        // (2.2, 0) lies outside the radius-2 workspace.
        let idx = (0..test.len())
            .find(|&i| test.input(i) == [2.2, 0.0])
            .unwrap();
        assert_eq!(test.label(idx), -1);
    }
}
