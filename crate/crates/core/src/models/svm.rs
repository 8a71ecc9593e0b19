//! RBF-kernel SVMs trained by sequential minimal optimization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ReachabilityMap;
use crate::error::{Error, Result};
use crate::geometry::TaskSpace;
use crate::sampling::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvmKind {
    Regular,
    OneClass,
}

/// `f(x) = Σ coeffs_i · exp(−γ‖x − x_i‖²) + bias + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kind: SvmKind,
    pub space: TaskSpace,
    pub gamma: f64,
    /// `α_i y_i` for each stored support vector.
    pub coeffs: Vec<f64>,
    pub support_inputs: Vec<Vec<f64>>,
    pub bias: f64,
    pub offset: f64,
}

impl SvmModel {
    pub fn from_parts(
        kind: SvmKind,
        space: TaskSpace,
        gamma: f64,
        coeffs: Vec<f64>,
        support_inputs: Vec<Vec<f64>>,
        bias: f64,
        offset: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if coeffs.is_empty() {
            return Err(Error::InvalidData(
                "SVM needs at least one support vector".into(),
            ));
        }
        if coeffs.len() != support_inputs.len() {
            return Err(Error::Dimension {
                what: "support vector count",
                expected: coeffs.len(),
                got: support_inputs.len(),
            });
        }
        for sv in &support_inputs {
            if sv.len() != space.input_dim() {
                return Err(Error::Dimension {
                    what: "support vector",
                    expected: space.input_dim(),
                    got: sv.len(),
                });
            }
        }
        let finite = coeffs
            .iter()
            .chain(support_inputs.iter().flatten())
            .all(|v| v.is_finite());
        if !finite || !bias.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidData("non-finite SVM parameter".into()));
        }
        Ok(SvmModel {
            kind,
            space,
            gamma,
            coeffs,
            support_inputs,
            bias,
            offset,
        })
    }

    pub fn n_support(&self) -> usize {
        self.coeffs.len()
    }

    /// Decision value without the offset.
    pub fn raw_value(&self, x: &[f64]) -> f64 {
        let mut sum = self.bias;
        for (c, sv) in self.coeffs.iter().zip(&self.support_inputs) {
            sum += c * (-self.gamma * sq_dist(x, sv)).exp();
        }
        sum
    }
}

impl ReachabilityMap for SvmModel {
    fn space(&self) -> TaskSpace {
        self.space
    }

    fn offset(&self) -> f64 {
        self.offset
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.raw_value(x) + self.offset
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (c, sv) in self.coeffs.iter().zip(&self.support_inputs) {
            let w = -2.0 * self.gamma * c * (-self.gamma * sq_dist(x, sv)).exp();
            for k in 0..x.len() {
                g[k] += w * (x[k] - sv[k]);
            }
        }
        g
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Box constraint of the regular SVM.
    pub c: f64,
    /// Outlier fraction bound of the one-class SVM.
    pub nu: f64,
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration cap in units of the training-set size.
    pub max_passes: usize,
    pub offset: f64,
    /// Memory budget for cached kernel rows.
    pub cache_bytes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 10.0,
            nu: 0.05,
            gamma: 30.0,
            tol: 1e-3,
            max_passes: 1000,
            offset: 0.1,
            cache_bytes: 1 << 30,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("C", self.c)?;
        positive("gamma", self.gamma)?;
        positive("tol", self.tol)?;
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "nu must lie in (0, 1], got {}",
                self.nu
            )));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidConfig("max_passes must be positive".into()));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidConfig("offset must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SvmTrainReport {
    pub iterations: usize,
    pub converged: bool,
    /// Maximal KKT violation `m(α) − M(α)` at exit.
    pub max_violation: f64,
    /// Dual objective `Σ α − ½ αᵀQα` (regular) or `−½ αᵀQα` (one-class).
    pub dual_objective: f64,
    /// Dual variables for every training sample, in training order.
    pub alphas: Vec<f64>,
}

/// Soft-margin RBF SVM on a two-class sample set.
pub fn train_svm(data: &SampleSet, cfg: &SvmConfig) -> Result<(SvmModel, SvmTrainReport)> {
    cfg.validate()?;
    if !data.has_both_labels() {
        return Err(Error::InvalidData(
            "regular SVM needs both labels; use the one-class SVM for positive-only data".into(),
        ));
    }
    let n = data.len();
    let y: Vec<f64> = data.labels().iter().map(|&l| f64::from(l)).collect();
    let problem = Smo {
        data,
        y: &y,
        gamma: cfg.gamma,
        upper: cfg.c,
        eps: cfg.tol,
        max_iter: cfg.max_passes.saturating_mul(n).max(10_000),
    };
    let sol = problem.solve(vec![-1.0; n], vec![0.0; n], cfg.cache_bytes);
    let dual = sol.alpha.iter().sum::<f64>() - quad_term(&sol.alpha, &sol.grad, &vec![-1.0; n]);
    let model = collect_model(data, SvmKind::Regular, cfg, &sol.alpha, &y, -sol.rho)?;
    Ok((
        model,
        SvmTrainReport {
            iterations: sol.iterations,
            converged: sol.converged,
            max_violation: sol.violation,
            dual_objective: dual,
            alphas: sol.alpha,
        },
    ))
}

/// ν one-class SVM on positive samples.
///
/// Dual variables are kept in the scaling `0 ≤ α_i ≤ 1`, `Σ α_i = νL`; the
/// normalized solution of `0 ≤ α_i ≤ 1/(νL)`, `Σ α_i = 1` is `α / (νL)`.
pub fn train_ocsvm(data: &SampleSet, cfg: &SvmConfig) -> Result<(SvmModel, SvmTrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidData("empty training set".into()));
    }
    if data.count_negative() > 0 {
        return Err(Error::InvalidData(
            "one-class SVM expects only reachable (+1) samples".into(),
        ));
    }
    let n = data.len();
    let y = vec![1.0; n];
    let total = cfg.nu * n as f64;
    let full = (total.floor() as usize).min(n);
    let mut alpha = vec![0.0; n];
    for a in alpha.iter_mut().take(full) {
        *a = 1.0;
    }
    if full < n {
        alpha[full] = total - full as f64;
    }
    let problem = Smo {
        data,
        y: &y,
        gamma: cfg.gamma,
        upper: 1.0,
        eps: cfg.tol,
        max_iter: cfg.max_passes.saturating_mul(n).max(10_000),
    };
    let sol = problem.solve(vec![0.0; n], alpha, cfg.cache_bytes);
    let dual = -quad_term(&sol.alpha, &sol.grad, &vec![0.0; n]);
    let model = collect_model(data, SvmKind::OneClass, cfg, &sol.alpha, &y, -sol.rho)?;
    Ok((
        model,
        SvmTrainReport {
            iterations: sol.iterations,
            converged: sol.converged,
            max_violation: sol.violation,
            dual_objective: dual,
            alphas: sol.alpha,
        },
    ))
}

/// `½ αᵀQα` recovered from the gradient `G = Qα + p`.
fn quad_term(alpha: &[f64], grad: &[f64], p: &[f64]) -> f64 {
    0.5 * alpha
        .iter()
        .zip(grad)
        .zip(p)
        .map(|((a, g), p)| a * (g - p))
        .sum::<f64>()
}

fn collect_model(
    data: &SampleSet,
    kind: SvmKind,
    cfg: &SvmConfig,
    alpha: &[f64],
    y: &[f64],
    bias: f64,
) -> Result<SvmModel> {
    let mut coeffs = Vec::new();
    let mut svs = Vec::new();
    for i in 0..alpha.len() {
        if alpha[i] > 0.0 {
            coeffs.push(alpha[i] * y[i]);
            svs.push(data.input(i).to_vec());
        }
    }
    SvmModel::from_parts(kind, data.space, cfg.gamma, coeffs, svs, bias, cfg.offset)
}

/// `min ½ αᵀQα + pᵀα` s.t. `yᵀα = const`, `0 ≤ α ≤ upper`, with
/// `Q_ij = y_i y_j exp(−γ‖x_i − x_j‖²)`.
struct Smo<'a> {
    data: &'a SampleSet,
    y: &'a [f64],
    gamma: f64,
    upper: f64,
    eps: f64,
    max_iter: usize,
}

struct SmoSolution {
    alpha: Vec<f64>,
    grad: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
    violation: f64,
}

impl Smo<'_> {
    fn solve(&self, p: Vec<f64>, mut alpha: Vec<f64>, cache_bytes: usize) -> SmoSolution {
        let n = self.y.len();
        let upper = self.upper;
        let mut cache = KernelCache::new(self.data, self.gamma, cache_bytes);

        let mut grad = p;
        for i in 0..n {
            if alpha[i] != 0.0 {
                let row = cache.row(i);
                for k in 0..n {
                    grad[k] += self.y[i] * self.y[k] * row[k] * alpha[i];
                }
            }
        }

        let mut iterations = 0;
        let mut converged = false;
        let mut violation = f64::INFINITY;
        while iterations < self.max_iter {
            let (i, j, gap) = self.select(&alpha, &grad);
            violation = gap;
            if gap < self.eps {
                converged = true;
                break;
            }
            iterations += 1;
            let (i, j) = (i.unwrap(), j.unwrap());
            let row_i = cache.row(i).to_vec();
            let row_j = cache.row(j);
            let (yi, yj) = (self.y[i], self.y[j]);
            let q_ij = yi * yj * row_i[j];
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let (mut ai, mut aj) = (old_i, old_j);

            if yi != yj {
                let quad = (2.0 + 2.0 * q_ij).max(1e-12);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                ai += delta;
                aj += delta;
                if diff > 0.0 {
                    if aj < 0.0 {
                        aj = 0.0;
                        ai = diff;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = -diff;
                }
                if diff > 0.0 {
                    if ai > upper {
                        ai = upper;
                        aj = upper - diff;
                    }
                } else if aj > upper {
                    aj = upper;
                    ai = upper + diff;
                }
            } else {
                let quad = (2.0 - 2.0 * q_ij).max(1e-12);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                ai -= delta;
                aj += delta;
                if sum > upper {
                    if ai > upper {
                        ai = upper;
                        aj = sum - upper;
                    }
                } else if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if sum > upper {
                    if aj > upper {
                        aj = upper;
                        ai = sum - upper;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }
            alpha[i] = ai;
            alpha[j] = aj;

            let di = alpha[i] - old_i;
            let dj = alpha[j] - old_j;
            for k in 0..n {
                let yk = self.y[k];
                grad[k] += yk * (yi * row_i[k] * di + yj * row_j[k] * dj);
            }
        }

        let rho = self.rho(&alpha, &grad);
        SmoSolution {
            alpha,
            grad,
            rho,
            iterations,
            converged,
            violation,
        }
    }

    fn in_up(&self, t: usize, a: f64) -> bool {
        if self.y[t] > 0.0 {
            a < self.upper
        } else {
            a > 0.0
        }
    }

    fn in_low(&self, t: usize, a: f64) -> bool {
        if self.y[t] > 0.0 {
            a > 0.0
        } else {
            a < self.upper
        }
    }

    /// Maximal violating pair. Returns the pair and `m(α) − M(α)`.
    fn select(&self, alpha: &[f64], grad: &[f64]) -> (Option<usize>, Option<usize>, f64) {
        let mut g_up = f64::NEG_INFINITY;
        let mut g_low = f64::INFINITY;
        let mut best_i = None;
        let mut best_j = None;
        for t in 0..alpha.len() {
            let v = -self.y[t] * grad[t];
            if self.in_up(t, alpha[t]) && v > g_up {
                g_up = v;
                best_i = Some(t);
            }
            if self.in_low(t, alpha[t]) && v < g_low {
                g_low = v;
                best_j = Some(t);
            }
        }
        if best_i.is_none() || best_j.is_none() {
            return (None, None, 0.0);
        }
        (best_i, best_j, g_up - g_low)
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut free = 0usize;
        for t in 0..alpha.len() {
            let yg = self.y[t] * grad[t];
            if alpha[t] >= self.upper {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            0.5 * (ub + lb)
        } else if ub.is_finite() {
            ub
        } else {
            lb
        }
    }
}

/// Kernel rows `K(x_i, ·)` kept under a memory budget with least-recently-used
/// eviction. When the budget covers all rows this is the full kernel matrix,
/// filled lazily.
struct KernelCache<'a> {
    data: &'a SampleSet,
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    last_used: Vec<u64>,
    clock: u64,
    resident: usize,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(data: &'a SampleSet, gamma: f64, budget_bytes: usize) -> Self {
        let n = data.len();
        let row_bytes = n.max(1) * std::mem::size_of::<f64>();
        let capacity = (budget_bytes / row_bytes).clamp(2, n.max(2));
        KernelCache {
            data,
            gamma,
            rows: vec![None; n],
            last_used: vec![0; n],
            clock: 0,
            resident: 0,
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        self.last_used[i] = self.clock;
        if self.rows[i].is_none() {
            if self.resident >= self.capacity {
                let victim = (0..self.rows.len())
                    .filter(|&k| k != i && self.rows[k].is_some())
                    .min_by_key(|&k| self.last_used[k])
                    .expect("cache holds at least one row");
                self.rows[victim] = None;
                self.resident -= 1;
            }
            self.rows[i] = Some(self.compute(i));
            self.resident += 1;
        }
        self.rows[i].as_deref().unwrap()
    }

    fn compute(&self, i: usize) -> Vec<f64> {
        let xi = self.data.input(i);
        let n = self.data.len();
        let kernel = |k: usize| (-self.gamma * sq_dist(xi, self.data.input(k))).exp();
        if n >= 4096 {
            (0..n).into_par_iter().map(kernel).collect()
        } else {
            (0..n).map(kernel).collect()
        }
    }
}
