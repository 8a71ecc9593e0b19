//! Dense strictly convex QP: `min ½ zᵀQz + cᵀz` s.t. `A z ≥ b`, `lower ≤ z ≤ upper`.
//!
//! Solved with the dual active-set method of Goldfarb and Idnani: start at the
//! unconstrained minimizer and repeatedly add the most violated constraint,
//! dropping active constraints whose multipliers would turn negative. Every
//! iterate is optimal for the constraints in its active set, so infeasibility
//! shows up as a violated constraint that no multiplier step can repair.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    /// `m × n`; rows are constraints `a_i · z ≥ b_i`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    /// Max of stationarity, primal, dual and complementarity residuals.
    pub kkt_residual: f64,
    /// Active constraint indices: `0..m` are rows of `A`, `m + j` the lower
    /// bound of `z_j`, `m + n + j` its upper bound.
    pub active_set: Vec<usize>,
    /// Multipliers over the same index space (zero when inactive).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

impl QpProblem {
    /// Problem with no general constraints and infinite bounds.
    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        QpProblem {
            q,
            c,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.q * z)) + self.c.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::QpInput("no variables".into()));
        }
        let shape = |what: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension {
                    what,
                    expected,
                    got,
                })
            }
        };
        shape("QP Hessian rows", n, self.q.nrows())?;
        shape("QP Hessian columns", n, self.q.ncols())?;
        shape("QP constraint columns", n, self.a.ncols())?;
        shape("QP constraint rows", self.m(), self.a.nrows())?;
        shape("QP lower bounds", n, self.lower.len())?;
        shape("QP upper bounds", n, self.upper.len())?;
        let finite = self
            .q
            .iter()
            .chain(self.c.iter())
            .chain(self.a.iter())
            .chain(self.b.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::QpInput("non-finite entry in Q, c, A or b".into()));
        }
        let scale = self.q.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::QpInput(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::QpInput(format!(
                    "bounds of variable {i} are inverted"
                )));
            }
        }
        let min_eig = self.q.clone().symmetric_eigenvalues().min();
        if min_eig < 1e-9 {
            return Err(Error::QpInput(format!(
                "Q is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    /// Plain-text dump that [`QpProblem::from_dump`] reads back exactly.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "qp n {} m {}", self.n(), self.m());
        let mut section =
            |name: &str, rows: usize, cols: usize, get: &dyn Fn(usize, usize) -> f64| {
                let _ = writeln!(s, "{name}");
                for r in 0..rows {
                    let line: Vec<String> = (0..cols).map(|k| format!("{:?}", get(r, k))).collect();
                    let _ = writeln!(s, "{}", line.join(" "));
                }
            };
        let n = self.n();
        section("Q", n, n, &|r, k| self.q[(r, k)]);
        section("c", 1, n, &|_, k| self.c[k]);
        section("A", self.m(), n, &|r, k| self.a[(r, k)]);
        section("b", 1, self.m(), &|_, k| self.b[k]);
        section("lower", 1, n, &|_, k| self.lower[k]);
        section("upper", 1, n, &|_, k| self.upper[k]);
        s
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let bad = || Error::Parse("malformed QP dump".into());
        if head.len() != 5 || head[0] != "qp" || head[1] != "n" || head[3] != "m" {
            return Err(bad());
        }
        let n: usize = head[2].parse().map_err(|_| bad())?;
        let m: usize = head[4].parse().map_err(|_| bad())?;
        let mut read = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            if lines.next() != Some(name) {
                return Err(Error::Parse(format!("QP dump: expected section `{name}`")));
            }
            let mut out = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines.next().ok_or_else(bad)?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad number `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != cols {
                    return Err(bad());
                }
                out.extend(vals);
            }
            Ok(out)
        };
        let q = read("Q", n, n)?;
        let c = read("c", 1, n)?;
        let a = read("A", m, n)?;
        let b = read("b", 1, m)?;
        let lower = read("lower", 1, n)?;
        let upper = read("upper", 1, n)?;
        Ok(QpProblem {
            q: DMatrix::from_row_slice(n, n, &q),
            c: DVector::from_vec(c),
            a: DMatrix::from_row_slice(m, n, &a),
            b: DVector::from_vec(b),
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }
}

/// All constraints as rows `g · z ≥ h`, bounds included.
struct Stacked {
    rows: Vec<DVector<f64>>,
    rhs: Vec<f64>,
    /// Original index of each stacked row.
    index: Vec<usize>,
}

fn stack(p: &QpProblem) -> Stacked {
    let (n, m) = (p.n(), p.m());
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut index = Vec::new();
    for i in 0..m {
        rows.push(p.a.row(i).transpose());
        rhs.push(p.b[i]);
        index.push(i);
    }
    for j in 0..n {
        if p.lower[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            rows.push(e);
            rhs.push(p.lower[j]);
            index.push(m + j);
        }
    }
    for j in 0..n {
        if p.upper[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = -1.0;
            rows.push(e);
            rhs.push(-p.upper[j]);
            index.push(m + n + j);
        }
    }
    Stacked { rows, rhs, index }
}

/// Solves the QP. `tol` bounds the reported KKT residual of optimal returns;
/// `max_iter` caps active-set changes.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::QpInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = p.n();
    let chol =
        p.q.clone()
            .cholesky()
            .ok_or_else(|| Error::QpInput("Cholesky factorization of Q failed".into()))?;
    let st = stack(p);
    // Q⁻¹ a_i for every stacked row, computed once.
    let qinv_rows: Vec<DVector<f64>> = st.rows.iter().map(|g| chol.solve(g)).collect();
    let norms: Vec<f64> = st.rows.iter().map(|g| g.norm()).collect();

    let mut z = -chol.solve(&p.c);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    // Violation threshold used to pick constraints; tighter than the
    // reporting tolerance so the final polish lands inside it.
    let pick_tol = 0.1 * tol;

    let status = 'outer: loop {
        // Most violated constraint, measured in normalized distance.
        let mut worst = None;
        let mut worst_v = 0.0;
        for k in 0..st.rows.len() {
            if active.contains(&k) {
                continue;
            }
            let s = st.rows[k].dot(&z) - st.rhs[k];
            let v = s / norms[k].max(1e-300);
            if s < -pick_tol && v < worst_v {
                worst_v = v;
                worst = Some(k);
            }
        }
        let Some(pk) = worst else {
            break QpStatus::Optimal;
        };
        let mut u_p = 0.0;

        loop {
            if iterations >= max_iter {
                break 'outer QpStatus::IterationLimit;
            }
            iterations += 1;
            let (d, r) = directions(&st, &qinv_rows, &active, pk);
            let slack = st.rows[pk].dot(&z) - st.rhs[pk];
            let curvature = st.rows[pk].dot(&d);
            // `d` vanishes when row `pk` is a combination of the active rows;
            // with `n` active rows that is always the case.
            let degenerate = active.len() >= n || d.norm() <= 1e-10 * qinv_rows[pk].norm();
            let full = if !degenerate && curvature > 1e-14 * st.rows[pk].dot(&qinv_rows[pk]) {
                -slack / curvature
            } else {
                f64::INFINITY
            };
            let mut partial = f64::INFINITY;
            let mut drop = None;
            for (idx, (&rj, &uj)) in r.iter().zip(&u).enumerate() {
                if rj > 1e-14 {
                    let t = uj / rj;
                    if t < partial {
                        partial = t;
                        drop = Some(idx);
                    }
                }
            }
            if full.is_infinite() && partial.is_infinite() {
                break 'outer QpStatus::Infeasible;
            }
            let t = full.min(partial);
            if !degenerate {
                z += &d * t;
            }
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= t * rj;
            }
            u_p += t;
            if full <= partial {
                active.push(pk);
                u.push(u_p);
                break;
            }
            let idx = drop.expect("partial step has a blocking index");
            active.remove(idx);
            u.remove(idx);
        }
    };

    let mut z_out = z;
    let mut u_out = u;
    if status == QpStatus::Optimal {
        if let Some((zp, up)) = polish(p, &chol, &st, &qinv_rows, &active) {
            z_out = zp;
            u_out = up;
        }
    } else {
        for j in 0..n {
            z_out[j] = z_out[j].clamp(p.lower[j], p.upper[j]);
        }
    }

    let total = p.m() + 2 * n;
    let mut multipliers = vec![0.0; total];
    let mut active_set: Vec<usize> = Vec::with_capacity(active.len());
    for (k, &a) in active.iter().enumerate() {
        multipliers[st.index[a]] = u_out[k];
        active_set.push(st.index[a]);
    }
    active_set.sort_unstable();
    let kkt_residual = kkt_residual(p, &z_out, &multipliers);
    Ok(QpSolution {
        objective: p.objective(&z_out),
        z: z_out,
        status,
        kkt_residual,
        active_set,
        multipliers,
        iterations,
    })
}

/// Primal step direction `d` and multiplier change `r` for adding row `pk`.
fn directions(
    st: &Stacked,
    qinv_rows: &[DVector<f64>],
    active: &[usize],
    pk: usize,
) -> (DVector<f64>, Vec<f64>) {
    let k = active.len();
    if k == 0 {
        return (qinv_rows[pk].clone(), Vec::new());
    }
    let mut m = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (i, &ai) in active.iter().enumerate() {
        for (j, &aj) in active.iter().enumerate() {
            m[(i, j)] = st.rows[ai].dot(&qinv_rows[aj]);
        }
        rhs[i] = st.rows[ai].dot(&qinv_rows[pk]);
    }
    let r = match m.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
    };
    let mut d = qinv_rows[pk].clone();
    for (i, &ai) in active.iter().enumerate() {
        d -= &qinv_rows[ai] * r[i];
    }
    (d, r.iter().copied().collect())
}

/// Re-solves the equality-constrained problem on the final active set.
fn polish(
    p: &QpProblem,
    chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    st: &Stacked,
    qinv_rows: &[DVector<f64>],
    active: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let k = active.len();
    let qinv_c = chol.solve(&p.c);
    if k == 0 {
        return Some((-qinv_c, Vec::new()));
    }
    let mut m = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (i, &ai) in active.iter().enumerate() {
        for (j, &aj) in active.iter().enumerate() {
            m[(i, j)] = st.rows[ai].dot(&qinv_rows[aj]);
        }
        rhs[i] = st.rhs[ai] + st.rows[ai].dot(&qinv_c);
    }
    let mchol = m.cholesky()?;
    let mut u = mchol.solve(&rhs);
    let mut z = -qinv_c;
    for (i, &ai) in active.iter().enumerate() {
        z += &qinv_rows[ai] * u[i];
    }
    // Iterative refinement on the equality KKT system of the active set.
    for _ in 0..3 {
        let mut r1 = &p.q * &z + &p.c;
        for (i, &ai) in active.iter().enumerate() {
            r1 -= &st.rows[ai] * u[i];
        }
        let qinv_r1 = chol.solve(&r1);
        let mut rhs = DVector::zeros(k);
        for (i, &ai) in active.iter().enumerate() {
            let r2 = st.rows[ai].dot(&z) - st.rhs[ai];
            rhs[i] = st.rows[ai].dot(&qinv_r1) - r2;
        }
        let du = mchol.solve(&rhs);
        let mut dz = -qinv_r1;
        for (i, &ai) in active.iter().enumerate() {
            dz += &qinv_rows[ai] * du[i];
        }
        z += dz;
        u += du;
    }
    Some((z, u.iter().copied().collect()))
}

/// Largest KKT violation of `(z, multipliers)` in the index space of
/// [`QpSolution::multipliers`].
pub fn kkt_residual(p: &QpProblem, z: &DVector<f64>, multipliers: &[f64]) -> f64 {
    let (n, m) = (p.n(), p.m());
    let mut grad = &p.q * z + &p.c;
    let mut worst: f64 = 0.0;
    let ax = &p.a * z;
    for i in 0..m {
        let ui = multipliers[i];
        grad -= p.a.row(i).transpose() * ui;
        let s = ax[i] - p.b[i];
        worst = worst.max(-s).max(-ui).max((ui * s).abs());
    }
    for j in 0..n {
        let (ul, uu) = (multipliers[m + j], multipliers[m + n + j]);
        grad[j] -= ul - uu;
        worst = worst.max(-ul).max(-uu);
        if p.lower[j].is_finite() {
            let s = z[j] - p.lower[j];
            worst = worst.max(-s).max((ul * s).abs());
        }
        if p.upper[j].is_finite() {
            let s = p.upper[j] - z[j];
            worst = worst.max(-s).max((uu * s).abs());
        }
    }
    worst.max(grad.amax())
}
