//! Convex QP by a primal active-set method.
//!
//! ```text
//! min ½ dᵀH d + gᵀd  s.t.  A_eq d = b_eq,  A_in d ≤ b_in,  l ≤ d ≤ u
//! ```
//!
//! Bounds are handled as inequality rows. Each iteration solves the
//! equality-constrained subproblem on the working set with [`SparseLu`].
//! If no feasible working set is found, the problem is relaxed with ℓ1
//! slacks (elastic mode).

use super::linalg::SparseLu;
use super::sparse::Triplets;
use crate::error::{Error, Result};

pub struct QpProblem<'a> {
    /// Symmetric `n × n` matrix in full storage.
    pub h: &'a Triplets,
    pub g: &'a [f64],
    pub a_eq: &'a Triplets,
    pub b_eq: &'a [f64],
    pub a_in: &'a Triplets,
    pub b_in: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub d: Vec<f64>,
    pub mult_eq: Vec<f64>,
    pub mult_ineq: Vec<f64>,
    /// Signed bound multipliers, positive on an active upper bound.
    pub mult_bounds: Vec<f64>,
    pub iterations: usize,
    /// `true` when the ℓ1-relaxed problem was solved.
    pub elastic: bool,
    /// Total slack of the relaxed problem; zero otherwise.
    pub slack: f64,
}

const REG_START: f64 = 1e-8;
const REG_ESCALATIONS: usize = 3;
const REFINE_STEPS: usize = 3;

/// Solves the QP; the elastic fallback uses a penalty of `1e3 · max(1, ‖g‖∞)`.
pub fn qp_solve(qp: &QpProblem) -> Result<QpSolution> {
    let weight = 1e3 * qp.g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    qp_solve_elastic(qp, weight)
}

/// Solves the QP with elastic fallback penalty `weight`.
pub(crate) fn qp_solve_elastic(qp: &QpProblem, weight: f64) -> Result<QpSolution> {
    let n = qp.g.len();
    check_dims(qp)?;
    if (0..n).any(|j| qp.lower[j] > qp.upper[j]) {
        return Err(Error::NotConverged("infeasible: contradictory bounds".into()));
    }
    match active_set(qp, None) {
        Ok(sol) => Ok(sol),
        Err(_) => elastic(qp, weight),
    }
}

fn check_dims(qp: &QpProblem) -> Result<()> {
    let n = qp.g.len();
    let ok = qp.h.nrows == n
        && qp.h.ncols == n
        && qp.a_eq.ncols == n
        && qp.a_eq.nrows == qp.b_eq.len()
        && qp.a_in.ncols == n
        && qp.a_in.nrows == qp.b_in.len()
        && qp.lower.len() == n
        && qp.upper.len() == n;
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension("inconsistent QP data".into()))
    }
}

enum Failure {
    Singular,
    NoFeasibleSet,
    Cycling,
}

/// Inequality `k`: general row `k < q`, lower bound `q + j`, upper bound `q + n + j`.
struct Ineqs<'a> {
    n: usize,
    q: usize,
    rows: Vec<Vec<(usize, f64)>>,
    b: &'a [f64],
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Ineqs<'_> {
    fn count(&self) -> usize {
        self.q + 2 * self.n
    }

    fn exists(&self, k: usize) -> bool {
        if k < self.q {
            true
        } else if k < self.q + self.n {
            self.lower[k - self.q].is_finite()
        } else {
            self.upper[k - self.q - self.n].is_finite()
        }
    }

    /// Constraint value; feasible when `≤ 0`.
    fn value(&self, k: usize, d: &[f64]) -> f64 {
        if k < self.q {
            self.rows[k].iter().map(|&(c, v)| v * d[c]).sum::<f64>() - self.b[k]
        } else if k < self.q + self.n {
            let j = k - self.q;
            self.lower[j] - d[j]
        } else {
            let j = k - self.q - self.n;
            d[j] - self.upper[j]
        }
    }

    fn rate(&self, k: usize, p: &[f64]) -> f64 {
        if k < self.q {
            self.rows[k].iter().map(|&(c, v)| v * p[c]).sum()
        } else if k < self.q + self.n {
            -p[k - self.q]
        } else {
            p[k - self.q - self.n]
        }
    }

    fn row_scale(&self, k: usize) -> f64 {
        if k < self.q {
            self.rows[k].iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()))
        } else {
            1.0
        }
    }

    fn rhs(&self, k: usize) -> f64 {
        if k < self.q {
            self.b[k]
        } else if k < self.q + self.n {
            -self.lower[k - self.q]
        } else {
            self.upper[k - self.q - self.n]
        }
    }

    fn tol(&self, k: usize) -> f64 {
        1e-10 * (1.0 + self.rhs(k).abs())
    }

    fn push_row(&self, k: usize, row: usize, kkt: &mut Triplets) {
        let mut put = |c: usize, v: f64| {
            kkt.push(row, c, v);
            kkt.push(c, row, v);
        };
        if k < self.q {
            for &(c, v) in &self.rows[k] {
                put(c, v);
            }
        } else if k < self.q + self.n {
            put(k - self.q, -1.0);
        } else {
            put(k - self.q - self.n, 1.0);
        }
    }
}

struct Eqp {
    d: Vec<f64>,
    mult_eq: Vec<f64>,
    mult_w: Vec<f64>,
}

fn solve_eqp(qp: &QpProblem, ineqs: &Ineqs, eq_rows: &[Vec<(usize, f64)>], work: &[usize]) -> std::result::Result<Eqp, Failure> {
    let n = qp.g.len();
    let p = qp.b_eq.len();
    let dim = n + p + work.len();
    let mut base = Triplets::with_capacity(dim, dim, qp.h.entries.len() + 2 * qp.a_eq.entries.len() + 4 * work.len());
    base.entries.extend_from_slice(&qp.h.entries);
    for (i, row) in eq_rows.iter().enumerate() {
        for &(c, v) in row {
            base.push(n + i, c, v);
            base.push(c, n + i, v);
        }
    }
    for (w, &k) in work.iter().enumerate() {
        ineqs.push_row(k, n + p + w, &mut base);
    }
    let mut rhs = Vec::with_capacity(dim);
    rhs.extend(qp.g.iter().map(|v| -v));
    rhs.extend_from_slice(qp.b_eq);
    rhs.extend(work.iter().map(|&k| ineqs.rhs(k)));

    let mut delta = 0.0;
    for attempt in 0..=REG_ESCALATIONS + 1 {
        let mut kkt = base.clone();
        if delta > 0.0 {
            for i in 0..n {
                kkt.push(i, i, delta);
            }
            for i in n..dim {
                kkt.push(i, i, -delta);
            }
        }
        let solved = SparseLu::factor(&kkt).and_then(|lu| {
            let mut sol = lu.solve(&rhs)?;
            // refinement against the unregularized matrix removes the O(δ)
            // bias when the working rows are dependent but consistent
            for _ in 0..REFINE_STEPS * usize::from(delta > 0.0) {
                let r: Vec<f64> = base.mul_vec(&sol).iter().zip(&rhs).map(|(k, b)| b - k).collect();
                lu.solve(&r)?.iter().zip(sol.iter_mut()).for_each(|(c, s)| *s += c);
            }
            Ok(sol)
        });
        if let Ok(sol) = solved {
            return Ok(Eqp {
                d: sol[..n].to_vec(),
                mult_eq: sol[n..n + p].to_vec(),
                mult_w: sol[n + p..].to_vec(),
            });
        }
        if attempt == 0 {
            delta = REG_START;
        } else {
            delta *= 100.0;
        }
    }
    Err(Failure::Singular)
}

/// Feasible starting point with its working set.
struct Start {
    d: Vec<f64>,
    work: Vec<usize>,
}

fn active_set(qp: &QpProblem, start: Option<Start>) -> std::result::Result<QpSolution, Failure> {
    let n = qp.g.len();
    let ineqs = Ineqs {
        n,
        q: qp.b_in.len(),
        rows: qp.a_in.rows(),
        b: qp.b_in,
        lower: qp.lower,
        upper: qp.upper,
    };
    let eq_rows = qp.a_eq.rows();
    let total = ineqs.count();

    let mut d: Vec<f64> = (0..n).map(|j| 0.0_f64.clamp(qp.lower[j], qp.upper[j])).collect();
    let mut in_w = vec![false; total];
    let mut work: Vec<usize> = Vec::new();
    let mut feasible = false;
    if let Some(st) = start {
        d = st.d;
        for &k in &st.work {
            in_w[k] = true;
        }
        work = st.work;
        feasible = true;
    }
    for k in (0..total).filter(|_| !feasible) {
        if !ineqs.exists(k) {
            continue;
        }
        // rows violated at the start and bounds the clamp moved onto; a
        // fixed variable only needs one of its two bound rows
        let take = if k < ineqs.q {
            ineqs.value(k, &d) > ineqs.tol(k)
        } else if k < ineqs.q + n {
            qp.lower[k - ineqs.q] > 0.0
        } else {
            qp.upper[k - ineqs.q - n] < 0.0 && !in_w[k - n]
        };
        if take {
            in_w[k] = true;
            work.push(k);
        }
    }
    let gscale = qp.g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let max_iter = 200 + 4 * (n + ineqs.q);
    let mut dropped = None;
    // rows added by the last phase-one batch, most violated first
    let mut batch: Vec<usize> = Vec::new();

    for iter in 0..max_iter {
        let eqp = solve_eqp(qp, &ineqs, &eq_rows, &work)?;
        // regularization can return a compromise for inconsistent rows
        let eq_off = eq_rows.iter().zip(qp.b_eq).any(|(row, &b)| {
            (row.iter().map(|&(c, v)| v * eqp.d[c]).sum::<f64>() - b).abs() > 1e-6 * (1.0 + b.abs())
        });
        let w_off = work.iter().any(|&k| ineqs.value(k, &eqp.d).abs() > 1e-6 * (1.0 + ineqs.rhs(k).abs()));
        if eq_off || w_off {
            if batch.len() > 1 {
                // the batch over-determined some rows; retry with its head
                for &k in &batch[1..] {
                    in_w[k] = false;
                }
                work.truncate(work.len() - batch.len() + 1);
                batch.truncate(1);
                continue;
            }
            return Err(Failure::NoFeasibleSet);
        }
        batch.clear();
        let step_to_optimum = if !feasible {
            d = eqp.d.clone();
            let mut violated: Vec<usize> = (0..total)
                .filter(|&k| ineqs.exists(k) && !in_w[k] && ineqs.value(k, &d) > ineqs.tol(k))
                .collect();
            violated.sort_by(|&a, &b| ineqs.value(b, &d).total_cmp(&ineqs.value(a, &d)));
            if violated.is_empty() {
                feasible = true;
                true
            } else {
                if work.len() + violated.len() > n + 1 + ineqs.q {
                    return Err(Failure::NoFeasibleSet);
                }
                for &k in &violated {
                    in_w[k] = true;
                    work.push(k);
                }
                batch = violated;
                false
            }
        } else {
            let p: Vec<f64> = eqp.d.iter().zip(&d).map(|(a, b)| a - b).collect();
            let mut alpha = 1.0;
            let mut blocking = None;
            // a rate at rounding level of the iterate belongs to a row that
            // depends on the working set; letting it block would make the KKT
            // matrix singular
            let rate_floor = 1e-12 * eqp.d.iter().chain(&d).fold(0.0_f64, |m, v| m.max(v.abs()));
            for k in 0..total {
                if in_w[k] || !ineqs.exists(k) {
                    continue;
                }
                let rate = ineqs.rate(k, &p);
                if rate > rate_floor * ineqs.row_scale(k) {
                    let ak = (-ineqs.value(k, &d)).max(0.0) / rate;
                    if ak < alpha {
                        alpha = ak;
                        blocking = Some(k);
                    }
                }
            }
            if let Some(k) = blocking {
                // re-adding the row just dropped without moving means the
                // reduced Hessian is not positive definite there
                if alpha <= 0.0 && dropped == Some(k) {
                    return Err(Failure::Cycling);
                }
                d.iter_mut().zip(&p).for_each(|(di, pi)| *di += alpha * pi);
                in_w[k] = true;
                work.push(k);
                false
            } else {
                d = eqp.d.clone();
                true
            }
        };
        if !step_to_optimum {
            continue;
        }
        let mtol = 1e-10 * gscale.max(eqp.mult_w.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        let worst = eqp
            .mult_w
            .iter()
            .enumerate()
            .filter(|(_, &l)| l < -mtol)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        match worst {
            None => return Ok(assemble(qp, &ineqs, d, eqp, &work, iter + 1)),
            Some(i) => {
                dropped = Some(work[i]);
                in_w[work[i]] = false;
                work.remove(i);
            }
        }
    }
    Err(Failure::Cycling)
}

fn assemble(qp: &QpProblem, ineqs: &Ineqs, d: Vec<f64>, eqp: Eqp, work: &[usize], iterations: usize) -> QpSolution {
    let n = qp.g.len();
    let mut mult_ineq = vec![0.0; ineqs.q];
    let mut mult_bounds = vec![0.0; n];
    for (&k, &l) in work.iter().zip(&eqp.mult_w) {
        let l = l.max(0.0);
        if k < ineqs.q {
            mult_ineq[k] = l;
        } else if k < ineqs.q + n {
            mult_bounds[k - ineqs.q] -= l;
        } else {
            mult_bounds[k - ineqs.q - n] += l;
        }
    }
    QpSolution { d, mult_eq: eqp.mult_eq, mult_ineq, mult_bounds, iterations, elastic: false, slack: 0.0 }
}

/// ℓ1 relaxation: `A_eq d − t⁺ + t⁻ = b_eq`, `A_in d − r ≤ b_in`, slacks
/// nonnegative and penalized by `weight` plus a small quadratic term.
fn elastic(qp: &QpProblem, weight: f64) -> Result<QpSolution> {
    let n = qp.g.len();
    let p = qp.b_eq.len();
    let q = qp.b_in.len();
    let ne = n + 2 * p + q;
    let reg = 1e-8 * weight.max(1.0);

    let mut h = Triplets::with_capacity(ne, ne, qp.h.entries.len() + ne - n);
    h.entries.extend_from_slice(&qp.h.entries);
    for i in n..ne {
        h.push(i, i, reg);
    }
    let mut g = qp.g.to_vec();
    g.resize(ne, weight);
    let mut a_eq = Triplets::with_capacity(p, ne, qp.a_eq.entries.len() + 2 * p);
    a_eq.entries.extend_from_slice(&qp.a_eq.entries);
    for i in 0..p {
        a_eq.push(i, n + i, -1.0);
        a_eq.push(i, n + p + i, 1.0);
    }
    let mut a_in = Triplets::with_capacity(q, ne, qp.a_in.entries.len() + q);
    a_in.entries.extend_from_slice(&qp.a_in.entries);
    for i in 0..q {
        a_in.push(i, n + 2 * p + i, -1.0);
    }
    a_eq.ncols = ne;
    a_in.ncols = ne;
    let mut lower = qp.lower.to_vec();
    lower.resize(ne, 0.0);
    let mut upper = qp.upper.to_vec();
    upper.resize(ne, f64::INFINITY);

    let relaxed = QpProblem { h: &h, g: &g, a_eq: &a_eq, b_eq: qp.b_eq, a_in: &a_in, b_in: qp.b_in, lower: &lower, upper: &upper };

    // d at its clamped origin, slacks absorbing the residuals
    let mut d0: Vec<f64> = (0..n).map(|j| 0.0_f64.clamp(qp.lower[j], qp.upper[j])).collect();
    let mut work = Vec::new();
    for j in 0..n {
        if qp.lower[j] > 0.0 {
            work.push(q + j);
        } else if qp.upper[j] < 0.0 {
            work.push(q + ne + j);
        }
    }
    d0.resize(ne, 0.0);
    let eq_rows = qp.a_eq.rows();
    for (i, row) in eq_rows.iter().enumerate() {
        let r = row.iter().map(|&(c, v)| v * d0[c]).sum::<f64>() - qp.b_eq[i];
        if r > 0.0 {
            d0[n + i] = r;
            work.push(q + n + p + i);
        } else if r < 0.0 {
            d0[n + p + i] = -r;
            work.push(q + n + i);
        } else {
            work.push(q + n + i);
            work.push(q + n + p + i);
        }
    }
    for (i, row) in qp.a_in.rows().iter().enumerate() {
        let r = row.iter().map(|&(c, v)| v * d0[c]).sum::<f64>() - qp.b_in[i];
        if r > 0.0 {
            d0[n + 2 * p + i] = r;
            work.push(i);
        } else {
            work.push(q + n + 2 * p + i);
        }
    }
    let sol = active_set(&relaxed, Some(Start { d: d0, work })).map_err(|f| match f {
        Failure::Singular => Error::Singular,
        Failure::NoFeasibleSet | Failure::Cycling => Error::NotConverged("infeasible: elastic QP failed".into()),
    })?;
    let slack = sol.d[n..].iter().map(|v| v.max(0.0)).sum();
    let mut d = sol.d;
    d.truncate(n);
    let mut mult_bounds = sol.mult_bounds;
    mult_bounds.truncate(n);
    Ok(QpSolution {
        d,
        mult_eq: sol.mult_eq,
        mult_ineq: sol.mult_ineq,
        mult_bounds,
        iterations: sol.iterations,
        elastic: true,
        slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn dense(rows: usize, cols: usize, v: &[f64]) -> Triplets {
        Triplets::from_dense(&DMatrix::from_row_slice(rows, cols, v))
    }

    fn unbounded(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    #[test]
    fn unconstrained_newton_step() {
        let h = dense(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = [1.0, -2.0];
        let (l, u) = unbounded(2);
        let empty = Triplets::new(0, 2);
        let sol = qp_solve(&QpProblem { h: &h, g: &g, a_eq: &empty, b_eq: &[], a_in: &empty, b_in: &[], lower: &l, upper: &u }).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]).lu().solve(&DVector::from_vec(vec![-1.0, 2.0])).unwrap();
        assert!((sol.d[0] - expect[0]).abs() < 1e-14 && (sol.d[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn single_equality() {
        let h = dense(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let a = dense(1, 3, &[1.0, 0.0, 0.0]);
        let (l, u) = unbounded(3);
        let empty = Triplets::new(0, 3);
        let sol = qp_solve(&QpProblem { h: &h, g: &[0.0; 3], a_eq: &a, b_eq: &[1.0], a_in: &empty, b_in: &[], lower: &l, upper: &u }).unwrap();
        assert_eq!(sol.d, vec![1.0, 0.0, 0.0]);
        assert_eq!(sol.mult_eq, vec![-1.0]);
    }

    /// Brute force over all subsets of active bounds for a 3-variable box QP.
    fn enumerate_box(hm: &DMatrix<f64>, g: &[f64], l: &[f64], u: &[f64]) -> (Vec<f64>, f64) {
        let mut best = (vec![], f64::INFINITY);
        for code in 0..27 {
            let mut state = [0usize; 3];
            let mut c = code;
            for s in &mut state {
                *s = c % 3;
                c /= 3;
            }
            let free: Vec<usize> = (0..3).filter(|&i| state[i] == 0).collect();
            let mut d = [0.0; 3];
            for i in 0..3 {
                d[i] = match state[i] {
                    1 => l[i],
                    2 => u[i],
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let k = free.len();
                let mut a = DMatrix::zeros(k, k);
                let mut b = DVector::zeros(k);
                for (r, &i) in free.iter().enumerate() {
                    b[r] = -g[i];
                    for j in 0..3 {
                        if state[j] != 0 {
                            b[r] -= hm[(i, j)] * d[j];
                        }
                    }
                    for (cc, &j) in free.iter().enumerate() {
                        a[(r, cc)] = hm[(i, j)];
                    }
                }
                let x = a.lu().solve(&b).unwrap();
                for (r, &i) in free.iter().enumerate() {
                    d[i] = x[r];
                }
            }
            if (0..3).any(|i| d[i] < l[i] - 1e-12 || d[i] > u[i] + 1e-12) {
                continue;
            }
            let dv = DVector::from_row_slice(&d);
            let val = 0.5 * dv.dot(&(hm * &dv)) + DVector::from_row_slice(g).dot(&dv);
            if val < best.1 {
                best = (d.to_vec(), val);
            }
        }
        best
    }

    #[test]
    fn box_constrained_matches_enumeration() {
        let hm = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.2, 0.5, 2.0, -0.3, 0.2, -0.3, 1.5]);
        let h = Triplets::from_dense(&hm);
        let g = [-4.0, 3.0, 0.5];
        let l = [-1.0, -0.5, -2.0];
        let u = [1.0, 0.5, 2.0];
        let empty = Triplets::new(0, 3);
        let sol = qp_solve(&QpProblem { h: &h, g: &g, a_eq: &empty, b_eq: &[], a_in: &empty, b_in: &[], lower: &l, upper: &u }).unwrap();
        let (best, _) = enumerate_box(&hm, &g, &l, &u);
        for i in 0..3 {
            assert!((sol.d[i] - best[i]).abs() < 1e-10, "{:?} vs {:?}", sol.d, best);
        }
        // x0 at its upper bound, x1 at its lower bound
        assert!(sol.mult_bounds[0] > 0.0);
        assert!(sol.mult_bounds[1] < 0.0);
        assert_eq!(sol.mult_bounds[2], 0.0);
        // stationarity H d + g + z = 0
        let r = hm * DVector::from_row_slice(&sol.d) + DVector::from_row_slice(&g) + DVector::from_row_slice(&sol.mult_bounds);
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn general_inequality_and_infeasible_start() {
        // min ½|d|² - d0 - d1  s.t. d0 + d1 ≤ 1, d0 ≥ 0.8
        let h = dense(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = dense(1, 2, &[1.0, 1.0]);
        let empty = Triplets::new(0, 2);
        let l = [0.8, f64::NEG_INFINITY];
        let u = [f64::INFINITY; 2];
        let sol = qp_solve(&QpProblem { h: &h, g: &[-1.0, -1.0], a_eq: &empty, b_eq: &[], a_in: &a, b_in: &[1.0], lower: &l, upper: &u }).unwrap();
        assert!((sol.d[0] - 0.8).abs() < 1e-12 && (sol.d[1] - 0.2).abs() < 1e-12, "{:?}", sol.d);
        assert!((sol.mult_ineq[0] - 0.8).abs() < 1e-12);
        assert!((sol.mult_bounds[0] + 0.6).abs() < 1e-12, "{:?}", sol.mult_bounds);
        assert!(!sol.elastic);
    }

    #[test]
    fn contradictory_bounds_fail_fast() {
        let h = dense(1, 1, &[1.0]);
        let empty = Triplets::new(0, 1);
        let err = qp_solve(&QpProblem { h: &h, g: &[0.0], a_eq: &empty, b_eq: &[], a_in: &empty, b_in: &[], lower: &[1.0], upper: &[0.0] });
        assert!(err.is_err());
    }

    #[test]
    fn inconsistent_linearization_goes_elastic() {
        // d0 = 1 and d0 ≤ 0 cannot both hold
        let h = dense(1, 1, &[1.0]);
        let a = dense(1, 1, &[1.0]);
        let sol = qp_solve(&QpProblem { h: &h, g: &[0.0], a_eq: &a, b_eq: &[1.0], a_in: &a, b_in: &[0.0], lower: &[f64::NEG_INFINITY], upper: &[f64::INFINITY] }).unwrap();
        assert!(sol.elastic);
        assert!((sol.slack - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dependent_equalities_are_regularized() {
        let h = dense(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = dense(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let empty = Triplets::new(0, 2);
        let (l, u) = unbounded(2);
        let sol = qp_solve(&QpProblem { h: &h, g: &[0.0, 0.0], a_eq: &a, b_eq: &[1.0, 2.0], a_in: &empty, b_in: &[], lower: &l, upper: &u }).unwrap();
        assert!((sol.d[0] - 0.5).abs() < 1e-6 && (sol.d[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn negative_curvature_at_a_bound_stops_immediately() {
        // the bound on d1 is dropped with a negative multiplier and the
        // unconstrained step runs straight back into it
        let h = dense(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let empty = Triplets::new(0, 2);
        let qp = QpProblem {
            h: &h,
            g: &[0.0, -1.0],
            a_eq: &empty,
            b_eq: &[],
            a_in: &empty,
            b_in: &[],
            lower: &[f64::NEG_INFINITY, 0.0],
            upper: &[f64::INFINITY; 2],
        };
        assert!(matches!(active_set(&qp, None), Err(Failure::Cycling)));
    }

    /// Tridiagonal H, rows `d[2i] − d[2i+1]/2 = b_i` and a box: the first
    /// unconstrained step violates both bounds of some pairs at once.
    fn chain(n: usize) -> (Triplets, Vec<f64>, Triplets, Vec<f64>) {
        let mut h = Triplets::new(n, n);
        for i in 0..n {
            h.push(i, i, 4.0);
            if i + 1 < n {
                h.push(i, i + 1, -1.0);
                h.push(i + 1, i, -1.0);
            }
        }
        let p = n / 2;
        let mut a = Triplets::new(p, n);
        for i in 0..p {
            a.push(i, 2 * i, 1.0);
            a.push(i, 2 * i + 1, -0.5);
        }
        let g = (0..n).map(|i| ((i % 7) as f64 - 3.0) * 0.5).collect();
        let b = (0..p).map(|i| ((i % 3) as f64 - 1.0) * 0.1).collect();
        (h, g, a, b)
    }

    #[test]
    fn overdetermined_phase_one_batch_is_rolled_back() {
        for n in [40, 100, 400] {
            let (h, g, a, b) = chain(n);
            let empty = Triplets::new(0, n);
            let (l, u) = (vec![-0.2; n], vec![0.3; n]);
            let qp = QpProblem { h: &h, g: &g, a_eq: &a, b_eq: &b, a_in: &empty, b_in: &[], lower: &l, upper: &u };
            let sol = qp_solve(&qp).unwrap();
            assert!(!sol.elastic, "n={n}");
            let mut r: Vec<f64> = g.iter().zip(&sol.mult_bounds).map(|(g, m)| g + m).collect();
            for &(i, j, v) in &h.entries {
                r[i] += v * sol.d[j];
            }
            for &(i, j, v) in &a.entries {
                r[j] += v * sol.mult_eq[i];
            }
            assert!(r.iter().all(|v| v.abs() < 1e-10), "n={n} stationarity {r:?}");
            for j in 0..n {
                assert!(sol.d[j] >= l[j] - 1e-12 && sol.d[j] <= u[j] + 1e-12);
                let m = sol.mult_bounds[j];
                assert!(m == 0.0 || (m < 0.0 && (sol.d[j] - l[j]).abs() < 1e-12) || (m > 0.0 && (sol.d[j] - u[j]).abs() < 1e-12));
            }
        }
    }
}
