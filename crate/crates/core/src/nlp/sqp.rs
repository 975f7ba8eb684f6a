use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::qp::{qp_solve_elastic, QpProblem};
use super::sparse::Triplets;
use super::{kkt_from_parts, HessianBlock, HessianKind, KktResiduals, NlpProblem, NlpSolution, NlpStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// Dense damped BFGS approximation.
    Bfgs,
    /// Objective curvature supplied by the problem.
    GaussNewton,
    /// Lagrangian Hessian from the problem, or finite differences of its
    /// gradient. Steps that meet negative curvature are recomputed with the
    /// Gauss-Newton model if the problem has one, else with each block's
    /// negative eigenvalues mirrored.
    #[serde(rename = "fd-exact")]
    Exact,
}

#[derive(Debug, Clone)]
pub struct SqpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub hessian: HessianMode,
    pub penalty_init: f64,
    /// The penalty is raised to at least this factor times the largest multiplier estimate.
    pub penalty_factor: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub second_order_correction: bool,
    /// Relative floor for eigenvalues of Hessian blocks.
    pub eig_floor: f64,
    /// Check derivatives against finite differences at the starting point.
    pub validate: bool,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            hessian: HessianMode::Bfgs,
            penalty_init: 1.0,
            penalty_factor: 1.5,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-12,
            second_order_correction: true,
            eig_floor: 1e-8,
            validate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    pub step_norm: f64,
    pub penalty: f64,
}

/// Writes `iter,objective,stationarity,feasibility,step_norm,penalty` rows.
pub fn write_iteration_log<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Values and derivatives of the problem at one point.
struct Eval {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
    jeq: Triplets,
    jin: Triplets,
}

fn eval_values<P: NlpProblem + ?Sized>(p: &P, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let f = p.objective(x);
    let mut c = vec![0.0; p.n_eq()];
    p.eq_constraints(x, &mut c);
    let mut g = vec![0.0; p.n_ineq()];
    p.ineq_constraints(x, &mut g);
    (f, c, g)
}

fn eval_derivs<P: NlpProblem + ?Sized>(p: &P, x: &[f64], f: f64, c: Vec<f64>, g: Vec<f64>) -> Eval {
    let mut grad = vec![0.0; p.n()];
    p.gradient(x, &mut grad);
    Eval { f, grad, c, g, jeq: p.eq_jacobian(x), jin: p.ineq_jacobian(x) }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Eval {
    fn finite(&self) -> bool {
        self.f.is_finite()
            && all_finite(&self.grad)
            && all_finite(&self.c)
            && all_finite(&self.g)
            && self.jeq.entries.iter().all(|e| e.2.is_finite())
            && self.jin.entries.iter().all(|e| e.2.is_finite())
    }

    fn lagrangian_grad(&self, mult_eq: &[f64], mult_in: &[f64]) -> Vec<f64> {
        let mut out = self.grad.clone();
        self.jeq.tr_mul_add(mult_eq, &mut out);
        self.jin.tr_mul_add(mult_in, &mut out);
        out
    }
}

fn violation(c: &[f64], g: &[f64]) -> f64 {
    c.iter().map(|v| v.abs()).sum::<f64>() + g.iter().map(|v| v.max(0.0)).sum::<f64>()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Replaces each negative eigenvalue by `max(|λ|, floor · max(1, max|λ|))`.
pub(crate) fn convexify(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let floor = rel_floor * top;
    // zero curvature is left alone: flooring it would bend directions that
    // the constraints determine
    let vals = eig.eigenvalues.map(|v| if v >= 0.0 { v } else { (-v).max(floor) });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `dᵀHd ≥ κ ‖d‖²` with a small `κ` relative to the largest entry of `H`.
fn has_positive_curvature(h: &Triplets, d: &[f64]) -> bool {
    let hd = h.mul_vec(d);
    let dhd: f64 = hd.iter().zip(d).map(|(a, b)| a * b).sum();
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let scale = h.entries.iter().fold(1.0_f64, |m, e| m.max(e.2.abs()));
    dd == 0.0 || dhd >= 1e-10 * scale * dd
}

/// Assembles Hessian blocks; with a floor each block is made positive
/// definite first.
fn blocks_to_triplets(n: usize, blocks: &[HessianBlock], rel_floor: Option<f64>) -> Triplets {
    let cap = blocks.iter().map(|b| b.indices.len() * b.indices.len()).sum();
    let mut t = Triplets::with_capacity(n, n, cap);
    for b in blocks {
        let m = match rel_floor {
            Some(f) => convexify(&b.matrix, f),
            None => symmetrize(&b.matrix),
        };
        for (a, &i) in b.indices.iter().enumerate() {
            for (c, &j) in b.indices.iter().enumerate() {
                t.push(i, j, m[(a, c)]);
            }
        }
    }
    t
}

fn fd_lagrangian_hessian<P: NlpProblem + ?Sized>(p: &P, x: &[f64], mult_eq: &[f64], mult_in: &[f64]) -> DMatrix<f64> {
    let n = p.n();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let (f, c, g) = eval_values(p, &xp);
        let gp = eval_derivs(p, &xp, f, c, g).lagrangian_grad(mult_eq, mult_in);
        xp[j] = x[j] - step;
        let (f, c, g) = eval_values(p, &xp);
        let gm = eval_derivs(p, &xp, f, c, g).lagrangian_grad(mult_eq, mult_in);
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    h
}

fn validate_derivatives<P: NlpProblem + ?Sized>(p: &P, x: &[f64], ev: &Eval) -> Result<()> {
    let n = p.n();
    let jeq = ev.jeq.to_dense();
    let jin = ev.jin.to_dense();
    let mut xp = x.to_vec();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1.0);
    for j in 0..n {
        let step = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let (fp, cp, gp) = eval_values(p, &xp);
        xp[j] = x[j] - step;
        let (fm, cm, gm) = eval_values(p, &xp);
        xp[j] = x[j];
        let fd = (fp - fm) / (2.0 * step);
        if !close(ev.grad[j], fd) {
            return Err(Error::DerivativeMismatch(format!("objective gradient[{j}]: {} vs fd {fd}", ev.grad[j])));
        }
        for i in 0..cp.len() {
            let fd = (cp[i] - cm[i]) / (2.0 * step);
            if !close(jeq[(i, j)], fd) {
                return Err(Error::DerivativeMismatch(format!("equality jacobian[{i},{j}]: {} vs fd {fd}", jeq[(i, j)])));
            }
        }
        for i in 0..gp.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * step);
            if !close(jin[(i, j)], fd) {
                return Err(Error::DerivativeMismatch(format!("inequality jacobian[{i},{j}]: {} vs fd {fd}", jin[(i, j)])));
            }
        }
    }
    Ok(())
}

struct Iterate {
    x: Vec<f64>,
    mult_eq: Vec<f64>,
    mult_in: Vec<f64>,
    mult_b: Vec<f64>,
    kkt: KktResiduals,
    f: f64,
}

/// SQP with an ℓ1 exact-penalty merit function and backtracking line search.
///
/// Each iteration solves a convex QP built from the chosen Hessian model and
/// the constraint linearizations. Iterates stay within the variable bounds.
pub fn solve_sqp<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64], opts: &SqpOptions) -> Result<NlpSolution> {
    let n = problem.n();
    if x0.len() != n {
        return Err(Error::Dimension(format!("start point of length {} for {n} variables", x0.len())));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let (lo, hi) = problem.bounds();
    let p_eq = problem.n_eq();
    let p_in = problem.n_ineq();
    let mut x: Vec<f64> = (0..n).map(|j| x0[j].max(lo[j]).min(hi[j])).collect();
    let mut mult_eq = vec![0.0; p_eq];
    let mut mult_in = vec![0.0; p_in];
    let mut mult_b = vec![0.0; n];

    let finish = |it: Iterate, status: NlpStatus, iterations: usize, history: Vec<IterationRecord>| NlpSolution {
        x: it.x,
        objective: it.f,
        mult_eq: it.mult_eq,
        mult_ineq: it.mult_in,
        mult_bounds: it.mult_b,
        kkt: it.kkt,
        iterations,
        status,
        history,
    };
    let bad = |x: Vec<f64>, f: f64, status: NlpStatus| NlpSolution {
        x,
        objective: f,
        mult_eq: vec![0.0; p_eq],
        mult_ineq: vec![0.0; p_in],
        mult_bounds: vec![0.0; n],
        kkt: KktResiduals { stationarity: f64::INFINITY, feasibility: f64::INFINITY, complementarity: f64::INFINITY },
        iterations: 0,
        status,
        history: Vec::new(),
    };

    if (0..n).any(|j| lo[j] > hi[j]) {
        return Ok(bad(x, f64::NAN, NlpStatus::Infeasible));
    }
    let (f, c, g) = eval_values(problem, &x);
    let mut ev = eval_derivs(problem, &x, f, c, g);
    if !ev.finite() {
        return Ok(bad(x, ev.f, NlpStatus::EvaluationError));
    }
    if opts.validate {
        validate_derivatives(problem, &x, &ev)?;
    }

    let mut rho = opts.penalty_init;
    let mut bfgs: Option<DMatrix<f64>> = match opts.hessian {
        HessianMode::Bfgs => Some(DMatrix::identity(n, n)),
        _ => None,
    };
    let mut bfgs_scaled = false;
    let mut history = Vec::new();
    let mut best: Option<Iterate> = None;
    let mut step_norm = 0.0;

    for k in 0..=opts.max_iter {
        let kkt = kkt_from_parts(&ev.grad, &ev.c, &ev.g, &ev.jeq, &ev.jin, &lo, &hi, &x, &mult_eq, &mult_in, &mult_b);
        history.push(IterationRecord {
            iter: k,
            objective: ev.f,
            stationarity: kkt.stationarity,
            feasibility: kkt.feasibility,
            step_norm,
            penalty: rho,
        });
        let current = || Iterate {
            x: x.clone(),
            mult_eq: mult_eq.clone(),
            mult_in: mult_in.clone(),
            mult_b: mult_b.clone(),
            kkt,
            f: ev.f,
        };
        if kkt.max() <= opts.tol {
            return Ok(finish(current(), NlpStatus::Converged, k, history));
        }
        if best.as_ref().is_none_or(|b| kkt.max() < b.kkt.max()) {
            best = Some(current());
        }
        if k == opts.max_iter {
            break;
        }

        let b_eq: Vec<f64> = ev.c.iter().map(|v| -v).collect();
        let b_in: Vec<f64> = ev.g.iter().map(|v| -v).collect();
        let dl: Vec<f64> = (0..n).map(|j| lo[j] - x[j]).collect();
        let du: Vec<f64> = (0..n).map(|j| hi[j] - x[j]).collect();
        let solve_with = |h: &Triplets| {
            let qp = QpProblem { h, g: &ev.grad, a_eq: &ev.jeq, b_eq: &b_eq, a_in: &ev.jin, b_in: &b_in, lower: &dl, upper: &du };
            qp_solve_elastic(&qp, (10.0 * rho).max(1e3))
        };

        // Exact mode tries the true Lagrangian Hessian first and keeps its
        // step when the step sees positive curvature; otherwise the QP is
        // re-solved with a convex model.
        let mut attempt = match opts.hessian {
            HessianMode::Exact => {
                let raw = match problem.hessian_blocks(&x, &mult_eq, &mult_in, HessianKind::Exact) {
                    Some(blocks) => blocks_to_triplets(n, &blocks, None),
                    None => Triplets::from_dense(&symmetrize(&fd_lagrangian_hessian(problem, &x, &mult_eq, &mult_in))),
                };
                match solve_with(&raw) {
                    Ok(sol) if has_positive_curvature(&raw, &sol.d) => Some((raw, Ok(sol))),
                    _ => None,
                }
            }
            _ => None,
        };
        if attempt.is_none() {
            let h = match opts.hessian {
                HessianMode::Bfgs => Triplets::from_dense(bfgs.as_ref().expect("bfgs matrix")),
                HessianMode::GaussNewton => match problem.hessian_blocks(&x, &mult_eq, &mult_in, HessianKind::GaussNewton) {
                    Some(blocks) => blocks_to_triplets(n, &blocks, Some(opts.eig_floor)),
                    None => {
                        return Err(Error::InvalidArgument("problem provides no Gauss-Newton Hessian".into()));
                    }
                },
                HessianMode::Exact => match problem.hessian_blocks(&x, &mult_eq, &mult_in, HessianKind::GaussNewton) {
                    Some(blocks) => blocks_to_triplets(n, &blocks, Some(opts.eig_floor)),
                    None => match problem.hessian_blocks(&x, &mult_eq, &mult_in, HessianKind::Exact) {
                        Some(blocks) => blocks_to_triplets(n, &blocks, Some(opts.eig_floor)),
                        None => {
                            let dense = fd_lagrangian_hessian(problem, &x, &mult_eq, &mult_in);
                            Triplets::from_dense(&convexify(&dense, opts.eig_floor))
                        }
                    },
                },
            };
            let sol = solve_with(&h);
            attempt = Some((h, sol));
        }
        let (h, sol) = attempt.expect("hessian model");
        let sol = match sol {
            Ok(s) => s,
            Err(e) => {
                log::warn!("QP subproblem failed at iteration {k}: {e}");
                return Ok(finish(current(), NlpStatus::Infeasible, k, history));
            }
        };
        let d = sol.d;
        let dnorm = inf_norm(&d);
        let viol0 = violation(&ev.c, &ev.g);
        if sol.elastic && sol.slack > opts.tol && dnorm <= 1e-12 * (1.0 + inf_norm(&x)) {
            return Ok(finish(current(), NlpStatus::Infeasible, k, history));
        }
        // A step at rounding level means the iterate is already a KKT point
        // of the model; what is left of the residual is |H d|, which is
        // rounding amplified by large curvature.
        if !sol.elastic && kkt.feasibility <= opts.tol && dnorm <= 1e-13 * (1.0 + inf_norm(&x)) {
            let kkt = kkt_from_parts(
                &ev.grad, &ev.c, &ev.g, &ev.jeq, &ev.jin, &lo, &hi, &x, &sol.mult_eq, &sol.mult_ineq, &sol.mult_bounds,
            );
            if kkt.complementarity <= opts.tol {
                let it = Iterate { x: x.clone(), mult_eq: sol.mult_eq, mult_in: sol.mult_ineq, mult_b: sol.mult_bounds, kkt, f: ev.f };
                return Ok(finish(it, NlpStatus::Converged, k, history));
            }
        }

        let needed = inf_norm(&sol.mult_eq).max(inf_norm(&sol.mult_ineq));
        if rho < opts.penalty_factor * needed {
            rho = opts.penalty_factor * needed;
        }
        let merit = |f: f64, c: &[f64], g: &[f64]| f + rho * violation(c, g);
        let phi0 = merit(ev.f, &ev.c, &ev.g);
        let lin_c: Vec<f64> = ev.jeq.mul_vec(&d).iter().zip(&ev.c).map(|(a, b)| a + b).collect();
        let lin_g: Vec<f64> = ev.jin.mul_vec(&d).iter().zip(&ev.g).map(|(a, b)| a + b).collect();
        let gd: f64 = ev.grad.iter().zip(&d).map(|(a, b)| a * b).sum();
        let slope = gd - rho * (viol0 - violation(&lin_c, &lin_g));

        let trial = |x_t: &[f64]| -> Option<(f64, Vec<f64>, Vec<f64>)> {
            let (f, c, g) = eval_values(problem, x_t);
            (f.is_finite() && all_finite(&c) && all_finite(&g)).then_some((f, c, g))
        };
        let clamp = |v: &mut Vec<f64>| {
            for j in 0..n {
                v[j] = v[j].max(lo[j]).min(hi[j]);
            }
        };

        // merit changes below rounding cannot be resolved near the solution
        let noise = 10.0 * f64::EPSILON * phi0.abs();
        let mut alpha = 1.0;
        let mut step = d.clone();
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>, Vec<f64>)> = None;
        let mut tried_soc = !opts.second_order_correction || (p_eq + p_in == 0);
        loop {
            let mut x_t: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            clamp(&mut x_t);
            let vals = trial(&x_t);
            if let Some((f, c, g)) = &vals {
                if merit(*f, c, g) <= phi0 + opts.armijo * alpha * slope.min(0.0) + noise {
                    accepted = Some((x_t, *f, c.clone(), g.clone()));
                    break;
                }
            }
            if !tried_soc {
                tried_soc = true;
                if let Some((_, c_t, g_t)) = &vals {
                    if let Some(corr) = second_order_step(&h, &ev, &d, c_t, g_t, &dl, &du, rho) {
                        let mut x_s: Vec<f64> = x.iter().zip(&corr).map(|(a, b)| a + b).collect();
                        clamp(&mut x_s);
                        if let Some((f, c, g)) = trial(&x_s) {
                            if merit(f, &c, &g) <= phi0 + opts.armijo * slope.min(0.0) + noise {
                                step = corr;
                                accepted = Some((x_s, f, c, g));
                                break;
                            }
                        }
                    }
                }
            }
            alpha *= opts.backtrack;
            if alpha < opts.min_step {
                break;
            }
        }
        let Some((x_new, f_new, c_new, g_new)) = accepted else {
            log::warn!("line search failed at iteration {k}");
            return Ok(finish(best.unwrap_or_else(current), NlpStatus::Stalled, k, history));
        };

        mult_eq.copy_from_slice(&sol.mult_eq);
        mult_in.copy_from_slice(&sol.mult_ineq);
        mult_b.copy_from_slice(&sol.mult_bounds);

        let ev_new = eval_derivs(problem, &x_new, f_new, c_new, g_new);
        if !ev_new.finite() {
            return Ok(bad(x_new, f_new, NlpStatus::EvaluationError));
        }
        if let Some(b) = bfgs.as_mut() {
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let gl_new = ev_new.lagrangian_grad(&mult_eq, &mult_in);
            let gl_old = ev.lagrangian_grad(&mult_eq, &mult_in);
            let y: Vec<f64> = gl_new.iter().zip(&gl_old).map(|(a, b)| a - b).collect();
            bfgs_update(b, &s, &y, &mut bfgs_scaled);
        }
        step_norm = alpha * inf_norm(&step).max(0.0);
        if alpha < 1.0 {
            step_norm = inf_norm(&x_new.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        }
        x = x_new;
        ev = ev_new;
    }
    let it = best.expect("at least one iterate");
    Ok(finish(it, NlpStatus::MaxIter, opts.max_iter, history))
}

/// Correction step for the Maratos effect: re-solve the QP with the
/// constraint values at the trial point.
#[allow(clippy::too_many_arguments)]
fn second_order_step(
    h: &Triplets,
    ev: &Eval,
    d: &[f64],
    c_t: &[f64],
    g_t: &[f64],
    dl: &[f64],
    du: &[f64],
    rho: f64,
) -> Option<Vec<f64>> {
    let jd = ev.jeq.mul_vec(d);
    let b_eq: Vec<f64> = jd.iter().zip(c_t).map(|(a, c)| a - c).collect();
    let jd_in = ev.jin.mul_vec(d);
    let b_in: Vec<f64> = jd_in.iter().zip(g_t).map(|(a, g)| a - g).collect();
    let qp = QpProblem { h, g: &ev.grad, a_eq: &ev.jeq, b_eq: &b_eq, a_in: &ev.jin, b_in: &b_in, lower: dl, upper: du };
    let sol = qp_solve_elastic(&qp, (10.0 * rho).max(1e3)).ok()?;
    (!sol.elastic).then_some(sol.d)
}

/// Damped BFGS update that keeps `B` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &[f64], y: &[f64], scaled: &mut bool) {
    let s = DVector::from_column_slice(s);
    let mut y = DVector::from_column_slice(y);
    let ss = s.dot(&s);
    if ss == 0.0 || !ss.is_finite() {
        return;
    }
    let sy = s.dot(&y);
    if !*scaled && sy > 0.0 {
        let yy = y.dot(&y);
        let gamma = yy / sy;
        if gamma.is_finite() && gamma > 0.0 {
            *b = DMatrix::identity(b.nrows(), b.ncols()) * gamma;
        }
        *scaled = true;
    }
    let bs = &*b * &s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y = &y * theta + &bs * (1.0 - theta);
    }
    let sr = s.dot(&y);
    if !(sr > 0.0) {
        return;
    }
    *b += &y * y.transpose() / sr - &bs * bs.transpose() / sbs;
}
