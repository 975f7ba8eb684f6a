//! Smooth nonlinear programming by sequential quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! min f(x)  s.t.  c(x) = 0,  g(x) ≤ 0,  l ≤ x ≤ u
//! ```
//!
//! and multipliers follow the convention `L = f + μᵀc + λᵀg + zᵀx`, so that a
//! KKT point satisfies `∇f + Jcᵀμ + Jgᵀλ + z = 0` with `λ ≥ 0`. The bound
//! multiplier `z` is signed: positive on an active upper bound, negative on
//! an active lower bound.

mod dense;
mod linalg;
mod qp;
mod sparse;
mod sqp;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use dense::DenseProblem;
pub use linalg::SparseLu;
pub use qp::{qp_solve, QpProblem, QpSolution};
pub use sparse::Triplets;
pub use sqp::{solve_sqp, write_iteration_log, HessianMode, IterationRecord, SqpOptions};

/// Symmetric block of the Lagrangian Hessian acting on `indices`.
///
/// Blocks of one Hessian may overlap; overlapping entries add up.
#[derive(Debug, Clone)]
pub struct HessianBlock {
    pub indices: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

/// Which second-order model [`NlpProblem::hessian_blocks`] should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    /// Curvature of the objective only, positive semidefinite by construction.
    GaussNewton,
    /// Full Hessian of the Lagrangian at the given multipliers.
    Exact,
}

/// A smooth NLP with sparse constraint Jacobians.
pub trait NlpProblem: Sync {
    fn n(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize {
        0
    }

    /// Variable bounds; infinite entries mean unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY; self.n()], vec![f64::INFINITY; self.n()])
    }

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);

    fn eq_constraints(&self, _x: &[f64], _c: &mut [f64]) {}
    fn eq_jacobian(&self, _x: &[f64]) -> Triplets {
        Triplets::new(self.n_eq(), self.n())
    }

    /// Inequalities in the form `g(x) ≤ 0`.
    fn ineq_constraints(&self, _x: &[f64], _g: &mut [f64]) {}
    fn ineq_jacobian(&self, _x: &[f64]) -> Triplets {
        Triplets::new(self.n_ineq(), self.n())
    }

    /// Blocks of the Hessian model; `None` lets the solver fall back to
    /// finite differences of the Lagrangian gradient.
    fn hessian_blocks(
        &self,
        _x: &[f64],
        _mult_eq: &[f64],
        _mult_ineq: &[f64],
        _kind: HessianKind,
    ) -> Option<Vec<HessianBlock>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Converged,
    #[serde(rename = "maxiter")]
    MaxIter,
    Infeasible,
    EvaluationError,
    /// The line search could not reduce the merit function.
    Stalled,
}

impl NlpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIter => "maxiter",
            Self::Infeasible => "infeasible",
            Self::EvaluationError => "evaluation_error",
            Self::Stalled => "stalled",
        }
    }
}

impl std::fmt::Display for NlpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub mult_eq: Vec<f64>,
    pub mult_ineq: Vec<f64>,
    /// Signed bound multipliers, `z = z_upper − z_lower`.
    pub mult_bounds: Vec<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub status: NlpStatus,
    pub history: Vec<IterationRecord>,
}

/// Infinity norms of the KKT conditions at `x` with the given multipliers.
pub fn kkt_residuals<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    mult_eq: &[f64],
    mult_ineq: &[f64],
    mult_bounds: &[f64],
) -> KktResiduals {
    let n = problem.n();
    let mut grad = vec![0.0; n];
    problem.gradient(x, &mut grad);
    let mut c = vec![0.0; problem.n_eq()];
    problem.eq_constraints(x, &mut c);
    let mut g = vec![0.0; problem.n_ineq()];
    problem.ineq_constraints(x, &mut g);
    let (lo, hi) = problem.bounds();
    let jeq = problem.eq_jacobian(x);
    let jin = problem.ineq_jacobian(x);
    kkt_from_parts(&grad, &c, &g, &jeq, &jin, &lo, &hi, x, mult_eq, mult_ineq, mult_bounds)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn kkt_from_parts(
    grad: &[f64],
    c: &[f64],
    g: &[f64],
    jeq: &Triplets,
    jin: &Triplets,
    lo: &[f64],
    hi: &[f64],
    x: &[f64],
    mult_eq: &[f64],
    mult_ineq: &[f64],
    mult_bounds: &[f64],
) -> KktResiduals {
    let mut stat = grad.to_vec();
    jeq.tr_mul_add(mult_eq, &mut stat);
    jin.tr_mul_add(mult_ineq, &mut stat);
    stat.iter_mut().zip(mult_bounds).for_each(|(s, z)| *s += z);
    let stationarity = stat.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut feasibility = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    feasibility = g.iter().fold(feasibility, |m, v| m.max(v.max(0.0)));
    for i in 0..x.len() {
        feasibility = feasibility.max(lo[i] - x[i]).max(x[i] - hi[i]);
    }

    let mut complementarity = 0.0_f64;
    for (l, gi) in mult_ineq.iter().zip(g) {
        complementarity = complementarity.max((l * gi).abs());
    }
    for i in 0..x.len() {
        let z = mult_bounds[i];
        let gap = if z > 0.0 {
            hi[i] - x[i]
        } else if z < 0.0 {
            x[i] - lo[i]
        } else {
            0.0
        };
        if z != 0.0 {
            complementarity = complementarity.max((z * gap).abs());
        }
    }
    if stationarity.is_nan() || feasibility.is_nan() || complementarity.is_nan() {
        return KktResiduals {
            stationarity: f64::INFINITY,
            feasibility: f64::INFINITY,
            complementarity: f64::INFINITY,
        };
    }
    KktResiduals { stationarity, feasibility, complementarity }
}
