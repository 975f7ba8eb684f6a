//! Shared fixtures for the benchmarks.

use turnpike_core::model::uniform_grid;
use turnpike_core::nlp::{QpProblem, Triplets};
use turnpike_core::{kepler_model, preset_fig1, preset_fig2, KeplerModel, KeplerParams, OcpSpec, State};

pub fn fig1() -> OcpSpec<KeplerModel> {
    preset_fig1(&KeplerParams::default())
}

pub fn fig2() -> OcpSpec<KeplerModel> {
    preset_fig2(&KeplerParams::default())
}

/// Small constant thrust on a circular orbit over `intervals` RK4 steps.
pub struct Rollout {
    pub model: KeplerModel,
    pub x0: State,
    pub controls: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
}

pub fn rollout(intervals: usize) -> Rollout {
    let params = KeplerParams::default();
    Rollout {
        model: kepler_model(&params),
        x0: params.circular_state(5.0),
        controls: vec![vec![0.01, 0.0]; intervals],
        grid: uniform_grid(30.0, intervals),
    }
}

/// Tridiagonal box-constrained QP with a chain of equality rows, shaped like
/// a shooting subproblem.
pub struct ChainQp {
    pub h: Triplets,
    pub g: Vec<f64>,
    pub a_eq: Triplets,
    pub b_eq: Vec<f64>,
    pub a_in: Triplets,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ChainQp {
    pub fn new(n: usize) -> Self {
        let mut h = Triplets::new(n, n);
        for i in 0..n {
            h.push(i, i, 4.0);
            if i + 1 < n {
                h.push(i, i + 1, -1.0);
                h.push(i + 1, i, -1.0);
            }
        }
        let p = n / 2;
        let mut a_eq = Triplets::new(p, n);
        for i in 0..p {
            a_eq.push(i, 2 * i, 1.0);
            a_eq.push(i, 2 * i + 1, -0.5);
        }
        Self {
            h,
            g: (0..n).map(|i| ((i % 7) as f64 - 3.0) * 0.5).collect(),
            a_eq,
            b_eq: (0..p).map(|i| ((i % 3) as f64 - 1.0) * 0.1).collect(),
            a_in: Triplets::new(0, n),
            lower: vec![-0.2; n],
            upper: vec![0.3; n],
        }
    }

    pub fn problem(&self) -> QpProblem<'_> {
        QpProblem {
            h: &self.h,
            g: &self.g,
            a_eq: &self.a_eq,
            b_eq: &self.b_eq,
            a_in: &self.a_in,
            b_in: &[],
            lower: &self.lower,
            upper: &self.upper,
        }
    }
}
