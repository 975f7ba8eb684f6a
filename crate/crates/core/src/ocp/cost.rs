use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MechModel, State};
use crate::trim::{trim_residual_grads_unchecked, trim_residual_unchecked};

type CostFn = dyn Fn(f64, f64, f64, &[f64]) -> f64 + Send + Sync;
type CostGradFn = dyn Fn(f64, f64, f64, &[f64], &mut [f64]) + Send + Sync;

/// User-supplied `ℓ(s, v_s, v_θ, u)`. The gradient is written in the order
/// `(s, v_s, v_θ, u_1, …, u_m)`.
#[derive(Clone)]
pub struct CustomCost {
    value: Arc<CostFn>,
    grad: Arc<CostGradFn>,
}

impl CustomCost {
    pub fn new(
        value: impl Fn(f64, f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, f64, f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), grad: Arc::new(grad) }
    }
}

impl fmt::Debug for CustomCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomCost")
    }
}

/// Stage cost `ℓ(x, u)`. No variant depends on `θ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StageCost {
    /// `½ (x − x̃)ᵀ Q (x − x̃) + (u − ũ)ᵀ R (u − ũ)` with diagonal `Q`, `R`.
    /// The `θ` weight must be zero.
    Quadratic {
        x_ref: State,
        q: [f64; 4],
        u_ref: Vec<f64>,
        r: Vec<f64>,
    },
    /// `w_T T(s, v_θ, u)² + ½ s_weight (s − s̃)² + ½ (u − ũ)ᵀ R (u − ũ)`.
    TrimPenalty {
        w_trim: f64,
        s_ref: f64,
        #[serde(default = "one")]
        s_weight: f64,
        u_ref: Vec<f64>,
        r: Vec<f64>,
    },
    #[serde(skip)]
    Custom(CustomCost),
}

fn one() -> f64 {
    1.0
}

/// Gradient of `ℓ` split into the state part `(s, v_s, θ, v_θ)` and the control part.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGrad {
    pub x: [f64; 4],
    pub u: Vec<f64>,
}

impl StageCost {
    pub fn validate(&self, control_dim: usize) -> Result<()> {
        let check_len = |name: &str, v: &[f64]| {
            if v.len() == control_dim {
                Ok(())
            } else {
                Err(Error::Dimension(format!("{name} has length {} for {control_dim} controls", v.len())))
            }
        };
        match self {
            Self::Quadratic { q, u_ref, r, .. } => {
                check_len("u_ref", u_ref)?;
                check_len("r", r)?;
                if q[2] != 0.0 {
                    return Err(Error::InvalidArgument("stage cost must not depend on θ (q[2] must be 0)".into()));
                }
                if q.iter().chain(r).any(|w| !(*w >= 0.0)) {
                    return Err(Error::InvalidArgument("cost weights must be nonnegative".into()));
                }
            }
            Self::TrimPenalty { w_trim, s_weight, u_ref, r, .. } => {
                check_len("u_ref", u_ref)?;
                check_len("r", r)?;
                if [*w_trim, *s_weight].iter().chain(r).any(|w| !(*w >= 0.0)) {
                    return Err(Error::InvalidArgument("cost weights must be nonnegative".into()));
                }
            }
            Self::Custom(_) => {}
        }
        Ok(())
    }

    pub fn value<M: MechModel + ?Sized>(&self, model: &M, x: &State, u: &[f64]) -> f64 {
        match self {
            Self::Quadratic { x_ref, q, u_ref, r } => {
                let dx = [x.s - x_ref.s, x.v_s - x_ref.v_s, 0.0, x.v_th - x_ref.v_th];
                let xs: f64 = (0..4).map(|i| q[i] * dx[i] * dx[i]).sum();
                let us: f64 = u.iter().zip(u_ref).zip(r).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
                0.5 * xs + us
            }
            Self::TrimPenalty { w_trim, s_ref, s_weight, u_ref, r } => {
                let t = trim_residual_unchecked(model, x.s, x.v_th, u);
                let us: f64 = u.iter().zip(u_ref).zip(r).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
                w_trim * t * t + 0.5 * s_weight * (x.s - s_ref).powi(2) + 0.5 * us
            }
            Self::Custom(c) => (c.value)(x.s, x.v_s, x.v_th, u),
        }
    }

    pub fn gradient<M: MechModel + ?Sized>(&self, model: &M, x: &State, u: &[f64]) -> CostGrad {
        match self {
            Self::Quadratic { x_ref, q, u_ref, r } => CostGrad {
                x: [q[0] * (x.s - x_ref.s), q[1] * (x.v_s - x_ref.v_s), 0.0, q[3] * (x.v_th - x_ref.v_th)],
                u: u.iter().zip(u_ref).zip(r).map(|((a, b), w)| 2.0 * w * (a - b)).collect(),
            },
            Self::TrimPenalty { w_trim, s_ref, s_weight, u_ref, r } => {
                let t = trim_residual_unchecked(model, x.s, x.v_th, u);
                let g = trim_residual_grads_unchecked(model, x.s, x.v_th, u);
                let k = 2.0 * w_trim * t;
                CostGrad {
                    x: [k * g.ds + s_weight * (x.s - s_ref), 0.0, 0.0, k * g.dv_th],
                    u: (0..u.len()).map(|j| k * g.du[j] + r[j] * (u[j] - u_ref[j])).collect(),
                }
            }
            Self::Custom(c) => {
                let mut out = vec![0.0; 3 + u.len()];
                (c.grad)(x.s, x.v_s, x.v_th, u, &mut out);
                CostGrad { x: [out[0], out[1], 0.0, out[2]], u: out[3..].to_vec() }
            }
        }
    }

    /// Hessian of `ℓ` in the variables `(s, v_s, θ, v_θ, u)`.
    ///
    /// With `gauss_newton` the trim penalty keeps only `2 w_T ∇T ∇Tᵀ` from the
    /// residual term; custom costs always use differences of the gradient.
    pub fn hessian<M: MechModel + ?Sized>(&self, model: &M, x: &State, u: &[f64], gauss_newton: bool) -> DMatrix<f64> {
        let m = u.len();
        let mut h = DMatrix::zeros(4 + m, 4 + m);
        match self {
            Self::Quadratic { q, r, .. } => {
                for i in 0..4 {
                    h[(i, i)] = q[i];
                }
                for j in 0..m {
                    h[(4 + j, 4 + j)] = 2.0 * r[j];
                }
            }
            Self::TrimPenalty { w_trim, s_weight, r, .. } => {
                let g = trim_residual_grads_unchecked(model, x.s, x.v_th, u);
                let mut dt = vec![0.0; 4 + m];
                dt[0] = g.ds;
                dt[3] = g.dv_th;
                dt[4..].copy_from_slice(&g.du);
                for a in 0..4 + m {
                    for b in 0..4 + m {
                        h[(a, b)] = 2.0 * w_trim * dt[a] * dt[b];
                    }
                }
                h[(0, 0)] += s_weight;
                for j in 0..m {
                    h[(4 + j, 4 + j)] += r[j];
                }
                if !gauss_newton {
                    let t = trim_residual_unchecked(model, x.s, x.v_th, u);
                    let d2 = fd_hessian(x, u, |xx, uu| {
                        let g = trim_residual_grads_unchecked(model, xx.s, xx.v_th, uu);
                        let mut out = vec![0.0; 4 + m];
                        out[0] = g.ds;
                        out[3] = g.dv_th;
                        out[4..].copy_from_slice(&g.du);
                        out
                    });
                    h += d2 * (2.0 * w_trim * t);
                }
            }
            Self::Custom(_) => {
                h = fd_hessian(x, u, |xx, uu| {
                    let g = self.gradient(model, xx, uu);
                    let mut out = g.x.to_vec();
                    out.extend_from_slice(&g.u);
                    out
                });
            }
        }
        h
    }
}

/// Symmetrized central differences of a gradient in `(s, v_s, θ, v_θ, u)`.
pub(crate) fn fd_hessian(x: &State, u: &[f64], grad: impl Fn(&State, &[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let m = u.len();
    let dim = 4 + m;
    let base: Vec<f64> = x.to_array().iter().chain(u).copied().collect();
    let mut h = DMatrix::zeros(dim, dim);
    let mut z = base.clone();
    for j in 0..dim {
        let step = 1e-6 * base[j].abs().max(1.0);
        z[j] = base[j] + step;
        let gp = grad(&State::from_slice(&z[..4]), &z[4..]);
        z[j] = base[j] - step;
        let gm = grad(&State::from_slice(&z[..4]), &z[4..]);
        z[j] = base[j];
        for i in 0..dim {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}
