//! Trim primitives: relative equilibria with constant shape, zero shape
//! velocity, constant cyclic velocity and constant control.
//!
//! A triple `(s, v_θ, u)` generates a trim exactly when the trim residual
//!
//! ```text
//! T(s, v_θ, u) = M11⁻¹ (½ M22' v_θ² − V' + f_s(u))
//! ```
//!
//! vanishes. Equivalently `s` is a critical point of the forced amended
//! potential `V_μ^u = V − s f_s(u) + ½ μ² M22⁻¹` with `μ = M22 v_θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_domain, MechModel, State, Trajectory};

/// A trim triple together with the residual it was accepted at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPoint {
    pub s: f64,
    #[serde(rename = "v_theta")]
    pub v_th: f64,
    pub u: Vec<f64>,
    pub residual: f64,
}

impl TrimPoint {
    /// Evaluates the residual of `(s, v_th, u)` and stores it with the point.
    pub fn new<M: MechModel + ?Sized>(model: &M, s: f64, v_th: f64, u: Vec<f64>) -> Result<Self> {
        let residual = trim_residual(model, s, v_th, &u)?;
        Ok(Self { s, v_th, u, residual })
    }

    /// State of the trim at `θ = th`.
    pub fn state(&self, th: f64) -> State {
        State::new(self.s, 0.0, th, self.v_th)
    }
}

/// Point at which the forced amended potential is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmendedPotentialPoint {
    pub s: f64,
    pub mu: f64,
    pub u: Vec<f64>,
}

/// Partial derivatives of the trim residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimGrads {
    pub ds: f64,
    pub dv_th: f64,
    pub du: Vec<f64>,
}

pub fn trim_residual<M: MechModel + ?Sized>(model: &M, s: f64, v_th: f64, u: &[f64]) -> Result<f64> {
    check_domain(model, s)?;
    check_len(model, u)?;
    Ok(trim_residual_unchecked(model, s, v_th, u))
}

pub(crate) fn trim_residual_unchecked<M: MechModel + ?Sized>(model: &M, s: f64, v_th: f64, u: &[f64]) -> f64 {
    (0.5 * model.m22_d(s) * v_th * v_th - model.pot_d(s) + model.f_s(u)) / model.m11(s)
}

fn check_len<M: MechModel + ?Sized>(model: &M, u: &[f64]) -> Result<()> {
    if u.len() == model.control_dim() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "control of length {} for a model with {} inputs",
            u.len(),
            model.control_dim()
        )))
    }
}

pub fn trim_residual_grads<M: MechModel + ?Sized>(model: &M, s: f64, v_th: f64, u: &[f64]) -> Result<TrimGrads> {
    check_domain(model, s)?;
    check_len(model, u)?;
    Ok(trim_residual_grads_unchecked(model, s, v_th, u))
}

pub(crate) fn trim_residual_grads_unchecked<M: MechModel + ?Sized>(
    model: &M,
    s: f64,
    v_th: f64,
    u: &[f64],
) -> TrimGrads {
    let inv11 = 1.0 / model.m11(s);
    let inv11_d = -model.m11_d(s) * inv11 * inv11;
    let bracket = 0.5 * model.m22_d(s) * v_th * v_th - model.pot_d(s) + model.f_s(u);
    let ds = inv11_d * bracket + inv11 * (0.5 * model.m22_dd(s) * v_th * v_th - model.pot_dd(s));
    let dv_th = inv11 * model.m22_d(s) * v_th;
    let mut du = vec![0.0; u.len()];
    model.f_s_jac(u, &mut du);
    du.iter_mut().for_each(|d| *d *= inv11);
    TrimGrads { ds, dv_th, du }
}

/// `V^u(s) = V(s) − s f_s(u)`.
pub fn forced_potential<M: MechModel + ?Sized>(model: &M, s: f64, u: &[f64]) -> Result<f64> {
    check_domain(model, s)?;
    check_len(model, u)?;
    Ok(model.pot(s) - s * model.f_s(u))
}

/// Forced amended potential `V_μ^u` and its derivative in `s`.
pub fn forced_amended_potential<M: MechModel + ?Sized>(
    model: &M,
    s: f64,
    mu: f64,
    u: &[f64],
) -> Result<(f64, f64)> {
    let vu = forced_potential(model, s, u)?;
    let inv22 = 1.0 / model.m22(s);
    let inv22_d = -model.m22_d(s) * inv22 * inv22;
    let value = vu + 0.5 * mu * mu * inv22;
    let grad = model.pot_d(s) + 0.5 * mu * mu * inv22_d - model.f_s(u);
    Ok((value, grad))
}

impl AmendedPotentialPoint {
    pub fn evaluate<M: MechModel + ?Sized>(&self, model: &M) -> Result<(f64, f64)> {
        forced_amended_potential(model, self.s, self.mu, &self.u)
    }
}

/// The free variable in [`solve_trim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimUnknown {
    Shape,
    CyclicVelocity,
    /// One component of the control.
    Control(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct TrimOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for TrimOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, max_halvings: 20 }
    }
}

#[derive(Debug, Clone)]
pub struct TrimSolve {
    pub point: TrimPoint,
    pub iterations: usize,
}

/// Scalar Newton iteration on `T = 0` in the free variable.
///
/// `guess` holds the fixed values and the initial guess of the unknown. The
/// step is halved while the residual magnitude would grow.
pub fn solve_trim<M: MechModel + ?Sized>(
    model: &M,
    guess: &TrimPoint,
    unknown: TrimUnknown,
    opts: &TrimOptions,
) -> Result<TrimSolve> {
    check_len(model, &guess.u)?;
    if let TrimUnknown::Control(k) = unknown {
        if k >= model.control_dim() {
            return Err(Error::InvalidArgument(format!("control index {k} out of range")));
        }
    }
    let get = |p: &TrimPoint| match unknown {
        TrimUnknown::Shape => p.s,
        TrimUnknown::CyclicVelocity => p.v_th,
        TrimUnknown::Control(k) => p.u[k],
    };
    let set = |p: &mut TrimPoint, v: f64| match unknown {
        TrimUnknown::Shape => p.s = v,
        TrimUnknown::CyclicVelocity => p.v_th = v,
        TrimUnknown::Control(k) => p.u[k] = v,
    };
    let eval = |p: &TrimPoint| -> Option<f64> {
        if check_domain(model, p.s).is_err() {
            return None;
        }
        let r = trim_residual_unchecked(model, p.s, p.v_th, &p.u);
        r.is_finite().then_some(r)
    };

    let mut p = guess.clone();
    let mut r = eval(&p).ok_or_else(|| Error::Newton {
        reason: "initial guess outside the domain".into(),
        residual: f64::NAN,
    })?;
    for iter in 0..=opts.max_iter {
        if r.abs() <= opts.tol {
            p.residual = r;
            return Ok(TrimSolve { point: p, iterations: iter });
        }
        if iter == opts.max_iter {
            break;
        }
        let g = trim_residual_grads_unchecked(model, p.s, p.v_th, &p.u);
        let d = match unknown {
            TrimUnknown::Shape => g.ds,
            TrimUnknown::CyclicVelocity => g.dv_th,
            TrimUnknown::Control(k) => g.du[k],
        };
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Newton { reason: "singular Newton step".into(), residual: r });
        }
        let z = get(&p);
        let mut step = -r / d;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let mut trial = p.clone();
            set(&mut trial, z + step);
            if let Some(rt) = eval(&trial) {
                if rt.abs() < r.abs() {
                    p = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::Newton { reason: "step halving failed to reduce the residual".into(), residual: r });
        }
    }
    Err(Error::Newton { reason: format!("no convergence in {} iterations", opts.max_iter), residual: r })
}

/// Closed-form trim trajectory sampled on `grid`, starting at `θ = th0` at `grid[0]`.
pub fn trim_trajectory<M: MechModel + ?Sized>(tp: &TrimPoint, model: &M, th0: f64, grid: &[f64]) -> Result<Trajectory> {
    check_domain(model, tp.s)?;
    check_len(model, &tp.u)?;
    let t0 = grid.first().copied().unwrap_or(0.0);
    let states = grid.iter().map(|t| tp.state(th0 + tp.v_th * (t - t0))).collect();
    let controls = vec![tp.u.clone(); grid.len().saturating_sub(1)];
    Trajectory::new(grid.to_vec(), states, controls)
}

/// Distance of `x` to the trim manifold.
///
/// For surjective shape forcing this is `|v_s|`. Otherwise the smallest
/// reachable `|T|` is added; it is found by Gauss-Newton in `u`, with a grid
/// scan as fallback.
pub fn manifold_distance<M: MechModel + ?Sized>(model: &M, x: &State) -> f64 {
    if model.forcing_surjective() {
        return x.v_s.abs();
    }
    x.v_s.abs() + min_trim_residual(model, x.s, x.v_th)
}

fn min_trim_residual<M: MechModel + ?Sized>(model: &M, s: f64, v_th: f64) -> f64 {
    let m = model.control_dim();
    let mut u = vec![0.0; m];
    let mut r = trim_residual_unchecked(model, s, v_th, &u);
    for _ in 0..50 {
        if r.abs() <= 1e-10 {
            return r.abs();
        }
        let g = trim_residual_grads_unchecked(model, s, v_th, &u).du;
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 || !gg.is_finite() {
            break;
        }
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - alpha * r * gi / gg).collect();
            let rt = trim_residual_unchecked(model, s, v_th, &trial);
            if rt.abs() < r.abs() {
                u = trial;
                r = rt;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if r.abs() <= 1e-10 {
        return r.abs();
    }
    log::warn!("trim residual minimization in u stalled at |T| = {:e}; scanning a control grid", r.abs());
    let mut best = r.abs();
    for k in 0..m {
        let mut trial = u.clone();
        for j in 0..=400 {
            trial[k] = u[k] - 20.0 + 0.1 * j as f64;
            let rt = trim_residual_unchecked(model, s, v_th, &trial).abs();
            if rt < best {
                best = rt;
            }
        }
    }
    best
}

/// `√(v_s² + w T(s, v_θ, u)²)` with the applied control `u`.
pub fn combined_residual<M: MechModel + ?Sized>(model: &M, x: &State, u: &[f64], w: f64) -> Result<f64> {
    let t = trim_residual(model, x.s, x.v_th, u)?;
    Ok((x.v_s * x.v_s + w * t * t).sqrt())
}
