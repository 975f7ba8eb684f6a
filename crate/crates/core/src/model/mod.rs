//! Lagrangian systems with one shape coordinate `s` and one cyclic coordinate `θ`.
//!
//! The mass matrix is block diagonal, `M(s) = diag(M11(s), M22(s))`, and the
//! potential depends on the shape only. In first-order form the state is
//! `x = (s, v_s, θ, v_θ)`:
//!
//! ```text
//! ṡ   = v_s
//! v̇_s = M11⁻¹ (½ M22' v_θ² − ½ M11' v_s² − V' + f_s(u))
//! θ̇   = v_θ
//! v̇_θ = M22⁻¹ (−M22' v_θ v_s + f_θ(u))
//! ```
//!
//! The same system in momentum coordinates `z = (s, p_s, θ, p_θ)` with
//! `p_s = M11 v_s`, `p_θ = M22 v_θ` is available through [`ham_rhs`].

mod check;
mod fn_model;
mod integrate;
mod io;

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use check::{check_derivatives, DerivativeReport, DerivativeViolation};
pub use fn_model::FnModel;
pub(crate) use integrate::rk4_step_unchecked;
pub use integrate::{rk4_step, rk4_step_sensitivity, simulate, uniform_grid, StepSensitivity};
pub use io::{read_trajectory_csv, trajectory_csv_header, write_trajectory_csv};

/// A mechanical system with block-diagonal mass matrix, one shape and one
/// cyclic coordinate, and `m` scalar controls.
///
/// Implementors supply analytic first and second derivatives of the mass
/// blocks and the potential; [`check_derivatives`] validates them against
/// finite differences.
pub trait MechModel: Send + Sync {
    fn control_dim(&self) -> usize;

    /// Exclusive lower bound of the shape coordinate.
    fn s_min(&self) -> f64 {
        0.0
    }

    fn m11(&self, s: f64) -> f64;
    fn m11_d(&self, s: f64) -> f64;
    fn m11_dd(&self, s: f64) -> f64;

    fn m22(&self, s: f64) -> f64;
    fn m22_d(&self, s: f64) -> f64;
    fn m22_dd(&self, s: f64) -> f64;

    fn pot(&self, s: f64) -> f64;
    fn pot_d(&self, s: f64) -> f64;
    fn pot_dd(&self, s: f64) -> f64;

    /// Generalized force on the shape coordinate.
    fn f_s(&self, u: &[f64]) -> f64;
    /// Writes `∂f_s/∂u` into `out` (length `control_dim`).
    fn f_s_jac(&self, u: &[f64], out: &mut [f64]);

    /// Generalized force on the cyclic coordinate.
    fn f_th(&self, u: &[f64]) -> f64;
    fn f_th_jac(&self, u: &[f64], out: &mut [f64]);

    /// `true` when `f_s` maps the control space onto all of ℝ. The trim
    /// manifold is then exactly `{v_s = 0}`.
    fn forcing_surjective(&self) -> bool {
        false
    }

    /// `true` when the model declares `f_θ ≡ 0` (forcing orthogonal to the
    /// cyclic direction). The cyclic momentum is then conserved.
    fn orthogonal_forcing(&self) -> bool {
        false
    }

    /// Range of `s` used when sampling the model for checks.
    fn shape_sample_range(&self) -> (f64, f64) {
        let lo = self.s_min() + 0.5;
        (lo, lo + 10.0)
    }
}

/// Primal state `(s, v_s, θ, v_θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub s: f64,
    pub v_s: f64,
    pub th: f64,
    pub v_th: f64,
}

impl State {
    pub const fn new(s: f64, v_s: f64, th: f64, v_th: f64) -> Self {
        Self { s, v_s, th, v_th }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.s, self.v_s, self.th, self.v_th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.s, self.v_s, self.th, self.v_th)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Adjoint of the primal state, `(λ_s, λ_{v_s}, λ_θ, λ_{v_θ})`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoState {
    pub l_s: f64,
    pub l_vs: f64,
    pub l_th: f64,
    pub l_vth: f64,
}

impl CoState {
    pub const fn new(l_s: f64, l_vs: f64, l_th: f64, l_vth: f64) -> Self {
        Self { l_s, l_vs, l_th, l_vth }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.l_s, self.l_vs, self.l_th, self.l_vth]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// State in momentum coordinates `(s, p_s, θ, p_θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamState {
    pub s: f64,
    pub p_s: f64,
    pub th: f64,
    pub p_th: f64,
}

impl HamState {
    pub const fn new(s: f64, p_s: f64, th: f64, p_th: f64) -> Self {
        Self { s, p_s, th, p_th }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.s, self.p_s, self.th, self.p_th]
    }
}

/// Sampled trajectory with piecewise-constant controls.
///
/// `controls[i]` acts on `[times[i], times[i+1])`. Costates, when present,
/// are given per node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<Vec<f64>>,
    pub costates: Option<Vec<CoState>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<State>, controls: Vec<Vec<f64>>) -> Result<Self> {
        let traj = Self { times, states, controls, costates: None };
        traj.validate()?;
        Ok(traj)
    }

    pub fn with_costates(mut self, costates: Vec<CoState>) -> Result<Self> {
        if costates.len() != self.states.len() {
            return Err(Error::Dimension(format!(
                "{} costates for {} nodes",
                costates.len(),
                self.states.len()
            )));
        }
        self.costates = Some(costates);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.times.len() {
            return Err(Error::Dimension(format!(
                "{} states for {} time nodes",
                self.states.len(),
                self.times.len()
            )));
        }
        if !self.times.is_empty() && self.controls.len() + 1 != self.times.len() {
            return Err(Error::Dimension(format!(
                "{} controls for {} time nodes",
                self.controls.len(),
                self.times.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        if let Some(c) = &self.costates {
            if c.len() != self.states.len() {
                return Err(Error::Dimension("costate count differs from node count".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, Vec::len)
    }

    /// Control applied at node `i`; the last node reuses the final interval's control.
    pub fn control_at_node(&self, i: usize) -> &[f64] {
        let k = i.min(self.controls.len().saturating_sub(1));
        &self.controls[k]
    }
}

pub(crate) fn check_domain<M: MechModel + ?Sized>(model: &M, s: f64) -> Result<()> {
    if s > model.s_min() && s.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { s, s_min: model.s_min() })
    }
}

fn check_control<M: MechModel + ?Sized>(model: &M, u: &[f64]) -> Result<()> {
    if u.len() != model.control_dim() {
        return Err(Error::Dimension(format!(
            "control of length {} for a model with {} inputs",
            u.len(),
            model.control_dim()
        )));
    }
    Ok(())
}

/// Right-hand side of the first-order Euler-Lagrange equations.
pub fn el_rhs<M: MechModel + ?Sized>(model: &M, x: &State, u: &[f64]) -> Result<Vector4<f64>> {
    check_domain(model, x.s)?;
    check_control(model, u)?;
    Ok(el_rhs_unchecked(model, x, u))
}

pub(crate) fn el_rhs_unchecked<M: MechModel + ?Sized>(model: &M, x: &State, u: &[f64]) -> Vector4<f64> {
    let s = x.s;
    let m11 = model.m11(s);
    let m22 = model.m22(s);
    let acc_s = (0.5 * model.m22_d(s) * x.v_th * x.v_th - 0.5 * model.m11_d(s) * x.v_s * x.v_s
        - model.pot_d(s)
        + model.f_s(u))
        / m11;
    let acc_th = (-model.m22_d(s) * x.v_th * x.v_s + model.f_th(u)) / m22;
    Vector4::new(x.v_s, acc_s, x.v_th, acc_th)
}

/// Jacobians `(∂f/∂x, ∂f/∂u)` of [`el_rhs`]; the second is `4 × m`.
///
/// Row two carries `L1 = ∂/∂s (T − ½ M11⁻¹ M11' v_s²)` in its first column and
/// row four carries `L2`.
pub fn el_jacobian<M: MechModel + ?Sized>(
    model: &M,
    x: &State,
    u: &[f64],
) -> (Matrix4<f64>, DMatrix<f64>) {
    let s = x.s;
    let (vs, vth) = (x.v_s, x.v_th);
    let m11 = model.m11(s);
    let m11_d = model.m11_d(s);
    let m22 = model.m22(s);
    let m22_d = model.m22_d(s);
    let m22_dd = model.m22_dd(s);
    let inv11 = 1.0 / m11;
    let inv22 = 1.0 / m22;
    let inv11_d = -m11_d * inv11 * inv11;
    let inv22_d = -m22_d * inv22 * inv22;
    let fs = model.f_s(u);
    let fth = model.f_th(u);

    let bracket_s = 0.5 * m22_d * vth * vth - 0.5 * m11_d * vs * vs - model.pot_d(s) + fs;
    let l1 = inv11_d * bracket_s
        + inv11 * (0.5 * m22_dd * vth * vth - 0.5 * model.m11_dd(s) * vs * vs - model.pot_dd(s));
    let l2 = inv22_d * (-m22_d * vth * vs) - inv22 * m22_dd * vth * vs + inv22_d * fth;

    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        l1, -inv11 * m11_d * vs, 0.0, inv11 * m22_d * vth,
        0.0, 0.0, 0.0, 1.0,
        l2, -inv22 * m22_d * vth, 0.0, -inv22 * m22_d * vs,
    );

    let m = model.control_dim();
    let mut js = vec![0.0; m];
    let mut jth = vec![0.0; m];
    model.f_s_jac(u, &mut js);
    model.f_th_jac(u, &mut jth);
    let mut b = DMatrix::zeros(4, m);
    for k in 0..m {
        b[(1, k)] = inv11 * js[k];
        b[(3, k)] = inv22 * jth[k];
    }
    (a, b)
}

/// Right-hand side of the Hamilton equations in `(s, p_s, θ, p_θ)`.
pub fn ham_rhs<M: MechModel + ?Sized>(model: &M, z: &HamState, u: &[f64]) -> Result<Vector4<f64>> {
    check_domain(model, z.s)?;
    check_control(model, u)?;
    let s = z.s;
    let inv11 = 1.0 / model.m11(s);
    let inv22 = 1.0 / model.m22(s);
    let inv11_d = -model.m11_d(s) * inv11 * inv11;
    let inv22_d = -model.m22_d(s) * inv22 * inv22;
    Ok(Vector4::new(
        inv11 * z.p_s,
        -0.5 * inv11_d * z.p_s * z.p_s - 0.5 * inv22_d * z.p_th * z.p_th - model.pot_d(s)
            + model.f_s(u),
        inv22 * z.p_th,
        model.f_th(u),
    ))
}

/// Legendre map `(s, v_s, θ, v_θ) ↦ (s, M11 v_s, θ, M22 v_θ)`.
pub fn legendre_to_ham<M: MechModel + ?Sized>(model: &M, x: &State) -> Result<HamState> {
    check_domain(model, x.s)?;
    Ok(HamState::new(x.s, model.m11(x.s) * x.v_s, x.th, model.m22(x.s) * x.v_th))
}

/// Inverse Legendre map.
pub fn legendre_to_el<M: MechModel + ?Sized>(model: &M, z: &HamState) -> Result<State> {
    check_domain(model, z.s)?;
    Ok(State::new(z.s, z.p_s / model.m11(z.s), z.th, z.p_th / model.m22(z.s)))
}

/// Jacobian of the Legendre map with respect to the primal state.
pub fn legendre_jacobian<M: MechModel + ?Sized>(model: &M, x: &State) -> Matrix4<f64> {
    let s = x.s;
    #[rustfmt::skip]
    let j = Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        model.m11_d(s) * x.v_s, model.m11(s), 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        model.m22_d(s) * x.v_th, 0.0, 0.0, model.m22(s),
    );
    j
}

/// `L = ½(M11 v_s² + M22 v_θ²) − V(s)`.
pub fn lagrangian<M: MechModel + ?Sized>(model: &M, x: &State) -> Result<f64> {
    check_domain(model, x.s)?;
    let s = x.s;
    Ok(0.5 * (model.m11(s) * x.v_s * x.v_s + model.m22(s) * x.v_th * x.v_th) - model.pot(s))
}

/// `H = ½(p_s²/M11 + p_θ²/M22) + V(s)`.
pub fn hamiltonian_energy<M: MechModel + ?Sized>(model: &M, z: &HamState) -> Result<f64> {
    check_domain(model, z.s)?;
    let s = z.s;
    Ok(0.5 * (z.p_s * z.p_s / model.m11(s) + z.p_th * z.p_th / model.m22(s)) + model.pot(s))
}

/// Cyclic momentum `p_θ = M22(s) v_θ`.
pub fn momentum<M: MechModel + ?Sized>(model: &M, x: &State) -> f64 {
    model.m22(x.s) * x.v_th
}
