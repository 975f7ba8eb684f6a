//! The planar Kepler problem and the two reference experiments built on it.
//!
//! With `s` the orbit radius and `θ` the polar angle, `M11 = m2`,
//! `M22 = m2 s²`, `V = −k/s`, `f_s = u_s` and `f_θ = u_θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MechModel, State};
use crate::ocp::{OcpSpec, StageCost, Terminal};

/// Gravitational product `k = γ m1 m2` and orbiting mass `m2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeplerParams {
    pub k: f64,
    pub m2: f64,
}

impl Default for KeplerParams {
    fn default() -> Self {
        Self { k: 1.016895192894334e3, m2: 1.0 }
    }
}

impl KeplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.k > 0.0 && self.m2 > 0.0 && self.k.is_finite() && self.m2.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("kepler parameters must be positive, got {self:?}")))
        }
    }

    /// Angular velocity of the unforced circular orbit of radius `s`.
    pub fn circular_speed(&self, s: f64) -> f64 {
        (self.k / (self.m2 * s.powi(3))).sqrt()
    }

    /// Unforced circular orbit of radius `s` starting at `θ = 0`.
    pub fn circular_state(&self, s: f64) -> State {
        State::new(s, 0.0, 0.0, self.circular_speed(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerModel {
    pub params: KeplerParams,
    cyclic_forcing: bool,
}

/// Kepler model with both controls active.
pub fn kepler_model(params: &KeplerParams) -> KeplerModel {
    KeplerModel { params: *params, cyclic_forcing: true }
}

/// Kepler model whose second control does not act (`f_θ ≡ 0`), so that the
/// angular momentum is conserved under any control.
pub fn kepler_model_orthogonal(params: &KeplerParams) -> KeplerModel {
    KeplerModel { params: *params, cyclic_forcing: false }
}

impl MechModel for KeplerModel {
    fn control_dim(&self) -> usize {
        2
    }
    fn s_min(&self) -> f64 {
        0.1
    }
    fn m11(&self, _s: f64) -> f64 {
        self.params.m2
    }
    fn m11_d(&self, _s: f64) -> f64 {
        0.0
    }
    fn m11_dd(&self, _s: f64) -> f64 {
        0.0
    }
    fn m22(&self, s: f64) -> f64 {
        self.params.m2 * s * s
    }
    fn m22_d(&self, s: f64) -> f64 {
        2.0 * self.params.m2 * s
    }
    fn m22_dd(&self, _s: f64) -> f64 {
        2.0 * self.params.m2
    }
    fn pot(&self, s: f64) -> f64 {
        -self.params.k / s
    }
    fn pot_d(&self, s: f64) -> f64 {
        self.params.k / (s * s)
    }
    fn pot_dd(&self, s: f64) -> f64 {
        -2.0 * self.params.k / (s * s * s)
    }
    fn f_s(&self, u: &[f64]) -> f64 {
        u[0]
    }
    fn f_s_jac(&self, _u: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = 0.0;
    }
    fn f_th(&self, u: &[f64]) -> f64 {
        if self.cyclic_forcing {
            u[1]
        } else {
            0.0
        }
    }
    fn f_th_jac(&self, _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = if self.cyclic_forcing { 1.0 } else { 0.0 };
    }
    fn forcing_surjective(&self) -> bool {
        true
    }
    fn orthogonal_forcing(&self) -> bool {
        !self.cyclic_forcing
    }
}

/// Transfer from the `s = 5` circular orbit to the `s = 6` orbit with a
/// quadratic cost that favours the `s = 4.5` orbit; `T = 30`, `N = 300`.
///
/// The terminal angle is left free. The state weights are
/// `(s, v_s, θ, v_θ) = (1, 1, 0, 1)`: the cost does not see `θ`.
pub fn preset_fig1(params: &KeplerParams) -> OcpSpec<KeplerModel> {
    let target = params.circular_state(6.0);
    OcpSpec {
        model: kepler_model(params),
        horizon: 30.0,
        intervals: 300,
        cost: StageCost::Quadratic {
            x_ref: params.circular_state(4.5),
            q: [1.0, 1.0, 0.0, 1.0],
            u_ref: vec![0.0, 0.0],
            r: vec![1e-2, 1e-2],
        },
        x0: params.circular_state(5.0),
        terminal: Terminal::Fixed(vec![(0, target.s), (1, target.v_s), (3, target.v_th)]),
        control_bounds: None,
    }
}

/// Start on the `s = 5.3` circular orbit with the trim-penalty cost and no
/// terminal constraint; `T = 100`, `N = 200`.
pub fn preset_fig2(params: &KeplerParams) -> OcpSpec<KeplerModel> {
    OcpSpec {
        model: kepler_model(params),
        horizon: 100.0,
        intervals: 200,
        cost: StageCost::TrimPenalty {
            w_trim: 5e3,
            s_ref: 5.3,
            s_weight: 1.0,
            u_ref: vec![0.0, 1.0],
            r: vec![1e-3, 1e-3],
        },
        x0: params.circular_state(5.3),
        terminal: Terminal::None,
        control_bounds: None,
    }
}
