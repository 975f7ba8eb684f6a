//! The problem restricted to the trim manifold and its steady-state version.
//!
//! On the manifold `s ≡ s̄` and `v_s ≡ 0`, the cyclic dynamics reduce to
//! `θ̇ = v`, `v̇ = M22(s̄)⁻¹ f_θ(u)` and the shape equation becomes the path
//! constraint `T(s̄, v, u) = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{control_reference, fd_hessian, StageCost, DOMAIN_MARGIN};
use crate::error::{Error, Result};
use crate::model::{uniform_grid, CoState, MechModel, State, Trajectory};
use crate::nco::{sop_stationarity_residuals, NcoResidualReport};
use crate::nlp::{
    solve_sqp, HessianBlock, HessianKind, KktResiduals, NlpProblem, NlpStatus, SqpOptions, Triplets,
};
use crate::trim::{trim_residual_grads_unchecked, trim_residual_unchecked, TrimPoint};

/// Acceleration `a = M22(s)⁻¹ f_θ(u)` with `∂a/∂s` and `∂a/∂u`.
fn cyclic_accel<M: MechModel + ?Sized>(model: &M, s: f64, u: &[f64]) -> (f64, f64, Vec<f64>) {
    let inv22 = 1.0 / model.m22(s);
    let fth = model.f_th(u);
    let mut du = vec![0.0; u.len()];
    model.f_th_jac(u, &mut du);
    du.iter_mut().for_each(|d| *d *= inv22);
    (fth * inv22, -model.m22_d(s) * inv22 * inv22 * fth, du)
}

/// Cost Hessian restricted to `(s, v_θ, u)`.
fn reduced_cost_hessian<M: MechModel + ?Sized>(cost: &StageCost, model: &M, x: &State, u: &[f64], gn: bool) -> DMatrix<f64> {
    let full = cost.hessian(model, x, u, gn);
    let m = u.len();
    let idx: Vec<usize> = [0, 3].into_iter().chain(4..4 + m).collect();
    DMatrix::from_fn(2 + m, 2 + m, |a, b| full[(idx[a], idx[b])])
}

struct TocpProblem<'a, M: MechModel + ?Sized> {
    model: &'a M,
    cost: &'a StageCost,
    th0: f64,
    v0: f64,
    intervals: usize,
    m: usize,
    h: f64,
}

impl<M: MechModel + ?Sized> TocpProblem<'_, M> {
    fn th(&self, i: usize) -> usize {
        1 + i
    }
    fn v(&self, i: usize) -> usize {
        2 + self.intervals + i
    }
    fn u(&self, i: usize) -> usize {
        3 + 2 * self.intervals + self.m * i
    }
    fn ctrl<'z>(&self, z: &'z [f64], i: usize) -> &'z [f64] {
        &z[self.u(i)..self.u(i) + self.m]
    }
    fn point(&self, z: &[f64], i: usize) -> State {
        State::new(z[0], 0.0, z[self.th(i)], z[self.v(i)])
    }
    fn path_row(&self, i: usize) -> usize {
        2 + 2 * self.intervals + i
    }

    /// Gradient in `(s̄, v_i, u_i)` of the interval's Lagrangian terms that
    /// are nonlinear in those variables.
    fn local_grad(&self, w: &[f64], mu_th: f64, mu_v: f64, eta: f64) -> Vec<f64> {
        let (s, v, u) = (w[0], w[1], &w[2..]);
        let x = State::new(s, 0.0, 0.0, v);
        let g = self.cost.gradient(self.model, &x, u);
        let t = trim_residual_grads_unchecked(self.model, s, v, u);
        let (_, a_s, a_u) = cyclic_accel(self.model, s, u);
        let k = -(0.5 * self.h * self.h * mu_th + self.h * mu_v);
        let mut out = vec![0.0; 2 + self.m];
        out[0] = self.h * g.x[0] + eta * t.ds + k * a_s;
        out[1] = self.h * g.x[3] + eta * t.dv_th;
        for j in 0..self.m {
            out[2 + j] = self.h * g.u[j] + eta * t.du[j] + k * a_u[j];
        }
        out
    }
}

impl<M: MechModel + ?Sized> NlpProblem for TocpProblem<'_, M> {
    fn n(&self) -> usize {
        1 + 2 * (self.intervals + 1) + self.m * self.intervals
    }

    fn n_eq(&self) -> usize {
        2 + 3 * self.intervals
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; self.n()];
        lo[0] = self.model.s_min() + DOMAIN_MARGIN;
        (lo, vec![f64::INFINITY; self.n()])
    }

    fn objective(&self, z: &[f64]) -> f64 {
        (0..self.intervals).map(|i| self.cost.value(self.model, &self.point(z, i), self.ctrl(z, i))).sum::<f64>() * self.h
    }

    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        for i in 0..self.intervals {
            let cg = self.cost.gradient(self.model, &self.point(z, i), self.ctrl(z, i));
            g[0] += self.h * cg.x[0];
            g[self.v(i)] = self.h * cg.x[3];
            for j in 0..self.m {
                g[self.u(i) + j] = self.h * cg.u[j];
            }
        }
    }

    fn eq_constraints(&self, z: &[f64], c: &mut [f64]) {
        let h = self.h;
        c[0] = z[self.th(0)] - self.th0;
        c[1] = z[self.v(0)] - self.v0;
        for i in 0..self.intervals {
            let u = self.ctrl(z, i);
            // RK4 integrates this constant-acceleration system exactly
            let (a, _, _) = cyclic_accel(self.model, z[0], u);
            c[2 + 2 * i] = z[self.th(i + 1)] - z[self.th(i)] - h * z[self.v(i)] - 0.5 * h * h * a;
            c[3 + 2 * i] = z[self.v(i + 1)] - z[self.v(i)] - h * a;
            c[self.path_row(i)] = trim_residual_unchecked(self.model, z[0], z[self.v(i)], u);
        }
    }

    fn eq_jacobian(&self, z: &[f64]) -> Triplets {
        let h = self.h;
        let mut t = Triplets::with_capacity(self.n_eq(), self.n(), 2 + self.intervals * (10 + 3 * self.m));
        t.push(0, self.th(0), 1.0);
        t.push(1, self.v(0), 1.0);
        for i in 0..self.intervals {
            let u = self.ctrl(z, i);
            let (_, a_s, a_u) = cyclic_accel(self.model, z[0], u);
            let r = 2 + 2 * i;
            t.push(r, self.th(i + 1), 1.0);
            t.push(r, self.th(i), -1.0);
            t.push(r, self.v(i), -h);
            t.push(r, 0, -0.5 * h * h * a_s);
            t.push(r + 1, self.v(i + 1), 1.0);
            t.push(r + 1, self.v(i), -1.0);
            t.push(r + 1, 0, -h * a_s);
            for j in 0..self.m {
                t.push(r, self.u(i) + j, -0.5 * h * h * a_u[j]);
                t.push(r + 1, self.u(i) + j, -h * a_u[j]);
            }
            let g = trim_residual_grads_unchecked(self.model, z[0], z[self.v(i)], u);
            let p = self.path_row(i);
            t.push(p, 0, g.ds);
            t.push(p, self.v(i), g.dv_th);
            for j in 0..self.m {
                t.push(p, self.u(i) + j, g.du[j]);
            }
        }
        t
    }

    fn hessian_blocks(&self, z: &[f64], mult_eq: &[f64], _mult_ineq: &[f64], kind: HessianKind) -> Option<Vec<HessianBlock>> {
        let mut blocks = Vec::with_capacity(self.intervals);
        for i in 0..self.intervals {
            let u = self.ctrl(z, i);
            let matrix = match kind {
                HessianKind::GaussNewton => reduced_cost_hessian(self.cost, self.model, &self.point(z, i), u, true) * self.h,
                HessianKind::Exact => {
                    let (mu_th, mu_v, eta) = (mult_eq[2 + 2 * i], mult_eq[3 + 2 * i], mult_eq[self.path_row(i)]);
                    let mut w = vec![z[0], z[self.v(i)]];
                    w.extend_from_slice(u);
                    // reuse the state-space helper: put (s̄, v, u) in the (s, v_s, …) slots
                    let x = State::new(w[0], w[1], 0.0, 0.0);
                    let full = fd_hessian(&x, &w[2..], |xx, uu| {
                        let mut ww = vec![xx.s, xx.v_s];
                        ww.extend_from_slice(uu);
                        let g = self.local_grad(&ww, mu_th, mu_v, eta);
                        let mut out = vec![g[0], g[1], 0.0, 0.0];
                        out.extend_from_slice(&g[2..]);
                        out
                    });
                    let idx: Vec<usize> = [0, 1].into_iter().chain(4..4 + self.m).collect();
                    DMatrix::from_fn(2 + self.m, 2 + self.m, |a, b| full[(idx[a], idx[b])])
                }
            };
            let mut indices = vec![0, self.v(i)];
            indices.extend(self.u(i)..self.u(i) + self.m);
            blocks.push(HessianBlock { indices, matrix });
        }
        Some(blocks)
    }
}

/// Solution of the problem on the trim manifold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TocpSolution {
    pub times: Vec<f64>,
    pub s_bar: f64,
    pub theta: Vec<f64>,
    pub v_theta: Vec<f64>,
    /// One control per interval.
    pub u: Vec<Vec<f64>>,
    /// `λ̄_θ̄` at every node.
    pub l_theta: Vec<f64>,
    /// `λ̄_v̄` at every node.
    pub l_vtheta: Vec<f64>,
    /// `λ̄_𝒯` on every interval, the path multiplier divided by `h`.
    pub l_trim: Vec<f64>,
    pub objective: f64,
    pub status: NlpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// `max_i |T(s̄, v_i, u_i)|`.
    pub max_trim_residual: f64,
}

impl TocpSolution {
    pub fn converged(&self) -> bool {
        self.status == NlpStatus::Converged
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Full-state trajectory `(s̄, 0, θ̄, v̄)`; costates are left out.
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let states = self.theta.iter().zip(&self.v_theta).map(|(&th, &v)| State::new(self.s_bar, 0.0, th, v)).collect();
        Trajectory::new(self.times.clone(), states, self.u.clone())
    }

    /// Reduced costates arranged as full costates `(0, λ̄_𝒯, λ̄_θ̄, λ̄_v̄)`; the
    /// last node repeats the last path multiplier.
    pub fn costates_as_full(&self) -> Vec<CoState> {
        (0..self.times.len())
            .map(|i| {
                let lt = self.l_trim[i.min(self.l_trim.len() - 1)];
                CoState::new(0.0, lt, self.l_theta[i], self.l_vtheta[i])
            })
            .collect()
    }
}

/// Solves the reduced problem on the trim manifold from `(θ⁰, v_θ⁰)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_tocp<M: MechModel + ?Sized>(
    model: &M,
    cost: &StageCost,
    th0: f64,
    v_th0: f64,
    horizon: f64,
    intervals: usize,
    s_guess: f64,
    opts: &SqpOptions,
) -> Result<TocpSolution> {
    let m = model.control_dim();
    cost.validate(m)?;
    if !(horizon > 0.0 && horizon.is_finite()) || intervals == 0 {
        return Err(Error::InvalidArgument("horizon must be positive with at least one interval".into()));
    }
    if !(s_guess > model.s_min()) {
        return Err(Error::Domain { s: s_guess, s_min: model.s_min() });
    }
    if !(th0.is_finite() && v_th0.is_finite()) {
        return Err(Error::InvalidArgument("initial cyclic state is not finite".into()));
    }
    let h = horizon / intervals as f64;
    let problem = TocpProblem { model, cost, th0, v0: v_th0, intervals, m, h };
    let times = uniform_grid(horizon, intervals);

    let mut z0 = vec![0.0; problem.n()];
    z0[0] = s_guess;
    let u_ref = control_reference(cost, m);
    for (i, t) in times.iter().enumerate() {
        z0[problem.th(i)] = th0 + v_th0 * t;
        z0[problem.v(i)] = v_th0;
    }
    for i in 0..intervals {
        z0[problem.u(i)..problem.u(i) + m].copy_from_slice(&u_ref);
    }

    let sol = solve_sqp(&problem, &z0, opts)?;
    let z = &sol.x;
    let mu = &sol.mult_eq;
    let mut l_theta = vec![-mu[0]];
    let mut l_vtheta = vec![-mu[1]];
    for i in 0..intervals {
        l_theta.push(-mu[2 + 2 * i]);
        l_vtheta.push(-mu[3 + 2 * i]);
    }
    let l_trim: Vec<f64> = (0..intervals).map(|i| mu[problem.path_row(i)] / h).collect();
    let u: Vec<Vec<f64>> = (0..intervals).map(|i| problem.ctrl(z, i).to_vec()).collect();
    let v_theta: Vec<f64> = (0..=intervals).map(|i| z[problem.v(i)]).collect();
    let max_trim_residual = (0..intervals)
        .map(|i| trim_residual_unchecked(model, z[0], v_theta[i], &u[i]).abs())
        .fold(0.0, f64::max);
    if sol.status != NlpStatus::Converged {
        log::warn!("reduced problem ended with status {}", sol.status);
    }
    Ok(TocpSolution {
        times,
        s_bar: z[0],
        theta: (0..=intervals).map(|i| z[problem.th(i)]).collect(),
        v_theta,
        u,
        l_theta,
        l_vtheta,
        l_trim,
        objective: sol.objective,
        status: sol.status,
        kkt: sol.kkt,
        iterations: sol.iterations,
        max_trim_residual,
    })
}

struct SopProblem<'a, M: MechModel + ?Sized> {
    model: &'a M,
    cost: &'a StageCost,
}

impl<M: MechModel + ?Sized> SopProblem<'_, M> {
    fn split<'z>(&self, z: &'z [f64]) -> (State, &'z [f64]) {
        (State::new(z[0], 0.0, 0.0, z[1]), &z[2..])
    }
}

impl<M: MechModel + ?Sized> NlpProblem for SopProblem<'_, M> {
    fn n(&self) -> usize {
        2 + self.model.control_dim()
    }
    fn n_eq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; self.n()];
        lo[0] = self.model.s_min() + DOMAIN_MARGIN;
        (lo, vec![f64::INFINITY; self.n()])
    }
    fn objective(&self, z: &[f64]) -> f64 {
        let (x, u) = self.split(z);
        self.cost.value(self.model, &x, u)
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        let (x, u) = self.split(z);
        let cg = self.cost.gradient(self.model, &x, u);
        g[0] = cg.x[0];
        g[1] = cg.x[3];
        g[2..].copy_from_slice(&cg.u);
    }
    fn eq_constraints(&self, z: &[f64], c: &mut [f64]) {
        c[0] = trim_residual_unchecked(self.model, z[0], z[1], &z[2..]);
    }
    fn eq_jacobian(&self, z: &[f64]) -> Triplets {
        let g = trim_residual_grads_unchecked(self.model, z[0], z[1], &z[2..]);
        let mut row = vec![g.ds, g.dv_th];
        row.extend_from_slice(&g.du);
        Triplets::from_dense(&DMatrix::from_row_slice(1, self.n(), &row))
    }
}

/// Optimal trim: minimizes `ℓ(s̄, 0, v̄_θ, ū)` subject to `T(s̄, v̄_θ, ū) = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SopSolution {
    pub s_bar: f64,
    pub v_theta_bar: f64,
    pub u_bar: Vec<f64>,
    /// Multiplier `λ̄` of the trim constraint.
    pub lambda: f64,
    pub objective: f64,
    pub residuals: NcoResidualReport,
    pub status: NlpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

/// Steady-state optimization over trims; requires `f_θ ≡ 0` on the model.
pub fn solve_sop<M: MechModel + ?Sized>(model: &M, cost: &StageCost, guess: &TrimPoint, opts: &SqpOptions) -> Result<SopSolution> {
    if !model.orthogonal_forcing() {
        return Err(Error::InvalidArgument(
            "steady-state optimization needs a model whose forcing does not act on the cyclic coordinate".into(),
        ));
    }
    cost.validate(model.control_dim())?;
    if guess.u.len() != model.control_dim() {
        return Err(Error::Dimension(format!("guess control of length {}", guess.u.len())));
    }
    let problem = SopProblem { model, cost };
    let mut z0 = vec![guess.s, guess.v_th];
    z0.extend_from_slice(&guess.u);
    let sol = solve_sqp(&problem, &z0, opts)?;
    let (s_bar, v_theta_bar, u_bar) = (sol.x[0], sol.x[1], sol.x[2..].to_vec());
    let lambda = sol.mult_eq[0];
    let residuals = sop_stationarity_residuals(model, cost, s_bar, v_theta_bar, &u_bar, lambda, 1e-8);
    Ok(SopSolution {
        s_bar,
        v_theta_bar,
        u_bar,
        lambda,
        objective: sol.objective,
        residuals,
        status: sol.status,
        kkt: sol.kkt,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use crate::ocp::CustomCost;
    use crate::presets::{kepler_model, kepler_model_orthogonal, KeplerParams};

    fn exact() -> SqpOptions {
        SqpOptions { hessian: crate::nlp::HessianMode::Exact, ..Default::default() }
    }

    fn fig1_cost(p: &KeplerParams) -> StageCost {
        StageCost::Quadratic { x_ref: p.circular_state(4.5), q: [1.0, 1.0, 0.0, 1.0], u_ref: vec![0.0, 0.0], r: vec![1e-2, 1e-2] }
    }

    #[test]
    fn sop_finds_the_reference_orbit() {
        let p = KeplerParams::default();
        let model = kepler_model_orthogonal(&p);
        let guess = TrimPoint::new(&model, 5.0, p.circular_speed(5.0), vec![0.0, 0.0]).unwrap();
        let sol = solve_sop(&model, &fig1_cost(&p), &guess, &exact()).unwrap();
        assert_eq!(sol.status, NlpStatus::Converged);
        assert!((sol.s_bar - 4.5).abs() < 1e-6);
        assert!((sol.v_theta_bar - p.circular_speed(4.5)).abs() < 1e-6);
        assert!(sol.u_bar[0].abs() < 1e-6);
        assert!(sol.residuals.max_abs <= 1e-8);
    }

    #[test]
    fn sop_rejects_cyclic_forcing() {
        let p = KeplerParams::default();
        let guess = TrimPoint::new(&kepler_model(&p), 5.0, p.circular_speed(5.0), vec![0.0, 0.0]).unwrap();
        assert!(solve_sop(&kepler_model(&p), &fig1_cost(&p), &guess, &exact()).is_err());
    }

    #[test]
    fn sop_hand_solved_toy() {
        // M11 = M22 = 1, V = ½ s², f_s = u: T = −s + u; ℓ = s² + u² ⇒ s̄ = ū = 0
        let model = FnModel::unit_mass(1)
            .with_potential(|s| 0.5 * s * s, |s| s, |_| 1.0)
            .with_s_min(f64::NEG_INFINITY);
        let cost = StageCost::Custom(CustomCost::new(
            |s, _, _, u| s * s + u[0] * u[0],
            |s, _, _, u, g| {
                g[0] = 2.0 * s;
                g[1] = 0.0;
                g[2] = 0.0;
                g[3] = 2.0 * u[0];
            },
        ));
        let guess = TrimPoint { s: 1.0, v_th: 0.3, u: vec![1.0], residual: 0.0 };
        let sol = solve_sop(&model, &cost, &guess, &exact()).unwrap();
        assert_eq!(sol.status, NlpStatus::Converged);
        assert!(sol.s_bar.abs() < 1e-8 && sol.u_bar[0].abs() < 1e-8);
        assert!(sol.lambda.abs() < 1e-8);
    }

    #[test]
    fn tocp_without_cyclic_forcing_is_a_trim() {
        let p = KeplerParams::default();
        let model = kepler_model_orthogonal(&p);
        let v0 = p.circular_speed(5.0);
        let sol = solve_tocp(&model, &fig1_cost(&p), 0.0, v0, 5.0, 25, 5.0, &exact()).unwrap();
        assert!(sol.converged());
        assert!(sol.v_theta.iter().all(|v| (v - v0).abs() < 1e-8));
        for i in 1..sol.u.len() {
            assert!((sol.u[i][0] - sol.u[0][0]).abs() < 1e-6);
        }
        for i in 0..sol.theta.len() {
            assert!((sol.theta[i] - v0 * sol.times[i]).abs() < 1e-8);
        }
        assert!(sol.max_trim_residual <= 1e-8);
        assert!(sol.l_theta.iter().all(|l| l.abs() < 1e-8));
    }

    /// One interval, unit masses, no potential, `f = (u_0, u_1)`, quadratic
    /// cost: few enough unknowns to check against a grid search.
    #[test]
    fn tocp_single_interval_matches_grid_search() {
        let model = FnModel::unit_mass(2)
            .with_shape_forcing(|u| u[0], |_, g| {
                g[0] = 1.0;
                g[1] = 0.0;
            }, true)
            .with_cyclic_forcing(|u| u[1], |_, g| {
                g[0] = 0.0;
                g[1] = 1.0;
            });
        let cost = StageCost::Quadratic { x_ref: State::new(0.5, 0.0, 0.0, 0.0), q: [1.0, 0.0, 0.0, 1.0], u_ref: vec![0.2, 0.3], r: vec![1.0, 1.0] };
        let sol = solve_tocp(&model, &cost, 0.0, 0.4, 1.0, 1, 0.7, &exact()).unwrap();
        assert!(sol.converged());
        // T = u_0 = 0 forces u_0; the remaining objective depends on (s̄, u_1) only through
        // ½ (s̄ − 0.5)² + ½ 0.4² + 0.2² + (u_1 − 0.3)², so s̄ = 0.5 and u_1 = 0.3
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..=100 {
            for b in 0..=100 {
                let s = a as f64 * 0.01;
                let u1 = b as f64 * 0.01;
                let x = State::new(s, 0.0, 0.0, 0.4);
                let val = cost.value(&model, &x, &[0.0, u1]);
                if val < best.0 {
                    best = (val, s, u1);
                }
            }
        }
        assert!((sol.s_bar - best.1).abs() <= 0.01 && (sol.u[0][1] - best.2).abs() <= 0.01);
        assert!(sol.u[0][0].abs() < 1e-10);
        assert!((sol.objective - best.0).abs() < 1e-3);
    }
}
