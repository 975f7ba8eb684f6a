//! Multiple-shooting transcription of the full OCP.
//!
//! Decision vector `[x_0, …, x_N, u_0, …, u_{N−1}]`. Equality rows: the
//! initial state (4), one RK4 defect `x_{i+1} − F(x_i, u_i)` per interval
//! (4 each), then any fixed terminal components. A general terminal
//! constraint `ψ(x_N) ≤ 0` gives the inequality rows.

use nalgebra::DMatrix;

use super::{OcpSpec, Terminal};
use crate::model::{rk4_step_sensitivity, rk4_step_unchecked, MechModel, State};
use crate::nlp::{HessianBlock, HessianKind, NlpProblem, Triplets};

/// Margin kept between the shape coordinate and the model domain bound.
pub const DOMAIN_MARGIN: f64 = 1e-6;

pub struct Transcription<'a, M: MechModel> {
    spec: &'a OcpSpec<M>,
    intervals: usize,
    m: usize,
    h: f64,
}

/// Builds the NLP for `spec`; the spec should have passed [`OcpSpec::validate`].
pub fn transcribe<M: MechModel>(spec: &OcpSpec<M>) -> Transcription<'_, M> {
    Transcription {
        spec,
        intervals: spec.intervals,
        m: spec.model.control_dim(),
        h: spec.step(),
    }
}

impl<'a, M: MechModel> Transcription<'a, M> {
    pub fn state_offset(&self, i: usize) -> usize {
        4 * i
    }

    pub fn control_offset(&self, i: usize) -> usize {
        4 * (self.intervals + 1) + self.m * i
    }

    /// Row of the first defect constraint of interval `i`.
    pub fn defect_row(&self, i: usize) -> usize {
        4 + 4 * i
    }

    pub fn state(&self, z: &[f64], i: usize) -> State {
        State::from_slice(&z[self.state_offset(i)..self.state_offset(i) + 4])
    }

    pub fn control<'z>(&self, z: &'z [f64], i: usize) -> &'z [f64] {
        &z[self.control_offset(i)..self.control_offset(i) + self.m]
    }

    pub fn pack(&self, states: &[State], controls: &[Vec<f64>]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.n());
        for x in states {
            z.extend_from_slice(&x.to_array());
        }
        for u in controls {
            z.extend_from_slice(u);
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> (Vec<State>, Vec<Vec<f64>>) {
        let states = (0..=self.intervals).map(|i| self.state(z, i)).collect();
        let controls = (0..self.intervals).map(|i| self.control(z, i).to_vec()).collect();
        (states, controls)
    }

    fn n_fixed(&self) -> usize {
        match &self.spec.terminal {
            Terminal::Fixed(list) => list.len(),
            _ => 0,
        }
    }

    /// `∇_z (μᵀ F(x, u))` for one interval, `z = (x, u)`.
    fn defect_weighted_grad(&self, z: &[f64], mu: &[f64]) -> Vec<f64> {
        let sens = rk4_step_sensitivity(&self.spec.model, &State::from_slice(&z[..4]), &z[4..], self.h);
        let mut out = vec![0.0; 4 + self.m];
        for c in 0..4 {
            out[c] = (0..4).map(|r| sens.fx[(r, c)] * mu[r]).sum();
        }
        for c in 0..self.m {
            out[4 + c] = (0..4).map(|r| sens.fu[(r, c)] * mu[r]).sum();
        }
        out
    }
}

fn fd_jacobian(z0: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let dim = z0.len();
    let mut h = DMatrix::zeros(dim, dim);
    let mut z = z0.to_vec();
    for j in 0..dim {
        let step = 1e-6 * z0[j].abs().max(1.0);
        z[j] = z0[j] + step;
        let gp = f(&z);
        z[j] = z0[j] - step;
        let gm = f(&z);
        z[j] = z0[j];
        for i in 0..dim {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

impl<M: MechModel> NlpProblem for Transcription<'_, M> {
    fn n(&self) -> usize {
        4 * (self.intervals + 1) + self.m * self.intervals
    }

    fn n_eq(&self) -> usize {
        4 + 4 * self.intervals + self.n_fixed()
    }

    fn n_ineq(&self) -> usize {
        match &self.spec.terminal {
            Terminal::General(c) => c.dim(),
            _ => 0,
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        let s_lo = self.spec.model.s_min() + DOMAIN_MARGIN;
        for i in 0..=self.intervals {
            lo[self.state_offset(i)] = s_lo;
        }
        if let Some(b) = &self.spec.control_bounds {
            for i in 0..self.intervals {
                let o = self.control_offset(i);
                lo[o..o + self.m].copy_from_slice(&b.lower);
                hi[o..o + self.m].copy_from_slice(&b.upper);
            }
        }
        (lo, hi)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        (0..self.intervals)
            .map(|i| self.spec.cost.value(&self.spec.model, &self.state(z, i), self.control(z, i)))
            .sum::<f64>()
            * self.h
    }

    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        for i in 0..self.intervals {
            let cg = self.spec.cost.gradient(&self.spec.model, &self.state(z, i), self.control(z, i));
            let xo = self.state_offset(i);
            let uo = self.control_offset(i);
            for k in 0..4 {
                g[xo + k] = self.h * cg.x[k];
            }
            for k in 0..self.m {
                g[uo + k] = self.h * cg.u[k];
            }
        }
    }

    fn eq_constraints(&self, z: &[f64], c: &mut [f64]) {
        let x0 = self.spec.x0.to_array();
        for k in 0..4 {
            c[k] = z[k] - x0[k];
        }
        for i in 0..self.intervals {
            let next = rk4_step_unchecked(&self.spec.model, &self.state(z, i), self.control(z, i), self.h);
            let r = self.defect_row(i);
            let xo = self.state_offset(i + 1);
            for k in 0..4 {
                c[r + k] = z[xo + k] - next[k];
            }
        }
        if let Terminal::Fixed(list) = &self.spec.terminal {
            let base = self.defect_row(self.intervals);
            let xo = self.state_offset(self.intervals);
            for (j, &(idx, val)) in list.iter().enumerate() {
                c[base + j] = z[xo + idx] - val;
            }
        }
    }

    fn eq_jacobian(&self, z: &[f64]) -> Triplets {
        let n_per = 4 + 4 * (4 + self.m);
        let mut t = Triplets::with_capacity(self.n_eq(), self.n(), 4 + self.intervals * n_per + self.n_fixed());
        for k in 0..4 {
            t.push(k, k, 1.0);
        }
        for i in 0..self.intervals {
            let sens = rk4_step_sensitivity(&self.spec.model, &self.state(z, i), self.control(z, i), self.h);
            let r = self.defect_row(i);
            let xo = self.state_offset(i);
            let xn = self.state_offset(i + 1);
            let uo = self.control_offset(i);
            for a in 0..4 {
                t.push(r + a, xn + a, 1.0);
                for b in 0..4 {
                    t.push(r + a, xo + b, -sens.fx[(a, b)]);
                }
                for b in 0..self.m {
                    t.push(r + a, uo + b, -sens.fu[(a, b)]);
                }
            }
        }
        if let Terminal::Fixed(list) = &self.spec.terminal {
            let base = self.defect_row(self.intervals);
            let xo = self.state_offset(self.intervals);
            for (j, &(idx, _)) in list.iter().enumerate() {
                t.push(base + j, xo + idx, 1.0);
            }
        }
        t
    }

    fn ineq_constraints(&self, z: &[f64], g: &mut [f64]) {
        if let Terminal::General(c) = &self.spec.terminal {
            c.eval(&self.state(z, self.intervals), g);
        }
    }

    fn ineq_jacobian(&self, z: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.n_ineq(), self.n());
        if let Terminal::General(c) = &self.spec.terminal {
            let j = c.jacobian(&self.state(z, self.intervals));
            let xo = self.state_offset(self.intervals);
            for r in 0..c.dim() {
                for k in 0..4 {
                    t.push(r, xo + k, j[(r, k)]);
                }
            }
        }
        t
    }

    fn hessian_blocks(
        &self,
        z: &[f64],
        mult_eq: &[f64],
        mult_ineq: &[f64],
        kind: HessianKind,
    ) -> Option<Vec<HessianBlock>> {
        let model = &self.spec.model;
        let gauss_newton = kind == HessianKind::GaussNewton;
        let mut blocks = Vec::with_capacity(self.intervals + 1);
        for i in 0..self.intervals {
            let x = self.state(z, i);
            let u = self.control(z, i);
            let mut mat = self.spec.cost.hessian(model, &x, u, gauss_newton) * self.h;
            if !gauss_newton {
                // defect rows are x_{i+1} − F, so their curvature enters with a minus sign
                let r = self.defect_row(i);
                let mu = &mult_eq[r..r + 4];
                if mu.iter().any(|v| *v != 0.0) {
                    let mut zl = x.to_array().to_vec();
                    zl.extend_from_slice(u);
                    mat -= fd_jacobian(&zl, |w| self.defect_weighted_grad(w, mu));
                }
            }
            let mut indices: Vec<usize> = (0..4).map(|k| self.state_offset(i) + k).collect();
            indices.extend((0..self.m).map(|k| self.control_offset(i) + k));
            blocks.push(HessianBlock { indices, matrix: mat });
        }
        if let (Terminal::General(c), false) = (&self.spec.terminal, gauss_newton) {
            let xn = self.state(z, self.intervals).to_array();
            let mat = fd_jacobian(&xn, |w| {
                let j = c.jacobian(&State::from_slice(w));
                (0..4).map(|k| (0..c.dim()).map(|r| j[(r, k)] * mult_ineq[r]).sum()).collect()
            });
            let xo = self.state_offset(self.intervals);
            blocks.push(HessianBlock { indices: (xo..xo + 4).collect(), matrix: mat });
        }
        Some(blocks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, uniform_grid, FnModel};
    use crate::ocp::{ControlBounds, StageCost, TerminalConstraint};
    use crate::presets::{preset_fig1, KeplerParams};

    fn small_spec(intervals: usize, terminal: Terminal) -> OcpSpec<crate::presets::KeplerModel> {
        let mut spec = preset_fig1(&KeplerParams::default());
        spec.intervals = intervals;
        spec.horizon = 0.1 * intervals as f64;
        spec.terminal = terminal;
        spec
    }

    #[test]
    fn counts() {
        let spec = small_spec(1, Terminal::None);
        let t = transcribe(&spec);
        assert_eq!(t.n(), 8 + 2);
        assert_eq!(t.n_eq(), 8);
        let fig1 = preset_fig1(&KeplerParams::default());
        let t = transcribe(&fig1);
        assert_eq!(t.n(), 1804);
        assert_eq!(t.n_eq(), 4 + 1200 + 3);
    }

    #[test]
    fn simulated_trajectory_is_feasible() {
        let spec = small_spec(5, Terminal::None);
        let controls: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 * i as f64, -0.2]).collect();
        let traj = simulate(&spec.model, &spec.x0, &controls, &uniform_grid(spec.horizon, 5)).unwrap();
        let t = transcribe(&spec);
        let z = t.pack(&traj.states, &traj.controls);
        let mut c = vec![0.0; t.n_eq()];
        t.eq_constraints(&z, &mut c);
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        let (s, u) = t.unpack(&z);
        assert_eq!(s, traj.states);
        assert_eq!(u, traj.controls);
    }

    #[test]
    fn zero_cost_feasible_point_is_optimal() {
        let model = FnModel::unit_mass(1);
        let spec = OcpSpec {
            model,
            horizon: 1.0,
            intervals: 4,
            cost: StageCost::Custom(crate::ocp::CustomCost::new(|_, _, _, _| 0.0, |_, _, _, _, g| g.fill(0.0))),
            x0: State::new(1.0, 0.0, 0.0, 1.0),
            terminal: Terminal::None,
            control_bounds: None,
        };
        let controls = vec![vec![0.0]; 4];
        let traj = simulate(&spec.model, &spec.x0, &controls, &uniform_grid(1.0, 4)).unwrap();
        let t = transcribe(&spec);
        let z = t.pack(&traj.states, &traj.controls);
        assert_eq!(t.objective(&z), 0.0);
        let kkt = crate::nlp::kkt_residuals(&t, &z, &vec![0.0; t.n_eq()], &[], &vec![0.0; t.n()]);
        assert!(kkt.max() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let psi = TerminalConstraint::new(
            1,
            |x, g| g[0] = x.s * x.s + x.v_th - 40.0,
            |x| DMatrix::from_row_slice(1, 4, &[2.0 * x.s, 0.0, 0.0, 1.0]),
        );
        for terminal in [Terminal::Fixed(vec![(0, 6.0), (3, 2.0)]), Terminal::General(psi)] {
            let mut spec = small_spec(3, terminal);
            spec.control_bounds = Some(ControlBounds { lower: vec![-1.0; 2], upper: vec![1.0; 2] });
            let t = transcribe(&spec);
            let z: Vec<f64> = (0..t.n()).map(|k| 1.0 + 0.37 * ((k * 7) % 5) as f64).collect();
            let n = t.n();
            let mut g = vec![0.0; n];
            t.gradient(&z, &mut g);
            let jeq = t.eq_jacobian(&z).to_dense();
            let f = |w: &[f64]| t.objective(w);
            for j in 0..n {
                let step = 1e-6;
                let mut zp = z.clone();
                zp[j] += step;
                let mut zm = z.clone();
                zm[j] -= step;
                let fd = (f(&zp) - f(&zm)) / (2.0 * step);
                assert!((fd - g[j]).abs() < 1e-5 * fd.abs().max(1.0));
                let mut cp = vec![0.0; t.n_eq()];
                let mut cm = vec![0.0; t.n_eq()];
                t.eq_constraints(&zp, &mut cp);
                t.eq_constraints(&zm, &mut cm);
                for r in 0..t.n_eq() {
                    let fd = (cp[r] - cm[r]) / (2.0 * step);
                    assert!((fd - jeq[(r, j)]).abs() < 1e-5 * fd.abs().max(1.0), "row {r} col {j}");
                }
            }
        }
    }

    #[test]
    fn exact_blocks_match_lagrangian_differences() {
        let spec = small_spec(2, Terminal::Fixed(vec![(0, 6.0)]));
        let t = transcribe(&spec);
        let n = t.n();
        let z: Vec<f64> = (0..n).map(|k| 2.0 + 0.1 * (k % 7) as f64).collect();
        let mu: Vec<f64> = (0..t.n_eq()).map(|k| 0.3 * ((k % 3) as f64 - 1.0)).collect();
        let blocks = t.hessian_blocks(&z, &mu, &[], HessianKind::Exact).unwrap();
        let mut h = DMatrix::zeros(n, n);
        for b in &blocks {
            for (a, &i) in b.indices.iter().enumerate() {
                for (c, &j) in b.indices.iter().enumerate() {
                    h[(i, j)] += b.matrix[(a, c)];
                }
            }
        }
        let grad_l = |w: &[f64]| {
            let mut g = vec![0.0; n];
            t.gradient(w, &mut g);
            t.eq_jacobian(w).tr_mul_add(&mu, &mut g);
            g
        };
        let fd = fd_jacobian(&z, grad_l);
        assert!((&h - &fd).amax() < 1e-4 * fd.amax().max(1.0), "{}", (&h - &fd).amax());
    }
}
