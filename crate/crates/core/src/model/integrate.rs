use nalgebra::{DMatrix, Matrix4, Vector4};

use super::{check_domain, el_jacobian, el_rhs_unchecked, MechModel, State, Trajectory};
use crate::error::{Error, Result};

/// One classical fourth-order Runge-Kutta step of the Euler-Lagrange system
/// with the control held constant.
///
/// Every stage point is checked against the model domain.
pub fn rk4_step<M: MechModel + ?Sized>(model: &M, x: &State, u: &[f64], h: f64) -> Result<State> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    if u.len() != model.control_dim() {
        return Err(Error::Dimension(format!(
            "control of length {} for a model with {} inputs",
            u.len(),
            model.control_dim()
        )));
    }
    let x0 = x.to_vector();
    check_domain(model, x.s)?;
    let k1 = el_rhs_unchecked(model, x, u);
    let p2 = State::from_vector(&(x0 + 0.5 * h * k1));
    check_domain(model, p2.s)?;
    let k2 = el_rhs_unchecked(model, &p2, u);
    let p3 = State::from_vector(&(x0 + 0.5 * h * k2));
    check_domain(model, p3.s)?;
    let k3 = el_rhs_unchecked(model, &p3, u);
    let p4 = State::from_vector(&(x0 + h * k3));
    check_domain(model, p4.s)?;
    let k4 = el_rhs_unchecked(model, &p4, u);
    let next = State::from_vector(&(x0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)));
    check_domain(model, next.s)?;
    Ok(next)
}

/// RK4 step without domain or argument checks.
pub(crate) fn rk4_step_unchecked<M: MechModel + ?Sized>(model: &M, x: &State, u: &[f64], h: f64) -> Vector4<f64> {
    let x0 = x.to_vector();
    let k1 = el_rhs_unchecked(model, x, u);
    let k2 = el_rhs_unchecked(model, &State::from_vector(&(x0 + 0.5 * h * k1)), u);
    let k3 = el_rhs_unchecked(model, &State::from_vector(&(x0 + 0.5 * h * k2)), u);
    let k4 = el_rhs_unchecked(model, &State::from_vector(&(x0 + h * k3)), u);
    x0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// RK4 step together with its exact derivatives.
#[derive(Debug, Clone)]
pub struct StepSensitivity {
    pub next: Vector4<f64>,
    /// `∂x⁺/∂x`
    pub fx: Matrix4<f64>,
    /// `∂x⁺/∂u`, `4 × m`
    pub fu: DMatrix<f64>,
}

/// RK4 step with forward sensitivities propagated through the stages.
///
/// No domain checks are made; outside the domain the result may be non-finite.
pub fn rk4_step_sensitivity<M: MechModel + ?Sized>(
    model: &M,
    x: &State,
    u: &[f64],
    h: f64,
) -> StepSensitivity {
    let x0 = x.to_vector();
    let eye = Matrix4::identity();

    let k1 = el_rhs_unchecked(model, x, u);
    let (a1, b1) = el_jacobian(model, x, u);
    let k1x = a1;
    let k1u = b1;

    let p2 = State::from_vector(&(x0 + 0.5 * h * k1));
    let k2 = el_rhs_unchecked(model, &p2, u);
    let (a2, b2) = el_jacobian(model, &p2, u);
    let k2x = a2 * (eye + 0.5 * h * k1x);
    let k2u = a2 * (&k1u * (0.5 * h)) + b2;

    let p3 = State::from_vector(&(x0 + 0.5 * h * k2));
    let k3 = el_rhs_unchecked(model, &p3, u);
    let (a3, b3) = el_jacobian(model, &p3, u);
    let k3x = a3 * (eye + 0.5 * h * k2x);
    let k3u = a3 * (&k2u * (0.5 * h)) + b3;

    let p4 = State::from_vector(&(x0 + h * k3));
    let k4 = el_rhs_unchecked(model, &p4, u);
    let (a4, b4) = el_jacobian(model, &p4, u);
    let k4x = a4 * (eye + h * k3x);
    let k4u = a4 * (&k3u * h) + b4;

    let w = h / 6.0;
    StepSensitivity {
        next: x0 + w * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
        fx: eye + w * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        fu: {
            let fu = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * w;
            DMatrix::from_column_slice(4, fu.ncols(), fu.as_slice())
        },
    }
}

/// Uniform grid with `intervals + 1` nodes on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    let h = horizon / intervals as f64;
    (0..=intervals)
        .map(|i| if i == intervals { horizon } else { i as f64 * h })
        .collect()
}

/// Integrates from `x0` over `grid` with one RK4 step per interval and the
/// control `controls[i]` on interval `i`.
pub fn simulate<M: MechModel + ?Sized>(
    model: &M,
    x0: &State,
    controls: &[Vec<f64>],
    grid: &[f64],
) -> Result<Trajectory> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if controls.len() + 1 != grid.len() {
        return Err(Error::Dimension(format!(
            "{} controls for a grid of {} nodes",
            controls.len(),
            grid.len()
        )));
    }
    check_domain(model, x0.s).map_err(|_| Error::DomainExit { time: grid[0], s: x0.s })?;
    let mut states = Vec::with_capacity(grid.len());
    states.push(*x0);
    let mut x = *x0;
    for (i, u) in controls.iter().enumerate() {
        let h = grid[i + 1] - grid[i];
        x = rk4_step(model, &x, u, h).map_err(|e| match e {
            Error::Domain { s, .. } => Error::DomainExit { time: grid[i], s },
            other => other,
        })?;
        states.push(x);
    }
    Trajectory::new(grid.to_vec(), states, controls.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{kepler_model, KeplerParams};

    #[test]
    fn trim_is_preserved_by_rk4() {
        let p = KeplerParams::default();
        let model = kepler_model(&p);
        let v0 = p.circular_speed(5.0);
        let x = State::new(5.0, 0.0, 0.0, v0);
        let grid = uniform_grid(3.0, 30);
        let traj = simulate(&model, &x, &vec![vec![0.0, 0.0]; 30], &grid).unwrap();
        for (t, st) in traj.times.iter().zip(&traj.states) {
            assert!((st.s - 5.0).abs() < 1e-10);
            assert!(st.v_s.abs() < 1e-10);
            assert!((st.v_th - v0).abs() < 1e-10);
            assert!((st.th - v0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn single_node_grid() {
        let model = kepler_model(&KeplerParams::default());
        let x = State::new(5.0, 0.1, 0.0, 1.0);
        let traj = simulate(&model, &x, &[], &[0.0]).unwrap();
        assert_eq!(traj.states, vec![x]);
        assert!(traj.controls.is_empty());
    }

    #[test]
    fn domain_exit_reports_time() {
        let model = kepler_model(&KeplerParams::default());
        // radial plunge
        let x = State::new(10.0, 0.0, 0.0, 0.0);
        let grid = uniform_grid(2.0, 40);
        let err = simulate(&model, &x, &vec![vec![0.0, 0.0]; 40], &grid).unwrap_err();
        match err {
            Error::DomainExit { time, .. } => assert!(time > 0.0 && time < 2.0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_bad_step_and_schedule() {
        let model = kepler_model(&KeplerParams::default());
        let x = State::new(5.0, 0.0, 0.0, 1.0);
        assert!(rk4_step(&model, &x, &[0.0, 0.0], 0.0).is_err());
        assert!(simulate(&model, &x, &[vec![0.0, 0.0]], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        let model = kepler_model(&KeplerParams::default());
        let x = State::new(4.7, 0.2, 0.5, 2.9);
        let u = [0.3, -0.2];
        let h = 0.1;
        let sens = rk4_step_sensitivity(&model, &x, &u, h);
        let plain = rk4_step(&model, &x, &u, h).unwrap();
        assert!((sens.next - plain.to_vector()).amax() < 1e-14);
        let d = 1e-6;
        for j in 0..4 {
            let mut xp = x.to_array();
            let mut xm = x.to_array();
            xp[j] += d;
            xm[j] -= d;
            let fp = rk4_step(&model, &State::from_array(xp), &u, h).unwrap().to_vector();
            let fm = rk4_step(&model, &State::from_array(xm), &u, h).unwrap().to_vector();
            let col = (fp - fm) / (2.0 * d);
            assert!((col - sens.fx.column(j)).amax() < 1e-7);
        }
        for k in 0..2 {
            let mut up = u;
            let mut um = u;
            up[k] += d;
            um[k] -= d;
            let fp = rk4_step(&model, &x, &up, h).unwrap().to_vector();
            let fm = rk4_step(&model, &x, &um, h).unwrap().to_vector();
            let col = (fp - fm) / (2.0 * d);
            for i in 0..4 {
                assert!((col[i] - sens.fu[(i, k)]).abs() < 1e-8);
            }
        }
    }
}
