use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::MechModel;

const SEED: u64 = 0x5eed_0001;

/// One analytic derivative that disagrees with its finite-difference estimate.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeViolation {
    pub quantity: String,
    pub s: f64,
    pub u: Vec<f64>,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    pub samples: usize,
    pub tol: f64,
    pub max_rel_error: f64,
    pub violations: Vec<DerivativeViolation>,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Compares the model's analytic derivatives with central differences at
/// `samples` seeded random points.
///
/// Shape samples are drawn from [`MechModel::shape_sample_range`], controls
/// from `[-2, 2]^m`. Relative errors use `max(|analytic|, |fd|, 1e-3)` as scale.
pub fn check_derivatives<M: MechModel + ?Sized>(model: &M, samples: usize, tol: f64) -> DerivativeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (lo, hi) = model.shape_sample_range();
    let m = model.control_dim();
    let mut report = DerivativeReport { samples, tol, max_rel_error: 0.0, violations: Vec::new() };

    let record = |report: &mut DerivativeReport, name: &str, s: f64, u: &[f64], a: f64, fd: f64| {
        let scale = a.abs().max(fd.abs()).max(1e-3);
        let rel = (a - fd).abs() / scale;
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > tol {
            report.violations.push(DerivativeViolation {
                quantity: name.to_string(),
                s,
                u: u.to_vec(),
                analytic: a,
                finite_difference: fd,
                rel_error: rel,
            });
        }
    };

    let mut jac = vec![0.0; m];
    for _ in 0..samples {
        let s = rng.gen_range(lo..hi);
        let u: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();

        record(&mut report, "m11_d", s, &u, model.m11_d(s), central(|x| model.m11(x), s));
        record(&mut report, "m11_dd", s, &u, model.m11_dd(s), central(|x| model.m11_d(x), s));
        record(&mut report, "m22_d", s, &u, model.m22_d(s), central(|x| model.m22(x), s));
        record(&mut report, "m22_dd", s, &u, model.m22_dd(s), central(|x| model.m22_d(x), s));
        record(&mut report, "pot_d", s, &u, model.pot_d(s), central(|x| model.pot(x), s));
        record(&mut report, "pot_dd", s, &u, model.pot_dd(s), central(|x| model.pot_d(x), s));

        model.f_s_jac(&u, &mut jac);
        for k in 0..m {
            let fd = central(
                |x| {
                    let mut v = u.clone();
                    v[k] = x;
                    model.f_s(&v)
                },
                u[k],
            );
            record(&mut report, &format!("f_s_jac[{k}]"), s, &u, jac[k], fd);
        }
        model.f_th_jac(&u, &mut jac);
        for k in 0..m {
            let fd = central(
                |x| {
                    let mut v = u.clone();
                    v[k] = x;
                    model.f_th(&v)
                },
                u[k],
            );
            record(&mut report, &format!("f_th_jac[{k}]"), s, &u, jac[k], fd);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use crate::presets::{kepler_model, KeplerParams};

    #[test]
    fn kepler_derivatives_are_exact() {
        let report = check_derivatives(&kepler_model(&KeplerParams::default()), 200, 1e-5);
        assert!(report.passed(), "{:?}", report.violations.first());
        assert!(report.max_rel_error < 1e-7);
    }

    #[test]
    fn wrong_m22_derivative_is_flagged() {
        let model = FnModel::unit_mass(1).with_m22(|s| s * s, |s| 3.0 * s, |_| 2.0);
        let report = check_derivatives(&model, 20, 1e-5);
        assert!(!report.passed());
        // m22_dd is checked against differences of m22_d
        assert!(report.violations.iter().all(|v| v.quantity == "m22_d" || v.quantity == "m22_dd"));
        assert!(report.violations.iter().any(|v| v.quantity == "m22_d"));
    }

    #[test]
    fn constant_mass_passes() {
        let report = check_derivatives(&FnModel::unit_mass(2), 50, 1e-5);
        assert!(report.passed());
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn report_is_deterministic() {
        let model = kepler_model(&KeplerParams::default());
        let a = check_derivatives(&model, 30, 1e-5).max_rel_error;
        let b = check_derivatives(&model, 30, 1e-5).max_rel_error;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
