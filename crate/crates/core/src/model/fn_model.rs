use super::MechModel;

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;
type ForceFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type ForceJacFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Model assembled from closures.
///
/// Starts from unit mass blocks, zero potential, `f_s(u) = u[0]` and
/// `f_θ ≡ 0`; each piece can be replaced with the `with_*` builders.
pub struct FnModel {
    control_dim: usize,
    s_min: f64,
    m11: [ScalarFn; 3],
    m22: [ScalarFn; 3],
    pot: [ScalarFn; 3],
    f_s: ForceFn,
    f_s_jac: ForceJacFn,
    f_th: ForceFn,
    f_th_jac: ForceJacFn,
    surjective: bool,
    orthogonal: bool,
    sample_range: Option<(f64, f64)>,
}

fn constant(c: f64) -> ScalarFn {
    Box::new(move |_| c)
}

impl FnModel {
    pub fn unit_mass(control_dim: usize) -> Self {
        assert!(control_dim > 0, "at least one control is required");
        Self {
            control_dim,
            s_min: f64::NEG_INFINITY,
            m11: [constant(1.0), constant(0.0), constant(0.0)],
            m22: [constant(1.0), constant(0.0), constant(0.0)],
            pot: [constant(0.0), constant(0.0), constant(0.0)],
            f_s: Box::new(|u| u[0]),
            f_s_jac: Box::new(|_, out| {
                out.fill(0.0);
                out[0] = 1.0;
            }),
            f_th: Box::new(|_| 0.0),
            f_th_jac: Box::new(|_, out| out.fill(0.0)),
            surjective: true,
            orthogonal: true,
            sample_range: Some((0.5, 10.5)),
        }
    }

    pub fn with_s_min(mut self, s_min: f64) -> Self {
        self.s_min = s_min;
        self
    }

    pub fn with_m11(
        mut self,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dd: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.m11 = [Box::new(f), Box::new(d), Box::new(dd)];
        self
    }

    pub fn with_m22(
        mut self,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dd: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.m22 = [Box::new(f), Box::new(d), Box::new(dd)];
        self
    }

    pub fn with_potential(
        mut self,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dd: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.pot = [Box::new(f), Box::new(d), Box::new(dd)];
        self
    }

    /// Replaces the shape forcing. `surjective` declares whether it covers ℝ.
    pub fn with_shape_forcing(
        mut self,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        surjective: bool,
    ) -> Self {
        self.f_s = Box::new(f);
        self.f_s_jac = Box::new(jac);
        self.surjective = surjective;
        self
    }

    /// Replaces the cyclic forcing; the model is no longer declared orthogonal.
    pub fn with_cyclic_forcing(
        mut self,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.f_th = Box::new(f);
        self.f_th_jac = Box::new(jac);
        self.orthogonal = false;
        self
    }

    pub fn with_sample_range(mut self, lo: f64, hi: f64) -> Self {
        self.sample_range = Some((lo, hi));
        self
    }
}

impl MechModel for FnModel {
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn s_min(&self) -> f64 {
        self.s_min
    }
    fn m11(&self, s: f64) -> f64 {
        (self.m11[0])(s)
    }
    fn m11_d(&self, s: f64) -> f64 {
        (self.m11[1])(s)
    }
    fn m11_dd(&self, s: f64) -> f64 {
        (self.m11[2])(s)
    }
    fn m22(&self, s: f64) -> f64 {
        (self.m22[0])(s)
    }
    fn m22_d(&self, s: f64) -> f64 {
        (self.m22[1])(s)
    }
    fn m22_dd(&self, s: f64) -> f64 {
        (self.m22[2])(s)
    }
    fn pot(&self, s: f64) -> f64 {
        (self.pot[0])(s)
    }
    fn pot_d(&self, s: f64) -> f64 {
        (self.pot[1])(s)
    }
    fn pot_dd(&self, s: f64) -> f64 {
        (self.pot[2])(s)
    }
    fn f_s(&self, u: &[f64]) -> f64 {
        (self.f_s)(u)
    }
    fn f_s_jac(&self, u: &[f64], out: &mut [f64]) {
        (self.f_s_jac)(u, out)
    }
    fn f_th(&self, u: &[f64]) -> f64 {
        (self.f_th)(u)
    }
    fn f_th_jac(&self, u: &[f64], out: &mut [f64]) {
        (self.f_th_jac)(u, out)
    }
    fn forcing_surjective(&self) -> bool {
        self.surjective
    }
    fn orthogonal_forcing(&self) -> bool {
        self.orthogonal
    }
    fn shape_sample_range(&self) -> (f64, f64) {
        self.sample_range.unwrap_or_else(|| {
            let lo = self.s_min + 0.5;
            (lo, lo + 10.0)
        })
    }
}
