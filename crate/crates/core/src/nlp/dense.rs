use nalgebra::DMatrix;

use super::{NlpProblem, Triplets};

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VecFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type JacFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Small NLP assembled from closures with dense Jacobians.
pub struct DenseProblem {
    n: usize,
    f: ScalarFn,
    grad: VecFn,
    eq: Option<(usize, VecFn, JacFn)>,
    ineq: Option<(usize, VecFn, JacFn)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DenseProblem {
    pub fn new(
        n: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            f: Box::new(f),
            grad: Box::new(grad),
            eq: None,
            ineq: None,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// Adds `p` equality constraints `c(x) = 0` with a `p × n` Jacobian.
    pub fn with_eq(
        mut self,
        p: usize,
        c: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jac: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.eq = Some((p, Box::new(c), Box::new(jac)));
        self
    }

    /// Adds `q` inequality constraints `g(x) ≤ 0` with a `q × n` Jacobian.
    pub fn with_ineq(
        mut self,
        q: usize,
        g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jac: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.ineq = Some((q, Box::new(g), Box::new(jac)));
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.n);
        assert_eq!(upper.len(), self.n);
        self.lower = lower;
        self.upper = upper;
        self
    }
}

impl NlpProblem for DenseProblem {
    fn n(&self) -> usize {
        self.n
    }
    fn n_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |e| e.0)
    }
    fn n_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |e| e.0)
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        (self.grad)(x, g)
    }
    fn eq_constraints(&self, x: &[f64], c: &mut [f64]) {
        if let Some((_, f, _)) = &self.eq {
            f(x, c)
        }
    }
    fn eq_jacobian(&self, x: &[f64]) -> Triplets {
        match &self.eq {
            Some((_, _, j)) => Triplets::from_dense(&j(x)),
            None => Triplets::new(0, self.n),
        }
    }
    fn ineq_constraints(&self, x: &[f64], g: &mut [f64]) {
        if let Some((_, f, _)) = &self.ineq {
            f(x, g)
        }
    }
    fn ineq_jacobian(&self, x: &[f64]) -> Triplets {
        match &self.ineq {
            Some((_, _, j)) => Triplets::from_dense(&j(x)),
            None => Triplets::new(0, self.n),
        }
    }
}
