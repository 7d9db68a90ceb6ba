//! Central finite-difference gradient checking.

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that components whose true
/// value is near zero are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// A vector-valued map with a hand-written vector-Jacobian product.
pub trait DifferentiableOp {
    fn forward(&self, x: &[f64]) -> Vec<f64>;

    /// Returns `Jᵀ · upstream` evaluated at `x`.
    fn backward(&self, x: &[f64], upstream: &[f64]) -> Vec<f64>;
}

/// Adapter turning a pair of closures into a [`DifferentiableOp`].
pub struct OpFn<F, B>(pub F, pub B);

impl<F, B> DifferentiableOp for OpFn<F, B>
where
    F: Fn(&[f64]) -> Vec<f64>,
    B: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (self.0)(x)
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> Vec<f64> {
        (self.1)(x, upstream)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Input component where the worst error occurred.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `op.backward(point, upstream)` against central differences of
/// the scalar `Σ upstream ⊙ op.forward(x)`.
pub fn grad_check(op: &impl DifferentiableOp, point: &[f64], upstream: &[f64], tolerance: f64) -> GradCheckReport {
    let objective = |x: &[f64]| -> f64 {
        let y = op.forward(x);
        assert_eq!(y.len(), upstream.len(), "upstream length must match op output");
        y.iter().zip(upstream).map(|(a, b)| a * b).sum()
    };
    let analytic = op.backward(point, upstream);
    assert_eq!(analytic.len(), point.len(), "backward must return one entry per input");

    let mut x = point.to_vec();
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = objective(&x);
        x[i] = orig - FD_STEP;
        let minus = objective(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        tolerance,
        passed: worst.0 <= tolerance,
    }
}
