//! Batch loss sequences with analytic derivatives.
//!
//! A [`LossSequence`] is a cyclic schedule of `m` batch losses `E_0 .. E_{m-1}`
//! over `p` parameters. Step `k` of an optimizer uses batch `k mod m`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Uniform bounds on the partial derivatives of every batch loss, orders one
/// through four. Only meaningful while parameters stay inside the region the
/// bounds were derived for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivBounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

pub trait LossSequence: Send + Sync {
    fn name(&self) -> &str;

    /// Number of distinct batches `m`.
    fn batch_count(&self) -> usize;

    /// Parameter dimension `p`.
    fn dimension(&self) -> usize;

    /// Value of batch `b < m` at `theta`.
    fn batch_eval(&self, b: usize, theta: &[f64]) -> f64;

    fn batch_grad(&self, b: usize, theta: &[f64]) -> Vec<f64>;

    fn batch_hess(&self, b: usize, theta: &[f64]) -> Matrix;

    fn deriv_bounds(&self) -> Option<DerivBounds> {
        None
    }

    fn eval(&self, k: usize, theta: &[f64]) -> f64 {
        self.batch_eval(k % self.batch_count(), theta)
    }

    fn grad(&self, k: usize, theta: &[f64]) -> Vec<f64> {
        self.batch_grad(k % self.batch_count(), theta)
    }

    fn hess(&self, k: usize, theta: &[f64]) -> Matrix {
        self.batch_hess(k % self.batch_count(), theta)
    }

    /// Epoch-averaged loss `(1/m) sum_b E_b`.
    fn full_eval(&self, theta: &[f64]) -> f64 {
        let m = self.batch_count();
        (0..m).map(|b| self.batch_eval(b, theta)).sum::<f64>() / m as f64
    }

    fn full_grad(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.batch_count();
        let mut acc = vec![0.0; self.dimension()];
        for b in 0..m {
            for (a, g) in acc.iter_mut().zip(self.batch_grad(b, theta)) {
                *a += g;
            }
        }
        acc.iter_mut().for_each(|a| *a /= m as f64);
        acc
    }
}

/// `E(theta) = 0.5 * (y - theta_1 * theta_2 * x)^2`, a single full batch.
#[derive(Debug, Clone)]
pub struct Bilinear {
    pub x: f64,
    pub y: f64,
}

pub fn make_bilinear(x: f64, y: f64) -> Bilinear {
    Bilinear { x, y }
}

impl Bilinear {
    fn residual(&self, theta: &[f64]) -> f64 {
        self.y - theta[0] * theta[1] * self.x
    }
}

impl LossSequence for Bilinear {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn batch_count(&self) -> usize {
        1
    }

    fn dimension(&self) -> usize {
        2
    }

    fn batch_eval(&self, _b: usize, theta: &[f64]) -> f64 {
        let r = self.residual(theta);
        0.5 * r * r
    }

    fn batch_grad(&self, _b: usize, theta: &[f64]) -> Vec<f64> {
        let r = self.residual(theta);
        vec![-r * self.x * theta[1], -r * self.x * theta[0]]
    }

    fn batch_hess(&self, _b: usize, theta: &[f64]) -> Matrix {
        let r = self.residual(theta);
        let x2 = self.x * self.x;
        let off = x2 * theta[0] * theta[1] - r * self.x;
        let mut h = Matrix::zeros(2);
        h[(0, 0)] = x2 * theta[1] * theta[1];
        h[(1, 1)] = x2 * theta[0] * theta[0];
        h[(0, 1)] = off;
        h[(1, 0)] = off;
        h
    }
}

/// Separable quadratic `E(theta) = 0.5 * sum_i d_i theta_i^2` with exact
/// derivative bounds on the box `|theta_i| <= bound_box`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    diag: Vec<f64>,
    bound_box: f64,
}

pub fn make_quadratic(diag: Vec<f64>, bound_box: f64) -> Result<Quadratic> {
    if diag.is_empty() {
        return Err(Error::InvalidParameter(
            "quadratic needs at least one coefficient".into(),
        ));
    }
    if let Some(d) = diag.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "quadratic coefficients must be positive, got {d}"
        )));
    }
    if !(bound_box > 0.0) || !bound_box.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bound box half-width must be positive, got {bound_box}"
        )));
    }
    Ok(Quadratic { diag, bound_box })
}

impl Quadratic {
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn bound_box(&self) -> f64 {
        self.bound_box
    }
}

impl LossSequence for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn batch_count(&self) -> usize {
        1
    }

    fn dimension(&self) -> usize {
        self.diag.len()
    }

    fn batch_eval(&self, _b: usize, theta: &[f64]) -> f64 {
        0.5 * self
            .diag
            .iter()
            .zip(theta)
            .map(|(d, t)| d * t * t)
            .sum::<f64>()
    }

    fn batch_grad(&self, _b: usize, theta: &[f64]) -> Vec<f64> {
        self.diag.iter().zip(theta).map(|(d, t)| d * t).collect()
    }

    fn batch_hess(&self, _b: usize, _theta: &[f64]) -> Matrix {
        Matrix::diagonal(&self.diag)
    }

    fn deriv_bounds(&self) -> Option<DerivBounds> {
        let dmax = self.diag.iter().cloned().fold(0.0, f64::max);
        Some(DerivBounds {
            m1: dmax * self.bound_box,
            m2: dmax,
            m3: 0.0,
            m4: 0.0,
        })
    }
}

/// Least squares over contiguous batches: batch `k` is the mean of
/// `(x_s . theta - t_s)^2` over its samples.
#[derive(Debug, Clone)]
pub struct MinibatchRegression {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    batch_size: usize,
}

pub fn make_minibatch_regression(
    design: Vec<(Vec<f64>, f64)>,
    batch_size: usize,
) -> Result<MinibatchRegression> {
    if design.is_empty() {
        return Err(Error::EmptySequence);
    }
    if batch_size == 0 || !design.len().is_multiple_of(batch_size) {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} does not divide dataset length {}",
            design.len()
        )));
    }
    let p = design[0].0.len();
    if p == 0 {
        return Err(Error::InvalidParameter(
            "regression inputs must be nonempty".into(),
        ));
    }
    if let Some((x, _)) = design.iter().find(|(x, _)| x.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x.len(),
        });
    }
    let (inputs, targets) = design.into_iter().unzip();
    Ok(MinibatchRegression {
        inputs,
        targets,
        batch_size,
    })
}

impl MinibatchRegression {
    fn samples(&self, b: usize) -> impl Iterator<Item = (&Vec<f64>, f64)> {
        let start = b * self.batch_size;
        self.inputs[start..start + self.batch_size]
            .iter()
            .zip(self.targets[start..start + self.batch_size].iter().copied())
    }

    fn residual(x: &[f64], t: f64, theta: &[f64]) -> f64 {
        x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() - t
    }

    /// Mean squared error over the whole dataset.
    pub fn dataset_loss(&self, theta: &[f64]) -> f64 {
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, t)| Self::residual(x, *t, theta).powi(2))
            .sum::<f64>()
            / self.inputs.len() as f64
    }

    pub fn dataset_grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for (x, t) in self.inputs.iter().zip(&self.targets) {
            let r = Self::residual(x, *t, theta);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += 2.0 * r * xi;
            }
        }
        let n = self.inputs.len() as f64;
        g.iter_mut().for_each(|gi| *gi /= n);
        g
    }
}

impl LossSequence for MinibatchRegression {
    fn name(&self) -> &str {
        "regression"
    }

    fn batch_count(&self) -> usize {
        self.inputs.len() / self.batch_size
    }

    fn dimension(&self) -> usize {
        self.inputs[0].len()
    }

    fn batch_eval(&self, b: usize, theta: &[f64]) -> f64 {
        self.samples(b)
            .map(|(x, t)| Self::residual(x, t, theta).powi(2))
            .sum::<f64>()
            / self.batch_size as f64
    }

    fn batch_grad(&self, b: usize, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for (x, t) in self.samples(b) {
            let r = Self::residual(x, t, theta);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += 2.0 * r * xi;
            }
        }
        let scale = self.batch_size as f64;
        g.iter_mut().for_each(|gi| *gi /= scale);
        g
    }

    fn batch_hess(&self, b: usize, theta: &[f64]) -> Matrix {
        let p = theta.len();
        let mut h = Matrix::zeros(p);
        for (x, _) in self.samples(b) {
            for i in 0..p {
                for j in 0..p {
                    h[(i, j)] += 2.0 * x[i] * x[j];
                }
            }
        }
        let scale = self.batch_size as f64;
        for i in 0..p {
            for j in 0..p {
                h[(i, j)] /= scale;
            }
        }
        h
    }
}

/// Worst deviations between analytic and central-difference derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_grad_deviation: f64,
    pub max_hess_deviation: f64,
    pub max_hess_asymmetry: f64,
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Relative difference with a unit floor on the scale, so components that
/// vanish are compared absolutely.
fn deviation(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares analytic gradients and Hessians of every batch against central
/// differences at `theta`.
pub fn fd_validate(seq: &dyn LossSequence, theta: &[f64], step: f64) -> Result<FdReport> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let p = seq.dimension();
    if theta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: theta.len(),
        });
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("finite-difference probe point".into()));
    }

    let mut report = FdReport {
        max_grad_deviation: 0.0,
        max_hess_deviation: 0.0,
        max_hess_asymmetry: 0.0,
    };
    let mut probe = theta.to_vec();
    for b in 0..seq.batch_count() {
        let grad = seq.batch_grad(b, theta);
        let hess = seq.batch_hess(b, theta);
        if grad.iter().any(|g| !g.is_finite()) || !hess.is_finite() {
            return Err(Error::NonFinite(format!(
                "analytic derivatives of batch {b}"
            )));
        }
        report.max_hess_asymmetry = report.max_hess_asymmetry.max(hess.max_asymmetry());
        for j in 0..p {
            probe[j] = theta[j] + step;
            let f_plus = seq.batch_eval(b, &probe);
            let g_plus = seq.batch_grad(b, &probe);
            probe[j] = theta[j] - step;
            let f_minus = seq.batch_eval(b, &probe);
            let g_minus = seq.batch_grad(b, &probe);
            probe[j] = theta[j];
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss of batch {b} near probe point"
                )));
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            report.max_grad_deviation = report.max_grad_deviation.max(deviation(grad[j], fd));
            for i in 0..p {
                let fd_h = (g_plus[i] - g_minus[i]) / (2.0 * step);
                report.max_hess_deviation =
                    report.max_hess_deviation.max(deviation(hess[(i, j)], fd_h));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_zero_on_hyperbola() {
        let e = make_bilinear(2.0, 1.5);
        assert_eq!(e.eval(0, &[1.0, 0.75]), 0.0);
        assert_eq!(e.eval(0, &[0.5, 1.5]), 0.0);
        assert!(e.eval(0, &[1.0, 1.0]) > 0.0);
    }

    #[test]
    fn bilinear_grad_at_start_point() {
        // central differences of the loss at (2.8, 3.5), step 1e-6
        let e = make_bilinear(2.0, 1.5);
        let g = e.grad(0, &[2.8, 3.5]);
        assert!((g[0] - 126.7).abs() < 1e-9);
        assert!((g[1] - 101.36).abs() < 1e-9);
        let fd = fd_validate(&e, &[2.8, 3.5], 1e-5).unwrap();
        assert!(fd.max_grad_deviation < 1e-5, "{fd:?}");
    }

    #[test]
    fn bilinear_hessian_symmetric_and_matches_fd() {
        let e = make_bilinear(2.0, 1.5);
        let h = e.hess(0, &[1.0, 1.0]);
        assert_eq!(h.max_asymmetry(), 0.0);
        // hand values: x^2 theta_2^2 = 4, x^2 theta_1 theta_2 - r x = 4 - 2 * (-0.5) = 5
        assert_eq!(h[(0, 0)], 4.0);
        assert_eq!(h[(0, 1)], 5.0);
        let fd = fd_validate(&e, &[1.0, 1.0], 1e-5).unwrap();
        assert!(fd.max_hess_deviation < 1e-4);
    }

    #[test]
    fn quadratic_definitional_values() {
        let q = make_quadratic(vec![1.0, 1.0], 10.0).unwrap();
        assert_eq!(q.eval(0, &[3.0, 4.0]), 12.5);
        assert_eq!(q.grad(0, &[3.0, 4.0]), vec![3.0, 4.0]);
        assert_eq!(q.grad(0, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_bounds() {
        let q = make_quadratic(vec![2.0, 1.0], 10.0).unwrap();
        assert_eq!(
            q.deriv_bounds().unwrap(),
            DerivBounds {
                m1: 20.0,
                m2: 2.0,
                m3: 0.0,
                m4: 0.0
            }
        );
    }

    #[test]
    fn quadratic_rejects_nonpositive() {
        assert!(make_quadratic(vec![1.0, 0.0], 1.0).is_err());
        assert!(make_quadratic(vec![-1.0], 1.0).is_err());
    }

    #[test]
    fn quadratic_fd_is_exact() {
        let q = make_quadratic(vec![2.0, 0.5, 3.0], 10.0).unwrap();
        let fd = fd_validate(&q, &[1.3, -4.2, 0.7], DEFAULT_FD_STEP).unwrap();
        assert!(fd.max_grad_deviation < 1e-8);
        assert!(fd.max_hess_deviation < 1e-8);
    }

    #[test]
    fn regression_single_sample_is_full_batch() {
        let r = make_minibatch_regression(vec![(vec![1.0, 2.0], 3.0)], 1).unwrap();
        assert_eq!(r.batch_count(), 1);
        let theta = [0.5, -0.25];
        assert_eq!(r.eval(0, &theta), r.dataset_loss(&theta));
    }

    #[test]
    fn regression_epoch_mean_matches_dataset() {
        let design = vec![
            (vec![1.0, 0.0], 1.0),
            (vec![0.5, 2.0], -1.0),
            (vec![-1.0, 1.0], 0.5),
            (vec![2.0, -0.5], 2.0),
        ];
        let r = make_minibatch_regression(design, 2).unwrap();
        assert_eq!(r.batch_count(), 2);
        let theta = [0.3, -0.7];
        // direct summation over all four samples
        let direct = [
            (0.3f64 - 1.0).powi(2),
            (0.15f64 - 1.4 + 1.0).powi(2),
            (-0.3f64 - 0.7 - 0.5).powi(2),
            (0.6f64 + 0.35 - 2.0).powi(2),
        ]
        .iter()
        .sum::<f64>()
            / 4.0;
        let mean = (r.eval(0, &theta) + r.eval(1, &theta)) / 2.0;
        assert!((mean - direct).abs() < 1e-14);
        // cyclic schedule
        assert_eq!(r.eval(3, &theta), r.eval(1, &theta));
    }

    #[test]
    fn regression_rejects_indivisible_batch() {
        let design = vec![(vec![1.0], 1.0), (vec![2.0], 1.0), (vec![3.0], 1.0)];
        assert!(make_minibatch_regression(design, 2).is_err());
    }

    #[test]
    fn fd_validate_rejects_nan() {
        let q = make_quadratic(vec![1.0], 1.0).unwrap();
        assert!(fd_validate(&q, &[f64::NAN], 1e-5).is_err());
        assert!(fd_validate(&q, &[1.0], 0.0).is_err());
    }
}
