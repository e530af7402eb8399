//! First-order modified equations of the adaptive methods and their
//! numerical integration.
//!
//! On interval `[nh, (n+1)h]` the continuous trajectory follows
//!
//! ```text
//! dθ_j/dt = -M_j / D(R_j) + h * ( M_j (2 P_j + Pbar_j) / (2 D(R_j)^2 R_j)
//!                               - (2 L_j + Lbar_j) / (2 D(R_j)) )
//! ```
//!
//! where `D(R) = R` when `eps` sits under the square root and `D(R) = R + eps`
//! otherwise. All six terms are evaluated at step index `n`. RMSProp is the
//! special case where the first-moment average keeps only the current batch
//! and the second-moment average is not bias-corrected.
//!
//! The averaged sums over past steps are exact. Batch derivatives at the
//! current point are computed once per distinct batch and regrouped by
//! `k mod m`, so a term evaluation costs `O(n p + m p^2)`.

use std::io::{self, Write};

use crate::analysis::grad_perturbed_one_norm;
use crate::discrete_optim::{bias_factor, Hyperparameters, Variant};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Point};
use crate::losses::LossSequence;

/// Below this accumulated root-mean-square the eps-outside correction term is
/// undefined and is replaced by zero.
pub const DEGENERATE_R: f64 = 1e-14;

pub const DEFAULT_SUBSTEPS: usize = 8;

/// Bias-corrected exponential average of `values[0..=n]`, `n = len - 1`.
pub fn av(gamma: f64, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "averaging factor must lie in (0, 1), got {gamma}"
        )));
    }
    let n = values.len() - 1;
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(k, a)| gamma.powi((n - k) as i32) * (1.0 - gamma) * a)
        .sum();
    Ok(sum / (1.0 - gamma.powi((n + 1) as i32)))
}

/// Closed form of the average of `n - k` over `k = 0..=n`, i.e.
/// `gamma (1 - (n+1) gamma^n + n gamma^(n+1)) / ((1 - gamma)(1 - gamma^(n+1)))`.
fn av_of_lag(gamma: f64, n: usize) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let gn = gamma.powi(n as i32);
    let nf = n as f64;
    gamma * (1.0 - (nf + 1.0) * gn + nf * gn * gamma) / ((1.0 - gamma) * (1.0 - gn * gamma))
}

/// Per-step weights of the two averages, `k = 0..=n`.
fn weights(hyper: &Hyperparameters, n: usize) -> (Vec<f64>, Vec<f64>) {
    let rho = hyper.rho;
    let adam = hyper.variant.is_adam();
    let norm_rho = if adam { bias_factor(rho, n) } else { 1.0 };
    let w_rho = (0..=n)
        .map(|k| rho.powi((n - k) as i32) * (1.0 - rho) / norm_rho)
        .collect();
    let w_beta = if adam {
        let beta = hyper.beta;
        let norm = bias_factor(beta, n);
        (0..=n)
            .map(|k| beta.powi((n - k) as i32) * (1.0 - beta) / norm)
            .collect()
    } else {
        let mut w = vec![0.0; n + 1];
        w[n] = 1.0;
        w
    };
    (w_rho, w_beta)
}

/// Gradients (and optionally Hessians) of every distinct batch at one point.
#[derive(Debug, Clone)]
pub struct BatchCache {
    grads: Vec<Vec<f64>>,
    hessians: Option<Vec<Matrix>>,
}

impl BatchCache {
    pub fn new(seq: &dyn LossSequence, theta: &[f64], with_hessians: bool) -> Result<Self> {
        let m = seq.batch_count();
        let grads: Vec<Vec<f64>> = (0..m).map(|b| seq.batch_grad(b, theta)).collect();
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("batch gradient".into()));
        }
        let hessians = if with_hessians {
            let hs: Vec<Matrix> = (0..m).map(|b| seq.batch_hess(b, theta)).collect();
            if hs.iter().any(|h| !h.is_finite()) {
                return Err(Error::NonFinite("batch Hessian".into()));
            }
            Some(hs)
        } else {
            None
        };
        Ok(BatchCache { grads, hessians })
    }

    pub fn batch_count(&self) -> usize {
        self.grads.len()
    }

    pub fn dimension(&self) -> usize {
        self.grads[0].len()
    }
}

/// The six ingredients of the modified equation at `(n, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTerms {
    pub n: usize,
    pub variant: Variant,
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub l: Vec<f64>,
    pub lbar: Vec<f64>,
    pub p: Vec<f64>,
    pub pbar: Vec<f64>,
}

fn check_adaptive(hyper: &Hyperparameters) -> Result<()> {
    hyper.validate()?;
    if !hyper.variant.is_adaptive() {
        return Err(Error::InvalidParameter(format!(
            "flow terms are defined for adaptive variants only, got {}",
            hyper.variant
        )));
    }
    Ok(())
}

fn denom(hyper: &Hyperparameters, r: f64) -> f64 {
    if hyper.variant.eps_inside() {
        r
    } else {
        r + hyper.eps
    }
}

/// Running first- and second-moment quantities `M^(l)`, `R^(l)` for
/// `l = 0..=n`, by forward recursion.
struct Moments {
    m: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

fn moments(cache: &BatchCache, hyper: &Hyperparameters, n: usize) -> Moments {
    let p = cache.dimension();
    let mb = cache.batch_count();
    let adam = hyper.variant.is_adam();
    let (rho, beta) = (hyper.rho, hyper.effective_beta());
    let mut first = vec![0.0; p];
    let mut second = vec![0.0; p];
    let mut ms = Vec::with_capacity(n + 1);
    let mut rs = Vec::with_capacity(n + 1);
    for l in 0..=n {
        let g = &cache.grads[l % mb];
        let (c_beta, c_rho) = if adam {
            (bias_factor(beta, l), bias_factor(rho, l))
        } else {
            (1.0, 1.0)
        };
        let mut m_l = vec![0.0; p];
        let mut r_l = vec![0.0; p];
        for j in 0..p {
            first[j] = beta * first[j] + (1.0 - beta) * g[j];
            second[j] = rho * second[j] + (1.0 - rho) * g[j] * g[j];
            m_l[j] = first[j] / c_beta;
            let v = second[j] / c_rho;
            r_l[j] = if hyper.variant.eps_inside() {
                (v + hyper.eps).sqrt()
            } else {
                v.sqrt()
            };
        }
        ms.push(m_l);
        rs.push(r_l);
    }
    Moments { m: ms, r: rs }
}

/// Leading-order terms `M^(n)` and `R^(n)` only.
pub fn eval_leading(
    cache: &BatchCache,
    hyper: &Hyperparameters,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_adaptive(hyper)?;
    let mut mo = moments(cache, hyper, n);
    Ok((mo.m.swap_remove(n), mo.r.swap_remove(n)))
}

/// All six terms through the cached regrouped sums.
pub fn eval_terms_cached(
    cache: &BatchCache,
    hyper: &Hyperparameters,
    n: usize,
) -> Result<FlowTerms> {
    check_adaptive(hyper)?;
    let hess = cache.hessians.as_ref().ok_or_else(|| {
        Error::InvalidParameter("flow terms need batch Hessians in the cache".into())
    })?;
    let p = cache.dimension();
    let mb = cache.batch_count();
    let mo = moments(cache, hyper, n);
    let ratio: Vec<Vec<f64>> =
        mo.m.iter()
            .zip(&mo.r)
            .map(|(m, r)| {
                m.iter()
                    .zip(r)
                    .map(|(mi, ri)| mi / denom(hyper, *ri))
                    .collect()
            })
            .collect();
    let (w_rho, w_beta) = weights(hyper, n);

    // Per batch b: weighted suffix sums of the ratio over steps k ≡ b, and
    // total weight of those steps.
    let mut sum_rho = vec![vec![0.0; p]; mb];
    let mut sum_beta = vec![vec![0.0; p]; mb];
    let mut mass_rho = vec![0.0; mb];
    let mut mass_beta = vec![0.0; mb];
    let mut suffix = vec![0.0; p];
    for k in (0..=n).rev() {
        if k < n {
            for (s, f) in suffix.iter_mut().zip(&ratio[k]) {
                *s += f;
            }
        }
        let b = k % mb;
        mass_rho[b] += w_rho[k];
        mass_beta[b] += w_beta[k];
        for i in 0..p {
            sum_rho[b][i] += w_rho[k] * suffix[i];
            sum_beta[b][i] += w_beta[k] * suffix[i];
        }
    }

    let current = &ratio[n];
    let mut l = vec![0.0; p];
    let mut lbar = vec![0.0; p];
    let mut pp = vec![0.0; p];
    let mut pbar = vec![0.0; p];
    for b in 0..mb {
        let h_b = &hess[b];
        let g_b = &cache.grads[b];
        let hq_beta = h_b.transpose_mul(&sum_beta[b]);
        let hq_rho = h_b.transpose_mul(&sum_rho[b]);
        let hf = h_b.transpose_mul(current);
        for j in 0..p {
            l[j] += hq_beta[j];
            lbar[j] += mass_beta[b] * hf[j];
            pp[j] += g_b[j] * hq_rho[j];
            pbar[j] += mass_rho[b] * g_b[j] * hf[j];
        }
    }
    let mut mo = mo;
    Ok(FlowTerms {
        n,
        variant: hyper.variant,
        r: mo.r.swap_remove(n),
        m: mo.m.swap_remove(n),
        l,
        lbar,
        p: pp,
        pbar,
    })
}

pub fn eval_terms(
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    n: usize,
    theta: &[f64],
) -> Result<FlowTerms> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("flow-term evaluation point".into()));
    }
    let cache = BatchCache::new(seq, theta, true)?;
    eval_terms_cached(&cache, hyper, n)
}

/// Simplified terms for a single repeated loss with gradient `grad` and
/// Hessian `hess`, written as the printed full-batch sums rather than the
/// regrouped recursion.
pub fn eval_terms_full_batch(
    grad: &[f64],
    hess: &Matrix,
    hyper: &Hyperparameters,
    n: usize,
) -> Result<FlowTerms> {
    check_adaptive(hyper)?;
    let p = grad.len();
    if hess.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: hess.dim(),
        });
    }
    let eps = hyper.eps;
    let rho = hyper.rho;
    if hyper.variant.is_adam() {
        // Bias corrections cancel: every average of a constant is itself.
        let r: Vec<f64> = grad
            .iter()
            .map(|g| {
                if hyper.variant.eps_inside() {
                    (g * g + eps).sqrt()
                } else {
                    g.abs()
                }
            })
            .collect();
        let f: Vec<f64> = grad
            .iter()
            .zip(&r)
            .map(|(g, ri)| g / denom(hyper, *ri))
            .collect();
        let hf = hess.transpose_mul(&f);
        let lag_beta = av_of_lag(hyper.beta, n);
        let lag_rho = av_of_lag(rho, n);
        Ok(FlowTerms {
            n,
            variant: hyper.variant,
            m: grad.to_vec(),
            l: hf.iter().map(|x| lag_beta * x).collect(),
            lbar: hf.clone(),
            p: (0..p).map(|j| lag_rho * grad[j] * hf[j]).collect(),
            pbar: (0..p).map(|j| grad[j] * hf[j]).collect(),
            r,
        })
    } else {
        let r_at = |l: usize, g: f64| {
            let c = 1.0 - rho.powi((l + 1) as i32);
            if hyper.variant.eps_inside() {
                (g * g * c + eps).sqrt()
            } else {
                g.abs() * c.sqrt()
            }
        };
        let f_at =
            |l: usize| -> Vec<f64> { grad.iter().map(|g| g / denom(hyper, r_at(l, *g))).collect() };
        // sum_k rho^(n-k)(1-rho) sum_{l=k}^{n-1} f(l) = sum_{l<n} rho^(n-l)(1-rho^(l+1)) f(l)
        let mut acc = vec![0.0; p];
        for l in 0..n {
            let w = rho.powi((n - l) as i32) * (1.0 - rho.powi((l + 1) as i32));
            for (a, f) in acc.iter_mut().zip(f_at(l)) {
                *a += w * f;
            }
        }
        let hq = hess.transpose_mul(&acc);
        let hf = hess.transpose_mul(&f_at(n));
        let mass = 1.0 - rho.powi((n + 1) as i32);
        Ok(FlowTerms {
            n,
            variant: hyper.variant,
            r: grad.iter().map(|g| r_at(n, *g)).collect(),
            m: grad.to_vec(),
            l: vec![0.0; p],
            lbar: hf.clone(),
            p: (0..p).map(|j| grad[j] * hq[j]).collect(),
            pbar: (0..p).map(|j| mass * grad[j] * hf[j]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Drop the `h` correction.
    Leading,
    FirstOrder,
}

impl Order {
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            0 => Ok(Order::Leading),
            1 => Ok(Order::FirstOrder),
            _ => Err(Error::InvalidParameter(format!(
                "flow order must be 0 or 1, got {i}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Gradient flow on `E + (h/4) |∇E|^2`.
    ModifiedGd,
    /// Time-rescaled heavy-ball flow with descent sign.
    ModifiedHeavyBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsSpec {
    Adaptive(Order),
    Baseline(Baseline),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhsEval {
    pub value: Vec<f64>,
    /// Some coordinate had `R_j < DEGENERATE_R` under an eps-outside variant and
    /// its correction was set to zero.
    pub degenerate: bool,
}

/// Assembles the right-hand side from precomputed terms.
pub fn rhs_from_terms(terms: &FlowTerms, hyper: &Hyperparameters, order: Order) -> RhsEval {
    let p = terms.r.len();
    let mut value = Vec::with_capacity(p);
    let mut degenerate = false;
    for j in 0..p {
        let r = terms.r[j];
        let d = denom(hyper, r);
        let lead = -terms.m[j] / d;
        if order == Order::Leading {
            value.push(lead);
            continue;
        }
        if !hyper.variant.eps_inside() && r < DEGENERATE_R {
            degenerate = true;
            value.push(lead);
            continue;
        }
        let corr = terms.m[j] * (2.0 * terms.p[j] + terms.pbar[j]) / (2.0 * d * d * r)
            - (2.0 * terms.l[j] + terms.lbar[j]) / (2.0 * d);
        value.push(lead + hyper.h * corr);
    }
    RhsEval { value, degenerate }
}

pub fn baseline_rhs(
    kind: Baseline,
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta: &[f64],
) -> Result<Vec<f64>> {
    if seq.batch_count() != 1 {
        return Err(Error::InvalidParameter(format!(
            "baseline flows need a full-batch loss, got {} batches",
            seq.batch_count()
        )));
    }
    let g = seq.grad(0, theta);
    let hg = seq.hess(0, theta).mul_vec(&g);
    let h = hyper.h;
    let out = match kind {
        Baseline::ModifiedGd => g
            .iter()
            .zip(&hg)
            .map(|(gi, hgi)| -(gi + 0.5 * h * hgi))
            .collect(),
        Baseline::ModifiedHeavyBall => {
            let b = hyper.beta;
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "beta must lie in [0, 1), got {b}"
                )));
            }
            let lead = 1.0 / (1.0 - b);
            // gradient of |∇E|^2 is 2 H g
            let corr = h * (1.0 + b) / (4.0 * (1.0 - b).powi(3)) * 2.0;
            g.iter()
                .zip(&hg)
                .map(|(gi, hgi)| -lead * gi - corr * hgi)
                .collect()
        }
    };
    Ok(out)
}

/// Right-hand side on interval `n` at `theta`.
pub fn rhs(
    spec: RhsSpec,
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    n: usize,
    theta: &[f64],
) -> Result<RhsEval> {
    match spec {
        RhsSpec::Baseline(kind) => Ok(RhsEval {
            value: baseline_rhs(kind, seq, hyper, theta)?,
            degenerate: false,
        }),
        RhsSpec::Adaptive(Order::Leading) => {
            let cache = BatchCache::new(seq, theta, false)?;
            let (m, r) = eval_leading(&cache, hyper, n)?;
            let value = m
                .iter()
                .zip(&r)
                .map(|(mi, ri)| -mi / denom(hyper, *ri))
                .collect();
            Ok(RhsEval {
                value,
                degenerate: false,
            })
        }
        RhsSpec::Adaptive(order) => {
            let terms = eval_terms(seq, hyper, n, theta)?;
            Ok(rhs_from_terms(&terms, hyper, order))
        }
    }
}

/// `(h/2) * coeff_j * ∇_j |∇E|_{1,eps}` with
/// `coeff_j = (1+β)/(1-β) - (1+ρ)/(1-ρ) + (1+ρ)/(1-ρ) * eps/(g_j^2 + eps)`.
/// RMSProp variants use `β = 0`.
pub fn bias_general(grad: &[f64], hess: &Matrix, hyper: &Hyperparameters) -> Result<Vec<f64>> {
    let (a, b) = bias_coefficients(hyper)?;
    let dn = grad_perturbed_one_norm(grad, hess, hyper.eps)?;
    Ok(grad
        .iter()
        .zip(&dn)
        .map(|(g, d)| 0.5 * hyper.h * (a + b * hyper.eps / (g * g + hyper.eps)) * d)
        .collect())
}

/// The general bias without the `eps/(g^2+eps)` term.
pub fn bias_small_eps(grad: &[f64], hess: &Matrix, hyper: &Hyperparameters) -> Result<Vec<f64>> {
    let (a, _) = bias_coefficients(hyper)?;
    let dn = grad_perturbed_one_norm(grad, hess, hyper.eps)?;
    Ok(dn.iter().map(|d| 0.5 * hyper.h * a * d).collect())
}

/// `(h / (4 sqrt(eps))) * (1+β)/(1-β) * ∇|∇E|^2`.
pub fn bias_large_eps(grad: &[f64], hess: &Matrix, hyper: &Hyperparameters) -> Result<Vec<f64>> {
    bias_coefficients(hyper)?;
    let beta = hyper.effective_beta();
    let c = hyper.h / (4.0 * hyper.eps.sqrt()) * (1.0 + beta) / (1.0 - beta);
    Ok(hess.mul_vec(grad).iter().map(|hg| c * 2.0 * hg).collect())
}

/// `((1+β)/(1-β) - (1+ρ)/(1-ρ), (1+ρ)/(1-ρ))`.
pub fn bias_coefficients(hyper: &Hyperparameters) -> Result<(f64, f64)> {
    check_adaptive(hyper)?;
    let beta = hyper.effective_beta();
    let rho_part = (1.0 + hyper.rho) / (1.0 - hyper.rho);
    Ok(((1.0 + beta) / (1.0 - beta) - rho_part, rho_part))
}

/// Piecewise-ODE solution sampled on the fine RK grid.
#[derive(Debug, Clone)]
pub struct GridSolution {
    /// States at `t_n = n h`, `n = 0..=N`.
    pub states: Vec<Point>,
    /// States at `n h + i h / substeps`, `N * substeps + 1` entries.
    pub fine: Vec<Point>,
    pub substeps: usize,
    pub spec: RhsSpec,
    pub hyper: Hyperparameters,
    /// Number of right-hand-side evaluations flagged degenerate.
    pub degenerate_evals: usize,
}

impl GridSolution {
    pub fn h(&self) -> f64 {
        self.hyper.h
    }

    pub fn intervals(&self) -> usize {
        self.states.len() - 1
    }

    /// Columns: n, t, theta_1..theta_p.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = self.states.first().map_or(0, |x| x.dim());
        write!(w, "n,t")?;
        for i in 1..=p {
            write!(w, ",theta_{i}")?;
        }
        writeln!(w)?;
        for (n, s) in self.states.iter().enumerate() {
            write!(w, "{n},{}", n as f64 * self.hyper.h)?;
            for x in s.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn axpy(base: &[f64], a: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + a * d).collect()
}

/// Classical RK4 with `substeps` equal steps per interval; interval `n` uses
/// the right-hand side with index `n` throughout.
pub fn integrate(
    spec: RhsSpec,
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta0: Point,
    n_intervals: usize,
    substeps: usize,
) -> Result<GridSolution> {
    if substeps == 0 {
        return Err(Error::InvalidParameter(
            "substeps must be at least 1".into(),
        ));
    }
    hyper.validate()?;
    if theta0.dim() != seq.dimension() {
        return Err(Error::DimensionMismatch {
            expected: seq.dimension(),
            got: theta0.dim(),
        });
    }
    let dt = hyper.h / substeps as f64;
    let mut degenerate_evals = 0;
    let mut states = vec![theta0.clone()];
    let mut fine = vec![theta0.clone()];
    let mut y = theta0.into_inner();

    let blow_up = |states: Vec<Point>| Error::BlowUp {
        last_finite: states.len() - 1,
        partial: states,
    };

    for n in 0..n_intervals {
        for _ in 0..substeps {
            let mut f = |x: &[f64]| -> Result<Vec<f64>> {
                let e = rhs(spec, seq, hyper, n, x)?;
                degenerate_evals += e.degenerate as usize;
                Ok(e.value)
            };
            let stages = (|| -> Result<Vec<f64>> {
                let k1 = f(&y)?;
                let k2 = f(&axpy(&y, 0.5 * dt, &k1))?;
                let k3 = f(&axpy(&y, 0.5 * dt, &k2))?;
                let k4 = f(&axpy(&y, dt, &k3))?;
                Ok((0..y.len())
                    .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect())
            })();
            y = match stages {
                Ok(next) if next.iter().all(|v| v.is_finite()) => next,
                Ok(_) | Err(Error::NonFinite(_)) => return Err(blow_up(states)),
                Err(e) => return Err(e),
            };
            fine.push(Point::new(y.clone())?);
        }
        states.push(fine.last().cloned().expect("fine grid is nonempty"));
    }
    Ok(GridSolution {
        states,
        fine,
        substeps,
        spec,
        hyper: *hyper,
        degenerate_evals,
    })
}

pub const PENALTY_TOLERANCE: f64 = 1e-10;

/// Integrand of the implicit penalty in the `dy` measure.
pub fn penalty_integrand(beta: f64, rho: f64, eps: f64, y: f64) -> f64 {
    let b = (1.0 + rho) / (1.0 - rho);
    let a = (1.0 + beta) / (1.0 - beta) - b;
    let s = (eps + y * y).sqrt();
    (a + b * eps / (y * y + eps)) * y / s
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Cumulative integral of the penalty integrand from 0 to each grid point.
pub fn penalty_curve(beta: f64, rho: f64, eps: f64, xs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !(0.0..1.0).contains(&beta) || !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "penalty curve needs beta in [0,1), rho in (0,1), eps > 0; got {beta}, {rho}, {eps}"
        )));
    }
    if xs.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(
            "penalty grid must be sorted and nonnegative".into(),
        ));
    }
    let f = |y: f64| penalty_integrand(beta, rho, eps, y);
    let tol = PENALTY_TOLERANCE / xs.len().max(1) as f64;
    let mut out = Vec::with_capacity(xs.len());
    let (mut prev, mut acc) = (0.0, 0.0);
    for &x in xs {
        acc += integrate_simpson(&f, prev, x, tol);
        prev = x;
        out.push((x, acc));
    }
    Ok(out)
}
