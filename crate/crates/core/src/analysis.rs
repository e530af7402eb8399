//! Trajectory discrepancies, convergence-order fits and the special-case
//! equivalence checks.

use std::io::{self, Write};

use crate::discrete_optim::{run, Hyperparameters, Trajectory, Variant};
use crate::error::{Error, Result};
use crate::linalg::{one_norm, sup_norm, two_norm, Matrix, Point};
use crate::losses::LossSequence;
use crate::modified_flow::{integrate, GridSolution, Order, RhsSpec};

/// `sum_i sqrt(v_i^2 + eps)`.
pub fn perturbed_one_norm(v: &[f64], eps: f64) -> f64 {
    v.iter().map(|x| (x * x + eps).sqrt()).sum()
}

/// Gradient of `θ ↦ |∇E(θ)|_{1,eps}`: `out_j = sum_i H_ij g_i / sqrt(g_i^2 + eps)`.
pub fn grad_perturbed_one_norm(grad: &[f64], hess: &Matrix, eps: f64) -> Result<Vec<f64>> {
    if hess.dim() != grad.len() {
        return Err(Error::DimensionMismatch {
            expected: grad.len(),
            got: hess.dim(),
        });
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    let mut weights = Vec::with_capacity(grad.len());
    for (i, g) in grad.iter().enumerate() {
        let s = (g * g + eps).sqrt();
        if s == 0.0 {
            return Err(Error::Degenerate(format!(
                "one-norm is not differentiable at zero gradient component {i}"
            )));
        }
        weights.push(g / s);
    }
    let out = hess.transpose_mul(&weights);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("perturbed one-norm gradient".into()));
    }
    Ok(out)
}

/// Per-step Euclidean distances between two equally long sequences of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub errors: Vec<f64>,
    /// Difference vectors `a_n - b_n` behind `errors`.
    pub diffs: Vec<Vec<f64>>,
    pub max: f64,
    /// Largest single-coordinate deviation over all steps.
    pub max_coordinate: f64,
    pub h: f64,
}

impl ErrorSeries {
    /// Columns: n, t, error.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,t,error")?;
        for (n, e) in self.errors.iter().enumerate() {
            writeln!(w, "{n},{},{e}", n as f64 * self.h)?;
        }
        Ok(())
    }
}

pub fn error_series(a: &[Point], b: &[Point], h: f64) -> Result<ErrorSeries> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "{} points against {}",
            a.len(),
            b.len()
        )));
    }
    let mut errors = Vec::with_capacity(a.len());
    let mut diffs = Vec::with_capacity(a.len());
    let mut max_coordinate: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.dim() != y.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                got: y.dim(),
            });
        }
        let d: Vec<f64> = x.iter().zip(y.iter()).map(|(u, v)| u - v).collect();
        max_coordinate = max_coordinate.max(sup_norm(&d));
        errors.push(two_norm(&d));
        diffs.push(d);
    }
    let max = errors.iter().cloned().fold(0.0, f64::max);
    Ok(ErrorSeries {
        errors,
        diffs,
        max,
        max_coordinate,
        h,
    })
}

/// `e_n = |θ̃(nh) - θ^(n)|` along a discrete run and its modified flow.
pub fn trajectory_error(discrete: &Trajectory, continuous: &GridSolution) -> Result<ErrorSeries> {
    let (hd, hc) = (discrete.hyper.h, continuous.h());
    if hd != hc {
        return Err(Error::InvalidParameter(format!(
            "step sizes differ: {hd} against {hc}"
        )));
    }
    error_series(&continuous.states, &discrete.points, hd)
}

/// Least-squares line through `(log h, log error)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

impl OrderFit {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# slope = {}", self.slope)?;
        writeln!(w, "# intercept = {}", self.intercept)?;
        writeln!(w, "# residual = {}", self.residual)?;
        writeln!(w, "h,max_error")?;
        for (h, e) in &self.pairs {
            writeln!(w, "{h},{e}")?;
        }
        Ok(())
    }
}

pub fn estimate_order(pairs: &[(f64, f64)]) -> Result<OrderFit> {
    if let Some((h, e)) = pairs
        .iter()
        .find(|(h, e)| !(*h > 0.0) || !(*e > 0.0) || !e.is_finite())
    {
        return Err(Error::Degenerate(format!(
            "order fit needs positive h and error, got ({h}, {e})"
        )));
    }
    let mut hs: Vec<f64> = pairs.iter().map(|(h, _)| *h).collect();
    hs.sort_by(f64::total_cmp);
    hs.dedup();
    if hs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "order fit needs at least 3 distinct step sizes, got {}",
            hs.len()
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|(h, _)| h.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(OrderFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        residual,
    })
}

/// Number of whole steps of size `h` in `[0, horizon]`, tolerant to
/// representation error in `horizon / h`.
pub fn step_count(horizon: f64, h: f64) -> usize {
    (horizon / h + 1e-9).floor() as usize
}

/// Discrete run and both flow orders at one step size.
#[derive(Debug, Clone)]
pub struct OrderStudyRow {
    pub h: f64,
    pub leading: ErrorSeries,
    pub first_order: ErrorSeries,
}

/// Runs the discrete method and integrates the leading and first-order
/// flows on `[0, horizon]` with step `h`.
pub fn order_study_row(
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta0: &Point,
    horizon: f64,
    h: f64,
    substeps: usize,
) -> Result<OrderStudyRow> {
    let hyper = Hyperparameters { h, ..*hyper };
    let n = step_count(horizon, h);
    let discrete = run(seq, &hyper, theta0.clone(), n)?;
    let lead = integrate(
        RhsSpec::Adaptive(Order::Leading),
        seq,
        &hyper,
        theta0.clone(),
        n,
        substeps,
    )?;
    let first = integrate(
        RhsSpec::Adaptive(Order::FirstOrder),
        seq,
        &hyper,
        theta0.clone(),
        n,
        substeps,
    )?;
    Ok(OrderStudyRow {
        h,
        leading: trajectory_error(&discrete, &lead)?,
        first_order: trajectory_error(&discrete, &first)?,
    })
}

/// Fits of max-over-steps error against `h` for both flow orders.
#[derive(Debug, Clone)]
pub struct OrderStudy {
    pub rows: Vec<OrderStudyRow>,
    pub leading: OrderFit,
    pub first_order: OrderFit,
}

pub fn fit_order_study(rows: Vec<OrderStudyRow>) -> Result<OrderStudy> {
    let lead: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.leading.max)).collect();
    let first: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.first_order.max)).collect();
    Ok(OrderStudy {
        leading: estimate_order(&lead)?,
        first_order: estimate_order(&first)?,
        rows,
    })
}

pub fn order_study(
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta0: &Point,
    horizon: f64,
    hs: &[f64],
    substeps: usize,
) -> Result<OrderStudy> {
    let rows = hs
        .iter()
        .map(|&h| order_study_row(seq, hyper, theta0, horizon, h, substeps))
        .collect::<Result<Vec<_>>>()?;
    fit_order_study(rows)
}

pub const DEFAULT_BURN_IN: usize = 20;

/// Comparison of large-`eps` Adam against heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyBallReport {
    pub eps: f64,
    pub effective_step: f64,
    pub burn_in: usize,
    pub window: usize,
    /// Sup-norm deviation over the compared window.
    pub max_deviation: f64,
    /// `max_deviation` divided by the largest displacement from the start
    /// over the window.
    pub relative_deviation: f64,
    pub max_grad_sq: f64,
    /// `eps >= 1e6 * max_grad_sq` held along both runs.
    pub valid: bool,
    pub adam: Trajectory,
    pub heavy_ball: Trajectory,
}

/// Runs AdamEpsIn and heavy-ball with step `h (1-β)/sqrt(eps)` and momentum
/// `β` from the same start, both for `burn_in + window` steps, and compares
/// iterates `burn_in..=burn_in + window`.
pub fn heavy_ball_equiv(
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta0: Point,
    window: usize,
    burn_in: usize,
) -> Result<HeavyBallReport> {
    if hyper.variant != Variant::AdamEpsIn {
        return Err(Error::InvalidParameter(format!(
            "heavy-ball comparison runs adam-eps-in, got {}",
            hyper.variant
        )));
    }
    hyper.validate()?;
    let total = burn_in + window;
    let effective_step = hyper.h * (1.0 - hyper.beta) / hyper.eps.sqrt();
    let hb_hyper = Hyperparameters {
        h: effective_step,
        variant: Variant::HeavyBall,
        ..*hyper
    };
    let adam = run(seq, hyper, theta0.clone(), total)?;
    let heavy_ball = run(seq, &hb_hyper, theta0.clone(), total)?;

    let mut max_deviation: f64 = 0.0;
    let mut max_move: f64 = 0.0;
    for n in burn_in..=total {
        let d: Vec<f64> = adam.points[n]
            .iter()
            .zip(heavy_ball.points[n].iter())
            .map(|(a, b)| a - b)
            .collect();
        max_deviation = max_deviation.max(sup_norm(&d));
        let mv: Vec<f64> = adam.points[n]
            .iter()
            .zip(theta0.iter())
            .map(|(a, b)| a - b)
            .collect();
        max_move = max_move.max(sup_norm(&mv));
    }
    let mut max_grad_sq: f64 = 0.0;
    for p in adam.points.iter().chain(&heavy_ball.points) {
        for b in 0..seq.batch_count() {
            let g = seq.batch_grad(b, p);
            max_grad_sq = max_grad_sq.max(g.iter().map(|x| x * x).fold(0.0, f64::max));
        }
    }
    Ok(HeavyBallReport {
        eps: hyper.eps,
        effective_step,
        burn_in,
        window,
        max_deviation,
        relative_deviation: if max_move > 0.0 {
            max_deviation / max_move
        } else {
            0.0
        },
        max_grad_sq,
        valid: hyper.eps >= 1e6 * max_grad_sq,
        adam,
        heavy_ball,
    })
}

/// Both sides of `|g|_{1,eps} ≈ p sqrt(eps) + |g|^2 / (2 sqrt(eps))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Taylor remainder bound `sum_i g_i^4 / (8 eps^(3/2))`.
    pub remainder_bound: f64,
}

pub fn linearization_check(grad: &[f64], eps: f64) -> Result<LinearizationReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let s = eps.sqrt();
    let lhs = perturbed_one_norm(grad, eps);
    let sq: f64 = grad.iter().map(|g| g * g).sum();
    let rhs = grad.len() as f64 * s + sq / (2.0 * s);
    Ok(LinearizationReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        remainder_bound: grad.iter().map(|g| g.powi(4)).sum::<f64>() / (8.0 * eps * s),
    })
}

/// Mean of `|∇E|_1` over the last `tail` iterates of a run.
pub fn tail_mean_grad_one_norm(seq: &dyn LossSequence, traj: &Trajectory, tail: usize) -> f64 {
    let start = traj.points.len().saturating_sub(tail);
    let pts = &traj.points[start..];
    pts.iter().map(|p| one_norm(&seq.full_grad(p))).sum::<f64>() / pts.len() as f64
}
