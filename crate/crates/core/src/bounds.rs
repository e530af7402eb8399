//! Explicit constants of the global error bounds.
//!
//! For every variant the global bound reads
//! `|e_n| <= d1 exp(d2 n h) h^2` and `|e_(n+1) - e_n| <= d3 exp(d2 n h) h^3`
//! with `d1 = c`, `d3 = c d2` and `c` the local error constant. The full
//! lemma chain producing `c` is printed only for RMSProp with `eps` outside
//! the root; other variants take `c` from the caller.

use std::fmt::Write as _;

use crate::analysis::ErrorSeries;
use crate::discrete_optim::{Hyperparameters, Variant};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::LossSequence;
use crate::modified_flow::{eval_leading, rhs, BatchCache, GridSolution, RhsSpec};

/// Inputs of the constant formulas.
///
/// `m1..m4` bound derivatives of every batch loss of orders one to four on
/// the region of interest, `r` bounds the accumulated root-mean-square
/// gradient from below, and `d1..d3` bound the first three time derivatives
/// of the modified trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveConstants {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub r: Option<f64>,
    pub eps: f64,
    pub rho: f64,
    pub beta: f64,
    pub p: usize,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub horizon: f64,
}

impl PrimitiveConstants {
    /// `m1`, `m2`, `eps` and a supplied `r` must be positive and `rho` in
    /// `(0, 1)`. Third and fourth derivative bounds and `d1..d3` may vanish
    /// (polynomial losses, straight-line flows).
    pub fn validate(&self) -> Result<()> {
        let positive = [("M1", self.m1), ("M2", self.m2), ("eps", self.eps)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let nonneg = [
            ("M3", self.m3),
            ("M4", self.m4),
            ("D1", self.d1),
            ("D2", self.d2),
            ("D3", self.d3),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if let Some(r) = self.r {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "R must be positive, got {r}"
                )));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// `d1 = c`, `d2 = [1 + (M2 sqrt(p) / A)(M1^2 / B + 1) d1] sqrt(p)`, `d3 = c d2`
/// with `A = R + eps`, `B = R (R + eps)` for eps-outside variants and
/// `A = sqrt(eps)`, `B = eps` for eps-inside variants.
pub fn global_constants(
    variant: Variant,
    prim: &PrimitiveConstants,
    c_local: f64,
) -> Result<GlobalConstants> {
    if !variant.is_adaptive() {
        return Err(Error::InvalidParameter(format!(
            "no global bound for {variant}"
        )));
    }
    if !(c_local >= 0.0) || !c_local.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "local constant must be nonnegative, got {c_local}"
        )));
    }
    prim.validate()?;
    let (a, b) = if variant.eps_inside() {
        (prim.eps.sqrt(), prim.eps)
    } else {
        let r = prim.r.ok_or(Error::MissingConstant("R"))?;
        (r + prim.eps, r * (r + prim.eps))
    };
    let sp = (prim.p as f64).sqrt();
    let d1 = c_local;
    let d2 = (1.0 + prim.m2 * sp / a * (prim.m1 * prim.m1 / b + 1.0) * d1) * sp;
    Ok(GlobalConstants {
        d1,
        d2,
        d3: c_local * d2,
    })
}

/// Every intermediate constant of the RMSProp eps-outside chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub p_bound: f64,
    pub p_bar_bound: f64,
    pub e_first_der: f64,
    pub paramsc_der_first_order: f64,
    pub sol_der_first_order: f64,
    pub second_first_grad_over_r_partial_sum: f64,
    pub der_p_first_term: f64,
    pub der_r: f64,
    pub der_p_second_term_aux_one: f64,
    pub der_p_second_term_aux_two: f64,
    pub der_p_second_term: f64,
    pub der_bar_p: f64,
    pub der_r_pl_eps_sq_r_inverse: f64,
    pub der_huge_func_first_term: f64,
    pub der_huge_func_second_term: f64,
    pub e_second_der: f64,
    pub der_der_r: f64,
    pub der_der_r_inv_sq: f64,
    pub der_der_r_inv: f64,
    pub der_der_r_sq_r_inv: f64,
    pub der_der_second_first_grad_over_r_partial_sum: f64,
    pub firstorderdif: f64,
    pub secondorderdif: f64,
    pub nth_step_modified_h_term_der: f64,
    pub frderhbound: f64,
    pub c_local: f64,
    pub global: GlobalConstants,
}

impl BoundConstants {
    /// Named values in dependency order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("c_p-bound", self.p_bound),
            ("c_p-bar-bound", self.p_bar_bound),
            ("c_e-first-der", self.e_first_der),
            (
                "c_paramsc-der-first-order-bound",
                self.paramsc_der_first_order,
            ),
            ("c_sol-der-first-order", self.sol_der_first_order),
            (
                "c_second-first-grad-over-r-partial-sum",
                self.second_first_grad_over_r_partial_sum,
            ),
            ("c_der-p-first-term", self.der_p_first_term),
            ("c_der-r", self.der_r),
            (
                "c_der-p-second-term-aux-one",
                self.der_p_second_term_aux_one,
            ),
            (
                "c_der-p-second-term-aux-two",
                self.der_p_second_term_aux_two,
            ),
            ("c_der-p-second-term", self.der_p_second_term),
            ("c_der-bar-p", self.der_bar_p),
            (
                "c_der-r-pl-eps-sq-r-inverse",
                self.der_r_pl_eps_sq_r_inverse,
            ),
            ("c_der-huge-func-first-term", self.der_huge_func_first_term),
            (
                "c_der-huge-func-second-term",
                self.der_huge_func_second_term,
            ),
            ("c_e-second-der", self.e_second_der),
            ("c_der-der-r", self.der_der_r),
            ("c_der-der-r-inv-sq", self.der_der_r_inv_sq),
            ("c_der-der-r-inv", self.der_der_r_inv),
            ("c_der-der-r-sq-r-inv", self.der_der_r_sq_r_inv),
            (
                "c_der-der-second-first-grad-over-r-partial-sum-bound",
                self.der_der_second_first_grad_over_r_partial_sum,
            ),
            ("c_firstorderdif", self.firstorderdif),
            ("c_secondorderdif", self.secondorderdif),
            (
                "c_nth-step-modified-h-term-der-bound",
                self.nth_step_modified_h_term_der,
            ),
            ("c_frderhbound", self.frderhbound),
            ("c_localerrorbound", self.c_local),
            ("d1", self.global.d1),
            ("d2", self.global.d2),
            ("d3", self.global.d3),
        ]
    }

    /// One `name = value` line per constant.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub fn lemma_chain_rmsprop_out(prim: &PrimitiveConstants) -> Result<BoundConstants> {
    prim.validate()?;
    let r = prim.r.ok_or(Error::MissingConstant("R"))?;
    let PrimitiveConstants {
        m1,
        m2,
        m3,
        m4,
        eps,
        rho,
        d1,
        d2,
        d3,
        ..
    } = *prim;
    let p = prim.p as f64;
    let re = r + eps;
    let geo = rho / (1.0 - rho);

    let p_bound = p * m1 * m1 * m2 / re * geo;
    let p_bar_bound = p * m1 * m1 * m2 / re;
    let e_first_der = p * m2 * d1;
    let paramsc =
        m1 * (2.0 * p_bound + p_bar_bound) / (2.0 * re * re * r) + p * m1 * m2 / (2.0 * re * re);
    let sol_der_first_order = p * m2 * paramsc;
    let sfg = p * m1 * m2 / re;
    let der_p_first_term = d1 * p * p * m1 * m2 * m2 / re * geo;
    let der_r = d1 * p * m1 * m2 / r;
    let aux1 = d1 * p * p * m1 * m3 / re;
    let aux2 = aux1 + p * m2 * (d1 * p * m2 / re + m1 / (re * re) * der_r);
    let der_p_second_term = m1 * aux2 * geo;
    let der_bar_p = 2.0 * d1 * p * p * m1 * m2 * m2 / re
        + d1 * p * p * m1 * m1 * m3 / re
        + p * m1 * m1 * m2 * der_r / (re * re);
    let der_r_inv = 2.0 * der_r / (r * re.powi(3)) + der_r / re.powi(4);
    let two_p_pbar = 2.0 * p_bound + p_bar_bound;
    let huge1 = d1 * p * m2 * two_p_pbar / (2.0 * re * re * r)
        + m1 * (2.0 * (der_p_first_term + der_p_second_term) + der_bar_p) / (2.0 * re * re * r)
        + m1 * two_p_pbar * der_r_inv / 2.0;
    let huge2 =
        (p * p * d1 * m1 * m3 / re + p * p * d1 * m2 * m2 / re + p * m1 * m2 * der_r / (re * re))
            / (2.0 * re)
            + 0.5 * (p * m1 * m2 / re) * der_r / (re * re);

    let e_second_der = p * p * m3 * d1 * d1 + p * m2 * d2;
    let ddr = der_r / (r * r) * p * m1 * m2 * d1
        + (p * p * m2 * m2 * d1 * d1 + p * p * m1 * m3 * d1 * d1 + p * m1 * m2 * d2) / r;
    let ddr_inv_sq = 6.0 * der_r * der_r / re.powi(4) + 2.0 * ddr / re.powi(3);
    let ddr_inv = 2.0 * der_r * der_r / r.powi(3) + ddr / (r * r);
    let ddr_sq_r_inv =
        ddr_inv_sq / r + 4.0 * der_r * der_r / (r * r * re.powi(3)) + ddr_inv / (re * re);
    let dd_sfg = p
        * (2.0 * der_r * (d1 * m2 * m2 * p + d1 * m1 * m3 * p) / (re * re)
            + m1 * m2 * (2.0 * der_r * der_r / re.powi(3) + ddr / (re * re))
            + (2.0 * d1 * d1 * m2 * m3 * p * p
                + m2 * (d1 * d1 * m3 * p * p + d2 * m2 * p)
                + m1 * (d1 * d1 * m4 * p * p + d2 * m3 * p))
                / re);

    let firstorderdif = 2.0 * m1 * e_first_der * geo;
    let x = e_second_der + 2.0 * sol_der_first_order - aux2;
    let secondorderdif = m1 * x.abs() * geo
        + (m1 * aux2 + x.abs() * sfg + x * x / 4.0) * rho * (1.0 + rho) / (1.0 - rho).powi(2)
        + (aux2 * sfg + aux2 / 2.0 * x.abs()) * rho * (1.0 + 4.0 * rho + rho * rho)
            / (1.0 - rho).powi(3)
        + aux2 * aux2 / 4.0 * rho * (1.0 + 11.0 * rho + 11.0 * rho * rho + rho.powi(3))
            / (1.0 - rho).powi(4);
    let nth = huge1 + huge2;
    let frder = (p * m2 / re + m1 * m1 * m2 * p / (re * re * r)) * paramsc;
    let c_local = d3 / 6.0
        + (nth + frder) / 2.0
        + m1 * (firstorderdif * firstorderdif + r * r * secondorderdif)
            / (2.0 * r.powi(3) * re * re);
    let global = global_constants(Variant::RmsPropEpsOut, prim, c_local)?;

    Ok(BoundConstants {
        p_bound,
        p_bar_bound,
        e_first_der,
        paramsc_der_first_order: paramsc,
        sol_der_first_order,
        second_first_grad_over_r_partial_sum: sfg,
        der_p_first_term,
        der_r,
        der_p_second_term_aux_one: aux1,
        der_p_second_term_aux_two: aux2,
        der_p_second_term,
        der_bar_p,
        der_r_pl_eps_sq_r_inverse: der_r_inv,
        der_huge_func_first_term: huge1,
        der_huge_func_second_term: huge2,
        e_second_der,
        der_der_r: ddr,
        der_der_r_inv_sq: ddr_inv_sq,
        der_der_r_inv: ddr_inv,
        der_der_r_sq_r_inv: ddr_sq_r_inv,
        der_der_second_first_grad_over_r_partial_sum: dd_sfg,
        firstorderdif,
        secondorderdif,
        nth_step_modified_h_term_der: nth,
        frderhbound: frder,
        c_local,
        global,
    })
}

/// How trustworthy estimated primitives are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grade {
    /// Derivative bounds come from the loss analytically; trajectory bounds
    /// are still divided differences.
    Certified,
    /// Derivative bounds are sampled suprema along the flow.
    Empirical,
}

impl Grade {
    pub fn as_str(self) -> &'static str {
        match self {
            Grade::Certified => "certified",
            Grade::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveEstimate {
    pub prim: PrimitiveConstants,
    pub grade: Grade,
}

fn hess_sup(h: &Matrix) -> f64 {
    h.max_abs()
}

/// Sampled suprema of derivatives up to order four at `points`, using central
/// differences of the analytic Hessian for orders three and four.
fn sampled_bounds(seq: &dyn LossSequence, points: &[&[f64]]) -> (f64, f64, f64, f64) {
    const STEP: f64 = 1e-4;
    let p = seq.dimension();
    let (mut m1, mut m2, mut m3, mut m4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for theta in points {
        for b in 0..seq.batch_count() {
            m1 = m1.max(
                seq.batch_grad(b, theta)
                    .iter()
                    .fold(0.0, |a, g| a.max(g.abs())),
            );
            let h0 = seq.batch_hess(b, theta);
            m2 = m2.max(hess_sup(&h0));
            let mut probe = theta.to_vec();
            for s in 0..p {
                probe[s] = theta[s] + STEP;
                let hp = seq.batch_hess(b, &probe);
                probe[s] = theta[s] - STEP;
                let hm = seq.batch_hess(b, &probe);
                probe[s] = theta[s];
                for i in 0..p {
                    for j in 0..p {
                        m3 = m3.max(((hp[(i, j)] - hm[(i, j)]) / (2.0 * STEP)).abs());
                        m4 = m4.max(
                            ((hp[(i, j)] - 2.0 * h0[(i, j)] + hm[(i, j)]) / (STEP * STEP)).abs(),
                        );
                    }
                }
            }
        }
    }
    (m1, m2, m3, m4)
}

/// Primitive constants witnessed along a completed flow integration.
///
/// `R` is the smallest accumulated root-mean-square gradient `R_j^(n)` over
/// the fine grid of interval `n`. `D1` is the largest right-hand-side
/// component, `D2` and `D3` are the largest first and second divided
/// differences of the right-hand side within an interval.
pub fn estimate_primitives(
    seq: &dyn LossSequence,
    flow: &GridSolution,
    half_width: f64,
) -> Result<PrimitiveEstimate> {
    let hyper: &Hyperparameters = &flow.hyper;
    if let Some(index) = flow
        .fine
        .iter()
        .position(|s| s.iter().any(|x| x.abs() > half_width))
    {
        return Err(Error::OutsideBox { index, half_width });
    }
    let s = flow.substeps;
    if s < 2 {
        return Err(Error::InvalidParameter(
            "estimating third-derivative bounds needs at least 2 substeps".into(),
        ));
    }
    let dt = hyper.h / s as f64;

    let mut r_min = f64::INFINITY;
    let (mut d1, mut d2, mut d3) = (0.0f64, 0.0f64, 0.0f64);
    for n in 0..flow.intervals() {
        let nodes = &flow.fine[n * s..=(n + 1) * s];
        let mut values = Vec::with_capacity(s + 1);
        for node in nodes {
            if let RhsSpec::Adaptive(_) = flow.spec {
                let cache = BatchCache::new(seq, node, false)?;
                let (_, r) = eval_leading(&cache, hyper, n)?;
                r_min = r.iter().cloned().fold(r_min, f64::min);
            }
            values.push(rhs(flow.spec, seq, hyper, n, node)?.value);
        }
        for (k, v) in values.iter().enumerate() {
            for j in 0..v.len() {
                d1 = d1.max(v[j].abs());
                if k >= 1 {
                    d2 = d2.max((v[j] - values[k - 1][j]).abs() / dt);
                }
                if k >= 2 {
                    d3 = d3
                        .max((v[j] - 2.0 * values[k - 1][j] + values[k - 2][j]).abs() / (dt * dt));
                }
            }
        }
    }

    let (bounds, grade) = match seq.deriv_bounds() {
        Some(b) => ((b.m1, b.m2, b.m3, b.m4), Grade::Certified),
        None => {
            let pts: Vec<&[f64]> = flow.fine.iter().map(|p| p.as_slice()).collect();
            (sampled_bounds(seq, &pts), Grade::Empirical)
        }
    };
    Ok(PrimitiveEstimate {
        prim: PrimitiveConstants {
            m1: bounds.0,
            m2: bounds.1,
            m3: bounds.2,
            m4: bounds.3,
            r: r_min.is_finite().then_some(r_min),
            eps: hyper.eps,
            rho: hyper.rho,
            beta: hyper.beta,
            p: seq.dimension(),
            d1,
            d2,
            d3,
            horizon: hyper.h * flow.intervals() as f64,
        },
        grade,
    })
}

/// Outcome of checking both global inequalities at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub value_holds: bool,
    pub increment_holds: bool,
    /// Largest `|e_n| / (d1 exp(d2 n h) h^2)`.
    pub worst_value_ratio: f64,
    /// Largest `|e_(n+1) - e_n| / (d3 exp(d2 n h) h^3)`.
    pub worst_increment_ratio: f64,
    pub first_violation: Option<usize>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.value_holds && self.increment_holds
    }
}

fn ratio(observed: f64, bound: f64) -> f64 {
    if observed == 0.0 {
        0.0
    } else if bound == 0.0 {
        f64::INFINITY
    } else {
        observed / bound
    }
}

pub fn check_global_bound(errors: &ErrorSeries, consts: &GlobalConstants, h: f64) -> BoundCheck {
    let mut check = BoundCheck {
        value_holds: true,
        increment_holds: true,
        worst_value_ratio: 0.0,
        worst_increment_ratio: 0.0,
        first_violation: None,
    };
    for (n, e) in errors.errors.iter().enumerate() {
        let growth = (consts.d2 * n as f64 * h).exp();
        let rv = ratio(*e, consts.d1 * growth * h * h);
        check.worst_value_ratio = check.worst_value_ratio.max(rv);
        let mut violated = rv > 1.0;
        if rv > 1.0 {
            check.value_holds = false;
        }
        if let (Some(a), Some(b)) = (errors.diffs.get(n), errors.diffs.get(n + 1)) {
            let inc = a
                .iter()
                .zip(b)
                .map(|(x, y)| (y - x).powi(2))
                .sum::<f64>()
                .sqrt();
            let ri = ratio(inc, consts.d3 * growth * h.powi(3));
            check.worst_increment_ratio = check.worst_increment_ratio.max(ri);
            if ri > 1.0 {
                check.increment_holds = false;
                violated = true;
            }
        }
        if violated && check.first_violation.is_none() {
            check.first_violation = Some(n);
        }
    }
    check
}
