//! Exact discrete update rules and trajectory recording.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::analysis::perturbed_one_norm;
use crate::error::{Error, Result};
use crate::linalg::{two_norm, Point};
use crate::losses::LossSequence;

/// Beyond this many steps the bias-correction factors are taken to be 1.
const BIAS_CLAMP_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    RmsPropEpsOut,
    RmsPropEpsIn,
    AdamEpsOut,
    AdamEpsIn,
    Gd,
    HeavyBall,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::RmsPropEpsOut,
        Variant::RmsPropEpsIn,
        Variant::AdamEpsOut,
        Variant::AdamEpsIn,
        Variant::Gd,
        Variant::HeavyBall,
    ];

    pub fn is_adaptive(self) -> bool {
        !matches!(self, Variant::Gd | Variant::HeavyBall)
    }

    pub fn is_adam(self) -> bool {
        matches!(self, Variant::AdamEpsOut | Variant::AdamEpsIn)
    }

    /// True when `eps` sits under the square root.
    pub fn eps_inside(self) -> bool {
        matches!(self, Variant::RmsPropEpsIn | Variant::AdamEpsIn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::RmsPropEpsOut => "rmsprop-eps-out",
            Variant::RmsPropEpsIn => "rmsprop-eps-in",
            Variant::AdamEpsOut => "adam-eps-out",
            Variant::AdamEpsIn => "adam-eps-in",
            Variant::Gd => "gd",
            Variant::HeavyBall => "heavy-ball",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant '{s}'")))
    }
}

/// Step size `h`, stability constant `eps`, second-moment decay `rho` and
/// first-moment (or heavy-ball) decay `beta`.
///
/// RMSProp variants ignore `beta`; GD and heavy-ball ignore `rho` and `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub h: f64,
    pub eps: f64,
    pub rho: f64,
    pub beta: f64,
    pub variant: Variant,
}

impl Hyperparameters {
    pub fn new(variant: Variant, h: f64, eps: f64, rho: f64, beta: f64) -> Result<Self> {
        let hyper = Hyperparameters {
            h,
            eps,
            rho,
            beta,
            variant,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        if self.variant.is_adaptive() {
            if !(self.eps > 0.0) || !self.eps.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "eps must be positive, got {}",
                    self.eps
                )));
            }
            if !(self.rho > 0.0 && self.rho < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "rho must lie in (0, 1), got {}",
                    self.rho
                )));
            }
        }
        if matches!(
            self.variant,
            Variant::AdamEpsIn | Variant::AdamEpsOut | Variant::HeavyBall
        ) && !(self.beta >= 0.0 && self.beta < 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// First-moment decay actually used by the variant (0 for RMSProp).
    pub fn effective_beta(&self) -> f64 {
        if self.variant.is_adam() || self.variant == Variant::HeavyBall {
            self.beta
        } else {
            0.0
        }
    }
}

/// `1 - gamma^(n+1)`, computed directly and clamped to 1 for very large `n`.
pub fn bias_factor(gamma: f64, n: usize) -> f64 {
    if n + 1 > BIAS_CLAMP_STEPS {
        1.0
    } else {
        1.0 - gamma.powi((n + 1) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub n: usize,
    pub theta: Point,
    /// Second-moment accumulator, entries never negative.
    pub nu: Vec<f64>,
    /// First-moment accumulator.
    pub mom: Vec<f64>,
    /// Previous iterate, used only by heavy-ball. Equals `theta` at `n = 0`.
    pub prev_theta: Point,
}

impl OptimizerState {
    pub fn new(theta0: Point) -> Self {
        let p = theta0.dim();
        OptimizerState {
            n: 0,
            prev_theta: theta0.clone(),
            theta: theta0,
            nu: vec![0.0; p],
            mom: vec![0.0; p],
        }
    }
}

/// One exact update of `state` on batch `state.n mod m`.
pub fn step(
    state: &OptimizerState,
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
) -> Result<OptimizerState> {
    step_impl(state, seq, hyper, true)
}

fn step_impl(
    state: &OptimizerState,
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    correct_second_moment: bool,
) -> Result<OptimizerState> {
    let p = seq.dimension();
    if state.theta.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: state.theta.dim(),
        });
    }
    let n = state.n;
    let g = seq.grad(n, &state.theta);
    if let Some(j) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient component {j} at step {n}"
        )));
    }
    let theta = state.theta.as_slice();
    let (h, eps, rho, beta) = (hyper.h, hyper.eps, hyper.rho, hyper.beta);

    let mut nu = state.nu.clone();
    let mut mom = state.mom.clone();
    let mut next = theta.to_vec();
    match hyper.variant {
        Variant::Gd => {
            for j in 0..p {
                next[j] -= h * g[j];
            }
        }
        Variant::HeavyBall => {
            for j in 0..p {
                next[j] += -h * g[j] + beta * (theta[j] - state.prev_theta[j]);
            }
        }
        Variant::RmsPropEpsOut | Variant::RmsPropEpsIn => {
            for j in 0..p {
                nu[j] = rho * nu[j] + (1.0 - rho) * g[j] * g[j];
                let denom = if hyper.variant.eps_inside() {
                    (nu[j] + eps).sqrt()
                } else {
                    nu[j].sqrt() + eps
                };
                next[j] -= h * g[j] / denom;
            }
        }
        Variant::AdamEpsOut | Variant::AdamEpsIn => {
            let corr_mom = bias_factor(beta, n);
            let corr_nu = if correct_second_moment {
                bias_factor(rho, n)
            } else {
                1.0
            };
            for j in 0..p {
                nu[j] = rho * nu[j] + (1.0 - rho) * g[j] * g[j];
                mom[j] = beta * mom[j] + (1.0 - beta) * g[j];
                let nu_hat = nu[j] / corr_nu;
                let denom = if hyper.variant.eps_inside() {
                    (nu_hat + eps).sqrt()
                } else {
                    nu_hat.sqrt() + eps
                };
                next[j] -= h * (mom[j] / corr_mom) / denom;
            }
        }
    }

    let theta_next = Point::new(next)?;
    Ok(OptimizerState {
        n: n + 1,
        prev_theta: state.theta.clone(),
        theta: theta_next,
        nu,
        mom,
    })
}

/// Full-objective diagnostics at one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub loss: f64,
    pub grad_two_norm: f64,
    pub grad_perturbed_one_norm: f64,
}

impl StepRecord {
    fn at(seq: &dyn LossSequence, theta: &[f64], eps: f64) -> Self {
        let g = seq.full_grad(theta);
        StepRecord {
            loss: seq.full_eval(theta),
            grad_two_norm: two_norm(&g),
            grad_perturbed_one_norm: perturbed_one_norm(&g, eps.max(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Point>,
    pub records: Vec<StepRecord>,
    pub hyper: Hyperparameters,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Columns: step, t, theta_1..theta_p, loss, grad_two_norm,
    /// grad_perturbed_one_norm.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = self.points.first().map_or(0, |x| x.dim());
        write!(w, "step,t")?;
        for i in 1..=p {
            write!(w, ",theta_{i}")?;
        }
        writeln!(w, ",loss,grad_two_norm,grad_perturbed_one_norm")?;
        for (n, (pt, rec)) in self.points.iter().zip(&self.records).enumerate() {
            write!(w, "{n},{}", n as f64 * self.hyper.h)?;
            for x in pt.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(
                w,
                ",{},{},{}",
                rec.loss, rec.grad_two_norm, rec.grad_perturbed_one_norm
            )?;
        }
        Ok(())
    }
}

/// Runs `n_steps` updates from `theta0`. A non-finite iterate aborts with
/// [`Error::BlowUp`] carrying every finite iterate.
pub fn run(
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta0: Point,
    n_steps: usize,
) -> Result<Trajectory> {
    run_impl(seq, hyper, theta0, n_steps, true)
}

fn run_impl(
    seq: &dyn LossSequence,
    hyper: &Hyperparameters,
    theta0: Point,
    n_steps: usize,
    correct_second_moment: bool,
) -> Result<Trajectory> {
    hyper.validate()?;
    if theta0.dim() != seq.dimension() {
        return Err(Error::DimensionMismatch {
            expected: seq.dimension(),
            got: theta0.dim(),
        });
    }
    let mut points = Vec::with_capacity(n_steps + 1);
    let mut records = Vec::with_capacity(n_steps + 1);
    records.push(StepRecord::at(seq, &theta0, hyper.eps));
    points.push(theta0.clone());
    let mut state = OptimizerState::new(theta0);
    for _ in 0..n_steps {
        state = match step_impl(&state, seq, hyper, correct_second_moment) {
            Ok(s) => s,
            Err(Error::NonFinite(_)) => {
                return Err(Error::BlowUp {
                    last_finite: points.len() - 1,
                    partial: points,
                })
            }
            Err(e) => return Err(e),
        };
        records.push(StepRecord::at(seq, &state.theta, hyper.eps));
        points.push(state.theta.clone());
    }
    Ok(Trajectory {
        points,
        records,
        hyper: *hyper,
    })
}
