//! Experiment configuration: a TOML file with `[loss]`, `[optimizer]`,
//! `[experiment]` and `[output]` sections. Every field has a default except
//! the loss name, so the resolved config (echoed into each CSV) is complete.

use std::path::{Path, PathBuf};

use bea_core::discrete_optim::{Hyperparameters, Variant};
use bea_core::losses::{make_bilinear, make_minibatch_regression, make_quadratic, LossSequence};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Run,
    OrderStudy,
    BiasPlot,
    PenaltyCurve,
    HeavyBallLimit,
    BoundCheck,
    Validate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossConfig {
    Bilinear {
        #[serde(default = "default_x")]
        x: f64,
        #[serde(default = "default_y")]
        y: f64,
    },
    Quadratic {
        diag: Vec<f64>,
        #[serde(default = "default_box")]
        bound_box: f64,
    },
    /// Least squares on `samples` random rows of dimension `dim`, drawn from
    /// the config seed.
    Regression {
        samples: usize,
        batch_size: usize,
        dim: usize,
    },
    /// Every built-in loss with its defaults; only meaningful for `validate`.
    All,
}

fn default_x() -> f64 {
    2.0
}
fn default_y() -> f64 {
    1.5
}
fn default_box() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Runs one trajectory per momentum value instead of `beta` alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_sweep: Option<Vec<f64>>,
}

fn default_variant() -> String {
    Variant::AdamEpsIn.as_str().to_string()
}
fn default_h() -> f64 {
    0.01
}
fn default_eps() -> f64 {
    1e-8
}
fn default_rho() -> f64 {
    0.999
}
fn default_beta() -> f64 {
    0.9
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            variant: default_variant(),
            h: default_h(),
            eps: default_eps(),
            rho: default_rho(),
            beta: default_beta(),
            beta_sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub start: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Flow to integrate alongside a run: "leading" or "first-order".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Iterates averaged for the gradient one-norm summary; 0 means half the run.
    #[serde(default)]
    pub tail: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub h_sweep: Vec<f64>,
    #[serde(default)]
    pub eps_sweep: Vec<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub rho_sweep: Vec<f64>,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Region of interest for bound checks; defaults to the quadratic's box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Local constant for variants without an explicit lemma chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_local: Option<f64>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_probe_box")]
    pub probe_box: f64,
}

fn default_steps() -> usize {
    1000
}
fn default_substeps() -> usize {
    bea_core::modified_flow::DEFAULT_SUBSTEPS
}
fn default_horizon() -> f64 {
    1.0
}
fn default_burn_in() -> usize {
    bea_core::analysis::DEFAULT_BURN_IN
}
fn default_window() -> usize {
    100
}
fn default_x_max() -> f64 {
    3.0
}
fn default_points() -> usize {
    301
}
fn default_probes() -> usize {
    20
}
fn default_probe_box() -> f64 {
    5.0
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("every experiment field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Config> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config, checks it against the subcommand and applies an
    /// output-directory override.
    pub fn load(path: &Path, kind: Kind, out: Option<PathBuf>) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text)?;
        match cfg.kind {
            Some(k) if k != kind => {
                return Err(CliError::Config(format!(
                    "config is for {k:?} but the subcommand is {kind:?}"
                )))
            }
            _ => cfg.kind = Some(kind),
        }
        if let Some(dir) = out {
            cfg.output.dir = dir;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        let e = &self.experiment;
        let kind = self.kind.expect("kind is resolved before checking");
        if matches!(self.loss, LossConfig::All) && kind != Kind::Validate {
            return Err(CliError::Config(
                "loss name \"all\" is only valid for validate".into(),
            ));
        }
        if kind == Kind::OrderStudy {
            if e.h_sweep.len() < 3 {
                return Err(CliError::Config(format!(
                    "order-study needs at least 3 step sizes in h_sweep, got {}",
                    e.h_sweep.len()
                )));
            }
            if e.h_sweep.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(CliError::Config(
                    "h_sweep must be strictly decreasing".into(),
                ));
            }
        }
        if kind == Kind::BoundCheck && e.h_sweep.is_empty() {
            return Err(CliError::Config(
                "bound-check needs at least one step size in h_sweep".into(),
            ));
        }
        if kind == Kind::HeavyBallLimit && e.eps_sweep.is_empty() {
            return Err(CliError::Config("heavy-ball-limit needs eps_sweep".into()));
        }
        if let Some(f) = &e.flow {
            self.flow_order(f)?;
        }
        if kind != Kind::PenaltyCurve && kind != Kind::Validate {
            self.hyper()?;
            if e.start.len() != self.dimension() {
                return Err(CliError::Config(format!(
                    "start has {} coordinates but the loss has dimension {}",
                    e.start.len(),
                    self.dimension()
                )));
            }
        }
        Ok(())
    }

    pub fn flow_order(&self, name: &str) -> CliResult<bea_core::modified_flow::Order> {
        use bea_core::modified_flow::Order;
        match name {
            "leading" => Ok(Order::Leading),
            "first-order" => Ok(Order::FirstOrder),
            other => Err(CliError::Config(format!(
                "unknown flow {other:?}, expected \"leading\" or \"first-order\""
            ))),
        }
    }

    pub fn variant(&self) -> CliResult<Variant> {
        self.optimizer
            .variant
            .parse()
            .map_err(|e: bea_core::Error| CliError::Config(e.to_string()))
    }

    pub fn hyper(&self) -> CliResult<Hyperparameters> {
        let o = &self.optimizer;
        Hyperparameters::new(self.variant()?, o.h, o.eps, o.rho, o.beta)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn betas(&self) -> Vec<f64> {
        self.optimizer
            .beta_sweep
            .clone()
            .unwrap_or_else(|| vec![self.optimizer.beta])
    }

    fn dimension(&self) -> usize {
        match &self.loss {
            LossConfig::Bilinear { .. } => 2,
            LossConfig::Quadratic { diag, .. } => diag.len(),
            LossConfig::Regression { dim, .. } => *dim,
            LossConfig::All => 0,
        }
    }

    /// The losses named by the config; several only for `name = "all"`.
    pub fn losses(&self) -> CliResult<Vec<Box<dyn LossSequence>>> {
        let built = |l: &LossConfig| -> CliResult<Box<dyn LossSequence>> {
            Ok(match l {
                LossConfig::Bilinear { x, y } => Box::new(make_bilinear(*x, *y)),
                LossConfig::Quadratic { diag, bound_box } => {
                    Box::new(make_quadratic(diag.clone(), *bound_box)?)
                }
                LossConfig::Regression {
                    samples,
                    batch_size,
                    dim,
                } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    let design = (0..*samples)
                        .map(|_| {
                            let x = (0..*dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                            (x, rng.gen_range(-1.0..1.0))
                        })
                        .collect();
                    Box::new(make_minibatch_regression(design, *batch_size)?)
                }
                LossConfig::All => unreachable!("expanded below"),
            })
        };
        match &self.loss {
            LossConfig::All => [
                LossConfig::Bilinear { x: 2.0, y: 1.5 },
                LossConfig::Quadratic {
                    diag: vec![1.0, 2.0],
                    bound_box: 10.0,
                },
                LossConfig::Regression {
                    samples: 16,
                    batch_size: 4,
                    dim: 3,
                },
            ]
            .iter()
            .map(built)
            .collect(),
            l => Ok(vec![built(l)?]),
        }
    }

    pub fn loss(&self) -> CliResult<Box<dyn LossSequence>> {
        Ok(self.losses()?.remove(0))
    }

    /// The resolved config as `# `-prefixed lines.
    pub fn echo(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        body.lines().map(|l| format!("# {l}\n")).collect()
    }
}
