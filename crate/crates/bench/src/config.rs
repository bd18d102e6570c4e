//! JSON experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use amis_core::adaptation::AdaptMode;
use amis_core::engine::{Adaptation, AmisConfig, PathIntegralSettings};
use amis_core::problems::{gaussian_target, one_step_gaussian};
use amis_core::reweight::{CandidateSet, ReweightScheme};
use amis_core::sde::{
    BasisFunction, Diffusion, DiffusionProblem, Drift, FeedbackControl, TargetFunctional,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Environment variable holding the default seed base.
pub const SEED_ENV: &str = "AMIS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Identifier written to the `experiment` column.
    #[serde(default = "default_experiment")]
    pub experiment: String,
    pub problem: ProblemConfig,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub num_runs: Option<usize>,
    /// First seed when only `num_runs` is given.
    #[serde(default)]
    pub seed_base: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Write measured phase times; zeros otherwise.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_experiment() -> String {
    "run".into()
}

fn default_true() -> bool {
    true
}

fn default_d() -> usize {
    3
}

fn default_num_steps() -> usize {
    100
}

fn default_horizon() -> f64 {
    1.0
}

fn default_min_retained() -> usize {
    ReweightScheme::DEFAULT_MIN_RETAINED
}

fn default_slope() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Brownian motion in `R^d` on `[0, 1]`, `h = exp(-|X_1 - z|^2 / 2)`.
    Example71 {
        #[serde(default = "default_d")]
        d: usize,
        /// Defaults to `(2, .., 2)`.
        #[serde(default)]
        z: Option<Vec<f64>>,
        #[serde(default = "default_num_steps")]
        num_steps: usize,
    },
    /// One Euler step of a 1-D Brownian motion, `h = exp(-x^2 / 2)`.
    Counterexample32,
    /// `dX = B X dt + sigma (u dt + dW)` with cost
    /// `R = running_weight |X|^2 / 2`, `Qc = terminal_weight |X_T - target|^2 / 2`.
    LinearGaussian {
        x0: Vec<f64>,
        #[serde(default)]
        noise_dim: Option<usize>,
        #[serde(default = "default_horizon")]
        horizon: f64,
        #[serde(default = "default_num_steps")]
        num_steps: usize,
        /// Rows of `B` (d x d); zero drift when absent.
        #[serde(default)]
        drift_matrix: Option<Vec<Vec<f64>>>,
        /// Rows of `sigma` (d x m); identity when absent.
        #[serde(default)]
        sigma: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        running_weight: f64,
        terminal_weight: f64,
        target: Vec<f64>,
    },
}

impl ProblemConfig {
    pub fn example71() -> Self {
        ProblemConfig::Example71 {
            d: 3,
            z: None,
            num_steps: default_num_steps(),
        }
    }

    pub fn build(&self) -> Result<DiffusionProblem, BenchError> {
        let problem = match self {
            ProblemConfig::Example71 { d, z, num_steps } => {
                let z = z.clone().unwrap_or_else(|| vec![2.0; *d]);
                if z.len() != *d {
                    return Err(BenchError::Config(format!(
                        "z has length {} but d = {d}",
                        z.len()
                    )));
                }
                gaussian_target(z, *num_steps)?
            }
            ProblemConfig::Counterexample32 => one_step_gaussian()?,
            ProblemConfig::LinearGaussian {
                x0,
                noise_dim,
                horizon,
                num_steps,
                drift_matrix,
                sigma,
                running_weight,
                terminal_weight,
                target,
            } => {
                let d = x0.len();
                let m = noise_dim.unwrap_or(d);
                if target.len() != d {
                    return Err(BenchError::Config(format!(
                        "target has length {} but x0 has length {d}",
                        target.len()
                    )));
                }
                let (rw, tw, z) = (*running_weight, *terminal_weight, target.clone());
                let cost = TargetFunctional::cost(
                    move |_t, x: &[f64]| 0.5 * rw * x.iter().map(|v| v * v).sum::<f64>(),
                    move |x: &[f64]| {
                        0.5 * tw * x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    },
                );
                let mut p = DiffusionProblem::new(d, m, *horizon, *num_steps, x0.clone(), cost)?;
                if let Some(rows) = drift_matrix {
                    let b = matrix_from_rows(rows, d, d, "drift_matrix")?;
                    p = p.with_drift(Drift::Field(Arc::new(move |_t, x, out| {
                        for (r, o) in out.iter_mut().enumerate() {
                            *o = (0..x.len()).map(|c| b[(r, c)] * x[c]).sum();
                        }
                    })));
                }
                if let Some(rows) = sigma {
                    let s = matrix_from_rows(rows, d, m, "sigma")?;
                    p = p.with_diffusion(Diffusion::Constant(s))?;
                } else if m != d {
                    return Err(BenchError::Config(
                        "sigma is required when noise_dim differs from the state dimension"
                            .into(),
                    ));
                }
                p
            }
        };
        Ok(problem)
    }
}

fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    name: &str,
) -> Result<DMatrix<f64>, BenchError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(BenchError::Config(format!("{name} must be {nrows} x {ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateConfig {
    All,
    PowersOfTwo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeConfig {
    Flat,
    Balance,
    DiscardFixed,
    DiscardOptimized {
        #[serde(default = "default_candidates")]
        candidates: CandidateConfig,
        #[serde(default = "default_min_retained")]
        min_retained: usize,
    },
    NonMixing,
}

fn default_candidates() -> CandidateConfig {
    CandidateConfig::All
}

impl SchemeConfig {
    pub fn to_scheme(&self) -> ReweightScheme {
        match self {
            SchemeConfig::Flat => ReweightScheme::Flat,
            SchemeConfig::Balance => ReweightScheme::Balance,
            SchemeConfig::DiscardFixed => ReweightScheme::DiscardFixed,
            SchemeConfig::DiscardOptimized {
                candidates,
                min_retained,
            } => ReweightScheme::DiscardOptimized {
                candidate_set: match candidates {
                    CandidateConfig::All => CandidateSet::All,
                    CandidateConfig::PowersOfTwo => CandidateSet::PowersOfTwo,
                },
                min_retained: *min_retained,
            },
            SchemeConfig::NonMixing => ReweightScheme::NonMixingLastBatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    #[default]
    Constant,
    Affine,
    Piecewise {
        inner: Box<BasisConfig>,
        intervals: usize,
    },
}

impl BasisConfig {
    pub fn build(&self, horizon: f64) -> Result<BasisFunction, BenchError> {
        Ok(match self {
            BasisConfig::Constant => BasisFunction::Constant,
            BasisConfig::Affine => BasisFunction::Affine,
            BasisConfig::Piecewise { inner, intervals } => {
                BasisFunction::piecewise(inner.build(horizon)?, *intervals, horizon)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    FullRecompute,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdaptationConfig {
    /// Path-integral adaptation in `basis`, starting from `u = 0`.
    PathIntegral {
        #[serde(default)]
        mode: ModeConfig,
        #[serde(default)]
        clamp: Option<f64>,
    },
    /// `u = 0` throughout.
    None,
    /// Constant control `value` at every iteration.
    Fixed { value: Vec<f64> },
    /// Constant control `slope * k` at iteration `k` in every component.
    ForcedLinear {
        #[serde(default = "default_slope")]
        slope: f64,
    },
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig::PathIntegral {
            mode: ModeConfig::FullRecompute,
            clamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub batch_size: usize,
    pub iterations: usize,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.schedule.batch_size == 0 || self.schedule.iterations == 0 {
            return Err(BenchError::Config(
                "schedule needs batch_size >= 1 and iterations >= 1".into(),
            ));
        }
        if let (Some(seeds), Some(n)) = (&self.seeds, self.num_runs) {
            if seeds.len() != n {
                return Err(BenchError::Config(format!(
                    "num_runs = {n} but {} seeds were given",
                    seeds.len()
                )));
            }
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(BenchError::Config("seeds must not be empty".into()));
            }
        }
        if self.num_runs == Some(0) {
            return Err(BenchError::Config("num_runs must be at least 1".into()));
        }
        let problem = self.problem.build().map_err(BenchError::into_config)?;
        let config = self
            .amis_config(&problem, 0)
            .map_err(BenchError::into_config)?;
        config
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Seeds of all runs: explicit list, else `num_runs` consecutive seeds
    /// from `seed_base` (or `AMIS_SEED`, or 0).
    pub fn resolve_seeds(&self) -> Result<Vec<u64>, BenchError> {
        if let Some(seeds) = &self.seeds {
            return Ok(seeds.clone());
        }
        let base = match self.seed_base {
            Some(b) => b,
            None => env_seed_base()?,
        };
        let n = self.num_runs.unwrap_or(1) as u64;
        Ok((base..base + n).collect())
    }

    pub fn amis_config(&self, problem: &DiffusionProblem, seed: u64) -> Result<AmisConfig, BenchError> {
        let m = problem.noise_dim();
        let d = problem.state_dim();
        let adaptation = match &self.adaptation {
            AdaptationConfig::PathIntegral { mode, clamp } => Adaptation::PathIntegral(
                PathIntegralSettings::new(self.basis.build(problem.horizon())?)
                    .with_mode(match mode {
                        ModeConfig::FullRecompute => AdaptMode::FullRecompute,
                        ModeConfig::Incremental => AdaptMode::Incremental,
                    })
                    .with_clamp(*clamp),
            ),
            AdaptationConfig::None => Adaptation::Fixed(FeedbackControl::zero(
                BasisFunction::Constant,
                m,
                d,
            )),
            AdaptationConfig::Fixed { value } => {
                if value.len() != m {
                    return Err(BenchError::Config(format!(
                        "fixed control has {} components, noise dimension is {m}",
                        value.len()
                    )));
                }
                Adaptation::Fixed(FeedbackControl::constant(value, d))
            }
            AdaptationConfig::ForcedLinear { slope } => {
                let slope = *slope;
                Adaptation::Forced(Arc::new(move |k| {
                    FeedbackControl::constant(&vec![slope * k as f64; m], d)
                }))
            }
        };
        Ok(AmisConfig::constant_batches(
            self.scheme.to_scheme(),
            adaptation,
            self.schedule.batch_size,
            self.schedule.iterations,
            seed,
        ))
    }
}

/// Seed base from `AMIS_SEED`, 0 when unset.
pub fn env_seed_base() -> Result<u64, BenchError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| BenchError::Config(format!("{SEED_ENV} must be an integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}
