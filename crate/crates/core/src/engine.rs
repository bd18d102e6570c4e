//! The AMIS loop: adaptation, generation, re-weighting and output at every
//! iteration, over an append-only sample store.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::adaptation::{path_integrals, AdaptMode, PathIntegralAdapter, PathIntegrals, Regularization};
use crate::error::{AmisError, Result};
use crate::reweight::{EssReport, ReweightScheme, Reweighter, WeightAssignment};
use crate::rng::StreamKey;
use crate::sde::{generated_weights, simulate_keyed, BasisFunction, DiffusionProblem, FeedbackControl, TargetFunctional};
use crate::store::{SampleStore, WeightedSample};

/// Proposal control of iteration `k` as a function of `k` alone.
pub type ControlSchedule = Arc<dyn Fn(usize) -> FeedbackControl + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct PathIntegralSettings {
    pub basis: BasisFunction,
    pub mode: AdaptMode,
    pub regularization: Regularization,
    /// Componentwise bound on the adapted control.
    pub clamp: Option<f64>,
}

impl PathIntegralSettings {
    pub fn new(basis: BasisFunction) -> Self {
        Self {
            basis,
            mode: AdaptMode::FullRecompute,
            regularization: Regularization::default(),
            clamp: None,
        }
    }

    pub fn with_mode(mut self, mode: AdaptMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_clamp(mut self, bound: Option<f64>) -> Self {
        self.clamp = bound;
        self
    }
}

/// How each iteration's proposal is built.
#[derive(Clone)]
pub enum Adaptation {
    /// Same control at every iteration.
    Fixed(FeedbackControl),
    /// Control prescribed per iteration, ignoring the samples.
    Forced(ControlSchedule),
    /// Path-integral adaptation from the weighted store, starting at `u = 0`.
    PathIntegral(PathIntegralSettings),
}

impl fmt::Debug for Adaptation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Adaptation::Fixed(c) => f.debug_tuple("Fixed").field(c).finish(),
            Adaptation::Forced(_) => f.write_str("Forced(..)"),
            Adaptation::PathIntegral(s) => f.debug_tuple("PathIntegral").field(s).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AmisConfig {
    pub scheme: ReweightScheme,
    pub adaptation: Adaptation,
    /// Batch sizes `N_1, .., N_K`.
    pub schedule: Vec<usize>,
    pub seed: u64,
    /// Random stream tag, so independent runs can share a seed.
    pub stream: u64,
    /// Keep every sample path in the store even when no component needs it.
    pub keep_paths: bool,
    /// Batches of at least this size are generated on the rayon pool.
    pub parallel_threshold: usize,
}

impl AmisConfig {
    pub fn new(scheme: ReweightScheme, adaptation: Adaptation, schedule: Vec<usize>, seed: u64) -> Self {
        Self {
            scheme,
            adaptation,
            schedule,
            seed,
            stream: 0,
            keep_paths: false,
            parallel_threshold: 64,
        }
    }

    /// `K` batches of `M` samples.
    pub fn constant_batches(
        scheme: ReweightScheme,
        adaptation: Adaptation,
        batch_size: usize,
        iterations: usize,
        seed: u64,
    ) -> Self {
        Self::new(scheme, adaptation, vec![batch_size; iterations], seed)
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_keep_paths(mut self, keep: bool) -> Self {
        self.keep_paths = keep;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.schedule.is_empty() {
            return Err(AmisError::Configuration("schedule needs at least one iteration".into()));
        }
        if let Some(k) = self.schedule.iter().position(|n| *n == 0) {
            return Err(AmisError::Configuration(format!(
                "batch size of iteration {} must be at least 1",
                k + 1
            )));
        }
        if let Adaptation::PathIntegral(s) = &self.adaptation {
            if s.mode == AdaptMode::Incremental && !self.scheme.is_batch_constant() {
                return Err(AmisError::Configuration(format!(
                    "incremental adaptation cannot be combined with {} re-weighting",
                    self.scheme.name()
                )));
            }
            if let Some(c) = s.clamp {
                if !(c > 0.0) {
                    return Err(AmisError::Configuration(format!(
                        "control clamp must be positive, got {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub adapt: Duration,
    pub generate: Duration,
    pub reweight: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.adapt + self.generate + self.reweight
    }
}

/// Snapshot after iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub k: usize,
    pub total_samples: usize,
    pub psi_hat: f64,
    /// `log psi_hat`, accurate where `psi_hat` underflows.
    pub log_psi_hat: f64,
    /// Free-energy estimate; `None` without a cost form or when undefined.
    pub j_hat: Option<f64>,
    /// `None` when every weighted term is zero.
    pub ess: Option<EssReport>,
    /// Parameters `A` of the proposal used at this iteration.
    pub params: DMatrix<f64>,
    pub timings: PhaseTimings,
    pub wall_time: Duration,
}

/// `J = -log[(1/N) sum exp(-S) w]` over the store.
pub fn free_energy(store: &SampleStore, weights: &WeightAssignment) -> Result<f64> {
    let log_mean = weights.log_mean_exp_neg_cost(store)?;
    if log_mean == f64::NEG_INFINITY {
        return Err(AmisError::UndefinedFreeEnergy);
    }
    Ok(-log_mean)
}

/// Step-by-step AMIS driver.
pub struct AmisSampler {
    problem: DiffusionProblem,
    config: AmisConfig,
    store: SampleStore,
    reweighter: Reweighter,
    adapter: Option<PathIntegralAdapter>,
    weights: Option<WeightAssignment>,
    keep_paths: bool,
}

impl AmisSampler {
    pub fn new(problem: DiffusionProblem, config: AmisConfig) -> Result<Self> {
        problem.validate()?;
        config.validate()?;
        let adapter = match &config.adaptation {
            Adaptation::PathIntegral(s) => Some(
                PathIntegralAdapter::new(
                    s.basis.clone(),
                    problem.noise_dim(),
                    problem.state_dim(),
                    s.mode,
                )
                .with_regularization(s.regularization)
                .with_clamp(s.clamp),
            ),
            Adaptation::Fixed(c) => {
                if c.noise_dim() != problem.noise_dim() || c.state_dim() != problem.state_dim() {
                    return Err(AmisError::Configuration(
                        "fixed control does not match the problem dimensions".into(),
                    ));
                }
                None
            }
            Adaptation::Forced(_) => None,
        };
        let keep_paths = config.keep_paths || matches!(config.scheme, ReweightScheme::Balance);
        Ok(Self {
            reweighter: Reweighter::new(config.scheme)?,
            problem,
            config,
            store: SampleStore::new(),
            adapter,
            weights: None,
            keep_paths,
        })
    }

    pub fn problem(&self) -> &DiffusionProblem {
        &self.problem
    }

    pub fn store(&self) -> &SampleStore {
        &self.store
    }

    pub fn into_store(self) -> SampleStore {
        self.store
    }

    /// Weights assigned at the latest iteration.
    pub fn weights(&self) -> Option<&WeightAssignment> {
        self.weights.as_ref()
    }

    pub fn reweighter(&self) -> &Reweighter {
        &self.reweighter
    }

    pub fn iterations_done(&self) -> usize {
        self.store.num_batches()
    }

    pub fn is_finished(&self) -> bool {
        self.iterations_done() >= self.config.schedule.len()
    }

    fn next_control(&mut self, k: usize) -> Result<FeedbackControl> {
        let control = match &self.config.adaptation {
            Adaptation::Fixed(c) => c.clone(),
            Adaptation::Forced(f) => f(k),
            Adaptation::PathIntegral(_) => {
                let adapter = self.adapter.as_mut().expect("adapter present");
                adapter.adapt(&self.store)?
            }
        };
        if control.noise_dim() != self.problem.noise_dim()
            || control.state_dim() != self.problem.state_dim()
        {
            return Err(AmisError::Configuration(format!(
                "proposal of iteration {k} does not match the problem dimensions"
            )));
        }
        Ok(control)
    }

    fn generate(
        &self,
        k: usize,
        control: &FeedbackControl,
        n: usize,
    ) -> Result<Vec<(WeightedSample, Option<PathIntegrals>)>> {
        let basis = self.adapter.as_ref().map(|a| a.basis());
        let one = |i: usize| -> Result<(WeightedSample, Option<PathIntegrals>)> {
            let key = StreamKey::new(self.config.seed, k, i).with_stream(self.config.stream);
            let path = simulate_keyed(&self.problem, control, key)?;
            let gw = generated_weights(&path, &self.problem)?;
            let integrals = basis.map(|b| path_integrals(&path, b)).transpose()?;
            let path = self.keep_paths.then(|| Arc::new(path));
            Ok((
                WeightedSample::new(k, i, gw.log_h, gw.log_dqdp, gw.cost, path),
                integrals,
            ))
        };
        if n >= self.config.parallel_threshold {
            (0..n).into_par_iter().map(one).collect()
        } else {
            (0..n).map(one).collect()
        }
    }

    /// Runs the next iteration.
    pub fn step(&mut self) -> Result<IterationOutput> {
        let k = self.iterations_done() + 1;
        let n = *self.config.schedule.get(k - 1).ok_or_else(|| {
            AmisError::Configuration(format!("schedule has only {} iterations", k - 1))
        })?;
        self.step_inner(k, n).map_err(|e| e.at_iteration(k))
    }

    fn step_inner(&mut self, k: usize, n: usize) -> Result<IterationOutput> {
        let start = Instant::now();
        let control = self.next_control(k)?;
        let t_adapt = start.elapsed();

        let t0 = Instant::now();
        let generated = self.generate(k, &control, n)?;
        let (samples, integrals): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
        if let Some(adapter) = self.adapter.as_mut() {
            let integrals = integrals.into_iter().map(|p| p.expect("basis set")).collect();
            adapter.absorb_integrals(k, &samples, integrals)?;
        }
        let params = control.params().clone();
        self.store.push_batch(control, samples)?;
        let t_generate = t0.elapsed();

        let t0 = Instant::now();
        let weights = self.reweighter.reweight(&self.store)?;
        self.store.set_log_weights(&weights.log_weights)?;
        let t_reweight = t0.elapsed();

        let log_psi_hat = weights.log_estimate(&self.store)?;
        let ess = match weights.ess(&self.store) {
            Ok(r) => Some(r),
            Err(AmisError::UndefinedEss) => None,
            Err(e) => return Err(e),
        };
        let j_hat = if self.problem.has_cost_form() {
            match free_energy(&self.store, &weights) {
                Ok(j) => Some(j),
                Err(AmisError::UndefinedFreeEnergy) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        self.weights = Some(weights);
        Ok(IterationOutput {
            k,
            total_samples: self.store.total(),
            psi_hat: log_psi_hat.exp(),
            log_psi_hat,
            j_hat,
            ess,
            params,
            timings: PhaseTimings {
                adapt: t_adapt,
                generate: t_generate,
                reweight: t_reweight,
            },
            wall_time: start.elapsed(),
        })
    }

    /// Control that the next adaptation would propose, computed on the fully
    /// re-weighted store. For non-adaptive runs, the next scheduled control.
    pub fn final_control(&mut self) -> Result<FeedbackControl> {
        let k = self.iterations_done() + 1;
        self.next_control(k).map_err(|e| e.at_iteration(k))
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct AmisRun {
    pub outputs: Vec<IterationOutput>,
    /// Proposal after one more adaptation on the final store.
    pub final_control: FeedbackControl,
    pub store: SampleStore,
}

impl AmisRun {
    pub fn last(&self) -> &IterationOutput {
        self.outputs.last().expect("at least one iteration")
    }
}

/// Runs every scheduled iteration.
pub fn run_amis(problem: &DiffusionProblem, config: &AmisConfig) -> Result<AmisRun> {
    let mut sampler = AmisSampler::new(problem.clone(), config.clone())?;
    let mut outputs = Vec::with_capacity(config.schedule.len());
    while !sampler.is_finished() {
        outputs.push(sampler.step()?);
    }
    let final_control = sampler.final_control()?;
    Ok(AmisRun {
        outputs,
        final_control,
        store: sampler.into_store(),
    })
}

/// Estimate of a possibly negative `E_Q[h]` from two positive sub-problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedEstimate {
    /// Estimate of `E[h_+ + 1]`.
    pub positive: f64,
    /// Estimate of `E[h_- + 1]`.
    pub negative: f64,
}

impl SignedEstimate {
    pub fn value(&self) -> f64 {
        self.positive - self.negative
    }
}

/// Estimates `E_Q[h]` for a signed path functional as
/// `E[h_+ + 1] - E[h_- + 1]`, each from its own AMIS run on its own random
/// streams. Cost-form targets are positive and handled the same way.
pub fn estimate_signed(problem: &DiffusionProblem, config: &AmisConfig) -> Result<SignedEstimate> {
    let base = problem.clone();
    let h = move |path: &crate::sde::SamplePath| base.h(path);
    let h = Arc::new(h);

    let hp = Arc::clone(&h);
    let positive = problem.clone().with_target(TargetFunctional::path(move |p| {
        hp(p).map_or(f64::NAN, |v| v.max(0.0)) + 1.0
    }));
    let hn = Arc::clone(&h);
    let negative = problem.clone().with_target(TargetFunctional::path(move |p| {
        hn(p).map_or(f64::NAN, |v| (-v).max(0.0)) + 1.0
    }));

    let run_pos = run_amis(&positive, &config.clone().with_stream(2 * config.stream + 1))?;
    let run_neg = run_amis(&negative, &config.clone().with_stream(2 * config.stream + 2))?;
    Ok(SignedEstimate {
        positive: run_pos.last().psi_hat,
        negative: run_neg.last().psi_hat,
    })
}
