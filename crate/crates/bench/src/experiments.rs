//! Comparative experiments on the benchmark problems.

use std::collections::BTreeMap;
use std::time::Instant;

use amis_core::adaptation::AdaptMode;
use amis_core::engine::{Adaptation, AmisConfig, AmisSampler, IterationOutput, PathIntegralSettings};
use amis_core::problems::{gaussian_target, gaussian_target_constant_ess_rate, one_step_gaussian};
use amis_core::reweight::ReweightScheme;
use amis_core::sde::{BasisFunction, DiffusionProblem, FeedbackControl};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{final_values, mean_stderr, summarize, ResultRow, SchemeSummary, Summary};
use crate::BenchError;

/// Key of the reference line in ESS summaries.
pub const UPPER_BOUND_KEY: &str = "upper_bound";

fn row(experiment: &str, scheme: &str, run: usize, out: &IterationOutput, timing: bool) -> ResultRow {
    let ns = |d: std::time::Duration| if timing { d.as_nanos() as u64 } else { 0 };
    ResultRow {
        experiment: experiment.to_owned(),
        scheme: scheme.to_owned(),
        run,
        iteration: out.k,
        total_samples: out.total_samples,
        psi_hat: out.psi_hat,
        ess_hat: out.ess.map_or(f64::NAN, |e| e.ess_hat),
        j_hat: out.j_hat.unwrap_or(f64::NAN),
        adapt_ns: ns(out.timings.adapt),
        generate_ns: ns(out.timings.generate),
        reweight_ns: ns(out.timings.reweight),
    }
}

/// One seeded run turned into result rows.
pub fn run_rows(
    experiment: &str,
    run: usize,
    problem: &DiffusionProblem,
    config: AmisConfig,
    timing: bool,
) -> Result<Vec<ResultRow>, BenchError> {
    let scheme = config.scheme.name();
    let mut sampler = AmisSampler::new(problem.clone(), config)?;
    let mut rows = Vec::new();
    while !sampler.is_finished() {
        let out = sampler.step()?;
        rows.push(row(experiment, scheme, run, &out, timing));
    }
    Ok(rows)
}

/// Runs `make(seed)` for every seed, concurrently, keeping run order.
fn run_all<F>(
    experiment: &str,
    problem: &DiffusionProblem,
    seeds: &[u64],
    timing: bool,
    make: F,
) -> Result<Vec<ResultRow>, BenchError>
where
    F: Fn(u64) -> AmisConfig + Sync,
{
    let per_run: Vec<Vec<ResultRow>> = seeds
        .par_iter()
        .enumerate()
        .map(|(run, &seed)| run_rows(experiment, run, problem, make(seed), timing))
        .collect::<Result<_, _>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

/// `run` subcommand: every seed of a configuration.
pub fn run_config(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<ResultRow>, BenchError> {
    let problem = cfg.problem.build()?;
    let base = cfg.amis_config(&problem, 0)?;
    run_all(&cfg.experiment, &problem, seeds, cfg.record_timing, |seed| {
        let mut c = base.clone();
        c.seed = seed;
        c
    })
}

/// Settings shared by the ESS-curve experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub seeds: Vec<u64>,
    /// Iterations of the one-sample-per-iteration schemes.
    pub iterations: usize,
    /// Batch size of the non-mixing scheme; it runs for the same sample budget.
    pub nonmixing_batch: usize,
    pub num_steps: usize,
    /// Also run flat re-weighting without discarding.
    pub include_flat: bool,
    pub record_timing: bool,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            seeds: (0..100).collect(),
            iterations: 300,
            nonmixing_batch: 20,
            num_steps: 100,
            include_flat: false,
            record_timing: true,
        }
    }
}

/// The schedule `(scheme, batch size, iterations)` of each curve.
fn curve_plan(opts: &CurveOptions, schemes: &[ReweightScheme]) -> Vec<(ReweightScheme, usize, usize)> {
    schemes
        .iter()
        .map(|s| match s {
            ReweightScheme::NonMixingLastBatch => (
                *s,
                opts.nonmixing_batch,
                (opts.iterations / opts.nonmixing_batch).max(1),
            ),
            _ => (*s, 1, opts.iterations),
        })
        .collect()
}

/// ESS learning curves of several schemes on the `d = 3`, `z = (2, 2, 2)`
/// benchmark with path-integral adaptation in `basis`.
pub fn ess_curves(
    experiment: &str,
    basis: &BasisFunction,
    schemes: &[ReweightScheme],
    opts: &CurveOptions,
) -> Result<(Vec<ResultRow>, Summary), BenchError> {
    let problem = gaussian_target(vec![2.0; 3], opts.num_steps)?;
    let mut rows = Vec::new();
    let mut summary = BTreeMap::new();
    for (scheme, batch, iterations) in curve_plan(opts, schemes) {
        let adaptation = Adaptation::PathIntegral(PathIntegralSettings::new(basis.clone()));
        let scheme_rows = run_all(experiment, &problem, &opts.seeds, opts.record_timing, |seed| {
            AmisConfig::constant_batches(scheme, adaptation.clone(), batch, iterations, seed)
        })?;
        summary.insert(scheme.name().to_owned(), summarize(&scheme_rows, scheme.name()));
        rows.extend(scheme_rows);
    }
    Ok((rows, summary))
}

pub fn fig2_schemes(include_flat: bool) -> Vec<ReweightScheme> {
    let mut s = vec![
        ReweightScheme::Balance,
        ReweightScheme::discard_optimized(),
        ReweightScheme::DiscardFixed,
        ReweightScheme::NonMixingLastBatch,
    ];
    if include_flat {
        s.push(ReweightScheme::Flat);
    }
    s
}

/// Constant-basis curves plus the reference line `ESS = (3/4)^3 N`.
pub fn fig2(opts: &CurveOptions) -> Result<(Vec<ResultRow>, Summary), BenchError> {
    let (rows, mut summary) = ess_curves(
        "fig2",
        &BasisFunction::Constant,
        &fig2_schemes(opts.include_flat),
        opts,
    )?;
    let rate = gaussian_target_constant_ess_rate(3);
    summary.insert(
        UPPER_BOUND_KEY.to_owned(),
        SchemeSummary {
            slope: rate,
            final_ess_mean: rate * opts.iterations as f64,
            final_ess_stderr: 0.0,
        },
    );
    Ok((rows, summary))
}

/// Affine-basis curves for balance and optimized discarding.
pub fn fig3(opts: &CurveOptions) -> Result<(Vec<ResultRow>, Summary), BenchError> {
    ess_curves(
        "fig3",
        &BasisFunction::Affine,
        &[ReweightScheme::Balance, ReweightScheme::discard_optimized()],
        opts,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingOptions {
    pub seeds: Vec<u64>,
    pub total_samples: usize,
    pub iterations: Vec<usize>,
    pub num_steps: usize,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self {
            seeds: (0..100).collect(),
            total_samples: 200,
            iterations: vec![10, 25, 50, 100, 200],
            num_steps: 100,
        }
    }
}

/// Wall time of one scheme across the iteration counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: String,
    /// Seconds for all runs, per entry of `iterations`.
    pub seconds: Vec<f64>,
    /// Whether every run produced a finite estimate, per entry.
    pub finite_psi: Vec<bool>,
    /// Mean final estimate over runs, per entry.
    pub mean_psi: Vec<f64>,
    /// `seconds[last] / seconds[0]`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub total_samples: usize,
    pub runs: usize,
    pub iterations: Vec<usize>,
    pub schemes: Vec<TimingRow>,
}

/// Fixed total budget split into `K` equal batches, affine basis. Runs are
/// executed one after another on the calling thread.
pub fn timing(opts: &TimingOptions) -> Result<TimingTable, BenchError> {
    let problem = gaussian_target(vec![2.0; 3], opts.num_steps)?;
    for &k in &opts.iterations {
        if k == 0 || opts.total_samples % k != 0 {
            return Err(BenchError::Config(format!(
                "{} samples cannot be split into {k} equal batches",
                opts.total_samples
            )));
        }
    }
    let mut schemes = Vec::new();
    for scheme in [ReweightScheme::Balance, ReweightScheme::discard_optimized()] {
        let mut seconds = Vec::new();
        let mut finite_psi = Vec::new();
        let mut mean_psi = Vec::new();
        for &k in &opts.iterations {
            // Weights of discarding schemes never change once set, so their
            // adaptation can accumulate incrementally.
            let mode = if scheme.is_batch_constant() {
                AdaptMode::Incremental
            } else {
                AdaptMode::FullRecompute
            };
            let mut config = AmisConfig::constant_batches(
                scheme,
                Adaptation::PathIntegral(
                    PathIntegralSettings::new(BasisFunction::Affine).with_mode(mode),
                ),
                opts.total_samples / k,
                k,
                0,
            );
            config.parallel_threshold = usize::MAX;
            let start = Instant::now();
            let mut finals = Vec::with_capacity(opts.seeds.len());
            for &seed in &opts.seeds {
                config.seed = seed;
                let mut sampler = AmisSampler::new(problem.clone(), config.clone())?;
                let mut last = f64::NAN;
                while !sampler.is_finished() {
                    last = sampler.step()?.psi_hat;
                }
                finals.push(last);
            }
            seconds.push(start.elapsed().as_secs_f64());
            finite_psi.push(finals.iter().all(|v| v.is_finite()));
            mean_psi.push(mean_stderr(&finals).0);
        }
        let ratio = seconds.last().copied().unwrap_or(f64::NAN) / seconds[0];
        schemes.push(TimingRow {
            scheme: scheme.name().to_owned(),
            seconds,
            finite_psi,
            mean_psi,
            ratio,
        });
    }
    Ok(TimingTable {
        total_samples: opts.total_samples,
        runs: opts.seeds.len(),
        iterations: opts.iterations.clone(),
        schemes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleOptions {
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub record_timing: bool,
}

impl Default for CounterexampleOptions {
    fn default() -> Self {
        Self {
            seeds: (0..100).collect(),
            iterations: 100,
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSummary {
    /// `E_Q[h] = 1/sqrt(2)`.
    pub psi: f64,
    /// `0.1 psi`.
    pub threshold: f64,
    pub runs: usize,
    pub runs_below_threshold: usize,
    pub fraction_below_threshold: f64,
    pub final_psi_mean: f64,
}

/// Proposals `u_k = k` with flat weights and one sample per iteration on the
/// one-step Gaussian problem.
pub fn counterexample(
    opts: &CounterexampleOptions,
) -> Result<(Vec<ResultRow>, CounterexampleSummary), BenchError> {
    let problem = one_step_gaussian()?;
    let forced = Adaptation::Forced(std::sync::Arc::new(|k| {
        FeedbackControl::constant(&[k as f64], 1)
    }));
    let rows = run_all("counterexample", &problem, &opts.seeds, opts.record_timing, |seed| {
        AmisConfig::constant_batches(ReweightScheme::Flat, forced.clone(), 1, opts.iterations, seed)
    })?;
    let psi = amis_core::problems::ONE_STEP_GAUSSIAN_PSI;
    let threshold = 0.1 * psi;
    let finals = final_values(&rows, ReweightScheme::Flat.name(), |r| r.psi_hat);
    let below = finals.iter().filter(|v| **v < threshold).count();
    let summary = CounterexampleSummary {
        psi,
        threshold,
        runs: finals.len(),
        runs_below_threshold: below,
        fraction_below_threshold: below as f64 / finals.len() as f64,
        final_psi_mean: mean_stderr(&finals).0,
    };
    Ok((rows, summary))
}
