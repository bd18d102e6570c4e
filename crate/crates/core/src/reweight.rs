//! Re-weighting schemes for multiple importance sampling and the sample
//! effective-sample-size estimate used to report on and tune them.
//!
//! All re-weight factors are carried as `log w`; a discarded sample has
//! `log w = -inf`.

use crate::error::{AmisError, Result};
use crate::logspace::LogSum;
use crate::sde::{log_ratio_from_generator, FeedbackControl};
use crate::store::{BatchStat, SampleStore, WeightedSample, LINEAR_FLOOR};

pub use crate::store::LogWeights;

/// Discard times considered by the ESS-optimized scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSet {
    /// `t in {0, .., k-1}`.
    All,
    /// `t in {0} u {2^s : s >= 1}`, restricted to `t < k`.
    PowersOfTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReweightScheme {
    /// `w = 1`.
    Flat,
    /// Deterministic multiple mixture over all proposals so far.
    Balance,
    /// Flat weights after discarding batches `l <= ceil(k/2)`.
    DiscardFixed,
    /// Flat weights after the discard time that maximizes the sample ESS.
    DiscardOptimized {
        candidate_set: CandidateSet,
        min_retained: usize,
    },
    /// Only the latest batch is used.
    NonMixingLastBatch,
}

impl ReweightScheme {
    pub const DEFAULT_MIN_RETAINED: usize = 2;

    pub fn discard_optimized() -> Self {
        ReweightScheme::DiscardOptimized {
            candidate_set: CandidateSet::All,
            min_retained: Self::DEFAULT_MIN_RETAINED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ReweightScheme::DiscardOptimized { min_retained, .. } = self {
            if *min_retained < 2 {
                return Err(AmisError::Configuration(format!(
                    "min_retained must be at least 2, got {min_retained}"
                )));
            }
        }
        Ok(())
    }

    /// Stable identifier used in result files.
    pub fn name(&self) -> &'static str {
        match self {
            ReweightScheme::Flat => "flat",
            ReweightScheme::Balance => "balance",
            ReweightScheme::DiscardFixed => "discard_fixed",
            ReweightScheme::DiscardOptimized { .. } => "discard_optimized",
            ReweightScheme::NonMixingLastBatch => "non_mixing",
        }
    }

    /// Whether weights, once set, are constant within each batch.
    pub fn is_batch_constant(&self) -> bool {
        !matches!(self, ReweightScheme::Balance)
    }
}

/// Sample ESS of a weighted estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssReport {
    pub ess_hat: f64,
    pub retained_samples: usize,
    /// Number of leading iterations discarded (0 when none).
    pub discard_time: usize,
}

/// How the weighted sum is normalized when forming `psi_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `(1 / N) sum h dQ/dP w` over every sample.
    AllSamples,
    /// `(1 / N_retained) sum h dQ/dP` over samples with `w > 0`. The common
    /// factor `w` then only matters for reporting; this stays exact for
    /// unequal batch sizes.
    RetainedSamples,
}

/// Re-weight factors for every sample of a store, batch by batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAssignment {
    pub log_weights: LogWeights,
    pub normalization: Normalization,
    pub discard_time: usize,
}

impl WeightAssignment {
    fn uniform(store: &SampleStore, log_w: f64) -> Self {
        Self {
            log_weights: LogWeights::PerBatch(vec![log_w; store.num_batches()]),
            normalization: Normalization::AllSamples,
            discard_time: 0,
        }
    }

    /// `log w` of sample `n` (0-based) in iteration `k` (1-based).
    pub fn log_w(&self, k: usize, n: usize) -> f64 {
        self.log_weights.get(k, n)
    }

    /// `w` of sample `n` (0-based) in iteration `k` (1-based).
    pub fn w(&self, k: usize, n: usize) -> f64 {
        self.log_w(k, n).exp()
    }

    pub fn retained_samples(&self, store: &SampleStore) -> usize {
        match &self.log_weights {
            LogWeights::PerBatch(w) => w
                .iter()
                .zip(store.batches())
                .filter(|(lw, _)| **lw > f64::NEG_INFINITY)
                .map(|(_, b)| b.len())
                .sum(),
            LogWeights::PerSample(w) => w
                .iter()
                .flatten()
                .filter(|lw| **lw > f64::NEG_INFINITY)
                .count(),
        }
    }

    fn check_shape(&self, store: &SampleStore) -> Result<()> {
        if self.log_weights.matches(store.batches().iter().map(|b| b.len())) {
            Ok(())
        } else {
            Err(AmisError::Structural(
                "weight assignment does not match the store layout".into(),
            ))
        }
    }

    fn pairs<'a>(
        &'a self,
        store: &'a SampleStore,
    ) -> impl Iterator<Item = (&'a WeightedSample, f64)> + 'a {
        store.batches().iter().enumerate().flat_map(move |(k, b)| {
            b.samples()
                .iter()
                .enumerate()
                .map(move |(n, s)| (s, self.log_weights.get(k + 1, n)))
        })
    }

    fn denominator(&self, store: &SampleStore) -> usize {
        match self.normalization {
            Normalization::AllSamples => store.total(),
            Normalization::RetainedSamples => self.retained_samples(store),
        }
    }

    /// `log` of the normalized weighted mean of `exp(term(sample))`.
    pub fn log_weighted_mean<F>(&self, store: &SampleStore, term: F) -> Result<f64>
    where
        F: Fn(&WeightedSample) -> f64,
    {
        self.check_shape(store)?;
        let mut acc = LogSum::new();
        for (s, lw) in self.pairs(store) {
            if lw == f64::NEG_INFINITY {
                continue;
            }
            match self.normalization {
                Normalization::AllSamples => acc.add(term(s) + lw),
                Normalization::RetainedSamples => acc.add(term(s)),
            }
        }
        Ok(Self::normalize(acc.value(), self.denominator(store)))
    }

    fn normalize(log_sum: f64, denominator: usize) -> f64 {
        if denominator == 0 {
            f64::NEG_INFINITY
        } else {
            log_sum - (denominator as f64).ln()
        }
    }

    /// Per-batch factors entering the sums, when constant within batches.
    fn batch_factors(&self) -> Option<Vec<f64>> {
        match (&self.log_weights, self.normalization) {
            (LogWeights::PerBatch(w), Normalization::AllSamples) => Some(w.clone()),
            (LogWeights::PerBatch(w), Normalization::RetainedSamples) => Some(
                w.iter()
                    .map(|&lw| if lw == f64::NEG_INFINITY { lw } else { 0.0 })
                    .collect(),
            ),
            (LogWeights::PerSample(_), _) => None,
        }
    }

    fn log_mean_stat<F>(&self, store: &SampleStore, stat: BatchStat, term: F) -> Result<f64>
    where
        F: Fn(&WeightedSample) -> f64,
    {
        self.check_shape(store)?;
        match self.batch_factors() {
            Some(f) => Ok(Self::normalize(
                store.weighted_batch_log_sum(&f, stat),
                self.denominator(store),
            )),
            None => self.log_weighted_mean(store, term),
        }
    }

    /// `log psi_hat`.
    pub fn log_estimate(&self, store: &SampleStore) -> Result<f64> {
        self.log_mean_stat(store, BatchStat::Y, WeightedSample::log_term)
    }

    /// `psi_hat`.
    pub fn estimate(&self, store: &SampleStore) -> Result<f64> {
        self.log_estimate(store).map(f64::exp)
    }

    /// `log` of the weighted mean of `exp(-S)`. Needs a cost on every sample.
    pub fn log_mean_exp_neg_cost(&self, store: &SampleStore) -> Result<f64> {
        if !store.has_costs() {
            return Err(AmisError::UnsupportedForm);
        }
        self.log_mean_stat(store, BatchStat::NegCost, |s| {
            -s.cost().unwrap_or(f64::INFINITY)
        })
    }

    /// Sample ESS of `y = h dQ/dP w` over retained samples.
    pub fn ess(&self, store: &SampleStore) -> Result<EssReport> {
        self.check_shape(store)?;
        let retained = self.retained_samples(store);
        let ess = match &self.log_weights {
            LogWeights::PerBatch(w) => {
                let l1 = store.weighted_batch_log_sum(w, BatchStat::Y);
                if l1 == f64::NEG_INFINITY {
                    return Err(AmisError::UndefinedEss);
                }
                (2.0 * l1 - store.weighted_batch_log_sum(w, BatchStat::Y2)).exp()
            }
            LogWeights::PerSample(_) => ess_from_log(
                self.pairs(store)
                    .filter(|(_, lw)| *lw > f64::NEG_INFINITY)
                    .map(|(s, lw)| s.log_term() + lw),
            )?,
        };
        Ok(EssReport {
            ess_hat: ess.clamp(1.0, retained as f64),
            retained_samples: retained,
            discard_time: self.discard_time,
        })
    }
}

/// `w = 1` for every sample.
pub fn flat_weights(store: &SampleStore) -> WeightAssignment {
    WeightAssignment::uniform(store, 0.0)
}

/// Balance heuristic `w_k(x) = 1 / ((1/N) sum_l N_l dP_l/dP_k(x))`, from
/// scratch. `controls[l]` is the proposal of iteration `l + 1`.
pub fn balance_weights(
    store: &SampleStore,
    controls: &[&FeedbackControl],
) -> Result<WeightAssignment> {
    if controls.len() != store.num_batches() {
        return Err(AmisError::Structural(format!(
            "{} controls given for {} iterations",
            controls.len(),
            store.num_batches()
        )));
    }
    let mut cache = BalanceCache::default();
    cache.extend(store, controls)?;
    Ok(cache.weights(store))
}

/// Per-sample running mixture sums `log sum_l N_l dP_l/dP_k(x)`, extended by
/// one term per new proposal. A run costs `O(K^2 M)` ratio evaluations and
/// `O(N)` memory.
#[derive(Debug, Clone, Default)]
pub struct BalanceCache {
    rows: Vec<Vec<MixtureSum>>,
}

#[derive(Debug, Clone, Copy, Default)]
struct MixtureSum {
    proposals: usize,
    log_sum: LogSum,
}

impl BalanceCache {
    fn extend(&mut self, store: &SampleStore, controls: &[&FeedbackControl]) -> Result<()> {
        let k_total = controls.len();
        let log_sizes: Vec<f64> = store.batches().iter().map(|b| (b.len() as f64).ln()).collect();
        for (b, batch) in store.batches().iter().enumerate() {
            if self.rows.len() <= b {
                self.rows.push(vec![MixtureSum::default(); batch.len()]);
            }
            for (row, sample) in self.rows[b].iter_mut().zip(batch.samples()) {
                if row.proposals == k_total {
                    continue;
                }
                let path = sample.path().ok_or(AmisError::MissingIncrements)?;
                for (l, other) in controls.iter().enumerate().skip(row.proposals) {
                    let r = if l == b {
                        0.0
                    } else {
                        log_ratio_from_generator(path, other)?
                    };
                    row.log_sum.add(log_sizes[l] + r);
                }
                row.proposals = k_total;
            }
        }
        Ok(())
    }

    fn weights(&self, store: &SampleStore) -> WeightAssignment {
        let log_total = (store.total() as f64).ln();
        let log_weights = self
            .rows
            .iter()
            .map(|batch_rows| {
                batch_rows
                    .iter()
                    .map(|row| log_total - row.log_sum.value())
                    .collect()
            })
            .collect();
        WeightAssignment {
            log_weights: LogWeights::PerSample(log_weights),
            normalization: Normalization::AllSamples,
            discard_time: 0,
        }
    }

    /// Brings the cache up to date with `store` and returns balance weights.
    pub fn update(&mut self, store: &SampleStore) -> Result<WeightAssignment> {
        let controls = store.controls();
        self.extend(store, &controls)?;
        Ok(self.weights(store))
    }
}

/// Discarding re-weighting at iteration `k = store.num_batches()`:
/// `w = 0` for `l <= t`, `w = k / (k - t)` for `l > t`.
pub fn discard_weights(store: &SampleStore, discard_time: usize) -> Result<WeightAssignment> {
    let k = store.num_batches();
    if discard_time >= k {
        return Err(AmisError::InvalidDiscardTime {
            discard: discard_time,
            iteration: k,
        });
    }
    let retained_w = (k as f64 / (k - discard_time) as f64).ln();
    let log_weights = (0..k)
        .map(|l| {
            if l < discard_time {
                f64::NEG_INFINITY
            } else {
                retained_w
            }
        })
        .collect();
    Ok(WeightAssignment {
        log_weights: LogWeights::PerBatch(log_weights),
        normalization: Normalization::RetainedSamples,
        discard_time,
    })
}

/// `t_k = ceil(k / 2)`, capped at `k - 1` so one batch always survives.
pub fn choose_fixed_discard(k: usize) -> usize {
    k.div_ceil(2).min(k.saturating_sub(1))
}

/// Candidate discard times at iteration `k`, ascending.
pub fn candidate_discard_times(k: usize, set: CandidateSet) -> Vec<usize> {
    match set {
        CandidateSet::All => (0..k).collect(),
        CandidateSet::PowersOfTwo => {
            let mut out = vec![0];
            let mut t = 2usize;
            while t < k {
                out.push(t);
                t *= 2;
            }
            if k == 0 {
                out.clear();
            }
            out
        }
    }
}

/// Outcome of the ESS search over discard times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscardChoice {
    pub discard_time: usize,
    pub report: EssReport,
    /// Number of candidate ESS evaluations performed.
    pub evaluations: usize,
}

/// Evaluates the sample ESS of the retained set for every admissible
/// candidate and returns the maximizer; ties go to the smallest `t`.
pub fn optimized_discard_search(
    store: &SampleStore,
    candidate_set: CandidateSet,
    min_retained: usize,
) -> Result<DiscardChoice> {
    let k = store.num_batches();
    let (lin1, lin2) = store.linear_suffix_sums();
    let mut suffix_n = vec![0usize; k + 1];
    for (l, batch) in store.batches().iter().enumerate().rev() {
        suffix_n[l] = suffix_n[l + 1] + batch.len();
    }
    // Log-domain suffix sums, built only if a linear total underflows.
    let mut log_suffix: Option<(Vec<LogSum>, Vec<LogSum>)> = None;
    let mut suffix_ess = |t: usize| -> Option<f64> {
        if lin1[t] > LINEAR_FLOOR && lin2[t] > LINEAR_FLOOR {
            return Some(lin1[t] * lin1[t] / lin2[t]);
        }
        let (y, y2) = log_suffix.get_or_insert_with(|| {
            let mut y = vec![LogSum::new(); k + 1];
            let mut y2 = vec![LogSum::new(); k + 1];
            for (l, batch) in store.batches().iter().enumerate().rev() {
                let (next, next2) = (y[l + 1], y2[l + 1]);
                y[l] = batch.sums().y;
                y[l].merge(&next);
                y2[l] = batch.sums().y2;
                y2[l].merge(&next2);
            }
            (y, y2)
        });
        let s1 = y[t].value();
        (s1 > f64::NEG_INFINITY).then(|| (2.0 * s1 - y2[t].value()).exp())
    };

    let mut best: Option<(usize, f64)> = None;
    let mut evaluations = 0;
    let mut admissible = 0;
    for t in candidate_discard_times(k, candidate_set) {
        if suffix_n[t] < min_retained {
            continue;
        }
        admissible += 1;
        evaluations += 1;
        let Some(ess) = suffix_ess(t) else {
            continue;
        };
        if best.is_none_or(|(_, b)| ess > b) {
            best = Some((t, ess));
        }
    }
    if admissible == 0 {
        return Err(AmisError::Configuration(format!(
            "no discard candidate retains at least {min_retained} samples at iteration {k}"
        )));
    }
    let (t, ess) = best.ok_or(AmisError::UndefinedEss)?;
    Ok(DiscardChoice {
        discard_time: t,
        report: EssReport {
            ess_hat: ess.clamp(1.0, suffix_n[t] as f64),
            retained_samples: suffix_n[t],
            discard_time: t,
        },
        evaluations,
    })
}

pub fn choose_optimized_discard(
    store: &SampleStore,
    scheme: &ReweightScheme,
) -> Result<(usize, EssReport)> {
    match *scheme {
        ReweightScheme::DiscardOptimized {
            candidate_set,
            min_retained,
        } => {
            scheme.validate()?;
            let c = optimized_discard_search(store, candidate_set, min_retained)?;
            Ok((c.discard_time, c.report))
        }
        other => Err(AmisError::Configuration(format!(
            "scheme {} has no optimized discard time",
            other.name()
        ))),
    }
}

/// `(sum y)^2 / sum y^2`.
pub fn ess_estimate(y: &[f64]) -> Result<f64> {
    if let Some(bad) = y.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(AmisError::Structural(format!(
            "ESS needs finite nonnegative values, got {bad}"
        )));
    }
    ess_from_log(y.iter().map(|v| v.ln()))
}

/// ESS from `log y` values; stable when the `y` span many orders of magnitude.
pub fn ess_from_log<I: IntoIterator<Item = f64>>(log_y: I) -> Result<f64> {
    let mut s1 = LogSum::new();
    let mut s2 = LogSum::new();
    for ly in log_y {
        s1.add(ly);
        s2.add(2.0 * ly);
    }
    let l1 = s1.value();
    if l1 == f64::NEG_INFINITY {
        return Err(AmisError::UndefinedEss);
    }
    Ok((2.0 * l1 - s2.value()).exp())
}

/// `w = 0` except for the latest batch, whose flat weights are scaled so the
/// estimate is the plain mean over that batch.
pub fn nonmixing_weights(store: &SampleStore) -> WeightAssignment {
    let k = store.num_batches();
    let total = store.total() as f64;
    let log_weights = store
        .batches()
        .iter()
        .enumerate()
        .map(|(l, b)| {
            if l + 1 == k {
                (total / b.len() as f64).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    WeightAssignment {
        log_weights: LogWeights::PerBatch(log_weights),
        normalization: Normalization::AllSamples,
        discard_time: k.saturating_sub(1),
    }
}

/// Applies a scheme at the current iteration, keeping whatever state the
/// scheme needs between iterations.
#[derive(Debug, Clone)]
pub struct Reweighter {
    scheme: ReweightScheme,
    balance: BalanceCache,
    last_search: Option<DiscardChoice>,
}

impl Reweighter {
    pub fn new(scheme: ReweightScheme) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            scheme,
            balance: BalanceCache::default(),
            last_search: None,
        })
    }

    pub fn scheme(&self) -> &ReweightScheme {
        &self.scheme
    }

    /// Result of the most recent discard-time search, if any.
    pub fn last_search(&self) -> Option<&DiscardChoice> {
        self.last_search.as_ref()
    }

    pub fn reweight(&mut self, store: &SampleStore) -> Result<WeightAssignment> {
        if store.is_empty() {
            return Err(AmisError::Configuration("cannot re-weight an empty store".into()));
        }
        self.last_search = None;
        match self.scheme {
            ReweightScheme::Flat => Ok(flat_weights(store)),
            ReweightScheme::Balance => self.balance.update(store),
            ReweightScheme::DiscardFixed => {
                discard_weights(store, choose_fixed_discard(store.num_batches()))
            }
            ReweightScheme::DiscardOptimized {
                candidate_set,
                min_retained,
            } => {
                if store.total() < min_retained {
                    return discard_weights(store, 0);
                }
                match optimized_discard_search(store, candidate_set, min_retained) {
                    Ok(choice) => {
                        self.last_search = Some(choice);
                        discard_weights(store, choice.discard_time)
                    }
                    Err(AmisError::UndefinedEss) => discard_weights(store, 0),
                    Err(e) => Err(e),
                }
            }
            ReweightScheme::NonMixingLastBatch => Ok(nonmixing_weights(store)),
        }
    }
}
