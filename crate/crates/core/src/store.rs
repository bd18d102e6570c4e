//! Append-only sample store: one batch per iteration, each with the frozen
//! proposal control that generated it.

use std::sync::Arc;

use crate::error::{AmisError, Result};
use crate::logspace::LogSum;
use crate::sde::{FeedbackControl, SamplePath};

/// One generated sample and its (log-domain) weights.
///
/// `log_h` and `log_dqdp` are fixed at insertion; only the re-weight factor
/// `w` changes afterwards.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    iteration: usize,
    index: usize,
    log_h: f64,
    log_dqdp: f64,
    cost: Option<f64>,
    log_w: f64,
    path: Option<Arc<SamplePath>>,
}

impl WeightedSample {
    pub fn new(
        iteration: usize,
        index: usize,
        log_h: f64,
        log_dqdp: f64,
        cost: Option<f64>,
        path: Option<Arc<SamplePath>>,
    ) -> Self {
        Self {
            iteration,
            index,
            log_h,
            log_dqdp,
            cost,
            log_w: 0.0,
            path,
        }
    }

    /// Generating iteration `k` (1-based).
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn log_h(&self) -> f64 {
        self.log_h
    }

    /// `log dQ/dP_k` under the generating proposal.
    pub fn log_dqdp(&self) -> f64 {
        self.log_dqdp
    }

    /// Path cost `S`, present for cost-form problems.
    pub fn cost(&self) -> Option<f64> {
        self.cost
    }

    pub fn log_w(&self) -> f64 {
        self.log_w
    }

    pub fn w(&self) -> f64 {
        self.log_w.exp()
    }

    /// `log(h dQ/dP_k)`, the unweighted importance term.
    pub fn log_term(&self) -> f64 {
        self.log_h + self.log_dqdp
    }

    /// `log(h dQ/dP_k w)`.
    pub fn log_weighted_term(&self) -> f64 {
        self.log_h + self.log_dqdp + self.log_w
    }

    pub fn path(&self) -> Option<&Arc<SamplePath>> {
        self.path.as_ref()
    }

    pub fn is_retained(&self) -> bool {
        self.log_w > f64::NEG_INFINITY
    }
}

/// Re-weight factors `log w`, either one value per batch or one per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum LogWeights {
    PerBatch(Vec<f64>),
    PerSample(Vec<Vec<f64>>),
}

impl LogWeights {
    /// `log w` of sample `n` (0-based) in iteration `k` (1-based).
    pub fn get(&self, k: usize, n: usize) -> f64 {
        match self {
            LogWeights::PerBatch(w) => w[k - 1],
            LogWeights::PerSample(w) => w[k - 1][n],
        }
    }

    /// Whether the layout fits batches of the given sizes.
    pub fn matches(&self, sizes: impl ExactSizeIterator<Item = usize>) -> bool {
        match self {
            LogWeights::PerBatch(w) => w.len() == sizes.len(),
            LogWeights::PerSample(w) => {
                w.len() == sizes.len() && w.iter().zip(sizes).all(|(w, n)| w.len() == n)
            }
        }
    }
}

/// Per-batch sums of `y = h dQ/dP_k`, of `y^2` and of `exp(-S)`.
#[derive(Debug, Clone, Copy)]
pub struct BatchSums {
    pub y: LogSum,
    pub y2: LogSum,
    /// `None` unless every sample of the batch has a cost.
    pub neg_cost: Option<LogSum>,
}

impl BatchSums {
    fn of(samples: &[WeightedSample]) -> Self {
        let mut y = LogSum::new();
        let mut y2 = LogSum::new();
        let mut neg_cost = Some(LogSum::new());
        for s in samples {
            let t = s.log_term();
            y.add(t);
            y2.add(2.0 * t);
            match (s.cost, neg_cost.as_mut()) {
                (Some(c), Some(acc)) => acc.add(-c),
                _ => neg_cost = None,
            }
        }
        Self { y, y2, neg_cost }
    }
}

/// Which per-batch sum a weighted total runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchStat {
    /// `sum w y`.
    Y,
    /// `sum w^2 y^2`.
    Y2,
    /// `sum w exp(-S)`.
    NegCost,
}

/// Linear-domain copies of the batch sums relative to a running maximum,
/// so weighted totals over many batches need no exponentials.
#[derive(Debug, Clone, Default)]
struct LinearSums {
    shift_y: f64,
    shift_c: f64,
    y: Vec<f64>,
    y2: Vec<f64>,
    c: Vec<f64>,
}

impl LinearSums {
    fn push(&mut self, sums: &BatchSums) {
        if self.y.is_empty() {
            self.shift_y = f64::NEG_INFINITY;
            self.shift_c = f64::NEG_INFINITY;
        }
        let ly = sums.y.value();
        if ly > self.shift_y {
            let f = (self.shift_y - ly).exp();
            self.y.iter_mut().for_each(|v| *v *= f);
            self.y2.iter_mut().for_each(|v| *v *= f * f);
            self.shift_y = ly;
        }
        let lc = sums.neg_cost.map_or(f64::NEG_INFINITY, |c| c.value());
        if lc > self.shift_c {
            let f = (self.shift_c - lc).exp();
            self.c.iter_mut().for_each(|v| *v *= f);
            self.shift_c = lc;
        }
        self.y.push(relative(ly, self.shift_y));
        self.y2.push(relative(sums.y2.value(), 2.0 * self.shift_y));
        self.c.push(relative(lc, self.shift_c));
    }
}

fn relative(log_v: f64, shift: f64) -> f64 {
    if log_v == f64::NEG_INFINITY {
        0.0
    } else {
        (log_v - shift).exp()
    }
}

/// Below this a linear total may have lost terms to underflow.
pub(crate) const LINEAR_FLOOR: f64 = 1e-250;

#[derive(Debug, Clone)]
pub struct Batch {
    control: FeedbackControl,
    samples: Vec<WeightedSample>,
    sums: BatchSums,
}

impl Batch {
    pub fn control(&self) -> &FeedbackControl {
        &self.control
    }

    pub fn samples(&self) -> &[WeightedSample] {
        &self.samples
    }

    pub fn sums(&self) -> &BatchSums {
        &self.sums
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampleStore {
    batches: Vec<Batch>,
    total: usize,
    linear: LinearSums,
}

impl SampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the batch of iteration `k = num_batches() + 1`.
    pub fn push_batch(
        &mut self,
        control: FeedbackControl,
        samples: Vec<WeightedSample>,
    ) -> Result<()> {
        let k = self.batches.len() + 1;
        if samples.is_empty() {
            return Err(AmisError::Configuration(format!(
                "batch {k} must contain at least one sample"
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.iteration != k) {
            return Err(AmisError::Structural(format!(
                "sample from iteration {} pushed as batch {k}",
                s.iteration
            )));
        }
        let sums = BatchSums::of(&samples);
        self.linear.push(&sums);
        self.total += samples.len();
        self.batches.push(Batch {
            control,
            samples,
            sums,
        });
        Ok(())
    }

    /// Number of iterations `K` stored so far.
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Running total `N = sum_l N_l`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    /// Batch of iteration `k` (1-based).
    pub fn batch(&self, k: usize) -> &Batch {
        &self.batches[k - 1]
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(Batch::len).collect()
    }

    pub fn controls(&self) -> Vec<&FeedbackControl> {
        self.batches.iter().map(|b| &b.control).collect()
    }

    pub fn samples(&self) -> impl Iterator<Item = &WeightedSample> {
        self.batches.iter().flat_map(|b| b.samples.iter())
    }

    /// Whether every stored sample carries a path cost.
    pub fn has_costs(&self) -> bool {
        self.batches.iter().all(|b| b.sums.neg_cost.is_some())
    }

    /// `log sum_l v_l S_l` over batches, where `S_l` is the chosen batch
    /// sum and `v_l = exp(log_w[l])` (squared for [`BatchStat::Y2`]).
    /// Missing cost sums count as zero.
    pub fn weighted_batch_log_sum(&self, batch_log_w: &[f64], stat: BatchStat) -> f64 {
        let (lin, shift, power) = match stat {
            BatchStat::Y => (&self.linear.y, self.linear.shift_y, 1.0),
            BatchStat::Y2 => (&self.linear.y2, 2.0 * self.linear.shift_y, 2.0),
            BatchStat::NegCost => (&self.linear.c, self.linear.shift_c, 1.0),
        };
        let mut acc = 0.0;
        let mut last = f64::NAN;
        let mut factor = 0.0;
        for (&v, &lw) in lin.iter().zip(batch_log_w) {
            if lw == f64::NEG_INFINITY {
                continue;
            }
            if lw != last {
                last = lw;
                factor = (power * lw).exp();
            }
            acc += factor * v;
        }
        if acc > LINEAR_FLOOR && acc.is_finite() {
            return acc.ln() + shift;
        }
        let mut out = LogSum::new();
        for (b, &lw) in self.batches.iter().zip(batch_log_w) {
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let s = match stat {
                BatchStat::Y => b.sums.y,
                BatchStat::Y2 => b.sums.y2,
                BatchStat::NegCost => match b.sums.neg_cost {
                    Some(c) => c,
                    None => continue,
                },
            };
            let mut scaled = LogSum::new();
            scaled.add(s.value() + power * lw);
            out.merge(&scaled);
        }
        out.value()
    }

    /// Suffix sums `sum_{l >= t} y_l` and `sum_{l >= t} y_l^2` for
    /// `t = 0..=K`, each relative to a common scale that the ratio
    /// `s1^2 / s2` does not depend on.
    pub(crate) fn linear_suffix_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.batches.len();
        let mut s1 = vec![0.0; k + 1];
        let mut s2 = vec![0.0; k + 1];
        for l in (0..k).rev() {
            s1[l] = s1[l + 1] + self.linear.y[l];
            s2[l] = s2[l + 1] + self.linear.y2[l];
        }
        (s1, s2)
    }

    /// Replaces every re-weight factor. Shape must match the store.
    pub fn set_log_weights(&mut self, log_weights: &LogWeights) -> Result<()> {
        if !log_weights.matches(self.batches.iter().map(Batch::len)) {
            return Err(AmisError::Structural(
                "weight assignment does not match the store layout".into(),
            ));
        }
        for (k, batch) in self.batches.iter_mut().enumerate() {
            for (n, s) in batch.samples.iter_mut().enumerate() {
                let lw = log_weights.get(k + 1, n);
                debug_assert!(!lw.is_nan());
                s.log_w = lw;
            }
        }
        Ok(())
    }

    /// Drops the stored paths of batch `k`; weights and terms are kept.
    pub fn release_paths(&mut self, k: usize) {
        for s in &mut self.batches[k - 1].samples {
            s.path = None;
        }
    }
}
