//! Path-integral adaptation of a linearly parametrized control.
//!
//! With weighted samples `y_n = h dQ/dP w` the next control is `u = A g`
//! where `A = F G^{-1}`,
//! `F = sum_n y_n sum_i (u_i dt + dW_i) g_i^T` and
//! `G = sum_n y_n sum_i g_i g_i^T dt`.
//! The `1/N` factors of the underlying expectations cancel and are omitted.
//! Sums are kept relative to a common scale `exp(log_scale)` because the `y_n`
//! can span hundreds of orders of magnitude; `A` does not depend on the scale.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{AmisError, Result};
use crate::sde::{BasisFunction, FeedbackControl, SamplePath};
use crate::store::{SampleStore, WeightedSample};

/// Weight-free path integrals of one sample: `sum (u dt + dW) g^T` (m x l)
/// and `sum g g^T dt` (l x l).
#[derive(Debug, Clone, PartialEq)]
pub struct PathIntegrals {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

/// Left-endpoint integrals along `path` with features from `basis`.
///
/// `u_i dt + dW_i` is the control kick actually applied, so the result only
/// depends on how the path was generated.
pub fn path_integrals(path: &SamplePath, basis: &BasisFunction) -> Result<PathIntegrals> {
    let increments = path.increments()?;
    let d = path.state_dim();
    let m = path.noise_dim();
    let l = basis.len(d);
    let dt = path.dt();
    let times = path.times();
    let mut f = DMatrix::zeros(m, l);
    let mut g = DMatrix::zeros(l, l);
    let mut feat = vec![0.0; l];
    let mut kick = vec![0.0; m];
    for i in 0..path.num_steps() {
        basis.eval_into(times[i], path.state(i), &mut feat);
        let dw = &increments[i * m..(i + 1) * m];
        for ((k, u), w) in kick.iter_mut().zip(path.applied_control(i)).zip(dw) {
            *k = u * dt + w;
        }
        for (c, &gc) in feat.iter().enumerate() {
            if gc == 0.0 {
                continue;
            }
            for (r, &k) in kick.iter().enumerate() {
                f[(r, c)] += k * gc;
            }
            for (r, &gr) in feat.iter().enumerate() {
                g[(r, c)] += gr * gc * dt;
            }
        }
    }
    Ok(PathIntegrals { f, g })
}

/// `(F, G)` contributions of one sample at its current weight
/// `y = h dQ/dP w`. `control` must be the proposal the sample was drawn from.
pub fn accumulate(
    sample: &WeightedSample,
    control: &FeedbackControl,
    basis: &BasisFunction,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let path = sample.path().ok_or_else(|| {
        AmisError::Structural("sample has no stored path to accumulate".into())
    })?;
    if control.noise_dim() != path.noise_dim() || control.state_dim() != path.state_dim() {
        return Err(AmisError::Structural(
            "control does not match the sample path dimensions".into(),
        ));
    }
    let p = path_integrals(path, basis)?;
    let y = sample.log_weighted_term().exp();
    Ok((p.f * y, p.g * y))
}

/// `F` and `G` relative to `exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
struct ScaledSums {
    log_scale: f64,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl ScaledSums {
    fn zeros(m: usize, l: usize) -> Self {
        Self {
            log_scale: f64::NEG_INFINITY,
            f: DMatrix::zeros(m, l),
            g: DMatrix::zeros(l, l),
        }
    }

    /// Adds `exp(log_y) * (f, g)` for each term.
    fn from_terms<'a, I>(m: usize, l: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a PathIntegrals)> + Clone,
    {
        let mut out = Self::zeros(m, l);
        out.log_scale = terms
            .clone()
            .into_iter()
            .map(|(ly, _)| ly)
            .fold(f64::NEG_INFINITY, f64::max);
        if out.log_scale == f64::NEG_INFINITY {
            return out;
        }
        for (ly, p) in terms {
            let c = (ly - out.log_scale).exp();
            if c == 0.0 {
                continue;
            }
            out.f.zip_apply(&p.f, |a, b| *a += c * b);
            out.g.zip_apply(&p.g, |a, b| *a += c * b);
        }
        out
    }

    /// `self += exp(log_factor) * other`.
    fn add_scaled(&mut self, other: &ScaledSums, log_factor: f64) {
        let lo = other.log_scale + log_factor;
        if lo == f64::NEG_INFINITY || lo.is_nan() {
            return;
        }
        if lo > self.log_scale {
            let shrink = (self.log_scale - lo).exp();
            self.f *= shrink;
            self.g *= shrink;
            self.log_scale = lo;
        }
        let c = (lo - self.log_scale).exp();
        self.f.zip_apply(&other.f, |a, b| *a += c * b);
        self.g.zip_apply(&other.g, |a, b| *a += c * b);
    }
}

/// Accumulated `F`, `G` and the current solution `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationState {
    /// `F / exp(log_scale)`.
    pub f: DMatrix<f64>,
    /// `G / exp(log_scale)`.
    pub g: DMatrix<f64>,
    pub log_scale: f64,
    pub a: DMatrix<f64>,
    /// Last `(iteration, index)` absorbed into per-batch accumulators.
    pub last_processed: Option<(usize, usize)>,
}

impl AdaptationState {
    pub fn new(noise_dim: usize, basis_len: usize) -> Self {
        Self {
            f: DMatrix::zeros(noise_dim, basis_len),
            g: DMatrix::zeros(basis_len, basis_len),
            log_scale: f64::NEG_INFINITY,
            a: DMatrix::zeros(noise_dim, basis_len),
            last_processed: None,
        }
    }
}

/// Ridge policy for ill-conditioned `G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    /// Largest condition number solved without a ridge.
    pub condition_limit: f64,
    /// Ridge `lambda = ridge * trace(G) / l` applied beyond the limit.
    pub ridge: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            condition_limit: 1e12,
            ridge: 1e-8,
        }
    }
}

/// `A = F (G + lambda I)^{-1}`, solved independently on each diagonal block
/// of `G`. Blocks with numerically zero `G` keep their previous columns.
pub fn solve_params(
    state: &AdaptationState,
    regularization: &Regularization,
    blocks: &[Range<usize>],
) -> DMatrix<f64> {
    let mut a = state.a.clone();
    for block in blocks {
        let size = block.len();
        let g = state.g.view((block.start, block.start), (size, size)).into_owned();
        let f = state.f.columns(block.start, size).into_owned();
        match solve_block(&f, &g, regularization) {
            Some(sol) => a.columns_mut(block.start, size).copy_from(&sol),
            None => log::debug!(
                "G block {:?} is numerically zero or singular; keeping previous parameters",
                block
            ),
        }
    }
    a
}

fn solve_block(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    reg: &Regularization,
) -> Option<DMatrix<f64>> {
    let l = g.nrows();
    let trace = g.trace();
    if !(trace.is_finite() && trace > 0.0) || f.iter().any(|v| !v.is_finite())
    {
        return None;
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let lambda = if cond < reg.condition_limit {
        0.0
    } else {
        log::debug!("G condition estimate {cond:e}; applying ridge");
        reg.ridge * trace / l as f64
    };
    let mut m = sym;
    for i in 0..l {
        m[(i, i)] += lambda;
    }
    // A (G + lambda I) = F  <=>  (G + lambda I) A^T = F^T.
    let rhs = f.transpose();
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.lu().solve(&rhs)?,
    };
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol.transpose())
    } else {
        None
    }
}

/// How adaptation traverses the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptMode {
    /// Re-sums every retained sample at its current weight on each call.
    FullRecompute,
    /// Keeps one accumulator per batch and combines them with the batch
    /// weights; valid only when weights are constant within a batch.
    Incremental,
}

/// Path-integral adapter for the control class `u = A g`.
///
/// Per-sample path integrals are captured when a batch is absorbed, so the
/// paths themselves need not outlive generation.
#[derive(Debug, Clone)]
pub struct PathIntegralAdapter {
    basis: BasisFunction,
    noise_dim: usize,
    state_dim: usize,
    mode: AdaptMode,
    regularization: Regularization,
    clamp: Option<f64>,
    state: AdaptationState,
    /// FullRecompute: per-sample integrals of every absorbed batch.
    samples: Vec<Vec<PathIntegrals>>,
    /// Incremental: per-batch sums of `h dQ/dP` times the integrals.
    batches: Vec<ScaledSums>,
    /// Incremental: unweighted total over batches `first..upto` (0-based),
    /// reused while the retained batches form a suffix with one weight.
    suffix: Option<(usize, usize, ScaledSums)>,
}

impl PathIntegralAdapter {
    pub fn new(basis: BasisFunction, noise_dim: usize, state_dim: usize, mode: AdaptMode) -> Self {
        let l = basis.len(state_dim);
        Self {
            basis,
            noise_dim,
            state_dim,
            mode,
            regularization: Regularization::default(),
            clamp: None,
            state: AdaptationState::new(noise_dim, l),
            samples: Vec::new(),
            batches: Vec::new(),
            suffix: None,
        }
    }

    pub fn with_regularization(mut self, regularization: Regularization) -> Self {
        self.regularization = regularization;
        self
    }

    pub fn with_clamp(mut self, bound: Option<f64>) -> Self {
        self.clamp = bound;
        self
    }

    pub fn basis(&self) -> &BasisFunction {
        &self.basis
    }

    pub fn mode(&self) -> AdaptMode {
        self.mode
    }

    pub fn state(&self) -> &AdaptationState {
        &self.state
    }

    fn control(&self) -> FeedbackControl {
        FeedbackControl::new(self.basis.clone(), self.state.a.clone(), self.state_dim)
            .expect("parameter shape fixed at construction")
            .with_clamp(self.clamp)
    }

    /// Control for the current parameters; `u = 0` before any adaptation.
    pub fn current_control(&self) -> FeedbackControl {
        self.control()
    }

    pub fn absorbed_batches(&self) -> usize {
        match self.mode {
            AdaptMode::FullRecompute => self.samples.len(),
            AdaptMode::Incremental => self.batches.len(),
        }
    }

    /// Records batch `k` from precomputed integrals (one per sample, in order).
    pub fn absorb_integrals(
        &mut self,
        k: usize,
        samples: &[WeightedSample],
        integrals: Vec<PathIntegrals>,
    ) -> Result<()> {
        if k != self.absorbed_batches() + 1 {
            return Err(AmisError::Structural(format!(
                "batch {k} absorbed after {} batches",
                self.absorbed_batches()
            )));
        }
        if samples.len() != integrals.len() {
            return Err(AmisError::Structural(
                "one path integral is needed per sample".into(),
            ));
        }
        let l = self.basis.len(self.state_dim);
        if let Some(p) = integrals.first() {
            if p.f.shape() != (self.noise_dim, l) {
                return Err(AmisError::Structural(
                    "path integrals do not match the adaptation basis".into(),
                ));
            }
        }
        match self.mode {
            AdaptMode::FullRecompute => self.samples.push(integrals),
            AdaptMode::Incremental => {
                let sums = ScaledSums::from_terms(
                    self.noise_dim,
                    l,
                    samples.iter().map(WeightedSample::log_term).zip(&integrals),
                );
                self.batches.push(sums);
            }
        }
        self.state.last_processed = samples.last().map(|s| (s.iteration(), s.index()));
        Ok(())
    }

    /// Records batch `k` from its stored paths.
    pub fn absorb_batch(&mut self, k: usize, samples: &[WeightedSample]) -> Result<()> {
        let integrals = samples
            .iter()
            .map(|s| {
                let path = s.path().ok_or(AmisError::MissingIncrements)?;
                path_integrals(path, &self.basis)
            })
            .collect::<Result<Vec<_>>>()?;
        self.absorb_integrals(k, samples, integrals)
    }

    fn incremental_sums(&mut self, store: &SampleStore, l: usize) -> Result<ScaledSums> {
        let mut log_ws = Vec::with_capacity(store.num_batches());
        for b in store.batches() {
            let log_w = b.samples()[0].log_w();
            if b.samples().iter().any(|s| s.log_w() != log_w) {
                return Err(AmisError::Configuration(
                    "incremental adaptation needs weights constant within each batch".into(),
                ));
            }
            log_ws.push(log_w);
        }
        let first = log_ws
            .iter()
            .position(|&lw| lw > f64::NEG_INFINITY)
            .unwrap_or(log_ws.len());
        let common = log_ws.get(first).copied();
        let is_suffix = log_ws[first..].iter().all(|&lw| Some(lw) == common);
        let Some(common) = common.filter(|_| is_suffix) else {
            let mut acc = ScaledSums::zeros(self.noise_dim, l);
            for (sums, &lw) in self.batches.iter().zip(&log_ws) {
                acc.add_scaled(sums, lw);
            }
            return Ok(acc);
        };
        let k = log_ws.len();
        let (mut start, mut acc) = match self.suffix.take() {
            Some((f, upto, acc)) if f == first && upto <= k => (upto, acc),
            _ => (first, ScaledSums::zeros(self.noise_dim, l)),
        };
        while start < k {
            acc.add_scaled(&self.batches[start], 0.0);
            start += 1;
        }
        let mut out = acc.clone();
        out.log_scale += common;
        self.suffix = Some((first, k, acc));
        Ok(out)
    }

    /// Solves for the next control from the store at its current weights.
    /// Batches not absorbed yet are absorbed from their stored paths.
    pub fn adapt(&mut self, store: &SampleStore) -> Result<FeedbackControl> {
        for k in self.absorbed_batches() + 1..=store.num_batches() {
            self.absorb_batch(k, store.batch(k).samples())?;
        }
        if store.is_empty() {
            return Ok(self.control());
        }
        let l = self.basis.len(self.state_dim);
        let sums = match self.mode {
            AdaptMode::FullRecompute => ScaledSums::from_terms(
                self.noise_dim,
                l,
                store
                    .batches()
                    .iter()
                    .zip(&self.samples)
                    .flat_map(|(b, ints)| {
                        b.samples().iter().map(WeightedSample::log_weighted_term).zip(ints)
                    }),
            ),
            AdaptMode::Incremental => self.incremental_sums(store, l)?,
        };
        self.state.f = sums.f;
        self.state.g = sums.g;
        self.state.log_scale = sums.log_scale;
        if sums.log_scale == f64::NEG_INFINITY {
            log::debug!("all adaptation weights are zero; keeping previous parameters");
        } else {
            self.state.a = solve_params(
                &self.state,
                &self.regularization,
                &self.basis.blocks(self.state_dim),
            );
        }
        Ok(self.control())
    }
}
