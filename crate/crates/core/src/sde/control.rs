use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{AmisError, Result};

/// Feature map `g(t, x)` of a linearly parametrized control `u = A g`.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisFunction {
    /// `g = 1`: open-loop constant control.
    Constant,
    /// `g = (1, x)`: linear feedback.
    Affine,
    /// `inner` repeated over `num_intervals` equal slices of `[0, horizon]`;
    /// only the block of the active slice is nonzero.
    PiecewiseConstantTime {
        inner: Box<BasisFunction>,
        num_intervals: usize,
        horizon: f64,
    },
}

impl BasisFunction {
    pub fn piecewise(inner: BasisFunction, num_intervals: usize, horizon: f64) -> Result<Self> {
        if num_intervals == 0 {
            return Err(AmisError::Configuration(
                "piecewise basis needs at least one interval".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(AmisError::Configuration(format!(
                "piecewise basis needs a positive horizon, got {horizon}"
            )));
        }
        Ok(BasisFunction::PiecewiseConstantTime {
            inner: Box::new(inner),
            num_intervals,
            horizon,
        })
    }

    /// Feature dimension `l` for a state of dimension `state_dim`.
    pub fn len(&self, state_dim: usize) -> usize {
        match self {
            BasisFunction::Constant => 1,
            BasisFunction::Affine => 1 + state_dim,
            BasisFunction::PiecewiseConstantTime {
                inner,
                num_intervals,
                ..
            } => inner.len(state_dim) * num_intervals,
        }
    }

    /// Writes `g(t, x)` into `out` (length `self.len(x.len())`).
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            BasisFunction::Constant => out[0] = 1.0,
            BasisFunction::Affine => {
                out[0] = 1.0;
                out[1..].copy_from_slice(x);
            }
            BasisFunction::PiecewiseConstantTime {
                inner,
                num_intervals,
                horizon,
            } => {
                let width = inner.len(x.len());
                let j = interval_index(t, *horizon, *num_intervals);
                out.fill(0.0);
                inner.eval_into(t, x, &mut out[j * width..(j + 1) * width]);
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len(x.len())];
        self.eval_into(t, x, &mut out);
        out
    }

    /// Index ranges of the diagonal blocks of `sum g g^T`. Features in
    /// different blocks are never simultaneously nonzero.
    pub fn blocks(&self, state_dim: usize) -> Vec<Range<usize>> {
        match self {
            BasisFunction::PiecewiseConstantTime {
                inner,
                num_intervals,
                ..
            } => {
                let width = inner.len(state_dim);
                (0..*num_intervals)
                    .map(|j| j * width..(j + 1) * width)
                    .collect()
            }
            _ => vec![0..self.len(state_dim)],
        }
    }
}

fn interval_index(t: f64, horizon: f64, num_intervals: usize) -> usize {
    // Grid times are multiples of dt; nudge so t = j T / P lands in slice j.
    let pos = (t / horizon * num_intervals as f64 + 1e-9).floor();
    if pos <= 0.0 {
        0
    } else {
        (pos as usize).min(num_intervals - 1)
    }
}

/// Linearly parametrized feedback control `u(t, x) = A g(t, x)`, optionally
/// clamped componentwise to `[-C, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackControl {
    basis: BasisFunction,
    params: DMatrix<f64>,
    state_dim: usize,
    clamp: Option<f64>,
}

impl FeedbackControl {
    pub fn new(basis: BasisFunction, params: DMatrix<f64>, state_dim: usize) -> Result<Self> {
        let l = basis.len(state_dim);
        if params.ncols() != l || params.nrows() == 0 {
            return Err(AmisError::Structural(format!(
                "control parameters are {}x{}, basis needs m x {l}",
                params.nrows(),
                params.ncols()
            )));
        }
        Ok(Self {
            basis,
            params,
            state_dim,
            clamp: None,
        })
    }

    /// `u = 0`.
    pub fn zero(basis: BasisFunction, noise_dim: usize, state_dim: usize) -> Self {
        let l = basis.len(state_dim);
        Self {
            basis,
            params: DMatrix::zeros(noise_dim, l),
            state_dim,
            clamp: None,
        }
    }

    /// Open-loop constant control `u = value`.
    pub fn constant(value: &[f64], state_dim: usize) -> Self {
        Self {
            basis: BasisFunction::Constant,
            params: DMatrix::from_column_slice(value.len(), 1, value),
            state_dim,
            clamp: None,
        }
    }

    pub fn with_clamp(mut self, bound: Option<f64>) -> Self {
        self.clamp = bound;
        self
    }

    pub fn basis(&self) -> &BasisFunction {
        &self.basis
    }

    pub fn params(&self) -> &DMatrix<f64> {
        &self.params
    }

    pub fn noise_dim(&self) -> usize {
        self.params.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn basis_len(&self) -> usize {
        self.params.ncols()
    }

    pub fn clamp_bound(&self) -> Option<f64> {
        self.clamp
    }

    /// Evaluates `u(t, x)` into `u`, leaving the features `g(t, x)` in `g`.
    #[inline]
    pub fn eval_with(&self, t: f64, x: &[f64], g: &mut [f64], u: &mut [f64]) {
        let m = self.params.nrows();
        self.basis.eval_into(t, x, g);
        let a = self.params.as_slice();
        u.fill(0.0);
        for (c, &gc) in g.iter().enumerate() {
            if gc == 0.0 {
                continue;
            }
            let col = &a[c * m..(c + 1) * m];
            for (ur, &arc) in u.iter_mut().zip(col) {
                *ur += arc * gc;
            }
        }
        if let Some(bound) = self.clamp {
            for ur in u.iter_mut() {
                *ur = ur.clamp(-bound, bound);
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.basis_len()];
        let mut u = vec![0.0; self.noise_dim()];
        self.eval_with(t, x, &mut g, &mut u);
        u
    }

    /// Same basis and clamp, different parameters.
    pub fn with_params(&self, params: DMatrix<f64>) -> Result<Self> {
        Self::new(self.basis.clone(), params, self.state_dim).map(|c| c.with_clamp(self.clamp))
    }
}
