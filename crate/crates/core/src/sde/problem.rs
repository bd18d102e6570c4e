use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{AmisError, Result};
use crate::sde::SamplePath;

/// `f(t, x, out)` writing a vector (drift) or a row-major matrix (diffusion).
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Functional of a whole path, `h(X)`.
pub type PathFunctional = Arc<dyn Fn(&SamplePath) -> f64 + Send + Sync>;
/// Running cost `R(t, x)`.
pub type RunningCost = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Terminal cost `Qc(x)`.
pub type TerminalCost = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Drift {
    Zero,
    Field(VectorField),
}

#[derive(Clone)]
pub enum Diffusion {
    /// `sigma = I`; requires `state_dim == noise_dim`.
    Identity,
    /// Constant `d x m` matrix.
    Constant(DMatrix<f64>),
    /// State dependent; the field writes `d * m` entries in row-major order.
    Field(VectorField),
}

/// What is being estimated: `psi = E_Q[h(X)]`.
#[derive(Clone)]
pub enum TargetFunctional {
    /// Generic path functional.
    Path(PathFunctional),
    /// `h = exp(-sum R dt - Qc(X_T))`.
    Cost {
        running: Option<RunningCost>,
        terminal: TerminalCost,
    },
}

impl TargetFunctional {
    pub fn path<F>(f: F) -> Self
    where
        F: Fn(&SamplePath) -> f64 + Send + Sync + 'static,
    {
        TargetFunctional::Path(Arc::new(f))
    }

    pub fn terminal_cost<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TargetFunctional::Cost {
            running: None,
            terminal: Arc::new(f),
        }
    }

    pub fn cost<R, Q>(running: R, terminal: Q) -> Self
    where
        R: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        Q: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TargetFunctional::Cost {
            running: Some(Arc::new(running)),
            terminal: Arc::new(terminal),
        }
    }
}

/// Target diffusion `dX = mu dt + sigma dW` on `[0, T]` together with the
/// functional `h` whose expectation is sought.
#[derive(Clone)]
pub struct DiffusionProblem {
    state_dim: usize,
    noise_dim: usize,
    horizon: f64,
    num_steps: usize,
    initial_state: Vec<f64>,
    drift: Drift,
    diffusion: Diffusion,
    target: TargetFunctional,
    grid: Arc<[f64]>,
}

impl fmt::Debug for DiffusionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionProblem")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .field("num_steps", &self.num_steps)
            .field("initial_state", &self.initial_state)
            .field("cost_form", &self.has_cost_form())
            .finish()
    }
}

impl DiffusionProblem {
    /// Driftless problem with identity diffusion (`d == m`).
    pub fn new(
        state_dim: usize,
        noise_dim: usize,
        horizon: f64,
        num_steps: usize,
        initial_state: Vec<f64>,
        target: TargetFunctional,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(AmisError::Configuration(
                "state and noise dimensions must be positive".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(AmisError::Configuration(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if num_steps == 0 {
            return Err(AmisError::Configuration("num_steps must be positive".into()));
        }
        if initial_state.len() != state_dim {
            return Err(AmisError::Configuration(format!(
                "initial state has length {}, expected {state_dim}",
                initial_state.len()
            )));
        }
        let dt = horizon / num_steps as f64;
        let grid: Arc<[f64]> = (0..=num_steps).map(|i| i as f64 * dt).collect();
        Ok(Self {
            state_dim,
            noise_dim,
            horizon,
            num_steps,
            initial_state,
            drift: Drift::Zero,
            diffusion: Diffusion::Identity,
            target,
            grid,
        })
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion) -> Result<Self> {
        if let Diffusion::Constant(ref s) = diffusion {
            if s.nrows() != self.state_dim || s.ncols() != self.noise_dim {
                return Err(AmisError::Configuration(format!(
                    "diffusion matrix is {}x{}, expected {}x{}",
                    s.nrows(),
                    s.ncols(),
                    self.state_dim,
                    self.noise_dim
                )));
            }
        }
        self.diffusion = diffusion;
        Ok(self)
    }

    pub fn with_target(mut self, target: TargetFunctional) -> Self {
        self.target = target;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if matches!(self.diffusion, Diffusion::Identity) && self.state_dim != self.noise_dim {
            return Err(AmisError::Configuration(format!(
                "identity diffusion needs state_dim == noise_dim ({} != {})",
                self.state_dim, self.noise_dim
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.num_steps as f64
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn grid(&self) -> &Arc<[f64]> {
        &self.grid
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    pub fn target(&self) -> &TargetFunctional {
        &self.target
    }

    pub fn has_cost_form(&self) -> bool {
        matches!(self.target, TargetFunctional::Cost { .. })
    }

    /// `log h(path)`; `-inf` when `h = 0`.
    pub fn log_h(&self, path: &SamplePath) -> Result<f64> {
        match &self.target {
            TargetFunctional::Path(h) => {
                let v = h(path);
                if v < 0.0 {
                    return Err(AmisError::NegativeFunctional(v));
                }
                Ok(v.ln())
            }
            TargetFunctional::Cost { running, terminal } => {
                let running = match running {
                    Some(r) => self.running_cost_integral(r, path),
                    None => 0.0,
                };
                Ok(-running - terminal(path.final_state()))
            }
        }
    }

    /// `h(path)` in the linear domain.
    pub fn h(&self, path: &SamplePath) -> Result<f64> {
        match &self.target {
            TargetFunctional::Path(h) => Ok(h(path)),
            TargetFunctional::Cost { .. } => self.log_h(path).map(f64::exp),
        }
    }

    /// Left-endpoint quadrature of the running cost along the path grid.
    pub(crate) fn running_cost_integral(&self, running: &RunningCost, path: &SamplePath) -> f64 {
        let dt = path.dt();
        (0..path.num_steps())
            .map(|i| running(path.times()[i], path.state(i)) * dt)
            .sum()
    }
}
