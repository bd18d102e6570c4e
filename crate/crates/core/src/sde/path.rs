use std::sync::Arc;

use crate::error::{AmisError, Result};
use crate::rng::{NoiseSource, SampleStream, StreamKey};
use crate::sde::{Diffusion, DiffusionProblem, Drift, FeedbackControl};

/// Discretized trajectory together with the Brownian increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    times: Arc<[f64]>,
    dt: f64,
    state_dim: usize,
    noise_dim: usize,
    /// `(num_steps + 1) x d`, row per grid time.
    states: Vec<f64>,
    /// `num_steps x m`; `None` once stripped.
    increments: Option<Vec<f64>>,
    /// `num_steps x m` control values actually applied at each step.
    applied: Vec<f64>,
    iteration: usize,
    sample: usize,
}

impl SamplePath {
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.num_steps())
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn increments(&self) -> Result<&[f64]> {
        self.increments
            .as_deref()
            .ok_or(AmisError::MissingIncrements)
    }

    pub fn increment(&self, i: usize) -> Result<&[f64]> {
        let m = self.noise_dim;
        self.increments().map(|w| &w[i * m..(i + 1) * m])
    }

    /// Control value `u(t_i, X_i)` used by the generating proposal at step `i`.
    pub fn applied_control(&self, i: usize) -> &[f64] {
        let m = self.noise_dim;
        &self.applied[i * m..(i + 1) * m]
    }

    pub fn has_increments(&self) -> bool {
        self.increments.is_some()
    }

    /// Drops the stored increments (re-weighting against other proposals is
    /// impossible afterwards).
    pub fn strip_increments(&mut self) {
        self.increments = None;
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn sample(&self) -> usize {
        self.sample
    }

    /// Sum of all increments, `W_T - W_0`, per noise component.
    pub fn total_increment(&self) -> Result<Vec<f64>> {
        let m = self.noise_dim;
        let inc = self.increments()?;
        let mut total = vec![0.0; m];
        for step in inc.chunks_exact(m) {
            for (t, w) in total.iter_mut().zip(step) {
                *t += w;
            }
        }
        Ok(total)
    }

    pub(crate) fn check_control(&self, control: &FeedbackControl) -> Result<()> {
        if control.noise_dim() != self.noise_dim || control.state_dim() != self.state_dim {
            return Err(AmisError::Structural(format!(
                "control acts on (d={}, m={}) but path has (d={}, m={})",
                control.state_dim(),
                control.noise_dim(),
                self.state_dim,
                self.noise_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn check_problem(&self, problem: &DiffusionProblem) -> Result<()> {
        if problem.num_steps() != self.num_steps()
            || problem.state_dim() != self.state_dim
            || problem.noise_dim() != self.noise_dim
            || problem.dt() != self.dt
        {
            return Err(AmisError::Structural(format!(
                "path grid ({} steps of {}, d={}, m={}) does not match problem ({} steps of {}, d={}, m={})",
                self.num_steps(),
                self.dt,
                self.state_dim,
                self.noise_dim,
                problem.num_steps(),
                problem.dt(),
                problem.state_dim(),
                problem.noise_dim()
            )));
        }
        Ok(())
    }
}

/// Scratch buffers for one Euler-Maruyama integration.
struct StepBuffers {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    features: Vec<f64>,
    control: Vec<f64>,
    kick: Vec<f64>,
}

impl StepBuffers {
    fn new(problem: &DiffusionProblem, control: &FeedbackControl) -> Self {
        let d = problem.state_dim();
        let m = problem.noise_dim();
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * m],
            features: vec![0.0; control.basis_len()],
            control: vec![0.0; m],
            kick: vec![0.0; m],
        }
    }
}

/// `X_{i+1} = X_i + mu dt + sigma (u dt + dW)` with `x` updated in place.
#[inline]
fn euler_step(
    problem: &DiffusionProblem,
    control: &FeedbackControl,
    t: f64,
    x: &mut [f64],
    dw: &[f64],
    buf: &mut StepBuffers,
) {
    let dt = problem.dt();
    control.eval_with(t, x, &mut buf.features, &mut buf.control);
    for ((k, u), w) in buf.kick.iter_mut().zip(&buf.control).zip(dw) {
        *k = u * dt + w;
    }
    let has_drift = match problem.drift() {
        Drift::Zero => false,
        Drift::Field(f) => {
            f(t, x, &mut buf.drift);
            true
        }
    };
    match problem.diffusion() {
        Diffusion::Identity => {
            for (xi, k) in x.iter_mut().zip(&buf.kick) {
                *xi += k;
            }
        }
        Diffusion::Constant(s) => {
            for (r, xi) in x.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, k) in buf.kick.iter().enumerate() {
                    acc += s[(r, c)] * k;
                }
                *xi += acc;
            }
        }
        Diffusion::Field(f) => {
            let m = buf.kick.len();
            f(t, x, &mut buf.sigma);
            for (r, xi) in x.iter_mut().enumerate() {
                let row = &buf.sigma[r * m..(r + 1) * m];
                *xi += row.iter().zip(&buf.kick).map(|(s, k)| s * k).sum::<f64>();
            }
        }
    }
    if has_drift {
        for (xi, mu) in x.iter_mut().zip(&buf.drift) {
            *xi += mu * dt;
        }
    }
}

/// Simulates one path of `dX = mu dt + sigma (u dt + dW)` by Euler-Maruyama.
pub fn simulate_path<N: NoiseSource>(
    problem: &DiffusionProblem,
    control: &FeedbackControl,
    noise: &mut N,
    iteration: usize,
    sample: usize,
) -> Result<SamplePath> {
    problem.validate()?;
    let d = problem.state_dim();
    let m = problem.noise_dim();
    let steps = problem.num_steps();
    if control.noise_dim() != m || control.state_dim() != d {
        return Err(AmisError::Structural(format!(
            "control acts on (d={}, m={}) but problem has (d={d}, m={m})",
            control.state_dim(),
            control.noise_dim()
        )));
    }
    let sqrt_dt = problem.dt().sqrt();
    let mut increments = vec![0.0; steps * m];
    for w in increments.iter_mut() {
        *w = sqrt_dt * noise.standard_normal();
    }
    let (states, applied) = integrate(problem, control, &increments)?;
    Ok(SamplePath {
        times: Arc::clone(problem.grid()),
        dt: problem.dt(),
        state_dim: d,
        noise_dim: m,
        states,
        increments: Some(increments),
        applied,
        iteration,
        sample,
    })
}

/// Simulates with the keyed counter-based stream of sample `(k, n)`.
pub fn simulate_keyed(
    problem: &DiffusionProblem,
    control: &FeedbackControl,
    key: StreamKey,
) -> Result<SamplePath> {
    let mut stream = SampleStream::new(key);
    simulate_path(
        problem,
        control,
        &mut stream,
        key.iteration as usize,
        key.sample as usize,
    )
}

/// Re-runs the Euler-Maruyama recursion from `x0` with recorded increments.
pub fn replay_states(
    problem: &DiffusionProblem,
    control: &FeedbackControl,
    increments: &[f64],
) -> Result<Vec<f64>> {
    problem.validate()?;
    if increments.len() != problem.num_steps() * problem.noise_dim() {
        return Err(AmisError::Structural(format!(
            "expected {} increments, got {}",
            problem.num_steps() * problem.noise_dim(),
            increments.len()
        )));
    }
    integrate(problem, control, increments).map(|(states, _)| states)
}

fn integrate(
    problem: &DiffusionProblem,
    control: &FeedbackControl,
    increments: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = problem.state_dim();
    let m = problem.noise_dim();
    let steps = problem.num_steps();
    let grid = problem.grid();
    let mut states = Vec::with_capacity((steps + 1) * d);
    states.extend_from_slice(problem.initial_state());
    let mut applied = Vec::with_capacity(steps * m);
    let mut x = problem.initial_state().to_vec();
    let mut buf = StepBuffers::new(problem, control);
    for i in 0..steps {
        euler_step(
            problem,
            control,
            grid[i],
            &mut x,
            &increments[i * m..(i + 1) * m],
            &mut buf,
        );
        applied.extend_from_slice(&buf.control);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AmisError::NonFiniteState {
                step: i + 1,
                time: grid[i + 1],
            });
        }
        states.extend_from_slice(&x);
    }
    Ok((states, applied))
}
