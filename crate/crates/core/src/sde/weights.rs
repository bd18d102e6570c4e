//! Girsanov log-weights and path costs, all on the simulation grid with
//! left-endpoint (Ito) stochastic integrals.

use crate::error::{AmisError, Result};
use crate::sde::{DiffusionProblem, FeedbackControl, SamplePath, TargetFunctional};

/// `log dQ/dP^u` of a path generated under `control`:
/// `-sum u_i . dW_i - 1/2 sum |u_i|^2 dt`.
pub fn girsanov_log_weight(path: &SamplePath, control: &FeedbackControl) -> Result<f64> {
    log_ratio_along(path, control, None)
}

/// `log dP^{other}/dP^{sampled}` along a path drawn from `sampled`:
/// `sum (v_i - u_i) . dW_i - 1/2 sum |v_i - u_i|^2 dt`.
///
/// The stored increments are first expressed in the Brownian motion of
/// `sampled` (`dB = dW + (u_gen - u) dt`), which is a no-op when `sampled`
/// generated the path. The result is then exactly antisymmetric in the two
/// controls for any path.
pub fn cross_log_ratio(
    path: &SamplePath,
    control_sampled: &FeedbackControl,
    control_other: &FeedbackControl,
) -> Result<f64> {
    log_ratio_along(path, control_sampled, Some(control_other))
}

fn log_ratio_along(
    path: &SamplePath,
    sampled: &FeedbackControl,
    other: Option<&FeedbackControl>,
) -> Result<f64> {
    path.check_control(sampled)?;
    if let Some(o) = other {
        path.check_control(o)?;
    }
    let increments = path.increments()?;
    let m = path.noise_dim();
    let dt = path.dt();
    let times = path.times();

    let mut g_s = vec![0.0; sampled.basis_len()];
    let mut u_s = vec![0.0; m];
    let mut g_o = vec![0.0; other.map_or(0, |o| o.basis_len())];
    let mut u_o = vec![0.0; m];

    let mut stochastic = 0.0;
    let mut quadratic = 0.0;
    for i in 0..path.num_steps() {
        let x = path.state(i);
        sampled.eval_with(times[i], x, &mut g_s, &mut u_s);
        if let Some(o) = other {
            o.eval_with(times[i], x, &mut g_o, &mut u_o);
        }
        let dw = &increments[i * m..(i + 1) * m];
        let applied = path.applied_control(i);
        for j in 0..m {
            let db = dw[j] + (applied[j] - u_s[j]) * dt;
            let diff = u_o[j] - u_s[j];
            stochastic += diff * db;
            quadratic += diff * diff;
        }
    }
    Ok(stochastic - 0.5 * quadratic * dt)
}

/// [`cross_log_ratio`] from the generating control to `other`, reading the
/// generating control from the values recorded during simulation.
pub(crate) fn log_ratio_from_generator(path: &SamplePath, other: &FeedbackControl) -> Result<f64> {
    path.check_control(other)?;
    let increments = path.increments()?;
    let m = path.noise_dim();
    let dt = path.dt();
    let times = path.times();
    let mut g = vec![0.0; other.basis_len()];
    let mut v = vec![0.0; m];
    let mut stochastic = 0.0;
    let mut quadratic = 0.0;
    for i in 0..path.num_steps() {
        other.eval_with(times[i], path.state(i), &mut g, &mut v);
        let dw = &increments[i * m..(i + 1) * m];
        for ((vj, uj), wj) in v.iter().zip(path.applied_control(i)).zip(dw) {
            let diff = vj - uj;
            stochastic += diff * wj;
            quadratic += diff * diff;
        }
    }
    Ok(stochastic - 0.5 * quadratic * dt)
}

/// Path cost `S = Qc(X_T) + sum [R + 1/2 |u|^2] dt + sum u . dW`, so that
/// `exp(-S) = h(X) dQ/dP^u`.
pub fn path_cost(
    path: &SamplePath,
    control: &FeedbackControl,
    problem: &DiffusionProblem,
) -> Result<f64> {
    let (running, terminal) = match problem.target() {
        TargetFunctional::Cost { running, terminal } => (running, terminal),
        TargetFunctional::Path(_) => return Err(AmisError::UnsupportedForm),
    };
    path.check_problem(problem)?;
    path.check_control(control)?;
    let increments = path.increments()?;
    let m = path.noise_dim();
    let dt = path.dt();
    let times = path.times();

    let mut g = vec![0.0; control.basis_len()];
    let mut u = vec![0.0; m];
    let mut integral = 0.0;
    let mut stochastic = 0.0;
    for i in 0..path.num_steps() {
        let x = path.state(i);
        control.eval_with(times[i], x, &mut g, &mut u);
        let r = running.as_ref().map_or(0.0, |r| r(times[i], x));
        let energy: f64 = u.iter().map(|v| v * v).sum();
        integral += (r + 0.5 * energy) * dt;
        let dw = &increments[i * m..(i + 1) * m];
        let applied = path.applied_control(i);
        for j in 0..m {
            stochastic += u[j] * (dw[j] + (applied[j] - u[j]) * dt);
        }
    }
    Ok(terminal(path.final_state()) + integral + stochastic)
}

/// Per-sample quantities recorded at generation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GeneratedWeights {
    pub log_h: f64,
    pub log_dqdp: f64,
    pub cost: Option<f64>,
}

/// One pass over a freshly generated path using the control values recorded
/// during simulation. Produces bit-identical results to
/// [`girsanov_log_weight`] and [`path_cost`] with the generating control.
pub(crate) fn generated_weights(
    path: &SamplePath,
    problem: &DiffusionProblem,
) -> Result<GeneratedWeights> {
    path.check_problem(problem)?;
    let increments = path.increments()?;
    let m = path.noise_dim();
    let dt = path.dt();
    let times = path.times();
    let running = match problem.target() {
        TargetFunctional::Cost { running, .. } => running.as_ref(),
        TargetFunctional::Path(_) => None,
    };

    let mut girsanov_stochastic = 0.0;
    let mut quadratic = 0.0;
    let mut cost_integral = 0.0;
    let mut cost_stochastic = 0.0;
    for i in 0..path.num_steps() {
        let dw = &increments[i * m..(i + 1) * m];
        let u = path.applied_control(i);
        let mut energy = 0.0;
        for j in 0..m {
            let db = dw[j] + (u[j] - u[j]) * dt;
            let diff = 0.0 - u[j];
            girsanov_stochastic += diff * db;
            quadratic += diff * diff;
            energy += u[j] * u[j];
            cost_stochastic += u[j] * (dw[j] + (u[j] - u[j]) * dt);
        }
        let r = running.map_or(0.0, |r| r(times[i], path.state(i)));
        cost_integral += (r + 0.5 * energy) * dt;
    }
    let log_dqdp = girsanov_stochastic - 0.5 * quadratic * dt;
    let log_h = problem.log_h(path)?;
    let cost = match problem.target() {
        TargetFunctional::Cost { terminal, .. } => {
            Some(terminal(path.final_state()) + cost_integral + cost_stochastic)
        }
        TargetFunctional::Path(_) => None,
    };
    Ok(GeneratedWeights {
        log_h,
        log_dqdp,
        cost,
    })
}
