//! Benchmark problems with closed-form answers.

use crate::error::Result;
use crate::sde::{DiffusionProblem, TargetFunctional};

/// Standard Brownian motion in `R^d` on `[0, 1]` from the origin with
/// `h = exp(-1/2 |X_1 - z|^2)` (terminal cost `Qc(x) = 1/2 |x - z|^2`).
pub fn gaussian_target(z: Vec<f64>, num_steps: usize) -> Result<DiffusionProblem> {
    let d = z.len();
    let target = TargetFunctional::terminal_cost(move |x: &[f64]| {
        0.5 * x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    });
    DiffusionProblem::new(d, d, 1.0, num_steps, vec![0.0; d], target)
}

/// `E_Q[h] = prod_i 2^{-1/2} exp(-z_i^2 / 4)` for [`gaussian_target`].
pub fn gaussian_target_psi(z: &[f64]) -> f64 {
    z.iter()
        .map(|zi| std::f64::consts::FRAC_1_SQRT_2 * (-zi * zi / 4.0).exp())
        .product()
}

/// The optimal open-loop constant control for [`gaussian_target`] is `z / 2`.
pub fn gaussian_target_optimal_constant(z: &[f64]) -> Vec<f64> {
    z.iter().map(|zi| zi / 2.0).collect()
}

/// Reference per-sample ESS rate `(3/4)^d` for the constant basis.
pub fn gaussian_target_constant_ess_rate(d: usize) -> f64 {
    0.75f64.powi(d as i32)
}

/// Exact per-sample ESS `(sqrt(3)/2)^d` of the optimal constant control
/// `z / 2`: per coordinate `(E y)^2 / E y^2 = sqrt(3) / 2`, independent of
/// `z`.
pub fn gaussian_target_optimal_constant_ess(d: usize) -> f64 {
    (3f64.sqrt() / 2.0).powi(d as i32)
}

/// Single Euler step of a 1-D Brownian motion on `[0, 1]` with
/// `h(x) = exp(-x^2 / 2)`. Under the constant control `u` the end point is
/// distributed as `N(u, 1)`; `E_Q[h] = 1/sqrt(2)`.
pub fn one_step_gaussian() -> Result<DiffusionProblem> {
    let target = TargetFunctional::terminal_cost(|x: &[f64]| 0.5 * x[0] * x[0]);
    DiffusionProblem::new(1, 1, 1.0, 1, vec![0.0], target)
}

pub const ONE_STEP_GAUSSIAN_PSI: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_value() {
        let psi = gaussian_target_psi(&[2.0, 2.0, 2.0]);
        let expected = 2f64.powf(-1.5) * (-3.0f64).exp();
        assert!((psi - expected).abs() < 1e-15);
        assert!((psi - 0.017603).abs() < 1e-6);
    }

    #[test]
    fn ess_rate() {
        assert_eq!(gaussian_target_constant_ess_rate(3), 0.421875);
    }
}
