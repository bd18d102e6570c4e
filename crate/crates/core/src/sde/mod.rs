//! Controlled diffusions: problem definition, feedback controls, Euler-Maruyama
//! simulation and Girsanov weights.

mod control;
mod path;
mod problem;
mod weights;

pub use control::{BasisFunction, FeedbackControl};
pub use path::{replay_states, simulate_keyed, simulate_path, SamplePath};
pub use problem::{
    Diffusion, DiffusionProblem, Drift, PathFunctional, RunningCost, TargetFunctional,
    TerminalCost, VectorField,
};
pub use weights::{cross_log_ratio, girsanov_log_weight, path_cost};
pub(crate) use weights::{generated_weights, log_ratio_from_generator};
