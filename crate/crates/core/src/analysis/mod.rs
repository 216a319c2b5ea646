//! The model-return gap bound, estimators for its inputs, and
//! diagnostics over evaluation-return series.

mod bound;
mod divergence;
mod report;

pub use bound::{theorem1_bound, BoundInputs};
pub use divergence::{estimate_divergences, level_divergences, tv_distance, DivergenceEstimate, ProbeBatch};
pub use report::{mean_std, monotonicity_report, CurvePoint, ModeSummary, Monotonicity, TrainingReport};
