//! Erasure-based faithfulness metrics.

mod beam;
mod curve;
mod recursive;
mod roar;
mod stats;

pub use beam::{beam_optimize, BeamObjective, MaskingOrder, DEFAULT_BEAM_CAP};
pub use curve::{compute_acu_racu, CurvePoint, FaithfulnessCurve, FaithfulnessScore};
pub use recursive::{cumulative_count, recursive_eval, step_count, ExplainTarget, RecursiveEval, RecursiveEvalOptions};
pub use roar::{ground_truth_order, roar_retrain, synthetic_roar, tabular_roar_fixed, RoarOptions, SyntheticRoar};
pub use stats::bca_interval;
