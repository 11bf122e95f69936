//! Importance measures: pure functions from (model, input, class) to
//! per-token scores.

mod gradient;
mod lime;
mod shap;

pub use gradient::{
    explain_attention, explain_gradient, explain_input_x_grad, explain_integrated_gradient,
    explain_integrated_gradient_with, explain_leave_one_out, explain_random, PNorm, DEFAULT_IG_STEPS,
};
pub use lime::{explain_lime, fit_l1_logistic, L1Logistic};
pub use shap::{explain_kernel_shap, shap_kernel, ShapMode, MAX_EXACT_FEATURES};

use crate::data::{Label, TokenId, TokenSequence};
use crate::model::Classifier;
use crate::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Signed,
    Absolute,
}

impl ScoreKind {
    fn apply(self, scores: Vec<f64>) -> Vec<f64> {
        match self {
            ScoreKind::Signed => scores,
            ScoreKind::Absolute => scores.into_iter().map(f64::abs).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub scores: Vec<f64>,
    pub kind: ScoreKind,
    pub method: String,
    /// Set when the method could not produce informative scores (for
    /// example a LIME neighbourhood with constant labels).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Explanation {
    pub fn new(scores: Vec<f64>, kind: ScoreKind, method: impl Into<String>) -> Self {
        Explanation { scores: kind.apply(scores), kind, method: method.into(), degenerate: false }
    }
}

/// A configured importance measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ImportanceMeasure {
    Random,
    Attention,
    Gradient {
        norm: PNorm,
    },
    InputXGrad {
        kind: ScoreKind,
    },
    IntegratedGradient {
        kind: ScoreKind,
        #[serde(default = "default_ig_steps")]
        steps: usize,
    },
    LeaveOneOut {
        kind: ScoreKind,
    },
    Lime {
        n_samples: usize,
        lambda: f64,
    },
    KernelShap {
        mode: ShapMode,
    },
    /// Scores 1 for tokens in the set and 0 elsewhere.
    Oracle {
        tokens: Vec<TokenId>,
    },
}

fn default_ig_steps() -> usize {
    DEFAULT_IG_STEPS
}

impl ImportanceMeasure {
    pub fn name(&self) -> String {
        match self {
            ImportanceMeasure::Random => "random".into(),
            ImportanceMeasure::Attention => "attention".into(),
            ImportanceMeasure::Gradient { norm } => format!("gradient-{}", norm.name()),
            ImportanceMeasure::InputXGrad { kind } => format!("input-x-gradient-{}", kind_name(*kind)),
            ImportanceMeasure::IntegratedGradient { kind, .. } => {
                format!("integrated-gradient-{}", kind_name(*kind))
            }
            ImportanceMeasure::LeaveOneOut { kind } => format!("leave-one-out-{}", kind_name(*kind)),
            ImportanceMeasure::Lime { .. } => "lime".into(),
            ImportanceMeasure::KernelShap { .. } => "kernel-shap".into(),
            ImportanceMeasure::Oracle { .. } => "oracle".into(),
        }
    }

    /// The score kind this measure produces.
    pub fn kind(&self) -> ScoreKind {
        match self {
            ImportanceMeasure::Random
            | ImportanceMeasure::Attention
            | ImportanceMeasure::Gradient { .. }
            | ImportanceMeasure::Oracle { .. } => ScoreKind::Absolute,
            ImportanceMeasure::InputXGrad { kind }
            | ImportanceMeasure::IntegratedGradient { kind, .. }
            | ImportanceMeasure::LeaveOneOut { kind } => *kind,
            ImportanceMeasure::Lime { .. } | ImportanceMeasure::KernelShap { .. } => ScoreKind::Signed,
        }
    }

    pub fn explain<C: Classifier + ?Sized, R: rand::Rng + ?Sized>(
        &self,
        model: &C,
        seq: &TokenSequence,
        class: Label,
        rng: &mut R,
    ) -> Result<Explanation> {
        match self {
            ImportanceMeasure::Random => Ok(explain_random(seq, rng)),
            ImportanceMeasure::Attention => explain_attention(model, seq),
            ImportanceMeasure::Gradient { norm } => explain_gradient(model, seq, class, *norm),
            ImportanceMeasure::InputXGrad { kind } => explain_input_x_grad(model, seq, class, *kind),
            ImportanceMeasure::IntegratedGradient { kind, steps } => {
                explain_integrated_gradient(model, seq, class, *steps, *kind)
            }
            ImportanceMeasure::LeaveOneOut { kind } => explain_leave_one_out(model, seq, class, *kind),
            ImportanceMeasure::Lime { n_samples, lambda } => explain_lime(model, seq, class, *n_samples, *lambda, rng),
            ImportanceMeasure::KernelShap { mode } => explain_kernel_shap(model, seq, class, *mode, rng),
            ImportanceMeasure::Oracle { tokens } => {
                let scores = seq.tokens().iter().map(|t| f64::from(u8::from(tokens.contains(t)))).collect();
                Ok(Explanation::new(scores, ScoreKind::Absolute, "oracle"))
            }
        }
    }
}

fn kind_name(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::Signed => "signed",
        ScoreKind::Absolute => "abs",
    }
}
