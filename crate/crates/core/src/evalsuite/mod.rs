//! Latent-space compositionality study and generation metrics.

mod families;
mod generation;
mod probe;
mod study;

use crate::training::TrainError;

pub use families::{family_member, generate_families, Family, FamilyTriple, FAMILIES, MAX_CHAIN};
pub use generation::{generation_metrics, GenerationMetrics};
pub use probe::{fit_probe, split_triples, LinearProbe, TripleEmbedding};
pub use study::{
    fewshot_tanimoto, latent_study, FewShotResult, LatentReport, REFERENCE_MEAN_TANIMOTO,
    REFERENCE_MSE, REFERENCE_R2,
};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("probe design is rank-deficient")]
    DegenerateSystem,
    #[error("empty input")]
    EmptyInput,
    #[error("embedding widths disagree: {expected} vs {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}
