//! Measurement core: ε-similarity, counterfactual memory edits and the
//! decision procedures for convention sensitivity, sanction sensitivity,
//! reproduction, collective policies and norms.

mod edit;
mod frame;
mod norms;
mod report;
mod sensitivity;

use thiserror::Error;

use crate::actor::ActorError;
use crate::backend::BackendError;
use crate::seq::SeqError;

pub use edit::{
    edit_context_free, edit_contextual, insert_sanction, matching_targets, ConstantLabel, ContextLabeler, EditTarget,
    LabelRule, LabelTable, PassAll,
};
pub use frame::{epsilon_similar, ActionFrame, FrameClasses, Similarity};
pub use norms::{
    classify_normative, collective_policy_over_ticks, collective_policy_prob, ActorEvidence, CollectiveTick,
    NormClassification, NormOptions,
};
pub use report::{CertificationReport, GridPoint, Inequality, InequalityStatus, Verdict, TOLERANCE};
pub use sensitivity::{
    action_class_prob, certify_convention_sensitivity, certify_reproduction, certify_sanction_sensitivity,
    ConventionOptions, ReproductionReport, SanctionOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("memory holds no record matching the frame")]
    NoMatchingRecords,
    #[error("replacement action is in the same ε-class as the original")]
    EditRejected,
    #[error("needed {needed} matching records, found {found}")]
    InsufficientMatches { needed: usize, found: usize },
    #[error("invalid action frame: {0}")]
    InvalidFrame(String),
    #[error("invalid certification settings: {0}")]
    Config(String),
    #[error("alternative never exceeded the threshold on the grid (best {best})")]
    NotReproduced { best: f64 },
    #[error("actors, joint action and frames do not line up")]
    MismatchedActors,
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

pub type Result<T> = std::result::Result<T, CertifyError>;
