//! Linguistic multi-actor environments: a partially observed controlled
//! Markov process whose states, observations and actions are text. There
//! is no reward.

mod engine;
mod scenario;
mod trace;

use thiserror::Error;

use crate::actor::ActorError;
use crate::backend::BackendError;

pub use engine::{observe_all, run_episode, transition, transition_haystack, Engine, EngineOptions, EnvState};
pub use scenario::{
    ActorConfig, BackendSpec, CandidateSet, Choice, CompiledScenario, Fallback, GameMaster, ObservationRule, Scenario,
    TransitionRule, ValidityRule,
};
pub use trace::{TickRecord, Trace, TraceError, TraceHeader, Verbosity, TRACE_FORMAT, TRACE_VERSION};

/// The bundled eight-actor greeting scenario.
pub const GREETING_SCENARIO: &str = include_str!("../../scenarios/greeting.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmaeError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("no {kind} rule matches at tick {tick}{}", actor.as_ref().map(|a| format!(" for {a}")).unwrap_or_default())]
    NoMatchingRule { kind: &'static str, actor: Option<String>, tick: usize },
    #[error("io: {0}")]
    Io(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub type Result<T> = std::result::Result<T, LmaeError>;
