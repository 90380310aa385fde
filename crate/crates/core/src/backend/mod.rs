//! Next-symbol predictors.
//!
//! Two enumerable implementations share one engine ([`PrecedentBackend`]):
//! the plain count table, which is convention sensitive but ignores
//! sanctions and rules, and the weighted variant, which also discounts or
//! boosts actions according to sanctions and in-context rules. The remote
//! client talks to an HTTP completion endpoint and only supports sampling
//! based estimators.

mod kl;
mod ngram;
mod precedent;
pub mod remote;
pub mod stub;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seq::Sequence;

pub use kl::{completion_outcomes, kl_between, monte_carlo_kl, plug_in_kl};
pub use ngram::NgramCounts;
pub use precedent::{options_line, parse_rule, PrecedentBackend, Rule, RulePolarity, SlotKind, OPTIONS_PREFIX};
pub use remote::{RemoteBackend, RemoteConfig};

pub const EOS: &str = "</s>";
pub const BOS: &str = "<s>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend cannot enumerate next-symbol distributions; use a sampling estimator")]
    NotEnumerable,
    #[error("operation not supported: {0}")]
    NotSupported(String),
    #[error("remote endpoint unavailable after {attempts} attempt(s): {message}")]
    RemoteUnavailable { message: String, attempts: u32, last_status: Option<u16> },
    #[error("enumeration needs more than {budget} outcomes")]
    VocabularyTooLarge { budget: usize },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed remote response: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, BackendError>;

/// Probability of every token that can follow a context, plus [`EOS`].
/// Entries are sorted by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextSymbolDistribution {
    pub support: Vec<(String, f64)>,
}

impl NextSymbolDistribution {
    pub fn prob(&self, token: &str) -> f64 {
        self.support
            .binary_search_by(|(t, _)| t.as_str().cmp(token))
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &str {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = None;
        for (t, p) in &self.support {
            if *p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(t.as_str());
            if u < acc {
                return t;
            }
        }
        last.unwrap_or(EOS)
    }

    pub fn as_map(&self) -> BTreeMap<&str, f64> {
        self.support.iter().map(|(t, p)| (t.as_str(), *p)).collect()
    }
}

/// A number that may come from a Monte-Carlo estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// `None` when the value is exact.
    pub std_error: Option<f64>,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: None }
    }

    pub fn is_exact(&self) -> bool {
        self.std_error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Table,
    Weighted,
    Remote,
}

/// Sanction texts with a configured valence. Anything else is neutral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanctionLexicon {
    #[serde(default)]
    pub negative: Vec<String>,
    #[serde(default)]
    pub positive: Vec<String>,
}

impl Default for SanctionLexicon {
    fn default() -> Self {
        Self {
            negative: ["frowns", "shame", "boo", "tsk tsk", "scolds"].map(String::from).to_vec(),
            positive: ["applauds", "well done", "thanks", "praises"].map(String::from).to_vec(),
        }
    }
}

/// Free text that counts as a rule, e.g. `It is forbidden to eat apples`
/// read as `RULE: avoid eat apple`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleAlias {
    /// Regular expression matched against each context line.
    pub pattern: String,
    /// Rule in the `RULE: avoid|prefer <action>` grammar.
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub ngram_order: usize,
    pub smoothing_lambda: f64,
    pub sanction_discount: f64,
    pub sanction_boost: f64,
    pub rule_discount: f64,
    /// Tokens known to the model before any training.
    pub vocabulary: Vec<String>,
    pub sanction_lexicon: SanctionLexicon,
    pub rule_aliases: Vec<RuleAlias>,
    /// Maximum number of outcomes enumerated for multi-step KL.
    pub enumeration_budget: usize,
    pub remote: Option<RemoteConfig>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Table,
            ngram_order: 2,
            smoothing_lambda: 0.5,
            sanction_discount: 0.5,
            sanction_boost: 2.0,
            rule_discount: 0.1,
            vocabulary: Vec::new(),
            sanction_lexicon: SanctionLexicon::default(),
            rule_aliases: Vec::new(),
            enumeration_budget: 100_000,
            remote: None,
        }
    }
}

impl BackendConfig {
    pub fn table() -> Self {
        Self::default()
    }

    pub fn weighted() -> Self {
        Self { kind: BackendKind::Weighted, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BackendError::InvalidConfig(m.to_string()));
        match self.kind {
            BackendKind::Remote => {
                if self.remote.as_ref().map_or(true, |r| r.endpoint.is_empty()) {
                    return bad("remote backend requires an endpoint");
                }
            }
            BackendKind::Table | BackendKind::Weighted => {
                if self.ngram_order < 1 {
                    return bad("ngram_order must be at least 1");
                }
                if !(self.smoothing_lambda >= 0.0) || !self.smoothing_lambda.is_finite() {
                    return bad("smoothing_lambda must be a nonnegative number");
                }
                if !(self.sanction_discount > 0.0 && self.sanction_discount <= 1.0) {
                    return bad("sanction_discount must lie in (0, 1]");
                }
                if !(self.sanction_boost >= 1.0) || !self.sanction_boost.is_finite() {
                    return bad("sanction_boost must be at least 1");
                }
                if !(self.rule_discount > 0.0 && self.rule_discount <= 1.0) {
                    return bad("rule_discount must lie in (0, 1]");
                }
                for a in &self.rule_aliases {
                    if regex::Regex::new(&a.pattern).is_err() {
                        return bad("rule alias pattern is not a valid regular expression");
                    }
                    if parse_rule(&Sequence::new(&a.rule)).is_none() {
                        return bad("rule alias target does not follow the rule grammar");
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds the backend. A remote config without an endpoint takes the
    /// endpoint and key from the environment.
    pub fn build(&self) -> Result<Box<dyn PatternBackend>> {
        if self.kind == BackendKind::Remote {
            let mut c = self.clone();
            let mut remote = c.remote.take().unwrap_or_default();
            if remote.endpoint.is_empty() {
                if let Some(env) = RemoteConfig::from_env() {
                    remote.endpoint = env.endpoint;
                    remote.api_key = remote.api_key.or(env.api_key);
                }
            }
            c.remote = Some(remote);
            c.validate()?;
            return Ok(Box::new(RemoteBackend::new(c)?));
        }
        self.validate()?;
        Ok(Box::new(PrecedentBackend::new(self.clone())?))
    }
}

/// Training material: serialized records and free text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub entries: Vec<Sequence>,
}

impl Corpus {
    pub fn new(entries: impl IntoIterator<Item = Sequence>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    pub fn from_texts<S: AsRef<str>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| Sequence::new(t.as_ref())))
    }

    /// The corpus repeated `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len() * times);
        for _ in 0..times {
            entries.extend(self.entries.iter().cloned());
        }
        Self { entries }
    }
}

pub trait PatternBackend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    fn is_enumerable(&self) -> bool;

    fn next_distribution(&self, context: &Sequence) -> Result<NextSymbolDistribution> {
        self.next_distribution_after(context, &[])
    }

    /// Distribution after `context` followed by the tokens in `appended`.
    fn next_distribution_after(&self, context: &Sequence, appended: &[String]) -> Result<NextSymbolDistribution>;

    fn sample_completion(&self, context: &Sequence, max_len: usize, seed: u64) -> Result<Sequence>;

    fn sample_completions(&self, context: &Sequence, max_len: usize, n: usize, seed: u64) -> Result<Vec<Sequence>> {
        (0..n)
            .map(|i| self.sample_completion(context, max_len, crate::rng::derive(seed, &[&i])))
            .collect()
    }

    /// Sum of per-token conditional log probabilities; EOS not included.
    fn log_prob(&self, context: &Sequence, continuation: &Sequence) -> Result<f64>;

    /// Like [`log_prob`](Self::log_prob) but also scores the end of sequence
    /// after the continuation, so it is the probability of the continuation
    /// as a whole completion.
    fn log_prob_complete(&self, context: &Sequence, continuation: &Sequence) -> Result<f64>;

    /// [`log_prob_complete`](Self::log_prob_complete) for several
    /// continuations of one context.
    fn log_prob_complete_many(&self, context: &Sequence, continuations: &[Sequence]) -> Result<Vec<f64>> {
        continuations.iter().map(|c| self.log_prob_complete(context, c)).collect()
    }

    fn consolidate(&mut self, corpus: &Corpus) -> Result<()>;

    fn kl_divergence(&self, c1: &Sequence, c2: &Sequence, horizon: usize) -> Result<Estimate>;

    fn snapshot(&self) -> Result<serde_json::Value>;

    fn clone_box(&self) -> Box<dyn PatternBackend>;
}

impl Clone for Box<dyn PatternBackend> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// A backend shared by several actors. Reads take the lock shared;
/// consolidation takes it exclusively.
pub type SharedBackend = Arc<RwLock<Box<dyn PatternBackend>>>;

pub fn share(backend: Box<dyn PatternBackend>) -> SharedBackend {
    Arc::new(RwLock::new(backend))
}
