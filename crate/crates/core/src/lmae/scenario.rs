use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LmaeError, Result};
use crate::actor::{ActMode, Actor, FramingFunction, Memory, SummaryChain};
use crate::backend::{share, BackendConfig, Corpus, SharedBackend};
use crate::rng;
use crate::seq::{ActorId, Sequence};

/// A backend and the corpus it is consolidated on before the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    #[serde(default)]
    pub config: BackendConfig,
    #[serde(default)]
    pub corpus: Vec<String>,
}

fn default_max_action_tokens() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub id: String,
    pub backend: String,
    /// Defaults to recalling every precedent that shares a token with the
    /// observation.
    #[serde(default)]
    pub chain: Option<SummaryChain>,
    #[serde(default)]
    pub policy_template: Option<String>,
    #[serde(default)]
    pub memorize_template: Option<String>,
    #[serde(default)]
    pub pinned_rules: Vec<String>,
    #[serde(default)]
    pub initial_memory: Vec<String>,
    #[serde(default)]
    pub mode: ActMode,
    /// Mixed into every seed this actor draws.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_action_tokens")]
    pub max_action_tokens: usize,
}

/// One outcome of a stochastic rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub weight: f64,
    pub template: String,
}

/// Maps the state to one actor's observation. `{self}` in the pattern
/// stands for the observing actor's id; captures expand as `$1`/`$name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRule {
    pub id: String,
    /// Actors the rule applies to; all when absent.
    #[serde(default)]
    pub actors: Option<Vec<String>>,
    pub pattern: String,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub choices: Vec<Choice>,
}

/// Maps state and joint action to the next state. The pattern is matched
/// against the state line followed by one `id: action` line per valid
/// action, in actor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRule {
    pub id: String,
    pub pattern: String,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub choices: Vec<Choice>,
}

/// An action matching `action` is invalid unless the state matches
/// `requires`; the actor then receives `feedback` with its next observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidityRule {
    pub id: String,
    pub action: String,
    pub requires: String,
    pub feedback: String,
}

/// Candidate actions offered when an observation matches `pattern`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSet {
    pub pattern: String,
    pub actions: Vec<String>,
}

/// Backend completion used when no transition rule matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameMaster {
    pub backend: String,
    /// Placeholders `{state}` and `{actions}`.
    pub template: String,
    #[serde(default = "default_max_action_tokens")]
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// Keep the state.
    #[default]
    Identity,
    /// Treat a missing transition rule as a scenario error.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub initial_state: String,
    pub horizon: usize,
    pub backends: BTreeMap<String, BackendSpec>,
    pub actors: Vec<ActorConfig>,
    pub observation_rules: Vec<ObservationRule>,
    #[serde(default)]
    pub transition_rules: Vec<TransitionRule>,
    #[serde(default)]
    pub validity_rules: Vec<ValidityRule>,
    #[serde(default)]
    pub candidate_actions: Vec<CandidateSet>,
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default)]
    pub game_master: Option<GameMaster>,
}

fn compile(pattern: &str, rule: &str) -> Result<Regex> {
    Regex::new(pattern).map_err(|e| LmaeError::Scenario(format!("rule {rule}: {e}")))
}

fn with_self(pattern: &str, id: &str) -> String {
    pattern.replace("{self}", &regex::escape(id))
}

pub(crate) enum Output {
    Template(String),
    Choices(Vec<Choice>),
}

impl Output {
    fn new(template: &Option<String>, choices: &[Choice], rule: &str) -> Result<Self> {
        match (template, choices.is_empty()) {
            (Some(t), true) => Ok(Output::Template(t.clone())),
            (None, false) => {
                if choices.iter().any(|c| !(c.weight >= 0.0 && c.weight.is_finite())) || choices.iter().all(|c| c.weight == 0.0) {
                    return Err(LmaeError::Scenario(format!("rule {rule}: choice weights must be nonnegative and not all zero")));
                }
                Ok(Output::Choices(choices.to_vec()))
            }
            _ => Err(LmaeError::Scenario(format!("rule {rule}: give exactly one of template or choices"))),
        }
    }

    /// The template to expand, drawing with `seed` for stochastic rules.
    pub(crate) fn pick(&self, seed: u64) -> &str {
        match self {
            Output::Template(t) => t,
            Output::Choices(c) => {
                let total: f64 = c.iter().map(|c| c.weight).sum();
                let mut u = rng::stream(seed).gen::<f64>() * total;
                for choice in c {
                    if u < choice.weight {
                        return &choice.template;
                    }
                    u -= choice.weight;
                }
                &c.iter().rev().find(|c| c.weight > 0.0).expect("validated").template
            }
        }
    }
}

pub(crate) struct CompiledObservation {
    pub id: String,
    /// Pattern per actor index; `None` when the rule does not apply.
    pub patterns: Vec<Option<Regex>>,
    pub output: Output,
}

pub(crate) struct CompiledTransition {
    pub id: String,
    pub pattern: Regex,
    pub output: Output,
}

pub(crate) struct CompiledValidity {
    pub action: Regex,
    pub requires: Vec<Regex>,
    pub feedback: String,
}

/// A validated scenario with its regular expressions compiled.
pub struct CompiledScenario {
    pub scenario: Scenario,
    pub(crate) observations: Vec<CompiledObservation>,
    pub(crate) transitions: Vec<CompiledTransition>,
    pub(crate) validity: Vec<CompiledValidity>,
    pub(crate) candidates: Vec<(Regex, Vec<Sequence>)>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LmaeError::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LmaeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn actor_index(&self, id: &str) -> Option<usize> {
        self.actors.iter().position(|a| a.id == id)
    }

    pub fn compile(&self) -> Result<CompiledScenario> {
        let bad = |m: String| Err(LmaeError::Scenario(m));
        if self.actors.is_empty() {
            return bad("scenario has no actors".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.observation_rules.is_empty() {
            return bad("scenario has no observation rules".into());
        }
        if self.transition_rules.is_empty() && self.game_master.is_none() && self.fallback == Fallback::Error {
            return bad("scenario has neither transition rules, a game master nor an identity fallback".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.actors {
            ActorId::new(a.id.as_str()).map_err(|e| LmaeError::Scenario(e.to_string()))?;
            if !seen.insert(a.id.as_str()) {
                return bad(format!("duplicate actor id {}", a.id));
            }
            if !self.backends.contains_key(&a.backend) {
                return bad(format!("actor {} uses unknown backend {}", a.id, a.backend));
            }
        }
        if let Some(gm) = &self.game_master {
            if !self.backends.contains_key(&gm.backend) {
                return bad(format!("game master uses unknown backend {}", gm.backend));
            }
        }
        for (name, spec) in &self.backends {
            spec.config.validate().map_err(|e| LmaeError::Scenario(format!("backend {name}: {e}")))?;
        }
        let mut rule_ids = BTreeSet::new();
        let ids = self
            .observation_rules
            .iter()
            .map(|r| &r.id)
            .chain(self.transition_rules.iter().map(|r| &r.id))
            .chain(self.validity_rules.iter().map(|r| &r.id));
        for id in ids {
            if !rule_ids.insert(id.as_str()) {
                return bad(format!("duplicate rule id {id}"));
            }
        }

        let mut observations = Vec::new();
        for r in &self.observation_rules {
            if let Some(list) = &r.actors {
                if let Some(unknown) = list.iter().find(|id| self.actor_index(id).is_none()) {
                    return bad(format!("rule {} names unknown actor {unknown}", r.id));
                }
            }
            let patterns = self
                .actors
                .iter()
                .map(|a| {
                    let applies = r.actors.as_ref().map_or(true, |l| l.contains(&a.id));
                    applies.then(|| compile(&with_self(&r.pattern, &a.id), &r.id)).transpose()
                })
                .collect::<Result<Vec<_>>>()?;
            observations.push(CompiledObservation { id: r.id.clone(), patterns, output: Output::new(&r.template, &r.choices, &r.id)? });
        }
        let transitions = self
            .transition_rules
            .iter()
            .map(|r| {
                Ok(CompiledTransition {
                    id: r.id.clone(),
                    pattern: compile(&r.pattern, &r.id)?,
                    output: Output::new(&r.template, &r.choices, &r.id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let validity = self
            .validity_rules
            .iter()
            .map(|r| {
                Ok(CompiledValidity {
                    action: compile(&r.action, &r.id)?,
                    requires: self
                        .actors
                        .iter()
                        .map(|a| compile(&with_self(&r.requires, &a.id), &r.id))
                        .collect::<Result<Vec<_>>>()?,
                    feedback: r.feedback.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let candidates = self
            .candidate_actions
            .iter()
            .map(|c| {
                if c.actions.is_empty() {
                    return Err(LmaeError::Scenario(format!("candidate set for {:?} is empty", c.pattern)));
                }
                Ok((compile(&c.pattern, "candidate_actions")?, c.actions.iter().map(Sequence::new).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledScenario { scenario: self.clone(), observations, transitions, validity, candidates })
    }

    /// Builds every named backend, consolidated on its corpus.
    pub fn build_backends(&self) -> Result<BTreeMap<String, SharedBackend>> {
        self.backends
            .iter()
            .map(|(name, spec)| {
                let mut b = spec.config.build().map_err(|e| LmaeError::Scenario(format!("backend {name}: {e}")))?;
                if !spec.corpus.is_empty() {
                    b.consolidate(&Corpus::from_texts(&spec.corpus))?;
                }
                Ok((name.clone(), share(b)))
            })
            .collect()
    }

    /// Actors in scenario order, bound to the given backends.
    pub fn build_actors(&self, backends: &BTreeMap<String, SharedBackend>) -> Result<Vec<Actor>> {
        self.actors
            .iter()
            .map(|c| {
                let id = ActorId::new(c.id.as_str()).map_err(|e| LmaeError::Scenario(e.to_string()))?;
                let backend = backends
                    .get(&c.backend)
                    .cloned()
                    .ok_or_else(|| LmaeError::Scenario(format!("unknown backend {}", c.backend)))?;
                let mut chain = c.chain.clone().unwrap_or_else(SummaryChain::precedent_recall);
                if let Some(p) = &c.policy_template {
                    chain.policy = FramingFunction::new(p.as_str());
                }
                if let Some(m) = &c.memorize_template {
                    chain.memorize = FramingFunction::new(m.as_str());
                }
                if chain.steps.is_empty() {
                    return Err(LmaeError::Scenario(format!("actor {} has an empty summary chain", c.id)));
                }
                let mut actor = Actor::new(id, backend).with_chain(chain);
                actor.memory = Memory::from_entries(c.initial_memory.iter().map(String::as_str));
                actor.mode = c.mode;
                actor.max_action_tokens = c.max_action_tokens;
                for rule in &c.pinned_rules {
                    actor.pinned.push(Sequence::new(rule));
                }
                Ok(actor)
            })
            .collect()
    }
}

impl CompiledScenario {
    pub(crate) fn candidates_for(&self, observation: &Sequence) -> Option<&[Sequence]> {
        self.candidates
            .iter()
            .find(|(re, _)| re.is_match(observation.as_str()))
            .map(|(_, c)| c.as_slice())
    }
}
