//! Generative actors: memory, a chain of summary steps that fills the
//! global workspace, a policy framing that turns the workspace into a
//! context for the backend, and a memorize framing that writes the step
//! back to memory.

pub mod framing;
pub mod memory;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{options_line, parse_rule, BackendError, Estimate, SharedBackend};
use crate::rng;
use crate::seq::{ActionRecord, ActorId, Clause, OpenSlot, SeqError, Sequence};

pub use framing::FramingFunction;
pub use memory::{similarity, Memory, MemoryEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActorError {
    #[error("memory is empty")]
    EmptyMemory,
    #[error("template references unfilled placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("rule {0:?} does not match `RULE: avoid|prefer <action>`")]
    MalformedRule(String),
    #[error("summary chain has no steps")]
    EmptyChain,
    #[error("no candidate has positive probability")]
    DegenerateFrame,
    #[error("workspace has no action to remember")]
    NoAction,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

pub type Result<T> = std::result::Result<T, ActorError>;

fn default_summary_tokens() -> usize {
    12
}

fn default_limit() -> Option<usize> {
    Some(1)
}

/// One step of the summary chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChainStep {
    /// Completes the framed context with the backend.
    Summary {
        template: FramingFunction,
        #[serde(default = "default_summary_tokens")]
        max_tokens: usize,
    },
    /// Retrieves memories similar to the framed query. `limit: null` takes
    /// every entry with positive similarity.
    Retrieve {
        template: FramingFunction,
        #[serde(default = "default_limit")]
        limit: Option<usize>,
    },
}

pub const DEFAULT_POLICY: &str = "{pinned}\n{assemblies}\n{options}\n{slot}";
pub const DEFAULT_MEMORIZE: &str = "{record}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryChain {
    pub steps: Vec<ChainStep>,
    pub policy: FramingFunction,
    pub memorize: FramingFunction,
}

impl SummaryChain {
    pub fn new(steps: Vec<ChainStep>, policy: FramingFunction, memorize: FramingFunction) -> Result<Self> {
        if steps.is_empty() {
            return Err(ActorError::EmptyChain);
        }
        Ok(Self { steps, policy, memorize })
    }

    /// The three appropriateness questions: what kind of situation this
    /// is, what kind of person I am, and what such a person does here.
    pub fn appropriateness() -> Self {
        let q = |t: &str| ChainStep::Summary { template: FramingFunction::new(t), max_tokens: default_summary_tokens() };
        Self {
            steps: vec![
                q("{observation}\nQuestion: What kind of situation is this?\nAnswer:"),
                q("{observation}\n{assembly:1}\nQuestion: What kind of person is {self}?\nAnswer:"),
                q("{observation}\n{assemblies}\nQuestion: What does a person such as {self} do in a situation such as this?\nAnswer:"),
            ],
            policy: DEFAULT_POLICY.into(),
            memorize: DEFAULT_MEMORIZE.into(),
        }
    }

    /// One retrieval step that recalls every memory sharing a token with
    /// the observation.
    pub fn precedent_recall() -> Self {
        Self {
            steps: vec![ChainStep::Retrieve { template: "{observation}".into(), limit: None }],
            policy: DEFAULT_POLICY.into(),
            memorize: DEFAULT_MEMORIZE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalWorkspace {
    pub observation: Sequence,
    pub assemblies: Vec<Sequence>,
    /// Memory indices behind each assembly; empty for summaries.
    pub sources: Vec<Vec<u64>>,
    pub action: Option<Sequence>,
}

impl GlobalWorkspace {
    pub fn new(observation: Sequence) -> Self {
        Self { observation, assemblies: Vec::new(), sources: Vec::new(), action: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    #[default]
    Argmax,
    Sample,
}

/// Which clause the policy context asks the backend to write.
#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    /// The actor's own action after the workspace observation.
    Action,
    /// The actor's reaction to someone else's recorded action.
    Reaction(ActionRecord),
}

#[derive(Clone)]
pub struct Actor {
    pub id: ActorId,
    pub memory: Memory,
    pub chain: SummaryChain,
    /// Assemblies placed in front of every policy context.
    pub pinned: Vec<Sequence>,
    pub backend: SharedBackend,
    pub mode: ActMode,
    pub max_action_tokens: usize,
}

impl std::fmt::Debug for Actor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Actor")
            .field("id", &self.id)
            .field("memory", &self.memory.len())
            .field("pinned", &self.pinned)
            .field("mode", &self.mode)
            .finish()
    }
}

fn softmax(lps: &[f64]) -> Option<Vec<f64>> {
    let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    let w: Vec<f64> = lps.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|x| x / total).collect())
}

fn pick(probs: &[f64], mode: ActMode, seed: u64) -> usize {
    match mode {
        ActMode::Argmax => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng::stream(seed).gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
        }
    }
}

impl Actor {
    pub fn new(id: ActorId, backend: SharedBackend) -> Self {
        Self {
            id,
            memory: Memory::new(),
            chain: SummaryChain::precedent_recall(),
            pinned: Vec::new(),
            backend,
            mode: ActMode::Argmax,
            max_action_tokens: 16,
        }
    }

    pub fn with_chain(mut self, chain: SummaryChain) -> Self {
        self.chain = chain;
        self
    }

    pub fn with_memory(&self, memory: Memory) -> Actor {
        Actor { memory, ..self.clone() }
    }

    /// Content-addressable retrieval from this actor's memory.
    pub fn retrieve(&self, query: &Sequence) -> Result<&MemoryEntry> {
        self.memory.retrieve(query).ok_or(ActorError::EmptyMemory)
    }

    fn vars(&self, ws: &GlobalWorkspace) -> BTreeMap<String, String> {
        let mut v = BTreeMap::new();
        v.insert("observation".into(), ws.observation.to_string());
        v.insert("self".into(), self.id.to_string());
        v.insert("pinned".into(), Sequence::join_lines(&self.pinned).to_string());
        v.insert("assemblies".into(), Sequence::join_lines(&ws.assemblies).to_string());
        for (k, a) in ws.assemblies.iter().enumerate() {
            v.insert(format!("assembly:{}", k + 1), a.to_string());
        }
        if let Some((pos, _)) = ws.sources.iter().enumerate().rev().find(|(_, s)| !s.is_empty()) {
            v.insert("retrieved".into(), ws.assemblies[pos].to_string());
        }
        v
    }

    pub fn run_summary_chain(&self, observation: &Sequence, seed: u64) -> Result<GlobalWorkspace> {
        if self.chain.steps.is_empty() {
            return Err(ActorError::EmptyChain);
        }
        let mut ws = GlobalWorkspace::new(observation.clone());
        for (k, step) in self.chain.steps.iter().enumerate() {
            let mut vars = self.vars(&ws);
            match step {
                ChainStep::Summary { template, max_tokens } => {
                    let ctx = template.render(&vars)?;
                    let backend = self.backend.read().unwrap_or_else(|e| e.into_inner());
                    let text = backend.sample_completion(&ctx, *max_tokens, rng::derive(seed, &[&"summary", &k]))?;
                    ws.assemblies.push(text);
                    ws.sources.push(Vec::new());
                }
                ChainStep::Retrieve { template, limit } => {
                    let query = template.render(&vars)?;
                    vars.insert("query".into(), query.to_string());
                    let found = self.memory.retrieve_many(&query, *limit);
                    ws.assemblies.push(Sequence::join_lines(found.iter().map(|e| &e.text)));
                    ws.sources.push(found.iter().map(|e| e.index).collect());
                }
            }
        }
        Ok(ws)
    }

    /// The context the backend completes to choose an action or reaction.
    pub fn policy_context(&self, ws: &GlobalWorkspace, candidates: Option<&[Sequence]>, slot: &Slot) -> Result<Sequence> {
        let mut vars = self.vars(ws);
        let header = match slot {
            Slot::Action => OpenSlot::header(&Sequence::new(ws.observation.single_line()), &[], &self.id),
            Slot::Reaction(rec) => OpenSlot::header(
                &rec.observation,
                &[Clause { actor: rec.actor_id.clone(), text: rec.action.clone() }],
                &self.id,
            ),
        };
        vars.insert("slot".into(), header);
        let options = candidates
            .map(|c| options_line(&c.iter().map(|s| s.single_line()).collect::<Vec<_>>()))
            .unwrap_or_default();
        vars.insert("options".into(), options);
        self.chain.policy.render(&vars)
    }

    /// Frame-normalized probability of each candidate. Exact for enumerable
    /// backends; otherwise estimated from sampled completions.
    pub fn candidate_probabilities(
        &self,
        ws: &GlobalWorkspace,
        candidates: &[Sequence],
        slot: &Slot,
        seed: u64,
    ) -> Result<Vec<Estimate>> {
        let ctx = self.policy_context(ws, Some(candidates), slot)?;
        let backend = self.backend.read().unwrap_or_else(|e| e.into_inner());
        if backend.is_enumerable() {
            let lps = backend.log_prob_complete_many(&ctx, candidates)?;
            let probs = softmax(&lps).ok_or(ActorError::DegenerateFrame)?;
            return Ok(probs.into_iter().map(Estimate::exact).collect());
        }
        let n = backend.config().remote.as_ref().map_or(256, |r| r.samples);
        let max_len = candidates.iter().map(|c| c.token_count()).max().unwrap_or(1).max(1);
        let samples = backend.sample_completions(&ctx, max_len, n, seed)?;
        let mut counts = vec![0usize; candidates.len()];
        for s in &samples {
            if let Some(i) = candidates.iter().position(|c| c.tokens() == s.tokens()) {
                counts[i] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(ActorError::DegenerateFrame);
        }
        let t = total as f64;
        // Agresti-Coull error so that unanimous samples still report noise
        Ok(counts
            .into_iter()
            .map(|c| {
                let adj = (c as f64 + 1.0) / (t + 2.0);
                Estimate { value: c as f64 / t, std_error: Some((adj * (1.0 - adj) / (t + 2.0)).sqrt()) }
            })
            .collect())
    }

    fn choose(&self, ws: &GlobalWorkspace, candidates: Option<&[Sequence]>, slot: &Slot, seed: u64) -> Result<Sequence> {
        match candidates {
            Some([only]) => Ok(only.clone()),
            Some(c) if !c.is_empty() => {
                let probs: Vec<f64> =
                    self.candidate_probabilities(ws, c, slot, seed)?.into_iter().map(|e| e.value).collect();
                Ok(c[pick(&probs, self.mode, rng::derive(seed, &[&"pick"]))].clone())
            }
            _ => {
                let ctx = self.policy_context(ws, None, slot)?;
                let backend = self.backend.read().unwrap_or_else(|e| e.into_inner());
                Ok(backend.sample_completion(&ctx, self.max_action_tokens, seed)?)
            }
        }
    }

    /// Chooses an action for a summarized workspace and records it there.
    pub fn act(&self, ws: &mut GlobalWorkspace, candidates: Option<&[Sequence]>, seed: u64) -> Result<Sequence> {
        let a = self.choose(ws, candidates, &Slot::Action, seed)?;
        ws.action = Some(a.clone());
        Ok(a)
    }

    /// Chooses a reaction to another actor's recorded action.
    pub fn react(&self, record: &ActionRecord, candidates: Option<&[Sequence]>, seed: u64) -> Result<Sequence> {
        let ws = self.run_summary_chain(&record.observation, seed)?;
        self.choose(&ws, candidates, &Slot::Reaction(record.clone()), seed)
    }

    /// Appends the memorize framing of the workspace; returns its index.
    pub fn remember(&mut self, ws: &GlobalWorkspace) -> Result<u64> {
        let action = ws.action.as_ref().ok_or(ActorError::NoAction)?;
        let mut vars = self.vars(ws);
        let record = ActionRecord::new(ws.observation.clone(), self.id.clone(), action.clone());
        vars.insert("record".into(), record.serialize());
        vars.insert("action".into(), action.to_string());
        let entry = self.chain.memorize.render(&vars)?;
        Ok(self.memory.append(entry))
    }

    /// Summary chain, action choice and memory update in one go.
    pub fn step(&mut self, observation: &Sequence, candidates: Option<&[Sequence]>, seed: u64) -> Result<(Sequence, GlobalWorkspace)> {
        let mut ws = self.run_summary_chain(observation, seed)?;
        let a = self.act(&mut ws, candidates, seed)?;
        self.remember(&ws)?;
        Ok((a, ws))
    }

    /// Pins an explicit rule in front of every policy context.
    pub fn inject_explicit_norm(&mut self, rule: &Sequence) -> Result<()> {
        if parse_rule(rule).is_none() {
            return Err(ActorError::MalformedRule(rule.to_string()));
        }
        self.pinned.push(rule.clone());
        Ok(())
    }

    /// Removes a pinned rule; returns whether it was present.
    pub fn remove_explicit_norm(&mut self, rule: &Sequence) -> bool {
        let before = self.pinned.len();
        self.pinned.retain(|r| r != rule);
        self.pinned.len() != before
    }
}
