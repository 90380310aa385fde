//! Count-table backend with a precedent cache.
//!
//! Outside an open record the backend is a plain add-λ n-gram model over the
//! last k−1 tokens. When the context ends in an unterminated record such as
//! `[the phone is ringing, Bob:` the continuation is an attributed clause,
//! and the backend predicts it from precedents: complete records with the
//! same observation, found in the context or absorbed earlier through
//! [`consolidate`](PatternBackend::consolidate).
//!
//! Each candidate string x gets mass `w(x) · (c(x) + λ·B(x))`, where c is
//! its precedent count and B is the probability the n-gram model assigns to
//! x as a whole string. Strings without precedent keep `λ·B(x)`. The
//! token-level distribution is the exact marginal of these string masses
//! over a prefix trie, so the product of next-token probabilities of a
//! clause followed by EOS equals that clause's share of the total mass.
//!
//! For the table kind `w = 1`. The weighted kind multiplies in
//! `sanction_discount` per negative reaction recorded against x,
//! `sanction_boost` per positive one, `rule_discount` per in-context
//! `RULE: avoid x` and its inverse per `RULE: prefer x`.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::kl::kl_between;
use super::{
    BackendConfig, BackendError, BackendKind, Corpus, Estimate, NextSymbolDistribution, NgramCounts,
    PatternBackend, Result, EOS,
};
use crate::seq::{OpenSlot, Record, Sequence};

/// Tokens that cannot appear unescaped inside a record clause.
const RESERVED_TOKENS: [&str; 4] = ["[", "]", ":", "\\"];

/// Prefix of a line listing the actions on offer.
pub const OPTIONS_PREFIX: &str = "OPTIONS:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RulePolarity {
    Avoid,
    Prefer,
}

/// `RULE: avoid <action>` or `RULE: prefer <action>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub polarity: RulePolarity,
    pub action: Sequence,
}

impl Rule {
    pub fn to_sequence(&self) -> Sequence {
        let verb = match self.polarity {
            RulePolarity::Avoid => "avoid",
            RulePolarity::Prefer => "prefer",
        };
        Sequence::new(format!("RULE: {verb} {}", self.action))
    }
}

fn rule_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^RULE:\s*(avoid|prefer)\s+(\S.*)$").unwrap())
}

pub fn parse_rule(text: &Sequence) -> Option<Rule> {
    if text.as_str().contains('\n') {
        return None;
    }
    let caps = rule_regex().captures(text.as_str())?;
    let polarity = if &caps[1] == "avoid" { RulePolarity::Avoid } else { RulePolarity::Prefer };
    Some(Rule { polarity, action: Sequence::new(&caps[2]) })
}

/// Renders an options line.
pub fn options_line<S: AsRef<str>>(candidates: &[S]) -> String {
    let parts: Vec<&str> = candidates.iter().map(|c| c.as_ref()).collect();
    format!("{OPTIONS_PREFIX} {}", parts.join(" | "))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ActionStats {
    count: u64,
    negative: u64,
    positive: u64,
    #[serde(default)]
    reactions: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    config: BackendConfig,
    ngrams: NgramCounts,
    /// observation → action → record statistics
    precedents: BTreeMap<String, BTreeMap<String, ActionStats>>,
}

#[derive(Debug, Clone)]
pub struct PrecedentBackend {
    config: BackendConfig,
    ngrams: NgramCounts,
    precedents: BTreeMap<String, BTreeMap<String, ActionStats>>,
    negative: BTreeSet<String>,
    positive: BTreeSet<String>,
    aliases: Vec<(Regex, Rule)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Valence {
    Negative,
    Positive,
    Neutral,
}

struct SlotString {
    tokens: Vec<String>,
    count: f64,
    weight: f64,
    /// Probability of the whole string (EOS included) under the n-gram model.
    base: f64,
}

enum Prepared {
    Free { tokens: Vec<String>, support: Vec<String> },
    Slot { partial: Vec<String>, support: Vec<String>, strings: Vec<SlotString> },
}

/// Where a context stands with respect to record slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotKind {
    Free,
    Action { observation: Sequence },
    Reaction { observation: Sequence, act: Sequence },
}

impl PrecedentBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        if config.kind == BackendKind::Remote {
            return Err(BackendError::InvalidConfig("precedent backend needs kind table or weighted".into()));
        }
        config.validate()?;
        let mut ngrams = NgramCounts::new(config.ngram_order);
        ngrams.register(config.vocabulary.iter().flat_map(|v| crate::seq::tokenize(v)));
        let lex = |v: &Vec<String>| v.iter().map(|s| Sequence::new(s).as_str().to_lowercase()).collect();
        let negative = lex(&config.sanction_lexicon.negative);
        let positive = lex(&config.sanction_lexicon.positive);
        let aliases = config
            .rule_aliases
            .iter()
            .map(|a| {
                let re = Regex::new(&a.pattern).map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
                let rule = parse_rule(&Sequence::new(&a.rule))
                    .ok_or_else(|| BackendError::InvalidConfig(format!("bad rule alias target {:?}", a.rule)))?;
                Ok((re, rule))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, ngrams, precedents: BTreeMap::new(), negative, positive, aliases })
    }

    pub fn table() -> Self {
        Self::new(BackendConfig::table()).expect("default config is valid")
    }

    pub fn weighted() -> Self {
        Self::new(BackendConfig::weighted()).expect("default config is valid")
    }

    pub fn from_snapshot(value: &serde_json::Value) -> Result<Self> {
        let snap: Snapshot =
            serde_json::from_value(value.clone()).map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        let mut b = Self::new(snap.config)?;
        b.ngrams = snap.ngrams;
        b.precedents = snap.precedents;
        Ok(b)
    }

    pub fn ngrams(&self) -> &NgramCounts {
        &self.ngrams
    }

    /// Model vocabulary: trained tokens plus configured ones.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.ngrams.vocab().clone()
    }

    /// Tokens of `seq` outside the model vocabulary.
    pub fn unknown_tokens(&self, seq: &Sequence) -> Vec<String> {
        seq.tokens().into_iter().filter(|t| !self.ngrams.vocab().contains(t)).collect()
    }

    pub fn slot_kind(context: &Sequence) -> SlotKind {
        match OpenSlot::detect(context.as_str()) {
            None => SlotKind::Free,
            Some(s) if s.closed.is_empty() => SlotKind::Action { observation: s.observation },
            Some(s) => SlotKind::Reaction { observation: s.observation, act: s.closed[0].text.clone() },
        }
    }

    fn valence(&self, text: &Sequence) -> Valence {
        let key = text.as_str().to_lowercase();
        if self.negative.contains(&key) {
            Valence::Negative
        } else if self.positive.contains(&key) {
            Valence::Positive
        } else {
            Valence::Neutral
        }
    }

    fn is_weighted(&self) -> bool {
        self.config.kind == BackendKind::Weighted
    }

    fn free_support(&self) -> Vec<String> {
        let mut s: Vec<String> = self.ngrams.vocab().iter().cloned().collect();
        s.push(EOS.to_string());
        s.sort();
        s
    }

    fn prepare(&self, context: &Sequence) -> Prepared {
        let text = context.as_str();
        let Some(slot) = OpenSlot::detect(text) else {
            return Prepared::Free { tokens: context.tokens(), support: self.free_support() };
        };
        let preceding = &text[..slot.open_at];
        let records = Record::find_all(preceding);

        #[derive(Default)]
        struct Agg {
            count: f64,
            negative: i32,
            positive: i32,
            avoid: i32,
            prefer: i32,
        }
        let mut agg: BTreeMap<Vec<String>, Agg> = BTreeMap::new();
        let obs_key = slot.observation.as_str();

        if slot.closed.is_empty() {
            for r in records.iter().filter(|r| r.observation == slot.observation) {
                let a = agg.entry(r.act.text.tokens()).or_default();
                a.count += 1.0;
                for re in &r.reactions {
                    match self.valence(&re.text) {
                        Valence::Negative => a.negative += 1,
                        Valence::Positive => a.positive += 1,
                        Valence::Neutral => {}
                    }
                }
            }
            if let Some(stored) = self.precedents.get(obs_key) {
                for (action, st) in stored {
                    let a = agg.entry(crate::seq::tokenize(action)).or_default();
                    a.count += st.count as f64;
                    a.negative += st.negative as i32;
                    a.positive += st.positive as i32;
                }
            }
        } else {
            let act = &slot.closed[0].text;
            for r in records.iter().filter(|r| r.observation == slot.observation && &r.act.text == act) {
                for re in &r.reactions {
                    agg.entry(re.text.tokens()).or_default().count += 1.0;
                }
            }
            if let Some(st) = self.precedents.get(obs_key).and_then(|m| m.get(act.as_str())) {
                for (reaction, n) in &st.reactions {
                    agg.entry(crate::seq::tokenize(reaction)).or_default().count += *n as f64;
                }
            }
        }

        let mut rules: Vec<Rule> = Vec::new();
        for line in preceding.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix(OPTIONS_PREFIX) {
                for opt in rest.split(" | ") {
                    let toks = crate::seq::tokenize(opt);
                    agg.entry(toks).or_default();
                }
                continue;
            }
            if let Some(rule) = parse_rule(&Sequence::new(line)) {
                rules.push(rule);
            }
            for (re, rule) in &self.aliases {
                if re.is_match(line) {
                    rules.push(rule.clone());
                }
            }
        }
        if self.is_weighted() && slot.closed.is_empty() {
            for rule in &rules {
                if let Some(a) = agg.get_mut(&rule.action.tokens()) {
                    match rule.polarity {
                        RulePolarity::Avoid => a.avoid += 1,
                        RulePolarity::Prefer => a.prefer += 1,
                    }
                }
            }
        }

        // strings that need a reserved token can never be written into a clause
        agg.retain(|toks, _| !toks.iter().any(|t| RESERVED_TOKENS.contains(&t.as_str())));

        let mut support: BTreeSet<String> = self
            .ngrams
            .vocab()
            .iter()
            .filter(|t| !RESERVED_TOKENS.contains(&t.as_str()))
            .cloned()
            .collect();
        for toks in agg.keys() {
            support.extend(toks.iter().cloned());
        }
        support.insert(EOS.to_string());
        let support: Vec<String> = support.into_iter().collect();

        let c = &self.config;
        let strings = agg
            .into_iter()
            .map(|(tokens, a)| {
                let weight = if self.is_weighted() {
                    c.sanction_discount.powi(a.negative)
                        * c.sanction_boost.powi(a.positive)
                        * c.rule_discount.powi(a.avoid - a.prefer)
                } else {
                    1.0
                };
                let base = self.string_prob(&tokens, &support);
                SlotString { tokens, count: a.count, weight, base }
            })
            .collect();
        Prepared::Slot { partial: slot.partial, support, strings }
    }

    /// Probability of `tokens` followed by EOS as a standalone string.
    fn string_prob(&self, tokens: &[String], support: &[String]) -> f64 {
        let mut p = self.prefix_prob(tokens, support);
        let step = self.ngrams.smoothed(&self.ngrams.history(tokens), support, self.config.smoothing_lambda);
        p *= step[index_of(support, EOS)];
        p
    }

    fn prefix_prob(&self, tokens: &[String], support: &[String]) -> f64 {
        let mut p = 1.0;
        for i in 0..tokens.len() {
            let step = self.ngrams.smoothed(&self.ngrams.history(&tokens[..i]), support, self.config.smoothing_lambda);
            match support.binary_search(&tokens[i]) {
                Ok(j) => p *= step[j],
                Err(_) => return 0.0,
            }
        }
        p
    }

    fn next_in(&self, prepared: &Prepared, appended: &[String]) -> NextSymbolDistribution {
        let lambda = self.config.smoothing_lambda;
        match prepared {
            Prepared::Free { tokens, support } => {
                let mut all = tokens.clone();
                all.extend(appended.iter().cloned());
                let probs = self.ngrams.smoothed(&self.ngrams.history(&all), support, lambda);
                NextSymbolDistribution { support: support.iter().cloned().zip(probs).collect() }
            }
            Prepared::Slot { partial, support, strings } => {
                let mut pi = partial.clone();
                pi.extend(appended.iter().cloned());
                let step = self.ngrams.smoothed(&self.ngrams.history(&pi), support, lambda);
                let bp = self.prefix_prob(&pi, support);
                let eos = index_of(support, EOS);
                let mut special = vec![0.0; support.len()];
                let mut base_taken = vec![0.0; support.len()];
                let mut stop = lambda * bp * step[eos];
                for s in strings.iter().filter(|s| s.tokens.starts_with(&pi)) {
                    let mass = s.weight * (s.count + lambda * s.base);
                    if s.tokens.len() == pi.len() {
                        stop = mass;
                    } else if let Ok(j) = support.binary_search(&s.tokens[pi.len()]) {
                        special[j] += mass;
                        base_taken[j] += s.base;
                    }
                }
                let mut masses = vec![0.0; support.len()];
                for j in 0..support.len() {
                    masses[j] = if j == eos {
                        stop
                    } else {
                        special[j] + lambda * (bp * step[j] - base_taken[j]).max(0.0)
                    };
                }
                let total: f64 = masses.iter().sum();
                let probs: Vec<f64> = if total > 0.0 && total.is_finite() {
                    masses.iter().map(|m| m / total).collect()
                } else {
                    vec![1.0 / support.len() as f64; support.len()]
                };
                NextSymbolDistribution { support: support.iter().cloned().zip(probs).collect() }
            }
        }
    }

    fn log_prob_tokens(&self, context: &Sequence, tokens: &[String], complete: bool) -> f64 {
        self.log_prob_prepared(&self.prepare(context), tokens, complete)
    }

    fn log_prob_prepared(&self, prepared: &Prepared, tokens: &[String], complete: bool) -> f64 {
        let mut lp = 0.0;
        for i in 0..tokens.len() {
            let d = self.next_in(prepared, &tokens[..i]);
            lp += d.prob(&tokens[i]).ln();
            if lp == f64::NEG_INFINITY {
                return lp;
            }
        }
        if complete {
            lp += self.next_in(prepared, tokens).prob(EOS).ln();
        }
        lp
    }

    fn absorb_record(&mut self, rec: &Record) {
        let valences: Vec<Valence> = rec.reactions.iter().map(|r| self.valence(&r.text)).collect();
        let st = self
            .precedents
            .entry(rec.observation.as_str().to_string())
            .or_default()
            .entry(rec.act.text.as_str().to_string())
            .or_default();
        st.count += 1;
        for (r, v) in rec.reactions.iter().zip(valences) {
            match v {
                Valence::Negative => st.negative += 1,
                Valence::Positive => st.positive += 1,
                Valence::Neutral => {}
            }
            *st.reactions.entry(r.text.as_str().to_string()).or_default() += 1;
        }
    }
}

fn index_of(support: &[String], token: &str) -> usize {
    support.binary_search_by(|t| t.as_str().cmp(token)).expect("token present in support")
}

impl PatternBackend for PrecedentBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn is_enumerable(&self) -> bool {
        true
    }

    fn next_distribution_after(&self, context: &Sequence, appended: &[String]) -> Result<NextSymbolDistribution> {
        Ok(self.next_in(&self.prepare(context), appended))
    }

    fn sample_completion(&self, context: &Sequence, max_len: usize, seed: u64) -> Result<Sequence> {
        let prepared = self.prepare(context);
        let mut rng = crate::rng::stream(seed);
        let mut out: Vec<String> = Vec::new();
        while out.len() < max_len {
            let d = self.next_in(&prepared, &out);
            let t = d.sample(&mut rng);
            if t == EOS {
                break;
            }
            out.push(t.to_string());
        }
        Ok(Sequence::from_tokens(&out))
    }

    fn log_prob(&self, context: &Sequence, continuation: &Sequence) -> Result<f64> {
        Ok(self.log_prob_tokens(context, &continuation.tokens(), false))
    }

    fn log_prob_complete(&self, context: &Sequence, continuation: &Sequence) -> Result<f64> {
        Ok(self.log_prob_tokens(context, &continuation.tokens(), true))
    }

    fn log_prob_complete_many(&self, context: &Sequence, continuations: &[Sequence]) -> Result<Vec<f64>> {
        let prepared = self.prepare(context);
        Ok(continuations.iter().map(|c| self.log_prob_prepared(&prepared, &c.tokens(), true)).collect())
    }

    fn consolidate(&mut self, corpus: &Corpus) -> Result<()> {
        for entry in &corpus.entries {
            self.ngrams.add_sequence(&entry.tokens());
            for rec in Record::find_all(entry.as_str()) {
                self.absorb_record(&rec);
            }
        }
        Ok(())
    }

    fn kl_divergence(&self, c1: &Sequence, c2: &Sequence, horizon: usize) -> Result<Estimate> {
        kl_between(self, c1, c2, horizon, self.config.enumeration_budget).map(Estimate::exact)
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        serde_json::to_value(Snapshot {
            config: self.config.clone(),
            ngrams: self.ngrams.clone(),
            precedents: self.precedents.clone(),
        })
        .map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn clone_box(&self) -> Box<dyn PatternBackend> {
        Box::new(self.clone())
    }
}
