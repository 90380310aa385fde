//! Counterfactual memory edits. Every function returns a new memory and
//! leaves its input untouched.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ActionFrame, CertifyError, FrameClasses, Result};
use crate::actor::Memory;
use crate::rng;
use crate::seq::{ActorId, Clause, Record, Sequence};

/// A clause inside a memory entry that the frame's action class matches.
/// Clause 0 is the attributed action; later clauses are reactions.
#[derive(Debug, Clone, PartialEq)]
pub struct EditTarget {
    pub position: usize,
    pub clause: usize,
    pub record: Record,
}

/// Maps an observation to the context label the actor would assign it.
pub trait ContextLabeler: Send + Sync {
    fn label(&self, observation: &Sequence) -> Sequence;
}

/// Gives every observation the same label.
pub struct ConstantLabel(pub Sequence);

impl ContextLabeler for ConstantLabel {
    fn label(&self, _observation: &Sequence) -> Sequence {
        self.0.clone()
    }
}

/// Labels nothing in particular; used with a matching constant to let every
/// record through the context filter.
pub struct PassAll;

impl ContextLabeler for PassAll {
    fn label(&self, _observation: &Sequence) -> Sequence {
        Sequence::empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    pub pattern: String,
    pub label: String,
}

/// First matching regular expression decides the label.
#[derive(Debug, Clone)]
pub struct LabelTable {
    rules: Vec<(Regex, Sequence)>,
    fallback: Sequence,
}

impl LabelTable {
    pub fn new(rules: &[LabelRule], fallback: &str) -> Result<Self> {
        let rules = rules
            .iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, Sequence::new(&r.label)))
                    .map_err(|e| CertifyError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rules, fallback: Sequence::new(fallback) })
    }
}

impl ContextLabeler for LabelTable {
    fn label(&self, observation: &Sequence) -> Sequence {
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(observation.as_str()))
            .map_or_else(|| self.fallback.clone(), |(_, l)| l.clone())
    }
}

fn in_action_class(frame: &ActionFrame, classes: &FrameClasses, text: &Sequence) -> bool {
    frame.candidate_index(text).is_some_and(|i| classes.class_of[i] == classes.action_class)
}

/// Every clause of every stored record that matches the frame's action
/// class, in memory order.
pub fn matching_targets(memory: &Memory, frame: &ActionFrame, classes: &FrameClasses) -> Vec<EditTarget> {
    let mut out = Vec::new();
    for (position, entry) in memory.entries().iter().enumerate() {
        let Ok(record) = Record::parse(entry.text.as_str()) else { continue };
        if !frame.observation_matches(&record.observation) {
            continue;
        }
        match &frame.preceding_action {
            None => {
                if in_action_class(frame, classes, &record.act.text) {
                    out.push(EditTarget { position, clause: 0, record });
                }
            }
            Some(pre) => {
                if record.act.text != pre.action {
                    continue;
                }
                for (k, r) in record.reactions.iter().enumerate() {
                    if in_action_class(frame, classes, &r.text) {
                        out.push(EditTarget { position, clause: k + 1, record: record.clone() });
                    }
                }
            }
        }
    }
    out
}

fn apply(memory: &Memory, targets: &[&EditTarget], replacement: &Sequence) -> Memory {
    let mut edited: BTreeMap<usize, Record> = BTreeMap::new();
    for t in targets {
        let rec = edited.entry(t.position).or_insert_with(|| t.record.clone());
        if t.clause == 0 {
            // [õ, j:ã] becomes [õ, j:a']
            rec.act.text = replacement.clone();
            rec.reactions.clear();
        } else if let Some(r) = rec.reactions.get_mut(t.clause - 1) {
            r.text = replacement.clone();
        }
    }
    let replacements = edited.into_iter().map(|(p, r)| (p, r.to_sequence())).collect();
    memory.with_replaced(&replacements)
}

fn check_alternative(frame: &ActionFrame, classes: &FrameClasses) -> Result<()> {
    if in_action_class(frame, classes, &frame.alternative) {
        return Err(CertifyError::EditRejected);
    }
    Ok(())
}

/// Replaces every matching record's action with the frame's alternative.
pub fn edit_context_free(memory: &Memory, frame: &ActionFrame, classes: &FrameClasses) -> Result<Memory> {
    check_alternative(frame, classes)?;
    let targets = matching_targets(memory, frame, classes);
    if targets.is_empty() {
        return Err(CertifyError::NoMatchingRecords);
    }
    Ok(apply(memory, &targets.iter().collect::<Vec<_>>(), &frame.alternative))
}

/// Number of matching records considered for fraction `f`: ⌈f·n⌉.
pub(crate) fn considered(f: f64, n: usize) -> usize {
    (((f * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Shuffles the matching records with `seed`, considers the first ⌈f·N⌉
/// and edits those whose observation carries context label `c`. Returns
/// the new memory and the number of edits applied.
pub fn edit_contextual(
    memory: &Memory,
    frame: &ActionFrame,
    classes: &FrameClasses,
    labeler: &dyn ContextLabeler,
    c: &Sequence,
    f: f64,
    seed: u64,
) -> Result<(Memory, usize)> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(CertifyError::Config(format!("fraction {f} outside (0, 1]")));
    }
    check_alternative(frame, classes)?;
    let mut targets = matching_targets(memory, frame, classes);
    if targets.is_empty() {
        return Err(CertifyError::NoMatchingRecords);
    }
    targets.shuffle(&mut rng::stream(seed));
    let take = considered(f, targets.len());
    let chosen: Vec<&EditTarget> =
        targets[..take].iter().filter(|t| &labeler.label(&t.record.observation) == c).collect();
    Ok((apply(memory, &chosen, &frame.alternative), chosen.len()))
}

/// Appends the reaction `sanctioner: s` to `count` matching records chosen
/// with `seed`.
pub fn insert_sanction(
    memory: &Memory,
    frame: &ActionFrame,
    classes: &FrameClasses,
    sanctioner: &ActorId,
    sanction: &Sequence,
    count: usize,
    seed: u64,
) -> Result<Memory> {
    let mut targets: Vec<EditTarget> =
        matching_targets(memory, frame, classes).into_iter().filter(|t| t.clause == 0).collect();
    if targets.len() < count || targets.is_empty() {
        return Err(CertifyError::InsufficientMatches { needed: count.max(1), found: targets.len() });
    }
    targets.shuffle(&mut rng::stream(seed));
    let replacements = targets[..count]
        .iter()
        .map(|t| {
            let mut rec = t.record.clone();
            rec.reactions.push(Clause { actor: sanctioner.clone(), text: Sequence::new(sanction.single_line()) });
            (t.position, rec.to_sequence())
        })
        .collect();
    Ok(memory.with_replaced(&replacements))
}
