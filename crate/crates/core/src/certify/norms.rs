use serde::{Deserialize, Serialize};

use super::report::Verdict;
use super::sensitivity::{action_class_prob, certify_reproduction, resolve, ConventionOptions};
use super::{ActionFrame, CertifyError, Result};
use crate::actor::Actor;
use crate::backend::Estimate;
use crate::rng;
use crate::seq::{ActorId, Record, Sequence};

/// Product over actors of the class probability of each actor's part of
/// the joint action. Actors, joint parts and frames line up by position.
pub fn collective_policy_prob(
    actors: &[Actor],
    joint: &[(ActorId, Sequence)],
    frames: &[ActionFrame],
    seed: u64,
) -> Result<Estimate> {
    if actors.is_empty() || actors.len() != joint.len() || actors.len() != frames.len() {
        return Err(CertifyError::MismatchedActors);
    }
    let mut factors = Vec::with_capacity(actors.len());
    for (k, ((actor, (id, action)), frame)) in actors.iter().zip(joint).zip(frames).enumerate() {
        if &actor.id != id {
            return Err(CertifyError::MismatchedActors);
        }
        let classes = resolve(actor, frame)?;
        let i = frame
            .candidate_index(action)
            .ok_or_else(|| CertifyError::InvalidFrame(format!("{action} is not a candidate for {id}")))?;
        let probs = action_class_prob(actor, frame, &classes, frame.context_label.as_ref(), rng::derive(seed, &[&k]))?;
        factors.push(probs[classes.class_of[i]]);
    }
    Ok(product(&factors))
}

/// Product of estimates; the error follows the first-order delta method.
fn product(factors: &[Estimate]) -> Estimate {
    let value = factors.iter().fold(1.0, |acc, e| acc * e.value);
    if factors.iter().all(Estimate::is_exact) {
        return Estimate::exact(value);
    }
    let var: f64 = factors
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let others: f64 = factors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, f)| f.value).product();
            (others * e.std_error.unwrap_or(0.0)).powi(2)
        })
        .sum();
    Estimate { value, std_error: Some(var.sqrt()) }
}

/// One tick of a trace: the population as it stood, what each actor did
/// and the frame each choice is measured in.
pub struct CollectiveTick<'a> {
    pub actors: &'a [Actor],
    pub joint: &'a [(ActorId, Sequence)],
    pub frames: &'a [ActionFrame],
}

/// Per-tick collective probabilities and their product over the trace.
pub fn collective_policy_over_ticks(ticks: &[CollectiveTick], seed: u64) -> Result<(Vec<Estimate>, Estimate)> {
    let per = ticks
        .iter()
        .enumerate()
        .map(|(t, tick)| collective_policy_prob(tick.actors, tick.joint, tick.frames, rng::derive(seed, &[&t])))
        .collect::<Result<Vec<_>>>()?;
    let total = product(&per);
    Ok((per, total))
}

/// What one actor contributes to one sanctioning pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorEvidence {
    pub actor: ActorId,
    pub pattern: usize,
    /// `None` when the certification was inconclusive.
    pub reproduces: Option<bool>,
    pub f_min: Option<f64>,
    /// Some other actor remembers this actor applying the sanction.
    pub conveyer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormClassification {
    pub normative: bool,
    pub verdict: Verdict,
    /// Pattern with the widest certified scope.
    pub pattern: Option<usize>,
    pub scope: Vec<ActorId>,
    pub fraction: f64,
    pub threshold: f64,
    /// A sanctioning convention held by a few actors only.
    pub narrow_scope: bool,
    pub evidence: Vec<ActorEvidence>,
}

/// Settings for [`classify_normative`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormOptions {
    #[serde(default = "generic")]
    pub generic_threshold: f64,
    /// Reproduction threshold r for each sanctioning pattern.
    #[serde(default = "half")]
    pub r: f64,
    pub f_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn generic() -> f64 {
    0.9
}

fn half() -> f64 {
    0.5
}

impl NormOptions {
    pub fn new(f_grid: Vec<f64>) -> Self {
        Self { generic_threshold: generic(), r: half(), f_grid, seed: 0 }
    }
}

fn conveys(population: &[Actor], who: usize, frame: &ActionFrame, sanctions: &[Sequence]) -> bool {
    let id = &population[who].id;
    let Some(pre) = &frame.preceding_action else { return false };
    population.iter().enumerate().filter(|(k, _)| *k != who).any(|(_, other)| {
        other.memory.texts().any(|t| {
            Record::parse(t.as_str()).is_ok_and(|rec| {
                frame.observation_matches(&rec.observation)
                    && rec.act.text == pre.action
                    && rec.reactions.iter().any(|c| &c.actor == id && sanctions.iter().any(|s| s.tokens() == c.text.tokens()))
            })
        })
    })
}

/// Each pattern is a reaction frame whose action is the sanction (negative
/// toward the preceding action, or positive toward the encouraged one).
/// An actor is in a pattern's scope when it reproduces the sanction due to
/// the weight of precedent and others remember it sanctioning. The behavior
/// is normative when some pattern's scope covers at least the generic
/// threshold of the population.
pub fn classify_normative(population: &[Actor], patterns: &[ActionFrame], opts: &NormOptions) -> Result<NormClassification> {
    let n = population.len();
    if n < 2 {
        return Err(CertifyError::Config("population needs at least two actors".into()));
    }
    if !(opts.generic_threshold > 0.0 && opts.generic_threshold <= 1.0) {
        return Err(CertifyError::Config("generic threshold must lie in (0, 1]".into()));
    }
    if patterns.iter().any(|p| p.preceding_action.is_none()) {
        return Err(CertifyError::InvalidFrame("sanctioning patterns must be reaction frames".into()));
    }
    let mut evidence = Vec::new();
    // (pattern, certain scope, undecided count)
    let mut tallies = Vec::new();
    for (p, frame) in patterns.iter().enumerate() {
        let classes = population.first().map(|a| resolve(a, frame)).transpose()?.expect("population is nonempty");
        let sanctions: Vec<Sequence> =
            classes.members(classes.action_class).into_iter().map(|i| frame.candidates[i].clone()).collect();
        let mut scope = Vec::new();
        let mut undecided = 0;
        for (k, actor) in population.iter().enumerate() {
            let conveyer = conveys(population, k, frame, &sanctions);
            let copts = ConventionOptions::new(&opts.f_grid, rng::derive(opts.seed, &[&p, &k]));
            let (reproduces, f_min) = match certify_reproduction(actor, frame, opts.r, &copts) {
                Ok(rep) => match rep.report.verdict {
                    Verdict::Certified => (Some(true), rep.f_min),
                    Verdict::Refuted => (Some(false), rep.f_min),
                    Verdict::Inconclusive => (None, rep.f_min),
                },
                Err(CertifyError::NotReproduced { .. } | CertifyError::NoMatchingRecords) => (Some(false), None),
                Err(e) => return Err(e),
            };
            match (reproduces, conveyer) {
                (Some(true), true) => scope.push(actor.id.clone()),
                (None, true) => undecided += 1,
                _ => {}
            }
            evidence.push(ActorEvidence { actor: actor.id.clone(), pattern: p, reproduces, f_min, conveyer });
        }
        tallies.push((p, scope, undecided));
    }
    let need = opts.generic_threshold * n as f64 - 1e-12;
    let best = tallies.iter().max_by_key(|(p, s, _)| (s.len(), std::cmp::Reverse(*p)));
    let certain = tallies.iter().any(|(_, s, _)| s.len() as f64 >= need);
    let possible = tallies.iter().any(|(_, s, u)| (s.len() + u) as f64 >= need);
    let verdict = if certain {
        Verdict::Certified
    } else if possible {
        Verdict::Inconclusive
    } else {
        Verdict::Refuted
    };
    let (pattern, scope) = match best {
        Some((p, s, _)) if !s.is_empty() => (Some(*p), s.clone()),
        _ => (None, Vec::new()),
    };
    let fraction = scope.len() as f64 / n as f64;
    Ok(NormClassification {
        normative: certain,
        verdict,
        pattern,
        narrow_scope: !certain && scope.len() >= 2,
        scope,
        fraction,
        threshold: opts.generic_threshold,
        evidence,
    })
}
