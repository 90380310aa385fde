use serde::{Deserialize, Serialize};

use super::{CertifyError, Result};
use crate::backend::{Estimate, PatternBackend};
use crate::seq::{replace_all, ActionRecord, Sequence};

fn default_epsilon() -> f64 {
    0.1
}

fn default_probe() -> String {
    "{u}".to_string()
}

fn default_horizon() -> usize {
    1
}

/// A finite set of candidate actions in one observation, with the two
/// actions being compared and their ε-classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionFrame {
    /// Context label c; pinned into the workspace for contextual checks.
    #[serde(default)]
    pub context_label: Option<Sequence>,
    pub observation: Sequence,
    /// Further observations treated as ε-similar to `observation`.
    #[serde(default)]
    pub observation_variants: Vec<Sequence>,
    pub candidates: Vec<Sequence>,
    pub action: Sequence,
    pub alternative: Sequence,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Explicit partition of the candidates; computed when absent.
    #[serde(default)]
    pub classes: Option<Vec<Vec<Sequence>>>,
    /// When set, the frame is about reactions to this record rather than
    /// about the actor's own action.
    #[serde(default)]
    pub preceding_action: Option<ActionRecord>,
    /// Context used to test two candidates for ε-similarity; `{u}` is
    /// replaced by the first candidate.
    #[serde(default = "default_probe")]
    pub class_probe: String,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

/// Class index of each candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameClasses {
    pub class_of: Vec<usize>,
    pub count: usize,
    pub action_class: usize,
    pub alternative_class: usize,
}

impl FrameClasses {
    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.class_of.len()).filter(|&i| self.class_of[i] == class).collect()
    }
}

/// Outcome of an ε-similarity test; `similar` is `None` when a Monte-Carlo
/// estimate is too noisy to decide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub similar: Option<bool>,
    pub kl: Estimate,
}

/// Whether replacing u by v in c moves the backend by less than `eps` in KL.
pub fn epsilon_similar(
    backend: &dyn PatternBackend,
    u: &Sequence,
    v: &Sequence,
    c: &Sequence,
    eps: f64,
    horizon: usize,
) -> Result<Similarity> {
    if !(eps > 0.0) {
        return Err(CertifyError::Config("epsilon must be positive".into()));
    }
    let edited = replace_all(c, u, v)?;
    let kl = backend.kl_divergence(c, &edited, horizon)?;
    let similar = match kl.std_error {
        None => Some(kl.value < eps),
        Some(se) if kl.value + 2.0 * se < eps => Some(true),
        Some(se) if kl.value - 2.0 * se >= eps => Some(false),
        Some(_) => None,
    };
    Ok(Similarity { similar, kl })
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut j = i;
    while parent[j] != r {
        let next = parent[j];
        parent[j] = r;
        j = next;
    }
    r
}

impl ActionFrame {
    pub fn new(observation: impl Into<Sequence>, candidates: &[&str], action: &str, alternative: &str) -> Self {
        Self {
            context_label: None,
            observation: observation.into(),
            observation_variants: Vec::new(),
            candidates: candidates.iter().map(|c| Sequence::new(c)).collect(),
            action: Sequence::new(action),
            alternative: Sequence::new(alternative),
            epsilon: default_epsilon(),
            classes: None,
            preceding_action: None,
            class_probe: default_probe(),
            horizon: default_horizon(),
        }
    }

    /// Every candidate in its own class.
    pub fn with_singleton_classes(mut self) -> Self {
        self.classes = Some(self.candidates.iter().map(|c| vec![c.clone()]).collect());
        self
    }

    pub fn with_classes(mut self, classes: &[&[&str]]) -> Self {
        self.classes = Some(classes.iter().map(|c| c.iter().map(|s| Sequence::new(s)).collect()).collect());
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.context_label = Some(Sequence::new(label));
        self
    }

    pub fn reacting_to(mut self, record: ActionRecord) -> Self {
        self.preceding_action = Some(record);
        self
    }

    pub fn candidate_index(&self, text: &Sequence) -> Option<usize> {
        let toks = text.tokens();
        self.candidates.iter().position(|c| c.tokens() == toks)
    }

    pub fn observation_matches(&self, obs: &Sequence) -> bool {
        obs == &self.observation || self.observation_variants.iter().any(|v| v == obs)
    }

    /// Validates the frame and fixes its ε-classes. Computing classes needs
    /// a backend.
    pub fn resolve(&self, backend: Option<&dyn PatternBackend>) -> Result<FrameClasses> {
        let invalid = |m: &str| CertifyError::InvalidFrame(m.to_string());
        if self.candidates.is_empty() {
            return Err(invalid("no candidates"));
        }
        let a = self.candidate_index(&self.action).ok_or_else(|| invalid("action is not a candidate"))?;
        let b = self.candidate_index(&self.alternative).ok_or_else(|| invalid("alternative is not a candidate"))?;
        let n = self.candidates.len();
        let class_of = match &self.classes {
            Some(classes) => {
                let mut class_of = vec![usize::MAX; n];
                for (k, class) in classes.iter().enumerate() {
                    for member in class {
                        let i = self.candidate_index(member).ok_or_else(|| invalid("class member is not a candidate"))?;
                        if class_of[i] != usize::MAX {
                            return Err(invalid("candidate appears in two classes"));
                        }
                        class_of[i] = k;
                    }
                }
                if class_of.contains(&usize::MAX) {
                    return Err(invalid("classes do not cover every candidate"));
                }
                class_of
            }
            None => {
                let backend = backend.ok_or_else(|| invalid("classes must be given when no backend is available"))?;
                let mut parent: Vec<usize> = (0..n).collect();
                for i in 0..n {
                    for j in i + 1..n {
                        if self.similar_pair(backend, i, j)? {
                            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                            parent[rj] = ri;
                        }
                    }
                }
                let mut roots: Vec<usize> = Vec::new();
                (0..n)
                    .map(|i| {
                        let r = find(&mut parent, i);
                        match roots.iter().position(|&x| x == r) {
                            Some(k) => k,
                            None => {
                                roots.push(r);
                                roots.len() - 1
                            }
                        }
                    })
                    .collect()
            }
        };
        let count = class_of.iter().copied().max().map_or(0, |m| m + 1);
        if class_of[a] == class_of[b] {
            return Err(invalid("action and alternative fall in the same class"));
        }
        Ok(FrameClasses { action_class: class_of[a], alternative_class: class_of[b], class_of, count })
    }

    /// Both directions of replacement must stay under ε.
    fn similar_pair(&self, backend: &dyn PatternBackend, i: usize, j: usize) -> Result<bool> {
        let (u, v) = (&self.candidates[i], &self.candidates[j]);
        let probe = |x: &Sequence| Sequence::new(self.class_probe.replace("{u}", x.as_str()));
        let forward = epsilon_similar(backend, u, v, &probe(u), self.epsilon, self.horizon)?;
        if forward.similar != Some(true) {
            return Ok(false);
        }
        let backward = epsilon_similar(backend, v, u, &probe(v), self.epsilon, self.horizon)?;
        Ok(backward.similar == Some(true))
    }
}
