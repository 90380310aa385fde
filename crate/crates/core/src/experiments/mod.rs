//! Desk-scale experiments: norm stability, norm adoption, tipping points,
//! consolidation with virtual lesions, and preference polarization. Each
//! runs a treatment arm and a negative-control ablation.

mod dynamics;
mod lesion;
mod metrics;

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::ActorError;
use crate::backend::{BackendConfig, BackendError, BackendKind};
use crate::prefs::{PolarizationConfig, PrefsError};
use crate::seq::SeqError;

pub use dynamics::{critical_fraction, norm_adoption, norm_stability, tipping_point};
pub use lesion::{consolidation_lesion, lesion_cells, total_variation, LesionCells};
pub use metrics::{MetricRow, MetricsTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("malformed metrics: {0}")]
    Metrics(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prefs(#[from] PrefsError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NormStability,
    NormAdoption,
    TippingPoint,
    ConsolidationLesion,
    Polarization,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::NormStability => "norm-stability",
            ExperimentKind::NormAdoption => "norm-adoption",
            ExperimentKind::TippingPoint => "tipping-point",
            ExperimentKind::ConsolidationLesion => "consolidation-lesion",
            ExperimentKind::Polarization => "polarization",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| ExperimentError::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Ablation,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Ablation => "ablation",
        }
    }
}

/// A context in which one action is the norm and another violates it,
/// plus the reactions observers choose between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSetting {
    pub observation: String,
    pub norm_action: String,
    pub violation_action: String,
    pub sanction: String,
    pub acknowledgement: String,
    /// Per-actor seed records of the norm action, each acknowledged.
    pub seed_norm: usize,
    /// Per-actor seed records of the violation, each sanctioned.
    pub seed_violation: usize,
    /// Chance that an actor violates regardless of its policy.
    pub temptation: f64,
}

impl Default for NormSetting {
    fn default() -> Self {
        Self {
            observation: "the queue forms".into(),
            norm_action: "wait in line".into(),
            violation_action: "cut in line".into(),
            sanction: "frowns".into(),
            acknowledgement: "nods".into(),
            seed_norm: 18,
            seed_violation: 2,
            temptation: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewcomerSetting {
    /// Unsanctioned violation records the newcomer starts with.
    pub contrary: usize,
}

impl Default for NewcomerSetting {
    fn default() -> Self {
        Self { contrary: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TippingSetting {
    /// Minority fractions q swept, strictly increasing within [0, 1].
    pub fractions: Vec<f64>,
    /// Precedents each actor starts with for its own side.
    pub seed_count: usize,
}

impl Default for TippingSetting {
    fn default() -> Self {
        Self { fractions: (0..=8).map(|k| k as f64 / 8.0).collect(), seed_count: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LesionSetting {
    pub observation: String,
    pub candidates: Vec<String>,
    /// Actions already in memory before the rule arrives.
    pub baseline: Vec<String>,
    /// Explicit rule pinned during practice; `null` keeps only the
    /// practice memories.
    pub rule: Option<String>,
    /// Practice actions given directly instead of chosen under the rule.
    pub practice_records: Vec<String>,
    /// Ticks the actor acts while the rule is pinned.
    pub practice: usize,
    /// Times each practice memory is replayed into the backend.
    pub repetitions: usize,
}

impl Default for LesionSetting {
    fn default() -> Self {
        Self {
            observation: "lunch is served".into(),
            candidates: vec!["eat apple".into(), "eat banana".into()],
            baseline: vec!["eat apple".into(), "eat apple".into(), "eat banana".into()],
            rule: Some("RULE: avoid eat apple".into()),
            practice_records: Vec::new(),
            practice: 10,
            repetitions: 50,
        }
    }
}

fn default_population() -> usize {
    8
}

fn default_horizon() -> usize {
    50
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_arms() -> Vec<Arm> {
    vec![Arm::Treatment, Arm::Ablation]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "BackendConfig::weighted")]
    pub backend: BackendConfig,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub norm: NormSetting,
    #[serde(default)]
    pub newcomer: NewcomerSetting,
    #[serde(default)]
    pub tipping: TippingSetting,
    #[serde(default)]
    pub lesion: LesionSetting,
    #[serde(default = "PolarizationConfig::four_identities")]
    pub polarization: PolarizationConfig,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.seeds.is_empty() || self.arms.is_empty() {
            return bad("seeds and arms must be nonempty".into());
        }
        self.backend.validate()?;
        if self.backend.kind == BackendKind::Remote {
            return bad("experiments need an enumerable backend".into());
        }
        match self.kind {
            ExperimentKind::NormStability | ExperimentKind::NormAdoption | ExperimentKind::TippingPoint => {
                if self.population < 2 {
                    return bad(format!("population {} < 2", self.population));
                }
                let n = &self.norm;
                if !(0.0..=1.0).contains(&n.temptation) {
                    return bad(format!("temptation {} outside [0, 1]", n.temptation));
                }
                let texts = [&n.observation, &n.norm_action, &n.violation_action, &n.sanction, &n.acknowledgement];
                if texts.iter().any(|t| t.trim().is_empty()) {
                    return bad("norm setting texts must be nonempty".into());
                }
                if crate::seq::tokenize(&n.norm_action) == crate::seq::tokenize(&n.violation_action)
                    || crate::seq::tokenize(&n.sanction) == crate::seq::tokenize(&n.acknowledgement)
                {
                    return bad("norm and violation, sanction and acknowledgement must differ".into());
                }
                if self.kind == ExperimentKind::TippingPoint {
                    let f = &self.tipping.fractions;
                    if f.is_empty() || f.iter().any(|q| !(0.0..=1.0).contains(q)) || f.windows(2).any(|w| w[0] >= w[1]) {
                        return bad("tipping fractions must be a nonempty increasing grid in [0, 1]".into());
                    }
                }
            }
            ExperimentKind::ConsolidationLesion => {
                let l = &self.lesion;
                if l.candidates.len() < 2 {
                    return bad("lesion needs two or more candidates".into());
                }
                if l.rule.is_none() && l.practice_records.is_empty() {
                    return bad("lesion needs a rule or practice records".into());
                }
            }
            ExperimentKind::Polarization => self.polarization.validate()?,
        }
        Ok(())
    }
}

/// Runs `f` over `jobs` on `workers` threads (all cores when `None`) and
/// concatenates the tables in job order.
pub(crate) fn run_jobs<T, F>(jobs: Vec<T>, workers: Option<usize>, f: F) -> Result<MetricsTable>
where
    T: Send,
    F: Fn(T) -> Result<MetricsTable> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Config(e.to_string()))?;
    let parts: Vec<Result<MetricsTable>> = pool.install(|| jobs.into_par_iter().map(&f).collect());
    let mut table = MetricsTable::new();
    for p in parts {
        table.extend(p?);
    }
    Ok(table)
}

fn polarization(config: &ExperimentConfig, workers: Option<usize>) -> Result<MetricsTable> {
    run_jobs(config.seeds.clone(), workers, |seed| {
        let pc = PolarizationConfig { seed, ..config.polarization.clone() };
        let mut t = MetricsTable::new();
        for r in crate::prefs::polarization_experiment(&pc)? {
            let point = format!("{}:{}", r.trial, r.item);
            t.push("polarization", &r.mode, seed, &point, "probability", r.probability);
            t.push("polarization", &r.mode, seed, &point, "bimodality", r.bimodality);
        }
        Ok(t)
    })
}

/// Validates the config and runs its experiment.
pub fn run_experiment(config: &ExperimentConfig, workers: Option<usize>) -> Result<MetricsTable> {
    config.validate()?;
    let table = match config.kind {
        ExperimentKind::NormStability => norm_stability(config, workers)?,
        ExperimentKind::NormAdoption => norm_adoption(config, workers)?,
        ExperimentKind::TippingPoint => tipping_point(config, workers)?,
        ExperimentKind::ConsolidationLesion => consolidation_lesion(config, workers)?,
        ExperimentKind::Polarization => polarization(config, workers)?,
    };
    table.validate()?;
    Ok(table)
}
