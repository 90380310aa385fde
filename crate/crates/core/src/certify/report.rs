use serde::{Deserialize, Serialize};

use crate::backend::Estimate;

/// Slack allowed on strict inequalities between exact probabilities.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InequalityStatus {
    Holds,
    Fails,
    /// Monte-Carlo error too large to call either way.
    Undecided,
}

/// One checked `lhs < rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub status: InequalityStatus,
    /// Whether the verdict depends on it; reported-only checks do not.
    pub required: bool,
}

impl Inequality {
    pub fn less_than(name: impl Into<String>, lhs: Estimate, rhs: Estimate, required: bool) -> Self {
        let gap = rhs.value - lhs.value;
        let se = (lhs.std_error.unwrap_or(0.0).powi(2) + rhs.std_error.unwrap_or(0.0).powi(2)).sqrt();
        let status = if lhs.is_exact() && rhs.is_exact() {
            if gap > TOLERANCE {
                InequalityStatus::Holds
            } else {
                InequalityStatus::Fails
            }
        } else if gap > 2.0 * se && gap > TOLERANCE {
            InequalityStatus::Holds
        } else if gap <= -2.0 * se || (se == 0.0 && gap <= TOLERANCE) {
            InequalityStatus::Fails
        } else {
            InequalityStatus::Undecided
        };
        Self { name: name.into(), lhs, rhs, status, required }
    }

    pub fn holds(&self) -> bool {
        self.status == InequalityStatus::Holds
    }
}

/// Probabilities of the two compared classes after editing a fraction `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub f: f64,
    pub edits: usize,
    pub p_action: Estimate,
    pub p_alternative: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub kind: String,
    pub verdict: Verdict,
    pub inequalities: Vec<Inequality>,
    #[serde(default)]
    pub grid: Vec<GridPoint>,
    /// Largest standard error among the estimates; absent when exact.
    #[serde(default)]
    pub estimator_error: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub f_min: Option<f64>,
    /// Smallest successive gain in p(a') along the grid.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl CertificationReport {
    /// Verdict from the required inequalities: any failure refutes, any
    /// undecided check leaves the outcome open.
    pub fn from_inequalities(kind: &str, inequalities: Vec<Inequality>) -> Self {
        let required = || inequalities.iter().filter(|i| i.required);
        let verdict = if required().any(|i| i.status == InequalityStatus::Fails) {
            Verdict::Refuted
        } else if required().any(|i| i.status == InequalityStatus::Undecided) {
            Verdict::Inconclusive
        } else {
            Verdict::Certified
        };
        let estimator_error = inequalities
            .iter()
            .flat_map(|i| [i.lhs.std_error, i.rhs.std_error])
            .flatten()
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
        Self {
            kind: kind.to_string(),
            verdict,
            inequalities,
            grid: Vec::new(),
            estimator_error,
            threshold: None,
            f_min: None,
            delta: None,
            notes: Vec::new(),
        }
    }

    pub fn inconclusive(kind: &str, note: impl Into<String>) -> Self {
        let mut r = Self::from_inequalities(kind, Vec::new());
        r.verdict = Verdict::Inconclusive;
        r.notes.push(note.into());
        r
    }

    pub fn inequality(&self, name: &str) -> Option<&Inequality> {
        self.inequalities.iter().find(|i| i.name == name)
    }
}
