use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ActorError;
use crate::seq::Sequence;

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z]+(?::[0-9]+)?)\}").unwrap())
}

/// Template with `{name}` placeholders. Known names: `observation`,
/// `assembly:k` (1-based), `assemblies`, `retrieved`, `query`, `self`,
/// `pinned`, `slot`, `options`, `record`, `action`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FramingFunction {
    pub template: String,
}

impl FramingFunction {
    pub fn new(template: impl Into<String>) -> Self {
        Self { template: template.into() }
    }

    pub fn placeholders(&self) -> Vec<String> {
        placeholder().captures_iter(&self.template).map(|c| c[1].to_string()).collect()
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<Sequence, ActorError> {
        let mut missing = None;
        let out = placeholder().replace_all(&self.template, |c: &regex::Captures| match vars.get(&c[1]) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert_with(|| c[1].to_string());
                String::new()
            }
        });
        match missing {
            Some(name) => Err(ActorError::MissingPlaceholder(name)),
            None => Ok(Sequence::new(out.as_ref())),
        }
    }
}

impl From<&str> for FramingFunction {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}
