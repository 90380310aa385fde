use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BOS, EOS};

/// Order-k n-gram counts with BOS padding and an EOS terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CountsJson", from = "CountsJson")]
pub struct NgramCounts {
    order: usize,
    /// history (k−1 tokens) → next token → count
    table: BTreeMap<Vec<String>, BTreeMap<String, u64>>,
    vocab: BTreeSet<String>,
}

/// Snapshot layout: histories are lists, so the table is a list of rows.
#[derive(Serialize, Deserialize)]
struct CountsJson {
    order: usize,
    vocab: Vec<String>,
    ngrams: Vec<CountsRow>,
}

#[derive(Serialize, Deserialize)]
struct CountsRow {
    history: Vec<String>,
    next: BTreeMap<String, u64>,
}

impl From<NgramCounts> for CountsJson {
    fn from(n: NgramCounts) -> Self {
        CountsJson {
            order: n.order,
            vocab: n.vocab.into_iter().collect(),
            ngrams: n.table.into_iter().map(|(history, next)| CountsRow { history, next }).collect(),
        }
    }
}

impl From<CountsJson> for NgramCounts {
    fn from(j: CountsJson) -> Self {
        NgramCounts {
            order: j.order.max(1),
            vocab: j.vocab.into_iter().collect(),
            table: j.ngrams.into_iter().map(|r| (r.history, r.next)).collect(),
        }
    }
}

impl NgramCounts {
    pub fn new(order: usize) -> Self {
        Self { order: order.max(1), table: BTreeMap::new(), vocab: BTreeSet::new() }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Adds tokens to the vocabulary without counting them.
    pub fn register<I: IntoIterator<Item = String>>(&mut self, tokens: I) {
        self.vocab.extend(tokens);
    }

    pub fn add_sequence(&mut self, tokens: &[String]) {
        let h = self.order - 1;
        let mut padded: Vec<String> = vec![BOS.to_string(); h];
        padded.extend(tokens.iter().cloned());
        padded.push(EOS.to_string());
        for i in h..padded.len() {
            let hist = padded[i - h..i].to_vec();
            *self.table.entry(hist).or_default().entry(padded[i].clone()).or_default() += 1;
        }
        self.vocab.extend(tokens.iter().cloned());
    }

    /// The last k−1 tokens of `preceding`, BOS padded.
    pub fn history(&self, preceding: &[String]) -> Vec<String> {
        let h = self.order - 1;
        let mut out = vec![BOS.to_string(); h.saturating_sub(preceding.len())];
        let start = preceding.len().saturating_sub(h);
        out.extend(preceding[start..].iter().cloned());
        out
    }

    pub fn count(&self, history: &[String], token: &str) -> u64 {
        self.table.get(history).and_then(|m| m.get(token)).copied().unwrap_or(0)
    }

    pub fn followers(&self, history: &[String]) -> Option<&BTreeMap<String, u64>> {
        self.table.get(history)
    }

    /// Add-λ probabilities of every token in `support` (sorted) after
    /// `history`. Counts of tokens outside the support are ignored. Falls
    /// back to uniform when there is neither count nor smoothing mass.
    pub fn smoothed(&self, history: &[String], support: &[String], lambda: f64) -> Vec<f64> {
        let followers = self.table.get(history);
        let counts: Vec<f64> = support
            .iter()
            .map(|t| followers.and_then(|m| m.get(t)).copied().unwrap_or(0) as f64)
            .collect();
        let total: f64 = counts.iter().sum::<f64>() + lambda * support.len() as f64;
        if total <= 0.0 {
            let u = 1.0 / support.len().max(1) as f64;
            return vec![u; support.len()];
        }
        counts.iter().map(|c| (c + lambda) / total).collect()
    }
}
