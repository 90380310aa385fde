use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::seq::Sequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub index: u64,
    pub text: Sequence,
}

/// Append-only store of sequences. Edits and lesions build new values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Memory {
    entries: Vec<MemoryEntry>,
    next_index: u64,
    /// Token bags of `entries`, rebuilt lazily after deserialization.
    #[serde(skip)]
    bags: Vec<Bag>,
}

impl PartialEq for Memory {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.next_index == other.next_index
    }
}

impl Eq for Memory {}

type Bag = BTreeMap<String, f64>;

fn bag(seq: &Sequence) -> Bag {
    let mut m = BTreeMap::new();
    for t in seq.tokens() {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine similarity of bag-of-token count vectors; 0 if either is empty.
pub fn similarity(a: &Sequence, b: &Sequence) -> f64 {
    cosine(&bag(a), &bag(b))
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Sequence>,
    {
        let mut m = Self::new();
        for t in texts {
            m.append(t.into());
        }
        m
    }

    pub fn append(&mut self, text: Sequence) -> u64 {
        let index = self.next_index;
        if self.bags.len() == self.entries.len() {
            self.bags.push(bag(&text));
        }
        self.entries.push(MemoryEntry { index, text });
        self.next_index += 1;
        index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn texts(&self) -> impl Iterator<Item = &Sequence> {
        self.entries.iter().map(|e| &e.text)
    }

    /// Similarity of every entry to `query`, in insertion order.
    pub fn scores(&self, query: &Sequence) -> Vec<f64> {
        let q = bag(query);
        if self.bags.len() == self.entries.len() {
            self.bags.iter().map(|b| cosine(b, &q)).collect()
        } else {
            self.entries.iter().map(|e| cosine(&bag(&e.text), &q)).collect()
        }
    }

    /// Entry most similar to `query`; ties go to the most recent.
    pub fn retrieve(&self, query: &Sequence) -> Option<&MemoryEntry> {
        let scores = self.scores(query);
        let mut best: Option<usize> = None;
        for (i, s) in scores.iter().enumerate() {
            if best.map_or(true, |b| *s >= scores[b]) {
                best = Some(i);
            }
        }
        best.map(|i| &self.entries[i])
    }

    /// The `limit` best entries (all entries with positive similarity when
    /// `limit` is `None`), returned in insertion order.
    pub fn retrieve_many(&self, query: &Sequence, limit: Option<usize>) -> Vec<&MemoryEntry> {
        let scores = self.scores(query);
        let mut picked: Vec<usize> = match limit {
            None => (0..scores.len()).filter(|&i| scores[i] > 0.0).collect(),
            Some(n) => {
                let mut order: Vec<usize> = (0..scores.len()).collect();
                // higher score first, then more recent
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
                order.truncate(n);
                order
            }
        };
        picked.sort_unstable();
        picked.into_iter().map(|i| &self.entries[i]).collect()
    }

    /// New memory without the entries matching `predicate`.
    pub fn lesion<F: Fn(&MemoryEntry) -> bool>(&self, predicate: F) -> Memory {
        let entries: Vec<MemoryEntry> = self.entries.iter().filter(|e| !predicate(e)).cloned().collect();
        let bags = entries.iter().map(|e| bag(&e.text)).collect();
        Memory { entries, next_index: self.next_index, bags }
    }

    /// New memory with the entry at `position` replaced.
    pub fn with_replaced(&self, replacements: &BTreeMap<usize, Sequence>) -> Memory {
        let mut out = self.clone();
        for (pos, text) in replacements {
            if let Some(e) = out.entries.get_mut(*pos) {
                e.text = text.clone();
                if let Some(b) = out.bags.get_mut(*pos) {
                    *b = bag(text);
                }
            }
        }
        out
    }

    /// All entries joined by newlines.
    pub fn dump(&self) -> Sequence {
        Sequence::join_lines(self.texts())
    }
}
