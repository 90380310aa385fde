//! Preference relations elicited from a backend under a contextual
//! assembly, their cycle and IIA diagnostics, and polarization of a learner
//! that only hears top choices.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{options_line, BackendConfig, BackendError, Corpus, PatternBackend};
use crate::rng;
use crate::seq::Sequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrefsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no option has positive probability in {0:?}")]
    Degenerate(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub type Result<T> = std::result::Result<T, PrefsError>;

/// Probabilities are compared with this slack; closer values are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Id of the actor whose choice slot is completed during elicitation.
pub const CHOOSER: &str = "chooser";

/// Observation naming a menu: `a or b or c?`.
pub fn menu_observation<S: AsRef<str>>(menu: &[S]) -> String {
    let items: Vec<&str> = menu.iter().map(AsRef::as_ref).collect();
    format!("{}?", items.join(" or "))
}

/// Forced-choice context: the assembly, the options line and an open
/// choice record.
pub fn choice_context<S: AsRef<str>>(u: &Sequence, menu: &[S]) -> Sequence {
    let mut lines = Vec::new();
    if !u.as_str().is_empty() {
        lines.push(u.as_str().to_string());
    }
    lines.push(options_line(menu));
    lines.push(format!("[{}, {CHOOSER}:", menu_observation(menu)));
    Sequence::new(lines.join("\n"))
}

/// Frame-normalized probability of each menu item as the chooser's pick.
pub fn menu_probabilities<S: AsRef<str>>(backend: &dyn PatternBackend, u: &Sequence, menu: &[S]) -> Result<Vec<f64>> {
    let ctx = choice_context(u, menu);
    let options: Vec<Sequence> = menu.iter().map(|x| Sequence::new(x.as_ref())).collect();
    let lps = backend.log_prob_complete_many(&ctx, &options)?;
    let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(PrefsError::Degenerate(ctx.to_string()));
    }
    let w: Vec<f64> = lps.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    First,
    Second,
    Tie,
}

fn direction(p0: f64, p1: f64) -> Direction {
    if p0 > p1 + TIE_TOLERANCE {
        Direction::First
    } else if p1 > p0 + TIE_TOLERANCE {
        Direction::Second
    } else {
        Direction::Tie
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseChoice {
    pub x0: String,
    pub x1: String,
    pub p0: f64,
    pub p1: f64,
    pub preferred: Direction,
    pub symmetrized: bool,
}

/// Asks which of two options the chooser takes in context `u`. With
/// `symmetrize`, both presentation orders are averaged.
pub fn elicit_pairwise(backend: &dyn PatternBackend, u: &Sequence, x0: &str, x1: &str, symmetrize: bool) -> Result<PairwiseChoice> {
    if Sequence::new(x0).tokens() == Sequence::new(x1).tokens() {
        return Err(PrefsError::InvalidInput("options must differ".into()));
    }
    let fwd = menu_probabilities(backend, u, &[x0, x1])?;
    let (p0, p1) = if symmetrize {
        let back = menu_probabilities(backend, u, &[x1, x0])?;
        ((fwd[0] + back[1]) / 2.0, (fwd[1] + back[0]) / 2.0)
    } else {
        (fwd[0], fwd[1])
    };
    Ok(PairwiseChoice { x0: x0.into(), x1: x1.into(), p0, p1, preferred: direction(p0, p1), symmetrized: symmetrize })
}

/// `winner ≽ loser`; strict unless the two were tied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub winner: String,
    pub loser: String,
    pub p_winner: f64,
    pub strict: bool,
}

/// Elicited binary relation over a finite item set. Ties appear as two
/// weak edges. Cycles are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRelation {
    pub items: Vec<String>,
    pub context: Sequence,
    pub edges: Vec<Edge>,
    /// Pairs in the order they were elicited, each as presented.
    pub elicitation_order: Vec<(String, String)>,
}

impl PreferenceRelation {
    /// Builds a relation from strict `(winner, loser)` pairs.
    pub fn from_strict(items: &[&str], pairs: &[(&str, &str)]) -> Self {
        Self {
            items: items.iter().map(|s| s.to_string()).collect(),
            context: Sequence::empty(),
            edges: pairs
                .iter()
                .map(|(w, l)| Edge { winner: w.to_string(), loser: l.to_string(), p_winner: 1.0, strict: true })
                .collect(),
            elicitation_order: Vec::new(),
        }
    }

    pub fn prefers(&self, x: &str, y: &str) -> bool {
        self.edges.iter().any(|e| e.strict && e.winner == x && e.loser == y)
    }
}

/// Elicits every unordered pair of `items` under `u`, in index order.
pub fn elicit_relation(backend: &dyn PatternBackend, u: &Sequence, items: &[String], symmetrize: bool) -> Result<PreferenceRelation> {
    if items.len() < 2 {
        return Err(PrefsError::InvalidInput("need at least two items".into()));
    }
    if items.iter().collect::<BTreeSet<_>>().len() != items.len() {
        return Err(PrefsError::InvalidInput("items must be distinct".into()));
    }
    let mut edges = Vec::new();
    let mut order = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let c = elicit_pairwise(backend, u, &items[i], &items[j], symmetrize)?;
            order.push((items[i].clone(), items[j].clone()));
            let edge = |w: &str, l: &str, p: f64, strict: bool| Edge { winner: w.into(), loser: l.into(), p_winner: p, strict };
            match c.preferred {
                Direction::First => edges.push(edge(&items[i], &items[j], c.p0, true)),
                Direction::Second => edges.push(edge(&items[j], &items[i], c.p1, true)),
                Direction::Tie => {
                    edges.push(edge(&items[i], &items[j], c.p0, false));
                    edges.push(edge(&items[j], &items[i], c.p1, false));
                }
            }
        }
    }
    Ok(PreferenceRelation { items: items.to_vec(), context: u.clone(), edges, elicitation_order: order })
}

/// Items ordered by their probability when offered all at once.
pub fn elicit_ranking(backend: &dyn PatternBackend, u: &Sequence, items: &[String]) -> Result<Vec<(String, f64)>> {
    let p = menu_probabilities(backend, u, items)?;
    let mut ranked: Vec<(String, f64)> = items.iter().cloned().zip(p).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked)
}

/// Strict pairwise preferences that the full-menu ranking reverses.
pub fn ranking_discrepancies(rel: &PreferenceRelation, ranking: &[(String, f64)]) -> Vec<(String, String)> {
    let p: BTreeMap<&str, f64> = ranking.iter().map(|(x, q)| (x.as_str(), *q)).collect();
    rel.edges
        .iter()
        .filter(|e| e.strict)
        .filter(|e| match (p.get(e.winner.as_str()), p.get(e.loser.as_str())) {
            (Some(w), Some(l)) => l > &(w + TIE_TOLERANCE),
            _ => false,
        })
        .map(|e| (e.winner.clone(), e.loser.clone()))
        .collect()
}

/// Every simple directed cycle over strict edges with at most `max_len`
/// items, each listed once starting from its first item in `rel.items`.
pub fn detect_cycles(rel: &PreferenceRelation, max_len: usize) -> Vec<Vec<String>> {
    let n = rel.items.len();
    let index: BTreeMap<&str, usize> = rel.items.iter().enumerate().map(|(i, x)| (x.as_str(), i)).collect();
    let mut adj = vec![Vec::new(); n];
    for e in rel.edges.iter().filter(|e| e.strict) {
        if let (Some(&w), Some(&l)) = (index.get(e.winner.as_str()), index.get(e.loser.as_str())) {
            adj[w].push(l);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut out = Vec::new();
    fn walk(start: usize, at: usize, path: &mut Vec<usize>, adj: &[Vec<usize>], max_len: usize, out: &mut Vec<Vec<usize>>) {
        for &next in &adj[at] {
            if next == start && path.len() >= 2 {
                out.push(path.clone());
            } else if next > start && !path.contains(&next) && path.len() < max_len {
                path.push(next);
                walk(start, next, path, adj, max_len, out);
                path.pop();
            }
        }
    }
    let mut raw = Vec::new();
    for s in 0..n {
        walk(s, s, &mut vec![s], &adj, max_len, &mut raw);
    }
    for c in raw {
        out.push(c.into_iter().map(|i| rel.items[i].clone()).collect());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuChoice {
    pub menu: Vec<String>,
    pub probabilities: Vec<f64>,
    pub top: String,
}

/// Adding `added` to `smaller` reversed the order of `x` and `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IiaViolation {
    pub smaller: Vec<String>,
    pub added: String,
    pub x: String,
    pub y: String,
    pub before: (f64, f64),
    pub after: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IiaReport {
    pub choices: Vec<MenuChoice>,
    /// Index pairs of menus that differ by exactly one item.
    pub compared: Vec<(usize, usize)>,
    pub violations: Vec<IiaViolation>,
}

/// Elicits each menu and compares every pair of menus that differ by one
/// added item.
pub fn check_iia(backend: &dyn PatternBackend, u: &Sequence, items: &[String], menus: &[Vec<String>]) -> Result<IiaReport> {
    let universe: BTreeSet<&String> = items.iter().collect();
    for m in menus {
        if m.len() < 2 || m.iter().any(|x| !universe.contains(x)) || m.iter().collect::<BTreeSet<_>>().len() != m.len() {
            return Err(PrefsError::InvalidInput(format!("menu {m:?} must hold two or more distinct items")));
        }
    }
    let choices = menus
        .iter()
        .map(|m| {
            let p = menu_probabilities(backend, u, m)?;
            let top = m[p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)].clone();
            Ok(MenuChoice { menu: m.clone(), probabilities: p, top })
        })
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<BTreeSet<&String>> = menus.iter().map(|m| m.iter().collect()).collect();
    let mut compared = Vec::new();
    let mut violations = Vec::new();
    for (i, small) in sets.iter().enumerate() {
        for (j, large) in sets.iter().enumerate() {
            if large.len() != small.len() + 1 || !small.is_subset(large) {
                continue;
            }
            compared.push((i, j));
            let added = (*large.difference(small).next().expect("one extra item")).clone();
            let prob = |k: usize, x: &String| {
                let pos = menus[k].iter().position(|y| y == x).expect("member");
                choices[k].probabilities[pos]
            };
            for a in 0..menus[i].len() {
                for b in a + 1..menus[i].len() {
                    let (x, y) = (&menus[i][a], &menus[i][b]);
                    let before = (prob(i, x), prob(i, y));
                    let after = (prob(j, x), prob(j, y));
                    let d0 = direction(before.0, before.1);
                    let d1 = direction(after.0, after.1);
                    if d0 != Direction::Tie && d1 != Direction::Tie && d0 != d1 {
                        violations.push(IiaViolation {
                            smaller: menus[i].clone(),
                            added: added.clone(),
                            x: x.clone(),
                            y: y.clone(),
                            before,
                            after,
                        });
                    }
                }
            }
        }
    }
    if compared.is_empty() {
        return Err(PrefsError::InvalidInput("no two menus differ by exactly one item".into()));
    }
    Ok(IiaReport { choices, compared, violations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transmit {
    TopOnly,
    FullRelation,
}

impl Transmit {
    pub fn label(self) -> &'static str {
        match self {
            Transmit::TopOnly => "top-only",
            Transmit::FullRelation => "full-relation",
        }
    }
}

/// A social identity and its ordering of the items, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identity {
    pub name: String,
    pub ranking: Vec<String>,
}

impl Identity {
    /// What a member says about its preferences under each transmit mode.
    pub fn utterance(&self, mode: Transmit) -> String {
        match mode {
            Transmit::TopOnly => format!("{} chooses {}", self.name, self.ranking[0]),
            Transmit::FullRelation => format!("{} prefers {}", self.name, self.ranking.join(" to ")),
        }
    }
}

fn unigram_learner() -> BackendConfig {
    BackendConfig { ngram_order: 1, ..BackendConfig::table() }
}

fn default_utterances() -> usize {
    40
}

fn default_trials() -> usize {
    1
}

fn default_modes() -> Vec<Transmit> {
    vec![Transmit::TopOnly, Transmit::FullRelation]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationConfig {
    pub identities: Vec<Identity>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Transmit>,
    /// Utterances per trial; each comes from an identity drawn uniformly.
    #[serde(default = "default_utterances")]
    pub utterances: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unigram_learner")]
    pub learner: BackendConfig,
}

impl PolarizationConfig {
    /// Two identities at each extreme of a three-item scale.
    pub fn four_identities() -> Self {
        let id = |name: &str, r: [&str; 3]| Identity { name: name.into(), ranking: r.iter().map(|s| s.to_string()).collect() };
        Self {
            identities: vec![
                id("i1", ["a1", "a2", "a3"]),
                id("i2", ["a3", "a2", "a1"]),
                id("i3", ["a1", "a2", "a3"]),
                id("i4", ["a3", "a2", "a1"]),
            ],
            modes: default_modes(),
            utterances: default_utterances(),
            trials: default_trials(),
            seed: 0,
            learner: unigram_learner(),
        }
    }

    pub fn items(&self) -> Vec<String> {
        self.identities.first().map(|i| i.ranking.clone()).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PrefsError::InvalidInput(m.into()));
        if self.identities.is_empty() {
            return bad("no identities");
        }
        let items: BTreeSet<&String> = self.identities[0].ranking.iter().collect();
        if items.len() < 2 || items.len() != self.identities[0].ranking.len() {
            return bad("rankings need two or more distinct items");
        }
        if self.identities.iter().any(|i| i.ranking.iter().collect::<BTreeSet<_>>() != items) {
            return bad("identities must rank the same items");
        }
        if self.utterances == 0 || self.trials == 0 || self.modes.is_empty() {
            return bad("utterances, trials and modes must be nonempty");
        }
        self.learner.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationRow {
    pub mode: String,
    pub trial: usize,
    pub item: String,
    pub probability: f64,
    pub bimodality: f64,
}

/// Learner's probability of naming each item, frame-normalized over the
/// items, after training on the corpus.
pub fn learner_probabilities(config: &BackendConfig, corpus: &Corpus, items: &[String]) -> Result<Vec<f64>> {
    let mut learner = config.build()?;
    learner.consolidate(corpus)?;
    let lps = items
        .iter()
        .map(|x| learner.log_prob(&Sequence::empty(), &Sequence::new(x)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(PrefsError::Degenerate("learner".into()));
    }
    let w: Vec<f64> = lps.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Mass on items some identity ranks first minus mass on the rest.
pub fn bimodality(config: &PolarizationConfig, items: &[String], probs: &[f64]) -> f64 {
    let tops: BTreeSet<&String> = config.identities.iter().map(|i| &i.ranking[0]).collect();
    items.iter().zip(probs).map(|(x, p)| if tops.contains(x) { *p } else { -*p }).sum()
}

/// One row per (mode, trial, item). Both modes see the same speakers in a
/// trial.
pub fn polarization_experiment(config: &PolarizationConfig) -> Result<Vec<PolarizationRow>> {
    config.validate()?;
    let items = config.items();
    let mut rows = Vec::new();
    for &mode in &config.modes {
        for trial in 0..config.trials {
            let mut rng = rng::stream(rng::derive(config.seed, &[&"speakers", &trial]));
            let corpus = Corpus::new(
                (0..config.utterances)
                    .map(|_| Sequence::new(config.identities.choose(&mut rng).expect("nonempty").utterance(mode))),
            );
            let probs = learner_probabilities(&config.learner, &corpus, &items)?;
            let b = bimodality(config, &items, &probs);
            for (x, p) in items.iter().zip(&probs) {
                rows.push(PolarizationRow { mode: mode.label().into(), trial, item: x.clone(), probability: *p, bimodality: b });
            }
        }
    }
    Ok(rows)
}
