use super::{run_jobs, Arm, ExperimentConfig, LesionSetting, MetricsTable, Result};
use crate::actor::{ActMode, Actor, Memory, Slot};
use crate::backend::{share, BackendConfig, Corpus};
use crate::rng;
use crate::seq::{ActionRecord, ActorId, Sequence};

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact candidate distributions of one actor at each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionCells {
    pub candidates: Vec<String>,
    /// Baseline memory only, no rule.
    pub naive: Vec<f64>,
    /// Rule pinned, before any practice.
    pub ruled: Vec<f64>,
    /// Rule and practice memories, before consolidation.
    pub pre_intact: Vec<f64>,
    /// Rule removed and practice memories deleted, before consolidation.
    pub pre_lesioned: Vec<f64>,
    pub post_intact: Vec<f64>,
    pub post_lesioned: Vec<f64>,
}

impl LesionCells {
    pub fn cells(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("naive", &self.naive),
            ("ruled", &self.ruled),
            ("pre-intact", &self.pre_intact),
            ("pre-lesioned", &self.pre_lesioned),
            ("post-intact", &self.post_intact),
            ("post-lesioned", &self.post_lesioned),
        ]
    }

    pub fn tv_pre(&self) -> f64 {
        total_variation(&self.pre_intact, &self.pre_lesioned)
    }

    pub fn tv_post(&self) -> f64 {
        total_variation(&self.post_intact, &self.post_lesioned)
    }
}

fn distribution(actor: &Actor, obs: &Sequence, candidates: &[Sequence]) -> Result<Vec<f64>> {
    let ws = actor.run_summary_chain(obs, 0)?;
    Ok(actor.candidate_probabilities(&ws, candidates, &Slot::Action, 0)?.into_iter().map(|e| e.value).collect())
}

/// An actor learns under a pinned rule (or from given practice records),
/// then the practice memories are replayed `repetitions` times into its
/// backend. The lesion removes the rule and deletes the practice memories.
pub fn lesion_cells(backend: &BackendConfig, s: &LesionSetting, repetitions: usize, seed: u64) -> Result<LesionCells> {
    let shared = share(backend.build()?);
    let id = ActorId::new("Learner")?;
    let obs = Sequence::new(&s.observation);
    let candidates: Vec<Sequence> = s.candidates.iter().map(Sequence::new).collect();
    let rec = |a: &str| ActionRecord::new(obs.clone(), id.clone(), Sequence::new(a)).to_sequence();
    let mut actor = Actor::new(id.clone(), shared.clone());
    actor.mode = ActMode::Argmax;
    actor.memory = Memory::from_entries(s.baseline.iter().map(|a| rec(a).to_string()));
    let base = actor.memory.len() as u64;

    let naive = distribution(&actor, &obs, &candidates)?;
    let rule = s.rule.as_ref().map(Sequence::new);
    if let Some(r) = &rule {
        actor.inject_explicit_norm(r)?;
    }
    let ruled = distribution(&actor, &obs, &candidates)?;
    for a in &s.practice_records {
        actor.memory.append(rec(a));
    }
    if rule.is_some() {
        for t in 0..s.practice {
            actor.step(&obs, Some(&candidates), rng::derive(seed, &[&"practice", &t]))?;
        }
    }

    let lesion = |a: &Actor| {
        let mut l = a.with_memory(a.memory.lesion(|e| e.index >= base));
        if let Some(r) = &rule {
            l.remove_explicit_norm(r);
        }
        l
    };
    let pre_intact = distribution(&actor, &obs, &candidates)?;
    let pre_lesioned = distribution(&lesion(&actor), &obs, &candidates)?;

    let practice: Vec<Sequence> = actor.memory.entries().iter().filter(|e| e.index >= base).map(|e| e.text.clone()).collect();
    shared.write().unwrap_or_else(|e| e.into_inner()).consolidate(&Corpus::new(practice).repeated(repetitions))?;
    let post_intact = distribution(&actor, &obs, &candidates)?;
    let post_lesioned = distribution(&lesion(&actor), &obs, &candidates)?;

    Ok(LesionCells { candidates: s.candidates.clone(), naive, ruled, pre_intact, pre_lesioned, post_intact, post_lesioned })
}

/// Rows per cell: `p:<candidate>`, total variation from the naive cell and
/// the intact/lesioned distance of the cell's phase. The ablation skips
/// consolidation (zero repetitions).
pub fn consolidation_lesion(config: &ExperimentConfig, workers: Option<usize>) -> Result<MetricsTable> {
    let jobs: Vec<(Arm, u64)> = config.arms.iter().flat_map(|&a| config.seeds.iter().map(move |&s| (a, s))).collect();
    run_jobs(jobs, workers, |(arm, seed)| {
        let reps = if arm == Arm::Treatment { config.lesion.repetitions } else { 0 };
        let cells = lesion_cells(&config.backend, &config.lesion, reps, seed)?;
        let mut t = MetricsTable::new();
        for (name, p) in cells.cells() {
            let e = "consolidation-lesion";
            for (c, v) in cells.candidates.iter().zip(p) {
                t.push(e, arm.label(), seed, name, &format!("p:{c}"), *v);
            }
            t.push(e, arm.label(), seed, name, "tv_naive", total_variation(p, &cells.naive));
            let tv_lesion = match name {
                "pre-intact" | "pre-lesioned" => cells.tv_pre(),
                "post-intact" | "post-lesioned" => cells.tv_post(),
                _ => 0.0,
            };
            t.push(e, arm.label(), seed, name, "tv_lesion", tv_lesion);
        }
        Ok(t)
    })
}
