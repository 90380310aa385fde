use rand::Rng;

use super::{run_jobs, Arm, ExperimentConfig, MetricsTable, NormSetting, Result};
use crate::actor::{ActMode, Actor, Memory, Slot};
use crate::backend::{share, BackendConfig, SharedBackend};
use crate::rng;
use crate::seq::{ActionRecord, ActorId, Clause, Record, Sequence};

fn record(obs: &str, actor: &str, action: &str, reaction: Option<(&str, &str)>) -> Result<String> {
    let act = ActionRecord::new(Sequence::new(obs), ActorId::new(actor)?, Sequence::new(action));
    let mut rec = Record::from_action(&act);
    if let Some((who, text)) = reaction {
        rec.reactions.push(Clause { actor: ActorId::new(who)?, text: Sequence::new(text) });
    }
    Ok(rec.serialize())
}

fn make_actor(id: &str, backend: &SharedBackend, records: &[String]) -> Result<Actor> {
    let mut a = Actor::new(ActorId::new(id)?, backend.clone());
    a.mode = ActMode::Sample;
    a.memory = Memory::from_entries(records.iter().map(String::as_str));
    Ok(a)
}

fn probs(actor: &Actor, obs: &Sequence, candidates: &[Sequence], slot: &Slot) -> Result<Vec<f64>> {
    let ws = actor.run_summary_chain(obs, 0)?;
    Ok(actor.candidate_probabilities(&ws, candidates, slot, 0)?.into_iter().map(|e| e.value).collect())
}

fn draw(p: &[f64], seed: u64) -> usize {
    let u: f64 = rng::stream(seed).gen();
    let mut acc = 0.0;
    for (i, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Actors who act in one context each tick; a random witness reacts to
/// each action and everyone remembers every resulting record.
struct NormWorld<'a> {
    s: &'a NormSetting,
    actors: Vec<Actor>,
    obs: Sequence,
    actions: [Sequence; 2],
    reactions: [Sequence; 2],
}

struct TickOutcome {
    compliance: f64,
    sanctioning: f64,
    /// Record text, action index and reaction index.
    records: Vec<(String, usize, usize)>,
}

impl<'a> NormWorld<'a> {
    fn new(s: &'a NormSetting, actors: Vec<Actor>) -> Self {
        Self {
            s,
            actors,
            obs: Sequence::new(&s.observation),
            actions: [Sequence::new(&s.norm_action), Sequence::new(&s.violation_action)],
            reactions: [Sequence::new(&s.sanction), Sequence::new(&s.acknowledgement)],
        }
    }

    fn compliance_prob(&self, i: usize) -> Result<f64> {
        Ok(probs(&self.actors[i], &self.obs, &self.actions, &Slot::Action)?[0])
    }

    /// Probability that actor `i` sanctions a violation it witnesses.
    fn sanction_prob(&self, i: usize) -> Result<f64> {
        let v = ActionRecord::new(self.obs.clone(), ActorId::new("Someone")?, self.actions[1].clone());
        Ok(probs(&self.actors[i], &self.obs, &self.reactions, &Slot::Reaction(v))?[0])
    }

    fn tick(&mut self, t: usize, seed: u64) -> Result<TickOutcome> {
        let n = self.actors.len();
        let mut records = Vec::with_capacity(n);
        let (mut complied, mut sanctioned) = (0usize, 0usize);
        for i in 0..n {
            let tempted: f64 = rng::stream(rng::derive(seed, &[&"tempt", &t, &i])).gen();
            let a = if tempted < self.s.temptation {
                1
            } else {
                draw(&probs(&self.actors[i], &self.obs, &self.actions, &Slot::Action)?, rng::derive(seed, &[&"act", &t, &i]))
            };
            let offset = rng::stream(rng::derive(seed, &[&"witness", &t, &i])).gen_range(0..n - 1);
            let j = (i + 1 + offset) % n;
            let act = ActionRecord::new(self.obs.clone(), self.actors[i].id.clone(), self.actions[a].clone());
            let rp = probs(&self.actors[j], &self.obs, &self.reactions, &Slot::Reaction(act))?;
            let r = draw(&rp, rng::derive(seed, &[&"react", &t, &i]));
            complied += usize::from(a == 0);
            sanctioned += usize::from(r == 0);
            let text = record(
                &self.s.observation,
                self.actors[i].id.as_str(),
                self.actions[a].as_str(),
                Some((self.actors[j].id.as_str(), self.reactions[r].as_str())),
            )?;
            records.push((text, a, r));
        }
        Ok(TickOutcome { compliance: complied as f64 / n as f64, sanctioning: sanctioned as f64 / n as f64, records })
    }

    fn remember(&mut self, records: &[(String, usize, usize)]) {
        for a in &mut self.actors {
            for (r, _, _) in records {
                a.memory.append(Sequence::new(r));
            }
        }
    }
}

fn incumbents(config: &ExperimentConfig, s: &NormSetting, backend: &SharedBackend) -> Result<Vec<Actor>> {
    let mut seeds = Vec::with_capacity(s.seed_norm + s.seed_violation);
    for _ in 0..s.seed_norm {
        seeds.push(record(&s.observation, "Elder", &s.norm_action, Some(("Witness", &s.acknowledgement)))?);
    }
    for _ in 0..s.seed_violation {
        seeds.push(record(&s.observation, "Elder", &s.violation_action, Some(("Witness", &s.sanction)))?);
    }
    (0..config.population).map(|i| make_actor(&format!("A{}", i + 1), backend, &seeds)).collect()
}

fn stability_run(config: &ExperimentConfig, arm: Arm, seed: u64) -> Result<MetricsTable> {
    let mut backend_config = config.backend.clone();
    if arm == Arm::Ablation {
        backend_config.sanction_discount = 1.0;
        backend_config.sanction_boost = 1.0;
    }
    let backend = share(backend_config.build()?);
    let mut world = NormWorld::new(&config.norm, incumbents(config, &config.norm, &backend)?);
    let mut table = MetricsTable::new();
    for t in 0..=config.horizon {
        let n = world.actors.len();
        let cp = mean((0..n).map(|i| world.compliance_prob(i)).collect::<Result<Vec<_>>>()?);
        let sp = mean((0..n).map(|i| world.sanction_prob(i)).collect::<Result<Vec<_>>>()?);
        let out = world.tick(t, seed)?;
        let e = "norm-stability";
        table.push(e, arm.label(), seed, t, "compliance_prob", cp);
        table.push(e, arm.label(), seed, t, "sanction_prob", sp);
        table.push(e, arm.label(), seed, t, "compliance_rate", out.compliance);
        table.push(e, arm.label(), seed, t, "sanctioning_rate", out.sanctioning);
        world.remember(&out.records);
    }
    Ok(table)
}

fn jobs(config: &ExperimentConfig) -> Vec<(Arm, u64)> {
    config.arms.iter().flat_map(|&a| config.seeds.iter().map(move |&s| (a, s))).collect()
}

/// Population seeded with acknowledged norm records and sanctioned
/// violations. Rows per tick t = 0..=T describe the state at the start of
/// t and the actions taken during it. The ablation neutralizes sanctions
/// (discount and boost 1).
pub fn norm_stability(config: &ExperimentConfig, workers: Option<usize>) -> Result<MetricsTable> {
    run_jobs(jobs(config), workers, |(arm, seed)| stability_run(config, arm, seed))
}

fn adoption_run(config: &ExperimentConfig, arm: Arm, seed: u64) -> Result<MetricsTable> {
    let mut backend_config = config.backend.clone();
    if arm == Arm::Ablation {
        backend_config.sanction_discount = 1.0;
        backend_config.sanction_boost = 1.0;
    }
    let backend = share(backend_config.build()?);
    let setting = match arm {
        Arm::Treatment => config.norm.clone(),
        Arm::Ablation => NormSetting { seed_norm: 0, seed_violation: 0, ..config.norm.clone() },
    };
    let mut actors = incumbents(config, &setting, &backend)?;
    let contrary = (0..config.newcomer.contrary)
        .map(|_| record(&setting.observation, "Stranger", &setting.violation_action, None))
        .collect::<Result<Vec<_>>>()?;
    actors.push(make_actor("Newcomer", &backend, &contrary)?);
    let newcomer = actors.len() - 1;
    let mut world = NormWorld::new(&setting, actors);
    let (mut seen_sanctions, mut seen_tolerated) = (0usize, 0usize);
    let mut table = MetricsTable::new();
    for t in 0..=config.horizon {
        let cp = mean((0..newcomer).map(|i| world.compliance_prob(i)).collect::<Result<Vec<_>>>()?);
        let ncp = world.compliance_prob(newcomer)?;
        let nsp = world.sanction_prob(newcomer)?;
        let out = world.tick(t, seed)?;
        let e = "norm-adoption";
        table.push(e, arm.label(), seed, t, "compliance_prob", cp);
        table.push(e, arm.label(), seed, t, "newcomer_compliance_prob", ncp);
        table.push(e, arm.label(), seed, t, "newcomer_sanction_prob", nsp);
        table.push(e, arm.label(), seed, t, "newcomer_sanction_records", seen_sanctions as f64);
        table.push(e, arm.label(), seed, t, "newcomer_tolerated_records", seen_tolerated as f64);
        table.push(e, arm.label(), seed, t, "compliance_rate", out.compliance);
        table.push(e, arm.label(), seed, t, "sanctioning_rate", out.sanctioning);
        seen_sanctions += out.records.iter().filter(|(_, a, r)| *a == 1 && *r == 0).count();
        seen_tolerated += out.records.iter().filter(|(_, a, r)| *a == 1 && *r == 1).count();
        world.remember(&out.records);
    }
    Ok(table)
}

/// The stability population plus one newcomer who starts with no norm
/// records (or `newcomer.contrary` unsanctioned violations). The ablation
/// leaves the population unseeded and sanctions neutral, so there is no
/// norm to adopt.
pub fn norm_adoption(config: &ExperimentConfig, workers: Option<usize>) -> Result<MetricsTable> {
    run_jobs(jobs(config), workers, |(arm, seed)| adoption_run(config, arm, seed))
}

fn tipping_run(config: &ExperimentConfig, backend: &BackendConfig, arm: Arm, seed: u64, q: f64) -> Result<MetricsTable> {
    let s = &config.norm;
    let n = config.population;
    let minority = if arm == Arm::Ablation { 0 } else { (q * n as f64).round() as usize };
    let shared = share(backend.build()?);
    let seeds = |action: &str| -> Result<Vec<String>> {
        (0..config.tipping.seed_count).map(|_| record(&s.observation, "Elder", action, None)).collect()
    };
    let (majority_seeds, minority_seeds) = (seeds(&s.norm_action)?, seeds(&s.violation_action)?);
    let mut actors = (0..n)
        .map(|i| make_actor(&format!("A{}", i + 1), &shared, if i < minority { &minority_seeds } else { &majority_seeds }))
        .collect::<Result<Vec<_>>>()?;
    let obs = Sequence::new(&s.observation);
    let actions = [Sequence::new(&s.norm_action), Sequence::new(&s.violation_action)];
    let adoption = |actors: &[Actor]| -> Result<f64> {
        let ps = (0..n)
            .map(|i| if i < minority { Ok(1.0) } else { Ok(probs(&actors[i], &obs, &actions, &Slot::Action)?[1]) })
            .collect::<Result<Vec<f64>>>()?;
        Ok(mean(ps))
    };
    let initial = adoption(&actors)?;
    for t in 0..config.horizon {
        let mut records = Vec::with_capacity(n);
        for (i, actor) in actors.iter().enumerate() {
            let a = if i < minority {
                1
            } else {
                draw(&probs(actor, &obs, &actions, &Slot::Action)?, rng::derive(seed, &[&"act", &t, &i]))
            };
            records.push(record(&s.observation, actor.id.as_str(), actions[a].as_str(), None)?);
        }
        for a in &mut actors {
            for r in &records {
                a.memory.append(Sequence::new(r));
            }
        }
    }
    let fin = adoption(&actors)?;
    let mut table = MetricsTable::new();
    let e = "tipping-point";
    table.push(e, arm.label(), seed, q, "minority", minority as f64);
    table.push(e, arm.label(), seed, q, "initial_adoption", initial);
    table.push(e, arm.label(), seed, q, "adoption", fin);
    table.push(e, arm.label(), seed, q, "tipped", if fin > 0.5 { 1.0 } else { 0.0 });
    Ok(table)
}

/// Sweeps the fraction q of committed actors who always take the
/// alternative and start with its precedents; everyone else starts with
/// the incumbent's. Reports a′-adoption at the horizon. The ablation
/// removes the committed minority.
pub fn tipping_point(config: &ExperimentConfig, workers: Option<usize>) -> Result<MetricsTable> {
    let mut jobs = Vec::new();
    for (arm, seed) in self::jobs(config) {
        for &q in &config.tipping.fractions {
            jobs.push((arm, seed, q));
        }
    }
    run_jobs(jobs, workers, |(arm, seed, q)| tipping_run(config, &config.backend, arm, seed, q))
}

/// Smallest swept q whose horizon adoption exceeds 1/2.
pub fn critical_fraction(table: &MetricsTable, arm: &str, seed: u64) -> Option<f64> {
    table
        .series(arm, seed, "adoption")
        .into_iter()
        .filter(|(_, v)| *v > 0.5)
        .filter_map(|(q, _)| q.parse::<f64>().ok())
        .next()
}
