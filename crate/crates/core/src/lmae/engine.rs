use std::collections::BTreeMap;

use rayon::prelude::*;
use regex::Captures;
use serde::{Deserialize, Serialize};

use super::scenario::{CompiledScenario, Fallback, Scenario};
use super::trace::{TickRecord, Trace, TraceError, TraceHeader, Verbosity, TRACE_FORMAT, TRACE_VERSION};
use super::{LmaeError, Result};
use crate::actor::{Actor, GlobalWorkspace};
use crate::backend::SharedBackend;
use crate::rng;
use crate::seq::{ActionRecord, Sequence};

/// World state: free text plus the tick it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub payload: Sequence,
    pub tick: usize,
}

impl EnvState {
    pub fn initial(scenario: &Scenario) -> Self {
        Self { payload: Sequence::new(&scenario.initial_state), tick: 0 }
    }
}

fn expand(template: &str, caps: Option<&Captures>, vars: &[(&str, &str)]) -> String {
    let mut out = match caps {
        Some(c) => {
            let mut s = String::new();
            c.expand(template, &mut s);
            s
        }
        None => template.to_string(),
    };
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// One observation per actor, in scenario order: the first rule that
/// applies to the actor and matches the state.
pub fn observe_all(scenario: &CompiledScenario, state: &EnvState, seed: u64) -> Result<Vec<Sequence>> {
    let text = state.payload.as_str();
    scenario
        .scenario
        .actors
        .iter()
        .enumerate()
        .map(|(k, actor)| {
            for rule in &scenario.observations {
                let Some(re) = &rule.patterns[k] else { continue };
                if let Some(caps) = re.captures(text) {
                    let draw = rng::derive(seed, &[&"observe", &state.tick, &rule.id, &actor.id]);
                    let template = rule.output.pick(draw);
                    return Ok(Sequence::new(expand(template, Some(&caps), &[("self", &actor.id), ("state", text)])));
                }
            }
            Err(LmaeError::NoMatchingRule { kind: "observation", actor: Some(actor.id.clone()), tick: state.tick })
        })
        .collect()
}

/// The text transition patterns are matched against.
pub fn transition_haystack(state: &EnvState, joint: &[ActionRecord]) -> String {
    let mut s = state.payload.as_str().to_string();
    for r in joint {
        s.push('\n');
        s.push_str(&format!("{}: {}", r.actor_id, r.action.single_line()));
    }
    s
}

/// Next state and the id of the rule that produced it (`None` for the game
/// master or the identity fallback).
pub fn transition(
    scenario: &CompiledScenario,
    state: &EnvState,
    joint: &[ActionRecord],
    seed: u64,
    backends: &BTreeMap<String, SharedBackend>,
) -> Result<(EnvState, Option<String>)> {
    let hay = transition_haystack(state, joint);
    let actions = joint.iter().map(|r| format!("{}: {}", r.actor_id, r.action.single_line())).collect::<Vec<_>>().join("\n");
    let tick = state.tick.to_string();
    let next = |payload: String| EnvState { payload: Sequence::new(payload), tick: state.tick + 1 };
    for rule in &scenario.transitions {
        if let Some(caps) = rule.pattern.captures(&hay) {
            let template = rule.output.pick(rng::derive(seed, &[&"transition", &state.tick, &rule.id]));
            let payload = expand(template, Some(&caps), &[("state", state.payload.as_str()), ("tick", &tick), ("actions", &actions)]);
            return Ok((next(payload), Some(rule.id.clone())));
        }
    }
    if let Some(gm) = &scenario.scenario.game_master {
        let backend = backends
            .get(&gm.backend)
            .ok_or_else(|| LmaeError::Scenario(format!("unknown backend {}", gm.backend)))?;
        let ctx = Sequence::new(expand(&gm.template, None, &[("state", state.payload.as_str()), ("actions", &actions)]));
        let b = backend.read().unwrap_or_else(|e| e.into_inner());
        let text = b.sample_completion(&ctx, gm.max_tokens, rng::derive(seed, &[&"game-master", &state.tick]))?;
        return Ok((next(text.to_string()), None));
    }
    match scenario.scenario.fallback {
        Fallback::Identity => Ok((next(state.payload.to_string()), None)),
        Fallback::Error => Err(LmaeError::NoMatchingRule { kind: "transition", actor: None, tick: state.tick }),
    }
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub verbosity: Verbosity,
    /// Order in which actors are stepped within a tick; scenario order when
    /// absent. Has no effect on the trace.
    pub order: Option<Vec<usize>>,
    /// Step actors on the rayon pool.
    pub parallel: bool,
    /// Overrides the scenario horizon.
    pub ticks: Option<usize>,
}

/// An episode in progress.
pub struct Engine {
    scenario: CompiledScenario,
    seed: u64,
    backends: BTreeMap<String, SharedBackend>,
    actors: Vec<Actor>,
    state: EnvState,
    feedback: Vec<Option<String>>,
    options: EngineOptions,
    horizon: usize,
}

type StepOutput = Result<(Sequence, GlobalWorkspace)>;

impl Engine {
    pub fn new(scenario: &Scenario, seed: u64, options: EngineOptions) -> Result<Self> {
        let compiled = scenario.compile()?;
        let backends = scenario.build_backends()?;
        let actors = scenario.build_actors(&backends)?;
        let n = actors.len();
        if let Some(order) = &options.order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(LmaeError::Scenario("evaluation order must be a permutation of the actors".into()));
            }
        }
        let horizon = options.ticks.unwrap_or(scenario.horizon);
        if horizon == 0 {
            return Err(LmaeError::Scenario("horizon must be at least 1".into()));
        }
        Ok(Self {
            state: EnvState::initial(scenario),
            scenario: compiled,
            seed,
            backends,
            actors,
            feedback: vec![None; n],
            options,
            horizon,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.tick >= self.horizon
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actors_mut(&mut self) -> &mut [Actor] {
        &mut self.actors
    }

    pub fn backends(&self) -> &BTreeMap<String, SharedBackend> {
        &self.backends
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            scenario: self.scenario.scenario.name.clone(),
            seed: self.seed,
            horizon: self.horizon,
            actors: self.scenario.scenario.actors.iter().map(|a| a.id.clone()).collect(),
            verbosity: self.options.verbosity,
        }
    }

    /// Observations for the current tick, with pending feedback appended.
    pub fn observations(&self) -> Result<Vec<Sequence>> {
        let mut obs = observe_all(&self.scenario, &self.state, self.seed)?;
        for (o, f) in obs.iter_mut().zip(&self.feedback) {
            if let Some(f) = f {
                *o = Sequence::new(format!("{}\n{}", o.as_str(), f));
            }
        }
        Ok(obs)
    }

    fn actor_seed(&self, k: usize) -> u64 {
        let cfg = &self.scenario.scenario.actors[k];
        rng::derive(self.seed, &[&"act", &self.state.tick, &cfg.id, &cfg.seed])
    }

    /// Runs one simultaneous-move tick.
    pub fn step(&mut self) -> Result<TickRecord> {
        let observations = self.observations()?;
        let n = self.actors.len();
        let seeds: Vec<u64> = (0..n).map(|k| self.actor_seed(k)).collect();
        let candidates: Vec<Option<Vec<Sequence>>> =
            observations.iter().map(|o| self.scenario.candidates_for(o).map(<[_]>::to_vec)).collect();

        let run = |actor: &mut Actor, k: usize| -> StepOutput {
            actor.step(&observations[k], candidates[k].as_deref(), seeds[k]).map_err(LmaeError::from)
        };
        let mut outputs: Vec<Option<StepOutput>> = (0..n).map(|_| None).collect();
        if self.options.parallel {
            let results: Vec<StepOutput> =
                self.actors.par_iter_mut().enumerate().map(|(k, a)| run(a, k)).collect();
            for (k, r) in results.into_iter().enumerate() {
                outputs[k] = Some(r);
            }
        } else {
            let order: Vec<usize> = self.options.order.clone().unwrap_or_else(|| (0..n).collect());
            for k in order {
                outputs[k] = Some(run(&mut self.actors[k], k));
            }
        }
        let mut steps = Vec::with_capacity(n);
        for out in outputs {
            steps.push(out.expect("every actor stepped")?);
        }

        let ids: Vec<String> = self.scenario.scenario.actors.iter().map(|a| a.id.clone()).collect();
        let mut joint = Vec::new();
        let mut invalid = BTreeMap::new();
        let mut feedback = vec![None; n];
        for (k, (action, _)) in steps.iter().enumerate() {
            let failed = self.scenario.validity.iter().find(|v| {
                v.action.is_match(action.as_str()) && !v.requires[k].is_match(self.state.payload.as_str())
            });
            match failed {
                Some(v) => {
                    let text = expand(&v.feedback, None, &[("self", &ids[k]), ("action", action.as_str())]);
                    invalid.insert(ids[k].clone(), text.clone());
                    feedback[k] = Some(text);
                }
                None => joint.push(ActionRecord::new(observations[k].clone(), self.actors[k].id.clone(), action.clone())),
            }
        }
        let (next, rule) = transition(&self.scenario, &self.state, &joint, self.seed, &self.backends)?;

        let verbosity = self.options.verbosity;
        let record = TickRecord {
            tick: self.state.tick,
            state: self.state.payload.to_string(),
            observations: ids.iter().cloned().zip(observations.iter().map(|o| o.to_string())).collect(),
            actions: ids.iter().cloned().zip(steps.iter().map(|(a, _)| a.to_string())).collect(),
            invalid,
            seeds: ids.iter().cloned().zip(seeds).collect(),
            transition: rule,
            next_state: next.payload.to_string(),
            assemblies: (verbosity >= Verbosity::Assemblies).then(|| {
                ids.iter()
                    .cloned()
                    .zip(steps.iter().map(|(_, ws)| ws.assemblies.iter().map(|a| a.to_string()).collect()))
                    .collect()
            }),
            memory_sizes: (verbosity >= Verbosity::Full)
                .then(|| ids.iter().cloned().zip(self.actors.iter().map(|a| a.memory.len())).collect()),
        };
        self.state = next;
        self.feedback = feedback;
        Ok(record)
    }

    /// Runs the remaining ticks. A failure ends the trace with an error
    /// line after the ticks completed so far.
    pub fn run(mut self) -> (Trace, Vec<Actor>) {
        let mut trace = Trace { header: self.header(), ticks: Vec::new(), error: None };
        while self.state.tick < self.horizon {
            let tick = self.state.tick;
            match self.step() {
                Ok(r) => trace.ticks.push(r),
                Err(e) => {
                    trace.error = Some(TraceError { tick, error: e.to_string() });
                    break;
                }
            }
        }
        (trace, self.actors)
    }
}

/// Builds the scenario and runs it for its horizon.
pub fn run_episode(scenario: &Scenario, seed: u64) -> Result<Trace> {
    Ok(Engine::new(scenario, seed, EngineOptions::default())?.run().0)
}
