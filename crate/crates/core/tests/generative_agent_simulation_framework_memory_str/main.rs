//! Actor memory, retrieval, the summary chain and the act/remember loop.

#[path = "../common/mod.rs"]
#[allow(dead_code)]
mod common;

use std::collections::BTreeMap;

use normlab::actor::{similarity, Actor, GlobalWorkspace, Memory, Slot};
use normlab::backend::{share, PrecedentBackend};
use normlab::seq::{ActorId, Sequence};
use proptest::prelude::*;

use common::slot_mass;

fn bag_cosine(a: &str, b: &str) -> f64 {
    let count = |s: &str| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for t in Sequence::new(s).tokens() {
            *m.entry(t).or_default() += 1.0;
        }
        m
    };
    let (x, y) = (count(a), count(b));
    let dot: f64 = x.iter().map(|(t, v)| v * y.get(t).unwrap_or(&0.0)).sum();
    let norm = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm(&x) == 0.0 || norm(&y) == 0.0 {
        0.0
    } else {
        dot / (norm(&x) * norm(&y))
    }
}

fn greeter(memory: &[String], weighted: bool) -> Actor {
    let b = if weighted { PrecedentBackend::weighted() } else { PrecedentBackend::table() };
    Actor::new(ActorId::new("Carol").unwrap(), share(Box::new(b))).with_memory(Memory::from_entries(memory.iter().map(String::as_str)))
}

fn texts() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-d]( [a-d]){0,3}", 1..8)
}

proptest! {
    #[test]
    fn retrieval_matches_cosine_oracle(entries in texts(), query in "[a-e]( [a-e]){0,3}") {
        let m = Memory::from_entries(entries.iter().map(String::as_str));
        let q = Sequence::new(&query);
        let want: Vec<f64> = entries.iter().map(|e| bag_cosine(e, &query)).collect();
        for (g, w) in m.scores(&q).iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12);
        }
        // the best score, most recent on ties
        let best = want.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pos = want.iter().rposition(|s| *s == best).unwrap();
        prop_assert_eq!(m.retrieve(&q).unwrap().index, pos as u64);
        let positive: Vec<u64> = (0..entries.len()).filter(|&i| want[i] > 0.0).map(|i| i as u64).collect();
        let got: Vec<u64> = m.retrieve_many(&q, None).iter().map(|e| e.index).collect();
        prop_assert_eq!(got, positive);
        let self_sim = if q.is_empty() { 0.0 } else { 1.0 };
        prop_assert!((similarity(&q, &q) - self_sim).abs() < 1e-12);
    }

    #[test]
    fn limited_retrieval_keeps_the_top_scores(entries in texts(), query in "[a-d]", limit in 1usize..4) {
        let m = Memory::from_entries(entries.iter().map(String::as_str));
        let q = Sequence::new(&query);
        let scores = m.scores(&q);
        let got = m.retrieve_many(&q, Some(limit));
        prop_assert_eq!(got.len(), limit.min(entries.len()));
        prop_assert!(got.windows(2).all(|w| w[0].index < w[1].index));
        let worst_kept = got.iter().map(|e| scores[e.index as usize]).fold(f64::INFINITY, f64::min);
        let best_dropped = (0..entries.len())
            .filter(|i| !got.iter().any(|e| e.index == *i as u64))
            .map(|i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(worst_kept >= best_dropped);
    }

    #[test]
    fn lesions_leave_the_original_alone(entries in texts(), drop in "[a-d]") {
        let m = Memory::from_entries(entries.iter().map(String::as_str));
        let before = m.clone();
        let l = m.lesion(|e| e.text.tokens().contains(&drop));
        prop_assert_eq!(&m, &before);
        let kept: Vec<u64> = (0..entries.len())
            .filter(|&i| !Sequence::new(&entries[i]).tokens().contains(&drop))
            .map(|i| i as u64)
            .collect();
        prop_assert_eq!(l.entries().iter().map(|e| e.index).collect::<Vec<_>>(), kept);
        let mut l = l;
        prop_assert_eq!(l.append(Sequence::new("x")), entries.len() as u64);
    }

    #[test]
    fn every_step_appends_exactly_one_record(steps in prop::collection::vec(0usize..2, 1..6), seed in 0u64..100) {
        let mut a = greeter(&["[the phone is ringing, Bob:hello]".to_string()], false);
        let cands: Vec<Sequence> = vec!["hello".into(), "duck duck duck".into()];
        for (k, s) in steps.iter().enumerate() {
            let before: Vec<_> = a.memory.entries().to_vec();
            let obs = Sequence::new(if *s == 0 { "the phone is ringing" } else { "the door bell" });
            let (act, ws) = a.step(&obs, Some(&cands), seed + k as u64).unwrap();
            prop_assert_eq!(a.memory.len(), before.len() + 1);
            prop_assert_eq!(&a.memory.entries()[..before.len()], &before[..]);
            let last = &a.memory.entries()[before.len()].text;
            prop_assert_eq!(last.as_str(), format!("[{}, Carol:{}]", obs, act));
            prop_assert_eq!(ws.action, Some(act));
        }
    }
}

#[test]
fn recall_assembles_the_overlapping_precedents() {
    let a = greeter(
        &["[the phone is ringing, Bob:hello]".into(), "[lunch, Bob:eats]".into(), "[the bell is ringing, Ann:waves]".into()],
        false,
    );
    let ws = a.run_summary_chain(&"the phone is ringing".into(), 0).unwrap();
    assert_eq!(ws.sources, vec![vec![0, 2]]);
    assert_eq!(ws.assemblies[0].as_str(), "[the phone is ringing, Bob:hello]\n[the bell is ringing, Ann:waves]");
}

#[test]
fn precedent_share_sets_the_choice() {
    let obs = "the phone is ringing";
    let mem: Vec<String> = (0..3)
        .map(|i| format!("[{obs}, p{i}:hello]"))
        .chain(std::iter::once(format!("[{obs}, q:duck duck duck]")))
        .collect();
    let a = greeter(&mem, false);
    let ws = a.run_summary_chain(&obs.into(), 0).unwrap();
    let cands: Vec<Sequence> = vec!["hello".into(), "duck duck duck".into()];
    let p = a.candidate_probabilities(&ws, &cands, &Slot::Action, 0).unwrap();
    let (h, d) = (slot_mass(3.0, 1, 0.5, 3), slot_mass(1.0, 3, 0.5, 3));
    assert!((p[0].value - h / (h + d)).abs() < 1e-12);
    assert!(p.iter().all(|e| e.is_exact()));
    let mut ws = ws;
    assert_eq!(a.act(&mut ws, Some(&cands), 0).unwrap().as_str(), "hello");
}

#[test]
fn pinned_rule_steers_only_the_weighted_backend() {
    let obs = "the phone is ringing";
    let mem = vec![format!("[{obs}, p:hello]"), format!("[{obs}, q:duck duck duck]")];
    let cands: Vec<Sequence> = vec!["hello".into(), "duck duck duck".into()];
    let rule = Sequence::new("RULE: avoid hello");
    for weighted in [false, true] {
        let mut a = greeter(&mem, weighted);
        let ws = GlobalWorkspace { assemblies: vec![Sequence::new(mem.join("\n"))], sources: vec![vec![0, 1]], ..GlobalWorkspace::new(obs.into()) };
        let before = a.candidate_probabilities(&ws, &cands, &Slot::Action, 0).unwrap()[0].value;
        a.inject_explicit_norm(&rule).unwrap();
        let after = a.candidate_probabilities(&ws, &cands, &Slot::Action, 0).unwrap()[0].value;
        if weighted {
            assert!(after < before - 0.1, "{before} -> {after}");
        } else {
            assert!((after - before).abs() < 1e-12);
        }
        assert!(a.remove_explicit_norm(&rule));
        assert!(!a.remove_explicit_norm(&rule));
    }
    let mut a = greeter(&mem, true);
    assert!(a.inject_explicit_norm(&"please avoid hello".into()).is_err());
}

#[test]
fn reaction_slot_names_the_reactor() {
    let a = greeter(&["[park, Zed:drops litter, Carol:frowns]".into()], false);
    let rec = normlab::seq::make_record(&"park".into(), "Zed", &"drops litter".into()).unwrap();
    let ws = a.run_summary_chain(&rec.observation, 0).unwrap();
    let ctx = a.policy_context(&ws, None, &Slot::Reaction(rec)).unwrap();
    assert!(ctx.as_str().ends_with("[park, Zed:drops litter, Carol:"));
    assert_eq!(a.react(&normlab::seq::make_record(&"park".into(), "Zed", &"drops litter".into()).unwrap(), Some(&["frowns".into(), "nods".into()]), 0).unwrap().as_str(), "frowns");
}
