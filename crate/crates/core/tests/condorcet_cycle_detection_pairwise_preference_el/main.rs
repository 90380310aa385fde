//! Pairwise elicitation, cycle detection and menu-dependence checks.

use std::collections::BTreeSet;

use normlab::backend::PrecedentBackend;
use normlab::prefs::{
    check_iia, detect_cycles, elicit_pairwise, elicit_ranking, elicit_relation, ranking_discrepancies, Direction,
    PreferenceRelation,
};
use normlab::seq::Sequence;
use proptest::prelude::*;

fn items(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Every simple cycle up to `max_len`, found by trying all item sequences
/// that start at their smallest index.
fn brute_cycles(n: usize, beats: &[Vec<bool>], max_len: usize) -> BTreeSet<Vec<usize>> {
    let mut out = BTreeSet::new();
    fn extend(path: &mut Vec<usize>, n: usize, beats: &[Vec<bool>], max_len: usize, out: &mut BTreeSet<Vec<usize>>) {
        let (first, last) = (path[0], *path.last().unwrap());
        if path.len() >= 2 && beats[last][first] {
            out.insert(path.clone());
        }
        if path.len() == max_len {
            return;
        }
        for next in first + 1..n {
            if !path.contains(&next) && beats[last][next] {
                path.push(next);
                extend(path, n, beats, max_len, out);
                path.pop();
            }
        }
    }
    for s in 0..n {
        extend(&mut vec![s], n, beats, max_len, &mut out);
    }
    out
}

fn tournament() -> impl Strategy<Value = (usize, Vec<Vec<bool>>)> {
    (2usize..7).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |coins| {
            let mut beats = vec![vec![false; n]; n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if coins[k] {
                        beats[i][j] = true;
                    } else {
                        beats[j][i] = true;
                    }
                    k += 1;
                }
            }
            (n, beats)
        })
    })
}

fn precedents(lines: &[(&str, &str, usize)]) -> Sequence {
    let mut out = Vec::new();
    for &(menu, pick, times) in lines {
        for _ in 0..times {
            out.push(format!("[{menu}, k:{pick}]"));
        }
    }
    Sequence::new(out.join("\n"))
}

proptest! {
    #[test]
    fn cycles_match_brute_force((n, beats) in tournament(), max_len in 2usize..7) {
        let names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if beats[i][j] {
                    pairs.push((refs[i], refs[j]));
                }
            }
        }
        let rel = PreferenceRelation::from_strict(&refs, &pairs);
        let got: BTreeSet<Vec<String>> = detect_cycles(&rel, max_len).into_iter().collect();
        let want: BTreeSet<Vec<String>> = brute_cycles(n, &beats, max_len)
            .into_iter()
            .map(|c| c.into_iter().map(|i| names[i].clone()).collect())
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn symmetrized_choice_ignores_presentation_order(k_ab in 0usize..4, k_ba in 0usize..4, k_b in 0usize..4) {
        let b = PrecedentBackend::table();
        let u = precedents(&[("a or b?", "a", k_ab), ("b or a?", "a", k_ba), ("a or b?", "b", k_b)]);
        let fwd = elicit_pairwise(&b, &u, "a", "b", true).unwrap();
        let back = elicit_pairwise(&b, &u, "b", "a", true).unwrap();
        prop_assert!((fwd.p0 - back.p1).abs() < 1e-12);
        prop_assert!((fwd.p0 + fwd.p1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn context_free_choice_never_violates_iia(words in prop::collection::btree_set("[a-e]{1,3}( [a-e]{1,2})?", 3..5)) {
        let b = PrecedentBackend::weighted();
        let all: Vec<String> = words.into_iter().collect();
        let menus = vec![all[..2].to_vec(), all[..3].to_vec(), all.clone()];
        let r = check_iia(&b, &Sequence::empty(), &all, &menus).unwrap();
        prop_assert!(r.violations.is_empty());
        prop_assert!(!r.compared.is_empty());
    }
}

#[test]
fn elicited_precedents_form_a_cycle() {
    let b = PrecedentBackend::table();
    let u = precedents(&[("beach or mountains?", "beach", 2), ("beach or culture?", "culture", 2), ("mountains or culture?", "mountains", 2)]);
    let all = items(&["beach", "mountains", "culture"]);
    let rel = elicit_relation(&b, &u, &all, false).unwrap();
    assert!(rel.prefers("beach", "mountains"));
    assert!(rel.prefers("mountains", "culture"));
    assert!(rel.prefers("culture", "beach"));
    assert_eq!(detect_cycles(&rel, 3), vec![items(&["beach", "mountains", "culture"])]);
    assert!(detect_cycles(&rel, 2).is_empty());
}

#[test]
fn transitive_precedents_have_no_cycle() {
    let b = PrecedentBackend::table();
    let u = precedents(&[("a or b?", "a", 1), ("a or c?", "a", 1), ("b or c?", "b", 1)]);
    let rel = elicit_relation(&b, &u, &items(&["a", "b", "c"]), false).unwrap();
    assert!(detect_cycles(&rel, 3).is_empty());
}

#[test]
fn unobserved_pairs_tie() {
    let b = PrecedentBackend::table();
    let rel = elicit_relation(&b, &Sequence::empty(), &items(&["a", "b", "c"]), false).unwrap();
    assert_eq!(rel.edges.len(), 6);
    assert!(rel.edges.iter().all(|e| !e.strict));
    assert_eq!(elicit_pairwise(&b, &Sequence::empty(), "a", "b", false).unwrap().preferred, Direction::Tie);
}

#[test]
fn full_menu_ranking_can_contradict_pairs() {
    let b = PrecedentBackend::table();
    let u = precedents(&[("x or y?", "x", 3), ("x or y or z?", "y", 3)]);
    let rel = elicit_relation(&b, &u, &items(&["x", "y"]), false).unwrap();
    let ranking = elicit_ranking(&b, &u, &items(&["x", "y", "z"])).unwrap();
    assert_eq!(ranking[0].0, "y");
    assert_eq!(ranking_discrepancies(&rel, &ranking), vec![("x".to_string(), "y".to_string())]);
}

#[test]
fn decoy_reverses_the_pair() {
    let b = PrecedentBackend::table();
    let u = precedents(&[("a or b?", "a", 3), ("a or b?", "b", 1), ("a or b or d?", "a", 1), ("a or b or d?", "b", 3)]);
    let r = check_iia(&b, &u, &items(&["a", "b", "d"]), &[items(&["a", "b"]), items(&["a", "b", "d"])]).unwrap();
    assert_eq!(r.choices[0].top, "a");
    assert_eq!(r.choices[1].top, "b");
    assert_eq!(r.violations.len(), 1);
    assert_eq!((r.violations[0].x.as_str(), r.violations[0].y.as_str()), ("a", "b"));
}
