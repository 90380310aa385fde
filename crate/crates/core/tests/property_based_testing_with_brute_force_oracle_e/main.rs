//! Sequence utilities checked against naive reimplementations.

use normlab::seq::{replace_all, tokenize, ActionRecord, ActorId, Record, Sequence, Valence};
use proptest::prelude::*;

/// Tokenizer for backslash-free text: whitespace separates, and every ASCII
/// punctuation mark other than `'`, `-`, `_` stands alone.
fn naive_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        let punct = c.is_ascii_punctuation() && !matches!(c, '\'' | '-' | '_');
        if c.is_whitespace() || punct {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if punct {
                out.push(c.to_string());
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn naive_canonical(text: &str) -> String {
    text.split('\n')
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn naive_replace(hay: &[String], pat: &[String], with: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < hay.len() {
        if i + pat.len() <= hay.len() && hay[i..i + pat.len()] == *pat {
            out.extend(with.iter().cloned());
            i += pat.len();
        } else {
            out.push(hay[i].clone());
            i += 1;
        }
    }
    out
}

fn plain_text() -> impl Strategy<Value = String> {
    "[a-c .,!?'\\-:\\[\\]\t\n]{0,40}"
}

fn small_text() -> impl Strategy<Value = String> {
    "[a-c .!]{0,12}"
}

fn field_text() -> impl Strategy<Value = String> {
    "[a-z :,.\\[\\]\\\\\n]{0,24}"
}

fn actor_id() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9_.-]{0,6}"
}

proptest! {
    #[test]
    fn tokenizer_matches_naive(text in plain_text()) {
        prop_assert_eq!(tokenize(&text), naive_tokens(&text));
    }

    #[test]
    fn canonical_form_matches_naive(text in "[a-c \t\r\n\u{a0}]{0,30}") {
        prop_assert_eq!(String::from(Sequence::new(&text)), naive_canonical(&text));
    }

    #[test]
    fn canonicalization_is_idempotent_and_keeps_tokens(text in plain_text()) {
        let s = Sequence::new(&text);
        prop_assert_eq!(&Sequence::new(s.as_str()), &s);
        prop_assert_eq!(s.tokens(), naive_tokens(&text));
    }

    #[test]
    fn from_tokens_round_trips(tokens in prop::collection::vec("[a-z'_-]{1,5}|[.,!?:]", 0..8)) {
        prop_assert_eq!(Sequence::from_tokens(&tokens).tokens(), tokens);
    }

    #[test]
    fn replace_all_matches_token_oracle(c in small_text(), u in "[a-c!]{1,2}( [a-c!]{1,2})?", v in small_text()) {
        let (c, u, v) = (Sequence::new(&c), Sequence::new(&u), Sequence::new(&v));
        let got = replace_all(&c, &u, &v).unwrap();
        prop_assert_eq!(got.tokens(), naive_replace(&c.tokens(), &u.tokens(), &v.tokens()));
    }

    #[test]
    fn replace_all_without_match_is_identity(c in "[a-b ]{0,20}", v in small_text()) {
        let c = Sequence::new(&c);
        prop_assert_eq!(replace_all(&c, &Sequence::new("zz"), &Sequence::new(&v)).unwrap(), c);
    }

    #[test]
    fn action_record_round_trips(obs in field_text(), id in actor_id(), act in field_text()) {
        let rec = ActionRecord::new(Sequence::new(&obs), ActorId::new(id).unwrap(), Sequence::new(&act));
        let text = rec.serialize();
        prop_assert!(!text.contains('\n'));
        prop_assert_eq!(&ActionRecord::parse(&text).unwrap(), &rec);
        prop_assert_eq!(Record::find_all(&format!("noise [ {text} tail")), vec![Record::from_action(&rec)]);
    }

    #[test]
    fn sanctioned_record_round_trips(
        obs in field_text(), a in actor_id(), act in field_text(), b in actor_id(), sig in field_text(),
    ) {
        let rec = ActionRecord::new(Sequence::new(&obs), ActorId::new(a).unwrap(), Sequence::new(&act));
        let s = rec.sanctioned(ActorId::new(b).unwrap(), Sequence::new(&sig), Valence::Positive);
        let back = normlab::seq::SanctionedRecord::parse(&s.serialize(), Valence::Positive).unwrap();
        prop_assert_eq!(back.strip(), rec);
        prop_assert_eq!(back, s);
    }
}

#[test]
fn empty_replacement_keeps_neighbours_apart() {
    let c = Sequence::new("a.b");
    let got = replace_all(&c, &Sequence::new("."), &Sequence::empty()).unwrap();
    assert_eq!(got.tokens(), vec!["a", "b"]);
}
