//! Symbol sequences and attributed action records.
//!
//! A [`Sequence`] is canonical text: every line is trimmed, runs of inner
//! whitespace collapse to one space, and blank lines are dropped. Its tokens
//! are whitespace-delimited words with every ASCII punctuation mark (other
//! than `'`, `-` and `_`, which stay inside words) split out as its own token.
//! A backslash escapes the following character; the backslash itself is not
//! part of any token.
//!
//! Records use the grammar below. Text fields escape `\`, `:`, `[` and `]`
//! with a backslash; commas are left alone because a clause boundary is only
//! recognised where `, <id>:` ends in an unescaped colon.
//!
//! ```text
//! record  ::= "[" text ", " clause { ", " clause } "]"
//! clause  ::= id ":" text
//! id      ::= 1*( any char except whitespace "," ":" "[" "]" "\" )
//! text    ::= *( any char except "\" ":" "[" "]" | "\" any char )
//! ```
//!
//! The first clause is the attributed action; later clauses are reactions
//! to it (sanctions or neutral responses).

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqError {
    #[error("invalid actor id {0:?}: must be nonempty and contain no whitespace, ',', ':', '[', ']' or '\\'")]
    InvalidActorId(String),
    #[error("replacement pattern is empty")]
    EmptyPattern,
    #[error("malformed record {text:?}: {reason}")]
    MalformedRecord { text: String, reason: &'static str },
}

/// Characters that must be escaped inside record text fields.
const RESERVED: [char; 4] = ['\\', ':', '[', ']'];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() && !matches!(c, '\'' | '-' | '_')
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !is_punct(c)
}

/// A token located inside a sequence's text. `escaped` tokens start with
/// the escaping backslash, which is excluded from [`Token::as_str`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    end: usize,
    escaped: bool,
}

fn scan(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut word: Option<usize> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c == '\\' {
            if let Some(start) = word.take() {
                out.push(Span { start, end: i, escaped: false });
            }
            match iter.next() {
                Some((j, e)) => {
                    let end = j + e.len_utf8();
                    if is_punct(e) || e.is_whitespace() {
                        out.push(Span { start: i, end, escaped: true });
                    } else {
                        // escaped word character: start a word at the backslash
                        word = Some(i);
                        if iter.peek().map_or(true, |&(_, n)| !is_word_char(n)) {
                            out.push(Span { start: i, end, escaped: true });
                            word = None;
                        }
                    }
                }
                None => out.push(Span { start: i, end: i + 1, escaped: false }),
            }
            continue;
        }
        if c.is_whitespace() {
            if let Some(start) = word.take() {
                out.push(Span { start, end: i, escaped: false });
            }
        } else if is_punct(c) {
            if let Some(start) = word.take() {
                out.push(Span { start, end: i, escaped: false });
            }
            out.push(Span { start: i, end: i + c.len_utf8(), escaped: false });
        } else if word.is_none() {
            word = Some(i);
        }
    }
    if let Some(start) = word {
        out.push(Span { start, end: text.len(), escaped: false });
    }
    out
}

fn span_text(text: &str, s: Span) -> String {
    let raw = &text[s.start..s.end];
    if s.escaped || raw.contains('\\') {
        let mut out = String::with_capacity(raw.len());
        let mut chars = raw.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                if let Some(n) = chars.next() {
                    out.push(n);
                } else {
                    out.push('\\');
                }
            } else {
                out.push(c);
            }
        }
        out
    } else {
        raw.to_string()
    }
}

/// Single spaces between words, single newlines between nonempty lines, no
/// other whitespace.
fn is_canonical(text: &str) -> bool {
    let bytes = text.as_bytes();
    let mut prev = b'\n';
    for &b in bytes {
        match b {
            b' ' | b'\n' if prev == b' ' || prev == b'\n' => return false,
            b'\t' | b'\r' | 0x0b | 0x0c => return false,
            _ if b >= 0x80 => return false,
            _ => {}
        }
        prev = b;
    }
    !matches!(bytes.last(), Some(b' ' | b'\n'))
}

fn canonicalize(text: &str) -> String {
    if is_canonical(text) {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut first = true;
        let mut line_out = String::new();
        for word in line.split_whitespace() {
            if !first {
                line_out.push(' ');
            }
            line_out.push_str(word);
            first = false;
        }
        if !line_out.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&line_out);
        }
    }
    out
}

/// Splits text into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    scan(text).into_iter().map(|s| span_text(text, s)).collect()
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Canonical symbol string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Sequence {
    text: String,
}

impl Sequence {
    pub fn new(text: impl AsRef<str>) -> Self {
        Self { text: canonicalize(text.as_ref()) }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a sequence whose tokens are exactly `tokens`, escaping any
    /// token that would otherwise split or merge.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut text = String::new();
        for t in tokens {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&escape_token(t.as_ref()));
        }
        Self { text }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn token_count(&self) -> usize {
        scan(&self.text).len()
    }

    /// Text with every newline replaced by a space.
    pub fn single_line(&self) -> String {
        self.text.replace('\n', " ")
    }

    /// Appends one token, separated by a space.
    pub fn push_token(&self, token: &str) -> Sequence {
        let mut text = self.text.clone();
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&escape_token(token));
        Sequence { text }
    }

    /// Concatenates with a newline between the two parts, skipping empties.
    pub fn join_lines<'a>(parts: impl IntoIterator<Item = &'a Sequence>) -> Sequence {
        let mut text = String::new();
        for p in parts {
            if p.is_empty() {
                continue;
            }
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&p.text);
        }
        Sequence { text }
    }

    pub fn contains_tokens(&self, pattern: &Sequence) -> bool {
        let hay = self.tokens();
        let needle = pattern.tokens();
        !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
    }
}

fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let chars: Vec<char> = token.chars().collect();
    let single_punct = chars.len() == 1 && is_punct(chars[0]);
    for c in chars {
        if c == '\\' || c.is_whitespace() || (!single_punct && is_punct(c)) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl From<String> for Sequence {
    fn from(s: String) -> Self {
        Sequence::new(s)
    }
}

impl From<&str> for Sequence {
    fn from(s: &str) -> Self {
        Sequence::new(s)
    }
}

impl From<Sequence> for String {
    fn from(s: Sequence) -> String {
        s.text
    }
}

/// Replaces every non-overlapping, left-to-right occurrence of `u`'s token
/// string inside `c` with `v`.
pub fn replace_all(c: &Sequence, u: &Sequence, v: &Sequence) -> Result<Sequence, SeqError> {
    let pattern = u.tokens();
    if pattern.is_empty() {
        return Err(SeqError::EmptyPattern);
    }
    let spans = scan(&c.text);
    let toks: Vec<String> = spans.iter().map(|s| span_text(&c.text, *s)).collect();
    let mut hits: Vec<Range<usize>> = Vec::new();
    let mut i = 0;
    while i + pattern.len() <= toks.len() {
        if toks[i..i + pattern.len()] == pattern[..] {
            hits.push(i..i + pattern.len());
            i += pattern.len();
        } else {
            i += 1;
        }
    }
    if hits.is_empty() {
        return Ok(c.clone());
    }
    let src = &c.text;
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for hit in hits {
        let start = spans[hit.start].start;
        let end = spans[hit.end - 1].end;
        out.push_str(&src[cursor..start]);
        // an empty replacement must not glue its neighbours together
        let next = v.text.chars().next().or_else(|| src[end..].chars().next());
        let needs_lead = out.chars().last().is_some_and(is_word_char) && next.is_some_and(is_word_char);
        if needs_lead {
            out.push(' ');
        }
        out.push_str(&v.text);
        let needs_trail = !v.text.is_empty()
            && v.text.chars().last().is_some_and(is_word_char)
            && src[end..].chars().next().is_some_and(is_word_char);
        if needs_trail {
            out.push(' ');
        }
        cursor = end;
    }
    out.push_str(&src[cursor..]);
    Ok(Sequence::new(out))
}

/// Actor identifier usable inside record text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActorId(String);

impl ActorId {
    pub fn new(id: impl Into<String>) -> Result<Self, SeqError> {
        let id = id.into();
        let valid = !id.is_empty()
            && id.chars().all(|c| !c.is_whitespace() && !matches!(c, ',' | ':' | '[' | ']' | '\\'));
        if valid {
            Ok(ActorId(id))
        } else {
            Err(SeqError::InvalidActorId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ActorId {
    type Error = SeqError;
    fn try_from(s: String) -> Result<Self, SeqError> {
        ActorId::new(s)
    }
}

impl From<ActorId> for String {
    fn from(id: ActorId) -> String {
        id.0
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Escapes a text field for use inside a record.
pub fn escape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\n' {
            out.push(' ');
            continue;
        }
        if RESERVED.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn unescape_field(text: &str) -> String {
    if !text.contains('\\') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(n) => out.push(n),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Field text as it appears inside a record: one line, canonical.
fn field(seq: &Sequence) -> Sequence {
    Sequence::new(seq.single_line())
}

/// One `id:text` clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub actor: ActorId,
    pub text: Sequence,
}

/// `[o, j:a]`: actor `j` took action `a` following observation `o`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub observation: Sequence,
    pub actor_id: ActorId,
    pub action: Sequence,
}

/// Sign of a sanction. Never part of the record text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    Positive,
    Negative,
}

/// `[o, j:a, i:s]`: actor `i` reacted to `j`'s action with sanction `s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanctionedRecord {
    pub base: ActionRecord,
    pub sanctioner_id: ActorId,
    pub sanction: Sequence,
    pub valence: Valence,
}

/// A parsed record with any number of reaction clauses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub observation: Sequence,
    pub act: Clause,
    pub reactions: Vec<Clause>,
}

pub fn make_record(obs: &Sequence, actor_id: &str, action: &Sequence) -> Result<ActionRecord, SeqError> {
    Ok(ActionRecord {
        observation: field(obs),
        actor_id: ActorId::new(actor_id)?,
        action: field(action),
    })
}

impl ActionRecord {
    pub fn new(observation: Sequence, actor_id: ActorId, action: Sequence) -> Self {
        Self { observation: field(&observation), actor_id, action: field(&action) }
    }

    pub fn serialize(&self) -> String {
        format!(
            "[{}, {}:{}]",
            escape_field(self.observation.as_str()),
            self.actor_id,
            escape_field(self.action.as_str())
        )
    }

    pub fn to_sequence(&self) -> Sequence {
        Sequence::new(self.serialize())
    }

    pub fn parse(text: &str) -> Result<Self, SeqError> {
        let rec = Record::parse(text)?;
        if !rec.reactions.is_empty() {
            return Err(SeqError::MalformedRecord { text: text.to_string(), reason: "unexpected reaction clause" });
        }
        Ok(rec.into_action())
    }

    pub fn sanctioned(&self, sanctioner_id: ActorId, sanction: Sequence, valence: Valence) -> SanctionedRecord {
        SanctionedRecord { base: self.clone(), sanctioner_id, sanction: field(&sanction), valence }
    }
}

impl fmt::Display for ActionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl SanctionedRecord {
    pub fn serialize(&self) -> String {
        format!(
            "[{}, {}:{}, {}:{}]",
            escape_field(self.base.observation.as_str()),
            self.base.actor_id,
            escape_field(self.base.action.as_str()),
            self.sanctioner_id,
            escape_field(self.sanction.as_str())
        )
    }

    pub fn to_sequence(&self) -> Sequence {
        Sequence::new(self.serialize())
    }

    /// Parses a record with exactly one reaction; valence comes from outside.
    pub fn parse(text: &str, valence: Valence) -> Result<Self, SeqError> {
        let rec = Record::parse(text)?;
        if rec.reactions.len() != 1 {
            return Err(SeqError::MalformedRecord { text: text.to_string(), reason: "expected exactly one reaction" });
        }
        let reaction = rec.reactions[0].clone();
        Ok(SanctionedRecord {
            base: rec.into_action(),
            sanctioner_id: reaction.actor,
            sanction: reaction.text,
            valence,
        })
    }

    /// The record without its sanction clause.
    pub fn strip(&self) -> ActionRecord {
        self.base.clone()
    }
}

impl Record {
    pub fn from_action(rec: &ActionRecord) -> Self {
        Record {
            observation: rec.observation.clone(),
            act: Clause { actor: rec.actor_id.clone(), text: rec.action.clone() },
            reactions: Vec::new(),
        }
    }

    pub fn into_action(self) -> ActionRecord {
        ActionRecord { observation: self.observation, actor_id: self.act.actor, action: self.act.text }
    }

    pub fn action(&self) -> ActionRecord {
        self.clone().into_action()
    }

    pub fn serialize(&self) -> String {
        let mut out = format!(
            "[{}, {}:{}",
            escape_field(self.observation.as_str()),
            self.act.actor,
            escape_field(self.act.text.as_str())
        );
        for r in &self.reactions {
            out.push_str(&format!(", {}:{}", r.actor, escape_field(r.text.as_str())));
        }
        out.push(']');
        out
    }

    pub fn to_sequence(&self) -> Sequence {
        Sequence::new(self.serialize())
    }

    /// Parses the whole of `text` as one record.
    pub fn parse(text: &str) -> Result<Self, SeqError> {
        let text = text.trim();
        let bad = |reason| SeqError::MalformedRecord { text: text.to_string(), reason };
        if !text.starts_with('[') {
            return Err(bad("missing '['"));
        }
        let close = find_record_end(text, 0).ok_or_else(|| bad("missing closing ']'"))?;
        if close + 1 != text.len() {
            return Err(bad("trailing text after record"));
        }
        parse_body(&text[1..close]).ok_or_else(|| bad("no attributed clause"))
    }

    /// Scans free text for complete records; unparsable brackets are skipped.
    pub fn find_all(text: &str) -> Vec<Record> {
        let mut out = Vec::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'[' => {
                    if let Some(close) = find_record_end(text, i) {
                        if let Some(rec) = parse_body(&text[i + 1..close]) {
                            out.push(rec);
                            i = close + 1;
                            continue;
                        }
                    }
                    i += 1;
                }
                _ => i += 1,
            }
        }
        out
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

/// Byte index of the unescaped `]` closing the record opened at `open`.
/// Returns `None` if another unescaped `[` or a newline comes first.
fn find_record_end(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut i = open + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b']' => return Some(i),
            b'[' | b'\n' => return None,
            _ => i += 1,
        }
    }
    None
}

/// Byte offsets of unescaped `:` characters.
fn unescaped_colons(body: &str) -> Vec<usize> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b':' => {
                out.push(i);
                i += 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// Locates the `, id` header preceding the colon at `colon`; returns the
/// offset of the comma and the id.
fn clause_header(body: &str, colon: usize) -> Option<(usize, ActorId)> {
    let before = &body[..colon];
    let id_start = before
        .char_indices()
        .rev()
        .take_while(|&(_, c)| !c.is_whitespace() && !matches!(c, ',' | ':' | '[' | ']' | '\\'))
        .last()
        .map(|(i, _)| i)?;
    let id = ActorId::new(&before[id_start..]).ok()?;
    let sep = before[..id_start].strip_suffix(", ")?;
    // the comma itself must not be escaped
    if sep.ends_with('\\') && !sep.ends_with("\\\\") {
        return None;
    }
    Some((sep.len(), id))
}

/// Parses the inside of `[ ... ]`; a trailing open clause is allowed when
/// `open` is requested by the caller through [`parse_open_body`].
fn parse_body(body: &str) -> Option<Record> {
    let (obs, clauses) = split_clauses(body)?;
    let mut iter = clauses.into_iter();
    let act = iter.next()?;
    Some(Record { observation: obs, act, reactions: iter.collect() })
}

fn split_clauses(body: &str) -> Option<(Sequence, Vec<Clause>)> {
    let mut headers = Vec::new();
    for colon in unescaped_colons(body) {
        let (comma, id) = clause_header(body, colon)?;
        headers.push((comma, colon, id));
    }
    if headers.is_empty() {
        return None;
    }
    let obs = Sequence::new(unescape_field(&body[..headers[0].0]));
    let mut clauses = Vec::with_capacity(headers.len());
    for (k, (_, colon, id)) in headers.iter().enumerate() {
        let end = headers.get(k + 1).map_or(body.len(), |h| h.0);
        if end < colon + 1 {
            return None;
        }
        clauses.push(Clause { actor: id.clone(), text: Sequence::new(unescape_field(&body[colon + 1..end])) });
    }
    Some((obs, clauses))
}

/// An unterminated record at the very end of a context: the point where a
/// backend is asked to continue an attributed clause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenSlot {
    pub observation: Sequence,
    /// Complete clauses before the open one.
    pub closed: Vec<Clause>,
    /// Author of the clause being written.
    pub actor: ActorId,
    /// Tokens already written into the open clause.
    pub partial: Vec<String>,
    /// Byte offset of the `[` that opens the slot.
    pub open_at: usize,
}

impl OpenSlot {
    /// Detects an open record on the last line of `text`.
    pub fn detect(text: &str) -> Option<OpenSlot> {
        let line_start = text.rfind('\n').map_or(0, |i| i + 1);
        let line = &text[line_start..];
        // the last unescaped '[' on the line with no unescaped ']' after it
        let bytes = line.as_bytes();
        let mut open = None;
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'[' => {
                    open = Some(i);
                    i += 1;
                }
                b']' => {
                    open = None;
                    i += 1;
                }
                _ => i += 1,
            }
        }
        let open = open?;
        let body = &line[open + 1..];
        let (obs, mut clauses) = split_clauses(body)?;
        let last = clauses.pop()?;
        Some(OpenSlot {
            observation: obs,
            closed: clauses,
            actor: last.actor,
            partial: last.text.tokens(),
            open_at: line_start + open,
        })
    }

    /// Renders `[obs, c1, ..., actor:` with no partial text.
    pub fn header(observation: &Sequence, closed: &[Clause], actor: &ActorId) -> String {
        let mut out = format!("[{}", escape_field(observation.as_str()));
        for c in closed {
            out.push_str(&format!(", {}:{}", c.actor, escape_field(c.text.as_str())));
        }
        out.push_str(&format!(", {}:", actor));
        out
    }
}
