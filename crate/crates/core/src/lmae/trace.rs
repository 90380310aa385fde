use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{LmaeError, Result};

pub const TRACE_FORMAT: &str = "normlab-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    #[default]
    Actions,
    Assemblies,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub horizon: usize,
    pub actors: Vec<String>,
    pub verbosity: Verbosity,
}

/// Everything that happened in one tick. Maps are keyed by actor id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRecord {
    pub tick: usize,
    pub state: String,
    pub observations: BTreeMap<String, String>,
    pub actions: BTreeMap<String, String>,
    /// Feedback for actions that failed a validity rule.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub invalid: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Transition rule that fired; `null` for the fallback.
    pub transition: Option<String>,
    pub next_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assemblies: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_sizes: Option<BTreeMap<String, usize>>,
}

/// Written after the last tick when the episode stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceError {
    pub tick: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub ticks: Vec<TickRecord>,
    pub error: Option<TraceError>,
}

impl Trace {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
            && self.ticks.len() == self.header.horizon
            && self.ticks.iter().enumerate().all(|(i, t)| t.tick == i)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| LmaeError::Io(e.to_string());
        writeln!(out, "{}", line(&self.header)).map_err(io)?;
        for t in &self.ticks {
            writeln!(out, "{}", line(t)).map_err(io)?;
        }
        if let Some(e) = &self.error {
            writeln!(out, "{}", line(e)).map_err(io)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json writes UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let parse = |e: serde_json::Error| LmaeError::Trace(e.to_string());
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| LmaeError::Trace("empty trace".into()))?
            .map_err(|e| LmaeError::Io(e.to_string()))?;
        let header: TraceHeader = serde_json::from_str(&first).map_err(parse)?;
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(LmaeError::Trace(format!("unsupported trace {} v{}", header.format, header.version)));
        }
        let mut ticks = Vec::new();
        let mut error = None;
        for line in lines {
            let line = line.map_err(|e| LmaeError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if error.is_some() {
                return Err(LmaeError::Trace("records after the error line".into()));
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(parse)?;
            if value.get("error").is_some() {
                error = Some(serde_json::from_value(value).map_err(parse)?);
            } else {
                ticks.push(serde_json::from_value(value).map_err(parse)?);
            }
        }
        Ok(Trace { header, ticks, error })
    }
}

fn line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("trace records serialize")
}
