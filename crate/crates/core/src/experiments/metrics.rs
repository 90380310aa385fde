use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};

/// One long-format measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    /// `treatment`, `ablation`, or a transmit mode for polarization.
    pub arm: String,
    pub seed: u64,
    /// Tick, sweep value or cell name.
    pub point: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, experiment: &str, arm: &str, seed: u64, point: impl ToString, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            experiment: experiment.into(),
            arm: arm.into(),
            seed,
            point: point.to_string(),
            metric: metric.into(),
            value,
        });
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
    }

    pub fn value(&self, arm: &str, seed: u64, point: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.seed == seed && r.point == point && r.metric == metric)
            .map(|r| r.value)
    }

    /// `(point, value)` pairs of one metric in row order.
    pub fn series(&self, arm: &str, seed: u64, metric: &str) -> Vec<(String, f64)> {
        self.rows
            .iter()
            .filter(|r| r.arm == arm && r.seed == seed && r.metric == metric)
            .map(|r| (r.point.clone(), r.value))
            .collect()
    }

    /// Every (experiment, arm, seed) group reports the same metrics at each
    /// of its points, once each.
    pub fn validate(&self) -> Result<()> {
        let mut groups: BTreeMap<(&str, &str, u64), BTreeMap<&str, BTreeSet<&str>>> = BTreeMap::new();
        for r in &self.rows {
            if r.experiment.is_empty() || r.arm.is_empty() || r.point.is_empty() || r.metric.is_empty() {
                return Err(ExperimentError::Metrics(format!("empty field in {r:?}")));
            }
            let point = groups.entry((&r.experiment, &r.arm, r.seed)).or_default().entry(&r.point).or_default();
            if !point.insert(&r.metric) {
                return Err(ExperimentError::Metrics(format!("duplicate {} at {} in {}/{}", r.metric, r.point, r.experiment, r.arm)));
            }
        }
        for ((e, a, s), points) in &groups {
            let mut sets = points.values();
            let first = sets.next().expect("group has a row");
            if sets.any(|m| m != first) {
                return Err(ExperimentError::Metrics(format!("metrics differ across points in {e}/{a} seed {s}")));
            }
        }
        Ok(())
    }

    /// Header `experiment,arm,seed,point,metric,value`; validates first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| ExperimentError::Io(e.to_string());
        w.write_record(["experiment", "arm", "seed", "point", "metric", "value"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([&r.experiment, &r.arm, &r.seed.to_string(), &r.point, &r.metric, &r.value.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| ExperimentError::Io(e.to_string()))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writes UTF-8"))
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricRow>, _>>()
            .map_err(|e| ExperimentError::Io(e.to_string()))?;
        Ok(Self { rows })
    }
}
