//! Sweep reports: CSV (the canonical form), Markdown tables and plot data.
//!
//! The CSV schema is fixed; `md` and `plotdata` can be regenerated from a
//! CSV alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bench::SweepRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad latency value {0:?}")]
    Latency(String),
}

/// One CSV row. `strategy` and `reuse_factor` are empty for runtime-weight
/// points; `exceeded` is a `;`-separated list of `resource:used/available`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub precision: String,
    pub framework: String,
    pub strategy: String,
    pub reuse_factor: Option<u32>,
    pub label: String,
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub bram18: u64,
    pub latency_cycles: u64,
    /// Exact decimal microseconds.
    pub latency_us: String,
    pub simulated_cycles: Option<u64>,
    pub feasible: bool,
    pub exceeded: String,
    pub annotation: String,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "model",
    "precision",
    "framework",
    "strategy",
    "reuse_factor",
    "label",
    "lut",
    "ff",
    "dsp",
    "bram18",
    "latency_cycles",
    "latency_us",
    "simulated_cycles",
    "feasible",
    "exceeded",
    "annotation",
];

impl ReportRow {
    pub fn from_record(r: &SweepRecord) -> Self {
        let t = &r.resources.total;
        ReportRow {
            model: r.model.clone(),
            precision: r.design.precision.to_string(),
            framework: if r.design.reuse_factor().is_some() {
                "baked"
            } else {
                "snl"
            }
            .to_string(),
            strategy: r.design.strategy().map(|s| s.name().to_string()).unwrap_or_default(),
            reuse_factor: r.design.reuse_factor(),
            label: r.design.label(),
            lut: t.lut,
            ff: t.ff,
            dsp: t.dsp,
            bram18: t.bram,
            latency_cycles: r.latency.cycles,
            latency_us: r.latency.microseconds(),
            simulated_cycles: r.simulated_cycles,
            feasible: r.feasible(),
            exceeded: r
                .exceeded()
                .iter()
                .map(|e| format!("{}:{}/{}", e.resource.name(), e.used, e.available))
                .collect::<Vec<_>>()
                .join(";"),
            annotation: r.annotation.clone().unwrap_or_default(),
        }
    }

    pub fn group_key(&self) -> String {
        format!("{}-{}", self.model, self.precision)
    }

    /// Bar order inside a group: runtime weights, then latency by RF, then
    /// resource by RF.
    fn bar_rank(&self) -> (u8, u32) {
        let class = match (self.framework.as_str(), self.strategy.as_str()) {
            ("snl", _) => 0,
            (_, "latency") => 1,
            _ => 2,
        };
        (class, self.reuse_factor.unwrap_or(0))
    }
}

pub fn rows(records: &[SweepRecord]) -> Vec<ReportRow> {
    records.iter().map(ReportRow::from_record).collect()
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(ReportError::from)).collect()
}

/// Rows grouped by model-precision, groups in first-seen order, bars in
/// plot order.
pub fn groups(rows: &[ReportRow]) -> Vec<(String, Vec<&ReportRow>)> {
    let mut out: Vec<(String, Vec<&ReportRow>)> = Vec::new();
    for row in rows {
        let key = row.group_key();
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, list)) => list.push(row),
            None => out.push((key, vec![row])),
        }
    }
    for (_, list) in &mut out {
        list.sort_by_key(|r| r.bar_rank());
    }
    out
}

pub fn to_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::from("# Benchmark sweep\n");
    for (key, list) in groups(rows) {
        s.push_str(&format!("\n## {key}\n\n"));
        s.push_str("| design | LUT | FF | DSP | BRAM18 | cycles | latency (us) | fits | notes |\n");
        s.push_str("|---|---:|---:|---:|---:|---:|---:|---|---|\n");
        for r in list {
            let notes = [r.exceeded.as_str(), r.annotation.as_str()]
                .into_iter()
                .filter(|n| !n.is_empty())
                .collect::<Vec<_>>()
                .join("; ");
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.label,
                r.lut,
                r.ff,
                r.dsp,
                r.bram18,
                r.latency_cycles,
                r.latency_us,
                if r.feasible { "yes" } else { "no" },
                notes.replace('|', "/")
            ));
        }
    }
    s
}

/// Bar-chart data. Infeasible points keep their slot with `null` values so
/// a plot shows a gap rather than a bar.
pub fn to_plotdata(rows: &[ReportRow]) -> Result<String, ReportError> {
    let mut out = BTreeMap::new();
    let mut order = Vec::new();
    for (key, list) in groups(rows) {
        let metric = |f: &dyn Fn(&ReportRow) -> Value| -> Vec<Value> {
            list.iter()
                .map(|r| if r.feasible { f(r) } else { Value::Null })
                .collect()
        };
        let mut latency = Vec::with_capacity(list.len());
        for r in &list {
            if r.feasible {
                let us: f64 = r
                    .latency_us
                    .parse()
                    .map_err(|_| ReportError::Latency(r.latency_us.clone()))?;
                latency.push(json!(us));
            } else {
                latency.push(Value::Null);
            }
        }
        let group = json!({
            "model": list[0].model,
            "precision": list[0].precision,
            "labels": list.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(),
            "feasible": list.iter().map(|r| r.feasible).collect::<Vec<_>>(),
            "annotations": list.iter().map(|r| if r.annotation.is_empty() { Value::Null } else { json!(r.annotation) }).collect::<Vec<_>>(),
            "series": {
                "lut": metric(&|r| json!(r.lut)),
                "ff": metric(&|r| json!(r.ff)),
                "dsp": metric(&|r| json!(r.dsp)),
                "bram18": metric(&|r| json!(r.bram18)),
                "latency_us": latency,
            },
        });
        order.push(key.clone());
        out.insert(key, group);
    }
    let doc = json!({ "order": order, "groups": out });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}
