//! Results table: one row per configuration with scores, time, trainable
//! parameters and speedup against the full single-precision baseline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::Precision;
use super::run::{MeanStd, RunResult, SELECTION_RULE};
use crate::error::{Error, Result};
use crate::model::{counts, FreezePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub plan: FreezePlan,
    pub precision: Precision,
    pub cached: bool,
    pub layers: String,
    pub trainable_params: usize,
    pub params_display: String,
    pub activation: Option<MeanStd>,
    pub valence: Option<MeanStd>,
    pub time_seconds: Option<f64>,
    pub speedup: Option<f64>,
}

impl ReportRow {
    pub fn params_only(plan: FreezePlan, n_layers: usize, precision: Precision, trainable_params: usize) -> Self {
        let p = match precision {
            Precision::Single => "sp",
            Precision::Mixed => "mp",
        };
        Self {
            label: format!("{}_{p}", plan.short_name()),
            plan,
            precision,
            cached: plan.is_caching(),
            layers: match plan {
                FreezePlan::Full => n_layers.to_string(),
                FreezePlan::Partial { n } | FreezePlan::CachingPartial { n } => n.to_string(),
                FreezePlan::Lora => "LoRA".into(),
            },
            trainable_params,
            params_display: counts::display(trainable_params),
            activation: None,
            valence: None,
            time_seconds: None,
            speedup: None,
        }
    }

    pub fn from_run(r: &RunResult, n_layers: usize) -> Self {
        let mut row = Self::params_only(r.plan, n_layers, r.precision, r.trainable_params);
        row.label = r.label.clone();
        row.activation = Some(r.aggregate.test_activation);
        row.valence = Some(r.aggregate.test_valence);
        row.time_seconds = Some(r.aggregate.train_seconds.mean);
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub selection: String,
    pub baseline: Option<String>,
    pub rows: Vec<ReportRow>,
}

/// `1 − t / t_baseline`.
pub fn speedup(t: f64, baseline: f64) -> f64 {
    1.0 - t / baseline
}

/// Fills speedups relative to `baseline`. Rows with timings need the
/// baseline row to be present and timed.
pub fn bench_report(mut rows: Vec<ReportRow>, baseline: &str) -> Result<BenchReport> {
    let timed = rows.iter().any(|r| r.time_seconds.is_some());
    if !timed {
        return Ok(BenchReport {
            selection: SELECTION_RULE.into(),
            baseline: None,
            rows,
        });
    }
    let base = rows
        .iter()
        .find(|r| r.label == baseline)
        .and_then(|r| r.time_seconds)
        .ok_or_else(|| Error::Report(format!("baseline `{baseline}` missing or untimed")))?;
    for r in &mut rows {
        r.speedup = r.time_seconds.map(|t| speedup(t, base));
    }
    Ok(BenchReport {
        selection: SELECTION_RULE.into(),
        baseline: Some(baseline.into()),
        rows,
    })
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Report(e.to_string()))
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let ms = |m: &Option<MeanStd>| m.map_or("-".to_string(), |m| format!("{:.3}±{:.3}", m.mean, m.std));
        let header = ["Config", "Layers", "Prec", "Cached", "Act", "Val", "Time(s)", "Params", "Speedup"];
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    r.layers.clone(),
                    match r.precision {
                        Precision::Single => "single".into(),
                        Precision::Mixed => "mixed".into(),
                    },
                    if r.cached { "yes".into() } else { "no".into() },
                    ms(&r.activation),
                    ms(&r.valence),
                    r.time_seconds.map_or("-".into(), |t| format!("{t:.2}")),
                    r.params_display.clone(),
                    r.speedup.map_or("-".into(), |s| format!("{:.1}%", 100.0 * s)),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        for row in &body {
            line(row.iter().map(|s| s.as_str()).collect(), &mut out);
        }
        if let Some(b) = &self.baseline {
            let _ = writeln!(out, "speedup relative to {b}; model selection: {}", self.selection);
        }
        out
    }
}
