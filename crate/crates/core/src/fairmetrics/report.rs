use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};
use crate::seed;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 1000;

/// Mean and sample standard deviation of `statistic` over `iterations`
/// resamples drawn with replacement.
pub fn bootstrap_ci<T, F>(items: &[T], statistic: F, iterations: usize, seed: u64) -> Result<(f64, f64)>
where
    T: Clone,
    F: Fn(&[T]) -> f64,
{
    if items.is_empty() {
        return Err(data_err!("cannot bootstrap an empty sample"));
    }
    if iterations == 0 {
        return Err(data_err!("bootstrap needs at least one iteration"));
    }
    let mut rng = seed::rng(seed, "bootstrap");
    let n = items.len();
    let mut sample = Vec::with_capacity(n);
    let stats: Vec<f64> = (0..iterations)
        .map(|_| {
            sample.clear();
            sample.extend((0..n).map(|_| items[rng.random_range(0..n)].clone()));
            statistic(&sample)
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / iterations as f64;
    let var = if iterations > 1 {
        stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (iterations - 1) as f64
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_std: Option<f64>,
    pub n: usize,
}

/// Named metric values, sorted by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub entries: BTreeMap<String, MetricEntry>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64, n: usize) -> &mut MetricEntry {
        let e = self.entries.entry(name.into()).or_insert(MetricEntry {
            value,
            ci_mean: None,
            ci_std: None,
            n,
        });
        *e = MetricEntry { value, ci_mean: None, ci_std: None, n };
        e
    }

    pub fn insert_with_ci(&mut self, name: impl Into<String>, value: f64, n: usize, ci: (f64, f64)) {
        let e = self.insert(name, value, n);
        e.ci_mean = Some(ci.0);
        e.ci_std = Some(ci.1);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|e| e.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table; `percent` scales values and intervals by 100.
    pub fn to_table(&self, percent: bool) -> String {
        let scale = if percent { 100.0 } else { 1.0 };
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v * scale));
        let rows: Vec<[String; 5]> = self
            .entries
            .iter()
            .map(|(k, e)| [k.clone(), fmt(Some(e.value)), fmt(e.ci_mean), fmt(e.ci_std), e.n.to_string()])
            .collect();
        let header = ["metric", "value", "ci_mean", "ci_std", "n"].map(String::from);
        let mut widths = header.clone().map(|h| h.len());
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&header).chain(&rows) {
            let _ = write!(out, "{:<w$}", r[0], w = widths[0]);
            for (c, w) in r.iter().zip(widths).skip(1) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
