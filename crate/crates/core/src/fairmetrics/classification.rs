use std::collections::BTreeSet;

use crate::error::{data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionRecord {
    pub predicted: usize,
    pub truth: usize,
    pub attribute: usize,
}

impl PredictionRecord {
    pub fn new(predicted: usize, truth: usize, attribute: usize) -> Self {
        Self { predicted, truth, attribute }
    }
}

/// Builds records from parallel label vectors.
pub fn records_from(predicted: &[usize], truth: &[usize], attributes: &[usize]) -> Result<Vec<PredictionRecord>> {
    if predicted.len() != truth.len() || truth.len() != attributes.len() {
        return Err(data_err!(
            "prediction ({}), class ({}) and attribute ({}) lengths differ",
            predicted.len(),
            truth.len(),
            attributes.len()
        ));
    }
    Ok((0..predicted.len())
        .map(|i| PredictionRecord::new(predicted[i], truth[i], attributes[i]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DpDefinition {
    /// Per-class recall gap: `|P(Ŷ=k | Y=k, a=1) − P(Ŷ=k | Y=k, a=0)|`.
    #[default]
    Recall,
    /// Prediction-rate gap conditioned on the attribute only:
    /// `|P(Ŷ=k | a=1) − P(Ŷ=k | a=0)|`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaDp {
    pub value: f64,
    /// Per-class gaps in class order.
    pub per_class: Vec<(usize, f64)>,
    /// Classes left out because one attribute group had no sample.
    pub skipped: Vec<usize>,
}

fn class_set(records: &[PredictionRecord]) -> BTreeSet<usize> {
    records.iter().flat_map(|r| [r.predicted, r.truth]).collect()
}

/// Mean over classes of the binary demographic-parity gap.
pub fn delta_dp_mean(records: &[PredictionRecord], definition: DpDefinition) -> Result<DeltaDp> {
    if let Some(r) = records.iter().find(|r| r.attribute > 1) {
        return Err(data_err!("binary disparity needs attributes 0/1, found {}", r.attribute));
    }
    let groups = [0, 1].map(|a| records.iter().filter(|r| r.attribute == a).count());
    if groups.contains(&0) {
        return Err(data_err!("both attribute values must be present"));
    }
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for k in class_set(records) {
        let rate = |a: usize| -> Option<f64> {
            let pool: Vec<_> = records
                .iter()
                .filter(|r| r.attribute == a && (definition == DpDefinition::Literal || r.truth == k))
                .collect();
            (!pool.is_empty()).then(|| pool.iter().filter(|r| r.predicted == k).count() as f64 / pool.len() as f64)
        };
        match (rate(0), rate(1)) {
            (Some(r0), Some(r1)) => per_class.push((k, (r1 - r0).abs())),
            _ => skipped.push(k),
        }
    }
    if per_class.is_empty() {
        return Err(data_err!("no class has samples from both attribute groups"));
    }
    let value = per_class.iter().map(|p| p.1).sum::<f64>() / per_class.len() as f64;
    Ok(DeltaDp { value, per_class, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiDp {
    pub mean: f64,
    pub max: f64,
    pub per_class: Vec<(usize, f64)>,
}

/// Largest pairwise gap in `P(Ŷ=c | a)` across attribute values, per class.
pub fn dp_multi(records: &[PredictionRecord]) -> Result<MultiDp> {
    let attrs: BTreeSet<usize> = records.iter().map(|r| r.attribute).collect();
    if attrs.len() < 2 {
        return Err(data_err!("need at least two attribute values, found {}", attrs.len()));
    }
    let per_class: Vec<(usize, f64)> = class_set(records)
        .into_iter()
        .map(|c| {
            let rates: Vec<f64> = attrs
                .iter()
                .map(|&a| {
                    let pool = records.iter().filter(|r| r.attribute == a);
                    let (hit, n) = pool.fold((0usize, 0usize), |(h, n), r| (h + usize::from(r.predicted == c), n + 1));
                    hit as f64 / n as f64
                })
                .collect();
            let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
            (c, hi - lo)
        })
        .collect();
    let mean = per_class.iter().map(|p| p.1).sum::<f64>() / per_class.len() as f64;
    let max = per_class.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(MultiDp { mean, max, per_class })
}

pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.predicted == r.truth).count() as f64 / records.len() as f64
}
