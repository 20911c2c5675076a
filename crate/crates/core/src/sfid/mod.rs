//! Selective feature imputation.
//!
//! A forest trained to predict the sensitive attribute ranks the embedding
//! dimensions by Gini importance. The `k` most important dimensions form the
//! selected set `S`. Each selected dimension is then overwritten in every
//! query embedding with `μ_j`, the mean of that dimension over validation
//! samples the forest cannot label confidently (confidence `≤ τ`). The
//! high-confidence variant averages over samples confidently predicted as a
//! chosen attribute instead, and two ablation modes fill with zeros or with
//! fresh standard Gaussian noise.

mod tensor;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embstore::{AttributeTable, EmbeddingMatrix};
use crate::error::{config_err, data_err, Error, Result};
use crate::forest::{fit_forest, ForestModel, ForestParams, Probabilities};
use crate::seed;

pub use tensor::{apply_debias_tensor, apply_debias_tensor_seeded, reduce_to_2d};

pub const MODEL_VERSION: u32 = 1;

/// How selected dimensions are filled at application time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImputeMode {
    /// Mean of low-confidence validation samples.
    #[serde(rename = "LC")]
    LowConfidence,
    /// Mean of samples confidently predicted as one attribute value.
    #[serde(rename = "HC")]
    HighConfidence,
    #[serde(rename = "ZERO")]
    Zero,
    /// Zero-centred unit-variance noise drawn per application.
    #[serde(rename = "GAUSS")]
    Gaussian,
    /// Selected dimensions are removed instead of filled.
    #[serde(rename = "DROP")]
    Drop,
}

impl ImputeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ImputeMode::LowConfidence => "LC",
            ImputeMode::HighConfidence => "HC",
            ImputeMode::Zero => "ZERO",
            ImputeMode::Gaussian => "GAUSS",
            ImputeMode::Drop => "DROP",
        }
    }

    /// Whether the output keeps the input's width.
    pub fn preserves_dim(self) -> bool {
        self != ImputeMode::Drop
    }
}

impl fmt::Display for ImputeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImputeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LC" | "LCI" => Ok(ImputeMode::LowConfidence),
            "HC" => Ok(ImputeMode::HighConfidence),
            "ZERO" => Ok(ImputeMode::Zero),
            "GAUSS" | "GAUSSIAN" => Ok(ImputeMode::Gaussian),
            "DROP" => Ok(ImputeMode::Drop),
            _ => Err(config_err!("unknown imputation mode {s:?}; expected LC, HC, ZERO, GAUSS or DROP")),
        }
    }
}

/// Fitting mode for [`fit_sfid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfidMode {
    LowConfidence,
    HighConfidence { target: usize },
    Zero,
    Gaussian,
}

impl SfidMode {
    pub fn impute_mode(self) -> ImputeMode {
        match self {
            SfidMode::LowConfidence => ImputeMode::LowConfidence,
            SfidMode::HighConfidence { .. } => ImputeMode::HighConfidence,
            SfidMode::Zero => ImputeMode::Zero,
            SfidMode::Gaussian => ImputeMode::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfidParams {
    pub k: usize,
    pub tau: f64,
    pub mode: SfidMode,
    /// Confidence floor for the high-confidence set.
    pub hc_threshold: f64,
    /// When set and the low-confidence set is empty, use this fraction of the
    /// least confident validation samples instead of failing.
    pub fallback_quantile: Option<f64>,
    pub forest: ForestParams,
    /// Default seed for Gaussian fills.
    pub noise_seed: u64,
    pub dataset_tag: String,
}

impl Default for SfidParams {
    fn default() -> Self {
        Self {
            k: 50,
            tau: 0.7,
            mode: SfidMode::LowConfidence,
            hc_threshold: 0.9,
            fallback_quantile: None,
            forest: ForestParams::default(),
            noise_seed: 0,
            dataset_tag: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest_seed: Option<u64>,
    #[serde(default)]
    pub dataset_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hc_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_set_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_quantile: Option<f64>,
    /// Free-form entries such as input file hashes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub manifest: BTreeMap<String, String>,
}

/// Selected indices and their fill values: the portable debiasing artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasModel {
    version: u32,
    mode: ImputeMode,
    k: usize,
    tau: Option<f64>,
    source_dim: usize,
    indices: Vec<usize>,
    values: Vec<f32>,
    provenance: Provenance,
}

impl DebiasModel {
    /// Builds a model from parts; `indices` need not be sorted.
    pub fn new(
        mode: ImputeMode,
        tau: Option<f64>,
        source_dim: usize,
        indices: Vec<usize>,
        values: Vec<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(config_err!("{} indices but {} values", indices.len(), values.len()));
        }
        let mut pairs: Vec<(usize, f32)> = indices.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        let model = Self {
            version: MODEL_VERSION,
            mode,
            k: pairs.len(),
            tau,
            source_dim,
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
            provenance,
        };
        model.validate().map_err(|e| config_err!("{e}"))?;
        Ok(model)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.version != MODEL_VERSION {
            return Err(format!("unsupported model version {}", self.version));
        }
        if self.source_dim == 0 {
            return Err("source_dim must be positive".into());
        }
        if self.indices.len() != self.k || self.values.len() != self.k {
            return Err(format!(
                "k={} but {} indices and {} values",
                self.k,
                self.indices.len(),
                self.values.len()
            ));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err("indices must be strictly increasing".into());
        }
        if let Some(&last) = self.indices.last() {
            if last >= self.source_dim {
                return Err(format!("index {last} out of range for source_dim {}", self.source_dim));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err("imputation values must be finite".into());
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t <= 1.0) {
                return Err(format!("tau {t} outside (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> ImputeMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn provenance_mut(&mut self) -> &mut Provenance {
        &mut self.provenance
    }

    /// Output width after application.
    pub fn output_dim(&self) -> usize {
        if self.mode.preserves_dim() {
            self.source_dim
        } else {
            self.source_dim - self.k
        }
    }

    /// Same selection with a different fill: the zero and Gaussian ablations.
    pub fn with_fill(&self, mode: ImputeMode, noise_seed: u64) -> Result<Self> {
        let mut out = self.clone();
        match mode {
            ImputeMode::Zero | ImputeMode::Drop => {
                out.values = vec![0.0; self.k];
                out.provenance.noise_seed = None;
            }
            ImputeMode::Gaussian => {
                out.values = vec![0.0; self.k];
                out.provenance.noise_seed = Some(noise_seed);
            }
            ImputeMode::LowConfidence | ImputeMode::HighConfidence => {
                if mode != self.mode {
                    return Err(config_err!("{mode} values can only come from fitting"));
                }
            }
        }
        out.mode = mode;
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("debias model: {e}")))?;
        model.validate().map_err(|e| Error::Format(format!("debias model: {e}")))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Everything produced while fitting, for inspection.
#[derive(Debug, Clone)]
pub struct SfidFit {
    pub model: DebiasModel,
    pub forest: ForestModel,
    /// Validation rows averaged into the fill values (empty for ZERO/GAUSS).
    pub confidence_set: Vec<usize>,
}

/// Slack on confidence comparisons so that vote fractions such as 70/100
/// are not pushed across the threshold by summation rounding.
pub const CONFIDENCE_EPS: f64 = 1e-9;

/// Validation rows with confidence at or below `tau`.
pub fn low_confidence_set(confidence: &[f64], tau: f64) -> Vec<usize> {
    (0..confidence.len()).filter(|&i| confidence[i] <= tau + CONFIDENCE_EPS).collect()
}

/// Validation rows predicted as `target` with confidence at least `threshold`.
pub fn high_confidence_set(proba: &Probabilities, target: usize, threshold: f64) -> Vec<usize> {
    let pred = proba.predicted();
    let conf = proba.confidence();
    (0..pred.len())
        .filter(|&i| pred[i] == target && conf[i] >= threshold - CONFIDENCE_EPS)
        .collect()
}

/// The `ceil(q·n)` least confident rows, ties to the lower index.
fn quantile_set(confidence: &[f64], q: f64) -> Vec<usize> {
    let n = confidence.len();
    let take = ((q * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidence[a].total_cmp(&confidence[b]).then(a.cmp(&b)));
    let mut set = order[..take].to_vec();
    set.sort_unstable();
    set
}

fn check_params(params: &SfidParams, n_features: usize, n_attributes: usize) -> Result<()> {
    if params.k >= n_features {
        return Err(config_err!("k={} must be smaller than the embedding width {n_features}", params.k));
    }
    let chance = 1.0 / n_attributes as f64;
    if !(params.tau > chance && params.tau <= 1.0) {
        return Err(config_err!("tau={} must lie in (1/A, 1] = ({chance:.4}, 1]", params.tau));
    }
    if !(params.hc_threshold > chance && params.hc_threshold <= 1.0) {
        return Err(config_err!("high-confidence threshold {} must lie in ({chance:.4}, 1]", params.hc_threshold));
    }
    if let SfidMode::HighConfidence { target } = params.mode {
        if target >= n_attributes {
            return Err(config_err!("target attribute {target} out of range for {n_attributes} values"));
        }
    }
    if let Some(q) = params.fallback_quantile {
        if !(q > 0.0 && q <= 1.0) {
            return Err(config_err!("fallback quantile {q} must lie in (0, 1]"));
        }
    }
    Ok(())
}

pub fn fit_sfid(z_train: &EmbeddingMatrix, y_train: &AttributeTable, z_val: &EmbeddingMatrix, params: &SfidParams) -> Result<DebiasModel> {
    Ok(fit_sfid_detailed(z_train, y_train, z_val, params)?.model)
}

pub fn fit_sfid_detailed(z_train: &EmbeddingMatrix, y_train: &AttributeTable, z_val: &EmbeddingMatrix, params: &SfidParams) -> Result<SfidFit> {
    let c = z_train.n_features();
    if z_val.n_features() != c {
        return Err(data_err!("training width {c} differs from validation width {}", z_val.n_features()));
    }
    y_train.check_pairing(z_train.n_samples())?;
    check_params(params, c, y_train.n_attributes())?;

    let forest = fit_forest(z_train, y_train, &params.forest)?;
    let mut indices = forest.ranked_features();
    indices.truncate(params.k);
    indices.sort_unstable();

    let mut provenance = Provenance {
        method: "sfid".into(),
        forest_seed: Some(params.forest.seed),
        dataset_tag: if params.dataset_tag.is_empty() {
            z_train.source_tag.clone()
        } else {
            params.dataset_tag.clone()
        },
        ..Provenance::default()
    };

    let (set, tau) = match params.mode {
        SfidMode::LowConfidence => {
            let conf = forest.confidence(z_val)?;
            let mut set = low_confidence_set(&conf, params.tau);
            if set.is_empty() {
                match params.fallback_quantile {
                    Some(q) => {
                        set = quantile_set(&conf, q);
                        provenance.fallback_quantile = Some(q);
                    }
                    None => return Err(empty_set(params.tau, &conf, "raise tau or enable the fallback quantile")),
                }
            }
            (set, Some(params.tau))
        }
        SfidMode::HighConfidence { target } => {
            let proba = forest.predict_proba(z_val)?;
            let set = high_confidence_set(&proba, target, params.hc_threshold);
            if set.is_empty() {
                return Err(empty_set(params.hc_threshold, &proba.confidence(), "lower the high-confidence threshold"));
            }
            provenance.target = Some(target);
            provenance.hc_threshold = Some(params.hc_threshold);
            (set, None)
        }
        SfidMode::Zero => (Vec::new(), None),
        SfidMode::Gaussian => {
            provenance.noise_seed = Some(params.noise_seed);
            (Vec::new(), None)
        }
    };

    let values = if set.is_empty() {
        vec![0.0; indices.len()]
    } else {
        provenance.confidence_set_size = Some(set.len());
        imputation_values(z_train, z_val, &indices, &set)
    };
    let model = DebiasModel::new(params.mode.impute_mode(), tau, c, indices, values, provenance)?;
    Ok(SfidFit {
        model,
        forest,
        confidence_set: set,
    })
}

fn empty_set(threshold: f64, conf: &[f64], hint: &'static str) -> Error {
    let (lo, hi) = conf
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    Error::EmptyConfidenceSet {
        threshold,
        min_confidence: lo,
        max_confidence: hi,
        hint,
    }
}

/// Column means over `set`, clamped into the training range of each column.
fn imputation_values(z_train: &EmbeddingMatrix, z_val: &EmbeddingMatrix, indices: &[usize], set: &[usize]) -> Vec<f32> {
    let mut sums = vec![0.0f64; indices.len()];
    for &i in set {
        let row = z_val.row(i);
        for (s, &j) in sums.iter_mut().zip(indices) {
            *s += row[j] as f64;
        }
    }
    let mut lo = vec![f32::INFINITY; indices.len()];
    let mut hi = vec![f32::NEG_INFINITY; indices.len()];
    for row in z_train.rows() {
        for (t, &j) in indices.iter().enumerate() {
            lo[t] = lo[t].min(row[j]);
            hi[t] = hi[t].max(row[j]);
        }
    }
    sums.iter()
        .enumerate()
        .map(|(t, s)| ((s / set.len() as f64) as f32).clamp(lo[t], hi[t]))
        .collect()
}

/// Fills the selected columns of every row; Gaussian fills use the seed
/// recorded in the model.
pub fn apply_debias(model: &DebiasModel, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    apply_debias_seeded(model, z, model.provenance.noise_seed.unwrap_or(0))
}

pub fn apply_debias_seeded(model: &DebiasModel, z: &EmbeddingMatrix, noise_seed: u64) -> Result<EmbeddingMatrix> {
    if z.n_features() != model.source_dim {
        return Err(data_err!(
            "query width {} does not match the model's source dimension {}",
            z.n_features(),
            model.source_dim
        ));
    }
    if model.k == 0 {
        return Ok(z.clone());
    }
    match model.mode {
        ImputeMode::Drop => {
            let keep: Vec<usize> = (0..model.source_dim)
                .filter(|j| model.indices.binary_search(j).is_err())
                .collect();
            let mut data = Vec::with_capacity(z.n_samples() * keep.len());
            for row in z.rows() {
                data.extend(keep.iter().map(|&j| row[j]));
            }
            Ok(EmbeddingMatrix::new(z.n_samples(), keep.len(), data)?.with_source_tag(z.source_tag.clone()))
        }
        ImputeMode::Gaussian => {
            let mut rng = seed::rng(noise_seed, "sfid.gauss");
            let out = z.map_rows(|_, row| {
                for &j in &model.indices {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    row[j] = v as f32;
                }
            })?;
            Ok(out.with_source_tag(z.source_tag.clone()))
        }
        _ => {
            let out = z.map_rows(|_, row| {
                for (&j, &v) in model.indices.iter().zip(&model.values) {
                    row[j] = v;
                }
            })?;
            Ok(out.with_source_tag(z.source_tag.clone()))
        }
    }
}
