pub mod apply;
pub mod compare;
pub mod curve;
pub mod eval;
pub mod fit;
pub mod sweep;
pub mod synth;

use std::path::Path;

use sfid::baselines::{apply_dear, ResidualModel};
use sfid::embstore::{read_attributes, read_embeddings, write_embeddings};
use sfid::sfid::apply_debias;
use sfid::{AttributeTable, DebiasModel, EmbeddingMatrix};

use crate::error::{CliError, CliResult, Context};

pub fn load_embeddings(path: &Path, what: &str) -> CliResult<EmbeddingMatrix> {
    read_embeddings(path).context(|| format!("reading {what} embeddings"))
}

pub fn load_attributes(path: &Path, what: &str) -> CliResult<AttributeTable> {
    read_attributes(path).context(|| format!("reading {what} attributes"))
}

pub fn save_embeddings(z: &EmbeddingMatrix, path: &Path) -> CliResult<()> {
    write_embeddings(z, path).context(|| "writing embeddings".to_string())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))
}

/// Parses a comma-separated list; an empty string yields an empty list.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::config(format!("bad {what} value {s:?}"))))
        .collect()
}

pub fn parse_lambdas(text: &str) -> CliResult<[f64; 3]> {
    let v: Vec<f64> = parse_list(text, "lambda")?;
    v.try_into()
        .map_err(|v: Vec<f64>| CliError::config(format!("expected three lambdas, got {}", v.len())))
}

/// Any fitted debiasing artifact.
#[derive(Debug, Clone)]
pub enum Debiaser {
    Select(DebiasModel),
    Residual(ResidualModel),
}

impl Debiaser {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("reading model {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("model {}: not JSON: {e}", path.display())))?;
        let what = || format!("loading model {}", path.display());
        if value.get("residual").is_some() {
            Ok(Debiaser::Residual(ResidualModel::from_json(&text).context(what)?))
        } else {
            Ok(Debiaser::Select(DebiasModel::from_json(&text).context(what)?))
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        match self {
            Debiaser::Select(m) => m.save(path),
            Debiaser::Residual(m) => m.save(path),
        }
        .context(|| "writing model".to_string())
    }

    pub fn apply(&self, z: &EmbeddingMatrix) -> CliResult<EmbeddingMatrix> {
        match self {
            Debiaser::Select(m) => apply_debias(m, z),
            Debiaser::Residual(m) => apply_dear(m, z),
        }
        .context(|| "applying model".to_string())
    }

    pub fn method(&self) -> &str {
        match self {
            Debiaser::Select(m) => &m.provenance().method,
            Debiaser::Residual(m) => &m.method,
        }
    }
}

/// Applies an optional debiaser.
pub fn debias(model: Option<&Debiaser>, z: EmbeddingMatrix) -> CliResult<EmbeddingMatrix> {
    match model {
        Some(m) => m.apply(&z),
        None => Ok(z),
    }
}
