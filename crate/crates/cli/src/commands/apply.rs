use std::path::PathBuf;

use clap::Args;
use sfid::sfid::{apply_debias_seeded, apply_debias_tensor_seeded};
use sfid::{EmbeddingTensor, TensorLayout};

use super::{load_embeddings, parse_list, save_embeddings, Debiaser};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    /// Fitted model (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Input embeddings (EMB1).
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Output embeddings (EMB1).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat rows as tensors: nsc (sequence × channels) or nchw.
    #[arg(long)]
    pub layout: Option<String>,
    /// Trailing tensor axes per row, e.g. `77,512` or `512,7,7`.
    #[arg(long)]
    pub tensor_shape: Option<String>,
    /// Seed for Gaussian fills; defaults to the one recorded in the model.
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

pub fn run(args: &ApplyArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let model_path: PathBuf = cfg.require(args.model.clone(), "model")?;
    let emb: PathBuf = cfg.require(args.emb.clone(), "emb")?;
    let out: PathBuf = cfg.require(args.out.clone(), "out")?;
    let layout: Option<String> = cfg.pick(args.layout.clone(), "layout")?;
    let shape: Option<String> = cfg.pick(args.tensor_shape.clone(), "tensor-shape")?;
    let noise_seed: Option<u64> = cfg.pick(args.noise_seed, "noise-seed")?;

    let model = Debiaser::load(&model_path)?;
    let z = load_embeddings(&emb, "input")?;
    let mut manifest = Manifest::for_run("apply", seed, cfg)?;
    manifest.input("model", &model_path)?.input("emb", &emb)?;

    let debiased = match (&model, layout, shape) {
        (Debiaser::Select(m), Some(layout), Some(shape)) => {
            let layout: TensorLayout = layout.parse()?;
            let inner: Vec<usize> = parse_list(&shape, "tensor shape")?;
            if inner.len() + 1 != layout.rank() {
                return Err(CliError::config(format!(
                    "layout {layout} needs {} trailing axes, got {}",
                    layout.rank() - 1,
                    inner.len()
                )));
            }
            manifest.param("layout", layout).param("tensor-shape", &shape);
            let t = EmbeddingTensor::from_matrix(&z, layout, &inner)?;
            let seed = noise_seed.unwrap_or(m.provenance().noise_seed.unwrap_or(0));
            apply_debias_tensor_seeded(m, &t, seed)?.to_matrix()?
        }
        (Debiaser::Residual(_), Some(_), _) => {
            return Err(CliError::config("tensor layouts are only supported for feature-selection models"))
        }
        (_, Some(_), None) | (_, None, Some(_)) => {
            return Err(CliError::config("--layout and --tensor-shape must be given together"))
        }
        (Debiaser::Select(m), None, None) => match noise_seed {
            Some(s) => apply_debias_seeded(m, &z, s)?,
            None => model.apply(&z)?,
        },
        (Debiaser::Residual(_), None, None) => model.apply(&z)?,
    };
    if let Some(s) = noise_seed {
        manifest.param("noise-seed", s);
    }
    save_embeddings(&debiased, &out)?;
    manifest.write_beside(&out)?;
    println!(
        "{}: {} x {} -> {} x {} -> {}",
        model.method(),
        z.n_samples(),
        z.n_features(),
        debiased.n_samples(),
        debiased.n_features(),
        out.display()
    );
    Ok(())
}
