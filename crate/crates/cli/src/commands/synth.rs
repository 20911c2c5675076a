use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use sfid::embstore::write_attributes;
use sfid::synthlab::{gen_synthetic, make_retrieval_scenario, probe_accuracy, RetrievalConfig, SynthConfig};

use super::{save_embeddings, write_text};
use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// classification or retrieval.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub attributes: Option<usize>,
    /// Bias coordinates: a list (`0,3,7`) or a range (`0-9`).
    #[arg(long)]
    pub bias_dims: Option<String>,
    #[arg(long)]
    pub bias_strength: Option<f64>,
    #[arg(long)]
    pub class_strength: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Attribute-class coupling in [0, 1].
    #[arg(long)]
    pub correlation: Option<f64>,
    #[arg(long)]
    pub ambiguous_fraction: Option<f64>,
    /// Mix the bias over this many coordinates.
    #[arg(long)]
    pub rotation_span: Option<usize>,
    /// Query images in a retrieval scenario.
    #[arg(long)]
    pub n_images: Option<usize>,
    /// Size of each labelled debiasing pool in a retrieval scenario.
    #[arg(long)]
    pub n_debias: Option<usize>,
    #[arg(long)]
    pub image_bias: Option<f64>,
    #[arg(long)]
    pub text_bias: Option<f64>,
    #[arg(long)]
    pub content_std: Option<f64>,
    /// Also report the cross-validated attribute probe accuracy.
    #[arg(long)]
    pub probe: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_dims(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::config(format!("bad bias dimension list {text:?}"));
    let mut dims = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                dims.extend(a..=b);
            }
            None => dims.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(dims)
}

fn dims_or(cfg: &Config, flag: Option<String>, default: Vec<usize>) -> CliResult<Vec<usize>> {
    cfg.pick(flag, "bias-dims")?.map_or(Ok(default), |s| parse_dims(&s))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("creating {}: {e}", dir.display())))
}

pub fn run(args: &SynthArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let dir: PathBuf = cfg.require(args.out.clone(), "out")?;
    let kind: String = cfg.or(args.kind.clone(), "kind", "classification".to_string())?;
    let probe = args.probe || cfg.or(None, "probe", false)?;
    let mut manifest = Manifest::for_run("synth", seed, cfg)?;
    manifest.param("kind", &kind);
    create_dir(&dir)?;
    let attrs = |name: &str, t| write_attributes(t, dir.join(name)).context(|| format!("writing {name}"));
    let description = match kind.as_str() {
        "classification" => {
            let d = SynthConfig::default();
            let c = SynthConfig {
                n_samples: cfg.or(args.n_samples, "n-samples", d.n_samples)?,
                dim: cfg.or(args.dim, "dim", d.dim)?,
                n_classes: cfg.or(args.classes, "classes", d.n_classes)?,
                n_attributes: cfg.or(args.attributes, "attributes", d.n_attributes)?,
                bias_dims: dims_or(cfg, args.bias_dims.clone(), d.bias_dims)?,
                bias_strength: cfg.or(args.bias_strength, "bias-strength", d.bias_strength)?,
                class_strength: cfg.or(args.class_strength, "class-strength", d.class_strength)?,
                noise_std: cfg.or(args.noise_std, "noise-std", d.noise_std)?,
                attr_class_correlation: cfg.or(args.correlation, "correlation", d.attr_class_correlation)?,
                ambiguous_fraction: cfg.or(args.ambiguous_fraction, "ambiguous-fraction", d.ambiguous_fraction)?,
                rotation_span: cfg.pick(args.rotation_span, "rotation-span")?,
                seed,
            };
            let data = gen_synthetic(&c)?;
            save_embeddings(&data.embeddings, &dir.join("embeddings.emb"))?;
            attrs("attributes.tsv", &data.attributes)?;
            save_embeddings(&data.class_prototypes(), &dir.join("prototypes.emb"))?;
            let accuracy = if probe {
                let acc = probe_accuracy(&data.embeddings, &data.attributes, seed)?;
                println!("probe accuracy {acc:.4}");
                Some(acc)
            } else {
                None
            };
            json!({ "kind": kind, "config": c, "bias_dims": data.bias_dims, "probe_accuracy": accuracy })
        }
        "retrieval" => {
            let d = RetrievalConfig::default();
            let both: Option<f64> = cfg.pick(args.bias_strength, "bias-strength")?;
            let c = RetrievalConfig {
                n_images: cfg.or(args.n_images, "n-images", d.n_images)?,
                n_debias: cfg.or(args.n_debias, "n-debias", d.n_debias)?,
                dim: cfg.or(args.dim, "dim", d.dim)?,
                bias_dims: dims_or(cfg, args.bias_dims.clone(), d.bias_dims)?,
                image_bias: cfg.or(args.image_bias, "image-bias", both.unwrap_or(d.image_bias))?,
                text_bias: cfg.or(args.text_bias, "text-bias", both.unwrap_or(d.text_bias))?,
                content_std: cfg.or(args.content_std, "content-std", d.content_std)?,
                noise_std: cfg.or(args.noise_std, "noise-std", d.noise_std)?,
                ambiguous_fraction: cfg.or(args.ambiguous_fraction, "ambiguous-fraction", d.ambiguous_fraction)?,
                seed,
            };
            let s = make_retrieval_scenario(&c)?;
            save_embeddings(&s.texts, &dir.join("texts.emb"))?;
            save_embeddings(&s.images, &dir.join("images.emb"))?;
            attrs("images.tsv", &s.image_attributes)?;
            save_embeddings(&s.debias_images, &dir.join("debias_images.emb"))?;
            attrs("debias_images.tsv", &s.debias_image_attributes)?;
            save_embeddings(&s.debias_texts, &dir.join("debias_texts.emb"))?;
            attrs("debias_texts.tsv", &s.debias_text_attributes)?;
            let mut truth = String::from("prompt_id\timage_id\n");
            s.truth.iter().enumerate().for_each(|(t, i)| truth.push_str(&format!("{t}\t{i}\n")));
            write_text(&dir.join("truth.tsv"), &truth)?;
            json!({ "kind": kind, "config": c, "bias_dims": s.bias_dims })
        }
        other => return Err(CliError::config(format!("unknown scenario kind {other:?}; expected classification or retrieval"))),
    };
    let scenario = dir.join("scenario.json");
    write_text(&scenario, &(serde_json::to_string_pretty(&description).expect("json value") + "\n"))?;
    manifest.write_beside(&scenario)?;
    println!("{kind} scenario -> {}", dir.display());
    Ok(())
}
