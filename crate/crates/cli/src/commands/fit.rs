use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use sfid::baselines::{fit_clipclip, fit_dear, ClipClipParams, DearParams};
use sfid::forest::write_forest;
use sfid::seed::derive_seed;
use sfid::sfid::fit_sfid_detailed;
use sfid::synthlab::split_halves;
use sfid::{AttributeTable, EmbeddingMatrix, ForestModel, ForestParams, ImputeMode, SfidMode, SfidParams};

use super::{load_attributes, load_embeddings, parse_lambdas, Debiaser};
use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sfid,
    ClipClip,
    Dear,
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sfid" => Ok(Method::Sfid),
            "clipclip" | "clip-clip" => Ok(Method::ClipClip),
            "dear" => Ok(Method::Dear),
            _ => Err(CliError::config(format!("unknown method {s:?}; expected sfid, clipclip or dear"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sfid => "sfid",
            Method::ClipClip => "clipclip",
            Method::Dear => "dear",
        })
    }
}

/// Labelled embeddings to fit on.
#[derive(Debug, Clone, Args)]
pub struct TrainInputs {
    /// Training embeddings (EMB1).
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Training attributes (`sample_id<TAB>attribute`).
    #[arg(long)]
    pub attr: Option<PathBuf>,
    /// Validation embeddings for the confidence set; without it the training
    /// rows are split by parity.
    #[arg(long)]
    pub val_emb: Option<PathBuf>,
}

pub struct TrainingData {
    pub z: EmbeddingMatrix,
    pub y: AttributeTable,
    pub z_val: EmbeddingMatrix,
}

impl TrainInputs {
    pub fn load(&self, cfg: &Config, manifest: &mut Manifest) -> CliResult<TrainingData> {
        let emb: PathBuf = cfg.require(self.emb.clone(), "emb")?;
        let attr: PathBuf = cfg.require(self.attr.clone(), "attr")?;
        let val: Option<PathBuf> = cfg.pick(self.val_emb.clone(), "val-emb")?;
        let z = load_embeddings(&emb, "training")?;
        let y = load_attributes(&attr, "training")?;
        y.check_pairing(z.n_samples()).context(|| format!("pairing {} with {}", attr.display(), emb.display()))?;
        manifest.input("emb", &emb)?.input("attr", &attr)?;
        match val {
            Some(v) => {
                let z_val = load_embeddings(&v, "validation")?;
                manifest.input("val-emb", &v)?;
                Ok(TrainingData { z, y, z_val })
            }
            None => {
                let (z, y, z_val, _) = split_halves(&z, &y)?;
                manifest.param("split", "parity");
                Ok(TrainingData { z, y, z_val })
            }
        }
    }
}

/// Method hyperparameters shared by `fit` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct FitOptions {
    /// Number of pruned features (default 50 for sfid, 60 for clipclip).
    #[arg(long)]
    pub k: Option<usize>,
    /// Low-confidence threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Fill mode: lc, hc, zero or gauss for sfid; zero or drop for clipclip.
    #[arg(long)]
    pub mode: Option<String>,
    /// Attribute value (name or index) for high-confidence fills.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub hc_threshold: Option<f64>,
    /// Fall back to this fraction of least confident samples when the
    /// low-confidence set is empty.
    #[arg(long)]
    pub fallback_quantile: Option<f64>,
    /// Trees in the importance forest.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Histogram bins for mutual information.
    #[arg(long)]
    pub bins: Option<usize>,
    /// DeAR loss weights as `l1,l2,l3`.
    #[arg(long)]
    pub lambdas: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub method: Method,
    pub k: usize,
    pub tau: f64,
    pub mode: ImputeMode,
    pub target: Option<String>,
    pub hc_threshold: f64,
    pub fallback_quantile: Option<f64>,
    pub trees: usize,
    pub bins: usize,
    pub lambdas: [f64; 3],
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl FitOptions {
    pub fn resolve(&self, method: Method, cfg: &Config, seed: u64) -> CliResult<FitSettings> {
        let sfid = SfidParams::default();
        let clip = ClipClipParams::default();
        let dear = DearParams::default();
        let (default_k, default_mode) = match method {
            Method::ClipClip => (clip.k, clip.impute),
            _ => (sfid.k, ImputeMode::LowConfidence),
        };
        let mode = match cfg.pick(self.mode.clone(), "mode")? {
            Some(m) => m.parse::<ImputeMode>()?,
            None => default_mode,
        };
        let lambdas = match cfg.pick(self.lambdas.clone(), "lambdas")? {
            Some(l) => parse_lambdas(&l)?,
            None => dear.lambdas,
        };
        Ok(FitSettings {
            method,
            k: cfg.or(self.k, "k", default_k)?,
            tau: cfg.or(self.tau, "tau", sfid.tau)?,
            mode,
            target: cfg.pick(self.target.clone(), "target")?,
            hc_threshold: cfg.or(self.hc_threshold, "hc-threshold", sfid.hc_threshold)?,
            fallback_quantile: cfg.pick(self.fallback_quantile, "fallback-quantile")?,
            trees: cfg.or(self.trees, "trees", sfid.forest.n_trees)?,
            bins: cfg.or(self.bins, "bins", clip.bins)?,
            lambdas,
            epochs: cfg.or(self.epochs, "epochs", dear.epochs)?,
            step_size: cfg.or(self.step_size, "step-size", dear.step_size)?,
            seed,
        })
    }
}

impl FitSettings {
    pub fn record(&self, manifest: &mut Manifest) {
        manifest.param("method", self.method);
        match self.method {
            Method::Sfid => {
                manifest
                    .param("k", self.k)
                    .param("tau", self.tau)
                    .param("mode", self.mode)
                    .param("trees", self.trees);
                if self.mode == ImputeMode::HighConfidence {
                    manifest
                        .param("target", self.target.as_deref().unwrap_or(""))
                        .param("hc-threshold", self.hc_threshold);
                }
                if let Some(q) = self.fallback_quantile {
                    manifest.param("fallback-quantile", q);
                }
            }
            Method::ClipClip => {
                manifest.param("k", self.k).param("bins", self.bins).param("mode", self.mode);
            }
            Method::Dear => {
                let [a, b, c] = self.lambdas;
                manifest
                    .param("lambdas", format!("{a},{b},{c}"))
                    .param("epochs", self.epochs)
                    .param("step-size", self.step_size);
            }
        }
    }

    fn sfid_mode(&self, y: &AttributeTable) -> CliResult<SfidMode> {
        Ok(match self.mode {
            ImputeMode::LowConfidence => SfidMode::LowConfidence,
            ImputeMode::Zero => SfidMode::Zero,
            ImputeMode::Gaussian => SfidMode::Gaussian,
            ImputeMode::HighConfidence => {
                let t = self
                    .target
                    .as_deref()
                    .ok_or_else(|| CliError::config("high-confidence mode needs --target"))?;
                let target = y
                    .attribute_index(t)
                    .or_else(|| t.parse().ok().filter(|&i: &usize| i < y.n_attributes()))
                    .ok_or_else(|| CliError::config(format!("unknown target attribute {t:?}")))?;
                SfidMode::HighConfidence { target }
            }
            ImputeMode::Drop => return Err(CliError::config("sfid does not support DROP; use clipclip")),
        })
    }

    /// Fits the configured method; the forest is returned for sfid.
    pub fn fit(&self, data: &TrainingData) -> CliResult<(Debiaser, Option<ForestModel>)> {
        match self.method {
            Method::Sfid => {
                let params = SfidParams {
                    k: self.k,
                    tau: self.tau,
                    mode: self.sfid_mode(&data.y)?,
                    hc_threshold: self.hc_threshold,
                    fallback_quantile: self.fallback_quantile,
                    forest: ForestParams::default()
                        .with_trees(self.trees)
                        .with_seed(derive_seed(self.seed, "forest")),
                    noise_seed: derive_seed(self.seed, "noise"),
                    dataset_tag: data.z.source_tag.clone(),
                };
                let fit = fit_sfid_detailed(&data.z, &data.y, &data.z_val, &params)?;
                Ok((Debiaser::Select(fit.model), Some(fit.forest)))
            }
            Method::ClipClip => {
                let params = ClipClipParams {
                    k: self.k,
                    bins: self.bins,
                    impute: self.mode,
                };
                Ok((Debiaser::Select(fit_clipclip(&data.z, &data.y, &params)?), None))
            }
            Method::Dear => {
                let params = DearParams {
                    lambdas: self.lambdas,
                    epochs: self.epochs,
                    step_size: self.step_size,
                    seed: derive_seed(self.seed, "dear"),
                    ..DearParams::default()
                };
                Ok((Debiaser::Residual(fit_dear(&data.z, &data.y, &params)?), None))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// sfid, clipclip or dear.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub inputs: TrainInputs,
    #[command(flatten)]
    pub options: FitOptions,
    /// Also save the importance forest (sfid only).
    #[arg(long)]
    pub forest_out: Option<PathBuf>,
    /// Model output path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &FitArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let method: Method = cfg.or(args.method.clone(), "method", "sfid".to_string())?.parse()?;
    let out: PathBuf = cfg.require(args.out.clone(), "out")?;
    let settings = args.options.resolve(method, cfg, seed)?;
    let mut manifest = Manifest::for_run("fit", seed, cfg)?;
    settings.record(&mut manifest);
    let data = args.inputs.load(cfg, &mut manifest)?;
    let (mut model, forest) = settings.fit(&data)?;
    match &mut model {
        Debiaser::Select(m) => m.provenance_mut().manifest = manifest.entries().clone(),
        Debiaser::Residual(m) => m.manifest = manifest.entries().clone(),
    }
    model.save(&out)?;
    manifest.write_beside(&out)?;
    if let (Some(path), Some(forest)) = (cfg.pick(args.forest_out.clone(), "forest-out")?, &forest) {
        write_forest(forest, &path).context(|| "writing forest".to_string())?;
    }
    report(&model, &out);
    Ok(())
}

fn report(model: &Debiaser, out: &Path) {
    match model {
        Debiaser::Select(m) => {
            let set = m
                .provenance()
                .confidence_set_size
                .map(|n| format!(", confidence set {n}"))
                .unwrap_or_default();
            println!("{}: pruned {} of {} features ({}{set}) -> {}", m.provenance().method, m.k(), m.source_dim(), m.mode(), out.display());
        }
        Debiaser::Residual(m) => {
            let last = m.train_log.residual.last().copied().unwrap_or(f64::NAN);
            println!("dear: residual trained, final loss {last:.6} -> {}", out.display());
        }
    }
}
