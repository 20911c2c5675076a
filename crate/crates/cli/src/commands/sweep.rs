use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use sfid::fairmetrics::{DpDefinition, MetricReport};
use sfid::synthlab::probe_accuracy;
use sfid::{AttributeTable, EmbeddingMatrix};

use super::eval::{parse_dp, read_truth, retrieval_report, zeroshot_report};
use super::fit::{FitOptions, FitSettings, Method, TrainInputs, TrainingData};
use super::{load_attributes, load_embeddings, parse_lambdas, parse_list, write_text};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, Manifest};

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// sfid, clipclip or dear.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub inputs: TrainInputs,
    #[command(flatten)]
    pub options: FitOptions,
    /// Comma-separated k values.
    #[arg(long)]
    pub k_grid: Option<String>,
    /// Comma-separated tau values.
    #[arg(long)]
    pub tau_grid: Option<String>,
    /// Semicolon-separated lambda triples, e.g. `1,1,1;1,0,0`.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// probe, zeroshot or retrieval.
    #[arg(long)]
    pub task: Option<String>,
    /// Evaluation embeddings for probe and zeroshot (defaults to the training files).
    #[arg(long)]
    pub eval_emb: Option<PathBuf>,
    #[arg(long)]
    pub eval_attr: Option<PathBuf>,
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub image_attr: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Labelled text embeddings for fitting a text-side model at every grid point.
    #[arg(long)]
    pub text_emb: Option<PathBuf>,
    #[arg(long)]
    pub text_attr: Option<PathBuf>,
    #[arg(long)]
    pub dp: Option<String>,
    /// Consolidated table (TSV); JSON goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

enum Evaluation {
    Probe {
        z: EmbeddingMatrix,
        y: AttributeTable,
    },
    ZeroShot {
        z: EmbeddingMatrix,
        y: AttributeTable,
        prototypes: EmbeddingMatrix,
        definition: DpDefinition,
    },
    Retrieval {
        texts: EmbeddingMatrix,
        images: EmbeddingMatrix,
        attributes: AttributeTable,
        truth: Vec<usize>,
        depth: usize,
    },
}

#[derive(Debug, Serialize)]
struct Row {
    method: String,
    k: Option<usize>,
    tau: Option<f64>,
    lambdas: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Cartesian product of the given axes, k-major.
pub fn expand_grid(
    base: &FitSettings,
    ks: Option<Vec<usize>>,
    taus: Option<Vec<f64>>,
    lambdas: Option<Vec<[f64; 3]>>,
) -> CliResult<Vec<FitSettings>> {
    if ks.is_none() && taus.is_none() && lambdas.is_none() {
        return Err(CliError::config("sweep needs at least one of --k-grid, --tau-grid, --lambda-grid"));
    }
    for (name, len) in [
        ("k", ks.as_ref().map(Vec::len)),
        ("tau", taus.as_ref().map(Vec::len)),
        ("lambda", lambdas.as_ref().map(Vec::len)),
    ] {
        if len == Some(0) {
            return Err(CliError::config(format!("the {name} grid is empty")));
        }
    }
    let uses = |axis: &str| match base.method {
        Method::Sfid => axis != "lambda",
        Method::ClipClip => axis == "k",
        Method::Dear => axis == "lambda",
    };
    for (axis, given) in [("k", ks.is_some()), ("tau", taus.is_some()), ("lambda", lambdas.is_some())] {
        if given && !uses(axis) {
            return Err(CliError::config(format!("{} has no {axis} parameter to sweep", base.method)));
        }
    }
    let ks = ks.unwrap_or_else(|| vec![base.k]);
    let taus = taus.unwrap_or_else(|| vec![base.tau]);
    let lambdas = lambdas.unwrap_or_else(|| vec![base.lambdas]);
    let mut points = Vec::new();
    for &k in &ks {
        for &tau in &taus {
            for &l in &lambdas {
                points.push(FitSettings {
                    k,
                    tau,
                    lambdas: l,
                    ..base.clone()
                });
            }
        }
    }
    Ok(points)
}

fn evaluate(point: &FitSettings, train: &TrainingData, text: Option<&TrainingData>, eval: &Evaluation) -> CliResult<MetricReport> {
    let (image_model, _) = point.fit(train)?;
    let text_model = text.map(|t| point.fit(t)).transpose()?.map(|m| m.0);
    let on_text = |z: &EmbeddingMatrix| match &text_model {
        Some(m) => m.apply(z),
        None => Ok(z.clone()),
    };
    match eval {
        Evaluation::Probe { z, y } => {
            let acc = probe_accuracy(&image_model.apply(z)?, y, point.seed)?;
            let mut r = MetricReport::new();
            r.insert("probe_accuracy", acc, z.n_samples());
            Ok(r)
        }
        Evaluation::ZeroShot { z, y, prototypes, definition } => {
            zeroshot_report(&image_model.apply(z)?, y, &on_text(prototypes)?, *definition, None)
        }
        Evaluation::Retrieval { texts, images, attributes, truth, depth } => {
            Ok(retrieval_report(&on_text(texts)?, &image_model.apply(images)?, attributes, truth, *depth, None)?.0)
        }
    }
}

fn format_rows(rows: &[Row]) -> String {
    let metrics: BTreeSet<&str> = rows
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .flat_map(|m| m.entries.keys().map(String::as_str))
        .collect();
    let mut out = String::from("method\tk\ttau\tlambdas\tstatus");
    metrics.iter().for_each(|m| {
        let _ = write!(out, "\t{m}");
    });
    out.push('\n');
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    for r in rows {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.method,
            opt(r.k.map(|k| k.to_string())),
            opt(r.tau.map(|t| t.to_string())),
            opt(r.lambdas.map(|[a, b, c]| format!("{a},{b},{c}"))),
            if r.error.is_some() { "error" } else { "ok" }
        );
        for m in &metrics {
            let v = r.metrics.as_ref().and_then(|x| x.get(m));
            let _ = write!(out, "\t{}", opt(v.map(|v| format!("{v:.6}"))));
        }
        out.push('\n');
    }
    out
}

pub fn run(args: &SweepArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let method: Method = cfg.or(args.method.clone(), "method", "sfid".to_string())?.parse()?;
    let out: PathBuf = cfg.require(args.out.clone(), "out")?;
    let base = args.options.resolve(method, cfg, seed)?;
    let ks = cfg.pick(args.k_grid.clone(), "k-grid")?.map(|s| parse_list::<usize>(&s, "k")).transpose()?;
    let taus = cfg.pick(args.tau_grid.clone(), "tau-grid")?.map(|s| parse_list::<f64>(&s, "tau")).transpose()?;
    let lambdas = cfg
        .pick(args.lambda_grid.clone(), "lambda-grid")?
        .map(|s: String| s.split(';').map(str::trim).filter(|t| !t.is_empty()).map(parse_lambdas).collect::<CliResult<Vec<_>>>())
        .transpose()?;
    let points = expand_grid(&base, ks, taus, lambdas)?;

    let mut manifest = Manifest::for_run("sweep", seed, cfg)?;
    base.record(&mut manifest);
    manifest.param("grid-points", points.len());
    let train = args.inputs.load(cfg, &mut manifest)?;
    let text = match (cfg.pick(args.text_emb.clone(), "text-emb")?, cfg.pick(args.text_attr.clone(), "text-attr")?) {
        (Some(e), Some(a)) => {
            manifest.input("text-emb", &e)?.input("text-attr", &a)?;
            let z = load_embeddings(&e, "text")?;
            let y = load_attributes(&a, "text")?;
            let (z, y, z_val, _) = sfid::synthlab::split_halves(&z, &y)?;
            Some(TrainingData { z, y, z_val })
        }
        (None, None) => None,
        _ => return Err(CliError::config("--text-emb and --text-attr must be given together")),
    };

    let task: String = cfg.or(args.task.clone(), "task", "probe".to_string())?;
    manifest.param("task", &task);
    let eval_set = |manifest: &mut Manifest| -> CliResult<(EmbeddingMatrix, AttributeTable)> {
        let emb: PathBuf = cfg.pick(args.eval_emb.clone(), "eval-emb")?.map_or_else(|| cfg.require(args.inputs.emb.clone(), "emb"), Ok)?;
        let attr: PathBuf = cfg.pick(args.eval_attr.clone(), "eval-attr")?.map_or_else(|| cfg.require(args.inputs.attr.clone(), "attr"), Ok)?;
        manifest.input("eval-emb", &emb)?.input("eval-attr", &attr)?;
        Ok((load_embeddings(&emb, "evaluation")?, load_attributes(&attr, "evaluation")?))
    };
    let eval = match task.to_ascii_lowercase().as_str() {
        "probe" => {
            let (z, y) = eval_set(&mut manifest)?;
            Evaluation::Probe { z, y }
        }
        "zeroshot" | "zero-shot" => {
            let (z, y) = eval_set(&mut manifest)?;
            let p: PathBuf = cfg.require(args.prototypes.clone(), "prototypes")?;
            manifest.input("prototypes", &p)?;
            Evaluation::ZeroShot {
                z,
                y,
                prototypes: load_embeddings(&p, "prototype")?,
                definition: parse_dp(&cfg.or(args.dp.clone(), "dp", "recall".to_string())?)?,
            }
        }
        "retrieval" => {
            let t: PathBuf = cfg.require(args.texts.clone(), "texts")?;
            let i: PathBuf = cfg.require(args.images.clone(), "images")?;
            let a: PathBuf = cfg.require(args.image_attr.clone(), "image-attr")?;
            manifest.input("texts", &t)?.input("images", &i)?.input("image-attr", &a)?;
            let texts = load_embeddings(&t, "text")?;
            let truth = match cfg.pick(args.truth.clone(), "truth")? {
                Some(p) => read_truth(&p, texts.n_samples())?,
                None => (0..texts.n_samples()).collect(),
            };
            Evaluation::Retrieval {
                texts,
                images: load_embeddings(&i, "image")?,
                attributes: load_attributes(&a, "image")?,
                truth,
                depth: cfg.or(args.depth, "depth", 100)?,
            }
        }
        other => return Err(CliError::config(format!("unknown sweep task {other:?}; expected probe, zeroshot or retrieval"))),
    };

    let rows: Vec<Row> = points
        .par_iter()
        .map(|p| {
            let result = evaluate(p, &train, text.as_ref(), &eval);
            Row {
                method: p.method.to_string(),
                k: (p.method != Method::Dear).then_some(p.k),
                tau: (p.method == Method::Sfid).then_some(p.tau),
                lambdas: (p.method == Method::Dear).then_some(p.lambdas),
                error: result.as_ref().err().map(ToString::to_string),
                metrics: result.ok(),
            }
        })
        .collect();
    if let Some(first) = rows.iter().find_map(|r| r.error.as_ref()) {
        if rows.iter().all(|r| r.error.is_some()) {
            return Err(CliError::data(format!("every grid point failed; first: {first}")));
        }
    }
    let table = format_rows(&rows);
    write_text(&out, &table)?;
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    write_text(&sibling(&out, ".json"), &(json + "\n"))?;
    manifest.write_beside(&out)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(method: Method) -> FitSettings {
        FitOptions::default().resolve(method, &Config::default(), 0).unwrap()
    }

    #[test]
    fn grid_is_k_major_and_complete() {
        let pts = expand_grid(&base(Method::Sfid), Some(vec![10, 20]), Some(vec![0.6, 0.7, 0.8]), None).unwrap();
        let got: Vec<(usize, f64)> = pts.iter().map(|p| (p.k, p.tau)).collect();
        assert_eq!(got.len(), 6);
        assert_eq!(got[0], (10, 0.6));
        assert_eq!(got[2], (10, 0.8));
        assert_eq!(got[3], (20, 0.6));
    }

    #[test]
    fn empty_or_missing_grid_is_config_error() {
        let e = expand_grid(&base(Method::Sfid), Some(vec![]), None, None).unwrap_err();
        assert_eq!(e.class, "ConfigError");
        let e = expand_grid(&base(Method::Sfid), None, None, None).unwrap_err();
        assert_eq!(e.class, "ConfigError");
        let e = expand_grid(&base(Method::ClipClip), None, Some(vec![0.7]), None).unwrap_err();
        assert_eq!(e.class, "ConfigError");
    }
}
