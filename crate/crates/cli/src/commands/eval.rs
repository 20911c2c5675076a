use std::path::{Path, PathBuf};

use clap::Args;
use sfid::fairmetrics::{
    accuracy, bootstrap_ci, delta_dp_mean, discrepancy_by_run, dp_multi, generation_counts, generation_skew,
    mismatch_by_run, mismatch_rates, read_caption_records, read_generation_labels, recall_at_k, records_from,
    skew_per_prompt, CaptionRecord, DpDefinition, GenerationRecord, MetricReport, PredictionRecord, RetrievalRun,
};
use sfid::seed::derive_seed;
use sfid::tasks::{retrieve_all, write_rankings, zero_shot_classify};
use sfid::{AttributeTable, EmbeddingMatrix};

use super::{debias, load_attributes, load_embeddings, write_text, Debiaser};
use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::{sibling, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ZeroShot,
    Retrieval,
    Caption,
    Generation,
}

impl std::str::FromStr for Task {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zeroshot" | "zero-shot" => Ok(Task::ZeroShot),
            "retrieval" => Ok(Task::Retrieval),
            "caption" | "captioning" => Ok(Task::Caption),
            "generation" => Ok(Task::Generation),
            _ => Err(CliError::config(format!(
                "unknown task {s:?}; expected zeroshot, retrieval, caption or generation"
            ))),
        }
    }
}

/// Resampling settings for confidence intervals.
#[derive(Debug, Clone, Copy)]
pub struct Bootstrap {
    pub iterations: usize,
    pub seed: u64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn put<T: Clone>(
    report: &mut MetricReport,
    name: &str,
    value: f64,
    items: &[T],
    statistic: impl Fn(&[T]) -> f64,
    boot: Option<Bootstrap>,
) -> CliResult<()> {
    match boot {
        Some(b) => {
            let ci = bootstrap_ci(items, statistic, b.iterations, derive_seed(b.seed, name))?;
            report.insert_with_ci(name, value, items.len(), ci);
        }
        None => {
            report.insert(name, value, items.len());
        }
    }
    Ok(())
}

pub fn zeroshot_report(
    images: &EmbeddingMatrix,
    attributes: &AttributeTable,
    prototypes: &EmbeddingMatrix,
    definition: DpDefinition,
    boot: Option<Bootstrap>,
) -> CliResult<MetricReport> {
    let truth = attributes
        .class_labels()
        .ok_or_else(|| CliError::data("zero-shot evaluation needs a class column in the attribute file"))?;
    attributes.check_pairing(images.n_samples())?;
    let predicted = zero_shot_classify(images, prototypes)?;
    let records = records_from(&predicted, truth, attributes.labels())?;
    let dp = |r: &[PredictionRecord]| delta_dp_mean(r, definition).map_or(f64::NAN, |d| d.value);
    let multi = dp_multi(&records)?;
    let mut report = MetricReport::new();
    put(&mut report, "accuracy", accuracy(&records), &records, accuracy, boot)?;
    if attributes.n_attributes() == 2 {
        let value = delta_dp_mean(&records, definition)?.value;
        put(&mut report, "delta_dp_mean", value, &records, dp, boot)?;
    }
    let mm = |r: &[PredictionRecord]| dp_multi(r).map_or(f64::NAN, |d| d.mean);
    let mx = |r: &[PredictionRecord]| dp_multi(r).map_or(f64::NAN, |d| d.max);
    put(&mut report, "dp_multi_mean", multi.mean, &records, mm, boot)?;
    put(&mut report, "dp_multi_max", multi.max, &records, mx, boot)?;
    Ok(report)
}

/// Recall cut-offs reported alongside skew.
pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

pub fn retrieval_report(
    texts: &EmbeddingMatrix,
    images: &EmbeddingMatrix,
    image_attributes: &AttributeTable,
    truth: &[usize],
    depth: usize,
    boot: Option<Bootstrap>,
) -> CliResult<(MetricReport, Vec<Vec<(usize, f64)>>)> {
    image_attributes.check_pairing(images.n_samples())?;
    if truth.len() != texts.n_samples() {
        return Err(CliError::data(format!(
            "{} ground-truth entries for {} prompts",
            truth.len(),
            texts.n_samples()
        )));
    }
    if depth == 0 || depth > images.n_samples() {
        return Err(CliError::config(format!("depth {depth} must be in 1..={}", images.n_samples())));
    }
    let ranked = retrieve_all(texts, images, depth)?;
    let lists: Vec<Vec<usize>> = ranked.iter().map(|l| l.iter().map(|p| p.0).collect()).collect();
    let run = RetrievalRun::new(lists, image_attributes.labels().to_vec(), image_attributes.n_attributes(), depth)?;
    let skews = skew_per_prompt(&run)?;
    let mut report = MetricReport::new();
    put(&mut report, &format!("skew@{depth}"), mean(&skews), &skews, mean, boot)?;
    for k in RECALL_CUTOFFS.into_iter().filter(|&k| k <= depth) {
        let hits: Vec<f64> = run
            .rankings()
            .iter()
            .zip(truth)
            .map(|(l, t)| f64::from(u8::from(l[..k].contains(t))))
            .collect();
        put(&mut report, &format!("recall@{k}"), recall_at_k(&run, truth, k)?, &hits, mean, boot)?;
    }
    Ok((report, ranked))
}

pub fn caption_report(records: &[CaptionRecord], boot: Option<Bootstrap>) -> CliResult<MetricReport> {
    let outcomes: Vec<_> = records.iter().map(CaptionRecord::outcome).collect();
    let rates = mismatch_rates(&outcomes)?;
    let mut report = MetricReport::new();
    if let Some(m) = rates.male {
        report.insert("mr_male", m, outcomes.iter().filter(|o| o.true_gender == sfid::fairmetrics::Gender::Male).count());
    }
    if let Some(f) = rates.female {
        report.insert("mr_female", f, outcomes.iter().filter(|o| o.true_gender == sfid::fairmetrics::Gender::Female).count());
    }
    let overall = |o: &[_]| mismatch_rates(o).map_or(f64::NAN, |r| r.overall);
    let composite = |o: &[_]| mismatch_rates(o).map_or(f64::NAN, |r| r.composite);
    put(&mut report, "mr_overall", rates.overall, &outcomes, overall, boot)?;
    put(&mut report, "mr_composite", rates.composite, &outcomes, composite, boot)?;
    let scores: Vec<f64> = records.iter().map(CaptionRecord::max_meteor).collect();
    put(&mut report, "max_meteor", mean(&scores), &scores, mean, boot)?;
    Ok(report)
}

pub fn generation_report(records: &[GenerationRecord], boot: Option<Bootstrap>) -> CliResult<MetricReport> {
    let mut report = MetricReport::new();
    if records.iter().any(|r| r.prompt_gender == sfid::fairmetrics::Gender::Neutral) {
        let counts = generation_counts(records)?;
        let c = counts.generations() as f64;
        let per: Vec<f64> = counts.counts().iter().map(|&(m, f)| m.max(f) as f64 / c).collect();
        put(&mut report, "generation_skew", generation_skew(&counts)?, &per, mean, boot)?;
        let runs: Vec<f64> = discrepancy_by_run(records)?.into_iter().map(|r| r.1).collect();
        report.insert("discrepancy", mean(&runs), runs.len());
    }
    let gendered = mismatch_by_run(records)?;
    if !gendered.is_empty() {
        let comp: Vec<f64> = gendered.iter().map(|r| r.1.composite).collect();
        let over: Vec<f64> = gendered.iter().map(|r| r.1.overall).collect();
        report.insert("mr_composite", mean(&comp), comp.len());
        report.insert("mr_overall", mean(&over), over.len());
    }
    if report.entries.is_empty() {
        return Err(CliError::data("generation labels contain no prompts"));
    }
    Ok(report)
}

/// `prompt_id<TAB>image_id` rows after a header line.
pub fn read_truth(path: &Path, n_prompts: usize) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
    let mut truth = vec![usize::MAX; n_prompts];
    for (no, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || CliError::data(format!("{}:{}: expected `prompt_id<TAB>image_id`", path.display(), no + 1));
        let mut f = line.split('\t').map(|s| s.trim().parse::<usize>());
        let (Some(Ok(t)), Some(Ok(i)), None) = (f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        *truth.get_mut(t).ok_or_else(bad)? = i;
    }
    if let Some(t) = truth.iter().position(|&i| i == usize::MAX) {
        return Err(CliError::data(format!("{}: prompt {t} has no ground truth", path.display())));
    }
    Ok(truth)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// zeroshot, retrieval, caption or generation.
    #[arg(long)]
    pub task: Option<String>,
    /// Image embeddings for zero-shot classification.
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Attributes with a class column for zero-shot classification.
    #[arg(long)]
    pub attr: Option<PathBuf>,
    /// Class prompt embeddings, one row per class.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// Query text embeddings for retrieval.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Gallery image embeddings for retrieval.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub image_attr: Option<PathBuf>,
    /// `prompt_id<TAB>image_id` ground truth; prompt t matches image t by default.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Retrieval depth M.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Write the ranked lists here.
    #[arg(long)]
    pub rankings_out: Option<PathBuf>,
    /// Debiaser for image-side embeddings.
    #[arg(long)]
    pub image_model: Option<PathBuf>,
    /// Debiaser for text-side embeddings (prototypes and queries).
    #[arg(long)]
    pub text_model: Option<PathBuf>,
    /// Caption file for captioning evaluation.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Detected-gender label file for generation evaluation.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Disparity definition: recall or literal.
    #[arg(long)]
    pub dp: Option<String>,
    /// Bootstrap iterations for confidence intervals.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Show percentages in the table.
    #[arg(long)]
    pub percent: bool,
    /// Report output (JSON); the table goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_dp(s: &str) -> CliResult<DpDefinition> {
    match s.to_ascii_lowercase().as_str() {
        "recall" => Ok(DpDefinition::Recall),
        "literal" => Ok(DpDefinition::Literal),
        _ => Err(CliError::config(format!("unknown disparity definition {s:?}; expected recall or literal"))),
    }
}

fn load_model(path: Option<PathBuf>, label: &str, manifest: &mut Manifest) -> CliResult<Option<Debiaser>> {
    path.map(|p| {
        manifest.input(label, &p)?;
        Debiaser::load(&p)
    })
    .transpose()
}

pub fn run(args: &EvalArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let task: Task = cfg.require(args.task.clone(), "task")?.parse()?;
    let out: PathBuf = cfg.require(args.out.clone(), "out")?;
    let mut manifest = Manifest::for_run("eval", seed, cfg)?;
    let iterations: Option<usize> = cfg.pick(args.bootstrap, "bootstrap")?;
    let boot = iterations.map(|iterations| Bootstrap { iterations, seed });
    if let Some(b) = iterations {
        manifest.param("bootstrap", b);
    }
    let image_model = load_model(cfg.pick(args.image_model.clone(), "image-model")?, "image-model", &mut manifest)?;
    let text_model = load_model(cfg.pick(args.text_model.clone(), "text-model")?, "text-model", &mut manifest)?;

    let report = match task {
        Task::ZeroShot => {
            let emb: PathBuf = cfg.require(args.emb.clone(), "emb")?;
            let attr: PathBuf = cfg.require(args.attr.clone(), "attr")?;
            let protos: PathBuf = cfg.require(args.prototypes.clone(), "prototypes")?;
            let definition = parse_dp(&cfg.or(args.dp.clone(), "dp", "recall".to_string())?)?;
            manifest.input("emb", &emb)?.input("attr", &attr)?.input("prototypes", &protos)?;
            manifest.param("dp", format!("{definition:?}").to_lowercase());
            let images = debias(image_model.as_ref(), load_embeddings(&emb, "image")?)?;
            let prototypes = debias(text_model.as_ref(), load_embeddings(&protos, "prototype")?)?;
            let attrs = load_attributes(&attr, "image")?;
            zeroshot_report(&images, &attrs, &prototypes, definition, boot)?
        }
        Task::Retrieval => {
            let texts_path: PathBuf = cfg.require(args.texts.clone(), "texts")?;
            let images_path: PathBuf = cfg.require(args.images.clone(), "images")?;
            let attr: PathBuf = cfg.require(args.image_attr.clone(), "image-attr")?;
            let depth = cfg.or(args.depth, "depth", 100usize)?;
            manifest.input("texts", &texts_path)?.input("images", &images_path)?.input("image-attr", &attr)?;
            manifest.param("depth", depth);
            let texts = debias(text_model.as_ref(), load_embeddings(&texts_path, "text")?)?;
            let images = debias(image_model.as_ref(), load_embeddings(&images_path, "image")?)?;
            let attrs = load_attributes(&attr, "image")?;
            let truth = match cfg.pick(args.truth.clone(), "truth")? {
                Some(p) => {
                    manifest.input("truth", &p)?;
                    read_truth(&p, texts.n_samples())?
                }
                None if texts.n_samples() <= images.n_samples() => (0..texts.n_samples()).collect(),
                None => return Err(CliError::data("more prompts than images; pass --truth")),
            };
            let (report, ranked) = retrieval_report(&texts, &images, &attrs, &truth, depth, boot)?;
            if let Some(p) = cfg.pick(args.rankings_out.clone(), "rankings-out")? {
                write_rankings(&ranked, &p).context(|| "writing rankings".to_string())?;
            }
            report
        }
        Task::Caption => {
            let path: PathBuf = cfg.require(args.captions.clone(), "captions")?;
            manifest.input("captions", &path)?;
            caption_report(&read_caption_records(&path).context(|| "reading captions".to_string())?, boot)?
        }
        Task::Generation => {
            let path: PathBuf = cfg.require(args.labels.clone(), "labels")?;
            manifest.input("labels", &path)?;
            generation_report(&read_generation_labels(&path).context(|| "reading generation labels".to_string())?, boot)?
        }
    };
    let table = report.to_table(args.percent);
    write_text(&out, &(report.to_json() + "\n"))?;
    write_text(&sibling(&out, ".txt"), &table)?;
    manifest.write_beside(&out)?;
    print!("{table}");
    Ok(())
}
