use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use sfid::forest::{fit_forest, read_forest};
use sfid::seed::derive_seed;
use sfid::ForestParams;

use super::{load_attributes, load_embeddings, write_text};
use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    /// A saved forest; otherwise one is fitted on --emb/--attr.
    #[arg(long)]
    pub forest: Option<PathBuf>,
    #[arg(long)]
    pub emb: Option<PathBuf>,
    #[arg(long)]
    pub attr: Option<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Output file: `rank<TAB>importance`, ranks from 1.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sorted importances as a two-column table.
pub fn format_curve(importance: &[f64]) -> String {
    let mut sorted = importance.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out = String::from("rank\timportance\n");
    for (r, v) in sorted.iter().enumerate() {
        let _ = writeln!(out, "{}\t{v}", r + 1);
    }
    out
}

pub fn run(args: &CurveArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let out: PathBuf = cfg.require(args.out.clone(), "out")?;
    let mut manifest = Manifest::for_run("importance-curve", seed, cfg)?;
    let forest = match cfg.pick(args.forest.clone(), "forest")? {
        Some(path) => {
            manifest.input("forest", &path)?;
            read_forest(&path).context(|| "reading forest".to_string())?
        }
        None => {
            let emb: PathBuf = cfg.pick(args.emb.clone(), "emb")?.ok_or_else(|| {
                CliError::config("importance-curve needs --forest or --emb with --attr")
            })?;
            let attr: PathBuf = cfg.require(args.attr.clone(), "attr")?;
            let trees = cfg.or(args.trees, "trees", ForestParams::default().n_trees)?;
            manifest.input("emb", &emb)?.input("attr", &attr)?.param("trees", trees);
            let z = load_embeddings(&emb, "training")?;
            let y = load_attributes(&attr, "training")?;
            let params = ForestParams::default().with_trees(trees).with_seed(derive_seed(seed, "forest"));
            fit_forest(&z, &y, &params)?
        }
    };
    write_text(&out, &format_curve(forest.feature_importance()))?;
    manifest.write_beside(&out)?;
    println!("{} sorted importances -> {}", forest.n_features(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_is_sorted_and_ranked_from_one() {
        let text = format_curve(&[0.1, 0.6, 0.3]);
        assert_eq!(text, "rank\timportance\n1\t0.6\n2\t0.3\n3\t0.1\n");
    }
}
