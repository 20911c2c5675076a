use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use sfid::fairmetrics::MetricReport;

use super::write_text;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// `label=report.json`, one per method, in display order.
    #[arg(long = "report", value_name = "LABEL=PATH")]
    pub reports: Vec<String>,
    /// Show percentages.
    #[arg(long)]
    pub percent: bool,
    /// Write the table (TSV) here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Header plus one row per method, one column per metric; intervals shown
/// as `±std`.
pub fn compare_rows(reports: &[(String, MetricReport)], percent: bool) -> Vec<Vec<String>> {
    let scale = if percent { 100.0 } else { 1.0 };
    let metrics: BTreeSet<&str> = reports.iter().flat_map(|(_, r)| r.entries.keys().map(String::as_str)).collect();
    let mut rows = vec![std::iter::once("method".to_string()).chain(metrics.iter().map(|m| m.to_string())).collect::<Vec<_>>()];
    for (label, r) in reports {
        let mut row = vec![label.clone()];
        for m in &metrics {
            row.push(match r.entries.get(*m) {
                Some(e) => match e.ci_std {
                    Some(s) => format!("{:.4}±{:.4}", e.value * scale, s * scale),
                    None => format!("{:.4}", e.value * scale),
                },
                None => "-".into(),
            });
        }
        rows.push(row);
    }
    rows
}

pub fn align_rows(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        for (c, cell) in r.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                let _ = write!(out, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push('\n');
    }
    out
}

pub fn run(args: &CompareArgs, cfg: &Config, seed: u64) -> CliResult<()> {
    let specs: Vec<String> = if args.reports.is_empty() {
        cfg.get("report")?.unwrap_or_default()
    } else {
        args.reports.clone()
    };
    if specs.is_empty() {
        return Err(CliError::config("compare needs at least one --report LABEL=PATH"));
    }
    let mut manifest = Manifest::for_run("compare", seed, cfg)?;
    let mut reports = Vec::new();
    for spec in &specs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("expected LABEL=PATH, got {spec:?}")))?;
        let path = PathBuf::from(path);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))?;
        let report: MetricReport = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: not a metric report: {e}", path.display())))?;
        manifest.input(label, &path)?;
        reports.push((label.to_string(), report));
    }
    let rows = compare_rows(&reports, args.percent);
    if let Some(out) = cfg.pick(args.out.clone(), "out")? {
        let tsv: String = rows.iter().map(|r| r.join("\t") + "\n").collect();
        write_text(&out, &tsv)?;
        manifest.write_beside(&out)?;
    }
    print!("{}", align_rows(&rows));
    Ok(())
}
