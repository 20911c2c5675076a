use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::captions::{mismatch_rates, Gender, GenderOutcome, MismatchRates};
use crate::error::{data_err, Error, Result};

pub const GENERATION_HEADER: &str = "prompt_id\tprofession\tprompt_gender\tdetected_gender\trun_seed";

/// One generated image with its prompt and the detected gender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub profession: String,
    pub prompt_gender: Gender,
    pub detected: Gender,
    pub run_seed: u64,
}

pub fn parse_generation_labels(text: &str, origin: &str) -> Result<Vec<GenerationRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == GENERATION_HEADER => {}
        Some((_, h)) => return Err(data_err!("{origin}: expected header {GENERATION_HEADER:?}, got {h:?}")),
        None => return Err(data_err!("{origin}: empty generation label file")),
    }
    lines
        .map(|(no, line)| {
            let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if f.len() != 5 {
                return Err(data_err!("{origin}:{}: expected 5 fields, got {}", no + 1, f.len()));
            }
            let gender = |s: &str| Gender::parse(s).ok_or_else(|| data_err!("{origin}:{}: unknown gender {s:?}", no + 1));
            Ok(GenerationRecord {
                prompt_id: f[0].to_string(),
                profession: f[1].to_string(),
                prompt_gender: gender(f[2])?,
                detected: gender(f[3])?,
                run_seed: f[4].trim().parse().map_err(|_| data_err!("{origin}:{}: bad run seed {:?}", no + 1, f[4]))?,
            })
        })
        .collect()
}

pub fn read_generation_labels(path: impl AsRef<Path>) -> Result<Vec<GenerationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_generation_labels(&text, &path.display().to_string())
}

/// Detected-gender counts per profession over `generations` runs of each
/// neutral prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationCounts {
    counts: Vec<(usize, usize)>,
    generations: usize,
}

impl GenerationCounts {
    pub fn new(counts: Vec<(usize, usize)>, generations: usize) -> Result<Self> {
        if generations == 0 {
            return Err(data_err!("need at least one generation per prompt"));
        }
        if let Some(&(m, f)) = counts.iter().find(|(m, f)| m + f > generations) {
            return Err(data_err!("counts ({m}, {f}) exceed {generations} generations"));
        }
        Ok(Self { counts, generations })
    }

    pub fn counts(&self) -> &[(usize, usize)] {
        &self.counts
    }

    pub fn generations(&self) -> usize {
        self.generations
    }
}

/// Mean over professions of `max(N_m, N_f) / C`, as a fraction.
pub fn generation_skew(counts: &GenerationCounts) -> Result<f64> {
    if counts.counts.is_empty() {
        return Err(data_err!("no professions to evaluate"));
    }
    let c = counts.generations as f64;
    let total: f64 = counts.counts.iter().map(|&(m, f)| m.max(f) as f64 / c).sum();
    Ok(total / counts.counts.len() as f64)
}

/// `sqrt((N_m/|P| − ½)² + (N_f/|P| − ½)²)` for a single run over `n_prompts`
/// neutral prompts.
pub fn discrepancy(n_male: usize, n_female: usize, n_prompts: usize) -> Result<f64> {
    if n_prompts == 0 {
        return Err(data_err!("discrepancy needs at least one prompt"));
    }
    let p = n_prompts as f64;
    Ok(((n_male as f64 / p - 0.5).powi(2) + (n_female as f64 / p - 0.5).powi(2)).sqrt())
}

/// Counts for neutral prompts; `C` is the number of distinct run seeds.
pub fn generation_counts(records: &[GenerationRecord]) -> Result<GenerationCounts> {
    let neutral: Vec<_> = records.iter().filter(|r| r.prompt_gender == Gender::Neutral).collect();
    let runs: BTreeSet<u64> = neutral.iter().map(|r| r.run_seed).collect();
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &neutral {
        let e = per.entry(r.profession.as_str()).or_default();
        match r.detected {
            Gender::Male => e.0 += 1,
            Gender::Female => e.1 += 1,
            Gender::Neutral => {}
        }
    }
    GenerationCounts::new(per.into_values().collect(), runs.len())
}

/// Discrepancy of each run over its neutral prompts, in seed order.
pub fn discrepancy_by_run(records: &[GenerationRecord]) -> Result<Vec<(u64, f64)>> {
    let mut per: BTreeMap<u64, (usize, usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.prompt_gender == Gender::Neutral) {
        let e = per.entry(r.run_seed).or_default();
        e.2 += 1;
        match r.detected {
            Gender::Male => e.0 += 1,
            Gender::Female => e.1 += 1,
            Gender::Neutral => {}
        }
    }
    per.into_iter().map(|(s, (m, f, p))| Ok((s, discrepancy(m, f, p)?))).collect()
}

/// Mismatch rates of gender-specific prompts, per run seed.
pub fn mismatch_by_run(records: &[GenerationRecord]) -> Result<Vec<(u64, MismatchRates)>> {
    let mut per: BTreeMap<u64, Vec<GenderOutcome>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.prompt_gender != Gender::Neutral) {
        per.entry(r.run_seed).or_default().push(GenderOutcome {
            true_gender: r.prompt_gender,
            detected: r.detected,
        });
    }
    per.into_iter().map(|(s, o)| Ok((s, mismatch_rates(&o)?))).collect()
}
