//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p sfid --test acceptance`. Pass criterion numbers as
//! arguments to run a subset, e.g. `-- 5 7 9`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use sfid::baselines::{apply_dear, fit_clipclip, fit_dear, mutual_info_features, ClipClipParams, DearObjective, DearParams, LinearMap};
use sfid::fairmetrics::{
    composite_rate, delta_dp_mean, discrepancy, discrepancy_by_run, dp_multi, generation_counts, generation_skew, meteor,
    mismatch_rates, records_from, recall_at_k, skew_at_m, DpDefinition, Gender, GenderOutcome, GenerationCounts,
    GenerationRecord, PredictionRecord, RetrievalRun,
};
use sfid::fairmetrics::align;
use sfid::seed;
use sfid::sfid::{
    apply_debias, apply_debias_seeded, apply_debias_tensor, fit_sfid, fit_sfid_detailed, low_confidence_set, reduce_to_2d,
    Provenance,
};
use sfid::synthlab::{gen_synthetic, make_retrieval_scenario, probe_accuracy, split_halves, RetrievalConfig, RetrievalScenario, SynthConfig};
use sfid::tasks::{retrieve_all, zero_shot_classify};
use sfid::{AttributeTable, DebiasModel, EmbeddingMatrix, EmbeddingTensor, ForestParams, ImputeMode, SfidParams, TensorLayout};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Report,
    Fail,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

fn default_sfid(seed: u64) -> SfidParams {
    SfidParams {
        forest: ForestParams::default().with_seed(seed),
        ..SfidParams::default()
    }
}

fn classification_config(seed: u64) -> SynthConfig {
    SynthConfig {
        attr_class_correlation: 0.0,
        seed,
        ..SynthConfig::default()
    }
}

struct ClassificationRun {
    probe_pre: f64,
    probe_post: f64,
    zs_pre: f64,
    zs_post: f64,
}

fn classification_run(seed: u64) -> ClassificationRun {
    let d = gen_synthetic(&classification_config(seed)).unwrap();
    let (zt, yt, zv, _) = split_halves(&d.embeddings, &d.attributes).unwrap();
    let model = fit_sfid(&zt, &yt, &zv, &default_sfid(seed)).unwrap();
    let debiased = apply_debias(&model, &d.embeddings).unwrap();
    let protos = d.class_prototypes();
    ClassificationRun {
        probe_pre: probe_accuracy(&d.embeddings, &d.attributes, seed).unwrap(),
        probe_post: probe_accuracy(&debiased, &d.attributes, seed).unwrap(),
        zs_pre: accuracy(&zero_shot_classify(&d.embeddings, &protos).unwrap(), d.class_labels()),
        zs_post: accuracy(&zero_shot_classify(&debiased, &protos).unwrap(), d.class_labels()),
    }
}

fn criteria_1_2() -> (Outcome, Outcome) {
    let runs: Vec<ClassificationRun> = SEEDS.iter().map(|&s| classification_run(s)).collect();
    let probes: Vec<String> = runs.iter().map(|r| format!("{:.3}->{:.3}", r.probe_pre, r.probe_post)).collect();
    let c1 = Outcome::check(
        runs.iter().all(|r| r.probe_pre >= 0.95 && r.probe_post <= 0.60),
        format!("probe pre>=0.95, post<=0.60: {}", probes.join(" ")),
    );
    let zs: Vec<String> = runs.iter().map(|r| format!("{:.4}->{:.4}", r.zs_pre, r.zs_post)).collect();
    let c2 = Outcome::check(
        runs.iter().all(|r| (r.zs_pre - r.zs_post).abs() <= 0.03),
        format!("zero-shot within 0.03: {}", zs.join(" ")),
    );
    (c1, c2)
}

fn skew_recall(texts: &EmbeddingMatrix, images: &EmbeddingMatrix, s: &RetrievalScenario) -> (f64, f64) {
    let ranks = retrieve_all(texts, images, 100).unwrap();
    let lists = ranks.iter().map(|l| l.iter().map(|p| p.0).collect()).collect();
    let run = RetrievalRun::new(lists, s.image_attributes.labels().to_vec(), 2, 100).unwrap();
    (skew_at_m(&run).unwrap(), recall_at_k(&run, &s.truth, 10).unwrap())
}

struct RetrievalOutcome {
    pre: (f64, f64),
    lc: (f64, f64),
    zero: f64,
    gauss: f64,
}

fn retrieval_run(seed: u64) -> RetrievalOutcome {
    let s = make_retrieval_scenario(&RetrievalConfig { seed, ..RetrievalConfig::default() }).unwrap();
    let fit = |z: &EmbeddingMatrix, y: &AttributeTable| {
        let (zt, yt, zv, _) = split_halves(z, y).unwrap();
        fit_sfid(&zt, &yt, &zv, &default_sfid(seed)).unwrap()
    };
    let image_model = fit(&s.debias_images, &s.debias_image_attributes);
    let text_model = fit(&s.debias_texts, &s.debias_text_attributes);
    let both = |mode: ImputeMode| {
        let (t, i) = (text_model.with_fill(mode, seed).unwrap(), image_model.with_fill(mode, seed).unwrap());
        let texts = apply_debias_seeded(&t, &s.texts, seed::derive_seed(seed, "texts")).unwrap();
        let images = apply_debias_seeded(&i, &s.images, seed::derive_seed(seed, "images")).unwrap();
        skew_recall(&texts, &images, &s)
    };
    RetrievalOutcome {
        pre: skew_recall(&s.texts, &s.images, &s),
        lc: skew_recall(&apply_debias(&text_model, &s.texts).unwrap(), &apply_debias(&image_model, &s.images).unwrap(), &s),
        zero: both(ImputeMode::Zero).0,
        gauss: both(ImputeMode::Gaussian).0,
    }
}

fn criteria_3_4() -> (Outcome, Outcome) {
    let runs: Vec<RetrievalOutcome> = SEEDS.iter().map(|&s| retrieval_run(s)).collect();
    let lines: Vec<String> = runs
        .iter()
        .map(|r| format!("skew {:.3}->{:.3} R@10 {:.3}->{:.3}", r.pre.0, r.lc.0, r.pre.1, r.lc.1))
        .collect();
    let c3 = Outcome::check(
        runs.iter().all(|r| r.lc.0 <= 0.5 * r.pre.0 && r.pre.1 - r.lc.1 <= 0.05),
        lines.join("; "),
    );
    let mean = |f: &dyn Fn(&RetrievalOutcome) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (lc, zero, gauss) = (mean(&|r| r.lc.0), mean(&|r| r.zero), mean(&|r| r.gauss));
    let c4 = Outcome::check(
        lc < zero && lc < gauss,
        format!("mean skew@100 LC {lc:.4} ZERO {zero:.4} GAUSS {gauss:.4} (need LC strictly lowest)"),
    );
    (c3, c4)
}

fn oracle_delta_dp(records: &[PredictionRecord], recall: bool) -> Option<f64> {
    let classes: BTreeSet<usize> = records.iter().flat_map(|r| [r.predicted, r.truth]).collect();
    let mut gaps = Vec::new();
    for k in classes {
        let mut n = [0usize; 2];
        let mut hit = [0usize; 2];
        for r in records {
            if !recall || r.truth == k {
                n[r.attribute] += 1;
                if r.predicted == k {
                    hit[r.attribute] += 1;
                }
            }
        }
        if n[0] > 0 && n[1] > 0 {
            gaps.push((hit[1] as f64 / n[1] as f64 - hit[0] as f64 / n[0] as f64).abs());
        }
    }
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

fn oracle_dp_multi(records: &[PredictionRecord]) -> (f64, f64) {
    let classes: BTreeSet<usize> = records.iter().flat_map(|r| [r.predicted, r.truth]).collect();
    let attrs: BTreeSet<usize> = records.iter().map(|r| r.attribute).collect();
    let gaps: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let rates: Vec<f64> = attrs
                .iter()
                .map(|&a| {
                    let group: Vec<_> = records.iter().filter(|r| r.attribute == a).collect();
                    group.iter().filter(|r| r.predicted == c).count() as f64 / group.len() as f64
                })
                .collect();
            let mut best = 0.0f64;
            for x in &rates {
                for y in &rates {
                    best = best.max(x - y);
                }
            }
            best
        })
        .collect();
    (gaps.iter().sum::<f64>() / gaps.len() as f64, gaps.iter().copied().fold(0.0, f64::max))
}

fn oracle_skew(lists: &[Vec<usize>], attrs: &[usize], n_attr: usize, depth: usize) -> f64 {
    let n = attrs.len() as f64;
    let mut total = 0.0;
    for list in lists {
        let mut best = f64::NEG_INFINITY;
        for a in 0..n_attr {
            let base = attrs.iter().filter(|&&x| x == a).count() as f64 / n;
            let top = list[..depth].iter().filter(|&&i| attrs[i] == a).count() as f64 / depth as f64;
            best = best.max((top / base).ln());
        }
        total += best;
    }
    total / lists.len() as f64
}

fn random_gender(rng: &mut seed::Rng, neutral: bool) -> Gender {
    match rng.random_range(0..if neutral { 3 } else { 2 }) {
        0 => Gender::Male,
        1 => Gender::Female,
        _ => Gender::Neutral,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 || (a.is_infinite() && a == b)
}

fn criterion_5() -> Outcome {
    let mut worst = BTreeMap::<&str, usize>::new();
    for name in ["delta_dp_mean", "dp_multi", "skew_at_m", "mismatch_rates", "generation_skew", "discrepancy"] {
        worst.insert(name, 0);
    }
    for trial in 0..100u64 {
        let mut rng = seed::rng_indexed(5, "metric-oracles", trial);
        let n = rng.random_range(2..=200);
        let n_classes = rng.random_range(1..=5);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
        let mut binary: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        binary[0] = 0;
        binary[1] = 1;
        let records = records_from(&predicted, &truth, &binary).unwrap();
        for (def, recall) in [(DpDefinition::Recall, true), (DpDefinition::Literal, false)] {
            let got = delta_dp_mean(&records, def).ok().map(|d| d.value);
            let want = oracle_delta_dp(&records, recall);
            let bad = match (got, want) {
                (Some(g), Some(w)) => !close(g, w),
                (None, None) => false,
                _ => true,
            };
            if bad {
                *worst.get_mut("delta_dp_mean").unwrap() += 1;
            }
        }

        let n_attr = rng.random_range(2..=4usize).min(n);
        let multi: Vec<usize> = (0..n).map(|i| if i < n_attr { i } else { rng.random_range(0..n_attr) }).collect();
        let records = records_from(&predicted, &truth, &multi).unwrap();
        let got = dp_multi(&records).unwrap();
        let (mean, max) = oracle_dp_multi(&records);
        if !close(got.mean, mean) || !close(got.max, max) {
            *worst.get_mut("dp_multi").unwrap() += 1;
        }

        let depth = rng.random_range(1..=n.min(50));
        let prompts = rng.random_range(1..=8);
        let lists: Vec<Vec<usize>> = (0..prompts)
            .map(|_| {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all.truncate(rng.random_range(depth..=n));
                all
            })
            .collect();
        let run = RetrievalRun::new(lists.clone(), multi.clone(), n_attr, depth).unwrap();
        if !close(skew_at_m(&run).unwrap(), oracle_skew(&lists, &multi, n_attr, depth)) {
            *worst.get_mut("skew_at_m").unwrap() += 1;
        }

        let outcomes: Vec<GenderOutcome> = (0..n)
            .map(|_| GenderOutcome {
                true_gender: random_gender(&mut rng, false),
                detected: random_gender(&mut rng, true),
            })
            .collect();
        let got = mismatch_rates(&outcomes).unwrap();
        let rate = |g: Option<Gender>| {
            let (mut wrong, mut total) = (0usize, 0usize);
            for o in &outcomes {
                if g.is_none_or(|g| o.true_gender == g) {
                    total += 1;
                    if o.detected != Gender::Neutral && o.detected != o.true_gender {
                        wrong += 1;
                    }
                }
            }
            (total > 0).then(|| wrong as f64 / total as f64)
        };
        let (m, f, o) = (rate(Some(Gender::Male)), rate(Some(Gender::Female)), rate(None).unwrap());
        let gap = m.zip(f).map_or(0.0, |(m, f)| f - m);
        let want = (o * o + gap * gap).sqrt();
        if got.male != m || got.female != f || !close(got.overall, o) || !close(got.composite, want) {
            *worst.get_mut("mismatch_rates").unwrap() += 1;
        }

        let runs = rng.random_range(1..=10u64);
        let professions = rng.random_range(1..=12);
        let mut gen = Vec::new();
        for p in 0..professions {
            for r in 0..runs {
                gen.push(GenerationRecord {
                    prompt_id: format!("p{p}-{r}"),
                    profession: format!("job{p}"),
                    prompt_gender: if rng.random_bool(0.8) { Gender::Neutral } else { random_gender(&mut rng, false) },
                    detected: random_gender(&mut rng, true),
                    run_seed: r,
                });
            }
        }
        if !gen.iter().any(|g| g.prompt_gender == Gender::Neutral) {
            gen[0].prompt_gender = Gender::Neutral;
        }
        let neutral: Vec<&GenerationRecord> = gen.iter().filter(|g| g.prompt_gender == Gender::Neutral).collect();
        let seeds: BTreeSet<u64> = neutral.iter().map(|g| g.run_seed).collect();
        let jobs: BTreeSet<&str> = neutral.iter().map(|g| g.profession.as_str()).collect();
        let want = jobs
            .iter()
            .map(|job| {
                let count = |g: Gender| neutral.iter().filter(|r| r.profession == *job && r.detected == g).count();
                count(Gender::Male).max(count(Gender::Female)) as f64 / seeds.len() as f64
            })
            .sum::<f64>()
            / jobs.len() as f64;
        if !close(generation_skew(&generation_counts(&gen).unwrap()).unwrap(), want) {
            *worst.get_mut("generation_skew").unwrap() += 1;
        }
        let got = discrepancy_by_run(&gen).unwrap();
        let want: Vec<(u64, f64)> = seeds
            .iter()
            .map(|&s| {
                let run: Vec<_> = neutral.iter().filter(|g| g.run_seed == s).collect();
                let p = run.len() as f64;
                let share = |g: Gender| run.iter().filter(|r| r.detected == g).count() as f64 / p;
                (s, ((share(Gender::Male) - 0.5).powi(2) + (share(Gender::Female) - 0.5).powi(2)).sqrt())
            })
            .collect();
        if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.0 != w.0 || !close(g.1, w.1)) {
            *worst.get_mut("discrepancy").unwrap() += 1;
        }
    }
    let bad: Vec<String> = worst.iter().filter(|(_, &v)| v > 0).map(|(k, v)| format!("{k}:{v}")).collect();
    Outcome::check(
        bad.is_empty(),
        if bad.is_empty() {
            "6 metrics agree with brute-force recounts to 1e-12 over 100 trials".into()
        } else {
            format!("mismatching trials {}", bad.join(" "))
        },
    )
}

fn criterion_6() -> Outcome {
    let mr_c = 100.0 * composite_rate(0.0, 0.06, 0.03);
    let floor = generation_skew(&GenerationCounts::new(vec![(5, 5); 4], 10).unwrap()).unwrap();
    let ceiling = generation_skew(&GenerationCounts::new(vec![(10, 0), (0, 10)], 10).unwrap()).unwrap();
    let mut records = Vec::new();
    for run in 0..10u64 {
        for (job, g) in [("nurse", Gender::Female), ("dancer", Gender::Female), ("doctor", Gender::Male), ("engineer", Gender::Male)] {
            records.push(GenerationRecord {
                prompt_id: format!("{job}-{run}"),
                profession: job.into(),
                prompt_gender: Gender::Neutral,
                detected: g,
                run_seed: run,
            });
        }
    }
    let disc = discrepancy_by_run(&records).unwrap();
    let max_disc = disc.iter().map(|d| d.1).fold(0.0, f64::max);
    let skew = generation_skew(&generation_counts(&records).unwrap()).unwrap();
    let single = discrepancy(2, 2, 4).unwrap();
    Outcome::check(
        (mr_c - 6.708).abs() <= 0.001
            && (floor - 0.5).abs() < 1e-15
            && (ceiling - 1.0).abs() < 1e-15
            && max_disc == 0.0
            && single == 0.0
            && disc.len() == 10
            && (skew - 1.0).abs() < 1e-15,
        format!(
            "MR_C {mr_c:.4}%, skew floor {:.1}% ceiling {:.1}%, stereotyped professions: discrepancy {max_disc} skew {:.1}%",
            100.0 * floor,
            100.0 * ceiling,
            100.0 * skew
        ),
    )
}

fn oracle_mi(values: &[f32], labels: &[usize], bins: usize) -> f64 {
    let n = values.len();
    let binned: Vec<usize> = values
        .iter()
        .map(|v| values.iter().filter(|w| *w < v).count() * bins / n)
        .collect();
    let entropy = |counts: &BTreeMap<(usize, usize), usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum()
    };
    let mut hx = BTreeMap::new();
    let mut hy = BTreeMap::new();
    let mut hxy = BTreeMap::new();
    for (&b, &a) in binned.iter().zip(labels) {
        *hx.entry((b, 0)).or_insert(0) += 1;
        *hy.entry((0, a)).or_insert(0) += 1;
        *hxy.entry((b, a)).or_insert(0) += 1;
    }
    entropy(&hx) + entropy(&hy) - entropy(&hxy)
}

fn criterion_7() -> Outcome {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for trial in 0..400u64 {
        let mut rng = seed::rng_indexed(7, "mi-oracle", trial);
        let bins = rng.random_range(2..=4);
        let n_attr = rng.random_range(2..=3);
        let n = rng.random_range(bins.max(n_attr)..=64);
        let dim = rng.random_range(1..=4);
        let levels = rng.random_range(1..=12);
        let labels: Vec<usize> = (0..n).map(|i| if i < n_attr { i } else { rng.random_range(0..n_attr) }).collect();
        let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(0..levels) as f32 * 0.5 - 2.0).collect();
        let z = EmbeddingMatrix::new(n, dim, data).unwrap();
        let y = AttributeTable::from_labels(labels.clone()).unwrap();
        let got = mutual_info_features(&z, &y, bins).unwrap();
        for (j, g) in got.iter().enumerate() {
            worst = worst.max((g - oracle_mi(&z.column(j), &labels, bins).max(0.0)).abs());
            cases += 1;
        }
    }
    let labels: Vec<usize> = (0..64).map(|i| i % 2).collect();
    let z = EmbeddingMatrix::new(64, 1, labels.iter().map(|&l| l as f32).collect()).unwrap();
    let y = AttributeTable::from_labels(labels).unwrap();
    let ln2 = mutual_info_features(&z, &y, 2).unwrap()[0];
    Outcome::check(
        worst <= 1e-12 && (ln2 - std::f64::consts::LN_2).abs() <= 1e-9,
        format!("{cases} features, max |MI - oracle| {worst:.2e}; correlated binary feature {ln2:.12}"),
    )
}

fn criterion_8() -> Outcome {
    let d = gen_synthetic(&SynthConfig {
        n_samples: 60,
        dim: 16,
        n_classes: 2,
        bias_dims: vec![1, 4, 9],
        bias_strength: 2.0,
        attr_class_correlation: 0.0,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let (z, y) = (&d.embeddings, &d.attributes);
    let trained = fit_dear(z, y, &DearParams { epochs: 50, step_size: 1e-2, ..DearParams::default() }).unwrap();
    let mut worst = 0.0f64;
    for (trial, lambdas) in [[1.0, 1.0, 1.0], [0.3, 2.0, 0.0], [0.0, 0.0, 1.5], [2.0, 0.5, 0.7]].into_iter().enumerate() {
        let objective = DearObjective::new(z, y, trained.classifier.clone(), lambdas).unwrap();
        let mut rng = seed::rng_indexed(8, "residual", trial as u64);
        let mut residual = LinearMap::zeros(16, 16);
        let params: Vec<f64> = (0..residual.n_params())
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.02 * v
            })
            .collect();
        residual.set_params(&params);
        let (_, grad) = objective.loss_and_grad(&residual);
        let analytic = grad.params();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..params.len())
            .map(|p| {
                let mut shifted = params.clone();
                shifted[p] = params[p] + h;
                residual.set_params(&shifted);
                let up = objective.loss(&residual);
                shifted[p] = params[p] - h;
                residual.set_params(&shifted);
                let down = objective.loss(&residual);
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale);
    }
    let recon_only = fit_dear(z, y, &DearParams { lambdas: [1.0, 0.0, 0.0], ..DearParams::default() }).unwrap();
    let moved = apply_dear(&recon_only, z).unwrap();
    let num = moved.as_slice().iter().zip(z.as_slice()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
    let den = z.as_slice().iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let ratio = num / den;
    Outcome::check(
        worst <= 1e-4 && ratio <= 0.05,
        format!("max relative gradient error {worst:.2e}; reconstruction-only residual ratio {ratio:.2e}"),
    )
}

fn oracle_chunks(pairs: &[(usize, usize)]) -> usize {
    let set: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    pairs
        .iter()
        .filter(|&&(i, j)| i == 0 || j == 0 || !set.contains(&(i - 1, j - 1)))
        .count()
}

/// Every injection of the smaller occurrence list into the larger one.
fn injections(small: &[usize], large: &[usize], out: &mut Vec<Vec<(usize, usize)>>, acc: &mut Vec<(usize, usize)>, used: &mut Vec<bool>) {
    if acc.len() == small.len() {
        out.push(acc.clone());
        return;
    }
    let s = small[acc.len()];
    for t in 0..large.len() {
        if !used[t] {
            used[t] = true;
            acc.push((s, large[t]));
            injections(small, large, out, acc, used);
            acc.pop();
            used[t] = false;
        }
    }
}

/// (matches, fewest chunks) over every maximum matching.
fn brute_force_alignment(c: &[char], r: &[char]) -> (usize, usize) {
    let words: BTreeSet<char> = c.iter().chain(r).copied().collect();
    let mut per_word: Vec<Vec<Vec<(usize, usize)>>> = Vec::new();
    for w in words {
        let ci: Vec<usize> = (0..c.len()).filter(|&i| c[i] == w).collect();
        let ri: Vec<usize> = (0..r.len()).filter(|&j| r[j] == w).collect();
        let mut out = Vec::new();
        if ci.len() <= ri.len() {
            injections(&ci, &ri, &mut out, &mut Vec::new(), &mut vec![false; ri.len()]);
        } else {
            injections(&ri, &ci, &mut out, &mut Vec::new(), &mut vec![false; ci.len()]);
            out.iter_mut().for_each(|m| m.iter_mut().for_each(|p| *p = (p.1, p.0)));
        }
        per_word.push(out);
    }
    let mut best = (0, usize::MAX);
    let mut stack = vec![(0usize, Vec::new())];
    while let Some((w, acc)) = stack.pop() {
        if w == per_word.len() {
            best = (acc.len(), best.1.min(oracle_chunks(&acc)));
            continue;
        }
        for m in &per_word[w] {
            let mut next: Vec<(usize, usize)> = acc.clone();
            next.extend(m);
            stack.push((w + 1, next));
        }
    }
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

fn strings(alphabet: &[char], max_len: usize) -> Vec<Vec<char>> {
    let mut all = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<char>| {
                alphabet.iter().map(move |&ch| {
                    let mut t = s.clone();
                    t.push(ch);
                    t
                })
            })
            .collect();
        all.extend(frontier.iter().cloned());
    }
    all.into_iter().filter(|s| !s.is_empty()).collect()
}

fn criterion_9() -> Outcome {
    let identical = meteor(&["a", "man", "rides"], &["a", "man", "rides"]);
    let tokens = |s: &[char]| s.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    let mut pairs = 0;
    let mut wrong = Vec::new();
    let binary = strings(&['a', 'b'], 6);
    for c in &binary {
        for r in &binary {
            let got = align(&tokens(c), &tokens(r));
            pairs += 1;
            if (got.matches, got.chunks) != brute_force_alignment(c, r) {
                wrong.push(format!("{}|{}", c.iter().collect::<String>(), r.iter().collect::<String>()));
            }
        }
    }
    let mut rng = seed::rng(9, "meteor-pairs");
    let abc = ['a', 'b', 'c'];
    for _ in 0..3000 {
        let mut draw = || -> Vec<char> { (0..rng.random_range(1..=6)).map(|_| abc[rng.random_range(0..3)]).collect() };
        let (c, r) = (draw(), draw());
        let got = align(&tokens(&c), &tokens(&r));
        pairs += 1;
        if (got.matches, got.chunks) != brute_force_alignment(&c, &r) {
            wrong.push(format!("{}|{}", c.iter().collect::<String>(), r.iter().collect::<String>()));
        }
    }
    Outcome::check(
        (identical - 0.98148).abs() <= 1e-5 && wrong.is_empty(),
        format!(
            "identical 3-token score {identical:.6}; chunk count equals exhaustive minimum on {}/{pairs} pairs{}",
            pairs - wrong.len(),
            wrong.first().map_or(String::new(), |w| format!(", first mismatch {w}"))
        ),
    )
}

fn matrix_and_model() -> impl Strategy<Value = (EmbeddingMatrix, DebiasModel)> {
    (1usize..20, 1usize..10)
        .prop_flat_map(|(n, c)| {
            (
                prop::collection::vec(-1e3f32..1e3, n * c),
                prop::collection::vec(any::<bool>(), c),
                prop::collection::vec(-10f32..10.0, c),
                any::<bool>(),
                Just((n, c)),
            )
        })
        .prop_map(|(data, pick, fills, zero, (n, c))| {
            let z = EmbeddingMatrix::new(n, c, data).unwrap();
            let idx: Vec<usize> = (0..c).filter(|&j| pick[j]).collect();
            let values = idx.iter().map(|&j| fills[j]).collect();
            let mut m = DebiasModel::new(ImputeMode::LowConfidence, Some(0.7), c, idx, values, Provenance::default()).unwrap();
            if zero {
                m = m.with_fill(ImputeMode::Zero, 0).unwrap();
            }
            (z, m)
        })
}

fn run_property<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn fitted_case() -> impl Strategy<Value = (u64, usize, f64)> {
    (any::<u64>(), 1usize..6, 0.55f64..=1.0)
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };
    record(run_property("dimensionality", matrix_and_model(), |(z, m)| {
        let out = apply_debias(&m, &z).unwrap();
        prop_assert_eq!((out.n_samples(), out.n_features()), (z.n_samples(), z.n_features()));
        if m.k() < z.n_features() {
            let dropped = apply_debias(&m.with_fill(ImputeMode::Drop, 0).unwrap(), &z).unwrap();
            prop_assert_eq!(dropped.n_features(), z.n_features() - m.k());
        }
        Ok(())
    }));
    record(run_property("constant on S", matrix_and_model(), |(z, m)| {
        let out = apply_debias(&m, &z).unwrap();
        for (&j, &v) in m.indices().iter().zip(m.values()) {
            prop_assert!(out.column(j).iter().all(|x| x.to_bits() == v.to_bits()));
        }
        Ok(())
    }));
    record(run_property("bit-identical off S", matrix_and_model(), |(z, m)| {
        let out = apply_debias(&m, &z).unwrap();
        for j in (0..z.n_features()).filter(|j| !m.indices().contains(j)) {
            let same = out.column(j).iter().zip(z.column(j)).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
        Ok(())
    }));
    record(run_property("idempotent", matrix_and_model(), |(z, m)| {
        let once = apply_debias(&m, &z).unwrap();
        let twice = apply_debias(&m, &once).unwrap();
        prop_assert_eq!(twice.as_slice(), once.as_slice());
        Ok(())
    }));
    record(run_property("fill within training range", fitted_case(), |(s, k, tau)| {
        let d = gen_synthetic(&SynthConfig {
            n_samples: 80,
            dim: 12,
            n_classes: 2,
            bias_dims: vec![2, 7],
            bias_strength: 2.0,
            attr_class_correlation: 0.0,
            seed: s,
            ..SynthConfig::default()
        })
        .unwrap();
        let (zt, yt, zv, _) = split_halves(&d.embeddings, &d.attributes).unwrap();
        let params = SfidParams {
            k,
            tau,
            fallback_quantile: Some(0.1),
            forest: ForestParams::default().with_trees(10).with_seed(s),
            ..SfidParams::default()
        };
        let fit = fit_sfid_detailed(&zt, &yt, &zv, &params).unwrap();
        prop_assert_eq!(fit.model.k(), k);
        for (&j, &v) in fit.model.indices().iter().zip(fit.model.values()) {
            let col = zt.column(j);
            let lo = col.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = col.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(lo <= v && v <= hi, "column {} fill {} outside [{}, {}]", j, v, lo, hi);
        }
        Ok(())
    }));
    record(run_property(
        "confidence set monotone in tau",
        (prop::collection::vec(0u32..=20, 0..60), 0u32..=20, 0u32..=20),
        |(votes, a, b)| {
            let conf: Vec<f64> = votes.iter().map(|&v| f64::from(v) / 20.0).collect();
            let (lo, hi) = (f64::from(a.min(b)) / 20.0, f64::from(a.max(b)) / 20.0);
            let small: BTreeSet<usize> = low_confidence_set(&conf, lo).into_iter().collect();
            let large: BTreeSet<usize> = low_confidence_set(&conf, hi).into_iter().collect();
            prop_assert!(small.is_subset(&large));
            prop_assert!(conf.iter().enumerate().all(|(i, &c)| (c <= hi) == large.contains(&i)));
            Ok(())
        },
    ));
    Outcome::check(
        failures.is_empty(),
        if failures.is_empty() {
            "6 invariants x 1000 cases".into()
        } else {
            failures.join("; ")
        },
    )
}

fn tensor_case() -> impl Strategy<Value = (EmbeddingTensor, DebiasModel)> {
    (any::<bool>(), 1usize..5, 1usize..6, 1usize..5, 1usize..5)
        .prop_flat_map(|(nsc, n, c, a, b)| {
            let dims = if nsc { vec![n, a * b, c] } else { vec![n, c, a, b] };
            let len = dims.iter().product::<usize>();
            (
                Just((nsc, dims, c)),
                prop::collection::vec(-1e3f32..1e3, len),
                prop::collection::vec(any::<bool>(), c),
                prop::collection::vec(-10f32..10.0, c),
            )
        })
        .prop_map(|((nsc, dims, c), data, pick, fills)| {
            let layout = if nsc { TensorLayout::SequenceChannels } else { TensorLayout::ChannelsSpatial };
            let t = EmbeddingTensor::new(layout, dims, data).unwrap();
            let idx: Vec<usize> = (0..c).filter(|&j| pick[j]).collect();
            let values = idx.iter().map(|&j| fills[j]).collect();
            (t, DebiasModel::new(ImputeMode::LowConfidence, Some(0.7), c, idx, values, Provenance::default()).unwrap())
        })
}

fn brute_force_reduce(t: &EmbeddingTensor) -> Vec<f64> {
    let d = t.dims();
    let x = t.as_slice();
    let mut out = Vec::new();
    match t.layout() {
        TensorLayout::SequenceChannels => {
            for i in 0..d[0] {
                for ch in 0..d[2] {
                    let sum: f64 = (0..d[1]).map(|s| x[(i * d[1] + s) * d[2] + ch] as f64).sum();
                    out.push(sum / d[1] as f64);
                }
            }
        }
        TensorLayout::ChannelsSpatial => {
            for i in 0..d[0] {
                for ch in 0..d[1] {
                    let mut sum = 0.0;
                    for h in 0..d[2] {
                        for w in 0..d[3] {
                            sum += x[((i * d[1] + ch) * d[2] + h) * d[3] + w] as f64;
                        }
                    }
                    out.push(sum / (d[2] * d[3]) as f64);
                }
            }
        }
    }
    out
}

fn criterion_11() -> Outcome {
    let mut failures = Vec::new();
    if let Err(e) = run_property("reduce", tensor_case(), |(t, _)| {
        let got = reduce_to_2d(&t).unwrap();
        for (g, w) in got.as_slice().iter().zip(brute_force_reduce(&t)) {
            prop_assert!((*g as f64 - w).abs() <= 1e-6 * w.abs().max(1.0), "{} vs {}", g, w);
        }
        Ok(())
    }) {
        failures.push(e);
    }
    if let Err(e) = run_property("commute", tensor_case(), |(t, m)| {
        let a = reduce_to_2d(&apply_debias_tensor(&m, &t).unwrap()).unwrap();
        let b = apply_debias(&m, &reduce_to_2d(&t).unwrap()).unwrap();
        let same = a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
        prop_assert!(same);
        Ok(())
    }) {
        failures.push(e);
    }
    Outcome::check(
        failures.is_empty(),
        if failures.is_empty() {
            "reduce matches brute-force means to 1e-6; debias and reduce commute bit-exactly (1000 cases each)".into()
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_12() -> Outcome {
    let mut lines = Vec::new();
    let mut failed = 0;
    for &s in &SEEDS {
        let cfg = SynthConfig {
            rotation_span: Some(80),
            ..classification_config(s)
        };
        let d = gen_synthetic(&cfg).unwrap();
        let (zt, yt, zv, _) = split_halves(&d.embeddings, &d.attributes).unwrap();
        let sfid = fit_sfid(&zt, &yt, &zv, &default_sfid(s)).unwrap();
        let clip = fit_clipclip(&zt, &yt, &ClipClipParams { k: 50, ..ClipClipParams::default() }).unwrap();
        let ps = probe_accuracy(&apply_debias(&sfid, &d.embeddings).unwrap(), &d.attributes, s).unwrap();
        let pc = probe_accuracy(&apply_debias(&clip, &d.embeddings).unwrap(), &d.attributes, s).unwrap();
        if ps > pc {
            failed += 1;
        }
        lines.push(format!("{ps:.4}/{pc:.4}"));
    }
    let detail = format!("probe SFID/CLIP-clip at k=50, span 80: {} ({failed}/5 seeds SFID worse)", lines.join(" "));
    let verdict = match failed {
        0 => Verdict::Pass,
        1 => Verdict::Report,
        _ => Verdict::Fail,
    };
    Outcome { verdict, detail }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::check(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut emit = |n: usize, o: Outcome, secs: f64| {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Report => "REPORT",
            Verdict::Fail => "FAIL",
        };
        println!("criterion {n:>2} {tag} {} [{secs:.1}s]", o.detail);
        results.push((n, o, secs));
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = guarded(f);
        (o, t.elapsed().as_secs_f64())
    };

    if on(1) || on(2) {
        let t = Instant::now();
        let (c1, c2) = panic::catch_unwind(criteria_1_2).unwrap_or_else(|_| {
            (Outcome::check(false, "panicked".into()), Outcome::check(false, "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        if on(1) {
            emit(1, c1, secs);
        }
        if on(2) {
            emit(2, c2, secs);
        }
    }
    if on(3) || on(4) {
        let t = Instant::now();
        let (c3, c4) = panic::catch_unwind(criteria_3_4).unwrap_or_else(|_| {
            (Outcome::check(false, "panicked".into()), Outcome::check(false, "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        if on(3) {
            emit(3, c3, secs);
        }
        if on(4) {
            emit(4, c4, secs);
        }
    }
    let singles: [(usize, fn() -> Outcome); 8] = [
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    for (n, f) in singles {
        if on(n) {
            let (o, secs) = timed(&f);
            emit(n, o, secs);
        }
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.1.verdict == Verdict::Fail)
        .map(|r| r.0.to_string())
        .collect();
    let total: f64 = results.iter().map(|r| r.2).sum();
    println!("acceptance: {} criteria, {} failed{} in {total:.0}s", results.len(), failed.len(), if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) });
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
