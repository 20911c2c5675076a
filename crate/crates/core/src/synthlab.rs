//! Synthetic embeddings with planted bias and known ground truth.
//!
//! A sample with class `c` and attribute `a` is
//!
//! ```text
//! z = γ · e(c) + β · m · v(a) + σ · ε,     ε ~ N(0, I)
//! ```
//!
//! The expression strength `m` is 1 except for an ambiguous fraction of
//! samples, where it is drawn uniformly from `[0, 1)`. Those samples are the
//! ones an attribute classifier cannot label confidently.
//!
//! where the class directions `e(c)` are orthonormal and orthogonal to every
//! attribute direction `v(a)`. In the default axis-aligned mode `v(a)` is
//! supported exactly on the bias dimensions `B`; for two attributes
//! `v(1) = -v(0) = 1_B / √|B|`. The rotated mode mixes `v(a)` with a random
//! orthogonal matrix across a wider span of coordinates, which spreads the
//! bias over more dimensions than any top-k selection can cover one axis at
//! a time.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::embstore::{AttributeTable, EmbeddingMatrix};
use crate::error::{config_err, data_err, Result};
use crate::forest::{fit_forest, ForestParams};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub n_attributes: usize,
    pub bias_dims: Vec<usize>,
    /// β: length of the attribute shift.
    pub bias_strength: f64,
    /// γ: length of the class shift.
    pub class_strength: f64,
    /// σ: per-coordinate noise standard deviation.
    pub noise_std: f64,
    /// ρ: probability that a sample's attribute is the stereotype of its class
    /// (`class mod n_attributes`) rather than uniform.
    pub attr_class_correlation: f64,
    /// Fraction of samples with weakened attribute expression.
    pub ambiguous_fraction: f64,
    /// Number of coordinates the bias is mixed across in rotated mode; `None`
    /// keeps the bias axis-aligned on `bias_dims`.
    pub rotation_span: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            dim: 256,
            n_classes: 8,
            n_attributes: 2,
            bias_dims: (0..10).collect(),
            bias_strength: 5.0,
            class_strength: 4.0,
            noise_std: 1.0,
            attr_class_correlation: 0.7,
            ambiguous_fraction: 0.1,
            rotation_span: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.dim == 0 {
            return Err(config_err!("n_samples and dim must be positive"));
        }
        if self.n_attributes < 2 {
            return Err(config_err!("need at least two attribute values"));
        }
        if self.n_classes == 0 {
            return Err(config_err!("need at least one class"));
        }
        if self.bias_dims.is_empty() {
            return Err(config_err!("bias_dims must name at least one dimension"));
        }
        let mut sorted = self.bias_dims.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.bias_dims.len() || *sorted.last().unwrap() >= self.dim {
            return Err(config_err!(
                "bias_dims must be distinct indices below dim={}",
                self.dim
            ));
        }
        for (name, v) in [
            ("bias_strength", self.bias_strength),
            ("class_strength", self.class_strength),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(config_err!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.noise_std.is_finite() || self.noise_std <= 0.0 {
            return Err(config_err!("noise_std must be positive, got {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.attr_class_correlation) {
            return Err(config_err!("attr_class_correlation must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return Err(config_err!("ambiguous_fraction must lie in [0, 1]"));
        }
        let span = self.rotation_span.unwrap_or(self.bias_dims.len());
        if span < self.bias_dims.len() {
            return Err(config_err!("rotation_span must cover the bias dimensions"));
        }
        if self.dim < span + self.n_classes {
            return Err(config_err!(
                "dim={} cannot host {} orthogonal class directions next to {} bias coordinates",
                self.dim,
                self.n_classes,
                span
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub embeddings: EmbeddingMatrix,
    /// Attribute labels with the downstream class in `class_labels`.
    pub attributes: AttributeTable,
    /// Coordinates carrying the bias (the full rotation span in rotated mode).
    pub bias_dims: Vec<usize>,
    /// One unit vector per attribute value.
    pub attribute_directions: Vec<Vec<f64>>,
    /// One unit vector per class; rows of the zero-shot prototype matrix.
    pub class_directions: Vec<Vec<f64>>,
}

impl SynthData {
    pub fn class_prototypes(&self) -> EmbeddingMatrix {
        let rows: Vec<Vec<f32>> = self
            .class_directions
            .iter()
            .map(|d| d.iter().map(|&v| v as f32).collect())
            .collect();
        EmbeddingMatrix::from_rows(&rows).expect("class directions are finite")
    }

    pub fn class_labels(&self) -> &[usize] {
        self.attributes.class_labels().expect("synthetic tables carry classes")
    }
}

fn gaussian_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Gram-Schmidt `v` against an orthonormal `basis` (two passes for stability).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
}

/// Embeds `local` (indexed like `coords`) into a `dim`-vector.
fn scatter(dim: usize, coords: &[usize], local: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (&c, &v) in coords.iter().zip(local) {
        out[c] = v;
    }
    out
}

/// Random rotation of `v` within the coordinates `span` (Haar measure via
/// Gram-Schmidt of a Gaussian matrix).
fn random_rotation(rng: &mut Rng, span: &[usize], vs: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let m = span.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    while q.len() < m {
        let mut col = gaussian_vec(rng, m);
        orthogonalize(&mut col, &q);
        if dot(&col, &col) > 1e-12 {
            normalize(&mut col);
            q.push(col);
        }
    }
    vs.iter()
        .map(|v| {
            let local: Vec<f64> = span.iter().map(|&c| v[c]).collect();
            // rotated[r] = Σ_k q[k][r] · local[k]
            let rotated: Vec<f64> = (0..m)
                .map(|r| q.iter().zip(&local).map(|(qk, lk)| qk[r] * lk).sum())
                .collect();
            scatter(dim, span, &rotated)
        })
        .collect()
}

fn attribute_directions(cfg: &SynthConfig, rng: &mut Rng) -> Vec<Vec<f64>> {
    let b = &cfg.bias_dims;
    if cfg.n_attributes == 2 {
        let u = 1.0 / (b.len() as f64).sqrt();
        let plus = scatter(cfg.dim, b, &vec![u; b.len()]);
        let minus: Vec<f64> = plus.iter().map(|v| -v).collect();
        return vec![minus, plus];
    }
    // Several attributes: centred Gaussian patterns on B, one per value.
    let raw: Vec<Vec<f64>> = (0..cfg.n_attributes).map(|_| gaussian_vec(rng, b.len())).collect();
    let mean: Vec<f64> = (0..b.len())
        .map(|k| raw.iter().map(|r| r[k]).sum::<f64>() / raw.len() as f64)
        .collect();
    raw.into_iter()
        .map(|mut r| {
            r.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
            if dot(&r, &r) < 1e-12 {
                r[0] = 1.0;
            }
            normalize(&mut r);
            scatter(cfg.dim, b, &r)
        })
        .collect()
}

fn expression(rng: &mut Rng, ambiguous_fraction: f64) -> f64 {
    if rng.random_bool(ambiguous_fraction) {
        rng.random::<f64>()
    } else {
        1.0
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth.structure");
    let dim = cfg.dim;

    let mut bias_span = cfg.bias_dims.clone();
    let mut attr_dirs = attribute_directions(cfg, &mut rng);
    if let Some(span) = cfg.rotation_span {
        let free: Vec<usize> = (0..dim).filter(|d| !cfg.bias_dims.contains(d)).collect();
        bias_span.extend(free.choose_multiple(&mut rng, span - cfg.bias_dims.len()));
        bias_span.sort_unstable();
        attr_dirs = random_rotation(&mut rng, &bias_span, &attr_dirs, dim);
    }

    let class_coords: Vec<usize> = (0..dim).filter(|d| bias_span.binary_search(d).is_err()).collect();
    let mut class_dirs: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    while class_dirs.len() < cfg.n_classes {
        let mut local = gaussian_vec(&mut rng, class_coords.len());
        let basis: Vec<Vec<f64>> = class_dirs
            .iter()
            .map(|d| class_coords.iter().map(|&c| d[c]).collect())
            .collect();
        orthogonalize(&mut local, &basis);
        if dot(&local, &local) > 1e-12 {
            normalize(&mut local);
            class_dirs.push(scatter(dim, &class_coords, &local));
        }
    }

    let mut rng = seed::rng(cfg.seed, "synth.samples");
    let mut data = Vec::with_capacity(cfg.n_samples * dim);
    let mut attrs = Vec::with_capacity(cfg.n_samples);
    let mut classes = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let class = rng.random_range(0..cfg.n_classes);
        let attr = if rng.random_bool(cfg.attr_class_correlation) {
            class % cfg.n_attributes
        } else {
            rng.random_range(0..cfg.n_attributes)
        };
        let (e, v) = (&class_dirs[class], &attr_dirs[attr]);
        let shift = cfg.bias_strength * expression(&mut rng, cfg.ambiguous_fraction);
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let x = cfg.class_strength * e[j] + shift * v[j] + cfg.noise_std * noise;
            data.push(x as f32);
        }
        attrs.push(attr);
        classes.push(class);
    }

    let names = (0..cfg.n_attributes).map(|a| format!("attr{a}")).collect();
    let class_names = (0..cfg.n_classes).map(|c| format!("class{c}")).collect();
    let attributes = AttributeTable::with_vocabulary(attrs, names)?.with_classes(classes, Some(class_names))?;
    let embeddings = EmbeddingMatrix::new(cfg.n_samples, dim, data)?.with_source_tag(format!("synth-seed{}", cfg.seed));
    Ok(SynthData {
        embeddings,
        attributes,
        bias_dims: bias_span,
        attribute_directions: attr_dirs,
        class_directions: class_dirs,
    })
}

/// Cross-validated accuracy of a fresh default forest predicting `y` from `z`:
/// the bias probe.
pub fn probe_accuracy(z: &EmbeddingMatrix, y: &AttributeTable, seed: u64) -> Result<f64> {
    probe_accuracy_with(z, y, 5, &ForestParams::default().with_seed(seed))
}

pub fn probe_accuracy_with(z: &EmbeddingMatrix, y: &AttributeTable, folds: usize, forest: &ForestParams) -> Result<f64> {
    y.check_pairing(z.n_samples())?;
    if y.n_present() < 2 {
        return Err(data_err!("probe needs at least two attribute values present"));
    }
    let n = z.n_samples();
    if folds < 2 || n < folds {
        return Err(config_err!("cannot split {n} samples into {folds} folds"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(forest.seed, "probe.folds");
    order.shuffle(&mut rng);
    let mut correct = 0usize;
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let test = &order[lo..hi];
        let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        let params = ForestParams {
            seed: seed::derive_indexed(forest.seed, "probe.fold", f as u64),
            ..forest.clone()
        };
        let model = fit_forest(&z.select_rows(&train)?, &y.select_rows(&train)?, &params)?;
        let pred = model.predict(&z.select_rows(test)?)?;
        correct += test
            .iter()
            .zip(&pred)
            .filter(|(&i, &p)| y.labels()[i] == p)
            .count();
    }
    Ok(correct as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalConfig {
    /// Query images, one neutral caption each.
    pub n_images: usize,
    /// Size of each labelled pool (image and text) used to fit debiasers.
    pub n_debias: usize,
    pub dim: usize,
    pub bias_dims: Vec<usize>,
    /// Attribute shift planted in image embeddings.
    pub image_bias: f64,
    /// Stereotype shift carried by caption embeddings.
    pub text_bias: f64,
    /// Per-coordinate standard deviation of the shared content vector.
    pub content_std: f64,
    pub noise_std: f64,
    /// Fraction of images and captions with weakened attribute expression.
    pub ambiguous_fraction: f64,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_images: 1000,
            n_debias: 4000,
            dim: 256,
            bias_dims: (0..10).collect(),
            image_bias: 5.0,
            text_bias: 5.0,
            content_std: 1.0,
            noise_std: 1.0,
            ambiguous_fraction: 0.1,
            seed: 0,
        }
    }
}

impl RetrievalConfig {
    /// Sets both bias strengths at once.
    pub fn with_bias(mut self, strength: f64) -> Self {
        self.image_bias = strength;
        self.text_bias = strength;
        self
    }
}

/// Paired caption/image embeddings for text-to-image retrieval.
///
/// Caption `i` describes image `i`: both share a content vector drawn on the
/// non-bias coordinates. Images carry `image_bias · v(attribute)` on the bias
/// coordinates; captions are gender-neutral in wording but carry a stereotype
/// shift `text_bias · v(s)` for a random stereotype `s`, which is what skews
/// retrieval. Labelled pools drawn from the same generator serve as
/// debiasing data for each modality.
#[derive(Debug, Clone)]
pub struct RetrievalScenario {
    pub texts: EmbeddingMatrix,
    pub images: EmbeddingMatrix,
    pub image_attributes: AttributeTable,
    /// Ground-truth image index for every caption.
    pub truth: Vec<usize>,
    pub debias_images: EmbeddingMatrix,
    pub debias_image_attributes: AttributeTable,
    pub debias_texts: EmbeddingMatrix,
    pub debias_text_attributes: AttributeTable,
    pub bias_dims: Vec<usize>,
}

pub fn make_retrieval_scenario(cfg: &RetrievalConfig) -> Result<RetrievalScenario> {
    let probe = SynthConfig {
        n_samples: 1,
        dim: cfg.dim,
        n_classes: 1,
        n_attributes: 2,
        bias_dims: cfg.bias_dims.clone(),
        bias_strength: cfg.image_bias,
        class_strength: 0.0,
        noise_std: cfg.noise_std,
        attr_class_correlation: 0.0,
        ambiguous_fraction: cfg.ambiguous_fraction,
        rotation_span: None,
        seed: cfg.seed,
    };
    probe.validate()?;
    for (name, v) in [("text_bias", cfg.text_bias), ("content_std", cfg.content_std)] {
        if !v.is_finite() || v < 0.0 {
            return Err(config_err!("{name} must be finite and non-negative"));
        }
    }
    if cfg.n_images == 0 || cfg.n_debias < 2 {
        return Err(config_err!("n_images must be positive and n_debias at least 2"));
    }
    let dirs = attribute_directions(&probe, &mut seed::rng(cfg.seed, "retrieval.structure"));
    let content_coords: Vec<usize> = (0..cfg.dim).filter(|d| !cfg.bias_dims.contains(d)).collect();
    let mut rng = seed::rng(cfg.seed, "retrieval.samples");

    // One (content, attribute) draw rendered with a given bias shift.
    let render = |rng: &mut Rng, content: &[f64], group: usize, strength: f64, out: &mut Vec<f32>| {
        let shift = strength * expression(rng, cfg.ambiguous_fraction);
        let mut full = vec![0.0; cfg.dim];
        for (&c, &v) in content_coords.iter().zip(content) {
            full[c] = v;
        }
        for (j, x) in full.into_iter().enumerate() {
            let noise: f64 = StandardNormal.sample(rng);
            out.push((x + shift * dirs[group][j] + cfg.noise_std * noise) as f32);
        }
    };
    let draw_content = |rng: &mut Rng| -> Vec<f64> {
        gaussian_vec(rng, content_coords.len()).into_iter().map(|v| v * cfg.content_std).collect()
    };

    let (mut images, mut texts, mut attrs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.n_images {
        let content = draw_content(&mut rng);
        let attr = rng.random_range(0..2);
        let stereotype = rng.random_range(0..2);
        render(&mut rng, &content, attr, cfg.image_bias, &mut images);
        render(&mut rng, &content, stereotype, cfg.text_bias, &mut texts);
        attrs.push(attr);
    }
    let (mut pool_img, mut pool_img_attr, mut pool_txt, mut pool_txt_attr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.n_debias {
        let content = draw_content(&mut rng);
        let attr = rng.random_range(0..2);
        render(&mut rng, &content, attr, cfg.image_bias, &mut pool_img);
        pool_img_attr.push(attr);
        let content = draw_content(&mut rng);
        let attr = rng.random_range(0..2);
        render(&mut rng, &content, attr, cfg.text_bias, &mut pool_txt);
        pool_txt_attr.push(attr);
    }
    let names = || vec!["attr0".to_string(), "attr1".to_string()];
    Ok(RetrievalScenario {
        texts: EmbeddingMatrix::new(cfg.n_images, cfg.dim, texts)?,
        images: EmbeddingMatrix::new(cfg.n_images, cfg.dim, images)?,
        image_attributes: AttributeTable::with_vocabulary(attrs, names())?,
        truth: (0..cfg.n_images).collect(),
        debias_images: EmbeddingMatrix::new(cfg.n_debias, cfg.dim, pool_img)?,
        debias_image_attributes: AttributeTable::with_vocabulary(pool_img_attr, names())?,
        debias_texts: EmbeddingMatrix::new(cfg.n_debias, cfg.dim, pool_txt)?,
        debias_text_attributes: AttributeTable::with_vocabulary(pool_txt_attr, names())?,
        bias_dims: cfg.bias_dims.clone(),
    })
}

/// Splits a labelled pool into (train, validation) halves by row parity.
pub fn split_halves(z: &EmbeddingMatrix, y: &AttributeTable) -> Result<(EmbeddingMatrix, AttributeTable, EmbeddingMatrix, AttributeTable)> {
    y.check_pairing(z.n_samples())?;
    let even: Vec<usize> = (0..z.n_samples()).step_by(2).collect();
    let odd: Vec<usize> = (1..z.n_samples()).step_by(2).collect();
    Ok((z.select_rows(&even)?, y.select_rows(&even)?, z.select_rows(&odd)?, y.select_rows(&odd)?))
}
