//! Zero-shot classification and text-to-image retrieval by cosine similarity.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::embstore::EmbeddingMatrix;
use crate::error::{data_err, Error, Result};

/// Rows scaled to unit length, in `f64`.
fn unit_rows(m: &EmbeddingMatrix, what: &str) -> Result<Vec<Vec<f64>>> {
    m.rows()
        .enumerate()
        .map(|(i, r)| unit(r).ok_or_else(|| data_err!("{what} row {i} has zero norm")))
        .collect()
}

fn unit(r: &[f32]) -> Option<Vec<f64>> {
    let norm = r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    (norm > 0.0).then(|| r.iter().map(|&v| v as f64 / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(data_err!("vector lengths {} and {} differ", a.len(), b.len()));
    }
    match (unit(a), unit(b)) {
        (Some(x), Some(y)) => Ok(dot(&x, &y)),
        _ => Err(data_err!("cosine similarity of a zero vector")),
    }
}

fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.n_features() != b.n_features() {
        return Err(data_err!("embedding widths {} and {} differ", a.n_features(), b.n_features()));
    }
    Ok(())
}

/// Index of the most similar prototype for every image; ties to the lower class.
pub fn zero_shot_classify(images: &EmbeddingMatrix, prototypes: &EmbeddingMatrix) -> Result<Vec<usize>> {
    check_dims(images, prototypes)?;
    let protos = unit_rows(prototypes, "prototype")?;
    let imgs = unit_rows(images, "image")?;
    Ok(imgs
        .par_iter()
        .map(|x| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, p) in protos.iter().enumerate() {
                let s = dot(x, p);
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect())
}

/// Image gallery normalised once for repeated queries.
#[derive(Debug, Clone)]
pub struct Gallery {
    rows: Vec<Vec<f64>>,
}

fn by_score(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl Gallery {
    pub fn new(images: &EmbeddingMatrix) -> Result<Self> {
        Ok(Self {
            rows: unit_rows(images, "image")?,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Top `m` images by cosine similarity, descending, ties to the lower index.
    pub fn rank(&self, query: &[f32], m: usize) -> Result<Vec<(usize, f64)>> {
        let width = self.rows.first().map_or(0, Vec::len);
        if query.len() != width {
            return Err(data_err!("query width {} differs from image width {width}", query.len()));
        }
        if m > self.rows.len() {
            return Err(data_err!("cannot retrieve {m} of {} images", self.rows.len()));
        }
        let q = unit(query).ok_or_else(|| data_err!("query has zero norm"))?;
        let mut scored: Vec<(usize, f64)> = self.rows.iter().enumerate().map(|(i, r)| (i, dot(&q, r))).collect();
        if m == 0 {
            return Ok(Vec::new());
        }
        if m < scored.len() {
            scored.select_nth_unstable_by(m - 1, by_score);
            scored.truncate(m);
        }
        scored.sort_unstable_by(by_score);
        Ok(scored)
    }
}

pub fn retrieve(query: &[f32], images: &EmbeddingMatrix, m: usize) -> Result<Vec<usize>> {
    Ok(Gallery::new(images)?.rank(query, m)?.into_iter().map(|p| p.0).collect())
}

/// Ranks the gallery for every text row, in parallel over prompts.
pub fn retrieve_all(texts: &EmbeddingMatrix, images: &EmbeddingMatrix, m: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    check_dims(texts, images)?;
    let gallery = Gallery::new(images)?;
    let rows: Vec<&[f32]> = texts.rows().collect();
    rows.par_iter()
        .enumerate()
        .map(|(t, q)| gallery.rank(q, m).map_err(|e| data_err!("prompt {t}: {e}")))
        .collect()
}

/// `prompt_id<TAB>rank<TAB>image_id<TAB>score`, ranks starting at 1.
pub fn format_rankings(rankings: &[Vec<(usize, f64)>]) -> String {
    let mut out = String::from("prompt_id\trank\timage_id\tscore\n");
    for (t, list) in rankings.iter().enumerate() {
        for (r, (i, s)) in list.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{}\t{i}\t{s}", r + 1);
        }
    }
    out
}

pub fn write_rankings(rankings: &[Vec<(usize, f64)>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_rankings(rankings)).map_err(|e| Error::io(path, e))
}

/// Reads a ranking file back into per-prompt image lists.
pub fn parse_rankings(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut lists: Vec<Vec<(usize, usize)>> = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let num = |k: usize| -> Result<usize> {
            f.get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| data_err!("ranking line {}: bad field {k}", no + 1))
        };
        let (t, rank, img) = (num(0)?, num(1)?, num(2)?);
        if lists.len() <= t {
            lists.resize(t + 1, Vec::new());
        }
        lists[t].push((rank, img));
    }
    Ok(lists
        .into_iter()
        .map(|mut l| {
            l.sort_unstable();
            l.into_iter().map(|p| p.1).collect()
        })
        .collect())
}
