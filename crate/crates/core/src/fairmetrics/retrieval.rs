use crate::error::{data_err, Result};

/// Ranked image lists for each prompt plus the attribute of every image.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    rankings: Vec<Vec<usize>>,
    image_attributes: Vec<usize>,
    n_attributes: usize,
    depth: usize,
}

impl RetrievalRun {
    pub fn new(rankings: Vec<Vec<usize>>, image_attributes: Vec<usize>, n_attributes: usize, depth: usize) -> Result<Self> {
        let n = image_attributes.len();
        if let Some(&a) = image_attributes.iter().find(|&&a| a >= n_attributes) {
            return Err(data_err!("image attribute {a} out of range for {n_attributes} values"));
        }
        let mut seen = vec![usize::MAX; n];
        for (t, list) in rankings.iter().enumerate() {
            if list.len() < depth {
                return Err(data_err!("prompt {t} ranks {} images, depth is {depth}", list.len()));
            }
            for &i in list {
                if i >= n {
                    return Err(data_err!("prompt {t} ranks image {i}, only {n} exist"));
                }
                if seen[i] == t {
                    return Err(data_err!("prompt {t} ranks image {i} twice"));
                }
                seen[i] = t;
            }
        }
        Ok(Self {
            rankings,
            image_attributes,
            n_attributes,
            depth,
        })
    }

    pub fn rankings(&self) -> &[Vec<usize>] {
        &self.rankings
    }

    pub fn image_attributes(&self) -> &[usize] {
        &self.image_attributes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Base proportions `p_a = N_a / N`.
    pub fn base_rates(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_attributes];
        self.image_attributes.iter().for_each(|&a| counts[a] += 1);
        let n = self.image_attributes.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Fraction of prompts whose ground-truth image is among the first `k`.
pub fn recall_at_k(run: &RetrievalRun, truth: &[usize], k: usize) -> Result<f64> {
    if truth.len() != run.rankings.len() {
        return Err(data_err!("{} prompts but {} ground-truth entries", run.rankings.len(), truth.len()));
    }
    if k == 0 {
        return Err(data_err!("K must be at least 1"));
    }
    if run.rankings.is_empty() {
        return Ok(0.0);
    }
    let hits = run
        .rankings
        .iter()
        .zip(truth)
        .filter(|(list, t)| list.iter().take(k).any(|i| i == *t))
        .count();
    Ok(hits as f64 / run.rankings.len() as f64)
}

/// Per-prompt `max_a ln(p̂_a / p_a)` over the top `depth` images.
pub fn skew_per_prompt(run: &RetrievalRun) -> Result<Vec<f64>> {
    let base = run.base_rates();
    if base.iter().any(|&p| p == 0.0) {
        return Err(data_err!("every attribute value needs at least one image"));
    }
    let m = run.depth as f64;
    Ok(run
        .rankings
        .iter()
        .map(|list| {
            let mut counts = vec![0usize; run.n_attributes];
            list[..run.depth].iter().for_each(|&i| counts[run.image_attributes[i]] += 1);
            counts
                .iter()
                .zip(&base)
                .map(|(&c, p)| (c as f64 / m / p).ln())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// Mean over prompts of the per-prompt skew; natural log.
pub fn skew_at_m(run: &RetrievalRun) -> Result<f64> {
    let per = skew_per_prompt(run)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
