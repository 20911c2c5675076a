use rayon::prelude::*;

use crate::embstore::{AttributeTable, EmbeddingMatrix};
use crate::error::{config_err, Result};
use crate::forest::rank_descending;
use crate::sfid::{DebiasModel, ImputeMode, Provenance};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipClipParams {
    pub k: usize,
    pub bins: usize,
    /// `Zero` keeps the width, `Drop` removes the pruned columns.
    pub impute: ImputeMode,
}

impl Default for ClipClipParams {
    fn default() -> Self {
        Self {
            k: 60,
            bins: 64,
            impute: ImputeMode::Zero,
        }
    }
}

/// Equal-frequency bin of every value: `⌊r · bins / n⌋` where `r` is the
/// number of strictly smaller values, so tied values always share a bin.
pub fn equal_frequency_bins(values: &[f32], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut first = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && values[order[pos - 1]] != values[i] {
            first = pos;
        }
        out[i] = first * bins / n;
    }
    out
}

fn plug_in_mi(bins: &[usize], labels: &[usize], n_bins: usize, n_attr: usize) -> f64 {
    let n = bins.len() as f64;
    let mut joint = vec![0u32; n_bins * n_attr];
    let mut pb = vec![0u32; n_bins];
    let mut pa = vec![0u32; n_attr];
    for (&b, &a) in bins.iter().zip(labels) {
        joint[b * n_attr + a] += 1;
        pb[b] += 1;
        pa[a] += 1;
    }
    let mut mi = 0.0;
    for b in 0..n_bins {
        for a in 0..n_attr {
            let c = joint[b * n_attr + a] as f64;
            if c > 0.0 {
                mi += c / n * (c * n / (pb[b] as f64 * pa[a] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Per-feature plug-in mutual information (nats) between the binned feature
/// and the attribute.
pub fn mutual_info_features(z: &EmbeddingMatrix, y: &AttributeTable, bins: usize) -> Result<Vec<f64>> {
    y.check_pairing(z.n_samples())?;
    if bins < 2 {
        return Err(config_err!("need at least 2 bins, got {bins}"));
    }
    if z.n_samples() < bins {
        return Err(config_err!("{} samples cannot fill {bins} bins", z.n_samples()));
    }
    let n = z.n_samples();
    let cols = z.transposed();
    Ok(cols
        .par_chunks_exact(n)
        .map(|col| plug_in_mi(&equal_frequency_bins(col, bins), y.labels(), bins, y.n_attributes()))
        .collect())
}

/// Prunes the `k` features with the highest mutual information.
pub fn fit_clipclip(z: &EmbeddingMatrix, y: &AttributeTable, params: &ClipClipParams) -> Result<DebiasModel> {
    let c = z.n_features();
    if params.k >= c {
        return Err(config_err!("k={} must be smaller than the embedding width {c}", params.k));
    }
    if !matches!(params.impute, ImputeMode::Zero | ImputeMode::Drop) {
        return Err(config_err!("mutual-information pruning supports ZERO or DROP, not {}", params.impute));
    }
    let mi = mutual_info_features(z, y, params.bins)?;
    let mut indices = rank_descending(&mi);
    indices.truncate(params.k);
    let provenance = Provenance {
        method: "clipclip".into(),
        dataset_tag: z.source_tag.clone(),
        ..Provenance::default()
    };
    DebiasModel::new(params.impute, None, c, indices, vec![0.0; params.k], provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::sfid::apply_debias;
    use rand::Rng as _;

    #[test]
    fn perfect_binary_feature_has_ln2() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let data: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
        let z = EmbeddingMatrix::new(100, 1, data).unwrap();
        let y = AttributeTable::from_labels(labels).unwrap();
        let mi = mutual_info_features(&z, &y, 2).unwrap();
        assert!((mi[0] - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_is_zero() {
        let z = EmbeddingMatrix::new(10, 1, vec![3.0; 10]).unwrap();
        let y = AttributeTable::from_labels((0..10).map(|i| i % 2).collect()).unwrap();
        assert_eq!(mutual_info_features(&z, &y, 4).unwrap(), vec![0.0]);
    }

    #[test]
    fn independent_feature_is_small() {
        let mut rng = seed::rng(4, "test");
        let n = 10000;
        let data: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let z = EmbeddingMatrix::new(n, 1, data).unwrap();
        let y = AttributeTable::from_labels(labels).unwrap();
        assert!(mutual_info_features(&z, &y, 64).unwrap()[0] <= 0.02);
    }

    #[test]
    fn ties_share_a_bin() {
        assert_eq!(equal_frequency_bins(&[1.0, 1.0, 1.0, 2.0], 2), vec![0, 0, 0, 1]);
        assert_eq!(equal_frequency_bins(&[4.0, 3.0, 2.0, 1.0], 2), vec![1, 1, 0, 0]);
    }

    #[test]
    fn bad_bins() {
        let z = EmbeddingMatrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let y = AttributeTable::from_labels(vec![0, 1, 0]).unwrap();
        assert_eq!(mutual_info_features(&z, &y, 1).unwrap_err().class(), "ConfigError");
        assert_eq!(mutual_info_features(&z, &y, 4).unwrap_err().class(), "ConfigError");
    }

    #[test]
    fn clipclip_modes() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let data: Vec<f32> = labels.iter().flat_map(|&l| [0.3, l as f32, 0.7]).collect();
        let z = EmbeddingMatrix::new(40, 3, data).unwrap();
        let y = AttributeTable::from_labels(labels).unwrap();
        let params = ClipClipParams { k: 1, bins: 4, impute: ImputeMode::Drop };
        let m = fit_clipclip(&z, &y, &params).unwrap();
        assert_eq!(m.indices(), &[1]);
        let out = apply_debias(&m, &z).unwrap();
        assert_eq!(out.n_features(), 2);
        let zero = fit_clipclip(&z, &y, &ClipClipParams { impute: ImputeMode::Zero, ..params.clone() }).unwrap();
        let out = apply_debias(&zero, &z).unwrap();
        assert_eq!(out.n_features(), 3);
        assert!(out.rows().all(|r| r[1] == 0.0));
        assert_eq!(fit_clipclip(&z, &y, &ClipClipParams { k: 3, ..params }).unwrap_err().class(), "ConfigError");
    }
}
