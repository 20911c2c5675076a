//! Gini random forest for sensitive-attribute prediction.
//!
//! Trees are grown on bootstrap resamples with a random subset of features
//! examined at every node. Split thresholds are midpoints between consecutive
//! distinct values; rows with `x <= threshold` go left. Feature importance is
//! the mean decrease in Gini impurity (weighted by node size), normalised per
//! tree, averaged over trees and normalised again.
//!
//! Each tree draws from its own stream derived from `(seed, tree index)`, so
//! the model does not depend on how trees are scheduled across threads.

mod io;
mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{read_forest, write_forest, FOREST_MAGIC, FOREST_VERSION};
pub use tree::Tree;

use crate::embstore::{AttributeTable, EmbeddingMatrix};
use crate::error::{config_err, data_err, Result};
use crate::seed;

/// How many features are examined when searching a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// ⌊√C⌋, at least one.
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubset {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            FeatureSubset::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeatureSubset::All => n_features,
            FeatureSubset::Count(m) => m.min(n_features),
        };
        m.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeatureSubset,
    /// Resample rows with replacement for every tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: FeatureSubset::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(config_err!("n_trees must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(config_err!("min_samples_leaf must be at least 1"));
        }
        if let FeatureSubset::Count(0) = self.features_per_split {
            return Err(config_err!("features_per_split must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub(crate) trees: Vec<Tree>,
    pub(crate) n_classes: usize,
    pub(crate) n_features: usize,
    pub(crate) importances: Vec<f64>,
    pub(crate) oob_accuracy: Option<f64>,
    pub(crate) seed: u64,
}

/// Row-major N×A class-probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    n_classes: usize,
    data: Vec<f64>,
}

impl Probabilities {
    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_classes)
    }

    /// Confidence of each row: the largest class probability.
    pub fn confidence(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Arg-max class of each row, ties to the lower class index.
    pub fn predicted(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn fit_forest(z: &EmbeddingMatrix, y: &AttributeTable, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    y.check_pairing(z.n_samples())?;
    let n = z.n_samples();
    if n < 2 {
        return Err(data_err!("need at least 2 samples to fit a forest, got {n}"));
    }
    if y.n_present() < 2 {
        return Err(data_err!("attribute labels contain a single class; nothing to predict"));
    }
    let c = z.n_features();
    let n_classes = y.n_attributes();
    let mut cols = z.transposed();
    // -0.0 and +0.0 compare equal; give them one bit pattern so sorting groups them.
    cols.iter_mut().for_each(|v| *v += 0.0);
    let labels: Vec<u32> = y.labels().iter().map(|&l| l as u32).collect();
    let spec = tree::TreeSpec {
        cols: &cols,
        n_rows: n,
        n_features: c,
        labels: &labels,
        n_classes,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        features_per_split: params.features_per_split.resolve(c),
    };

    let fitted: Vec<(tree::FittedTree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng_indexed(params.seed, "forest.tree", t as u64);
            let mut in_bag = vec![!params.bootstrap; n];
            let mut samples: Vec<u32> = if params.bootstrap {
                use rand::Rng as _;
                (0..n)
                    .map(|_| {
                        let s = rng.random_range(0..n);
                        in_bag[s] = true;
                        s as u32
                    })
                    .collect()
            } else {
                (0..n as u32).collect()
            };
            (tree::grow(&spec, &mut samples, rng), in_bag)
        })
        .collect();

    let mut importances = vec![0.0; c];
    for (ft, _) in &fitted {
        let total: f64 = ft.importance.iter().sum();
        if total > 0.0 {
            for (acc, v) in importances.iter_mut().zip(&ft.importance) {
                *acc += v / total;
            }
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    } else {
        // No tree found a split (every feature constant): nothing distinguishes
        // the features, so spread the mass evenly to keep the sum at one.
        importances.iter_mut().for_each(|v| *v = 1.0 / c as f64);
    }

    let mut votes = vec![0.0f64; n * n_classes];
    let mut has_vote = vec![false; n];
    for (ft, in_bag) in &fitted {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            ft.tree
                .accumulate_proba(z.row(i), &mut votes[i * n_classes..(i + 1) * n_classes]);
            has_vote[i] = true;
        }
    }
    let voted = has_vote.iter().filter(|&&v| v).count();
    let oob_accuracy = (voted > 0).then(|| {
        let correct = (0..n)
            .filter(|&i| has_vote[i] && argmax(&votes[i * n_classes..(i + 1) * n_classes]) == y.labels()[i])
            .count();
        correct as f64 / voted as f64
    });

    Ok(ForestModel {
        trees: fitted.into_iter().map(|(ft, _)| ft.tree).collect(),
        n_classes,
        n_features: c,
        importances,
        oob_accuracy,
        seed: params.seed,
    })
}

impl ForestModel {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Out-of-bag accuracy; `None` when bootstrap was disabled.
    pub fn oob_accuracy(&self) -> Option<f64> {
        self.oob_accuracy
    }

    pub fn feature_importance(&self) -> &[f64] {
        &self.importances
    }

    /// Feature indices sorted by decreasing importance, ties to the lower index.
    pub fn ranked_features(&self) -> Vec<usize> {
        rank_descending(&self.importances)
    }

    pub fn predict_proba(&self, z: &EmbeddingMatrix) -> Result<Probabilities> {
        if z.n_features() != self.n_features {
            return Err(data_err!(
                "forest was trained on {} features, input has {}",
                self.n_features,
                z.n_features()
            ));
        }
        let a = self.n_classes;
        let scale = 1.0 / self.trees.len() as f64;
        let mut data = vec![0.0; z.n_samples() * a];
        data.par_chunks_mut(a).enumerate().for_each(|(i, acc)| {
            let row = z.row(i);
            for t in &self.trees {
                t.accumulate_proba(row, acc);
            }
            acc.iter_mut().for_each(|v| *v *= scale);
        });
        Ok(Probabilities { n_classes: a, data })
    }

    pub fn predict(&self, z: &EmbeddingMatrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(z)?.predicted())
    }

    pub fn confidence(&self, z: &EmbeddingMatrix) -> Result<Vec<f64>> {
        Ok(self.predict_proba(z)?.confidence())
    }
}

pub fn feature_importance(model: &ForestModel) -> Vec<f64> {
    model.importances.clone()
}

pub fn predict_proba(model: &ForestModel, z: &EmbeddingMatrix) -> Result<Probabilities> {
    model.predict_proba(z)
}

pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Feature 0 equals the label; the rest is standard normal noise.
    fn label_in_column(n: usize, c: usize, s: u64) -> (EmbeddingMatrix, AttributeTable) {
        let mut rng = seed::rng(s, "test.data");
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut data = Vec::with_capacity(n * c);
        for &l in &labels {
            data.push(l as f32);
            for _ in 1..c {
                let v: f64 = StandardNormal.sample(&mut rng);
                data.push(v as f32);
            }
        }
        (
            EmbeddingMatrix::new(n, c, data).unwrap(),
            AttributeTable::from_labels(labels).unwrap(),
        )
    }

    fn small() -> ForestParams {
        ForestParams::default().with_trees(20).with_seed(7)
    }

    #[test]
    fn predictive_feature_ranks_first() {
        let (z, y) = label_in_column(300, 10, 1);
        let m = fit_forest(&z, &y, &small()).unwrap();
        let imp = m.feature_importance();
        assert_eq!(m.ranked_features()[0], 0);
        let mut others: Vec<f64> = imp[1..].to_vec();
        others.sort_by(f64::total_cmp);
        let median = others[others.len() / 2];
        assert!(imp[0] > 10.0 * median, "imp0={} median={median}", imp[0]);
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_class_and_tiny_inputs_rejected() {
        let z = EmbeddingMatrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let y = AttributeTable::with_vocabulary(vec![1, 1, 1], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(fit_forest(&z, &y, &small()).unwrap_err().class(), "DataError");
        let z = EmbeddingMatrix::new(1, 1, vec![0.0]).unwrap();
        let y = AttributeTable::with_vocabulary(vec![0], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(fit_forest(&z, &y, &small()).unwrap_err().class(), "DataError");
    }

    #[test]
    fn bad_params_are_config_errors() {
        let (z, y) = label_in_column(20, 3, 1);
        let p = ForestParams { n_trees: 0, ..small() };
        assert_eq!(fit_forest(&z, &y, &p).unwrap_err().class(), "ConfigError");
        let p = ForestParams { min_samples_leaf: 0, ..small() };
        assert_eq!(fit_forest(&z, &y, &p).unwrap_err().class(), "ConfigError");
    }

    #[test]
    fn same_seed_same_model() {
        let (z, y) = label_in_column(200, 8, 2);
        let a = fit_forest(&z, &y, &small()).unwrap();
        let b = fit_forest(&z, &y, &small()).unwrap();
        let bits = |m: &ForestModel| m.importances.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(io::to_bytes(&a), io::to_bytes(&b));
    }

    #[test]
    fn pure_single_tree_gives_one_hot_on_training_rows() {
        let (z, y) = label_in_column(50, 4, 3);
        let p = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..small()
        };
        let m = fit_forest(&z, &y, &p).unwrap();
        assert_eq!(m.oob_accuracy(), None);
        let proba = m.predict_proba(&z).unwrap();
        for (i, row) in proba.rows().enumerate() {
            let mut expect = [0.0, 0.0];
            expect[y.labels()[i]] = 1.0;
            assert_eq!(row, expect);
        }
    }

    #[test]
    fn three_class_rows_sum_to_one() {
        let mut rng = seed::rng(4, "test");
        let n = 150;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let data: Vec<f32> = labels
            .iter()
            .flat_map(|&l| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let other: f64 = StandardNormal.sample(&mut rng);
                [l as f32 + noise as f32, other as f32]
            })
            .collect();
        let z = EmbeddingMatrix::new(n, 2, data).unwrap();
        let y = AttributeTable::from_labels(labels).unwrap();
        let m = fit_forest(&z, &y, &small()).unwrap();
        let proba = m.predict_proba(&z).unwrap();
        assert_eq!(proba.n_classes(), 3);
        for row in proba.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unused_feature_has_zero_importance() {
        // Column 1 is constant, so it can never be split on.
        let n = 40;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data: Vec<f32> = (0..n).flat_map(|i| [i as f32, 3.0]).collect();
        let z = EmbeddingMatrix::new(n, 2, data).unwrap();
        let m = fit_forest(&z, &AttributeTable::from_labels(labels).unwrap(), &small()).unwrap();
        assert_eq!(m.feature_importance()[1], 0.0);
        assert!(m.trees().iter().all(|t| t.split_features().all(|f| f == 0)));
    }

    #[test]
    fn all_constant_features_spread_importance() {
        let z = EmbeddingMatrix::new(4, 2, vec![1.0; 8]).unwrap();
        let y = AttributeTable::from_labels(vec![0, 1, 0, 1]).unwrap();
        let m = fit_forest(&z, &y, &small()).unwrap();
        assert_eq!(m.feature_importance(), [0.5, 0.5]);
        assert!(m.trees().iter().all(|t| t.n_nodes() == 1));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let (z, y) = label_in_column(30, 3, 5);
        let m = fit_forest(&z, &y, &small()).unwrap();
        let other = EmbeddingMatrix::new(1, 4, vec![0.0; 4]).unwrap();
        assert_eq!(m.predict_proba(&other).unwrap_err().class(), "DataError");
    }

    #[test]
    fn max_depth_and_min_leaf_respected() {
        let (z, y) = label_in_column(200, 6, 6);
        let p = ForestParams { max_depth: Some(2), min_samples_leaf: 5, ..small() };
        let m = fit_forest(&z, &y, &p).unwrap();
        for t in m.trees() {
            assert!(t.depth() <= 2);
            for id in 0..t.n_nodes() {
                let total: u32 = t.node_counts(id).iter().sum();
                assert!(total >= 5);
            }
        }
    }

    #[test]
    fn separable_margin_oob_is_high() {
        let mut rng = seed::rng(8, "test");
        let n = 400;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data: Vec<f32> = labels
            .iter()
            .flat_map(|&l| {
                let u: f64 = rand::Rng::random_range(&mut rng, 0.0..4.0);
                let x = if l == 1 { 1.0 + u } else { -1.0 - u };
                let n1: f64 = StandardNormal.sample(&mut rng);
                let n2: f64 = StandardNormal.sample(&mut rng);
                [x as f32, n1 as f32, n2 as f32]
            })
            .collect();
        let z = EmbeddingMatrix::new(n, 3, data).unwrap();
        let m = fit_forest(&z, &AttributeTable::from_labels(labels).unwrap(), &small()).unwrap();
        assert!(m.oob_accuracy().unwrap() >= 0.95, "{:?}", m.oob_accuracy());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn proba_rows_normalised_and_confidence_bounded(
            s in 0u64..1000, n in 6usize..40, c in 1usize..5, a in 2usize..4,
        ) {
            let mut rng = seed::rng(s, "prop");
            let labels: Vec<usize> = (0..n).map(|i| i % a).collect();
            let data: Vec<f32> = (0..n * c).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); v as f32 }).collect();
            let z = EmbeddingMatrix::new(n, c, data).unwrap();
            let y = AttributeTable::from_labels(labels).unwrap();
            let m = fit_forest(&z, &y, &ForestParams::default().with_trees(5).with_seed(s)).unwrap();
            let proba = m.predict_proba(&z).unwrap();
            for row in proba.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                let conf = row.iter().copied().fold(0.0, f64::max);
                prop_assert!(conf >= 1.0 / a as f64 - 1e-12 && conf <= 1.0 + 1e-12);
            }
            prop_assert!(m.trees().iter().all(|t| t.split_features().all(|f| f < c)));
            prop_assert!(m.feature_importance().iter().all(|&v| v >= 0.0));
        }
    }
}
