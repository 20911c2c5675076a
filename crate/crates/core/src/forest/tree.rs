use rand::Rng as _;

use crate::seed::Rng;

pub(crate) const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
}

/// One fitted decision tree. `counts` holds `n_classes` training counts per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) counts: Vec<u32>,
    pub(crate) n_classes: usize,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, id: usize) -> usize {
            let n = t.nodes[id];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.feature != LEAF)
            .map(|n| n.feature as usize)
    }

    #[inline]
    pub(crate) fn leaf_for(&self, row: &[f32]) -> usize {
        let mut id = 0usize;
        loop {
            let n = &self.nodes[id];
            if n.feature == LEAF {
                return id;
            }
            id = if f64::from(row[n.feature as usize]) <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub(crate) fn node_counts(&self, id: usize) -> &[u32] {
        &self.counts[id * self.n_classes..(id + 1) * self.n_classes]
    }

    /// Adds this tree's leaf class frequencies for `row` into `acc`.
    #[inline]
    pub(crate) fn accumulate_proba(&self, row: &[f32], acc: &mut [f64]) {
        let counts = self.node_counts(self.leaf_for(row));
        let total: u32 = counts.iter().sum();
        let total = f64::from(total);
        for (a, &c) in acc.iter_mut().zip(counts) {
            *a += f64::from(c) / total;
        }
    }
}

pub(crate) struct TreeSpec<'a> {
    /// Column-major training data, `cols[f * n_rows + i]`.
    pub cols: &'a [f32],
    pub n_rows: usize,
    pub n_features: usize,
    pub labels: &'a [u32],
    pub n_classes: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

pub(crate) struct FittedTree {
    pub tree: Tree,
    /// Weighted impurity decrease per feature, not yet normalised.
    pub importance: Vec<f64>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    spec: &'a TreeSpec<'a>,
    rng: Rng,
    feature_order: Vec<u32>,
    buf: Vec<u64>,
    scratch: Vec<u64>,
    left: Vec<u32>,
    right: Vec<u32>,
    importance: Vec<f64>,
}

/// Grows one tree on `samples` (row indices, duplicates allowed for bootstrap).
pub(crate) fn grow(spec: &TreeSpec<'_>, samples: &mut [u32], rng: Rng) -> FittedTree {
    let a = spec.n_classes;
    let mut b = Builder {
        spec,
        rng,
        feature_order: (0..spec.n_features as u32).collect(),
        buf: Vec::with_capacity(samples.len()),
        scratch: Vec::with_capacity(samples.len()),
        left: vec![0; a],
        right: vec![0; a],
        importance: vec![0.0; spec.n_features],
    };
    let mut tree = Tree {
        nodes: Vec::new(),
        counts: Vec::new(),
        n_classes: a,
    };
    // (node id, lo, hi, depth)
    let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
    push_node(&mut tree, spec, &samples[..]);
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let range = &mut samples[lo..hi];
        let n = range.len();
        let counts = tree.node_counts(id).to_vec();
        let pure = counts.iter().any(|&c| c as usize == n);
        let depth_capped = spec.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * spec.min_samples_leaf {
            continue;
        }
        let Some(split) = b.best_split(range, &counts) else {
            continue;
        };
        let sq_parent: f64 = counts.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
        let gain = split.score - sq_parent / n as f64;
        b.importance[split.feature] += gain.max(0.0);

        let col = &spec.cols[split.feature * spec.n_rows..(split.feature + 1) * spec.n_rows];
        let mut mid = 0;
        for i in 0..n {
            if f64::from(col[range[i] as usize]) <= split.threshold {
                range.swap(i, mid);
                mid += 1;
            }
        }
        let left_id = push_node(&mut tree, spec, &range[..mid]);
        let right_id = push_node(&mut tree, spec, &range[mid..]);
        tree.nodes[id] = Node {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: left_id as u32,
            right: right_id as u32,
        };
        stack.push((right_id, lo + mid, hi, depth + 1));
        stack.push((left_id, lo, lo + mid, depth + 1));
    }
    FittedTree {
        tree,
        importance: b.importance,
    }
}

fn push_node(tree: &mut Tree, spec: &TreeSpec<'_>, samples: &[u32]) -> usize {
    let id = tree.nodes.len();
    tree.nodes.push(Node {
        feature: LEAF,
        threshold: 0.0,
        left: LEAF,
        right: LEAF,
    });
    let start = tree.counts.len();
    tree.counts.resize(start + spec.n_classes, 0);
    for &s in samples {
        tree.counts[start + spec.labels[s as usize] as usize] += 1;
    }
    id
}

impl Builder<'_> {
    /// Examines features in a fresh random order until `features_per_split`
    /// non-constant ones have been scored. Ties go to the lowest feature
    /// index, then the lowest threshold.
    fn best_split(&mut self, range: &[u32], parent: &[u32]) -> Option<Split> {
        let spec = self.spec;
        let n = range.len();
        let min_leaf = spec.min_samples_leaf;
        let mut best: Option<Split> = None;
        let mut scored = 0;
        let c = self.feature_order.len();
        let sq_parent: u64 = parent.iter().map(|&x| u64::from(x) * u64::from(x)).sum();

        for t in 0..c {
            if scored == spec.features_per_split {
                break;
            }
            let j = self.rng.random_range(t..c);
            self.feature_order.swap(t, j);
            let f = self.feature_order[t] as usize;
            let col = &spec.cols[f * spec.n_rows..(f + 1) * spec.n_rows];

            self.buf.clear();
            let (mut lo_k, mut hi_k) = (u32::MAX, 0u32);
            for &s in range {
                let k = order_key(col[s as usize]);
                lo_k = lo_k.min(k);
                hi_k = hi_k.max(k);
                self.buf.push(u64::from(k) << 32 | u64::from(spec.labels[s as usize]));
            }
            if lo_k == hi_k {
                continue;
            }
            scored += 1;
            sort_by_key(&mut self.buf, &mut self.scratch);

            self.left.iter_mut().for_each(|x| *x = 0);
            self.right.copy_from_slice(parent);
            let (mut sq_l, mut sq_r) = (0u64, sq_parent);
            for i in 0..n - 1 {
                let y = (self.buf[i] & 0xffff_ffff) as usize;
                sq_l += 2 * u64::from(self.left[y]) + 1;
                self.left[y] += 1;
                sq_r -= 2 * u64::from(self.right[y]) - 1;
                self.right[y] -= 1;
                let (n_l, n_r) = (i + 1, n - i - 1);
                let (k, next) = ((self.buf[i] >> 32) as u32, (self.buf[i + 1] >> 32) as u32);
                if n_l < min_leaf || n_r < min_leaf || k == next {
                    continue;
                }
                let score = sq_l as f64 / n_l as f64 + sq_r as f64 / n_r as f64;
                let better = match &best {
                    None => true,
                    Some(b) => score > b.score || (score == b.score && f < b.feature),
                };
                if better {
                    best = Some(Split {
                        feature: f,
                        threshold: (f64::from(from_order_key(k)) + f64::from(from_order_key(next))) * 0.5,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Maps `f32` to `u32` so that integer order matches `total_cmp` order.
#[inline]
fn order_key(v: f32) -> u32 {
    let b = if v == 0.0 { 0 } else { v.to_bits() };
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

#[inline]
fn from_order_key(k: u32) -> f32 {
    f32::from_bits(if k & 0x8000_0000 != 0 { k & 0x7fff_ffff } else { !k })
}

/// Sorts packed `key << 32 | label` values by key; the order of equal keys
/// is unspecified. Large inputs use a three-pass LSD radix sort.
fn sort_by_key(buf: &mut Vec<u64>, scratch: &mut Vec<u64>) {
    if buf.len() < 512 {
        buf.sort_unstable();
        return;
    }
    scratch.clear();
    scratch.resize(buf.len(), 0);
    for shift in [32u32, 43, 54] {
        let width = if shift == 54 { 10 } else { 11 };
        let mask = (1u64 << width) - 1;
        let mut offsets = [0usize; 2048];
        for &v in buf.iter() {
            offsets[((v >> shift) & mask) as usize] += 1;
        }
        let mut total = 0;
        for o in offsets.iter_mut() {
            let c = *o;
            *o = total;
            total += c;
        }
        for &v in buf.iter() {
            let d = ((v >> shift) & mask) as usize;
            scratch[offsets[d]] = v;
            offsets[d] += 1;
        }
        std::mem::swap(buf, scratch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn keys_preserve_order(a in -1e30f32..1e30, b in -1e30f32..1e30) {
            prop_assert_eq!(order_key(a).cmp(&order_key(b)), a.partial_cmp(&b).unwrap());
            prop_assert_eq!(from_order_key(order_key(a)), a);
        }

        #[test]
        fn radix_matches_comparison_sort(keys in prop::collection::vec(any::<u32>(), 0..2000)) {
            let mut buf: Vec<u64> = keys.iter().map(|&k| u64::from(k) << 32).collect();
            let mut expected = buf.clone();
            expected.sort_unstable();
            sort_by_key(&mut buf, &mut Vec::new());
            prop_assert_eq!(buf, expected);
        }
    }

    #[test]
    fn signed_zeros_share_a_key() {
        assert_eq!(order_key(-0.0), order_key(0.0));
    }
}
