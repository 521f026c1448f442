//! Partitions of each score level set into feature-space regions.
//!
//! Every bin gets its own region assigner, fitted on the training rows of
//! that bin only. Three strategies are available: a best-first CART
//! regression tree on squared loss of the labels, a balanced decision stump,
//! and k-means.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::BinnedView;
use crate::data::{Features, SplitIndex};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

const MIN_LEAF: usize = 2;
const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionStrategy {
    /// Regression tree with `floor(n_bin_train / region_ratio)` leaves.
    Tree,
    /// One split with at least `floor(n / 2)` training rows on each side.
    BalancedStump,
    KMeans { k: usize },
}

/// Maps feature vectors of one bin to region indices `0..n_regions`.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionAssigner {
    Single,
    Tree(RegressionTree),
    Stump { feature: usize, threshold: f64 },
    KMeans { centers: Vec<Vec<f64>> },
}

impl RegionAssigner {
    pub fn n_regions(&self) -> usize {
        match self {
            RegionAssigner::Single => 1,
            RegionAssigner::Tree(t) => t.n_leaves(),
            RegionAssigner::Stump { .. } => 2,
            RegionAssigner::KMeans { centers } => centers.len(),
        }
    }

    pub fn assign(&self, x: &[f64]) -> usize {
        match self {
            RegionAssigner::Single => 0,
            RegionAssigner::Tree(t) => t.leaf(x),
            RegionAssigner::Stump { feature, threshold } => usize::from(x[*feature] > *threshold),
            RegionAssigner::KMeans { centers } => nearest(centers, x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PartitionModel {
    strategy: PartitionStrategy,
    region_ratio: usize,
    assigners: Vec<RegionAssigner>,
}

impl PartitionModel {
    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn region_ratio(&self) -> usize {
        self.region_ratio
    }

    pub fn assigners(&self) -> &[RegionAssigner] {
        &self.assigners
    }

    pub fn region_counts(&self) -> Vec<usize> {
        self.assigners.iter().map(RegionAssigner::n_regions).collect()
    }
}

/// Leaf budget of a tree fitted on `n_train` rows.
pub fn max_regions(n_train: usize, region_ratio: usize) -> usize {
    (n_train / region_ratio.max(1)).max(1)
}

pub fn fit_partition(
    bview: &BinnedView,
    features: &Features,
    labels: &[u8],
    split: &SplitIndex,
    strategy: PartitionStrategy,
    region_ratio: usize,
    seed: u64,
) -> Result<PartitionModel> {
    if features.n_cols() == 0 {
        return Err(Error::NoFeatures);
    }
    if strategy == PartitionStrategy::Tree && region_ratio < 2 {
        return Err(Error::InvalidParameter(format!(
            "tree partitions need region_ratio >= 2, got {region_ratio}"
        )));
    }
    if let PartitionStrategy::KMeans { k } = strategy {
        if k == 0 {
            return Err(Error::InvalidParameter("k-means needs k >= 1".into()));
        }
    }
    let n_bins = bview.n_bins();
    let mut train_by_bin = vec![Vec::new(); n_bins];
    for &i in &split.train_rows {
        train_by_bin[bview.bin_of()[i]].push(i);
    }
    let assigners = train_by_bin
        .par_iter()
        .enumerate()
        .map(|(b, rows)| {
            if rows.len() < 2 {
                return RegionAssigner::Single;
            }
            match strategy {
                PartitionStrategy::Tree => {
                    let tree = RegressionTree::fit(features, labels, rows, max_regions(rows.len(), region_ratio));
                    if tree.n_leaves() == 1 {
                        RegionAssigner::Single
                    } else {
                        RegionAssigner::Tree(tree)
                    }
                }
                PartitionStrategy::BalancedStump => match balanced_stump(features, labels, rows) {
                    Some((feature, threshold)) => RegionAssigner::Stump { feature, threshold },
                    None => RegionAssigner::Single,
                },
                PartitionStrategy::KMeans { k } => {
                    let centers = kmeans(features, rows, k, derive_seed(seed, b as u64));
                    if centers.len() <= 1 {
                        RegionAssigner::Single
                    } else {
                        RegionAssigner::KMeans { centers }
                    }
                }
            }
        })
        .collect();
    Ok(PartitionModel {
        strategy,
        region_ratio,
        assigners,
    })
}

/// Region of every row of the parent view (train and test).
pub fn assign_regions(model: &PartitionModel, bview: &BinnedView, features: &Features) -> Vec<usize> {
    bview
        .bin_of()
        .par_iter()
        .enumerate()
        .map(|(i, &b)| model.assigners[b].assign(features.row(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Axis-aligned binary regression tree. Leaves are numbered left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

struct Pending {
    node: usize,
    rows: Vec<usize>,
    split: SplitCandidate,
    order: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // max-heap on gain; earlier nodes first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.split
            .gain
            .total_cmp(&other.split.gain)
            .then_with(|| other.order.cmp(&self.order))
    }
}

impl RegressionTree {
    /// Grows the tree best-first: the leaf whose split most reduces the
    /// squared error is split next, until `max_leaves` is reached or no split
    /// reduces the error.
    pub fn fit(features: &Features, labels: &[u8], rows: &[usize], max_leaves: usize) -> Self {
        let mut nodes = vec![Node::Leaf(0)];
        let mut heap = BinaryHeap::new();
        let mut order = 0usize;
        let mut leaves = 1usize;
        if let Some(split) = best_split(features, labels, rows) {
            heap.push(Pending { node: 0, rows: rows.to_vec(), split, order });
        }
        while leaves < max_leaves {
            let Some(p) = heap.pop() else { break };
            let SplitCandidate { feature, threshold, .. } = p.split;
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                p.rows.iter().partition(|&&i| features.get(i, feature) <= threshold);
            debug_assert_eq!(left_rows.len(), p.split.n_left);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf(0));
            nodes.push(Node::Leaf(0));
            nodes[p.node] = Node::Split { feature, threshold, left, right };
            leaves += 1;
            for (node, child_rows) in [(left, left_rows), (right, right_rows)] {
                order += 1;
                if let Some(split) = best_split(features, labels, &child_rows) {
                    heap.push(Pending { node, rows: child_rows, split, order });
                }
            }
        }
        let mut tree = RegressionTree { nodes, n_leaves: 0 };
        tree.number_leaves(0);
        tree
    }

    fn number_leaves(&mut self, node: usize) {
        match self.nodes[node] {
            Node::Leaf(_) => {
                self.nodes[node] = Node::Leaf(self.n_leaves);
                self.n_leaves += 1;
            }
            Node::Split { left, right, .. } => {
                self.number_leaves(left);
                self.number_leaves(right);
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn leaf(&self, x: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf(id) => return id,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Best squared-loss split with at least `MIN_LEAF` rows per side. Ties in
/// gain keep the lowest feature index, then the lowest threshold.
fn best_split(features: &Features, labels: &[u8], rows: &[usize]) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * MIN_LEAF {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| f64::from(labels[i])).sum();
    let parent = total * total / n as f64;
    let mut best: Option<SplitCandidate> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for feature in 0..features.n_cols() {
        sorted.clear();
        sorted.extend(rows.iter().map(|&i| (features.get(i, feature), f64::from(labels[i]))));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for pos in 0..n - 1 {
            left_sum += sorted[pos].1;
            let n_left = pos + 1;
            if n_left < MIN_LEAF || n - n_left < MIN_LEAF || sorted[pos].0 == sorted[pos + 1].0 {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64 - parent;
            if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: 0.5 * (sorted[pos].0 + sorted[pos + 1].0),
                    gain,
                    n_left,
                });
            }
        }
    }
    best
}

/// Single split minimising squared loss with both sides holding at least
/// `floor(n / 2)` rows. `None` when no feature admits such a split.
fn balanced_stump(features: &Features, labels: &[u8], rows: &[usize]) -> Option<(usize, f64)> {
    let n = rows.len();
    let half = n / 2;
    let total: f64 = rows.iter().map(|&i| f64::from(labels[i])).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for feature in 0..features.n_cols() {
        sorted.clear();
        sorted.extend(rows.iter().map(|&i| (features.get(i, feature), f64::from(labels[i]))));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for pos in 0..n - 1 {
            left_sum += sorted[pos].1;
            let n_left = pos + 1;
            if n_left < half || n - n_left < half || sorted[pos].0 == sorted[pos + 1].0 {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64;
            let threshold = 0.5 * (sorted[pos].0 + sorted[pos + 1].0);
            if best.is_none_or(|(_, _, s)| score > s + 1e-12) {
                best = Some((feature, threshold, score));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(center, x);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm from a k-means++ start. Centers that end up without any
/// training row are dropped so region indices stay contiguous.
pub(crate) fn kmeans(features: &Features, rows: &[usize], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let k = k.min(rows.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = features.n_cols();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(features.row(rows[rng.random_range(0..rows.len())]).to_vec());
    let mut d2: Vec<f64> = rows.iter().map(|&i| sq_dist(features.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = rows.len() - 1;
        for (pos, &d) in d2.iter().enumerate() {
            if target < d {
                pick = pos;
                break;
            }
            target -= d;
        }
        let c = features.row(rows[pick]).to_vec();
        for (pos, &i) in rows.iter().enumerate() {
            d2[pos] = d2[pos].min(sq_dist(features.row(i), &c));
        }
        centers.push(c);
    }

    let mut assignment = vec![0usize; rows.len()];
    for _ in 0..KMEANS_MAX_ITER {
        for (pos, &i) in rows.iter().enumerate() {
            assignment[pos] = nearest(&centers, features.row(i));
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (pos, &i) in rows.iter().enumerate() {
            let c = assignment[pos];
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(center, &updated).sqrt());
            *center = updated;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    for (pos, &i) in rows.iter().enumerate() {
        assignment[pos] = nearest(&centers, features.row(i));
    }
    let mut used = vec![false; centers.len()];
    for &c in &assignment {
        used[c] = true;
    }
    centers
        .into_iter()
        .zip(used)
        .filter_map(|(c, u)| u.then_some(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn split_all_train(n: usize) -> SplitIndex {
        SplitIndex {
            train_rows: (0..n).collect(),
            test_rows: Vec::new(),
            bin_count_used_for_stratification: 1,
        }
    }

    fn one_bin(n: usize) -> BinnedView {
        BinnedView::new(&vec![0.5; n], &vec![0; n], 1, None).unwrap()
    }

    #[test]
    fn leaf_budget_arithmetic() {
        assert_eq!(max_regions(90, 30), 3);
        assert_eq!(max_regions(29, 30), 1);
        assert_eq!(max_regions(0, 30), 1);
    }

    #[test]
    fn constant_labels_give_single_region() {
        let features = Features::from_rows(&(0..40).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let labels = vec![1u8; 40];
        let model = fit_partition(&one_bin(40), &features, &labels, &split_all_train(40), PartitionStrategy::Tree, 2, 0).unwrap();
        assert_eq!(model.region_counts(), vec![1]);
    }

    #[test]
    fn no_features_is_an_error() {
        let features = Features::empty(4);
        let err = fit_partition(&one_bin(4), &features, &[0, 1, 0, 1], &split_all_train(4), PartitionStrategy::Tree, 2, 0).unwrap_err();
        assert!(matches!(err, Error::NoFeatures));
    }

    #[test]
    fn tree_rejects_small_ratio() {
        let features = Features::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(fit_partition(&one_bin(2), &features, &[0, 1], &split_all_train(2), PartitionStrategy::Tree, 1, 0).is_err());
    }

    #[test]
    fn tiny_bins_are_trivial() {
        let features = Features::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let split = SplitIndex {
            train_rows: vec![0],
            test_rows: vec![1],
            bin_count_used_for_stratification: 1,
        };
        let model = fit_partition(&one_bin(2), &features, &[0, 1], &split, PartitionStrategy::Tree, 2, 0).unwrap();
        assert_eq!(model.assigners()[0], RegionAssigner::Single);
        assert_eq!(assign_regions(&model, &one_bin(2), &features), vec![0, 0]);
    }

    #[test]
    fn tree_respects_leaf_budget_and_minimum_leaf_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 300;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let features = Features::from_rows(&rows).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        for budget in [1, 2, 5, 10, 40] {
            let tree = RegressionTree::fit(&features, &labels, &idx, budget);
            assert!(tree.n_leaves() <= budget);
            let mut counts = vec![0; tree.n_leaves()];
            for r in &rows {
                counts[tree.leaf(r)] += 1;
            }
            assert!(counts.iter().all(|&c| c >= MIN_LEAF), "{counts:?}");
        }
    }

    #[test]
    fn tree_finds_the_informative_threshold() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 7) as f64, i as f64]).collect();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i >= 12)).collect();
        let features = Features::from_rows(&rows).unwrap();
        let tree = RegressionTree::fit(&features, &labels, &(0..20).collect::<Vec<_>>(), 2);
        assert_eq!(tree.n_leaves(), 2);
        assert_eq!(tree.nodes[0], Node::Split { feature: 1, threshold: 11.5, left: 1, right: 2 });
    }

    /// Exhaustive search over every feature/threshold with the balance
    /// constraint.
    fn brute_force_stump(xs: &[f64], labels: &[u8]) -> f64 {
        let n = xs.len();
        let mut best = (f64::INFINITY, 0.0);
        for &t in xs {
            let (l, r): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| xs[i] <= t);
            if l.len() < n / 2 || r.len() < n / 2 {
                continue;
            }
            let sse = |idx: &[usize]| {
                let m = idx.iter().map(|&i| labels[i] as f64).sum::<f64>() / idx.len() as f64;
                idx.iter().map(|&i| (labels[i] as f64 - m).powi(2)).sum::<f64>()
            };
            let loss = sse(&l) + sse(&r);
            if loss < best.0 {
                best = (loss, t);
            }
        }
        best.1
    }

    #[test]
    fn balanced_stump_splits_on_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let mut xs: Vec<f64> = (0..n / 2).map(|_| rng.random::<f64>() + 0.01).collect();
        xs.extend((0..n / 2).map(|_| -rng.random::<f64>() - 0.01));
        let labels: Vec<u8> = xs.iter().map(|&x| u8::from(x > 0.0)).collect();
        let features = Features::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
        let model = fit_partition(&one_bin(n), &features, &labels, &split_all_train(n), PartitionStrategy::BalancedStump, 30, 0).unwrap();
        let RegionAssigner::Stump { feature, threshold } = model.assigners()[0] else {
            panic!("expected a stump");
        };
        assert_eq!(feature, 0);
        let oracle = brute_force_stump(&xs, &labels);
        // the oracle reports the left-side maximum; ours the midpoint
        assert!(threshold >= oracle && threshold.abs() < 0.02);
        let regions = assign_regions(&model, &one_bin(n), &features);
        for (r, y) in regions.iter().zip(&labels) {
            assert_eq!(*r, *y as usize);
        }
    }

    #[test]
    fn balanced_stump_respects_balance() {
        // the best unconstrained split would isolate the single positive
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 10.0];
        let labels = [0, 0, 0, 0, 0, 1];
        let features = Features::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
        let rows: Vec<usize> = (0..6).collect();
        let (_, t) = balanced_stump(&features, &labels, &rows).unwrap();
        assert_eq!(t, 2.5);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 2000;
        let centers = [[0.0, 0.0], [10.0, 0.0]];
        let mut rows = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![centers[c][0] + dx, centers[c][1] + dy]);
            truth.push(c);
        }
        let features = Features::from_rows(&rows).unwrap();
        let bin = BinnedView::new(&vec![0.5; n], &vec![0; n], 1, None).unwrap();
        let split = SplitIndex {
            train_rows: (0..n).step_by(2).chain((1..n).step_by(2)).filter(|i| i % 4 < 2).collect(),
            test_rows: (0..n).filter(|i| i % 4 >= 2).collect(),
            bin_count_used_for_stratification: 1,
        };
        let model = fit_partition(&bin, &features, &vec![0; n], &split, PartitionStrategy::KMeans { k: 2 }, 30, 17).unwrap();
        let regions = assign_regions(&model, &bin, &features);
        let nearest_true: Vec<usize> = rows
            .iter()
            .map(|r| usize::from(sq_dist(r, &centers[1]) < sq_dist(r, &centers[0])))
            .collect();
        let agree = regions.iter().zip(&nearest_true).filter(|(a, b)| a == b).count();
        let agreement = agree.max(n - agree) as f64 / n as f64;
        assert!(agreement >= 0.99, "agreement {agreement}");
        let _ = truth;
    }

    #[test]
    fn kmeans_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random(), rng.random()]).collect();
        let features = Features::from_rows(&rows).unwrap();
        let idx: Vec<usize> = (0..100).collect();
        assert_eq!(kmeans(&features, &idx, 4, 9), kmeans(&features, &idx, 4, 9));
        assert!(kmeans(&features, &idx[..3], 5, 9).len() <= 3);
    }
}
