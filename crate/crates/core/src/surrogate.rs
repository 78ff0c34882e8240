//! Interpretable surrogates for the black-box: CART decision trees, random
//! forests, and extremely randomized trees fitted on the top-k feature space,
//! with the R-squared goodness-of-surrogacy measure.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::AutoencoderClassifier;
use crate::data::{train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::predictor::{argmax, Predictor};
use crate::probe::FeatureRanking;
use crate::seeds;

/// One node of a fitted tree. Split rule: `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        class_counts: Vec<usize>,
        distribution: Vec<f64>,
        leaf_id: usize,
    },
}

impl TreeNode {
    /// Leaf reached by an instance.
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        match self {
            TreeNode::Leaf { .. } => self,
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.leaf_for(x)
                } else {
                    right.leaf_for(x)
                }
            }
        }
    }

    pub fn distribution_for(&self, x: &[f64]) -> &[f64] {
        match self.leaf_for(x) {
            TreeNode::Leaf { distribution, .. } => distribution,
            TreeNode::Internal { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    fn total_count(&self) -> usize {
        match self {
            TreeNode::Leaf { class_counts, .. } => class_counts.iter().sum(),
            TreeNode::Internal { left, right, .. } => left.total_count() + right.total_count(),
        }
    }

    fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        match self {
            TreeNode::Leaf { class_counts, .. } => class_counts.clone(),
            TreeNode::Internal { left, right, .. } => {
                let l = left.class_counts(n_classes);
                let r = right.class_counts(n_classes);
                l.iter().zip(&r).map(|(a, b)| a + b).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    Dt,
    Rf,
    Ert,
}

impl std::fmt::Display for ForestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForestKind::Dt => write!(f, "DT"),
            ForestKind::Rf => write!(f, "RF"),
            ForestKind::Ert => write!(f, "ERT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; None means all for DT and ceil(sqrt(k))
    /// for RF/ERT.
    pub n_candidate_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 2,
            n_candidate_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// A fitted tree ensemble on the top-k feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ForestRepr", into = "ForestRepr")]
pub struct SurrogateForest {
    pub kind: ForestKind,
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    /// Original feature indices the surrogate was trained on.
    pub feature_subset: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Replaceable,
    NotReplaceable,
}

/// How well the surrogate mimics the black-box on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub kind: ForestKind,
    /// 1 - SSE*/SSE over per-class probability vectors; at most 1.
    pub r_squared: f64,
    /// Fraction of test instances where surrogate and black-box labels agree.
    pub agreement: f64,
    pub verdict: Verdict,
}

/// Extra surrogation-pipeline knobs beyond the tree parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOptions {
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Train on the black-box's predicted labels instead of ground truth
    /// (classic distillation); default keeps ground-truth targets.
    pub train_on_blackbox_labels: bool,
    pub r2_threshold: f64,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            split_seed: 0,
            train_on_blackbox_labels: false,
            r2_threshold: 0.9,
        }
    }
}

/// Gini impurity of a count vector.
pub fn gini(class_counts: &[usize]) -> Result<f64> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyNode);
    }
    Ok(gini_unchecked(class_counts, total as f64))
}

fn gini_unchecked(class_counts: &[usize], total: f64) -> f64 {
    class_counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * (1.0 - p)
        })
        .sum()
}

enum SplitStrategy {
    /// Midpoints of consecutive sorted unique values.
    Greedy,
    /// One uniform random threshold per candidate feature.
    RandomThreshold,
}

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_samples_leaf: usize,
    n_candidates: usize,
    strategy: SplitStrategy,
    rng: ChaCha8Rng,
    leaf_counter: usize,
}

struct BestSplit {
    decrease: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        counts
    }

    fn leaf(&mut self, counts: Vec<usize>) -> TreeNode {
        let total: usize = counts.iter().sum();
        let distribution = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let node = TreeNode::Leaf {
            class_counts: counts,
            distribution,
            leaf_id: self.leaf_counter,
        };
        self.leaf_counter += 1;
        node
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let k = self.x.ncols();
        if self.n_candidates >= k {
            return (0..k).collect();
        }
        // Partial Fisher-Yates, then ascending order so equal-gain ties
        // resolve toward the lower feature index.
        let mut pool: Vec<usize> = (0..k).collect();
        for i in 0..self.n_candidates {
            let j = self.rng.gen_range(i..k);
            pool.swap(i, j);
        }
        let mut chosen = pool[..self.n_candidates].to_vec();
        chosen.sort_unstable();
        chosen
    }

    /// Best split for this node, if any candidate leaves both children with
    /// at least `min_samples_leaf` rows. Zero-gain splits are allowed so that
    /// structures like XOR (where no single split reduces impurity) can still
    /// be separated deeper down.
    fn best_split(&mut self, rows: &[usize], parent_counts: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let nf = n as f64;
        let parent_gini = gini_unchecked(parent_counts, nf);
        let mut best: Option<BestSplit> = None;

        for f in self.candidate_features() {
            match self.strategy {
                SplitStrategy::Greedy => {
                    let mut sorted: Vec<(f64, usize)> =
                        rows.iter().map(|&r| (self.x[[r, f]], self.y[r])).collect();
                    sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                    let mut left = vec![0usize; self.n_classes];
                    let mut right = parent_counts.to_vec();
                    for i in 0..n - 1 {
                        left[sorted[i].1] += 1;
                        right[sorted[i].1] -= 1;
                        if sorted[i + 1].0 <= sorted[i].0 {
                            continue;
                        }
                        let n_left = i + 1;
                        let n_right = n - n_left;
                        if n_left < self.min_samples_leaf || n_right < self.min_samples_leaf {
                            continue;
                        }
                        let threshold = (sorted[i].0 + sorted[i + 1].0) / 2.0;
                        let decrease = parent_gini
                            - (n_left as f64 / nf) * gini_unchecked(&left, n_left as f64)
                            - (n_right as f64 / nf) * gini_unchecked(&right, n_right as f64);
                        if best.as_ref().map_or(true, |b| decrease > b.decrease) {
                            best = Some(BestSplit {
                                decrease,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                }
                SplitStrategy::RandomThreshold => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for &r in rows {
                        let v = self.x[[r, f]];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    if !(hi > lo) {
                        continue;
                    }
                    let threshold = self.rng.gen_range(lo..hi);
                    let mut left = vec![0usize; self.n_classes];
                    let mut n_left = 0usize;
                    for &r in rows {
                        if self.x[[r, f]] <= threshold {
                            left[self.y[r]] += 1;
                            n_left += 1;
                        }
                    }
                    let n_right = n - n_left;
                    if n_left < self.min_samples_leaf || n_right < self.min_samples_leaf {
                        continue;
                    }
                    let right: Vec<usize> = parent_counts
                        .iter()
                        .zip(&left)
                        .map(|(p, l)| p - l)
                        .collect();
                    let decrease = parent_gini
                        - (n_left as f64 / nf) * gini_unchecked(&left, n_left as f64)
                        - (n_right as f64 / nf) * gini_unchecked(&right, n_right as f64);
                    if best.as_ref().map_or(true, |b| decrease > b.decrease) {
                        best = Some(BestSplit {
                            decrease,
                            feature: f,
                            threshold,
                        });
                    }
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let counts = self.counts(&rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || rows.len() < 2 * self.min_samples_leaf {
            return self.leaf(counts);
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return self.leaf(counts);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x[[r, split.feature]] <= split.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

fn fit_one_tree(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &ForestParams,
    kind: ForestKind,
    tree_seed: u64,
) -> TreeNode {
    let k = x.ncols();
    let default_cands = match kind {
        ForestKind::Dt => k,
        _ => (k as f64).sqrt().ceil() as usize,
    };
    let n_candidates = params.n_candidate_features.unwrap_or(default_cands).clamp(1, k);
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);

    let rows: Vec<usize> = match kind {
        ForestKind::Rf if params.bootstrap => {
            (0..x.nrows()).map(|_| rng.gen_range(0..x.nrows())).collect()
        }
        _ => (0..x.nrows()).collect(),
    };

    let mut builder = TreeBuilder {
        x,
        y,
        n_classes,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf.max(1),
        n_candidates,
        strategy: match kind {
            ForestKind::Ert => SplitStrategy::RandomThreshold,
            _ => SplitStrategy::Greedy,
        },
        rng,
        leaf_counter: 0,
    };
    builder.build(rows, 0)
}

/// Fit a single greedy CART tree on all features.
pub fn fit_tree(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, params: &ForestParams) -> Result<TreeNode> {
    validate_training_input(x, y, n_classes)?;
    Ok(fit_one_tree(x, y, n_classes, params, ForestKind::Dt, params.seed))
}

/// Fit a forest of the requested kind. RF bootstraps rows and picks greedy
/// thresholds over a random feature subset per split; ERT keeps the full
/// sample and draws one random threshold per candidate feature. Per-tree
/// seeds derive from `(seed, tree index)`.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &ForestParams,
    kind: ForestKind,
) -> Result<SurrogateForest> {
    validate_training_input(x, y, n_classes)?;
    if params.n_trees == 0 {
        return Err(Error::InvalidParam("n_trees must be >= 1".into()));
    }
    let n_trees = match kind {
        ForestKind::Dt => 1,
        _ => params.n_trees,
    };
    let params = ForestParams {
        bootstrap: matches!(kind, ForestKind::Rf) && params.bootstrap,
        n_trees,
        ..params.clone()
    };
    let trees: Vec<TreeNode> = (0..n_trees)
        .into_par_iter()
        .map(|t| fit_one_tree(x, y, n_classes, &params, kind, seeds::derive(params.seed, t as u64)))
        .collect();
    Ok(SurrogateForest {
        kind,
        trees,
        params,
        feature_subset: (0..x.ncols()).collect(),
        n_classes,
    })
}

fn validate_training_input(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidParam("empty training matrix".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if n_classes < 2 {
        return Err(Error::TooFewClasses(n_classes));
    }
    Ok(())
}

/// Mean of the leaf distributions across trees.
pub fn predict_forest(forest: &SurrogateForest, x_star: &[f64]) -> Result<Vec<f64>> {
    if x_star.len() != forest.feature_subset.len() {
        return Err(Error::DimensionMismatch {
            expected: forest.feature_subset.len(),
            got: x_star.len(),
        });
    }
    let mut probs = vec![0.0; forest.n_classes];
    for tree in &forest.trees {
        for (p, d) in probs.iter_mut().zip(tree.distribution_for(x_star)) {
            *p += d;
        }
    }
    for p in probs.iter_mut() {
        *p /= forest.trees.len() as f64;
    }
    Ok(probs)
}

/// Per-feature mean decrease in Gini impurity, weighted by node sample
/// fraction, averaged over trees, normalized to sum 1. A forest without a
/// single split falls back to the uniform vector.
pub fn gini_importance(forest: &SurrogateForest) -> Vec<f64> {
    let k = forest.feature_subset.len();
    let mut total = vec![0.0; k];
    for tree in &forest.trees {
        let root_n = tree.total_count() as f64;
        accumulate_importance(tree, root_n, forest.n_classes, &mut total);
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in total.iter_mut() {
            *v /= sum;
        }
    } else {
        total.fill(1.0 / k as f64);
    }
    total
}

fn accumulate_importance(node: &TreeNode, root_n: f64, n_classes: usize, acc: &mut [f64]) {
    if let TreeNode::Internal {
        feature,
        left,
        right,
        ..
    } = node
    {
        let lc = left.class_counts(n_classes);
        let rc = right.class_counts(n_classes);
        let nl: usize = lc.iter().sum();
        let nr: usize = rc.iter().sum();
        let n = nl + nr;
        let parent: Vec<usize> = lc.iter().zip(&rc).map(|(a, b)| a + b).collect();
        let decrease = gini_unchecked(&parent, n as f64)
            - (nl as f64 / n as f64) * gini_unchecked(&lc, nl as f64)
            - (nr as f64 / n as f64) * gini_unchecked(&rc, nr as f64);
        acc[*feature] += (n as f64 / root_n) * decrease;
        accumulate_importance(left, root_n, n_classes, acc);
        accumulate_importance(right, root_n, n_classes, acc);
    }
}

/// R-squared of the surrogate's probability vectors against the black-box's:
/// `1 - sum||p* - p||^2 / sum||p - mean(p)||^2`.
pub fn r_squared(surrogate_probs: &[Vec<f64>], blackbox_probs: &[Vec<f64>]) -> f64 {
    let n = blackbox_probs.len();
    let c = blackbox_probs[0].len();
    let mut mean = vec![0.0; c];
    for p in blackbox_probs {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let mut sse_star = 0.0;
    let mut sse = 0.0;
    for (ps, pb) in surrogate_probs.iter().zip(blackbox_probs) {
        for ((&a, &b), &m) in ps.iter().zip(pb).zip(&mean) {
            sse_star += (a - b) * (a - b);
            sse += (b - m) * (b - m);
        }
    }
    if sse == 0.0 {
        // Constant black-box output: surrogacy is exact or meaningless.
        return if sse_star == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - sse_star / sse
}

/// Distill the black-box into a surrogate on the top-k feature space.
///
/// Splits the dataset, fits the surrogate on the training rows (ground-truth
/// labels unless `train_on_blackbox_labels`), then scores R-squared and label
/// agreement against the black-box's test predictions.
pub fn surrogation_pipeline(
    blackbox: &AutoencoderClassifier,
    dataset: &Dataset,
    ranking: &FeatureRanking,
    kind: ForestKind,
    params: &ForestParams,
    options: &SurrogateOptions,
) -> Result<(SurrogateForest, SurrogateReport)> {
    if ranking.k > dataset.n_features() {
        return Err(Error::InvalidParam(format!(
            "ranking k {} exceeds feature count {}",
            ranking.k,
            dataset.n_features()
        )));
    }
    let subset = ranking.top_k().to_vec();
    let split = train_test_split(dataset, options.train_fraction, options.split_seed)?;
    let train_star = split.train.select_columns(&subset);
    let test_star = split.test.select_columns(&subset);

    let targets: Vec<usize> = if options.train_on_blackbox_labels {
        blackbox
            .predict_batch(&split.train.features)?
            .into_iter()
            .map(|p| p.label)
            .collect()
    } else {
        split.train.labels.clone()
    };

    let mut forest = fit_forest(
        train_star.features.view(),
        &targets,
        dataset.n_classes(),
        params,
        kind,
    )?;
    forest.feature_subset = subset;

    let bb_probs: Vec<Vec<f64>> = blackbox
        .predict_batch(&split.test.features)?
        .into_iter()
        .map(|p| p.probs)
        .collect();
    let sur_probs: Vec<Vec<f64>> = (0..test_star.n_rows())
        .map(|i| predict_forest(&forest, test_star.row(i)))
        .collect::<Result<_>>()?;

    let r2 = r_squared(&sur_probs, &bb_probs);
    let agreement = sur_probs
        .iter()
        .zip(&bb_probs)
        .filter(|(a, b)| argmax(a) == argmax(b))
        .count() as f64
        / bb_probs.len() as f64;

    let report = SurrogateReport {
        kind,
        r_squared: r2,
        agreement,
        verdict: if r2 >= options.r2_threshold {
            Verdict::Replaceable
        } else {
            Verdict::NotReplaceable
        },
    };
    Ok((forest, report))
}

impl Predictor for SurrogateForest {
    fn input_dim(&self) -> usize {
        self.feature_subset.len()
    }

    fn num_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        predict_forest(self, x).expect("input dimension mismatch")
    }
}

// ---------------------------------------------------------------------------
// Serialization: flat node arrays in preorder, leaves carry raw counts.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FlatNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ForestRepr {
    kind: ForestKind,
    params: ForestParams,
    feature_subset: Vec<usize>,
    n_classes: usize,
    trees: Vec<Vec<FlatNode>>,
}

fn flatten_tree(node: &TreeNode, out: &mut Vec<FlatNode>) -> usize {
    match node {
        TreeNode::Leaf { class_counts, .. } => {
            out.push(FlatNode::Leaf {
                counts: class_counts.clone(),
            });
            out.len() - 1
        }
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            let idx = out.len();
            out.push(FlatNode::Internal {
                feature: *feature,
                threshold: *threshold,
                left: 0,
                right: 0,
            });
            let l = flatten_tree(left, out);
            let r = flatten_tree(right, out);
            out[idx] = FlatNode::Internal {
                feature: *feature,
                threshold: *threshold,
                left: l,
                right: r,
            };
            idx
        }
    }
}

fn unflatten_tree(nodes: &[FlatNode], idx: usize, leaf_counter: &mut usize) -> Result<TreeNode> {
    match nodes.get(idx) {
        Some(FlatNode::Leaf { counts }) => {
            let total: usize = counts.iter().sum();
            if total == 0 {
                return Err(Error::MalformedArtifact {
                    path: "forest".into(),
                    reason: "leaf with zero counts".into(),
                });
            }
            let node = TreeNode::Leaf {
                class_counts: counts.clone(),
                distribution: counts.iter().map(|&c| c as f64 / total as f64).collect(),
                leaf_id: *leaf_counter,
            };
            *leaf_counter += 1;
            Ok(node)
        }
        Some(FlatNode::Internal {
            feature,
            threshold,
            left,
            right,
        }) => {
            let l = unflatten_tree(nodes, *left, leaf_counter)?;
            let r = unflatten_tree(nodes, *right, leaf_counter)?;
            Ok(TreeNode::Internal {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(l),
                right: Box::new(r),
            })
        }
        None => Err(Error::MalformedArtifact {
            path: "forest".into(),
            reason: format!("node index {idx} out of range"),
        }),
    }
}

impl From<SurrogateForest> for ForestRepr {
    fn from(f: SurrogateForest) -> Self {
        let trees = f
            .trees
            .iter()
            .map(|t| {
                let mut nodes = Vec::new();
                flatten_tree(t, &mut nodes);
                nodes
            })
            .collect();
        ForestRepr {
            kind: f.kind,
            params: f.params,
            feature_subset: f.feature_subset,
            n_classes: f.n_classes,
            trees,
        }
    }
}

impl TryFrom<ForestRepr> for SurrogateForest {
    type Error = Error;

    fn try_from(r: ForestRepr) -> Result<Self> {
        let trees = r
            .trees
            .iter()
            .map(|nodes| {
                let mut counter = 0;
                unflatten_tree(nodes, 0, &mut counter)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SurrogateForest {
            kind: r.kind,
            trees,
            params: r.params,
            feature_subset: r.feature_subset,
            n_classes: r.n_classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::TrainConfig;
    use ndarray::Array2;
    use crate::data::make_synthetic;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn dt_params() -> ForestParams {
        ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        }
    }

    #[test]
    fn gini_values() {
        assert_abs_diff_eq!(gini(&[5, 5]).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gini(&[10, 0]).unwrap(), 0.0, epsilon = 1e-12);
        // Oracle: 4 * (0.25 * 0.75).
        assert_abs_diff_eq!(gini(&[1, 1, 1, 1]).unwrap(), 0.75, epsilon = 1e-12);
        assert!(matches!(gini(&[0, 0]), Err(Error::EmptyNode)));
    }

    #[test]
    fn two_point_tree_splits_at_midpoint() {
        let x = arr2(&[[0.0], [1.0]]);
        let y = vec![0, 1];
        let tree = fit_tree(
            x.view(),
            &y,
            2,
            &ForestParams {
                min_samples_leaf: 1,
                ..dt_params()
            },
        )
        .unwrap();
        match &tree {
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                assert_eq!(*feature, 0);
                assert_abs_diff_eq!(*threshold, 0.5, epsilon = 1e-12);
                for (child, class) in [(left, 0usize), (right, 1usize)] {
                    match child.as_ref() {
                        TreeNode::Leaf { distribution, .. } => {
                            assert_eq!(distribution[class], 1.0);
                        }
                        TreeNode::Internal { .. } => panic!("expected leaf"),
                    }
                }
            }
            TreeNode::Leaf { .. } => panic!("expected a split"),
        }
    }

    #[test]
    fn xor_is_solved_at_depth_two() {
        let x = arr2(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        let y = vec![0, 1, 1, 0];
        let params = ForestParams {
            max_depth: 2,
            min_samples_leaf: 1,
            ..dt_params()
        };
        let tree = fit_tree(x.view(), &y, 2, &params).unwrap();
        for i in 0..4 {
            let probs = tree.distribution_for(x.row(i).to_slice().unwrap());
            assert_eq!(argmax(probs), y[i]);
        }
        // Root must be the exhaustive-enumeration argmax (all gains are zero,
        // so the tie-break picks feature 0 at its single midpoint).
        match &tree {
            TreeNode::Internal { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_abs_diff_eq!(*threshold, 0.5, epsilon = 1e-12);
            }
            TreeNode::Leaf { .. } => panic!("expected a split"),
        }
    }

    #[test]
    fn constant_labels_give_single_leaf() {
        let x = arr2(&[[0.0], [1.0], [2.0]]);
        let y = vec![1, 1, 1];
        let tree = fit_tree(x.view(), &y, 2, &dt_params()).unwrap();
        assert!(matches!(tree, TreeNode::Leaf { .. }));
        assert_eq!(tree.n_leaves(), 1);
    }

    #[test]
    fn degenerate_rf_equals_cart() {
        let (d, _) = make_synthetic(120, 5, 2, 3, 41).unwrap();
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            n_candidate_features: Some(5),
            ..ForestParams::default()
        };
        let rf = fit_forest(d.features.view(), &d.labels, 3, &params, ForestKind::Rf).unwrap();
        let dt = fit_tree(d.features.view(), &d.labels, 3, &params).unwrap();
        assert_eq!(rf.trees[0], dt);
    }

    #[test]
    fn forests_are_reproducible_per_seed() {
        let (d, _) = make_synthetic(100, 6, 2, 2, 43).unwrap();
        let params = ForestParams {
            n_trees: 7,
            ..ForestParams::default()
        };
        for kind in [ForestKind::Rf, ForestKind::Ert] {
            let a = fit_forest(d.features.view(), &d.labels, 2, &params, kind).unwrap();
            let b = fit_forest(d.features.view(), &d.labels, 2, &params, kind).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rf_keeps_up_with_single_tree_on_blobs() {
        let (d, _) = make_synthetic(300, 8, 3, 3, 47).unwrap();
        let accuracy = |forest: &SurrogateForest| {
            (0..d.n_rows())
                .filter(|&i| forest.predict_label(d.row(i)) == d.labels[i])
                .count() as f64
                / d.n_rows() as f64
        };
        let dt = fit_forest(d.features.view(), &d.labels, 3, &dt_params(), ForestKind::Dt).unwrap();
        let rf = fit_forest(
            d.features.view(),
            &d.labels,
            3,
            &ForestParams {
                n_trees: 50,
                ..ForestParams::default()
            },
            ForestKind::Rf,
        )
        .unwrap();
        assert!(accuracy(&rf) >= accuracy(&dt) - 0.02);
    }

    #[test]
    fn predict_forest_mixes_tree_votes() {
        let leaf = |class: usize, other: usize, id: usize| TreeNode::Leaf {
            class_counts: if class == 0 { vec![other, 0] } else { vec![0, other] },
            distribution: if class == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            },
            leaf_id: id,
        };
        let forest = SurrogateForest {
            kind: ForestKind::Rf,
            trees: vec![leaf(0, 3, 0), leaf(1, 3, 0)],
            params: ForestParams::default(),
            feature_subset: vec![0],
            n_classes: 2,
        };
        let probs = predict_forest(&forest, &[0.3]).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
        assert_eq!(forest.predict_label(&[0.3]), 0); // tie-break to class 0

        let single = SurrogateForest {
            trees: vec![leaf(1, 4, 0)],
            ..forest
        };
        assert_eq!(predict_forest(&single, &[0.0]).unwrap(), vec![0.0, 1.0]);
        assert!(predict_forest(&single, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn every_point_lands_in_exactly_one_leaf_per_tree() {
        use rand::Rng;
        let (d, _) = make_synthetic(150, 4, 2, 2, 53).unwrap();
        let forest = fit_forest(
            d.features.view(),
            &d.labels,
            2,
            &ForestParams {
                n_trees: 5,
                ..ForestParams::default()
            },
            ForestKind::Ert,
        )
        .unwrap();

        // Count leaves claiming each random point by walking every root-leaf
        // region independently of leaf_for.
        fn claims(node: &TreeNode, x: &[f64], lo: &mut Vec<f64>, hi: &mut Vec<f64>) -> usize {
            match node {
                TreeNode::Leaf { .. } => {
                    let inside = x
                        .iter()
                        .enumerate()
                        .all(|(j, &v)| v > lo[j] && v <= hi[j]);
                    usize::from(inside)
                }
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut total = 0;
                    let saved_hi = hi[*feature];
                    hi[*feature] = hi[*feature].min(*threshold);
                    total += claims(left, x, lo, hi);
                    hi[*feature] = saved_hi;
                    let saved_lo = lo[*feature];
                    lo[*feature] = lo[*feature].max(*threshold);
                    total += claims(right, x, lo, hi);
                    lo[*feature] = saved_lo;
                    total
                }
            }
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..8.0)).collect();
            for tree in &forest.trees {
                let mut lo = vec![f64::NEG_INFINITY; 4];
                let mut hi = vec![f64::INFINITY; 4];
                assert_eq!(claims(tree, &x, &mut lo, &mut hi), 1);
            }
        }
    }

    #[test]
    fn greedy_root_matches_exhaustive_enumeration() {
        // Oracle: enumerate every (feature, midpoint) split and compute the
        // Gini decrease directly from the definition.
        for seed in 0..6u64 {
            let (d, _) = make_synthetic(60 + 20 * seed as usize % 140, 5, 2, 3, 100 + seed).unwrap();
            let params = ForestParams {
                min_samples_leaf: 1,
                ..dt_params()
            };
            let tree = fit_tree(d.features.view(), &d.labels, 3, &params).unwrap();
            let TreeNode::Internal { feature, threshold, .. } = &tree else {
                panic!("expected root split");
            };
            let (of, ot) = exhaustive_best_split(&d.features, &d.labels, 3);
            assert_eq!(*feature, of);
            assert_abs_diff_eq!(*threshold, ot, epsilon = 0.0);
        }
    }

    pub(crate) fn exhaustive_best_split(
        x: &Array2<f64>,
        y: &[usize],
        n_classes: usize,
    ) -> (usize, f64) {
        let n = x.nrows();
        let mut parent = vec![0usize; n_classes];
        for &l in y {
            parent[l] += 1;
        }
        let parent_gini = gini(&parent).unwrap();
        let mut best = (f64::NEG_INFINITY, 0usize, 0.0f64);
        for f in 0..x.ncols() {
            let mut values: Vec<f64> = (0..n).map(|i| x[[i, f]]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let mut left = vec![0usize; n_classes];
                let mut right = vec![0usize; n_classes];
                for i in 0..n {
                    if x[[i, f]] <= t {
                        left[y[i]] += 1;
                    } else {
                        right[y[i]] += 1;
                    }
                }
                let nl: usize = left.iter().sum();
                let nr: usize = right.iter().sum();
                let dec = parent_gini
                    - (nl as f64 / n as f64) * gini(&left).unwrap()
                    - (nr as f64 / n as f64) * gini(&right).unwrap();
                if dec > best.0 {
                    best = (dec, f, t);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn importance_concentrates_on_split_features() {
        let x = arr2(&[[0.0, 9.0], [1.0, 9.0], [0.1, 9.0], [0.9, 9.0]]);
        let y = vec![0, 1, 0, 1];
        let params = ForestParams {
            min_samples_leaf: 1,
            ..dt_params()
        };
        let forest = fit_forest(x.view(), &y, 2, &params, ForestKind::Dt).unwrap();
        let imp = gini_importance(&forest);
        assert_abs_diff_eq!(imp[0], 1.0, epsilon = 1e-12);
        assert_eq!(imp[1], 0.0);
    }

    #[test]
    fn importances_sum_to_one_for_random_forests() {
        let (d, _) = make_synthetic(200, 7, 3, 3, 59).unwrap();
        let forest = fit_forest(
            d.features.view(),
            &d.labels,
            3,
            &ForestParams::default(),
            ForestKind::Rf,
        )
        .unwrap();
        let imp = gini_importance(&forest);
        assert_abs_diff_eq!(imp.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn no_split_forest_reports_uniform_importance() {
        let x = arr2(&[[1.0, 2.0], [1.5, 2.5]]);
        let y = vec![0, 0];
        let forest = fit_forest(x.view(), &y, 2, &dt_params(), ForestKind::Dt).unwrap();
        assert_eq!(gini_importance(&forest), vec![0.5, 0.5]);
    }

    #[test]
    fn r_squared_extremes() {
        let bb = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]];
        // Identical predictions: SSE* = 0.
        assert_abs_diff_eq!(r_squared(&bb.clone(), &bb), 1.0, epsilon = 1e-12);
        // Predicting the mean vector: SSE* = SSE.
        let mean = vec![
            (0.9 + 0.2 + 0.6) / 3.0,
            (0.1 + 0.8 + 0.4) / 3.0,
        ];
        let mean_preds = vec![mean.clone(), mean.clone(), mean];
        assert_abs_diff_eq!(r_squared(&mean_preds, &bb), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn r_squared_matches_independent_evaluation() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rand_probs = |rng: &mut rand_chacha::ChaCha8Rng| {
            let a: f64 = rng.gen_range(0.01..0.99);
            vec![a, 1.0 - a]
        };
        let bb: Vec<Vec<f64>> = (0..40).map(|_| rand_probs(&mut rng)).collect();
        let sur: Vec<Vec<f64>> = (0..40).map(|_| rand_probs(&mut rng)).collect();
        let r2 = r_squared(&sur, &bb);

        // Independent route: explicit SSE accumulation over flattened pairs.
        let n = bb.len() as f64;
        let mean0: f64 = bb.iter().map(|p| p[0]).sum::<f64>() / n;
        let mean1: f64 = bb.iter().map(|p| p[1]).sum::<f64>() / n;
        let sse_star: f64 = sur
            .iter()
            .zip(&bb)
            .map(|(s, b)| (s[0] - b[0]).powi(2) + (s[1] - b[1]).powi(2))
            .sum();
        let sse: f64 = bb
            .iter()
            .map(|b| (b[0] - mean0).powi(2) + (b[1] - mean1).powi(2))
            .sum();
        assert_abs_diff_eq!(r2, 1.0 - sse_star / sse, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_variance_shrinks_with_more_trees() {
        let (d, _) = make_synthetic(240, 6, 2, 2, 61).unwrap();
        let test_rows: Vec<usize> = (0..40).collect();
        let variance_for = |n_trees: usize| {
            let preds: Vec<Vec<f64>> = (0..5u64)
                .map(|s| {
                    let forest = fit_forest(
                        d.features.view(),
                        &d.labels,
                        2,
                        &ForestParams {
                            n_trees,
                            seed: s,
                            ..ForestParams::default()
                        },
                        ForestKind::Ert,
                    )
                    .unwrap();
                    test_rows
                        .iter()
                        .map(|&i| predict_forest(&forest, d.row(i)).unwrap()[0])
                        .collect()
                })
                .collect();
            let mut total = 0.0;
            for j in 0..test_rows.len() {
                let vals: Vec<f64> = preds.iter().map(|p| p[j]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                total += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            }
            total / test_rows.len() as f64
        };
        assert!(variance_for(50) <= variance_for(5));
    }

    #[test]
    fn surrogation_on_blobs_is_replaceable() {
        let (d, informative) = make_synthetic(1000, 10, 4, 2, 67).unwrap();
        let config = TrainConfig {
            epochs: 250,
            embedding_dim: Some(4),
            channels: 1,
            learning_rate: 3e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let split = train_test_split(&d, 0.8, 0).unwrap();
        let (std_train, std_test, _) = crate::data::standardize(&split.train, &split.test).unwrap();
        let mut full = std_train.clone();
        // Recombine so the pipeline can split identically on its own seed.
        full.features = ndarray::concatenate![
            ndarray::Axis(0),
            std_train.features,
            std_test.features
        ];
        full.labels = std_train
            .labels
            .iter()
            .chain(&std_test.labels)
            .copied()
            .collect();
        let (bb, _) = AutoencoderClassifier::train(&std_train, &config).unwrap();

        // Rank the truly informative features on top.
        let mut scores = vec![0.001; 10];
        for &j in &informative {
            scores[j] = 1.0;
        }
        let ranking = FeatureRanking::new(scores, 4).unwrap();
        let (forest, report) = surrogation_pipeline(
            &bb,
            &full,
            &ranking,
            ForestKind::Ert,
            &ForestParams::default(),
            &SurrogateOptions::default(),
        )
        .unwrap();
        assert_eq!(forest.feature_subset.len(), 4);
        assert!(
            report.r_squared >= 0.9,
            "R^2 {} below replaceability bar",
            report.r_squared
        );
        assert_eq!(report.verdict, Verdict::Replaceable);
    }

    #[test]
    fn forest_serialization_round_trips() {
        let (d, _) = make_synthetic(80, 5, 2, 3, 71).unwrap();
        let forest = fit_forest(
            d.features.view(),
            &d.labels,
            3,
            &ForestParams {
                n_trees: 4,
                ..ForestParams::default()
            },
            ForestKind::Rf,
        )
        .unwrap();
        let json = serde_json::to_string(&forest).unwrap();
        let back: SurrogateForest = serde_json::from_str(&json).unwrap();
        assert_eq!(forest, back);
        for i in 0..d.n_rows() {
            assert_eq!(
                predict_forest(&forest, d.row(i)).unwrap(),
                predict_forest(&back, d.row(i)).unwrap()
            );
        }
    }
}
