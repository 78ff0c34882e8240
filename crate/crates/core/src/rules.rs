//! Decision-rule extraction from surrogate trees, rule filtering, greedy
//! sequential covering into an ordered rule list, fidelity scoring, and
//! counterfactual generation by minimal perturbation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::predictor::{argmax, Predictor};
use crate::surrogate::{SurrogateForest, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredOp {
    Le,
    Gt,
}

/// One boolean condition on a feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: usize,
    pub name: String,
    pub op: PredOp,
    pub threshold: f64,
}

impl Predicate {
    pub fn matches(&self, x: &[f64]) -> bool {
        match self.op {
            PredOp::Le => x[self.feature] <= self.threshold,
            PredOp::Gt => x[self.feature] > self.threshold,
        }
    }

    pub fn complement(&self) -> Predicate {
        Predicate {
            op: match self.op {
                PredOp::Le => PredOp::Gt,
                PredOp::Gt => PredOp::Le,
            },
            ..self.clone()
        }
    }

    pub fn render(&self) -> String {
        let op = match self.op {
            PredOp::Le => "<=",
            PredOp::Gt => ">",
        };
        format!("{} {} {:.4}", self.name, op, self.threshold)
    }
}

/// Conjunctive antecedent with a class-distribution consequent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub predicates: Vec<Predicate>,
    #[serde(rename = "class_distribution")]
    pub consequent: Vec<f64>,
    pub support: f64,
    pub confidence: f64,
    pub coverage: f64,
    pub source_tree: usize,
    pub source_leaf: usize,
}

impl DecisionRule {
    /// Predicted class: argmax of the consequent, lowest index on ties.
    pub fn class(&self) -> usize {
        argmax(&self.consequent)
    }

    pub fn matches(&self, x: &[f64]) -> bool {
        self.predicates.iter().all(|p| p.matches(x))
    }

    pub fn render(&self, class_names: &[String]) -> String {
        let antecedent = if self.predicates.is_empty() {
            "TRUE".to_string()
        } else {
            self.predicates
                .iter()
                .map(Predicate::render)
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        format!(
            "IF {} THEN {} (conf {:.3}, supp {:.3})",
            antecedent,
            class_names[self.class()],
            self.confidence,
            self.support
        )
    }
}

/// Filtering thresholds for rule quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleThresholds {
    pub min_support: f64,
    pub min_confidence: f64,
    pub min_coverage: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        Self {
            min_support: 0.01,
            min_confidence: 0.6,
            min_coverage: 0.05,
        }
    }
}

/// Ordered decision list with a majority-class default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleList {
    pub rules: Vec<DecisionRule>,
    pub default_class: usize,
    pub default_distribution: Vec<f64>,
}

impl RuleList {
    /// First matching rule, if any.
    pub fn fired_rule(&self, x: &[f64]) -> Option<(usize, &DecisionRule)> {
        self.rules.iter().enumerate().find(|(_, r)| r.matches(x))
    }

    pub fn predict_label(&self, x: &[f64]) -> usize {
        self.fired_rule(x)
            .map(|(_, r)| r.class())
            .unwrap_or(self.default_class)
    }

    /// Mean confidence of the rule that fires per row (default-rule rows use
    /// the residue distribution's peak).
    pub fn mean_fired_confidence(&self, features: &Array2<f64>) -> f64 {
        let default_conf = self
            .default_distribution
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        let mut total = 0.0;
        for i in 0..features.nrows() {
            let x = features.row(i);
            let x = x.to_slice().expect("row-major layout");
            total += self
                .fired_rule(x)
                .map(|(_, r)| r.confidence)
                .unwrap_or(default_conf);
        }
        total / features.nrows() as f64
    }
}

/// One flipped-predicate variant of a fired rule whose outcome differs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRule {
    /// Index of the flipped predicate within the base rule's antecedent.
    pub flipped_predicate: usize,
    /// The variant antecedent p[delta].
    pub predicates: Vec<Predicate>,
    /// Per-feature changes that move the instance into the variant region.
    pub delta: Vec<(usize, f64)>,
    pub flipped_class: usize,
}

// Margin used when stepping just past a split threshold.
const BOUNDARY_EPS: f64 = 1e-6;

/// One rule per leaf: predicates accumulated along the root-leaf path with
/// the tightest bound kept per feature and direction; support/confidence/
/// coverage evaluated on the given training data.
pub fn extract_paths(tree: &TreeNode, tree_id: usize, data: &Dataset) -> Vec<DecisionRule> {
    let mut rules = Vec::new();
    let mut path: Vec<(usize, PredOp, f64)> = Vec::new();
    walk_paths(tree, tree_id, data, &mut path, &mut rules);
    rules
}

fn walk_paths(
    node: &TreeNode,
    tree_id: usize,
    data: &Dataset,
    path: &mut Vec<(usize, PredOp, f64)>,
    out: &mut Vec<DecisionRule>,
) {
    match node {
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            path.push((*feature, PredOp::Le, *threshold));
            walk_paths(left, tree_id, data, path, out);
            path.pop();
            path.push((*feature, PredOp::Gt, *threshold));
            walk_paths(right, tree_id, data, path, out);
            path.pop();
        }
        TreeNode::Leaf {
            distribution,
            leaf_id,
            ..
        } => {
            let predicates = simplify_path(path, &data.feature_names);
            let mut rule = DecisionRule {
                predicates,
                consequent: distribution.clone(),
                support: 0.0,
                confidence: distribution.iter().cloned().fold(0.0f64, f64::max),
                coverage: 0.0,
                source_tree: tree_id,
                source_leaf: *leaf_id,
            };
            score_rule(&mut rule, data);
            out.push(rule);
        }
    }
}

/// Keep the tightest bound per (feature, direction): the minimum of the `<=`
/// thresholds and the maximum of the `>` thresholds.
fn simplify_path(path: &[(usize, PredOp, f64)], names: &[String]) -> Vec<Predicate> {
    let mut upper: Vec<Option<f64>> = vec![None; names.len()];
    let mut lower: Vec<Option<f64>> = vec![None; names.len()];
    for &(f, op, t) in path {
        match op {
            PredOp::Le => upper[f] = Some(upper[f].map_or(t, |u: f64| u.min(t))),
            PredOp::Gt => lower[f] = Some(lower[f].map_or(t, |l: f64| l.max(t))),
        }
    }
    let mut predicates = Vec::new();
    for f in 0..names.len() {
        if let Some(t) = lower[f] {
            predicates.push(Predicate {
                feature: f,
                name: names[f].clone(),
                op: PredOp::Gt,
                threshold: t,
            });
        }
        if let Some(t) = upper[f] {
            predicates.push(Predicate {
                feature: f,
                name: names[f].clone(),
                op: PredOp::Le,
                threshold: t,
            });
        }
    }
    predicates
}

fn score_rule(rule: &mut DecisionRule, data: &Dataset) {
    let n = data.n_rows();
    let class = rule.class();
    let mut covered = 0usize;
    let mut covered_class = 0usize;
    let mut class_total = 0usize;
    for i in 0..n {
        let is_class = data.labels[i] == class;
        class_total += usize::from(is_class);
        if rule.matches(data.row(i)) {
            covered += 1;
            covered_class += usize::from(is_class);
        }
    }
    rule.support = covered as f64 / n as f64;
    rule.coverage = if class_total > 0 {
        covered_class as f64 / class_total as f64
    } else {
        0.0
    };
}

/// Path rules of every tree in the forest.
pub fn extract_forest_rules(forest: &SurrogateForest, data: &Dataset) -> Vec<DecisionRule> {
    forest
        .trees
        .iter()
        .enumerate()
        .flat_map(|(t, tree)| extract_paths(tree, t, data))
        .collect()
}

/// Fraction of rows satisfying the rule's antecedent.
pub fn support(rule: &DecisionRule, features: &Array2<f64>) -> f64 {
    let n = features.nrows();
    (0..n)
        .filter(|&i| rule.matches(features.row(i).to_slice().expect("row-major layout")))
        .count() as f64
        / n as f64
}

/// Keep rules meeting all three thresholds.
pub fn filter_rules(rules: Vec<DecisionRule>, thresholds: &RuleThresholds) -> Vec<DecisionRule> {
    rules
        .into_iter()
        .filter(|r| {
            r.support >= thresholds.min_support
                && r.confidence >= thresholds.min_confidence
                && r.coverage >= thresholds.min_coverage
        })
        .collect()
}

// Fixed-size bitset over row indices.
struct RowSet {
    words: Vec<u64>,
}

impl RowSet {
    fn empty(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn and_count(&self, other: &RowSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    fn and3_count(&self, b: &RowSet, c: &RowSet) -> usize {
        self.words
            .iter()
            .zip(&b.words)
            .zip(&c.words)
            .map(|((x, y), z)| (x & y & z).count_ones() as usize)
            .sum()
    }

    fn subtract(&mut self, other: &RowSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }
}

/// Greedy sequential covering: repeatedly append the rule with the best
/// (confidence, support, fewer predicates, lower source id) on the rows not
/// yet covered, re-scoring on the residue each round and removing what the
/// chosen rule covers. Stops when no rule clears the thresholds; the default
/// rule is the majority class of the residue.
pub fn order_rule_list(
    rules: &[DecisionRule],
    data: &Dataset,
    thresholds: &RuleThresholds,
) -> RuleList {
    let n = data.n_rows();
    let c = data.n_classes();

    let class_sets: Vec<RowSet> = (0..c)
        .map(|cl| {
            let mut s = RowSet::empty(n);
            for (i, &l) in data.labels.iter().enumerate() {
                if l == cl {
                    s.insert(i);
                }
            }
            s
        })
        .collect();
    let rule_sets: Vec<RowSet> = rules
        .iter()
        .map(|r| {
            let mut s = RowSet::empty(n);
            for i in 0..n {
                if r.matches(data.row(i)) {
                    s.insert(i);
                }
            }
            s
        })
        .collect();

    let mut remaining = RowSet::full(n);
    let mut used = vec![false; rules.len()];
    let mut ordered = Vec::new();

    loop {
        let remaining_count = remaining.count();
        if remaining_count == 0 {
            break;
        }
        let mut best: Option<(f64, f64, usize, (usize, usize), usize)> = None;
        for (idx, rule) in rules.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let covered = rule_sets[idx].and_count(&remaining);
            if covered == 0 {
                continue;
            }
            let class = rule.class();
            let hits = rule_sets[idx].and3_count(&remaining, &class_sets[class]);
            let class_remaining = remaining.and_count(&class_sets[class]);
            let confidence = hits as f64 / covered as f64;
            let support = covered as f64 / remaining_count as f64;
            let coverage = if class_remaining > 0 {
                hits as f64 / class_remaining as f64
            } else {
                0.0
            };
            if support < thresholds.min_support
                || confidence < thresholds.min_confidence
                || coverage < thresholds.min_coverage
            {
                continue;
            }
            let key = (
                confidence,
                support,
                rule.predicates.len(),
                (rule.source_tree, rule.source_leaf),
                idx,
            );
            let better = match &best {
                None => true,
                Some(b) => {
                    (key.0, key.1).partial_cmp(&(b.0, b.1)).expect("finite scores")
                        == std::cmp::Ordering::Greater
                        || (key.0 == b.0
                            && key.1 == b.1
                            && (key.2, key.3) < (b.2, b.3))
                }
            };
            if better {
                best = Some(key);
            }
        }
        let Some((_, _, _, _, idx)) = best else { break };
        used[idx] = true;
        remaining.subtract(&rule_sets[idx]);
        ordered.push(rules[idx].clone());
    }

    // Majority class over the residue; over everything when nothing remains.
    let mut residue_counts = vec![0usize; c];
    let mut any = false;
    for cl in 0..c {
        let cnt = remaining.and_count(&class_sets[cl]);
        residue_counts[cl] = cnt;
        any |= cnt > 0;
    }
    if !any {
        for &l in &data.labels {
            residue_counts[l] += 1;
        }
    }
    let total: usize = residue_counts.iter().sum();
    let default_distribution: Vec<f64> = residue_counts
        .iter()
        .map(|&v| v as f64 / total as f64)
        .collect();
    let default_class = residue_counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);

    RuleList {
        rules: ordered,
        default_class,
        default_distribution,
    }
}

/// Fraction of rows where the rule list agrees with the reference model.
pub fn fidelity<P: Predictor>(rule_list: &RuleList, reference: &P, features: &Array2<f64>) -> f64 {
    let n = features.nrows();
    (0..n)
        .filter(|&i| {
            let x = features.row(i);
            let x = x.to_slice().expect("row-major layout");
            rule_list.predict_label(x) == reference.predict_label(x)
        })
        .count() as f64
        / n as f64
}

/// Fidelity against precomputed reference labels (e.g. black-box predictions
/// made on the full feature space).
pub fn fidelity_to_labels(rule_list: &RuleList, labels: &[usize], features: &Array2<f64>) -> f64 {
    let n = features.nrows();
    (0..n)
        .filter(|&i| {
            let x = features.row(i);
            rule_list.predict_label(x.to_slice().expect("row-major layout")) == labels[i]
        })
        .count() as f64
        / n as f64
}

/// Counterfactual search target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfTarget {
    AnyOther,
    Class(usize),
}

/// A found counterfactual: the minimal coordinate change that flips the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub delta: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub new_label: usize,
    pub original_label: usize,
}

fn forest_thresholds(forest: &SurrogateForest) -> Vec<Vec<f64>> {
    let mut per_feature = vec![Vec::new(); forest.feature_subset.len()];
    fn collect(node: &TreeNode, acc: &mut [Vec<f64>]) {
        if let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            acc[*feature].push(*threshold);
            collect(left, acc);
            collect(right, acc);
        }
    }
    for tree in &forest.trees {
        collect(tree, &mut per_feature);
    }
    for list in per_feature.iter_mut() {
        list.sort_by(f64::total_cmp);
        list.dedup();
    }
    per_feature
}

fn hits_target(label: usize, original: usize, target: CfTarget) -> bool {
    match target {
        CfTarget::AnyOther => label != original,
        CfTarget::Class(c) => label == c,
    }
}

/// Coordinate-descent counterfactual search over a tree surrogate.
///
/// Candidate moves hop single features to just past the forest's split
/// thresholds (±1e-6). Among flips found, the total-L1-smallest is kept and
/// then greedily shrunk coordinate-wise by `step` until no single-coordinate
/// shrink preserves the flip. Returns None when `max_iter` rounds of progress
/// moves never produce a flip.
pub fn counterfactual_search(
    forest: &SurrogateForest,
    x_star: &[f64],
    target: CfTarget,
    step: f64,
    max_iter: usize,
) -> Result<Option<Counterfactual>> {
    let k = forest.feature_subset.len();
    if x_star.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: x_star.len(),
        });
    }
    if !(step > 0.0) {
        return Err(Error::InvalidParam("step must be positive".into()));
    }
    let original_label = forest.predict_label(x_star);
    if hits_target(original_label, original_label, target) {
        // Already at the requested class: the zero counterfactual.
        return Ok(Some(Counterfactual {
            delta: vec![0.0; k],
            x_prime: x_star.to_vec(),
            new_label: original_label,
            original_label,
        }));
    }

    let thresholds = forest_thresholds(forest);
    let mut current = x_star.to_vec();

    for _ in 0..max_iter {
        let current_probs = forest.predict_probs(&current);
        let progress_at = |probs: &[f64]| match target {
            CfTarget::AnyOther => 1.0 - probs[original_label],
            CfTarget::Class(c) => probs[c],
        };
        let current_progress = progress_at(&current_probs);

        let mut best_flip: Option<(f64, Vec<f64>, usize)> = None; // (L1 from x, point, label)
        let mut best_move: Option<(f64, f64, usize, f64)> = None; // (progress, -|move| via move_len, feature, value)

        for f in 0..k {
            // Scan thresholds nearest-first; the first flip in this feature
            // is its minimal single-coordinate flip.
            let mut candidates: Vec<f64> = thresholds[f]
                .iter()
                .map(|&t| {
                    if current[f] <= t {
                        t + BOUNDARY_EPS
                    } else {
                        t - BOUNDARY_EPS
                    }
                })
                .filter(|&v| v != current[f])
                .collect();
            candidates.sort_by(|a, b| {
                (a - current[f])
                    .abs()
                    .total_cmp(&(b - current[f]).abs())
            });
            let mut found_flip_in_feature = false;
            for v in candidates {
                let mut point = current.clone();
                point[f] = v;
                let probs = forest.predict_probs(&point);
                let label = argmax(&probs);
                if !found_flip_in_feature && hits_target(label, original_label, target) {
                    let l1: f64 = point
                        .iter()
                        .zip(x_star)
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    if best_flip.as_ref().map_or(true, |b| l1 < b.0) {
                        best_flip = Some((l1, point.clone(), label));
                    }
                    found_flip_in_feature = true;
                }
                let prog = progress_at(&probs);
                if prog > current_progress {
                    let move_len = (v - current[f]).abs();
                    let better = match &best_move {
                        None => true,
                        Some(b) => prog > b.0 || (prog == b.0 && move_len < b.1),
                    };
                    if better {
                        best_move = Some((prog, move_len, f, v));
                    }
                }
                if found_flip_in_feature {
                    break;
                }
            }
        }

        if let Some((_, point, label)) = best_flip {
            let minimized = shrink_delta(forest, x_star, &point, original_label, target, step);
            let new_label = forest.predict_label(&minimized);
            debug_assert!(hits_target(new_label, original_label, target));
            let delta: Vec<f64> = minimized.iter().zip(x_star).map(|(a, b)| a - b).collect();
            let _ = label;
            return Ok(Some(Counterfactual {
                delta,
                x_prime: minimized,
                new_label,
                original_label,
            }));
        }

        // No flip reachable in one hop: take the best probability-progress
        // move and keep searching.
        let Some((_, _, f, v)) = best_move else {
            return Ok(None);
        };
        current[f] = v;
    }
    Ok(None)
}

// Greedily shrink one coordinate at a time by `step` (snapping to zero below
// one step) while the flip persists.
fn shrink_delta(
    forest: &SurrogateForest,
    x: &[f64],
    flipped: &[f64],
    original_label: usize,
    target: CfTarget,
    step: f64,
) -> Vec<f64> {
    let mut point = flipped.to_vec();
    loop {
        let mut improved = false;
        for f in 0..point.len() {
            let delta = point[f] - x[f];
            if delta == 0.0 {
                continue;
            }
            let shrunk = if delta.abs() <= step {
                0.0
            } else {
                delta - step * delta.signum()
            };
            let mut trial = point.clone();
            trial[f] = x[f] + shrunk;
            if hits_target(forest.predict_label(&trial), original_label, target) {
                point = trial;
                improved = true;
            }
        }
        if !improved {
            return point;
        }
    }
}

/// Flip one predicate of the fired rule at a time, move the instance just
/// across that boundary, and keep the variants whose rule-list outcome
/// changes class.
pub fn counterfactual_rules(
    rule: &DecisionRule,
    rule_list: &RuleList,
    x: &[f64],
) -> Vec<CounterfactualRule> {
    let original = rule_list.predict_label(x);
    let mut out = Vec::new();
    for (i, pred) in rule.predicates.iter().enumerate() {
        let flipped = pred.complement();
        let new_value = match flipped.op {
            // Was `<= t`, now needs `> t`.
            PredOp::Gt => flipped.threshold + BOUNDARY_EPS,
            // Was `> t`, now needs `<= t`.
            PredOp::Le => flipped.threshold - BOUNDARY_EPS,
        };
        let mut x_prime = x.to_vec();
        x_prime[pred.feature] = new_value;
        let outcome = rule_list.predict_label(&x_prime);
        if outcome != original {
            let mut predicates = rule.predicates.clone();
            predicates[i] = flipped;
            out.push(CounterfactualRule {
                flipped_predicate: i,
                predicates,
                delta: vec![(pred.feature, new_value - x[pred.feature])],
                flipped_class: outcome,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::surrogate::{fit_forest, fit_tree, ForestKind, ForestParams};
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn toy_dataset() -> Dataset {
        Dataset::new(
            arr2(&[[0.1, 3.0], [0.4, 2.0], [0.6, 1.0], [0.9, 0.5]]),
            vec![0, 0, 1, 1],
            vec!["a".into(), "b".into()],
            vec!["no".into(), "yes".into()],
        )
        .unwrap()
    }

    fn dt_params() -> ForestParams {
        ForestParams {
            n_trees: 1,
            bootstrap: false,
            min_samples_leaf: 1,
            ..ForestParams::default()
        }
    }

    #[test]
    fn depth_one_tree_reads_off_two_rules() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);
        assert_eq!(rules.len(), tree.n_leaves());
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].predicates.len(), 1);
        assert_eq!(rules[0].predicates[0].op, PredOp::Le);
        assert_eq!(rules[0].class(), 0);
        assert_eq!(rules[1].predicates[0].op, PredOp::Gt);
        assert_eq!(rules[1].class(), 1);
        assert_abs_diff_eq!(rules[0].support, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rules[0].confidence, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rules[0].coverage, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nested_bounds_are_tightened() {
        let path = vec![
            (0usize, PredOp::Le, 5.0),
            (0usize, PredOp::Le, 3.0),
            (1usize, PredOp::Gt, 1.0),
            (1usize, PredOp::Gt, 2.0),
        ];
        let names = vec!["a".to_string(), "b".to_string()];
        let preds = simplify_path(&path, &names);
        assert_eq!(preds.len(), 2);
        let upper = preds.iter().find(|p| p.op == PredOp::Le).unwrap();
        assert_eq!(upper.threshold, 3.0);
        let lower = preds.iter().find(|p| p.op == PredOp::Gt).unwrap();
        assert_eq!(lower.threshold, 2.0);
    }

    #[test]
    fn support_of_vacuous_and_unsatisfiable_rules() {
        let d = toy_dataset();
        let mk = |predicates: Vec<Predicate>| DecisionRule {
            predicates,
            consequent: vec![1.0, 0.0],
            support: 0.0,
            confidence: 1.0,
            coverage: 0.0,
            source_tree: 0,
            source_leaf: 0,
        };
        let empty = mk(vec![]);
        assert_eq!(support(&empty, &d.features), 1.0);

        let pred = |op, threshold| Predicate {
            feature: 0,
            name: "a".into(),
            op,
            threshold,
        };
        let half = mk(vec![pred(PredOp::Le, 0.5)]);
        assert_eq!(support(&half, &d.features), 0.5);

        let impossible = mk(vec![pred(PredOp::Le, 1.0), pred(PredOp::Gt, 2.0)]);
        assert_eq!(support(&impossible, &d.features), 0.0);
    }

    #[test]
    fn filtering_thresholds() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);

        let all = filter_rules(
            rules.clone(),
            &RuleThresholds {
                min_support: 0.0,
                min_confidence: 0.0,
                min_coverage: 0.0,
            },
        );
        assert_eq!(all.len(), rules.len());

        // Pure leaves only.
        let pure = filter_rules(
            rules,
            &RuleThresholds {
                min_support: 0.0,
                min_confidence: 1.0,
                min_coverage: 0.0,
            },
        );
        assert!(pure.iter().all(|r| r.confidence == 1.0));
    }

    #[test]
    fn covering_appends_disjoint_pure_rules() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);
        let zero = RuleThresholds {
            min_support: 0.0,
            min_confidence: 0.0,
            min_coverage: 0.0,
        };
        let list = order_rule_list(&rules, &d, &zero);
        assert_eq!(list.rules.len(), 2);
        // Everything covered: default never fires on training rows.
        for i in 0..d.n_rows() {
            assert!(list.fired_rule(d.row(i)).is_some());
            assert_eq!(list.predict_label(d.row(i)), d.labels[i]);
        }
    }

    #[test]
    fn duplicate_rules_are_selected_once() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let mut rules = extract_paths(&tree, 0, &d);
        let dup = rules.clone();
        rules.extend(dup);
        let zero = RuleThresholds {
            min_support: 0.0,
            min_confidence: 0.0,
            min_coverage: 0.0,
        };
        let list = order_rule_list(&rules, &d, &zero);
        // The duplicates cover nothing new once the originals fired.
        assert_eq!(list.rules.len(), 2);
    }

    #[test]
    fn list_beats_default_only_on_training_data() {
        let (d, _) = make_synthetic(200, 4, 2, 2, 77).unwrap();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);
        let list = order_rule_list(&rules, &d, &RuleThresholds::default());
        let list_acc = (0..d.n_rows())
            .filter(|&i| list.predict_label(d.row(i)) == d.labels[i])
            .count();
        let majority = {
            let ones = d.labels.iter().filter(|&&l| l == 1).count();
            ones.max(d.n_rows() - ones)
        };
        assert!(list_acc >= majority);
    }

    #[test]
    fn unfiltered_rule_list_reproduces_its_tree_exactly() {
        let (d, _) = make_synthetic(150, 5, 2, 3, 79).unwrap();
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            min_samples_leaf: 2,
            ..ForestParams::default()
        };
        let forest = fit_forest(d.features.view(), &d.labels, 3, &params, ForestKind::Dt).unwrap();
        let rules = extract_forest_rules(&forest, &d);
        let zero = RuleThresholds {
            min_support: 0.0,
            min_confidence: 0.0,
            min_coverage: 0.0,
        };
        let list = order_rule_list(&rules, &d, &zero);
        assert_eq!(fidelity(&list, &forest, &d.features), 1.0);
    }

    #[test]
    fn fidelity_counts_agreements() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let forest = SurrogateForest {
            kind: ForestKind::Dt,
            trees: vec![tree.clone()],
            params: dt_params(),
            feature_subset: vec![0, 1],
            n_classes: 2,
        };
        // Empty list: everything falls to the default class 0.
        let empty = RuleList {
            rules: vec![],
            default_class: 0,
            default_distribution: vec![0.5, 0.5],
        };
        // The tree assigns class 0 to half the rows.
        assert_abs_diff_eq!(fidelity(&empty, &forest, &d.features), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            fidelity_to_labels(&empty, &[0, 0, 0, 0], &d.features),
            1.0,
            epsilon = 1e-12
        );
    }

    fn one_dim_forest() -> SurrogateForest {
        // Single split: x > 0 -> class 1.
        let x = arr2(&[[-1.0], [-0.5], [0.5], [1.0]]);
        let y = vec![0, 0, 1, 1];
        fit_forest(x.view(), &y, 2, &dt_params(), ForestKind::Dt).unwrap()
    }

    #[test]
    fn counterfactual_crosses_the_single_boundary() {
        let forest = one_dim_forest();
        let cf = counterfactual_search(&forest, &[-0.3], CfTarget::AnyOther, 0.05, 50)
            .unwrap()
            .expect("flip exists");
        assert_eq!(cf.new_label, 1);
        // The boundary sits at 0: delta = 0.3 + eps, possibly shrunk back to
        // just past the boundary by whole steps.
        assert!(cf.delta[0] > 0.3 - 0.05 && cf.delta[0] <= 0.3 + 1e-5);
        assert_eq!(forest.predict_label(&cf.x_prime), 1);

        // Shrinking the found delta by one more step must lose the flip.
        let shrunk = cf.x_prime[0] - 0.05;
        assert_eq!(forest.predict_label(&[shrunk]), 0);
    }

    #[test]
    fn counterfactual_zero_when_already_at_target() {
        let forest = one_dim_forest();
        let cf = counterfactual_search(&forest, &[0.7], CfTarget::Class(1), 0.05, 50)
            .unwrap()
            .expect("already there");
        assert_eq!(cf.delta, vec![0.0]);
        assert_eq!(cf.new_label, 1);
    }

    #[test]
    fn counterfactual_minimality_on_synthetic_forest() {
        let (d, _) = make_synthetic(200, 4, 2, 3, 83).unwrap();
        let forest = fit_forest(
            d.features.view(),
            &d.labels,
            3,
            &ForestParams {
                n_trees: 20,
                ..ForestParams::default()
            },
            ForestKind::Ert,
        )
        .unwrap();
        let step = 0.1;
        let mut found = 0;
        for i in 0..40 {
            let x = d.row(i);
            let Some(cf) = counterfactual_search(&forest, x, CfTarget::AnyOther, step, 50).unwrap()
            else {
                continue;
            };
            found += 1;
            let y0 = forest.predict_label(x);
            assert_ne!(forest.predict_label(&cf.x_prime), y0);
            // Local minimality: no single-coordinate shrink by `step` keeps
            // the flip.
            for f in 0..4 {
                if cf.delta[f] == 0.0 {
                    continue;
                }
                let shrunk = if cf.delta[f].abs() <= step {
                    0.0
                } else {
                    cf.delta[f] - step * cf.delta[f].signum()
                };
                let mut trial = cf.x_prime.clone();
                trial[f] = x[f] + shrunk;
                assert_eq!(
                    forest.predict_label(&trial),
                    y0,
                    "shrinking feature {f} kept the flip"
                );
            }
        }
        assert!(found > 10, "search found too few counterfactuals: {found}");
    }

    #[test]
    fn flipping_the_single_predicate_reaches_the_other_class() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);
        let zero = RuleThresholds {
            min_support: 0.0,
            min_confidence: 0.0,
            min_coverage: 0.0,
        };
        let list = order_rule_list(&rules, &d, &zero);
        let x = d.row(0);
        let (_, fired) = list.fired_rule(x).unwrap();
        let cfs = counterfactual_rules(fired, &list, x);
        assert_eq!(cfs.len(), 1);
        assert_ne!(cfs[0].flipped_class, fired.class());
        // Applying the delta flips the rule list's outcome.
        let mut x_prime = x.to_vec();
        for &(f, dv) in &cfs[0].delta {
            x_prime[f] += dv;
        }
        assert_eq!(list.predict_label(&x_prime), cfs[0].flipped_class);
    }

    #[test]
    fn pure_single_rule_list_with_same_default_has_no_counterfactuals() {
        let d = toy_dataset();
        let rule = DecisionRule {
            predicates: vec![Predicate {
                feature: 0,
                name: "a".into(),
                op: PredOp::Le,
                threshold: 0.5,
            }],
            consequent: vec![1.0, 0.0],
            support: 0.5,
            confidence: 1.0,
            coverage: 1.0,
            source_tree: 0,
            source_leaf: 0,
        };
        let list = RuleList {
            rules: vec![rule.clone()],
            default_class: 0,
            default_distribution: vec![1.0, 0.0],
        };
        let cfs = counterfactual_rules(&rule, &list, d.row(0));
        assert!(cfs.is_empty());
    }

    #[test]
    fn rule_list_round_trips_and_keeps_labels() {
        let (d, _) = make_synthetic(120, 4, 2, 2, 89).unwrap();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);
        let list = order_rule_list(&rules, &d, &RuleThresholds::default());
        let json = serde_json::to_string(&list).unwrap();
        let back: RuleList = serde_json::from_str(&json).unwrap();
        assert_eq!(list, back);
        for i in 0..d.n_rows() {
            assert_eq!(list.predict_label(d.row(i)), back.predict_label(d.row(i)));
        }
    }

    #[test]
    fn stats_recompute_from_raw_data() {
        let (d, _) = make_synthetic(150, 4, 2, 3, 97).unwrap();
        let tree = fit_tree(d.features.view(), &d.labels, 3, &dt_params()).unwrap();
        for rule in extract_paths(&tree, 0, &d) {
            assert!((0.0..=1.0).contains(&rule.support));
            assert!((0.0..=1.0).contains(&rule.confidence));
            assert!((0.0..=1.0).contains(&rule.coverage));
            assert_abs_diff_eq!(rule.support, support(&rule, &d.features), epsilon = 1e-12);
            // Coverage oracle: recount directly.
            let class = rule.class();
            let class_rows = d.labels.iter().filter(|&&l| l == class).count();
            let covered_class = (0..d.n_rows())
                .filter(|&i| d.labels[i] == class && rule.matches(d.row(i)))
                .count();
            assert_abs_diff_eq!(
                rule.coverage,
                covered_class as f64 / class_rows as f64,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn rendering_mentions_ops_and_class() {
        let d = toy_dataset();
        let tree = fit_tree(d.features.view(), &d.labels, 2, &dt_params()).unwrap();
        let rules = extract_paths(&tree, 0, &d);
        let text = rules[0].render(&d.class_names);
        assert!(text.starts_with("IF a <= "));
        assert!(text.contains("THEN no"));
    }
}
