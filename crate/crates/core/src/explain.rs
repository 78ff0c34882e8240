//! Assembly of explanation objects: per-instance triples (importance, fired
//! rule, counterfactual rules) and the global top-k/bottom-k view merging
//! attention, sensitivity, Gini, and stacked SHAP scores.

use serde::{Deserialize, Serialize};

use crate::attribution::{
    self, impacts_from_shap, importance_from_impact, GlobalImpact, GlobalImportance,
    LocalImpact, LocalImportance, WhatIfResult, EXACT_SHAPLEY_LIMIT,
};
use crate::blackbox::AutoencoderClassifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::probe::{AttentionSummary, FeatureRanking};
use crate::rules::{self, CounterfactualRule, DecisionRule, RuleList};
use crate::sensitivity::SensitivityReport;
use crate::surrogate::{SurrogateForest, SurrogateReport};

/// Everything the explanation stage needs from the earlier pipeline stages.
pub struct PipelineArtifacts {
    pub blackbox: AutoencoderClassifier,
    pub ranking: FeatureRanking,
    pub attention: AttentionSummary,
    pub sensitivity: SensitivityReport,
    /// Fitted surrogates with their reports, one per kind.
    pub surrogates: Vec<(SurrogateForest, SurrogateReport)>,
    /// Index into `surrogates` of the model that feeds rules and local
    /// explanations (the ERT by default).
    pub primary_surrogate: usize,
    pub rule_list: RuleList,
    /// Rule-list fidelity against the primary surrogate on held-out rows.
    pub rules_fidelity: f64,
    /// Mean fired-rule confidence over held-out rows.
    pub rules_mean_confidence: f64,
    /// Top-k training rows (background for SHAP and what-if substitution).
    pub background: Dataset,
    pub gini_importance: Vec<f64>,
    pub stacked_global: GlobalImpact,
    pub permutation: GlobalImportance,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Permutations for the sampled Shapley fallback when k > 15.
    pub shap_samples: usize,
    pub shap_seed: u64,
}

impl PipelineArtifacts {
    pub fn primary(&self) -> &SurrogateForest {
        &self.surrogates[self.primary_surrogate].0
    }

    /// Project a full-feature instance onto the surrogate's top-k columns.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.primary()
            .feature_subset
            .iter()
            .map(|&j| x[j])
            .collect()
    }

    /// Stacked Shapley values at one projected instance: mean phi across the
    /// fitted surrogates, exact when k allows, sampled otherwise.
    pub fn stacked_phi(&self, x_star: &[f64], instance_seed: u64) -> Result<Vec<f64>> {
        let k = x_star.len();
        let mut per_model = Vec::with_capacity(self.surrogates.len());
        for (forest, _) in &self.surrogates {
            let phi = if k <= EXACT_SHAPLEY_LIMIT {
                attribution::shapley_exact(
                    forest,
                    x_star,
                    &self.background.features,
                    &(0..k).collect::<Vec<_>>(),
                )?
            } else {
                attribution::shapley_sampled(
                    forest,
                    x_star,
                    &self.background.features,
                    &(0..k).collect::<Vec<_>>(),
                    self.shap_samples,
                    instance_seed,
                )?
            };
            per_model.push(phi);
        }
        attribution::stacked_shap(&per_model)
    }
}

/// Label and probabilities from one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub label: usize,
    pub class_name: String,
    pub probs: Vec<f64>,
}

/// The per-instance explanation triple plus supporting detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub schema_version: u32,
    pub instance_id: usize,
    pub blackbox: ModelOutput,
    pub surrogate: ModelOutput,
    /// Feature names on the surrogate's top-k space, in column order.
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub importance: LocalImportance,
    pub impacts: LocalImpact,
    pub fired_rule: DecisionRule,
    pub counterfactuals: Vec<CounterfactualRule>,
    pub what_if: Vec<WhatIfResult>,
}

/// One row of the merged global table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTableRow {
    pub feature: usize,
    pub name: String,
    pub attention: f64,
    pub attention_rank: usize,
    pub sensitivity: f64,
    pub sensitivity_rank: usize,
    pub gini: f64,
    pub gini_rank: usize,
    pub shap: f64,
    pub shap_rank: usize,
    pub mean_impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleListSummary {
    pub n_rules: usize,
    pub fidelity: f64,
    pub mean_confidence: f64,
    pub default_class: String,
}

/// The global explanation pair plus the per-method score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub schema_version: u32,
    /// Top-k features under the primary ranking (stacked SHAP by default).
    pub top_k: Vec<FeatureScore>,
    /// Bottom-k features under the full-feature attention ranking, ascending.
    pub bottom_k: Vec<FeatureScore>,
    pub table: Vec<GlobalTableRow>,
    pub surrogates: Vec<SurrogateReport>,
    pub rules: RuleListSummary,
}

/// Explain a single full-feature instance through every fitted stage.
pub fn explain_instance(
    artifacts: &PipelineArtifacts,
    instance_id: usize,
    x: &[f64],
) -> Result<LocalExplanation> {
    if x.len() != artifacts.blackbox.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: artifacts.blackbox.arch.input_dim,
            got: x.len(),
        });
    }
    let bb_pred = artifacts.blackbox.predict(x)?;
    let x_star = artifacts.project(x);
    let primary = artifacts.primary();
    let sur_probs = primary.predict_probs(&x_star);
    let sur_label = crate::predictor::argmax(&sur_probs);

    let phi = artifacts.stacked_phi(&x_star, crate::seeds::derive(artifacts.shap_seed, instance_id as u64))?;
    let impacts = impacts_from_shap(&phi);
    let importance = importance_from_impact(&impacts);

    let fired_rule = match artifacts.rule_list.fired_rule(&x_star) {
        Some((_, r)) => r.clone(),
        // Nothing matched: the default rule fires, rendered as an
        // empty-antecedent rule over the residue distribution.
        None => DecisionRule {
            predicates: Vec::new(),
            consequent: artifacts.rule_list.default_distribution.clone(),
            support: 1.0,
            confidence: artifacts
                .rule_list
                .default_distribution
                .iter()
                .cloned()
                .fold(0.0f64, f64::max),
            coverage: 1.0,
            source_tree: usize::MAX,
            source_leaf: usize::MAX,
        },
    };
    let counterfactuals = rules::counterfactual_rules(&fired_rule, &artifacts.rule_list, &x_star);

    let what_if = (0..x_star.len())
        .map(|f| attribution::what_if_remove(primary, &x_star, f, &artifacts.background.features))
        .collect::<Result<Vec<_>>>()?;

    let names = primary
        .feature_subset
        .iter()
        .map(|&j| artifacts.feature_names[j].clone())
        .collect();

    Ok(LocalExplanation {
        schema_version: 1,
        instance_id,
        class_names: artifacts.class_names.clone(),
        blackbox: ModelOutput {
            label: bb_pred.label,
            class_name: artifacts.class_names[bb_pred.label].clone(),
            probs: bb_pred.probs,
        },
        surrogate: ModelOutput {
            label: sur_label,
            class_name: artifacts.class_names[sur_label].clone(),
            probs: sur_probs,
        },
        feature_names: names,
        importance,
        impacts,
        fired_rule,
        counterfactuals,
        what_if,
    })
}

fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank + 1;
    }
    ranks
}

/// Merge the per-method global scores into one table and pick the top-k /
/// bottom-k pair. The top side reorders the surrogate's feature subset by the
/// primary ranking (stacked SHAP); the bottom side comes from the attention
/// ranking, which covers every original feature.
pub fn explain_global(artifacts: &PipelineArtifacts) -> GlobalExplanation {
    let ranking = &artifacts.ranking;
    let k = ranking.k;
    let m = ranking.input_scores.len();
    let subset = &artifacts.primary().feature_subset;

    // Bottom-k from the tail of the attention-based order, ascending.
    let bottom_k: Vec<FeatureScore> = ranking.order[m - k..]
        .iter()
        .rev()
        .map(|&f| FeatureScore {
            feature: f,
            name: artifacts.feature_names[f].clone(),
            score: ranking.input_scores[f],
        })
        .collect();

    // Table rows: the top-k subset plus the bottom-k features. Methods that
    // never saw a feature score it 0.
    let mut table_features: Vec<usize> = subset.clone();
    for fs in &bottom_k {
        if !table_features.contains(&fs.feature) {
            table_features.push(fs.feature);
        }
    }

    let sensitivity_of = |f: usize| {
        artifacts
            .sensitivity
            .entries
            .iter()
            .find(|e| e.feature == f)
            .map(|e| e.sensitivity)
            .unwrap_or(0.0)
    };
    let subset_pos = |f: usize| subset.iter().position(|&j| j == f);

    let attention_col: Vec<f64> = table_features
        .iter()
        .map(|&f| ranking.input_scores[f])
        .collect();
    let sensitivity_col: Vec<f64> = table_features.iter().map(|&f| sensitivity_of(f)).collect();
    let gini_col: Vec<f64> = table_features
        .iter()
        .map(|&f| subset_pos(f).map_or(0.0, |p| artifacts.gini_importance[p]))
        .collect();
    let shap_col: Vec<f64> = table_features
        .iter()
        .map(|&f| subset_pos(f).map_or(0.0, |p| artifacts.stacked_global.mean_abs[p]))
        .collect();
    let impact_col: Vec<f64> = table_features
        .iter()
        .map(|&f| subset_pos(f).map_or(0.0, |p| artifacts.stacked_global.mean_impact[p]))
        .collect();

    let att_ranks = rank_descending(&attention_col);
    let sens_ranks = rank_descending(&sensitivity_col);
    let gini_ranks = rank_descending(&gini_col);
    let shap_ranks = rank_descending(&shap_col);

    let table: Vec<GlobalTableRow> = table_features
        .iter()
        .enumerate()
        .map(|(i, &f)| GlobalTableRow {
            feature: f,
            name: artifacts.feature_names[f].clone(),
            attention: attention_col[i],
            attention_rank: att_ranks[i],
            sensitivity: sensitivity_col[i],
            sensitivity_rank: sens_ranks[i],
            gini: gini_col[i],
            gini_rank: gini_ranks[i],
            shap: shap_col[i],
            shap_rank: shap_ranks[i],
            mean_impact: impact_col[i],
        })
        .collect();

    // Top-k: the surrogate subset reordered by stacked mean |phi|.
    let mut top_order: Vec<usize> = (0..subset.len()).collect();
    top_order.sort_by(|&a, &b| {
        artifacts.stacked_global.mean_abs[b]
            .total_cmp(&artifacts.stacked_global.mean_abs[a])
            .then(subset[a].cmp(&subset[b]))
    });
    let top_k: Vec<FeatureScore> = top_order
        .into_iter()
        .map(|p| FeatureScore {
            feature: subset[p],
            name: artifacts.feature_names[subset[p]].clone(),
            score: artifacts.stacked_global.mean_abs[p],
        })
        .collect();

    GlobalExplanation {
        schema_version: 1,
        top_k,
        bottom_k,
        table,
        surrogates: artifacts.surrogates.iter().map(|(_, r)| r.clone()).collect(),
        rules: RuleListSummary {
            n_rules: artifacts.rule_list.rules.len(),
            fidelity: artifacts.rules_fidelity,
            mean_confidence: artifacts.rules_mean_confidence,
            default_class: artifacts.class_names[artifacts.rule_list.default_class].clone(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

/// Either explanation kind, for rendering.
pub enum ExplanationDoc<'a> {
    Local(&'a LocalExplanation),
    Global(&'a GlobalExplanation),
}

/// Deterministic rendering of an explanation (no timestamps, stable order).
pub fn render_report(doc: &ExplanationDoc<'_>, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(match doc {
            ExplanationDoc::Local(e) => serde_json::to_string_pretty(e)?,
            ExplanationDoc::Global(e) => serde_json::to_string_pretty(e)?,
        }),
        ReportFormat::Markdown => Ok(match doc {
            ExplanationDoc::Local(e) => render_local_markdown(e),
            ExplanationDoc::Global(e) => render_global_markdown(e),
        }),
    }
}

fn render_local_markdown(e: &LocalExplanation) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Local explanation for instance {}\n\n", e.instance_id));
    out.push_str(&format!(
        "- Black-box prediction: **{}** (p = {:.4})\n",
        e.blackbox.class_name, e.blackbox.probs[e.blackbox.label]
    ));
    out.push_str(&format!(
        "- Surrogate prediction: **{}** (p = {:.4})\n\n",
        e.surrogate.class_name, e.surrogate.probs[e.surrogate.label]
    ));

    out.push_str("## Feature contributions\n\n");
    out.push_str("| feature | impact | importance |\n|---|---|---|\n");
    for (i, name) in e.feature_names.iter().enumerate() {
        out.push_str(&format!(
            "| {} | {:+.4} | {:.4} |\n",
            name, e.impacts.values[i], e.importance.values[i]
        ));
    }

    out.push_str("\n## Fired rule\n\n");
    out.push_str(&format!("`{}`\n", e.fired_rule.render(&e.class_names)));

    out.push_str("\n## Counterfactual rules\n\n");
    if e.counterfactuals.is_empty() {
        out.push_str("no counterfactual found\n");
    } else {
        for cf in &e.counterfactuals {
            let antecedent = cf
                .predicates
                .iter()
                .map(|p| p.render())
                .collect::<Vec<_>>()
                .join(" AND ");
            out.push_str(&format!(
                "- flip `{}` -> {}\n",
                antecedent, e.class_names[cf.flipped_class]
            ));
        }
    }

    out.push_str("\n## What-if (leave one feature out)\n\n");
    out.push_str("| feature | delta(prob of predicted class) | label flips |\n|---|---|---|\n");
    for (i, w) in e.what_if.iter().enumerate() {
        out.push_str(&format!(
            "| {} | {:+.4} | {} |\n",
            e.feature_names[i],
            w.delta[e.surrogate.label],
            if w.label_flipped { "yes" } else { "no" }
        ));
    }
    out
}

fn render_global_markdown(e: &GlobalExplanation) -> String {
    let mut out = String::new();
    out.push_str("# Global explanation\n\n## Top-k features (primary ranking: stacked SHAP)\n\n");
    for fs in &e.top_k {
        out.push_str(&format!("1. {} ({:.6})\n", fs.name, fs.score));
    }
    out.push_str("\n## Bottom-k features (attention ranking, ascending)\n\n");
    for fs in &e.bottom_k {
        out.push_str(&format!("1. {} ({:.6})\n", fs.name, fs.score));
    }
    out.push_str("\n## Per-method scores\n\n");
    out.push_str("| feature | attention | rank | sensitivity | rank | gini | rank | stacked SHAP | rank | mean impact |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for r in &e.table {
        out.push_str(&format!(
            "| {} | {:.6} | {} | {:.6} | {} | {:.6} | {} | {:.6} | {} | {:+.6} |\n",
            r.name,
            r.attention,
            r.attention_rank,
            r.sensitivity,
            r.sensitivity_rank,
            r.gini,
            r.gini_rank,
            r.shap,
            r.shap_rank,
            r.mean_impact
        ));
    }
    out.push_str("\n## Surrogates\n\n| kind | R^2 | agreement | verdict |\n|---|---|---|---|\n");
    for s in &e.surrogates {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:?} |\n",
            s.kind, s.r_squared, s.agreement, s.verdict
        ));
    }
    out.push_str(&format!(
        "\n## Rule list\n\n{} rules, fidelity {:.4} vs primary surrogate, mean confidence {:.4}, default class {}\n",
        e.rules.n_rules, e.rules.fidelity, e.rules.mean_confidence, e.rules.default_class
    ));
    out
}
