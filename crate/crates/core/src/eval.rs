//! Group metrics, the multi-seed experiment harness, and block-masking
//! explanations.
//!
//! Accuracy is reported three ways: per group, as the unweighted mean over
//! nonempty groups ("average"), and example-weighted ("overall"). The worst
//! group is the robustness headline; the harness runs any registered method
//! across seeds and reports mean and sample standard deviation per metric.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, EnsembleFit, ErmConfig, Method, ProdenConfig};
use crate::bilevel::{self, BilevelProblem, DiagnosticsReport, TrainConfig, TrainError};
use crate::data::{AnnotatedExample, DataError, LabeledExample};
use crate::losses::{LossError, OuterRisk};
use crate::math;
use crate::models::{self, ModelError, ModelSpec, ParamVector, Prediction};

/// Seeds used when a caller does not choose their own: three repetitions.
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("bad evaluation setup: {0}")]
    Config(&'static str),
    #[error("blocks do not partition the feature space: {0}")]
    BadPartition(&'static str),
    #[error("truth sidecar is missing ids: {missing:?}")]
    MissingTruth { missing: Vec<String> },
    #[error("run of '{method}' with seed {seed} failed: {source}")]
    Run {
        method: &'static str,
        seed: u64,
        source: Box<EvalError>,
    },
}

/// Accuracy decomposed over groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    /// Accuracy per group; None for groups absent from the set.
    pub per_group: Vec<Option<f64>>,
    pub group_sizes: Vec<usize>,
    /// Unweighted mean over nonempty groups.
    pub average: f64,
    /// Minimum over nonempty groups.
    pub worst_group: f64,
    /// Example-weighted accuracy.
    pub overall: f64,
}

impl GroupMetrics {
    /// (name, value) pairs in report order.
    pub fn named_values(&self) -> [(&'static str, f64); 3] {
        [
            ("average", self.average),
            ("worst_group", self.worst_group),
            ("overall", self.overall),
        ]
    }
}

/// Group accuracies of an arbitrary hard predictor.
pub fn group_metrics_with<F>(
    mut predict: F,
    test_set: &[LabeledExample],
    group_count: usize,
) -> Result<GroupMetrics, EvalError>
where
    F: FnMut(&[f64]) -> Result<usize, EvalError>,
{
    if test_set.is_empty() {
        return Err(EvalError::Config("metrics need a nonempty test set"));
    }
    if group_count == 0 {
        return Err(EvalError::Config("group count must be positive"));
    }
    let mut correct = alloc::vec![0usize; group_count];
    let mut sizes = alloc::vec![0usize; group_count];
    let mut correct_total = 0usize;
    for ex in test_set {
        if ex.group >= group_count {
            return Err(EvalError::Data(DataError::GroupRange {
                id: ex.id.clone(),
                value: ex.group,
                group_count,
            }));
        }
        sizes[ex.group] += 1;
        if predict(&ex.features)? == ex.label {
            correct[ex.group] += 1;
            correct_total += 1;
        }
    }
    let per_group: Vec<Option<f64>> = correct
        .iter()
        .zip(&sizes)
        .map(|(&c, &n)| if n == 0 { None } else { Some(c as f64 / n as f64) })
        .collect();
    let present: Vec<f64> = per_group.iter().filter_map(|a| *a).collect();
    let average = present.iter().sum::<f64>() / present.len() as f64;
    let worst_group = present.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GroupMetrics {
        per_group,
        group_sizes: sizes,
        average,
        worst_group,
        overall: correct_total as f64 / test_set.len() as f64,
    })
}

/// Group accuracies of a single softmax model.
pub fn group_metrics(
    spec: &ModelSpec,
    params: &ParamVector,
    test_set: &[LabeledExample],
    group_count: usize,
) -> Result<GroupMetrics, EvalError> {
    group_metrics_with(
        |features| Ok(models::forward(spec, params, features)?.class()),
        test_set,
        group_count,
    )
}

/// What a method run produces: either one softmax model or a voting
/// ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Single(ParamVector),
    Voting(EnsembleFit),
}

impl TrainedModel {
    pub fn predict(&self, spec: &ModelSpec, features: &[f64]) -> Result<usize, EvalError> {
        match self {
            TrainedModel::Single(params) => Ok(models::forward(spec, params, features)?.class()),
            TrainedModel::Voting(fit) => Ok(fit.predict(spec, features)?),
        }
    }

    pub fn metrics(
        &self,
        spec: &ModelSpec,
        test_set: &[LabeledExample],
        group_count: usize,
    ) -> Result<GroupMetrics, EvalError> {
        group_metrics_with(|features| self.predict(spec, features), test_set, group_count)
    }
}

/// The splits and counts every method runs against.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkData<'a> {
    pub train: &'a [AnnotatedExample],
    pub val: &'a [LabeledExample],
    pub test: &'a [LabeledExample],
    pub group_count: usize,
    pub annotator_count: usize,
}

/// Agreement-reweighted voting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmSettings {
    pub iterations: usize,
    pub epsilon: f64,
}

impl Default for PmSettings {
    fn default() -> Self {
        Self {
            iterations: 20,
            epsilon: 1e-3,
        }
    }
}

/// Label-model EM settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelModelSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LabelModelSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Everything needed to run any registered method: model shapes plus each
/// family's training settings. Per-run seeds override the seeds stored in
/// the sub-configs, and the bi-level outer risk is chosen by the method id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub classifier: ModelSpec,
    pub estimator: ModelSpec,
    pub bilevel: TrainConfig,
    pub erm: ErmConfig,
    pub proden: ProdenConfig,
    pub pm: PmSettings,
    pub label_model: LabelModelSettings,
    /// Tail fraction for the `bilevel-cvar` method.
    pub cvar_alpha: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            classifier: ModelSpec::linear(10, 2),
            estimator: ModelSpec::linear(10, 6),
            bilevel: TrainConfig::default(),
            erm: ErmConfig::default(),
            proden: ProdenConfig::default(),
            pm: PmSettings::default(),
            label_model: LabelModelSettings::default(),
            cvar_alpha: 0.3,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self, data: &BenchmarkData) -> Result<(), EvalError> {
        self.classifier.validate().map_err(EvalError::Model)?;
        self.estimator.validate().map_err(EvalError::Model)?;
        if self.estimator.output_dim != data.annotator_count {
            return Err(EvalError::Config(
                "estimator output dimension must equal the annotator count",
            ));
        }
        if self.classifier.input_dim != self.estimator.input_dim {
            return Err(EvalError::Config(
                "classifier and estimator must share the input dimension",
            ));
        }
        if !(self.cvar_alpha > 0.0 && self.cvar_alpha <= 1.0) {
            return Err(EvalError::Config("tail fraction must lie in (0, 1]"));
        }
        self.bilevel.validate().map_err(EvalError::Train)?;
        self.erm.validate().map_err(EvalError::Baseline)?;
        Ok(())
    }
}

/// One method trained with one seed, already evaluated on the test split.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub model: TrainedModel,
    pub metrics: GroupMetrics,
    /// Bi-level methods only.
    pub diagnostics: Option<DiagnosticsReport>,
    /// Bi-level methods only: the trained annotator-weight estimator.
    pub estimator: Option<ParamVector>,
    /// Aggregation methods only.
    pub kept_fraction: Option<f64>,
    /// Label model only: fraction of posterior argmaxes outside the votes.
    pub escape_rate: Option<f64>,
}

/// Trains one method with one seed and evaluates it on the test split.
pub fn run_method(
    method: Method,
    plan: &ExperimentPlan,
    data: &BenchmarkData,
    seed: u64,
) -> Result<MethodRun, EvalError> {
    plan.validate(data)?;
    let erm = ErmConfig {
        seed,
        ..plan.erm.clone()
    };
    let mut run = MethodRun {
        method,
        seed,
        model: TrainedModel::Single(ParamVector::zeros(&plan.classifier)),
        metrics: GroupMetrics {
            per_group: Vec::new(),
            group_sizes: Vec::new(),
            average: 0.0,
            worst_group: 0.0,
            overall: 0.0,
        },
        diagnostics: None,
        estimator: None,
        kept_fraction: None,
        escape_rate: None,
    };
    match method {
        Method::Bilevel | Method::BilevelCvar => {
            let problem = BilevelProblem {
                classifier: &plan.classifier,
                estimator: &plan.estimator,
                group_count: data.group_count,
            };
            let mut config = TrainConfig {
                seed,
                ..plan.bilevel.clone()
            };
            config.outer = if method == Method::Bilevel {
                OuterRisk::Groupdro
            } else {
                OuterRisk::Cvar {
                    alpha: plan.cvar_alpha,
                }
            };
            let outcome = bilevel::train(&problem, data.train, data.val, &config)?;
            run.model = TrainedModel::Single(outcome.theta);
            run.estimator = Some(outcome.w);
            run.diagnostics = Some(outcome.diagnostics);
        }
        Method::Mv => {
            let agg = baselines::mv_aggregate(data.train);
            run.kept_fraction = Some(agg.kept_fraction);
            run.model = TrainedModel::Single(
                baselines::train_on_aggregated(&agg, &plan.classifier, &erm)?.params,
            );
        }
        Method::Pm => {
            let (agg, _) = baselines::pm_aggregate(
                data.train,
                data.annotator_count,
                plan.pm.iterations,
                plan.pm.epsilon,
            )?;
            run.kept_fraction = Some(agg.kept_fraction);
            run.model = TrainedModel::Single(
                baselines::train_on_aggregated(&agg, &plan.classifier, &erm)?.params,
            );
        }
        Method::Consensus => {
            let agg = baselines::consensus_filter(data.train);
            run.kept_fraction = Some(agg.kept_fraction);
            run.model = TrainedModel::Single(
                baselines::train_on_aggregated(&agg, &plan.classifier, &erm)?.params,
            );
        }
        Method::LabelModel => {
            let (agg, fit) = baselines::label_model_aggregate(
                data.train,
                plan.classifier.output_dim,
                data.annotator_count,
                plan.label_model.max_iters,
                plan.label_model.tol,
            )?;
            run.kept_fraction = Some(agg.kept_fraction);
            run.escape_rate = Some(fit.escape_rate());
            run.model = TrainedModel::Single(
                baselines::train_on_aggregated(&agg, &plan.classifier, &erm)?.params,
            );
        }
        Method::Ensemble => {
            run.model = TrainedModel::Voting(baselines::train_ensemble(
                data.train,
                data.annotator_count,
                &plan.classifier,
                &erm,
            )?);
        }
        Method::AvgLabel => {
            run.model = TrainedModel::Single(
                baselines::average_label_train(data.train, &plan.classifier, &erm)?.params,
            );
        }
        Method::Proden => {
            let config = ProdenConfig {
                seed,
                ..plan.proden.clone()
            };
            run.model = TrainedModel::Single(
                baselines::proden_train(data.train, &plan.classifier, &config)?.params,
            );
        }
        Method::VanillaSoft => {
            run.model = TrainedModel::Single(
                baselines::vanilla_soft_train(data.train, &plan.classifier, &erm)?.params,
            );
        }
        Method::ErmDro => {
            run.model = TrainedModel::Single(
                baselines::erm_groupdro_validation(
                    data.val,
                    &plan.classifier,
                    data.group_count,
                    &erm,
                )?
                .params,
            );
        }
    }
    run.metrics = run.model.metrics(&plan.classifier, data.test, data.group_count)?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// One method across seeds: the individual runs plus mean and sample
/// standard deviation (n-1 denominator, 0 for a single seed) per metric.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub method: Method,
    pub runs: Vec<MethodRun>,
    pub summaries: Vec<MetricSummary>,
}

pub fn run_experiment(
    method: Method,
    plan: &ExperimentPlan,
    data: &BenchmarkData,
    seeds: &[u64],
) -> Result<ExperimentSummary, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Config("experiments need at least one seed"));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = run_method(method, plan, data, seed).map_err(|e| EvalError::Run {
            method: method.id(),
            seed,
            source: Box::new(e),
        })?;
        runs.push(run);
    }
    let summaries = (0..3)
        .map(|k| {
            let name = runs[0].metrics.named_values()[k].0;
            let values: Vec<f64> = runs
                .iter()
                .map(|r| r.metrics.named_values()[k].1)
                .collect();
            let (mean, std) = math::mean_std(&values);
            MetricSummary {
                metric: String::from(name),
                mean,
                std,
            }
        })
        .collect();
    Ok(ExperimentSummary {
        method,
        runs,
        summaries,
    })
}

/// A named contiguous slice of feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureBlock {
    pub name: String,
    /// First feature index of the block.
    pub start: usize,
    /// One past the last feature index.
    pub end: usize,
}

/// What masked features are replaced with.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskBaseline {
    /// Replace with zeros.
    Zero,
    /// Replace with the matching entries of a reference vector (typically
    /// the dataset mean).
    Reference(Vec<f64>),
}

/// Per-block logit attributions for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationReport {
    pub base: Prediction,
    /// Class whose logit the importances track: the base argmax.
    pub base_class: usize,
    /// Importance per block, aligned with the input blocks: base-class logit
    /// on the original input minus the same logit with the block masked.
    pub importances: Vec<f64>,
    /// Block indices by descending importance, ties to the lower index.
    pub ranking: Vec<usize>,
}

fn check_partition(blocks: &[FeatureBlock], dim: usize) -> Result<(), EvalError> {
    if blocks.is_empty() {
        return Err(EvalError::BadPartition("no blocks given"));
    }
    let mut order: Vec<&FeatureBlock> = blocks.iter().collect();
    order.sort_by_key(|b| b.start);
    let mut expected = 0;
    for block in order {
        if block.end <= block.start {
            return Err(EvalError::BadPartition("a block is empty or reversed"));
        }
        if block.start != expected {
            return Err(EvalError::BadPartition(
                "blocks overlap or leave a gap in the feature indices",
            ));
        }
        expected = block.end;
    }
    if expected != dim {
        return Err(EvalError::BadPartition("blocks do not end at the feature dimension"));
    }
    Ok(())
}

/// Masks each block in turn and reports how much the base argmax-class logit
/// drops.
pub fn block_mask_explain(
    spec: &ModelSpec,
    params: &ParamVector,
    features: &[f64],
    blocks: &[FeatureBlock],
    baseline: &MaskBaseline,
) -> Result<ExplanationReport, EvalError> {
    check_partition(blocks, spec.input_dim)?;
    if let MaskBaseline::Reference(reference) = baseline {
        if reference.len() != spec.input_dim {
            return Err(EvalError::Config(
                "mask reference must match the feature dimension",
            ));
        }
    }
    let base = models::forward(spec, params, features)?;
    let base_class = base.class();
    let mut importances = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut masked = features.to_vec();
        for i in block.start..block.end {
            masked[i] = match baseline {
                MaskBaseline::Zero => 0.0,
                MaskBaseline::Reference(reference) => reference[i],
            };
        }
        let masked_pred = models::forward(spec, params, &masked)?;
        importances.push(base.logits[base_class] - masked_pred.logits[base_class]);
    }
    let mut ranking: Vec<usize> = (0..blocks.len()).collect();
    ranking.sort_by(|&a, &b| {
        importances[b]
            .partial_cmp(&importances[a])
            .expect("importances are finite")
            .then(a.cmp(&b))
    });
    Ok(ExplanationReport {
        base,
        base_class,
        importances,
        ranking,
    })
}

/// Per-annotator audit against a ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Agreement rate with the truth, per annotator.
    pub annotator_accuracy: Vec<f64>,
    /// Fraction of examples whose candidate set contains the truth.
    pub truth_in_candidates: f64,
    pub example_count: usize,
}

pub fn annotation_agreement_report(
    dataset: &[AnnotatedExample],
    truth: &[LabeledExample],
    annotator_count: usize,
) -> Result<AgreementReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Config("agreement report needs a nonempty dataset"));
    }
    let lookup: alloc::collections::BTreeMap<&str, usize> = truth
        .iter()
        .map(|ex| (ex.id.as_str(), ex.label))
        .collect();
    let missing: Vec<String> = dataset
        .iter()
        .filter(|ex| !lookup.contains_key(ex.id.as_str()))
        .map(|ex| ex.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingTruth { missing });
    }
    let mut agree = alloc::vec![0usize; annotator_count];
    let mut contained = 0usize;
    for ex in dataset {
        if ex.annotations.len() != annotator_count {
            return Err(EvalError::Config(
                "example has a different annotation count than the report expects",
            ));
        }
        let label = lookup[ex.id.as_str()];
        for (j, &vote) in ex.annotations.iter().enumerate() {
            if vote == label {
                agree[j] += 1;
            }
        }
        if ex.annotations.contains(&label) {
            contained += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(AgreementReport {
        annotator_accuracy: agree.iter().map(|&a| a as f64 / n).collect(),
        truth_in_candidates: contained as f64 / n,
        example_count: dataset.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_spurious, SpuriousConfig};
    use alloc::string::ToString;
    use alloc::vec;

    fn labeled(id: &str, features: Vec<f64>, label: usize, group: usize) -> LabeledExample {
        LabeledExample {
            id: id.to_string(),
            features,
            label,
            group,
        }
    }

    /// A sign classifier: positive feature -> class 1.
    fn sign_model() -> (ModelSpec, ParamVector) {
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::from_values(&spec, vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        (spec, params)
    }

    #[test]
    fn group_metrics_match_hand_arithmetic() {
        let (spec, params) = sign_model();
        // Three groups of 10: 9, 6, and 8 correct respectively. Correct
        // means feature sign matches the label.
        let mut set = Vec::new();
        for (group, correct) in [(0usize, 9usize), (1, 6), (2, 8)] {
            for i in 0..10 {
                let label = i % 2;
                let sign = if i < correct { 1.0 } else { -1.0 };
                let x = (2.0 * label as f64 - 1.0) * sign;
                set.push(labeled(&alloc::format!("g{group}e{i}"), vec![x], label, group));
            }
        }
        let metrics = group_metrics(&spec, &params, &set, 3).unwrap();
        assert_eq!(metrics.per_group, vec![Some(0.9), Some(0.6), Some(0.8)]);
        assert_eq!(metrics.group_sizes, vec![10, 10, 10]);
        assert!((metrics.average - 0.7666666666666667).abs() < 1e-12);
        assert_eq!(metrics.worst_group, 0.6);
        assert!((metrics.overall - 23.0 / 30.0).abs() < 1e-12);
        assert!(metrics.worst_group <= metrics.average);
    }

    #[test]
    fn group_metrics_skip_absent_groups_and_handle_perfection() {
        let (spec, params) = sign_model();
        let set = vec![
            labeled("a", vec![-1.0], 0, 0),
            labeled("b", vec![1.0], 1, 0),
            labeled("c", vec![2.0], 1, 2),
        ];
        let metrics = group_metrics(&spec, &params, &set, 4).unwrap();
        assert_eq!(metrics.per_group, vec![Some(1.0), None, Some(1.0), None]);
        assert_eq!(metrics.average, 1.0);
        assert_eq!(metrics.worst_group, 1.0);
        assert_eq!(metrics.overall, 1.0);
    }

    #[test]
    fn group_metrics_are_order_invariant() {
        let (spec, params) = sign_model();
        let mut set = vec![
            labeled("a", vec![-1.0], 0, 0),
            labeled("b", vec![1.0], 0, 1),
            labeled("c", vec![-2.0], 1, 1),
            labeled("d", vec![0.5], 1, 0),
            labeled("e", vec![-0.1], 0, 2),
        ];
        let forward = group_metrics(&spec, &params, &set, 3).unwrap();
        set.reverse();
        let backward = group_metrics(&spec, &params, &set, 3).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn single_group_collapses_all_aggregates() {
        let (spec, params) = sign_model();
        let set = vec![
            labeled("a", vec![-1.0], 0, 0),
            labeled("b", vec![1.0], 1, 0),
            labeled("c", vec![-1.0], 1, 0),
            labeled("d", vec![1.0], 1, 0),
        ];
        let metrics = group_metrics(&spec, &params, &set, 1).unwrap();
        assert_eq!(metrics.average, 0.75);
        assert_eq!(metrics.worst_group, 0.75);
        assert_eq!(metrics.overall, 0.75);
    }

    #[test]
    fn partition_validation_catches_gaps_overlaps_and_overruns() {
        let block = |name: &str, start, end| FeatureBlock {
            name: name.to_string(),
            start,
            end,
        };
        let spec = ModelSpec::linear(4, 2);
        let params = ParamVector::zeros(&spec);
        let x = [0.0; 4];
        let bad = [
            vec![block("a", 0, 2)],                     // stops short
            vec![block("a", 0, 2), block("b", 3, 4)],   // gap
            vec![block("a", 0, 3), block("b", 2, 4)],   // overlap
            vec![block("a", 0, 2), block("b", 2, 5)],   // overruns
            vec![block("a", 0, 0), block("b", 0, 4)],   // empty block
            vec![],
        ];
        for blocks in &bad {
            assert!(
                matches!(
                    block_mask_explain(&spec, &params, &x, blocks, &MaskBaseline::Zero),
                    Err(EvalError::BadPartition(_))
                ),
                "{blocks:?}"
            );
        }
        let good = [block("a", 0, 2), block("b", 2, 4)];
        block_mask_explain(&spec, &params, &x, &good, &MaskBaseline::Zero).unwrap();
    }

    #[test]
    fn masking_matches_the_linear_closed_form() {
        let spec = ModelSpec::linear(3, 2);
        let params =
            ParamVector::from_values(&spec, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75, 0.1, -0.2])
                .unwrap();
        let x = [0.8, -0.4, 1.2];
        let blocks = [
            FeatureBlock {
                name: "left".to_string(),
                start: 0,
                end: 2,
            },
            FeatureBlock {
                name: "right".to_string(),
                start: 2,
                end: 3,
            },
        ];
        let report =
            block_mask_explain(&spec, &params, &x, &blocks, &MaskBaseline::Zero).unwrap();
        // For a linear model, masking block B changes the class-k logit by
        // sum over i in B of W[k][i] * x_i.
        let weights: [[f64; 3]; 2] = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let k = report.base_class;
        let expected_left: f64 = (0..2).map(|i| weights[k][i] * x[i]).sum();
        let expected_right: f64 = weights[k][2] * x[2];
        assert!((report.importances[0] - expected_left).abs() < 1e-12);
        assert!((report.importances[1] - expected_right).abs() < 1e-12);

        // A reference baseline equal to x on a block zeroes its importance.
        let keep_left = MaskBaseline::Reference(vec![0.8, -0.4, 0.0]);
        let kept =
            block_mask_explain(&spec, &params, &x, &blocks, &keep_left).unwrap();
        assert_eq!(kept.importances[0], 0.0);

        // Ranking is a permutation ordered by descending importance.
        let mut sorted = report.ranking.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1]);
        let r = &report.ranking;
        assert!(report.importances[r[0]] >= report.importances[r[1]]);
    }

    #[test]
    fn agreement_report_scores_identity_and_adversarial_annotators() {
        let dataset = vec![
            AnnotatedExample {
                id: "a".to_string(),
                features: vec![],
                annotations: vec![0, 1],
            },
            AnnotatedExample {
                id: "b".to_string(),
                features: vec![],
                annotations: vec![1, 0],
            },
        ];
        let truth = vec![
            labeled("a", vec![], 0, 0),
            labeled("b", vec![], 1, 0),
        ];
        let report = annotation_agreement_report(&dataset, &truth, 2).unwrap();
        assert_eq!(report.annotator_accuracy, vec![1.0, 0.0]);
        assert_eq!(report.truth_in_candidates, 1.0);
        assert_eq!(report.example_count, 2);

        let partial_truth = vec![labeled("a", vec![], 0, 0)];
        let err = annotation_agreement_report(&dataset, &partial_truth, 2).unwrap_err();
        match err {
            EvalError::MissingTruth { missing } => assert_eq!(missing, vec!["b".to_string()]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn agreement_report_recovers_designed_reliability() {
        let bench = generate_spurious(&SpuriousConfig {
            train_size: 2000,
            val_size: 10,
            test_size: 10,
            seed: 19,
            ..SpuriousConfig::default()
        })
        .unwrap();
        let report = annotation_agreement_report(&bench.train, &bench.train_truth, 6).unwrap();
        assert!((report.annotator_accuracy[0] - 0.9).abs() < 0.035);
        assert!((report.annotator_accuracy[1] - 0.8).abs() < 0.035);
        assert!((report.annotator_accuracy[2] - 0.7).abs() < 0.035);
        assert_eq!(report.truth_in_candidates, 1.0);
    }

    fn small_bench() -> crate::synth::SpuriousBenchmark {
        generate_spurious(&SpuriousConfig {
            train_size: 150,
            val_size: 60,
            test_size: 80,
            seed: 13,
            ..SpuriousConfig::default()
        })
        .unwrap()
    }

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            classifier: ModelSpec::linear(10, 2),
            estimator: ModelSpec::linear(10, 6),
            bilevel: TrainConfig {
                steps: 25,
                batch_train: 32,
                batch_val: 32,
                ..TrainConfig::default()
            },
            erm: ErmConfig {
                steps: 40,
                ..ErmConfig::default()
            },
            proden: ProdenConfig {
                epochs: 3,
                steps_per_epoch: 12,
                ..ProdenConfig::default()
            },
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn every_registered_method_runs_end_to_end() {
        let bench = small_bench();
        let data = BenchmarkData {
            train: &bench.train,
            val: &bench.val,
            test: &bench.test,
            group_count: bench.group_count,
            annotator_count: 6,
        };
        let plan = small_plan();
        for method in Method::ALL {
            let run = run_method(method, &plan, &data, 1).unwrap();
            assert!(run.metrics.overall.is_finite(), "{method:?}");
            assert!(run.metrics.overall > 0.3, "{method:?}: {}", run.metrics.overall);
            assert_eq!(run.metrics.per_group.len(), 4);
            match method {
                Method::Bilevel | Method::BilevelCvar => {
                    let diag = run.diagnostics.as_ref().unwrap();
                    assert_eq!(diag.risk_trace.len(), 25);
                    assert!(run.estimator.is_some());
                }
                Method::Ensemble => {
                    assert!(matches!(&run.model, TrainedModel::Voting(f) if f.members.len() == 6));
                }
                Method::Consensus => {
                    let kept = run.kept_fraction.unwrap();
                    assert!(kept > 0.0 && kept < 1.0, "{kept}");
                }
                Method::LabelModel => {
                    assert!(run.escape_rate.is_some());
                }
                _ => {}
            }
        }
    }

    #[test]
    fn experiments_aggregate_runs_deterministically() {
        let bench = small_bench();
        let data = BenchmarkData {
            train: &bench.train,
            val: &bench.val,
            test: &bench.test,
            group_count: bench.group_count,
            annotator_count: 6,
        };
        let plan = small_plan();
        let summary = run_experiment(Method::Mv, &plan, &data, &[0, 1, 2]).unwrap();
        assert_eq!(summary.runs.len(), 3);
        assert_eq!(summary.summaries.len(), 3);
        for (k, row) in summary.summaries.iter().enumerate() {
            let values: Vec<f64> = summary
                .runs
                .iter()
                .map(|r| r.metrics.named_values()[k].1)
                .collect();
            let (mean, std) = math::mean_std(&values);
            assert_eq!(row.mean, mean);
            assert_eq!(row.std, std);
        }

        // Identical seeds produce identical runs and zero spread.
        let repeated = run_experiment(Method::Mv, &plan, &data, &[7, 7]).unwrap();
        for row in &repeated.summaries {
            assert_eq!(row.std, 0.0);
        }

        assert!(run_experiment(Method::Mv, &plan, &data, &[]).is_err());
    }

    #[test]
    fn failed_runs_carry_method_and_seed_context() {
        let bench = small_bench();
        let data = BenchmarkData {
            train: &bench.train,
            val: &bench.val,
            test: &bench.test,
            group_count: bench.group_count,
            annotator_count: 6,
        };
        let mut plan = small_plan();
        plan.erm.step_size = f64::INFINITY;
        let err = run_experiment(Method::Mv, &plan, &data, &[4]).unwrap_err();
        match err {
            EvalError::Run { method, seed, .. } => {
                assert_eq!(method, "mv");
                assert_eq!(seed, 4);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
