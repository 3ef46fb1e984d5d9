//! Soft labels over annotator votes, the soft-label training loss, and the
//! outer risks (worst-group, loss-tail, and plain average) evaluated on
//! trusted labeled data.
//!
//! Cross-entropies are computed from logits via log-sum-exp, never by taking
//! logs of softmax outputs, so extreme logits stay finite.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AnnotatedExample, LabeledExample};
use crate::math;
use crate::models::{self, ModelError, ModelSpec, ParamVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("expected {expected} soft labels for the batch, got {got}")]
    SoftLabelCount { expected: usize, got: usize },
    #[error("annotations ({annotations}) and weights ({weights}) differ in length")]
    WeightCount { annotations: usize, weights: usize },
    #[error("annotation {value} out of range for {class_count} classes")]
    AnnotationRange { value: usize, class_count: usize },
    #[error("label {value} out of range for {class_count} classes")]
    LabelRange { value: usize, class_count: usize },
    #[error("group {value} out of range for {group_count} groups")]
    GroupRange { value: usize, group_count: usize },
    #[error("soft label must be nonnegative and sum to 1, got sum {sum}")]
    NotAProbability { sum: f64 },
    #[error("soft label over {got} classes where the model outputs {expected}")]
    ClassCount { expected: usize, got: usize },
    #[error("tail fraction must be in (0, 1], got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error("group count must be positive")]
    NoGroups,
}

/// A distribution over classes used as a training target.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probabilities: Vec<f64>,
}

impl SoftLabel {
    /// Requires nonnegative entries summing to 1 within 1e-9.
    pub fn new(probabilities: Vec<f64>) -> Result<Self, LossError> {
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::NotAProbability { sum });
        }
        Ok(Self { probabilities })
    }

    pub fn one_hot(class: usize, class_count: usize) -> Result<Self, LossError> {
        if class >= class_count {
            return Err(LossError::LabelRange {
                value: class,
                class_count,
            });
        }
        let mut probabilities = vec![0.0; class_count];
        probabilities[class] = 1.0;
        Ok(Self { probabilities })
    }

    /// Uniform over a nonempty set of distinct classes.
    pub fn uniform_over(classes: &[usize], class_count: usize) -> Result<Self, LossError> {
        if classes.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        let mut probabilities = vec![0.0; class_count];
        let share = 1.0 / classes.len() as f64;
        for &c in classes {
            if c >= class_count {
                return Err(LossError::LabelRange {
                    value: c,
                    class_count,
                });
            }
            probabilities[c] += share;
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn class_count(&self) -> usize {
        self.probabilities.len()
    }

    /// Most probable class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        math::argmax(&self.probabilities)
    }
}

/// Collapses one example's votes into a soft label: class c receives the
/// total weight of the annotators that voted c. Weights are the annotator
/// distribution for this example (nonnegative, summing to 1), so the result
/// is a distribution supported on the voted classes.
pub fn soft_label_aggregate(
    annotations: &[usize],
    weights: &[f64],
    class_count: usize,
) -> Result<SoftLabel, LossError> {
    if annotations.len() != weights.len() {
        return Err(LossError::WeightCount {
            annotations: annotations.len(),
            weights: weights.len(),
        });
    }
    let mut probabilities = vec![0.0; class_count];
    for (&a, &w) in annotations.iter().zip(weights) {
        if a >= class_count {
            return Err(LossError::AnnotationRange {
                value: a,
                class_count,
            });
        }
        probabilities[a] += w;
    }
    SoftLabel::new(probabilities)
}

/// -sum_c target_c log softmax(logits)_c, via log-sum-exp.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(logits.len(), target.len());
    math::log_sum_exp(logits) - math::dot(logits, target)
}

/// Cross-entropy against a single gold class.
pub fn hard_cross_entropy(logits: &[f64], class: usize) -> f64 {
    debug_assert!(class < logits.len());
    math::log_sum_exp(logits) - logits[class]
}

fn check_soft_batch(
    spec: &ModelSpec,
    batch: &[AnnotatedExample],
    soft_labels: &[SoftLabel],
) -> Result<(), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if batch.len() != soft_labels.len() {
        return Err(LossError::SoftLabelCount {
            expected: batch.len(),
            got: soft_labels.len(),
        });
    }
    for label in soft_labels {
        if label.class_count() != spec.output_dim {
            return Err(LossError::ClassCount {
                expected: spec.output_dim,
                got: label.class_count(),
            });
        }
    }
    Ok(())
}

/// Mean soft-label cross-entropy of the classifier over a batch.
pub fn inner_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[AnnotatedExample],
    soft_labels: &[SoftLabel],
) -> Result<f64, LossError> {
    check_soft_batch(spec, batch, soft_labels)?;
    let mut total = 0.0;
    for (ex, label) in batch.iter().zip(soft_labels) {
        let pred = models::forward(spec, params, &ex.features)?;
        total += soft_cross_entropy(&pred.logits, label.probabilities());
    }
    Ok(total / batch.len() as f64)
}

/// Mean soft-label cross-entropy and its parameter gradient in one pass.
pub fn inner_loss_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[AnnotatedExample],
    soft_labels: &[SoftLabel],
) -> Result<(f64, ParamVector), LossError> {
    check_soft_batch(spec, batch, soft_labels)?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad = ParamVector::zeros(spec);
    for (ex, label) in batch.iter().zip(soft_labels) {
        let pred = models::forward(spec, params, &ex.features)?;
        total += soft_cross_entropy(&pred.logits, label.probabilities());
        // d(soft CE)/dlogits = softmax - target
        let dlogits: Vec<f64> = pred
            .probabilities
            .iter()
            .zip(label.probabilities())
            .map(|(p, t)| p - t)
            .collect();
        grad.add_scaled(scale, &models::grad_params(spec, params, &ex.features, &dlogits)?);
    }
    Ok((total * scale, grad))
}

/// A robust risk evaluation: the scalar plus how it decomposed.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskValue {
    pub value: f64,
    /// Mean loss per group; None for groups absent from the batch.
    pub per_group: Vec<Option<f64>>,
    pub group_sizes: Vec<usize>,
    /// Worst-group risk: the group attaining the max (lowest index on ties).
    pub argmax_group: Option<usize>,
    /// Tail risk: the examples in the tail average, ascending by index.
    pub active_set: Option<Vec<usize>>,
}

fn check_labeled_batch(
    spec: &ModelSpec,
    batch: &[LabeledExample],
    group_count: usize,
) -> Result<(), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    for ex in batch {
        if ex.label >= spec.output_dim {
            return Err(LossError::LabelRange {
                value: ex.label,
                class_count: spec.output_dim,
            });
        }
        if ex.group >= group_count {
            return Err(LossError::GroupRange {
                value: ex.group,
                group_count,
            });
        }
    }
    Ok(())
}

fn per_example_losses(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
) -> Result<Vec<f64>, LossError> {
    batch
        .iter()
        .map(|ex| {
            let pred = models::forward(spec, params, &ex.features)?;
            Ok(hard_cross_entropy(&pred.logits, ex.label))
        })
        .collect()
}

fn group_means(
    losses: &[f64],
    batch: &[LabeledExample],
    group_count: usize,
) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut sums = vec![0.0; group_count];
    let mut sizes = vec![0usize; group_count];
    for (loss, ex) in losses.iter().zip(batch) {
        sums[ex.group] += loss;
        sizes[ex.group] += 1;
    }
    let means = sums
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| if n > 0 { Some(s / n as f64) } else { None })
        .collect();
    (means, sizes)
}

/// Worst mean loss over the groups present in the batch. Absent groups are
/// skipped; ties go to the lowest group index.
pub fn groupdro_risk(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
    group_count: usize,
) -> Result<RiskValue, LossError> {
    if group_count == 0 {
        return Err(LossError::NoGroups);
    }
    check_labeled_batch(spec, batch, group_count)?;
    let losses = per_example_losses(spec, params, batch)?;
    let (per_group, group_sizes) = group_means(&losses, batch, group_count);
    let mut argmax: Option<usize> = None;
    let mut best_mean = f64::NEG_INFINITY;
    for (g, mean) in per_group.iter().enumerate() {
        if let Some(m) = *mean {
            if argmax.is_none() || m > best_mean {
                argmax = Some(g);
                best_mean = m;
            }
        }
    }
    let g = argmax.expect("nonempty batch has at least one group");
    Ok(RiskValue {
        value: best_mean,
        per_group,
        group_sizes,
        argmax_group: Some(g),
        active_set: None,
    })
}

/// Worst-group risk and its subgradient: the mean cross-entropy gradient of
/// the argmax group's examples.
pub fn groupdro_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
    group_count: usize,
) -> Result<(RiskValue, ParamVector), LossError> {
    let risk = groupdro_risk(spec, params, batch, group_count)?;
    let g = risk.argmax_group.expect("worst-group risk has an argmax");
    let mut grad = ParamVector::zeros(spec);
    let scale = 1.0 / risk.group_sizes[g] as f64;
    for ex in batch.iter().filter(|ex| ex.group == g) {
        let pred = models::forward(spec, params, &ex.features)?;
        let mut dlogits = pred.probabilities;
        dlogits[ex.label] -= 1.0;
        grad.add_scaled(scale, &models::grad_params(spec, params, &ex.features, &dlogits)?);
    }
    Ok((risk, grad))
}

/// Tail selection shared by the CVaR risk: indices and mean of the k largest
/// losses, k = ceil(alpha * n), ties resolved by example order.
fn tail_select(losses: &[f64], alpha: f64) -> (f64, Vec<usize>) {
    let n = losses.len();
    let k = (libm::ceil(alpha * n as f64) as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        losses[b]
            .partial_cmp(&losses[a])
            .expect("losses are finite")
            .then(a.cmp(&b))
    });
    let mut active: Vec<usize> = order[..k].to_vec();
    active.sort_unstable();
    let value = active.iter().map(|&i| losses[i]).sum::<f64>() / k as f64;
    (value, active)
}

/// Mean loss over the worst alpha-fraction of examples (k = ceil(alpha * n)).
/// alpha = 1 recovers the plain mean; groups are reported but play no role in
/// the value.
pub fn cvar_risk(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
    group_count: usize,
    alpha: f64,
) -> Result<RiskValue, LossError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(LossError::InvalidAlpha { alpha });
    }
    check_labeled_batch(spec, batch, group_count)?;
    let losses = per_example_losses(spec, params, batch)?;
    let (per_group, group_sizes) = group_means(&losses, batch, group_count);
    let (value, active) = tail_select(&losses, alpha);
    Ok(RiskValue {
        value,
        per_group,
        group_sizes,
        argmax_group: None,
        active_set: Some(active),
    })
}

/// Tail risk and its subgradient: the mean cross-entropy gradient over the
/// active set.
pub fn cvar_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
    group_count: usize,
    alpha: f64,
) -> Result<(RiskValue, ParamVector), LossError> {
    let risk = cvar_risk(spec, params, batch, group_count, alpha)?;
    let active = risk.active_set.as_ref().expect("tail risk has an active set");
    let mut grad = ParamVector::zeros(spec);
    let scale = 1.0 / active.len() as f64;
    for &i in active {
        let ex = &batch[i];
        let pred = models::forward(spec, params, &ex.features)?;
        let mut dlogits = pred.probabilities;
        dlogits[ex.label] -= 1.0;
        grad.add_scaled(scale, &models::grad_params(spec, params, &ex.features, &dlogits)?);
    }
    Ok((risk, grad))
}

/// Plain mean cross-entropy over the batch.
pub fn erm_risk(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let losses = per_example_losses(spec, params, batch)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean cross-entropy and its gradient.
pub fn erm_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[LabeledExample],
) -> Result<(f64, ParamVector), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad = ParamVector::zeros(spec);
    for ex in batch {
        if ex.label >= spec.output_dim {
            return Err(LossError::LabelRange {
                value: ex.label,
                class_count: spec.output_dim,
            });
        }
        let pred = models::forward(spec, params, &ex.features)?;
        total += hard_cross_entropy(&pred.logits, ex.label);
        let mut dlogits = pred.probabilities;
        dlogits[ex.label] -= 1.0;
        grad.add_scaled(scale, &models::grad_params(spec, params, &ex.features, &dlogits)?);
    }
    Ok((total * scale, grad))
}

/// Which robust risk the outer level of the bi-level trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OuterRisk {
    /// Worst mean loss over groups.
    Groupdro,
    /// Mean loss over the worst alpha-fraction of examples; needs no groups.
    Cvar { alpha: f64 },
}

impl OuterRisk {
    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            OuterRisk::Groupdro => Ok(()),
            OuterRisk::Cvar { alpha } => {
                if alpha > 0.0 && alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(LossError::InvalidAlpha { alpha })
                }
            }
        }
    }

    pub fn evaluate(
        &self,
        spec: &ModelSpec,
        params: &ParamVector,
        batch: &[LabeledExample],
        group_count: usize,
    ) -> Result<RiskValue, LossError> {
        match *self {
            OuterRisk::Groupdro => groupdro_risk(spec, params, batch, group_count),
            OuterRisk::Cvar { alpha } => cvar_risk(spec, params, batch, group_count, alpha),
        }
    }

    pub fn gradient(
        &self,
        spec: &ModelSpec,
        params: &ParamVector,
        batch: &[LabeledExample],
        group_count: usize,
    ) -> Result<(RiskValue, ParamVector), LossError> {
        match *self {
            OuterRisk::Groupdro => groupdro_grad(spec, params, batch, group_count),
            OuterRisk::Cvar { alpha } => cvar_grad(spec, params, batch, group_count, alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use alloc::string::ToString;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn annotated(id: &str, features: Vec<f64>, annotations: Vec<usize>) -> AnnotatedExample {
        AnnotatedExample {
            id: id.to_string(),
            features,
            annotations,
        }
    }

    fn labeled(id: &str, features: Vec<f64>, label: usize, group: usize) -> LabeledExample {
        LabeledExample {
            id: id.to_string(),
            features,
            label,
            group,
        }
    }

    #[test]
    fn aggregate_sums_weights_by_voted_class() {
        let label = soft_label_aggregate(&[0, 1, 0], &[0.5, 0.3, 0.2], 2).unwrap();
        assert_eq!(label.probabilities(), &[0.7, 0.3]);
    }

    #[test]
    fn aggregate_of_unanimous_votes_is_one_hot() {
        let label = soft_label_aggregate(&[2, 2, 2], &[0.2, 0.3, 0.5], 4).unwrap();
        assert_eq!(label.probabilities(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn aggregate_with_single_annotator_is_one_hot_at_its_vote() {
        let label = soft_label_aggregate(&[1], &[1.0], 3).unwrap();
        assert_eq!(label.probabilities(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn aggregate_rejects_malformed_inputs() {
        assert!(matches!(
            soft_label_aggregate(&[0, 1], &[1.0], 2),
            Err(LossError::WeightCount { .. })
        ));
        assert!(matches!(
            soft_label_aggregate(&[0, 2], &[0.5, 0.5], 2),
            Err(LossError::AnnotationRange { value: 2, .. })
        ));
    }

    #[test]
    fn soft_label_validation_rejects_non_distributions() {
        assert!(SoftLabel::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            SoftLabel::new(vec![0.7, 0.7]),
            Err(LossError::NotAProbability { .. })
        ));
        assert!(SoftLabel::new(vec![-0.1, 1.1]).is_err());
        assert!(SoftLabel::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn soft_cross_entropy_matches_hand_values() {
        // lse([1,0]) = 1.3132616875182228
        assert!(close(
            soft_cross_entropy(&[1.0, 0.0], &[0.7, 0.3]),
            0.6132616875182229,
            1e-15
        ));
        assert!(close(hard_cross_entropy(&[1.0, 0.0], 1), 1.3132616875182228, 1e-15));
        // A perfectly confident correct prediction has ~zero loss.
        assert!(hard_cross_entropy(&[100.0, 0.0], 0) < 1e-12);
    }

    #[test]
    fn inner_loss_at_matching_targets_is_the_entropy() {
        // Predictions (sigma(1), 1-sigma(1)); target equal to them.
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::from_values(&spec, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = 0.7310585786300049;
        let batch = [annotated("a", vec![1.0], vec![0, 1])];
        let labels = [SoftLabel::new(vec![p, 1.0 - p]).unwrap()];
        let loss = inner_loss(&spec, &params, &batch, &labels).unwrap();
        assert!(close(loss, 0.5822031088882179, 1e-12));
    }

    #[test]
    fn inner_loss_of_uniform_predictions_is_log_class_count() {
        let spec = ModelSpec::linear(2, 3);
        let params = ParamVector::zeros(&spec);
        let batch = [
            annotated("a", vec![0.5, 1.0], vec![0, 1]),
            annotated("b", vec![-1.0, 0.0], vec![2, 2]),
        ];
        let labels = [
            SoftLabel::one_hot(0, 3).unwrap(),
            SoftLabel::one_hot(2, 3).unwrap(),
        ];
        let loss = inner_loss(&spec, &params, &batch, &labels).unwrap();
        assert!(close(loss, 1.0986122886681098, 1e-12));
    }

    #[test]
    fn inner_loss_checks_batch_consistency() {
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::zeros(&spec);
        assert!(matches!(
            inner_loss(&spec, &params, &[], &[]),
            Err(LossError::EmptyBatch)
        ));
        let batch = [annotated("a", vec![1.0], vec![0])];
        assert!(matches!(
            inner_loss(&spec, &params, &batch, &[]),
            Err(LossError::SoftLabelCount { .. })
        ));
        let wrong = [SoftLabel::one_hot(0, 3).unwrap()];
        assert!(matches!(
            inner_loss(&spec, &params, &batch, &wrong),
            Err(LossError::ClassCount { .. })
        ));
    }

    #[test]
    fn inner_loss_grad_matches_finite_differences() {
        let spec = ModelSpec::mlp(2, 3, 3);
        let params = init_params(&spec, 17).unwrap();
        let batch = [
            annotated("a", vec![0.4, -0.2], vec![0, 1, 0]),
            annotated("b", vec![-1.0, 0.8], vec![2, 2, 1]),
        ];
        let labels = [
            soft_label_aggregate(&[0, 1, 0], &[0.6, 0.3, 0.1], 3).unwrap(),
            soft_label_aggregate(&[2, 2, 1], &[0.2, 0.5, 0.3], 3).unwrap(),
        ];
        let (loss, grad) = inner_loss_grad(&spec, &params, &batch, &labels).unwrap();
        assert!(close(
            loss,
            inner_loss(&spec, &params, &batch, &labels).unwrap(),
            1e-15
        ));
        let step = 1e-5;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[k] += step;
            let mut minus = params.clone();
            minus.values_mut()[k] -= step;
            let fd = (inner_loss(&spec, &plus, &batch, &labels).unwrap()
                - inner_loss(&spec, &minus, &batch, &labels).unwrap())
                / (2.0 * step);
            let a = grad.values()[k];
            assert!(
                (a - fd).abs() <= 1e-9 + 1e-5 * fd.abs().max(a.abs()),
                "param {k}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn groupdro_at_uniform_predictions_gives_log_c_and_lowest_argmax() {
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::zeros(&spec);
        let batch = [
            labeled("a", vec![0.0], 0, 1),
            labeled("b", vec![0.0], 1, 2),
        ];
        let risk = groupdro_risk(&spec, &params, &batch, 4).unwrap();
        assert!(close(risk.value, 0.6931471805599453, 1e-15));
        // Groups 1 and 2 tie at ln 2; group 0 is absent.
        assert_eq!(risk.argmax_group, Some(1));
        assert_eq!(risk.per_group[0], None);
        assert_eq!(risk.group_sizes, vec![0, 1, 1, 0]);
    }

    #[test]
    fn groupdro_matches_a_brute_force_evaluation() {
        let spec = ModelSpec::linear(2, 3);
        let params = init_params(&spec, 3).unwrap();
        let batch = [
            labeled("a", vec![0.1, 0.9], 0, 0),
            labeled("b", vec![-0.4, 0.2], 1, 1),
            labeled("c", vec![0.7, -0.7], 2, 1),
            labeled("d", vec![0.0, 0.3], 0, 2),
            labeled("e", vec![0.2, 0.1], 1, 2),
        ];
        let risk = groupdro_risk(&spec, &params, &batch, 3).unwrap();

        // Oracle: direct per-group means from individual forward passes.
        let mut best = (0usize, f64::NEG_INFINITY);
        for g in 0..3 {
            let members: Vec<&LabeledExample> = batch.iter().filter(|e| e.group == g).collect();
            let mean = members
                .iter()
                .map(|e| {
                    hard_cross_entropy(
                        &models::forward(&spec, &params, &e.features).unwrap().logits,
                        e.label,
                    )
                })
                .sum::<f64>()
                / members.len() as f64;
            assert!(close(risk.per_group[g].unwrap(), mean, 1e-12));
            if mean > best.1 {
                best = (g, mean);
            }
        }
        assert_eq!(risk.argmax_group, Some(best.0));
        assert!(close(risk.value, best.1, 1e-12));
    }

    #[test]
    fn groupdro_grad_matches_finite_differences_away_from_ties() {
        let spec = ModelSpec::linear(2, 2);
        let params = init_params(&spec, 8).unwrap();
        let batch = [
            labeled("a", vec![2.0, 0.4], 0, 0),
            labeled("b", vec![-0.3, 1.4], 1, 0),
            labeled("c", vec![0.5, -2.0], 1, 1),
        ];
        let (risk, grad) = groupdro_grad(&spec, &params, &batch, 2).unwrap();
        // The two group means must be separated, otherwise the max is not
        // differentiable and the finite-difference probe is meaningless.
        let gap = (risk.per_group[0].unwrap() - risk.per_group[1].unwrap()).abs();
        assert!(gap > 1e-3, "instance too close to a tie: gap {gap}");
        let step = 1e-5;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[k] += step;
            let mut minus = params.clone();
            minus.values_mut()[k] -= step;
            let fd = (groupdro_risk(&spec, &plus, &batch, 2).unwrap().value
                - groupdro_risk(&spec, &minus, &batch, 2).unwrap().value)
                / (2.0 * step);
            let a = grad.values()[k];
            assert!(
                (a - fd).abs() <= 1e-9 + 1e-5 * fd.abs().max(a.abs()),
                "param {k}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn tail_selection_hand_cases() {
        let (v, active) = tail_select(&[3.0, 1.0, 2.0], 2.0 / 3.0);
        assert!(close(v, 2.5, 1e-15));
        assert_eq!(active, vec![0, 2]);

        // alpha = 1 keeps everything.
        let (v, active) = tail_select(&[3.0, 1.0, 2.0], 1.0);
        assert!(close(v, 2.0, 1e-15));
        assert_eq!(active, vec![0, 1, 2]);

        // Tiny alpha keeps exactly the single worst example.
        let (v, active) = tail_select(&[3.0, 1.0, 2.0], 1e-9);
        assert!(close(v, 3.0, 1e-15));
        assert_eq!(active, vec![0]);

        // Ties at the cutoff resolve by example order.
        let (_, active) = tail_select(&[2.0, 1.0, 1.0], 2.0 / 3.0);
        assert_eq!(active, vec![0, 1]);
    }

    #[test]
    fn cvar_with_full_tail_equals_erm_exactly() {
        let spec = ModelSpec::linear(2, 2);
        let params = init_params(&spec, 12).unwrap();
        let batch = [
            labeled("a", vec![0.2, 0.4], 0, 0),
            labeled("b", vec![-1.3, 0.4], 1, 1),
            labeled("c", vec![0.9, -0.1], 0, 0),
        ];
        let cvar = cvar_risk(&spec, &params, &batch, 2, 1.0).unwrap();
        let erm = erm_risk(&spec, &params, &batch).unwrap();
        assert_eq!(cvar.value, erm);
        assert_eq!(cvar.active_set, Some(vec![0, 1, 2]));
    }

    #[test]
    fn cvar_grad_matches_finite_differences_away_from_ties() {
        let spec = ModelSpec::linear(2, 2);
        let params = init_params(&spec, 14).unwrap();
        let batch = [
            labeled("a", vec![2.0, 0.1], 0, 0),
            labeled("b", vec![-0.8, 1.2], 1, 0),
            labeled("c", vec![0.4, -1.7], 1, 0),
            labeled("d", vec![1.1, 0.6], 0, 0),
        ];
        let alpha = 0.5;
        let (risk, grad) = cvar_grad(&spec, &params, &batch, 1, alpha).unwrap();
        // Cutoff separation check mirrors the group-tie check above.
        let losses: Vec<f64> = batch
            .iter()
            .map(|e| {
                hard_cross_entropy(
                    &models::forward(&spec, &params, &e.features).unwrap().logits,
                    e.label,
                )
            })
            .collect();
        let mut sorted = losses.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sorted[1] - sorted[2] > 1e-3, "cutoff too close to a tie");
        assert_eq!(risk.active_set.as_ref().unwrap().len(), 2);
        let step = 1e-5;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[k] += step;
            let mut minus = params.clone();
            minus.values_mut()[k] -= step;
            let fd = (cvar_risk(&spec, &plus, &batch, 1, alpha).unwrap().value
                - cvar_risk(&spec, &minus, &batch, 1, alpha).unwrap().value)
                / (2.0 * step);
            let a = grad.values()[k];
            assert!(
                (a - fd).abs() <= 1e-9 + 1e-5 * fd.abs().max(a.abs()),
                "param {k}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn erm_matches_mean_of_losses_and_respects_bounds() {
        let spec = ModelSpec::linear(2, 2);
        let params = init_params(&spec, 2).unwrap();
        let batch = [
            labeled("a", vec![0.3, 0.3], 0, 0),
            labeled("b", vec![-0.9, 0.1], 1, 1),
            labeled("c", vec![0.5, -0.5], 0, 1),
        ];
        let erm = erm_risk(&spec, &params, &batch).unwrap();
        let dro = groupdro_risk(&spec, &params, &batch, 2).unwrap();
        let worst_single = cvar_risk(&spec, &params, &batch, 2, 1e-9).unwrap();
        // The mean is a convex combination of group means, so the max group
        // dominates it; the single worst example dominates any group mean.
        assert!(dro.value >= erm - 1e-12);
        assert!(worst_single.value >= dro.value - 1e-12);
        // The tail mean shrinks as the tail widens.
        let half = cvar_risk(&spec, &params, &batch, 2, 0.5).unwrap();
        let full = cvar_risk(&spec, &params, &batch, 2, 1.0).unwrap();
        assert!(worst_single.value >= half.value - 1e-12);
        assert!(half.value >= full.value - 1e-12);
    }

    #[test]
    fn risks_reject_malformed_batches() {
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::zeros(&spec);
        assert!(matches!(
            groupdro_risk(&spec, &params, &[], 2),
            Err(LossError::EmptyBatch)
        ));
        assert!(matches!(
            groupdro_risk(&spec, &params, &[labeled("a", vec![0.0], 0, 5)], 2),
            Err(LossError::GroupRange { value: 5, .. })
        ));
        assert!(matches!(
            groupdro_risk(&spec, &params, &[labeled("a", vec![0.0], 3, 0)], 2),
            Err(LossError::LabelRange { value: 3, .. })
        ));
        assert!(matches!(
            cvar_risk(&spec, &params, &[labeled("a", vec![0.0], 0, 0)], 1, 0.0),
            Err(LossError::InvalidAlpha { .. })
        ));
        assert!(matches!(
            cvar_risk(&spec, &params, &[labeled("a", vec![0.0], 0, 0)], 1, 1.5),
            Err(LossError::InvalidAlpha { .. })
        ));
        assert!(matches!(
            groupdro_risk(&spec, &params, &[labeled("a", vec![0.0], 0, 0)], 0),
            Err(LossError::NoGroups)
        ));
    }

    #[test]
    fn outer_risk_dispatches_to_the_right_implementation() {
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::zeros(&spec);
        let batch = [labeled("a", vec![0.5], 0, 0), labeled("b", vec![-0.5], 1, 1)];
        let dro = OuterRisk::Groupdro.evaluate(&spec, &params, &batch, 2).unwrap();
        assert!(dro.argmax_group.is_some());
        assert!(dro.active_set.is_none());
        let tail = OuterRisk::Cvar { alpha: 0.5 }
            .evaluate(&spec, &params, &batch, 2)
            .unwrap();
        assert!(tail.argmax_group.is_none());
        assert_eq!(tail.active_set.as_ref().unwrap().len(), 1);
        assert!(OuterRisk::Cvar { alpha: 0.0 }.validate().is_err());
        assert!(OuterRisk::Cvar { alpha: 1.0 }.validate().is_ok());
    }
}
