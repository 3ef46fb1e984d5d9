//! Comparison methods: classical vote aggregation, soft-label and
//! partial-label trainers, a per-annotator ensemble, and group-robust
//! training directly on the validation split.
//!
//! Aggregation methods reduce the annotated training set to hard labels and
//! hand them to one shared SGD engine, so every single-level trainer follows
//! the same batching and seeding contract.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AnnotatedExample, DataError, LabeledExample};
use crate::losses::{self, LossError, SoftLabel};
use crate::math;
use crate::models::{self, ModelError, ModelSpec, ParamVector};
use crate::rng::{self, purpose};

/// Additive smoothing applied to the label model's M-step counts so no vote
/// pattern ever gets probability zero.
pub const LABEL_MODEL_SMOOTHING: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("bad baseline setup: {0}")]
    Config(&'static str),
    #[error("aggregation '{provenance}' left no training examples")]
    EmptyAggregate { provenance: String },
    #[error("training diverged at step {step}: non-finite {what}")]
    NonFinite { step: usize, what: &'static str },
}

/// Every trainable method the experiment harness knows, addressable by a
/// stable string id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Bi-level annotator weighting with the worst-group outer risk.
    Bilevel,
    /// Bi-level annotator weighting with the tail-loss outer risk.
    BilevelCvar,
    /// Majority vote, then hard-label training.
    Mv,
    /// Agreement-reweighted voting, then hard-label training.
    Pm,
    /// Keep only unanimous examples, then hard-label training.
    Consensus,
    /// Confusion-matrix label model (Dawid-Skene EM), then hard-label
    /// training on posterior argmaxes.
    LabelModel,
    /// One classifier per annotator; predictions combined by vote.
    Ensemble,
    /// Soft labels uniform over each example's candidate set.
    AvgLabel,
    /// Partial-label training with progressively sharpened candidate
    /// weights.
    Proden,
    /// Soft labels fixed at raw vote fractions.
    VanillaSoft,
    /// Worst-group training directly on the labeled validation split.
    ErmDro,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Bilevel,
        Method::BilevelCvar,
        Method::Mv,
        Method::Pm,
        Method::Consensus,
        Method::LabelModel,
        Method::Ensemble,
        Method::AvgLabel,
        Method::Proden,
        Method::VanillaSoft,
        Method::ErmDro,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Bilevel => "bilevel",
            Method::BilevelCvar => "bilevel-cvar",
            Method::Mv => "mv",
            Method::Pm => "pm",
            Method::Consensus => "consensus",
            Method::LabelModel => "label-model",
            Method::Ensemble => "ensemble",
            Method::AvgLabel => "avg-label",
            Method::Proden => "proden",
            Method::VanillaSoft => "vanilla-soft",
            Method::ErmDro => "erm-dro",
        }
    }

    pub fn from_id(id: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.id() == id)
    }

    /// Report-column label; spells out the label model's algorithm.
    pub fn display_label(self) -> &'static str {
        match self {
            Method::LabelModel => "label-model (Dawid-Skene)",
            other => other.id(),
        }
    }

    /// Whether the method reads group annotations on the validation split.
    pub fn uses_validation_groups(self) -> bool {
        matches!(self, Method::Bilevel | Method::BilevelCvar | Method::ErmDro)
    }
}

/// A training set reduced to hard labels by some aggregation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedExample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedDataset {
    pub examples: Vec<AggregatedExample>,
    /// Method id that produced the labels.
    pub provenance: String,
    /// Surviving fraction of the source dataset.
    pub kept_fraction: f64,
}

/// Modal annotation, lowest class index on ties.
pub fn majority_vote(example: &AnnotatedExample) -> usize {
    let mut counts = alloc::collections::BTreeMap::new();
    for &vote in &example.annotations {
        *counts.entry(vote).or_insert(0usize) += 1;
    }
    let mut best_class = 0;
    let mut best_count = 0;
    for (class, count) in counts {
        if count > best_count {
            best_class = class;
            best_count = count;
        }
    }
    best_class
}

pub fn mv_aggregate(dataset: &[AnnotatedExample]) -> AggregatedDataset {
    let examples = dataset
        .iter()
        .map(|ex| AggregatedExample {
            id: ex.id.clone(),
            features: ex.features.clone(),
            label: majority_vote(ex),
        })
        .collect();
    AggregatedDataset {
        examples,
        provenance: String::from("mv"),
        kept_fraction: 1.0,
    }
}

/// Agreement-reweighted voting outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PmOutcome {
    pub labels: Vec<usize>,
    /// Per-annotator weights, normalized to sum 1.
    pub annotator_weights: Vec<f64>,
    /// Reweighting rounds actually performed (early exit when labels
    /// stabilize).
    pub iterations_run: usize,
}

fn weighted_vote(example: &AnnotatedExample, weights: &[f64]) -> usize {
    let mut scores = alloc::collections::BTreeMap::new();
    for (&vote, &weight) in example.annotations.iter().zip(weights) {
        *scores.entry(vote).or_insert(0.0f64) += weight;
    }
    let mut best_class = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (class, score) in scores {
        if score > best_score {
            best_class = class;
            best_score = score;
        }
    }
    best_class
}

/// Iterative weighted voting: labels from weighted votes, then each
/// annotator reweighted by its agreement rate with those labels (plus
/// smoothing), until labels stop changing or the iteration budget runs out.
pub fn pm_vote(
    dataset: &[AnnotatedExample],
    annotator_count: usize,
    iterations: usize,
    epsilon: f64,
) -> Result<PmOutcome, BaselineError> {
    if annotator_count < 2 {
        return Err(BaselineError::Config("agreement reweighting needs at least 2 annotators"));
    }
    if dataset.is_empty() {
        return Err(BaselineError::Config("agreement reweighting needs a nonempty dataset"));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(BaselineError::Config("agreement smoothing must be positive"));
    }
    let mut weights = vec![1.0 / annotator_count as f64; annotator_count];
    let mut labels: Vec<usize> = dataset.iter().map(|ex| weighted_vote(ex, &weights)).collect();
    let mut iterations_run = 0;
    for _ in 0..iterations {
        let mut agreement = vec![0.0f64; annotator_count];
        for (ex, &label) in dataset.iter().zip(&labels) {
            for (j, &vote) in ex.annotations.iter().enumerate() {
                if vote == label {
                    agreement[j] += 1.0;
                }
            }
        }
        let n = dataset.len() as f64;
        let mut total = 0.0;
        for (w, agree) in weights.iter_mut().zip(&agreement) {
            *w = agree / n + epsilon;
            total += *w;
        }
        for w in &mut weights {
            *w /= total;
        }
        iterations_run += 1;
        let next: Vec<usize> = dataset.iter().map(|ex| weighted_vote(ex, &weights)).collect();
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }
    Ok(PmOutcome {
        labels,
        annotator_weights: weights,
        iterations_run,
    })
}

pub fn pm_aggregate(
    dataset: &[AnnotatedExample],
    annotator_count: usize,
    iterations: usize,
    epsilon: f64,
) -> Result<(AggregatedDataset, PmOutcome), BaselineError> {
    let outcome = pm_vote(dataset, annotator_count, iterations, epsilon)?;
    let examples = dataset
        .iter()
        .zip(&outcome.labels)
        .map(|(ex, &label)| AggregatedExample {
            id: ex.id.clone(),
            features: ex.features.clone(),
            label,
        })
        .collect();
    Ok((
        AggregatedDataset {
            examples,
            provenance: String::from("pm"),
            kept_fraction: 1.0,
        },
        outcome,
    ))
}

/// Keeps exactly the unanimous examples.
pub fn consensus_filter(dataset: &[AnnotatedExample]) -> AggregatedDataset {
    let examples: Vec<AggregatedExample> = dataset
        .iter()
        .filter(|ex| ex.candidate_set().len() == 1)
        .map(|ex| AggregatedExample {
            id: ex.id.clone(),
            features: ex.features.clone(),
            label: ex.annotations[0],
        })
        .collect();
    let kept_fraction = if dataset.is_empty() {
        0.0
    } else {
        examples.len() as f64 / dataset.len() as f64
    };
    AggregatedDataset {
        examples,
        provenance: String::from("consensus"),
        kept_fraction,
    }
}

/// Fitted confusion-matrix label model.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelModelFit {
    /// Per-example posterior over true classes.
    pub posteriors: Vec<SoftLabel>,
    /// Per-annotator estimated confusion matrix, row = true class, column =
    /// vote.
    pub confusions: Vec<Vec<Vec<f64>>>,
    /// Estimated class prior.
    pub priors: Vec<f64>,
    pub iterations_run: usize,
    /// Examples whose posterior argmax fell outside their candidate set.
    /// The model is free to leave the voted classes; we count it instead of
    /// clipping.
    pub escape_count: usize,
}

impl LabelModelFit {
    /// Posterior argmax per example, lowest class index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.posteriors
            .iter()
            .map(|p| math::argmax(p.probabilities()))
            .collect()
    }

    pub fn escape_rate(&self) -> f64 {
        if self.posteriors.is_empty() {
            0.0
        } else {
            self.escape_count as f64 / self.posteriors.len() as f64
        }
    }
}

/// Confusion-matrix EM over the votes.
///
/// Posteriors start at vote fractions; each round re-estimates the class
/// prior and per-annotator confusion matrices from the posteriors (with
/// [`LABEL_MODEL_SMOOTHING`] added to every count) and then recomputes
/// posteriors from those estimates. Stops when no posterior entry moves by
/// `tol` or after `max_iters` rounds.
pub fn dawid_skene(
    dataset: &[AnnotatedExample],
    class_count: usize,
    annotator_count: usize,
    max_iters: usize,
    tol: f64,
) -> Result<LabelModelFit, BaselineError> {
    if class_count < 2 {
        return Err(BaselineError::Config("label model needs at least 2 classes"));
    }
    if annotator_count < 2 {
        return Err(BaselineError::Config("label model needs at least 2 annotators"));
    }
    if dataset.is_empty() {
        return Err(BaselineError::Config("label model needs a nonempty dataset"));
    }

    let uniform_votes = vec![1.0 / annotator_count as f64; annotator_count];
    let mut posteriors: Vec<Vec<f64>> = dataset
        .iter()
        .map(|ex| {
            losses::soft_label_aggregate(&ex.annotations, &uniform_votes, class_count)
                .map(|s| s.probabilities().to_vec())
        })
        .collect::<Result<_, _>>()?;

    let mut priors = vec![1.0 / class_count as f64; class_count];
    let mut confusions =
        vec![vec![vec![1.0 / class_count as f64; class_count]; class_count]; annotator_count];
    let mut iterations_run = 0;

    for _ in 0..max_iters {
        // M-step: smoothed prior and confusion counts from the posteriors.
        let mut prior_counts = vec![LABEL_MODEL_SMOOTHING; class_count];
        let mut confusion_counts =
            vec![vec![vec![LABEL_MODEL_SMOOTHING; class_count]; class_count]; annotator_count];
        for (ex, post) in dataset.iter().zip(&posteriors) {
            for (class, &q) in post.iter().enumerate() {
                prior_counts[class] += q;
                for (j, &vote) in ex.annotations.iter().enumerate() {
                    confusion_counts[j][class][vote] += q;
                }
            }
        }
        let prior_total: f64 = prior_counts.iter().sum();
        for (p, c) in priors.iter_mut().zip(&prior_counts) {
            *p = c / prior_total;
        }
        for (confusion, counts) in confusions.iter_mut().zip(&confusion_counts) {
            for (row, count_row) in confusion.iter_mut().zip(counts) {
                let row_total: f64 = count_row.iter().sum();
                for (entry, c) in row.iter_mut().zip(count_row) {
                    *entry = c / row_total;
                }
            }
        }

        // E-step in log space; smoothing keeps every factor positive.
        let mut delta = 0.0f64;
        for (ex, post) in dataset.iter().zip(&mut posteriors) {
            let mut logits: Vec<f64> = priors.iter().map(|p| libm::log(*p)).collect();
            for (j, &vote) in ex.annotations.iter().enumerate() {
                for (class, logit) in logits.iter_mut().enumerate() {
                    *logit += libm::log(confusions[j][class][vote]);
                }
            }
            let fresh = math::softmax(&logits);
            for (old, new) in post.iter_mut().zip(&fresh) {
                delta = delta.max((*old - *new).abs());
                *old = *new;
            }
        }
        iterations_run += 1;
        if delta < tol {
            break;
        }
    }

    let posteriors: Vec<SoftLabel> = posteriors
        .into_iter()
        .map(SoftLabel::new)
        .collect::<Result<_, _>>()?;
    let escape_count = dataset
        .iter()
        .zip(&posteriors)
        .filter(|(ex, post)| {
            let label = math::argmax(post.probabilities());
            !ex.candidate_set().contains(&label)
        })
        .count();
    Ok(LabelModelFit {
        posteriors,
        confusions,
        priors,
        iterations_run,
        escape_count,
    })
}

pub fn label_model_aggregate(
    dataset: &[AnnotatedExample],
    class_count: usize,
    annotator_count: usize,
    max_iters: usize,
    tol: f64,
) -> Result<(AggregatedDataset, LabelModelFit), BaselineError> {
    let fit = dawid_skene(dataset, class_count, annotator_count, max_iters, tol)?;
    let examples = dataset
        .iter()
        .zip(fit.hard_labels())
        .map(|(ex, label)| AggregatedExample {
            id: ex.id.clone(),
            features: ex.features.clone(),
            label,
        })
        .collect();
    Ok((
        AggregatedDataset {
            examples,
            provenance: String::from("label-model"),
            kept_fraction: 1.0,
        },
        fit,
    ))
}

/// Single-level SGD settings shared by every baseline trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErmConfig {
    pub steps: usize,
    pub step_size: f64,
    /// At or above the dataset size means full batch.
    pub batch: usize,
    pub seed: u64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            step_size: 0.5,
            batch: 64,
            seed: 0,
        }
    }
}

impl ErmConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(BaselineError::Config("step size must be finite and nonnegative"));
        }
        if self.batch == 0 {
            return Err(BaselineError::Config("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TrainTarget {
    Hard(usize),
    Soft(SoftLabel),
}

struct Row {
    features: Vec<f64>,
    target: TrainTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdOutcome {
    pub params: ParamVector,
    /// Batch loss at the start of each step, before that step's update.
    pub loss_trace: Vec<f64>,
}

fn batch_indices(len: usize, size: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    if size >= len {
        // Full batch, dataset order; no draws consumed.
        (0..len).collect()
    } else {
        (0..size).map(|_| rng.random_range(0..len)).collect()
    }
}

/// One contiguous stretch of SGD steps over fixed rows. Batch streams key on
/// the absolute step index, so stretches compose into one deterministic run.
fn sgd_steps(
    spec: &ModelSpec,
    rows: &[Row],
    config: &ErmConfig,
    mut params: ParamVector,
    steps: Range<usize>,
    trace: &mut Vec<f64>,
) -> Result<ParamVector, BaselineError> {
    for step in steps {
        let mut rng = rng::stream(config.seed, purpose::SGD, step as u64);
        let picks = batch_indices(rows.len(), config.batch, &mut rng);
        let scale = 1.0 / picks.len() as f64;
        let mut loss = 0.0;
        let mut grad = ParamVector::zeros(spec);
        for &i in &picks {
            let row = &rows[i];
            let pred = models::forward(spec, &params, &row.features)?;
            let mut dlogits = pred.probabilities.clone();
            match &row.target {
                TrainTarget::Hard(label) => {
                    loss += losses::hard_cross_entropy(&pred.logits, *label);
                    dlogits[*label] -= 1.0;
                }
                TrainTarget::Soft(soft) => {
                    loss += losses::soft_cross_entropy(&pred.logits, soft.probabilities());
                    for (d, t) in dlogits.iter_mut().zip(soft.probabilities()) {
                        *d -= *t;
                    }
                }
            }
            grad.add_scaled(scale, &models::grad_params(spec, &params, &row.features, &dlogits)?);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(BaselineError::NonFinite { step, what: "batch loss" });
        }
        params.add_scaled(-config.step_size, &grad);
        if !params.is_finite() {
            return Err(BaselineError::NonFinite {
                step,
                what: "classifier parameters",
            });
        }
        trace.push(loss);
    }
    Ok(params)
}

fn sgd_train(
    spec: &ModelSpec,
    rows: &[Row],
    config: &ErmConfig,
) -> Result<SgdOutcome, BaselineError> {
    spec.validate()?;
    config.validate()?;
    if rows.is_empty() {
        return Err(BaselineError::Config("training needs a nonempty dataset"));
    }
    for row in rows {
        if let TrainTarget::Hard(label) = row.target {
            if label >= spec.output_dim {
                return Err(BaselineError::Loss(LossError::LabelRange {
                    value: label,
                    class_count: spec.output_dim,
                }));
            }
        }
    }
    let params = models::init_params(spec, rng::derive_seed(config.seed, purpose::CLASSIFIER_INIT))?;
    let mut trace = Vec::with_capacity(config.steps);
    let params = sgd_steps(spec, rows, config, params, 0..config.steps, &mut trace)?;
    Ok(SgdOutcome {
        params,
        loss_trace: trace,
    })
}

/// Hard-label SGD on an aggregated dataset.
pub fn train_on_aggregated(
    agg: &AggregatedDataset,
    spec: &ModelSpec,
    config: &ErmConfig,
) -> Result<SgdOutcome, BaselineError> {
    if agg.examples.is_empty() {
        return Err(BaselineError::EmptyAggregate {
            provenance: agg.provenance.clone(),
        });
    }
    let rows: Vec<Row> = agg
        .examples
        .iter()
        .map(|ex| Row {
            features: ex.features.clone(),
            target: TrainTarget::Hard(ex.label),
        })
        .collect();
    sgd_train(spec, &rows, config)
}

/// SGD against soft labels spread uniformly over each example's candidate
/// set: the per-example loss averages the negative log-probabilities of all
/// voted classes.
pub fn average_label_train(
    dataset: &[AnnotatedExample],
    spec: &ModelSpec,
    config: &ErmConfig,
) -> Result<SgdOutcome, BaselineError> {
    let rows: Vec<Row> = dataset
        .iter()
        .map(|ex| {
            Ok(Row {
                features: ex.features.clone(),
                target: TrainTarget::Soft(SoftLabel::uniform_over(
                    &ex.candidate_set(),
                    spec.output_dim,
                )?),
            })
        })
        .collect::<Result<_, BaselineError>>()?;
    sgd_train(spec, &rows, config)
}

/// SGD against soft labels fixed at raw vote fractions.
pub fn vanilla_soft_train(
    dataset: &[AnnotatedExample],
    spec: &ModelSpec,
    config: &ErmConfig,
) -> Result<SgdOutcome, BaselineError> {
    let rows: Vec<Row> = dataset
        .iter()
        .map(|ex| {
            if ex.annotations.is_empty() {
                return Err(BaselineError::Config("vote fractions need at least one annotation"));
            }
            let uniform = vec![1.0 / ex.annotations.len() as f64; ex.annotations.len()];
            Ok(Row {
                features: ex.features.clone(),
                target: TrainTarget::Soft(losses::soft_label_aggregate(
                    &ex.annotations,
                    &uniform,
                    spec.output_dim,
                )?),
            })
        })
        .collect::<Result<_, BaselineError>>()?;
    sgd_train(spec, &rows, config)
}

/// Partial-label training outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ProdenFit {
    pub params: ParamVector,
    /// Final per-example candidate weights: zero outside the candidate set,
    /// summing to 1.
    pub weights: Vec<SoftLabel>,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProdenConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub step_size: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ProdenConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            steps_per_epoch: 40,
            step_size: 0.5,
            batch: 64,
            seed: 0,
        }
    }
}

impl ProdenConfig {
    fn erm(&self) -> ErmConfig {
        ErmConfig {
            steps: self.epochs * self.steps_per_epoch,
            step_size: self.step_size,
            batch: self.batch,
            seed: self.seed,
        }
    }
}

/// Candidate weights start uniform over each example's voted classes; after
/// every epoch they are refreshed to the model's own probabilities
/// renormalized over the candidate set, progressively committing to the
/// classes the model finds plausible.
pub fn proden_train(
    dataset: &[AnnotatedExample],
    spec: &ModelSpec,
    config: &ProdenConfig,
) -> Result<ProdenFit, BaselineError> {
    spec.validate()?;
    let erm = config.erm();
    erm.validate()?;
    if dataset.is_empty() {
        return Err(BaselineError::Config("training needs a nonempty dataset"));
    }
    let candidates: Vec<Vec<usize>> = dataset.iter().map(|ex| ex.candidate_set()).collect();
    let mut weights: Vec<SoftLabel> = candidates
        .iter()
        .map(|set| SoftLabel::uniform_over(set, spec.output_dim))
        .collect::<Result<_, _>>()?;

    let mut params =
        models::init_params(spec, rng::derive_seed(config.seed, purpose::CLASSIFIER_INIT))?;
    let mut trace = Vec::with_capacity(erm.steps);
    for epoch in 0..config.epochs {
        let rows: Vec<Row> = dataset
            .iter()
            .zip(&weights)
            .map(|(ex, q)| Row {
                features: ex.features.clone(),
                target: TrainTarget::Soft(q.clone()),
            })
            .collect();
        let start = epoch * config.steps_per_epoch;
        params = sgd_steps(
            spec,
            &rows,
            &erm,
            params,
            start..start + config.steps_per_epoch,
            &mut trace,
        )?;

        for ((ex, set), q) in dataset.iter().zip(&candidates).zip(&mut weights) {
            let probs = models::forward(spec, &params, &ex.features)?.probabilities;
            let mass: f64 = set.iter().map(|&c| probs[c]).sum();
            if !(mass > 0.0) {
                return Err(BaselineError::NonFinite {
                    step: start + config.steps_per_epoch,
                    what: "candidate probability mass",
                });
            }
            let mut fresh = vec![0.0; spec.output_dim];
            for &c in set {
                fresh[c] = probs[c] / mass;
            }
            *q = SoftLabel::new(fresh)?;
        }
    }
    Ok(ProdenFit {
        params,
        weights,
        loss_trace: trace,
    })
}

/// One classifier per annotator, combined by majority vote.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFit {
    pub members: Vec<ParamVector>,
}

impl EnsembleFit {
    /// Majority vote over member argmax predictions, lowest class index on
    /// ties.
    pub fn predict(&self, spec: &ModelSpec, features: &[f64]) -> Result<usize, BaselineError> {
        let mut votes = Vec::with_capacity(self.members.len());
        for member in &self.members {
            votes.push(models::forward(spec, member, features)?.class());
        }
        let dummy = AnnotatedExample {
            id: String::new(),
            features: Vec::new(),
            annotations: votes,
        };
        Ok(majority_vote(&dummy))
    }
}

/// Trains one hard-label classifier per annotator on that annotator's votes.
/// Members get distinct derived seeds, so they differ even when their vote
/// columns agree.
pub fn train_ensemble(
    dataset: &[AnnotatedExample],
    annotator_count: usize,
    spec: &ModelSpec,
    config: &ErmConfig,
) -> Result<EnsembleFit, BaselineError> {
    if annotator_count == 0 {
        return Err(BaselineError::Config("ensemble needs at least one annotator"));
    }
    let mut members = Vec::with_capacity(annotator_count);
    for j in 0..annotator_count {
        let rows: Vec<Row> = dataset
            .iter()
            .map(|ex| {
                let vote = *ex.annotations.get(j).ok_or(BaselineError::Config(
                    "example has fewer annotations than the annotator count",
                ))?;
                Ok(Row {
                    features: ex.features.clone(),
                    target: TrainTarget::Hard(vote),
                })
            })
            .collect::<Result<_, BaselineError>>()?;
        let member_config = ErmConfig {
            seed: rng::derive_indexed_seed(config.seed, purpose::ENSEMBLE_MEMBER, j as u64),
            ..config.clone()
        };
        members.push(sgd_train(spec, &rows, &member_config)?.params);
    }
    Ok(EnsembleFit { members })
}

/// Worst-group gradient descent directly on the labeled validation split;
/// the annotated training data is unused.
pub fn erm_groupdro_validation(
    val_set: &[LabeledExample],
    spec: &ModelSpec,
    group_count: usize,
    config: &ErmConfig,
) -> Result<SgdOutcome, BaselineError> {
    spec.validate()?;
    config.validate()?;
    if val_set.is_empty() {
        return Err(BaselineError::Config("training needs a nonempty dataset"));
    }
    if group_count == 0 {
        return Err(BaselineError::Config("group count must be positive"));
    }
    let mut params =
        models::init_params(spec, rng::derive_seed(config.seed, purpose::CLASSIFIER_INIT))?;
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = rng::stream(config.seed, purpose::SGD, step as u64);
        let picks = batch_indices(val_set.len(), config.batch, &mut rng);
        let batch: Vec<LabeledExample> = picks.iter().map(|&i| val_set[i].clone()).collect();
        let (risk, grad) = losses::groupdro_grad(spec, &params, &batch, group_count)?;
        if !risk.value.is_finite() {
            return Err(BaselineError::NonFinite { step, what: "batch risk" });
        }
        params.add_scaled(-config.step_size, &grad);
        if !params.is_finite() {
            return Err(BaselineError::NonFinite {
                step,
                what: "classifier parameters",
            });
        }
        trace.push(risk.value);
    }
    Ok(SgdOutcome {
        params,
        loss_trace: trace,
    })
}
