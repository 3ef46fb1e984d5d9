//! The bi-level trainer.
//!
//! Two models train together. The classifier theta minimizes the soft-label
//! cross-entropy on annotated data, where each example's soft label is built
//! by the weight estimator w (a softmax over annotators, evaluated on the
//! example's features). The estimator in turn minimizes a robust risk of a
//! one-step-ahead classifier on trusted validation data.
//!
//! One step:
//!   1. pseudo update:  theta' = theta - mu * grad_theta L(theta; w)
//!   2. weight update:  w      = w - alpha * grad_w R(theta')
//!   3. actual update:  theta  = theta - mu * grad_theta L(theta; w_new)
//!
//! The weight gradient in step 2 goes through the pseudo update only; the
//! analytic form differentiates R(theta - mu * grad L) with respect to w in
//! closed form, and a finite-difference backend computes the same quantity
//! numerically as a cross-check.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, AnnotatedExample, DataError, DataSchema, LabeledExample};
use crate::losses::{self, LossError, OuterRisk, SoftLabel};
use crate::models::{self, ModelError, ModelSpec, ParamVector};
use crate::rng::{self, purpose};

/// Step size used by the finite-difference weight-gradient backend.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Slack when deciding whether the outer risk decreased across a step.
pub const DESCENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("bad training setup: {0}")]
    Config(&'static str),
    #[error("training diverged at step {step}: non-finite {what}")]
    NonFinite { step: usize, what: &'static str },
    #[error("checkpoint is at step {at}, past the configured horizon {horizon}")]
    CheckpointAhead { at: usize, horizon: usize },
    #[error("checkpoint parameters do not match the model specs")]
    CheckpointShape,
}

/// How step sizes depend on the horizon T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    /// Fixed `inner_step_size` and `outer_step_size`.
    Constant,
    /// outer = outer_scale / sqrt(T), inner = inner_scale / T. Under this
    /// pairing the smallest squared weight-gradient norm seen up to T decays
    /// like 1 / sqrt(T).
    HorizonScaled,
}

/// How the weight gradient is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaGradBackend {
    /// Closed form through the pseudo update.
    Analytic,
    /// Central differences with step [`DEFAULT_FD_STEP`]; slow, used to
    /// cross-check the closed form.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of outer steps T.
    pub steps: usize,
    /// Classifier step size (constant schedule).
    pub inner_step_size: f64,
    /// Weight-estimator step size (constant schedule).
    pub outer_step_size: f64,
    pub schedule: StepSchedule,
    /// Horizon-scaled schedule: inner step = inner_scale / T.
    pub inner_scale: f64,
    /// Horizon-scaled schedule: outer step = outer_scale / sqrt(T).
    pub outer_scale: f64,
    /// Train batch size; at or above the dataset size means full batch.
    pub batch_train: usize,
    /// Validation batch size; same full-batch rule.
    pub batch_val: usize,
    pub seed: u64,
    pub outer: OuterRisk,
    pub backend: MetaGradBackend,
    /// Estimate alignment/smoothness/gradient-bound constants while
    /// training; costs one extra risk gradient per step.
    pub estimate_constants: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            inner_step_size: 0.1,
            outer_step_size: 0.5,
            schedule: StepSchedule::Constant,
            inner_scale: 1.0,
            outer_scale: 1.0,
            batch_train: 64,
            batch_val: 64,
            seed: 0,
            outer: OuterRisk::Groupdro,
            backend: MetaGradBackend::Analytic,
            estimate_constants: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for v in [
            self.inner_step_size,
            self.outer_step_size,
            self.inner_scale,
            self.outer_scale,
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(TrainError::Config("step sizes must be finite and nonnegative"));
            }
        }
        if self.batch_train == 0 || self.batch_val == 0 {
            return Err(TrainError::Config("batch sizes must be positive"));
        }
        self.outer.validate()?;
        Ok(())
    }

    /// (inner, outer) step sizes after applying the schedule.
    pub fn effective_step_sizes(&self) -> (f64, f64) {
        match self.schedule {
            StepSchedule::Constant => (self.inner_step_size, self.outer_step_size),
            StepSchedule::HorizonScaled => {
                if self.steps == 0 {
                    (0.0, 0.0)
                } else {
                    let t = self.steps as f64;
                    (self.inner_scale / t, self.outer_scale / libm::sqrt(t))
                }
            }
        }
    }
}

/// Everything fixed across a run: the two model shapes and the group space.
#[derive(Debug, Clone, Copy)]
pub struct BilevelProblem<'a> {
    pub classifier: &'a ModelSpec,
    pub estimator: &'a ModelSpec,
    pub group_count: usize,
}

impl<'a> BilevelProblem<'a> {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.classifier.validate()?;
        self.estimator.validate()?;
        if self.classifier.input_dim != self.estimator.input_dim {
            return Err(TrainError::Config(
                "classifier and estimator must share the input dimension",
            ));
        }
        if self.group_count == 0 {
            return Err(TrainError::Config("group count must be positive"));
        }
        Ok(())
    }

    fn schema(&self) -> DataSchema {
        DataSchema {
            class_count: self.classifier.output_dim,
            annotator_count: self.estimator.output_dim,
            feature_dim: self.classifier.input_dim,
        }
    }

    /// Soft labels for a batch under estimator weights w: softmax annotator
    /// weights per example, summed over each annotator's voted class.
    pub fn soft_labels(
        &self,
        w: &ParamVector,
        batch: &[AnnotatedExample],
    ) -> Result<Vec<SoftLabel>, TrainError> {
        let class_count = self.classifier.output_dim;
        batch
            .iter()
            .map(|ex| {
                let weights = models::forward(self.estimator, w, &ex.features)?.probabilities;
                Ok(losses::soft_label_aggregate(&ex.annotations, &weights, class_count)?)
            })
            .collect()
    }

    /// theta - mu * grad_theta L(theta; w): the one-step-ahead classifier the
    /// weight update differentiates through.
    pub fn pseudo_update(
        &self,
        theta: &ParamVector,
        w: &ParamVector,
        batch: &[AnnotatedExample],
        mu: f64,
    ) -> Result<ParamVector, TrainError> {
        let soft = self.soft_labels(w, batch)?;
        let (_, grad) = losses::inner_loss_grad(self.classifier, theta, batch, &soft)?;
        Ok(theta.plus_scaled(-mu, &grad))
    }

    /// The actual classifier update, identical in form to the pseudo update
    /// but using the refreshed weights.
    pub fn update_theta(
        &self,
        theta: &ParamVector,
        w_next: &ParamVector,
        batch: &[AnnotatedExample],
        mu: f64,
    ) -> Result<ParamVector, TrainError> {
        self.pseudo_update(theta, w_next, batch, mu)
    }

    /// grad_w R(theta - mu * grad_theta L(theta; w)) by the configured
    /// backend.
    #[allow(clippy::too_many_arguments)]
    pub fn metagrad_w(
        &self,
        theta: &ParamVector,
        w: &ParamVector,
        train_batch: &[AnnotatedExample],
        val_batch: &[LabeledExample],
        outer: &OuterRisk,
        mu: f64,
        backend: MetaGradBackend,
    ) -> Result<ParamVector, TrainError> {
        match backend {
            MetaGradBackend::Analytic => {
                let theta_pseudo = self.pseudo_update(theta, w, train_batch, mu)?;
                let (_, u) = outer.gradient(
                    self.classifier,
                    &theta_pseudo,
                    val_batch,
                    self.group_count,
                )?;
                self.metagrad_from_risk_grad(theta, w, train_batch, &u, mu)
            }
            MetaGradBackend::FiniteDifference => self.metagrad_w_fd(
                theta,
                w,
                train_batch,
                val_batch,
                outer,
                mu,
                DEFAULT_FD_STEP,
            ),
        }
    }

    /// Closed-form weight gradient given u = grad_theta R(theta').
    ///
    /// Writing the inner-loss gradient as an average of per-example,
    /// per-class terms, only <grad(-log f_c), u> enters for classes that the
    /// example's annotators actually voted; everything else has zero soft
    /// label. The estimator then receives the softmax pullback of those
    /// sensitivities.
    fn metagrad_from_risk_grad(
        &self,
        theta: &ParamVector,
        w: &ParamVector,
        train_batch: &[AnnotatedExample],
        u: &ParamVector,
        mu: f64,
    ) -> Result<ParamVector, TrainError> {
        if train_batch.is_empty() {
            return Err(TrainError::Loss(LossError::EmptyBatch));
        }
        let mut total = ParamVector::zeros(self.estimator);
        for ex in train_batch {
            let pred = models::forward(self.classifier, theta, &ex.features)?;
            // Sensitivity of <grad L, u> to each candidate class's soft-label
            // mass.
            let mut sensitivity = alloc::collections::BTreeMap::new();
            for &c in &ex.candidate_set() {
                let mut dlogits = pred.probabilities.clone();
                dlogits[c] -= 1.0;
                let g = models::grad_params(self.classifier, theta, &ex.features, &dlogits)?;
                sensitivity.insert(c, g.dot(u));
            }
            let a: Vec<f64> = ex
                .annotations
                .iter()
                .map(|j| sensitivity[j])
                .collect();
            let v = models::forward(self.estimator, w, &ex.features)?.probabilities;
            // Softmax pullback: d<v, a>/dlogit_m = v_m (a_m - <v, a>).
            let mixed: f64 = crate::math::dot(&v, &a);
            let dlogits: Vec<f64> = v.iter().zip(&a).map(|(vm, am)| vm * (am - mixed)).collect();
            total.add_scaled(1.0, &models::grad_params(self.estimator, w, &ex.features, &dlogits)?);
        }
        let scale = -mu / train_batch.len() as f64;
        Ok(ParamVector::zeros(self.estimator).plus_scaled(scale, &total))
    }

    /// Central-difference weight gradient; the oracle for the closed form.
    #[allow(clippy::too_many_arguments)]
    pub fn metagrad_w_fd(
        &self,
        theta: &ParamVector,
        w: &ParamVector,
        train_batch: &[AnnotatedExample],
        val_batch: &[LabeledExample],
        outer: &OuterRisk,
        mu: f64,
        fd_step: f64,
    ) -> Result<ParamVector, TrainError> {
        let mut grad = ParamVector::zeros(self.estimator);
        for k in 0..w.len() {
            let mut plus = w.clone();
            plus.values_mut()[k] += fd_step;
            let mut minus = w.clone();
            minus.values_mut()[k] -= fd_step;
            let rp = self.outer_after_pseudo(theta, &plus, train_batch, val_batch, outer, mu)?;
            let rm = self.outer_after_pseudo(theta, &minus, train_batch, val_batch, outer, mu)?;
            grad.values_mut()[k] = (rp - rm) / (2.0 * fd_step);
        }
        Ok(grad)
    }

    /// R(theta - mu * grad L(theta; w)) on the validation batch.
    pub fn outer_after_pseudo(
        &self,
        theta: &ParamVector,
        w: &ParamVector,
        train_batch: &[AnnotatedExample],
        val_batch: &[LabeledExample],
        outer: &OuterRisk,
        mu: f64,
    ) -> Result<f64, TrainError> {
        let theta_pseudo = self.pseudo_update(theta, w, train_batch, mu)?;
        Ok(outer
            .evaluate(self.classifier, &theta_pseudo, val_batch, self.group_count)?
            .value)
    }
}

/// w - alpha * metagrad.
pub fn update_w(w: &ParamVector, metagrad: &ParamVector, alpha: f64) -> ParamVector {
    w.plus_scaled(-alpha, metagrad)
}

/// Resumable training state: both parameter vectors, the step counter, and
/// the seed whose derived streams the run consumes. Batch streams are keyed
/// by absolute step index, so (seed, step) pins the remaining randomness
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub theta: ParamVector,
    pub w: ParamVector,
    pub step: usize,
    pub seed: u64,
}

/// Per-run training traces and estimated problem constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Outer risk of the starting classifier on the full validation set;
    /// None when no steps ran.
    pub initial_risk: Option<f64>,
    /// Outer risk after each step, on that step's validation batch.
    pub risk_trace: Vec<f64>,
    /// Squared norm of each step's weight gradient.
    pub grad_w_sq_norms: Vec<f64>,
    /// Soft-label training loss at each step (under the refreshed weights).
    pub inner_loss_trace: Vec<f64>,
    /// Worst group per step; None under the tail risk.
    pub argmax_group_trace: Vec<Option<usize>>,
    /// Smallest observed <risk grad, inner grad> / |inner grad|^2: how well
    /// inner descent directions align with the outer risk.
    pub k_hat: Option<f64>,
    /// Largest observed |grad R(theta') - grad R(theta)| / |theta' - theta|:
    /// a lower bound on the risk-gradient Lipschitz constant.
    pub l_hat: Option<f64>,
    /// Largest observed gradient norm (inner or outer).
    pub sigma_hat: Option<f64>,
    /// Largest observed |weight grad| / (mu * |risk grad|): a lower bound on
    /// the mixed second-derivative norm of the inner loss.
    pub sigma_prime_hat: Option<f64>,
    /// Fraction of steps whose risk did not increase (within
    /// [`DESCENT_TOLERANCE`]); 1.0 for an empty run.
    pub monotone_fraction: f64,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    fn empty() -> Self {
        Self {
            initial_risk: None,
            risk_trace: Vec::new(),
            grad_w_sq_norms: Vec::new(),
            inner_loss_trace: Vec::new(),
            argmax_group_trace: Vec::new(),
            k_hat: None,
            l_hat: None,
            sigma_hat: None,
            sigma_prime_hat: None,
            monotone_fraction: 1.0,
            warnings: Vec::new(),
        }
    }

    /// Smallest squared weight-gradient norm seen so far.
    pub fn min_grad_w_sq_norm(&self) -> Option<f64> {
        self.grad_w_sq_norms
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: ParamVector,
    pub w: ParamVector,
    pub steps_done: usize,
    pub diagnostics: DiagnosticsReport,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            theta: self.theta.clone(),
            w: self.w.clone(),
            step: self.steps_done,
            seed,
        }
    }
}

/// Largest pairwise |grad_a - grad_b| / |point_a - point_b| over (point,
/// gradient) observations; None when no pair of points is separated.
pub fn lipschitz_estimate(observations: &[(ParamVector, ParamVector)]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..observations.len() {
        for j in (i + 1)..observations.len() {
            let dx = observations[i].0.plus_scaled(-1.0, &observations[j].0).norm();
            if dx < 1e-12 {
                continue;
            }
            let dg = observations[i].1.plus_scaled(-1.0, &observations[j].1).norm();
            let ratio = dg / dx;
            best = Some(best.map_or(ratio, |b| b.max(ratio)));
        }
    }
    best
}

/// Step-size sanity checks against the estimated constants.
pub fn assumption_warnings(config: &TrainConfig, report: &DiagnosticsReport) -> Vec<String> {
    let mut warnings = Vec::new();
    let (inner, _) = config.effective_step_sizes();
    if let (Some(k), Some(l)) = (report.k_hat, report.l_hat) {
        if k > 0.0 && l > 0.0 {
            let bound = 2.0 * k / l;
            if inner > bound {
                warnings.push(format!(
                    "inner step size {inner} exceeds the descent-safe bound {bound:.6} \
                     (2 * alignment {k:.6} / smoothness {l:.6}); the outer risk may increase"
                ));
            }
        } else if k <= 0.0 {
            warnings.push(format!(
                "inner descent directions misalign with the outer risk \
                 (alignment estimate {k:.6}); descent is not guaranteed at any step size"
            ));
        }
    }
    if config.schedule == StepSchedule::HorizonScaled {
        if let Some(l) = report.l_hat {
            if l > 0.0 && config.outer_scale >= 2.0 / l {
                warnings.push(format!(
                    "outer step scale {} is at or above 2 / smoothness ({:.6}); \
                     the weight-gradient decay guarantee may not hold",
                    config.outer_scale,
                    2.0 / l
                ));
            }
        }
    }
    warnings
}

fn sample_batch<T: Clone>(set: &[T], size: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<T> {
    use rand::Rng;
    if size >= set.len() {
        // Full batch, dataset order; no draws consumed.
        set.to_vec()
    } else {
        (0..size).map(|_| set[rng.random_range(0..set.len())].clone()).collect()
    }
}

/// Trains both models from fresh Glorot initializations.
pub fn train(
    problem: &BilevelProblem,
    train_set: &[AnnotatedExample],
    val_set: &[LabeledExample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    problem.validate()?;
    config.validate()?;
    let theta = models::init_params(
        problem.classifier,
        rng::derive_seed(config.seed, purpose::CLASSIFIER_INIT),
    )?;
    let w = models::init_params(
        problem.estimator,
        rng::derive_seed(config.seed, purpose::ESTIMATOR_INIT),
    )?;
    run(problem, train_set, val_set, config, theta, w, 0)
}

/// Continues a checkpointed run up to the configured horizon. The checkpoint
/// seed must match the config seed: the run is a continuation, not a fork.
pub fn resume(
    problem: &BilevelProblem,
    train_set: &[AnnotatedExample],
    val_set: &[LabeledExample],
    config: &TrainConfig,
    checkpoint: &Checkpoint,
) -> Result<TrainOutcome, TrainError> {
    problem.validate()?;
    config.validate()?;
    if checkpoint.step > config.steps {
        return Err(TrainError::CheckpointAhead {
            at: checkpoint.step,
            horizon: config.steps,
        });
    }
    if checkpoint.seed != config.seed {
        return Err(TrainError::Config("checkpoint seed does not match the config seed"));
    }
    if !checkpoint.theta.matches_spec(problem.classifier)
        || !checkpoint.w.matches_spec(problem.estimator)
    {
        return Err(TrainError::CheckpointShape);
    }
    run(
        problem,
        train_set,
        val_set,
        config,
        checkpoint.theta.clone(),
        checkpoint.w.clone(),
        checkpoint.step,
    )
}

#[allow(clippy::too_many_arguments)]
fn run(
    problem: &BilevelProblem,
    train_set: &[AnnotatedExample],
    val_set: &[LabeledExample],
    config: &TrainConfig,
    mut theta: ParamVector,
    mut w: ParamVector,
    start_step: usize,
) -> Result<TrainOutcome, TrainError> {
    let mut diag = DiagnosticsReport::empty();
    if start_step >= config.steps {
        return Ok(TrainOutcome {
            theta,
            w,
            steps_done: start_step,
            diagnostics: diag,
        });
    }
    if train_set.is_empty() {
        return Err(TrainError::Config("training needs a nonempty train set"));
    }
    if val_set.is_empty() {
        return Err(TrainError::Config("training needs a nonempty validation set"));
    }
    let schema = problem.schema();
    data::validate_annotated(train_set, &schema)?;
    data::validate_labeled(val_set, &schema, problem.group_count)?;

    let (mu, alpha) = config.effective_step_sizes();
    let outer = &config.outer;
    diag.initial_risk = Some(
        outer
            .evaluate(problem.classifier, &theta, val_set, problem.group_count)?
            .value,
    );

    let mut k_hat: Option<f64> = None;
    let mut l_hat: Option<f64> = None;
    let mut sigma_hat: Option<f64> = None;
    let mut sigma_prime_hat: Option<f64> = None;

    for step in start_step..config.steps {
        let mut step_rng = rng::stream(config.seed, purpose::BATCH, step as u64);
        let train_batch = sample_batch(train_set, config.batch_train, &mut step_rng);
        let val_batch = sample_batch(val_set, config.batch_val, &mut step_rng);

        // 1. Pseudo update under the current weights.
        let soft_now = problem.soft_labels(&w, &train_batch)?;
        let (_, grad_now) =
            losses::inner_loss_grad(problem.classifier, &theta, &train_batch, &soft_now)?;
        let theta_pseudo = theta.plus_scaled(-mu, &grad_now);
        if !theta_pseudo.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "pseudo classifier parameters",
            });
        }

        // 2. Weight update through the pseudo classifier.
        let (_, u) = outer.gradient(
            problem.classifier,
            &theta_pseudo,
            &val_batch,
            problem.group_count,
        )?;
        let metagrad = match config.backend {
            MetaGradBackend::Analytic => {
                problem.metagrad_from_risk_grad(&theta, &w, &train_batch, &u, mu)?
            }
            MetaGradBackend::FiniteDifference => problem.metagrad_w_fd(
                &theta,
                &w,
                &train_batch,
                &val_batch,
                outer,
                mu,
                DEFAULT_FD_STEP,
            )?,
        };
        if !metagrad.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "weight gradient",
            });
        }
        let w_next = update_w(&w, &metagrad, alpha);

        // 3. Actual classifier update under the refreshed weights.
        let soft_next = problem.soft_labels(&w_next, &train_batch)?;
        let (inner_loss, grad_next) =
            losses::inner_loss_grad(problem.classifier, &theta, &train_batch, &soft_next)?;
        let theta_next = theta.plus_scaled(-mu, &grad_next);
        if !theta_next.is_finite() || !inner_loss.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "classifier parameters",
            });
        }

        let risk_post = outer.evaluate(
            problem.classifier,
            &theta_next,
            &val_batch,
            problem.group_count,
        )?;
        if !risk_post.value.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "outer risk",
            });
        }

        if config.estimate_constants {
            let grad_sq = grad_next.sq_norm();
            if grad_sq > 1e-24 {
                let alignment = u.dot(&grad_next) / grad_sq;
                k_hat = Some(k_hat.map_or(alignment, |k| k.min(alignment)));
            }
            let (_, u_at_theta) = outer.gradient(
                problem.classifier,
                &theta,
                &val_batch,
                problem.group_count,
            )?;
            let step_len = theta_pseudo.plus_scaled(-1.0, &theta).norm();
            if step_len > 1e-12 {
                let curvature = u.plus_scaled(-1.0, &u_at_theta).norm() / step_len;
                l_hat = Some(l_hat.map_or(curvature, |l| l.max(curvature)));
            }
            for norm in [grad_now.norm(), grad_next.norm(), u.norm(), u_at_theta.norm()] {
                sigma_hat = Some(sigma_hat.map_or(norm, |s| s.max(norm)));
            }
            if mu > 0.0 && u.norm() > 1e-12 {
                let mixed = metagrad.norm() / (mu * u.norm());
                sigma_prime_hat = Some(sigma_prime_hat.map_or(mixed, |s| s.max(mixed)));
            }
        }

        diag.risk_trace.push(risk_post.value);
        diag.grad_w_sq_norms.push(metagrad.sq_norm());
        diag.inner_loss_trace.push(inner_loss);
        diag.argmax_group_trace.push(risk_post.argmax_group);

        theta = theta_next;
        w = w_next;
    }

    diag.k_hat = k_hat;
    diag.l_hat = l_hat;
    diag.sigma_hat = sigma_hat;
    diag.sigma_prime_hat = sigma_prime_hat;

    let mut non_increasing = 0usize;
    let mut prev = diag.initial_risk.expect("initial risk is set when steps run");
    for &r in &diag.risk_trace {
        if r <= prev + DESCENT_TOLERANCE {
            non_increasing += 1;
        }
        prev = r;
    }
    diag.monotone_fraction = non_increasing as f64 / diag.risk_trace.len() as f64;
    if config.estimate_constants {
        diag.warnings = assumption_warnings(config, &diag);
    }

    Ok(TrainOutcome {
        theta,
        w,
        steps_done: config.steps,
        diagnostics: diag,
    })
}
