//! Synthetic spurious-correlation benchmark.
//!
//! Features split into a core block, whose mean is set by the true class,
//! and a spurious block, whose mean is set by a binary attribute that agrees
//! with the class parity most of the time during training but only half the
//! time at evaluation. Groups are (attribute agreement, class) pairs, so the
//! minority groups are exactly the examples where the shortcut fails.
//!
//! Annotators come in two kinds: constant ones with a fixed confusion
//! matrix, and spurious-conditioned ones whose accuracy depends on whether
//! the observed spurious attribute matches the class parity. The second
//! kind looks reliable on majority groups and degrades on minority ones,
//! which is the failure mode annotator reweighting is meant to catch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AnnotatedExample, DataSchema, GroupSpec, LabeledExample};
use crate::rng::{self, purpose, standard_normal};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("bad benchmark setup: {0}")]
    Config(&'static str),
    #[error("confusion matrix must be {expected}x{expected}, got {rows}x{cols}")]
    ConfusionShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("confusion row {class} sums to {sum}, expected 1")]
    ConfusionRowSum { class: usize, sum: f64 },
    #[error("confusion row {class} has negative entry {value} for vote {vote}")]
    ConfusionNegative { class: usize, vote: usize, value: f64 },
}

/// Row-stochastic vote distribution: row y gives the vote probabilities an
/// annotator uses on a true-class-y example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, SynthError> {
        let matrix = Self { rows };
        matrix.validate(matrix.rows.len())?;
        Ok(matrix)
    }

    /// Probability `accuracy` on the diagonal, the rest spread evenly.
    pub fn diagonal(class_count: usize, accuracy: f64) -> Result<Self, SynthError> {
        if class_count < 2 {
            return Err(SynthError::Config("diagonal confusion needs at least 2 classes"));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(SynthError::Config("diagonal accuracy must lie in [0, 1]"));
        }
        let off = (1.0 - accuracy) / (class_count - 1) as f64;
        let rows = (0..class_count)
            .map(|y| {
                (0..class_count)
                    .map(|v| if v == y { accuracy } else { off })
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn validate(&self, class_count: usize) -> Result<(), SynthError> {
        if self.rows.len() != class_count || self.rows.iter().any(|r| r.len() != class_count) {
            return Err(SynthError::ConfusionShape {
                expected: class_count,
                rows: self.rows.len(),
                cols: self.rows.first().map_or(0, Vec::len),
            });
        }
        for (class, row) in self.rows.iter().enumerate() {
            for (vote, &value) in row.iter().enumerate() {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(SynthError::ConfusionNegative { class, vote, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SynthError::ConfusionRowSum { class, sum });
            }
        }
        Ok(())
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.rows[class]
    }
}

/// How one annotator votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnnotatorModel {
    /// One confusion matrix everywhere.
    Constant { confusion: ConfusionMatrix },
    /// Accuracy keyed on the observed shortcut: `agreeing` applies when the
    /// sign of the first spurious feature matches the class parity,
    /// `disagreeing` otherwise.
    SpuriousConditioned {
        agreeing: ConfusionMatrix,
        disagreeing: ConfusionMatrix,
    },
}

impl AnnotatorModel {
    pub fn validate(&self, class_count: usize) -> Result<(), SynthError> {
        match self {
            AnnotatorModel::Constant { confusion } => confusion.validate(class_count),
            AnnotatorModel::SpuriousConditioned {
                agreeing,
                disagreeing,
            } => {
                agreeing.validate(class_count)?;
                disagreeing.validate(class_count)
            }
        }
    }

    fn vote_row(&self, class: usize, shortcut_agrees: bool) -> &[f64] {
        match self {
            AnnotatorModel::Constant { confusion } => confusion.row(class),
            AnnotatorModel::SpuriousConditioned {
                agreeing,
                disagreeing,
            } => {
                if shortcut_agrees {
                    agreeing.row(class)
                } else {
                    disagreeing.row(class)
                }
            }
        }
    }
}

/// Three steady annotators of decreasing quality plus three
/// shortcut-dependent ones that are sharp on majority examples and worse
/// than chance on minority ones, so their votes lean toward the shortcut
/// class rather than the true one.
pub fn default_annotators(class_count: usize) -> Result<Vec<AnnotatorModel>, SynthError> {
    let constant = |accuracy| -> Result<AnnotatorModel, SynthError> {
        Ok(AnnotatorModel::Constant {
            confusion: ConfusionMatrix::diagonal(class_count, accuracy)?,
        })
    };
    let conditioned = |agree, disagree| -> Result<AnnotatorModel, SynthError> {
        Ok(AnnotatorModel::SpuriousConditioned {
            agreeing: ConfusionMatrix::diagonal(class_count, agree)?,
            disagreeing: ConfusionMatrix::diagonal(class_count, disagree)?,
        })
    };
    Ok(vec![
        constant(0.9)?,
        constant(0.8)?,
        constant(0.7)?,
        conditioned(0.97, 0.30)?,
        conditioned(0.95, 0.25)?,
        conditioned(0.98, 0.35)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousConfig {
    pub class_count: usize,
    /// Feature dimensions whose mean tracks the class.
    pub core_dim: usize,
    /// Feature dimensions whose mean tracks the spurious attribute.
    pub spurious_dim: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// P(attribute agrees with class parity) on the train split.
    pub train_spurious_rate: f64,
    /// Same probability on the validation and test splits.
    pub eval_spurious_rate: f64,
    pub annotators: Vec<AnnotatorModel>,
    pub seed: u64,
}

impl Default for SpuriousConfig {
    fn default() -> Self {
        Self {
            class_count: 2,
            core_dim: 5,
            spurious_dim: 5,
            train_size: 6000,
            val_size: 1500,
            test_size: 4000,
            train_spurious_rate: 0.9,
            eval_spurious_rate: 0.5,
            annotators: default_annotators(2).expect("default annotators are valid"),
            seed: 0,
        }
    }
}

impl SpuriousConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.class_count < 2 {
            return Err(SynthError::Config("need at least 2 classes"));
        }
        if self.core_dim == 0 {
            return Err(SynthError::Config("need at least one core feature dimension"));
        }
        if self.spurious_dim == 0 {
            return Err(SynthError::Config("need at least one spurious feature dimension"));
        }
        for rate in [self.train_spurious_rate, self.eval_spurious_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(SynthError::Config("spurious rates must lie in [0, 1]"));
            }
        }
        if self.annotators.is_empty() {
            return Err(SynthError::Config("need at least one annotator"));
        }
        for model in &self.annotators {
            model.validate(self.class_count)?;
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.core_dim + self.spurious_dim
    }

    pub fn group_count(&self) -> usize {
        2 * self.class_count
    }

    pub fn schema(&self) -> DataSchema {
        DataSchema {
            class_count: self.class_count,
            annotator_count: self.annotators.len(),
            feature_dim: self.feature_dim(),
        }
    }
}

fn parity(class: usize) -> usize {
    class % 2
}

/// Group index for (attribute-agreement, class): disagreeing examples take
/// the first `class_count` groups, agreeing ones the next.
pub fn spurious_group(class: usize, attribute_agrees: bool, class_count: usize) -> usize {
    usize::from(attribute_agrees) * class_count + class
}

/// The (agreement, class) -> group table for reports and round trips.
pub fn spurious_group_spec(class_count: usize) -> GroupSpec {
    let entries: Vec<(usize, usize, usize)> = (0..2usize)
        .flat_map(|agrees| {
            (0..class_count)
                .map(move |class| (agrees, class, agrees * class_count + class))
        })
        .collect();
    GroupSpec::from_entries(&entries).expect("agreement-class table is well formed")
}

/// One generated split, before annotation.
struct RawExample {
    features: Vec<f64>,
    label: usize,
    group: usize,
}

/// The full benchmark: annotated train split (with held-back truth for
/// audits) plus labeled validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousBenchmark {
    pub schema: DataSchema,
    pub group_spec: GroupSpec,
    pub group_count: usize,
    pub train: Vec<AnnotatedExample>,
    /// Ground truth for the train split, index-aligned with `train`; not an
    /// input to any training method.
    pub train_truth: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

fn draw_raw(config: &SpuriousConfig, rate: f64, rng: &mut rand_chacha::ChaCha8Rng) -> RawExample {
    let class = rng.random_range(0..config.class_count);
    let attribute_agrees = rng.random_bool(rate);
    let attribute = if attribute_agrees {
        parity(class)
    } else {
        1 - parity(class)
    };
    let c = config.class_count as f64;
    let core_mean = 2.0 * class as f64 - (c - 1.0);
    let spur_mean = 2.0 * attribute as f64 - 1.0;
    let mut features = Vec::with_capacity(config.feature_dim());
    for _ in 0..config.core_dim {
        features.push(core_mean + standard_normal(rng));
    }
    for _ in 0..config.spurious_dim {
        features.push(spur_mean + standard_normal(rng));
    }
    RawExample {
        features,
        label: class,
        group: spurious_group(class, attribute_agrees, config.class_count),
    }
}

fn sample_vote(row: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (vote, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return vote;
        }
    }
    row.len() - 1
}

fn labeled_split(
    config: &SpuriousConfig,
    gen_purpose: u64,
    prefix: &str,
    size: usize,
    rate: f64,
) -> Vec<LabeledExample> {
    (0..size)
        .map(|i| {
            let mut rng = rng::stream(config.seed, gen_purpose, i as u64);
            let raw = draw_raw(config, rate, &mut rng);
            LabeledExample {
                id: format!("{prefix}-{i:06}"),
                features: raw.features,
                label: raw.label,
                group: raw.group,
            }
        })
        .collect()
}

/// Samples all three splits and annotates the train split. Every example and
/// every annotation set has its own derived stream, so resizing one split
/// never disturbs another and annotations are stable per example.
pub fn generate_spurious(config: &SpuriousConfig) -> Result<SpuriousBenchmark, SynthError> {
    config.validate()?;
    let spur_start = config.core_dim;

    let mut train = Vec::with_capacity(config.train_size);
    let mut train_truth = Vec::with_capacity(config.train_size);
    for i in 0..config.train_size {
        let mut gen = rng::stream(config.seed, purpose::GEN_TRAIN, i as u64);
        let raw = draw_raw(config, config.train_spurious_rate, &mut gen);
        let shortcut_agrees = (raw.features[spur_start] > 0.0) == (parity(raw.label) == 1);

        let mut annotate = rng::stream(config.seed, purpose::ANNOTATE, i as u64);
        let mut annotations: Vec<usize> = config
            .annotators
            .iter()
            .map(|model| sample_vote(model.vote_row(raw.label, shortcut_agrees), &mut annotate))
            .collect();
        // Keep the target reachable: soft labels only place mass on voted
        // classes, so the truth must appear at least once.
        if !annotations.contains(&raw.label) {
            let fix = annotate.random_range(0..annotations.len());
            annotations[fix] = raw.label;
        }

        let id = format!("tr-{i:06}");
        train.push(AnnotatedExample {
            id: id.clone(),
            features: raw.features.clone(),
            annotations,
        });
        train_truth.push(LabeledExample {
            id,
            features: raw.features,
            label: raw.label,
            group: raw.group,
        });
    }

    let val = labeled_split(
        config,
        purpose::GEN_VAL,
        "va",
        config.val_size,
        config.eval_spurious_rate,
    );
    let test = labeled_split(
        config,
        purpose::GEN_TEST,
        "te",
        config.test_size,
        config.eval_spurious_rate,
    );

    Ok(SpuriousBenchmark {
        schema: config.schema(),
        group_spec: spurious_group_spec(config.class_count),
        group_count: config.group_count(),
        train,
        train_truth,
        val,
        test,
    })
}
