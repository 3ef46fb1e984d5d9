//! On-disk formats: line-delimited example records, the group table, and the
//! JSON files for models, estimator weights, and checkpoints.
//!
//! Dataset records are one JSON object per line. Training records carry
//! annotations; validation and test records carry a gold label plus the
//! topic index that, together with the label, selects the example's group
//! through the group table. Records may carry either a dense `features`
//! array or a raw `text` string; text is hashed into the schema's feature
//! dimension on load.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use softlabel_core::baselines::Method;
use softlabel_core::bilevel::Checkpoint;
use softlabel_core::data::{
    self, AnnotatedExample, DataError, DataSchema, GroupSpec, LabeledExample,
};
use softlabel_core::eval::TrainedModel;
use softlabel_core::models::{ModelSpec, ParamVector};
use thiserror::Error;

/// File names inside a dataset directory.
pub const SCHEMA_FILE: &str = "schema.json";
pub const GROUPS_FILE: &str = "groups.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TRAIN_TRUTH_FILE: &str = "train_truth.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// File names inside a run output directory.
pub const MODEL_FILE: &str = "model.json";
pub const ESTIMATOR_FILE: &str = "estimator.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EXPLAIN_FILE: &str = "explain.csv";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Data { path: String, source: DataError },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn record(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Record {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    fn data(path: &Path, source: DataError) -> Self {
        FormatError::Data {
            path: path.display().to_string(),
            source,
        }
    }

    fn file(path: &Path, message: impl Into<String>) -> Self {
        FormatError::File {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// A training record: one vote per annotator, no gold label.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    annotations: Vec<usize>,
}

/// A validation or test record: gold label plus the topic half of the group
/// key.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    label: usize,
    topic: usize,
}

fn resolve_features(
    path: &Path,
    line: usize,
    id: &str,
    features: Option<Vec<f64>>,
    text: Option<String>,
    feature_dim: usize,
) -> Result<Vec<f64>, FormatError> {
    match (features, text) {
        (Some(f), None) => Ok(f),
        (None, Some(t)) => Ok(data::featurize_text(&t, feature_dim)),
        (Some(_), Some(_)) => Err(FormatError::record(
            path,
            line,
            format!("record {id} has both features and text; give exactly one"),
        )),
        (None, None) => Err(FormatError::record(
            path,
            line,
            format!("record {id} has neither features nor text"),
        )),
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, FormatError> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut lines = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((index + 1, line));
    }
    Ok(lines)
}

/// Loads a training split and validates it against the schema.
pub fn read_annotated(path: &Path, schema: &DataSchema) -> Result<Vec<AnnotatedExample>, FormatError> {
    let mut examples = Vec::new();
    for (line, content) in read_lines(path)? {
        let record: TrainRecord = serde_json::from_str(&content)
            .map_err(|e| FormatError::record(path, line, e.to_string()))?;
        let features = resolve_features(
            path,
            line,
            &record.id,
            record.features,
            record.text,
            schema.feature_dim,
        )?;
        examples.push(AnnotatedExample {
            id: record.id,
            features,
            annotations: record.annotations,
        });
    }
    data::validate_annotated(&examples, schema).map_err(|e| FormatError::data(path, e))?;
    Ok(examples)
}

pub fn write_annotated(path: &Path, examples: &[AnnotatedExample]) -> Result<(), FormatError> {
    let mut out = String::new();
    for ex in examples {
        let record = TrainRecord {
            id: ex.id.clone(),
            features: Some(ex.features.clone()),
            text: None,
            annotations: ex.annotations.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

/// Loads a labeled split, mapping each record's (topic, label) pair to its
/// group through the table.
pub fn read_labeled(
    path: &Path,
    schema: &DataSchema,
    groups: &GroupSpec,
) -> Result<Vec<LabeledExample>, FormatError> {
    let mut examples = Vec::new();
    for (line, content) in read_lines(path)? {
        let record: LabeledRecord = serde_json::from_str(&content)
            .map_err(|e| FormatError::record(path, line, e.to_string()))?;
        let features = resolve_features(
            path,
            line,
            &record.id,
            record.features,
            record.text,
            schema.feature_dim,
        )?;
        let group = groups
            .group_of(record.topic, record.label)
            .map_err(|e| FormatError::record(path, line, e.to_string()))?;
        examples.push(LabeledExample {
            id: record.id,
            features,
            label: record.label,
            group,
        });
    }
    data::validate_labeled(&examples, schema, groups.group_count())
        .map_err(|e| FormatError::data(path, e))?;
    Ok(examples)
}

pub fn write_labeled(
    path: &Path,
    examples: &[LabeledExample],
    groups: &GroupSpec,
) -> Result<(), FormatError> {
    let mut out = String::new();
    for ex in examples {
        let (topic, label) = groups.pair_of(ex.group).ok_or_else(|| {
            FormatError::file(
                path,
                format!("example {}: group {} is not in the group table", ex.id, ex.group),
            )
        })?;
        if label != ex.label {
            return Err(FormatError::file(
                path,
                format!(
                    "example {}: group {} maps back to label {label}, record says {}",
                    ex.id, ex.group, ex.label
                ),
            ));
        }
        let record = LabeledRecord {
            id: ex.id.clone(),
            features: Some(ex.features.clone()),
            text: None,
            label: ex.label,
            topic,
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

/// One row of the group table file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupRow {
    topic: usize,
    label: usize,
    group: usize,
}

pub fn read_group_spec(path: &Path) -> Result<GroupSpec, FormatError> {
    let content = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let rows: Vec<GroupRow> =
        serde_json::from_str(&content).map_err(|e| FormatError::file(path, e.to_string()))?;
    let entries: Vec<(usize, usize, usize)> =
        rows.iter().map(|r| (r.topic, r.label, r.group)).collect();
    GroupSpec::from_entries(&entries).map_err(|e| FormatError::data(path, e))
}

pub fn write_group_spec(path: &Path, groups: &GroupSpec) -> Result<(), FormatError> {
    let rows: Vec<GroupRow> = groups
        .entries()
        .into_iter()
        .map(|(topic, label, group)| GroupRow { topic, label, group })
        .collect();
    write_pretty_json(path, &rows)
}

pub fn read_schema(path: &Path) -> Result<DataSchema, FormatError> {
    let content = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| FormatError::file(path, e.to_string()))
}

/// A trained classifier with enough context to evaluate it later.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub method: Method,
    pub seed: u64,
    pub classifier: ModelSpec,
    pub group_count: usize,
    pub model: StoredModel,
}

/// Parameters of either a single classifier or a voting ensemble.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StoredModel {
    Single { params: ParamVector },
    Voting { members: Vec<ParamVector> },
}

impl StoredModel {
    pub fn from_trained(model: &TrainedModel) -> Self {
        match model {
            TrainedModel::Single(params) => StoredModel::Single {
                params: params.clone(),
            },
            TrainedModel::Voting(fit) => StoredModel::Voting {
                members: fit.members.clone(),
            },
        }
    }

    pub fn into_trained(self) -> TrainedModel {
        match self {
            StoredModel::Single { params } => TrainedModel::Single(params),
            StoredModel::Voting { members } => {
                TrainedModel::Voting(softlabel_core::baselines::EnsembleFit { members })
            }
        }
    }
}

/// The trained annotator-weight estimator saved next to a bi-level model.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorFile {
    pub estimator: ModelSpec,
    pub params: ParamVector,
}

pub fn read_model(path: &Path) -> Result<ModelFile, FormatError> {
    let content = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| FormatError::file(path, e.to_string()))
}

pub fn read_estimator(path: &Path) -> Result<EstimatorFile, FormatError> {
    let content = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| FormatError::file(path, e.to_string()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let content = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| FormatError::file(path, e.to_string()))
}

/// Writes any serializable value as pretty JSON with a trailing newline.
pub fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut content = serde_json::to_string_pretty(value).expect("values serialize");
    content.push('\n');
    fs::write(path, content).map_err(|e| FormatError::io(path, e))
}

/// Writes raw text, creating parent directories as needed by the caller.
pub fn write_text(path: &Path, content: &str) -> Result<(), FormatError> {
    let mut file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    file.write_all(content.as_bytes())
        .map_err(|e| FormatError::io(path, e))
}
