//! Example types shared by every pipeline stage, the hashed text featurizer,
//! and the (topic, class) -> group mapping used by group-robust risks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Dataset-wide dimensions every record must agree with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    pub class_count: usize,
    pub annotator_count: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("example {id}: expected {expected} features, got {got}")]
    FeatureDim { id: String, expected: usize, got: usize },
    #[error("example {id}: feature {index} is not finite")]
    NonFiniteFeature { id: String, index: usize },
    #[error("example {id}: expected {expected} annotations, got {got}")]
    AnnotationCount { id: String, expected: usize, got: usize },
    #[error("example {id}: annotation {value} out of range for {class_count} classes")]
    AnnotationRange { id: String, value: usize, class_count: usize },
    #[error("example {id}: label {value} out of range for {class_count} classes")]
    LabelRange { id: String, value: usize, class_count: usize },
    #[error("example {id}: group {value} out of range for {group_count} groups")]
    GroupRange { id: String, value: usize, group_count: usize },
    #[error("duplicate example id {id}")]
    DuplicateId { id: String },
    #[error("group table: duplicate entry for topic {topic}, class {label}")]
    DuplicatePair { topic: usize, label: usize },
    #[error("group table: group index {group} appears more than once")]
    DuplicateGroup { group: usize },
    #[error("group table: group indices must be contiguous from 0; {group} is missing")]
    MissingGroup { group: usize },
    #[error("group table is empty")]
    EmptyGroupTable,
    #[error("no group for topic {topic}, class {label}")]
    UnmappedGroup { topic: usize, label: usize },
    #[error("class index {class} out of range for {class_count} classes")]
    ClassRange { class: usize, class_count: usize },
}

/// One training example: dense features plus one class vote per annotator.
/// Annotation positions are aligned across the dataset (position j is always
/// the same annotator).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    pub id: String,
    pub features: Vec<f64>,
    pub annotations: Vec<usize>,
}

impl AnnotatedExample {
    pub fn validate(&self, schema: &DataSchema) -> Result<(), DataError> {
        check_features(&self.id, &self.features, schema.feature_dim)?;
        if self.annotations.len() != schema.annotator_count {
            return Err(DataError::AnnotationCount {
                id: self.id.clone(),
                expected: schema.annotator_count,
                got: self.annotations.len(),
            });
        }
        for &a in &self.annotations {
            if a >= schema.class_count {
                return Err(DataError::AnnotationRange {
                    id: self.id.clone(),
                    value: a,
                    class_count: schema.class_count,
                });
            }
        }
        Ok(())
    }

    /// Distinct annotated classes, ascending.
    pub fn candidate_set(&self) -> Vec<usize> {
        candidate_set(&self.annotations)
    }
}

/// Distinct classes appearing in a vote list, ascending.
pub fn candidate_set(annotations: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = annotations.iter().copied().collect();
    set.into_iter().collect()
}

/// One trusted example: features, a gold label, and a group index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
    pub group: usize,
}

impl LabeledExample {
    pub fn validate(&self, schema: &DataSchema, group_count: usize) -> Result<(), DataError> {
        check_features(&self.id, &self.features, schema.feature_dim)?;
        if self.label >= schema.class_count {
            return Err(DataError::LabelRange {
                id: self.id.clone(),
                value: self.label,
                class_count: schema.class_count,
            });
        }
        if self.group >= group_count {
            return Err(DataError::GroupRange {
                id: self.id.clone(),
                value: self.group,
                group_count,
            });
        }
        Ok(())
    }
}

fn check_features(id: &str, features: &[f64], expected: usize) -> Result<(), DataError> {
    if features.len() != expected {
        return Err(DataError::FeatureDim {
            id: String::from(id),
            expected,
            got: features.len(),
        });
    }
    for (index, v) in features.iter().enumerate() {
        if !v.is_finite() {
            return Err(DataError::NonFiniteFeature {
                id: String::from(id),
                index,
            });
        }
    }
    Ok(())
}

/// Validates every example and rejects duplicate ids.
pub fn validate_annotated(examples: &[AnnotatedExample], schema: &DataSchema) -> Result<(), DataError> {
    let mut seen = BTreeSet::new();
    for ex in examples {
        ex.validate(schema)?;
        if !seen.insert(ex.id.as_str()) {
            return Err(DataError::DuplicateId { id: ex.id.clone() });
        }
    }
    Ok(())
}

/// Validates every example and rejects duplicate ids.
pub fn validate_labeled(
    examples: &[LabeledExample],
    schema: &DataSchema,
    group_count: usize,
) -> Result<(), DataError> {
    let mut seen = BTreeSet::new();
    for ex in examples {
        ex.validate(schema, group_count)?;
        if !seen.insert(ex.id.as_str()) {
            return Err(DataError::DuplicateId { id: ex.id.clone() });
        }
    }
    Ok(())
}

/// A bijection between (topic, class) pairs and group indices 0..G-1.
///
/// Topics are whatever coarse partition the dataset ships with (subject
/// clusters, a spurious-attribute indicator, ...); crossing them with the
/// class label yields the groups that the robust risks quantify over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pair_to_group: BTreeMap<(usize, usize), usize>,
    group_to_pair: Vec<(usize, usize)>,
}

impl GroupSpec {
    /// Builds the mapping from (topic, class, group) triples. Every pair must
    /// be distinct and the group indices must cover 0..n-1 exactly once.
    pub fn from_entries(entries: &[(usize, usize, usize)]) -> Result<Self, DataError> {
        if entries.is_empty() {
            return Err(DataError::EmptyGroupTable);
        }
        let mut pair_to_group = BTreeMap::new();
        let mut by_group = BTreeMap::new();
        for &(topic, label, group) in entries {
            if pair_to_group.insert((topic, label), group).is_some() {
                return Err(DataError::DuplicatePair { topic, label });
            }
            if by_group.insert(group, (topic, label)).is_some() {
                return Err(DataError::DuplicateGroup { group });
            }
        }
        for (expected, &group) in by_group.keys().enumerate() {
            if group != expected {
                return Err(DataError::MissingGroup { group: expected });
            }
        }
        let group_to_pair = by_group.into_values().collect();
        Ok(Self {
            pair_to_group,
            group_to_pair,
        })
    }

    pub fn group_of(&self, topic: usize, label: usize) -> Result<usize, DataError> {
        self.pair_to_group
            .get(&(topic, label))
            .copied()
            .ok_or(DataError::UnmappedGroup { topic, label })
    }

    /// Inverse lookup; used to write group-labeled data back out.
    pub fn pair_of(&self, group: usize) -> Option<(usize, usize)> {
        self.group_to_pair.get(group).copied()
    }

    pub fn group_count(&self) -> usize {
        self.group_to_pair.len()
    }

    /// All (topic, class, group) triples, ordered by group index.
    pub fn entries(&self) -> Vec<(usize, usize, usize)> {
        self.group_to_pair
            .iter()
            .enumerate()
            .map(|(group, &(topic, label))| (topic, label, group))
            .collect()
    }
}

/// A unit mass at one class, usable wherever a label distribution is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    class: usize,
    dimension: usize,
}

impl OneHot {
    pub fn new(class: usize, dimension: usize) -> Result<Self, DataError> {
        if class >= dimension {
            return Err(DataError::ClassRange {
                class,
                class_count: dimension,
            });
        }
        Ok(Self { class, dimension })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn component(&self, index: usize) -> f64 {
        if index == self.class {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        v[self.class] = 1.0;
        v
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a; a fixed hash keeps feature buckets stable across platforms and
/// releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed bag of words: lowercase, split on non-alphanumeric characters,
/// bucket by FNV-1a modulo the dimension, then L2-normalize. Texts with no
/// tokens (and dimension 0) produce the all-zero vector.
pub fn featurize_text(text: &str, dimension: usize) -> Vec<f64> {
    if dimension == 0 {
        return Vec::new();
    }
    let mut counts = vec![0.0; dimension];
    let lowered = text.to_lowercase();
    for token in lowered.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let bucket = (fnv1a(token.as_bytes()) % dimension as u64) as usize;
        counts[bucket] += 1.0;
    }
    let norm = math::l2_norm(&counts);
    if norm > 0.0 {
        for v in &mut counts {
            *v /= norm;
        }
    }
    counts
}
