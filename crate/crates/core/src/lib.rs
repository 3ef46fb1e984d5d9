//! Learning classifiers from crowd annotations with group-robust objectives.
//!
//! The centerpiece is a bi-level trainer (`bilevel`): an annotator-weight
//! estimator turns each example's votes into a soft label, a classifier is
//! trained against those soft labels, and the weights themselves are tuned so
//! that a one-step-ahead version of the classifier minimizes a robust risk
//! (worst group or worst loss tail) on a small trusted validation set.
//!
//! Around that core live the shared example types (`data`), the two small
//! softmax models (`models`), soft labels and risks (`losses`), classical
//! aggregation baselines (`baselines`), a synthetic spurious-correlation
//! benchmark (`synth`), and evaluation helpers (`eval`).
//!
//! Everything is deterministic given explicit seeds, and the crate builds
//! without the standard library (`alloc` is required; disable the `std`
//! feature).

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod baselines;
pub mod bilevel;
pub mod data;
pub mod eval;
pub mod losses;
pub mod math;
pub mod models;
pub mod rng;
pub mod synth;
