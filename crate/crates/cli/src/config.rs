//! The run document: one TOML file describing data, models, method, seeds,
//! and the output directory. Commands read the same document and differ only
//! in which parts they use.
//!
//! Relative paths inside the document resolve against the document's own
//! directory, so a run is reproducible from wherever it is invoked. Paths
//! given on the command line resolve against the working directory as usual.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use softlabel_core::baselines::Method;
use softlabel_core::eval::{ExperimentPlan, FeatureBlock};
use softlabel_core::synth::{default_annotators, AnnotatorModel, SpuriousConfig};

use crate::errors::CliError;
use crate::formats;

/// A parsed and structurally validated run document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Method id; optional because `gen-data` and `compare` ignore it.
    #[serde(default)]
    pub method: Option<String>,
    /// Training seeds; `train` uses the first, `compare` runs all of them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory for every file the command writes.
    pub out: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub plan: ExperimentPlan,
    #[serde(default)]
    pub explain: Option<ExplainSection>,
}

fn default_seeds() -> Vec<u64> {
    softlabel_core::eval::DEFAULT_SEEDS.to_vec()
}

/// Where examples come from: a directory of dataset files or an inline
/// synthetic benchmark. Exactly one must be given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthSection>,
}

/// Synthetic benchmark settings; omitted fields take the benchmark defaults,
/// and omitted annotators take the default panel for the class count.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub class_count: Option<usize>,
    pub core_dim: Option<usize>,
    pub spurious_dim: Option<usize>,
    pub train_size: Option<usize>,
    pub val_size: Option<usize>,
    pub test_size: Option<usize>,
    pub train_spurious_rate: Option<f64>,
    pub eval_spurious_rate: Option<f64>,
    pub annotators: Option<Vec<AnnotatorModel>>,
    pub seed: Option<u64>,
}

impl SynthSection {
    pub fn resolve(&self) -> Result<SpuriousConfig, CliError> {
        let mut config = SpuriousConfig::default();
        if let Some(v) = self.class_count {
            config.class_count = v;
        }
        if let Some(v) = self.core_dim {
            config.core_dim = v;
        }
        if let Some(v) = self.spurious_dim {
            config.spurious_dim = v;
        }
        if let Some(v) = self.train_size {
            config.train_size = v;
        }
        if let Some(v) = self.val_size {
            config.val_size = v;
        }
        if let Some(v) = self.test_size {
            config.test_size = v;
        }
        if let Some(v) = self.train_spurious_rate {
            config.train_spurious_rate = v;
        }
        if let Some(v) = self.eval_spurious_rate {
            config.eval_spurious_rate = v;
        }
        config.annotators = match &self.annotators {
            Some(list) => list.clone(),
            None => default_annotators(config.class_count)
                .map_err(|e| CliError::config(format!("data.synthetic: {e}")))?,
        };
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config
            .validate()
            .map_err(|e| CliError::config(format!("data.synthetic: {e}")))?;
        Ok(config)
    }
}

/// Block-attribution settings for the `explain` command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    /// Model file to explain; defaults to `model.json` in the output
    /// directory.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Feature blocks; defaults to the core/spurious split for synthetic
    /// data and is required for file-backed data.
    #[serde(default)]
    pub blocks: Vec<FeatureBlock>,
    #[serde(default)]
    pub baseline: BaselineKind,
    /// How many test examples to explain, from the front of the split.
    #[serde(default = "default_explain_examples")]
    pub examples: usize,
}

fn default_explain_examples() -> usize {
    10
}

/// What masked features are replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    #[default]
    Zero,
    /// Per-feature mean of the test split.
    Mean,
}

/// Command-line overrides applied on top of the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Master seed: replaces the seed list and the synthetic data seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<String>,
}

fn registered_ids() -> String {
    let ids: Vec<&str> = Method::ALL.iter().map(|m| m.id()).collect();
    ids.join(", ")
}

/// Parses a method id against the registry.
pub fn parse_method(id: &str) -> Result<Method, CliError> {
    Method::from_id(id).ok_or_else(|| {
        CliError::config(format!(
            "unknown method id `{id}`; registered ids: {}",
            registered_ids()
        ))
    })
}

impl RunConfig {
    /// Loads a document, applies overrides, resolves relative paths, and
    /// runs every check that needs no example data.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let content = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&content)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;

        if let Some(seed) = overrides.seed {
            config.seeds = vec![seed];
            if let Some(synth) = &mut config.data.synthetic {
                synth.seed = Some(seed);
            }
        }
        if let Some(method) = &overrides.method {
            config.method = Some(method.clone());
        }

        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.out = resolve(base, &config.out);
        if let Some(dir) = &config.data.dir {
            config.data.dir = Some(resolve(base, dir));
        }
        if let Some(explain) = &mut config.explain {
            if let Some(model) = &explain.model {
                explain.model = Some(resolve(base, model));
            }
        }
        // Command-line paths stay relative to the working directory.
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }

        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must not be empty"));
        }
        if let Some(id) = &self.method {
            parse_method(id)?;
        }
        match (&self.data.dir, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(CliError::config(
                    "give either data.dir or data.synthetic, not both",
                ))
            }
            (None, None) => {
                return Err(CliError::config(
                    "data needs either a dir or a synthetic section",
                ))
            }
            (Some(dir), None) => check_dataset_dir(dir)?,
            (None, Some(synth)) => {
                synth.resolve()?;
            }
        }
        self.plan
            .classifier
            .validate()
            .map_err(|e| CliError::config(format!("plan.classifier: {e}")))?;
        self.plan
            .estimator
            .validate()
            .map_err(|e| CliError::config(format!("plan.estimator: {e}")))?;
        self.plan
            .bilevel
            .validate()
            .map_err(|e| CliError::config(format!("plan.bilevel: {e}")))?;
        self.plan
            .erm
            .validate()
            .map_err(|e| CliError::config(format!("plan.erm: {e}")))?;
        if !(self.plan.cvar_alpha > 0.0 && self.plan.cvar_alpha <= 1.0) {
            return Err(CliError::config("plan.cvar_alpha must lie in (0, 1]"));
        }
        if let Some(explain) = &self.explain {
            if explain.examples == 0 {
                return Err(CliError::config("explain.examples must be positive"));
            }
        }
        Ok(())
    }

    /// The configured method, required by `train` and `explain`.
    pub fn method(&self) -> Result<Method, CliError> {
        match &self.method {
            Some(id) => parse_method(id),
            None => Err(CliError::config(format!(
                "no method configured; set `method` in the document or pass --method \
                 (registered ids: {})",
                registered_ids()
            ))),
        }
    }

    /// Where `train` writes its model and where `eval` and `explain` look
    /// by default.
    pub fn default_model_path(&self) -> PathBuf {
        self.out.join(formats::MODEL_FILE)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn check_dataset_dir(dir: &Path) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::config(format!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    for name in [
        formats::SCHEMA_FILE,
        formats::GROUPS_FILE,
        formats::TRAIN_FILE,
        formats::VAL_FILE,
        formats::TEST_FILE,
    ] {
        if !dir.join(name).is_file() {
            return Err(CliError::config(format!(
                "data directory {} is missing {name}",
                dir.display()
            )));
        }
    }
    Ok(())
}
