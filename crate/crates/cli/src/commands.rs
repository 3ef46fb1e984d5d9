//! The five commands. Each one reads the run document, does all of its
//! computation, and only then writes files, so a failed run never leaves a
//! half-written output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use softlabel_core::baselines::Method;
use softlabel_core::bilevel::{self, BilevelProblem, Checkpoint, DiagnosticsReport, TrainConfig, TrainError};
use softlabel_core::data::{AnnotatedExample, DataSchema, GroupSpec, LabeledExample};
use softlabel_core::eval::{
    self, run_experiment, run_method, BenchmarkData, EvalError, ExperimentSummary, FeatureBlock,
    GroupMetrics, MaskBaseline, TrainedModel,
};
use softlabel_core::losses::OuterRisk;
use softlabel_core::models::ParamVector;
use softlabel_core::synth::{generate_spurious, SpuriousConfig};

use crate::config::{BaselineKind, RunConfig};
use crate::errors::CliError;
use crate::formats::{self, EstimatorFile, ModelFile, StoredModel};
use crate::reports::{self, ExplainRow, MetricsRow};

/// Every split in memory, from either data source.
pub struct DataBundle {
    pub schema: DataSchema,
    pub group_spec: GroupSpec,
    pub train: Vec<AnnotatedExample>,
    pub train_truth: Option<Vec<LabeledExample>>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// The generator settings when the data was produced inline.
    pub synth: Option<SpuriousConfig>,
}

impl DataBundle {
    pub fn load(config: &RunConfig) -> Result<Self, CliError> {
        if let Some(dir) = &config.data.dir {
            let schema = formats::read_schema(&dir.join(formats::SCHEMA_FILE))?;
            let group_spec = formats::read_group_spec(&dir.join(formats::GROUPS_FILE))?;
            let train = formats::read_annotated(&dir.join(formats::TRAIN_FILE), &schema)?;
            let val = formats::read_labeled(&dir.join(formats::VAL_FILE), &schema, &group_spec)?;
            let test = formats::read_labeled(&dir.join(formats::TEST_FILE), &schema, &group_spec)?;
            let truth_path = dir.join(formats::TRAIN_TRUTH_FILE);
            let train_truth = if truth_path.is_file() {
                Some(formats::read_labeled(&truth_path, &schema, &group_spec)?)
            } else {
                None
            };
            Ok(Self {
                schema,
                group_spec,
                train,
                train_truth,
                val,
                test,
                synth: None,
            })
        } else {
            let synth = config
                .data
                .synthetic
                .as_ref()
                .expect("validation guarantees a data source")
                .resolve()?;
            let bench = generate_spurious(&synth)
                .map_err(|e| CliError::runtime(format!("generating data: {e}")))?;
            Ok(Self {
                schema: bench.schema,
                group_spec: bench.group_spec,
                train: bench.train,
                train_truth: Some(bench.train_truth),
                val: bench.val,
                test: bench.test,
                synth: Some(synth),
            })
        }
    }

    pub fn benchmark(&self) -> BenchmarkData<'_> {
        BenchmarkData {
            train: &self.train,
            val: &self.val,
            test: &self.test,
            group_count: self.group_spec.group_count(),
            annotator_count: self.schema.annotator_count,
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", out.display())))
}

fn validate_plan(config: &RunConfig, data: &BenchmarkData) -> Result<(), CliError> {
    config
        .plan
        .validate(data)
        .map_err(|e| CliError::config(format!("plan does not fit the data: {e}")))
}

fn train_error(err: TrainError) -> CliError {
    match err {
        TrainError::Config(_) | TrainError::CheckpointAhead { .. } | TrainError::CheckpointShape => {
            CliError::config(err.to_string())
        }
        other => CliError::runtime(other.to_string()),
    }
}

fn eval_error(err: EvalError) -> CliError {
    CliError::runtime(err.to_string())
}

/// Generates the synthetic benchmark and writes the dataset files.
pub fn gen_data(config: &RunConfig) -> Result<(), CliError> {
    let synth = config
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| {
            CliError::config("gen-data needs a data.synthetic section; it does not copy data.dir")
        })?
        .resolve()?;
    let bench = generate_spurious(&synth)
        .map_err(|e| CliError::runtime(format!("generating data: {e}")))?;
    let audit = eval::annotation_agreement_report(
        &bench.train,
        &bench.train_truth,
        bench.schema.annotator_count,
    )
    .map_err(eval_error)?;

    let out = &config.out;
    ensure_out_dir(out)?;
    formats::write_pretty_json(&out.join(formats::SCHEMA_FILE), &bench.schema)?;
    formats::write_group_spec(&out.join(formats::GROUPS_FILE), &bench.group_spec)?;
    formats::write_annotated(&out.join(formats::TRAIN_FILE), &bench.train)?;
    formats::write_labeled(
        &out.join(formats::TRAIN_TRUTH_FILE),
        &bench.train_truth,
        &bench.group_spec,
    )?;
    formats::write_labeled(&out.join(formats::VAL_FILE), &bench.val, &bench.group_spec)?;
    formats::write_labeled(&out.join(formats::TEST_FILE), &bench.test, &bench.group_spec)?;

    println!("wrote dataset to {}", out.display());
    println!(
        "  train {} examples, val {}, test {}",
        bench.train.len(),
        bench.val.len(),
        bench.test.len()
    );
    println!(
        "  {} classes, {} features, {} groups, {} annotators",
        bench.schema.class_count,
        bench.schema.feature_dim,
        bench.group_count,
        bench.schema.annotator_count
    );
    let accuracies: Vec<String> = audit
        .annotator_accuracy
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect();
    println!("  annotator accuracy vs truth: {}", accuracies.join(" "));
    println!(
        "  candidate sets contain the truth on {:.1}% of examples",
        100.0 * audit.truth_in_candidates
    );
    Ok(())
}

/// What `train` persists, shared by the fresh and resumed paths.
struct TrainArtifacts {
    model: TrainedModel,
    estimator: Option<ParamVector>,
    diagnostics: Option<DiagnosticsReport>,
    kept_fraction: Option<f64>,
    escape_rate: Option<f64>,
    /// Step number of the first diagnostics row.
    first_step: usize,
}

fn bilevel_train_config(config: &RunConfig, method: Method, seed: u64) -> TrainConfig {
    let mut train = TrainConfig {
        seed,
        ..config.plan.bilevel.clone()
    };
    train.outer = if method == Method::Bilevel {
        OuterRisk::Groupdro
    } else {
        OuterRisk::Cvar {
            alpha: config.plan.cvar_alpha,
        }
    };
    train
}

/// Trains the configured method with the first seed and writes the model,
/// plus the estimator, step traces, and checkpoint for bi-level methods.
pub fn train(config: &RunConfig, resume: bool) -> Result<(), CliError> {
    let method = config.method()?;
    let seed = config.seeds[0];
    let bundle = DataBundle::load(config)?;
    let data = bundle.benchmark();
    validate_plan(config, &data)?;

    let artifacts = if resume {
        if !matches!(method, Method::Bilevel | Method::BilevelCvar) {
            return Err(CliError::config(format!(
                "--resume only applies to bilevel methods, not `{}`",
                method.id()
            )));
        }
        let path = config.out.join(formats::CHECKPOINT_FILE);
        if !path.is_file() {
            return Err(CliError::config(format!(
                "no checkpoint at {}; run train without --resume first",
                path.display()
            )));
        }
        let checkpoint = formats::read_checkpoint(&path)?;
        let first_step = checkpoint.step + 1;
        let train_config = bilevel_train_config(config, method, seed);
        let problem = BilevelProblem {
            classifier: &config.plan.classifier,
            estimator: &config.plan.estimator,
            group_count: data.group_count,
        };
        let outcome = bilevel::resume(&problem, &bundle.train, &bundle.val, &train_config, &checkpoint)
            .map_err(train_error)?;
        TrainArtifacts {
            model: TrainedModel::Single(outcome.theta),
            estimator: Some(outcome.w),
            diagnostics: Some(outcome.diagnostics),
            kept_fraction: None,
            escape_rate: None,
            first_step,
        }
    } else {
        let run = run_method(method, &config.plan, &data, seed).map_err(eval_error)?;
        TrainArtifacts {
            model: run.model,
            estimator: run.estimator,
            diagnostics: run.diagnostics,
            kept_fraction: run.kept_fraction,
            escape_rate: run.escape_rate,
            first_step: 1,
        }
    };

    let out = &config.out;
    ensure_out_dir(out)?;
    let model_file = ModelFile {
        method,
        seed,
        classifier: config.plan.classifier,
        group_count: data.group_count,
        model: StoredModel::from_trained(&artifacts.model),
    };
    let model_path = out.join(formats::MODEL_FILE);
    formats::write_pretty_json(&model_path, &model_file)?;
    println!("trained `{}` with seed {seed}", method.id());
    println!("  model: {}", model_path.display());

    if let Some(kept) = artifacts.kept_fraction {
        println!(
            "  aggregation kept {:.1}% of {} training examples",
            100.0 * kept,
            bundle.train.len()
        );
    }
    if let Some(escape) = artifacts.escape_rate {
        println!(
            "  label model placed {:.2}% of labels outside the votes",
            100.0 * escape
        );
    }

    if let Some(diagnostics) = &artifacts.diagnostics {
        let estimator = artifacts
            .estimator
            .as_ref()
            .expect("bi-level runs carry their estimator");
        formats::write_pretty_json(
            &out.join(formats::ESTIMATOR_FILE),
            &EstimatorFile {
                estimator: config.plan.estimator,
                params: estimator.clone(),
            },
        )?;
        reports::write_diagnostics(
            &out.join(formats::DIAGNOSTICS_FILE),
            diagnostics,
            artifacts.first_step,
        )?;
        let theta = match &artifacts.model {
            TrainedModel::Single(theta) => theta.clone(),
            TrainedModel::Voting(_) => unreachable!("bi-level methods train a single classifier"),
        };
        formats::write_pretty_json(
            &out.join(formats::CHECKPOINT_FILE),
            &Checkpoint {
                theta,
                w: estimator.clone(),
                step: config.plan.bilevel.steps,
                seed,
            },
        )?;
        println!(
            "  estimator: {}",
            out.join(formats::ESTIMATOR_FILE).display()
        );
        println!(
            "  step traces: {}",
            out.join(formats::DIAGNOSTICS_FILE).display()
        );
        println!(
            "  checkpoint: {}",
            out.join(formats::CHECKPOINT_FILE).display()
        );
        if let (Some(first), Some(last)) =
            (diagnostics.initial_risk, diagnostics.risk_trace.last())
        {
            println!(
                "  outer risk {first:.4} -> {last:.4}, {:.0}% of steps descended",
                100.0 * diagnostics.monotone_fraction
            );
        }
        for warning in &diagnostics.warnings {
            println!("  note: {warning}");
        }
    }
    Ok(())
}

fn check_model_against_data(model: &ModelFile, bundle: &DataBundle) -> Result<(), CliError> {
    if model.classifier.input_dim != bundle.schema.feature_dim {
        return Err(CliError::config(format!(
            "model expects {} features, the dataset schema has {}",
            model.classifier.input_dim, bundle.schema.feature_dim
        )));
    }
    if model.classifier.output_dim != bundle.schema.class_count {
        return Err(CliError::config(format!(
            "model predicts {} classes, the dataset schema has {}",
            model.classifier.output_dim, bundle.schema.class_count
        )));
    }
    if model.group_count != bundle.group_spec.group_count() {
        return Err(CliError::config(format!(
            "model was trained against {} groups, the group table defines {}",
            model.group_count,
            bundle.group_spec.group_count()
        )));
    }
    Ok(())
}

fn load_model(config: &RunConfig, flag: Option<&Path>) -> Result<(PathBuf, ModelFile), CliError> {
    let path = flag
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.default_model_path());
    if !path.is_file() {
        return Err(CliError::config(format!(
            "no model file at {}; train one first or pass --model",
            path.display()
        )));
    }
    Ok((path.clone(), formats::read_model(&path)?))
}

/// Evaluates a saved model on the test split and writes `metrics.csv`.
pub fn eval(config: &RunConfig, model_flag: Option<&Path>) -> Result<(), CliError> {
    let bundle = DataBundle::load(config)?;
    let (model_path, model_file) = load_model(config, model_flag)?;
    check_model_against_data(&model_file, &bundle)?;

    let trained = model_file.model.into_trained();
    let metrics = trained
        .metrics(
            &model_file.classifier,
            &bundle.test,
            bundle.group_spec.group_count(),
        )
        .map_err(eval_error)?;

    ensure_out_dir(&config.out)?;
    let rows = vec![MetricsRow {
        method: model_file.method,
        seed: model_file.seed,
        metrics: metrics.clone(),
    }];
    let metrics_path = config.out.join(formats::METRICS_FILE);
    reports::write_metrics(&metrics_path, &rows, bundle.group_spec.group_count())?;

    println!(
        "evaluated {} on {} test examples",
        model_path.display(),
        bundle.test.len()
    );
    print_metrics("  ", &metrics);
    println!("  metrics: {}", metrics_path.display());
    Ok(())
}

fn print_metrics(indent: &str, metrics: &GroupMetrics) {
    println!(
        "{indent}average {:.4}  worst group {:.4}  overall {:.4}",
        metrics.average, metrics.worst_group, metrics.overall
    );
    let cells: Vec<String> = metrics
        .per_group
        .iter()
        .enumerate()
        .map(|(g, acc)| match acc {
            Some(a) => format!("g{g} {a:.4}"),
            None => format!("g{g} -"),
        })
        .collect();
    println!("{indent}per group: {}", cells.join("  "));
}

/// Runs every registered method across the configured seeds and writes
/// per-run metrics plus the mean and standard deviation summary.
pub fn compare(config: &RunConfig, jobs: usize) -> Result<(), CliError> {
    let bundle = DataBundle::load(config)?;
    let data = bundle.benchmark();
    validate_plan(config, &data)?;

    let methods = Method::ALL;
    let summaries = fan_out(&methods, jobs, |method| {
        run_experiment(method, &config.plan, &data, &config.seeds)
    });
    let mut ordered = Vec::with_capacity(methods.len());
    for result in summaries {
        ordered.push(result.map_err(eval_error)?);
    }

    let rows: Vec<MetricsRow> = ordered
        .iter()
        .flat_map(|summary| {
            summary.runs.iter().map(|run| MetricsRow {
                method: run.method,
                seed: run.seed,
                metrics: run.metrics.clone(),
            })
        })
        .collect();

    ensure_out_dir(&config.out)?;
    let metrics_path = config.out.join(formats::METRICS_FILE);
    let summary_path = config.out.join(formats::SUMMARY_FILE);
    reports::write_metrics(&metrics_path, &rows, data.group_count)?;
    reports::write_summary(&summary_path, &ordered)?;

    println!(
        "compared {} methods across seeds {:?} ({} runs)",
        methods.len(),
        config.seeds,
        rows.len()
    );
    print_comparison(&ordered);
    println!("per-run metrics: {}", metrics_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

/// Runs one job per method on up to `jobs` worker threads; results come back
/// in input order regardless of completion order.
fn fan_out<F>(methods: &[Method], jobs: usize, run: F) -> Vec<Result<ExperimentSummary, EvalError>>
where
    F: Fn(Method) -> Result<ExperimentSummary, EvalError> + Sync,
{
    let workers = jobs.clamp(1, methods.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ExperimentSummary, EvalError>>>> =
        Mutex::new((0..methods.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= methods.len() {
                    break;
                }
                let result = run(methods[index]);
                slots.lock().expect("no worker panics")[index] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}

fn print_comparison(summaries: &[ExperimentSummary]) {
    println!(
        "{:<26} {:>18} {:>18} {:>18}",
        "method", "average", "worst group", "overall"
    );
    for summary in summaries {
        let cell = |name: &str| -> String {
            summary
                .summaries
                .iter()
                .find(|m| m.metric == name)
                .map(|m| format!("{:.4} +/- {:.4}", m.mean, m.std))
                .unwrap_or_default()
        };
        println!(
            "{:<26} {:>18} {:>18} {:>18}",
            summary.method.display_label(),
            cell("average"),
            cell("worst_group"),
            cell("overall")
        );
    }
}

/// Masks feature blocks of test examples and writes per-block logit drops.
pub fn explain(config: &RunConfig, model_flag: Option<&Path>) -> Result<(), CliError> {
    let bundle = DataBundle::load(config)?;
    let section_model = config.explain.as_ref().and_then(|e| e.model.as_deref());
    let (model_path, model_file) = load_model(config, model_flag.or(section_model))?;
    check_model_against_data(&model_file, &bundle)?;
    let params = match model_file.model.into_trained() {
        TrainedModel::Single(params) => params,
        TrainedModel::Voting(_) => {
            return Err(CliError::config(
                "block attributions need a single classifier; a voting ensemble has no logits",
            ))
        }
    };

    let blocks = explain_blocks(config, &bundle)?;
    let baseline = match config.explain.as_ref().map(|e| e.baseline).unwrap_or_default() {
        BaselineKind::Zero => MaskBaseline::Zero,
        BaselineKind::Mean => MaskBaseline::Reference(feature_means(&bundle.test)),
    };
    let count = config
        .explain
        .as_ref()
        .map(|e| e.examples)
        .unwrap_or(10)
        .min(bundle.test.len());
    if count == 0 {
        return Err(CliError::config("the test split is empty"));
    }

    let mut rows = Vec::with_capacity(count * blocks.len());
    let mut first_counts = vec![0usize; blocks.len()];
    for ex in &bundle.test[..count] {
        let report = eval::block_mask_explain(
            &model_file.classifier,
            &params,
            &ex.features,
            &blocks,
            &baseline,
        )
        .map_err(|e| match e {
            EvalError::BadPartition(_) | EvalError::Config(_) => CliError::config(e.to_string()),
            other => CliError::runtime(other.to_string()),
        })?;
        first_counts[report.ranking[0]] += 1;
        let mut rank_of = vec![0usize; blocks.len()];
        for (position, &block) in report.ranking.iter().enumerate() {
            rank_of[block] = position + 1;
        }
        for (b, block) in blocks.iter().enumerate() {
            rows.push(ExplainRow {
                id: ex.id.clone(),
                block: block.name.clone(),
                importance: report.importances[b],
                rank: rank_of[b],
            });
        }
    }

    ensure_out_dir(&config.out)?;
    let explain_path = config.out.join(formats::EXPLAIN_FILE);
    reports::write_explain(&explain_path, &rows)?;

    println!(
        "explained {count} test examples from {}",
        model_path.display()
    );
    for (b, block) in blocks.iter().enumerate() {
        println!(
            "  block `{}` ranked first on {} of {count} examples",
            block.name, first_counts[b]
        );
    }
    println!("  attributions: {}", explain_path.display());
    Ok(())
}

/// Blocks from the document, or the core/shortcut split for inline
/// synthetic data.
fn explain_blocks(config: &RunConfig, bundle: &DataBundle) -> Result<Vec<FeatureBlock>, CliError> {
    if let Some(section) = &config.explain {
        if !section.blocks.is_empty() {
            return Ok(section.blocks.clone());
        }
    }
    match &bundle.synth {
        Some(synth) => Ok(vec![
            FeatureBlock {
                name: String::from("core"),
                start: 0,
                end: synth.core_dim,
            },
            FeatureBlock {
                name: String::from("spurious"),
                start: synth.core_dim,
                end: synth.core_dim + synth.spurious_dim,
            },
        ]),
        None => Err(CliError::config(
            "explain needs [[explain.blocks]] when the data comes from files",
        )),
    }
}

fn feature_means(examples: &[LabeledExample]) -> Vec<f64> {
    if examples.is_empty() {
        return Vec::new();
    }
    let dim = examples[0].features.len();
    let mut means = vec![0.0; dim];
    for ex in examples {
        for (m, &v) in means.iter_mut().zip(&ex.features) {
            *m += v;
        }
    }
    let n = examples.len() as f64;
    for m in &mut means {
        *m /= n;
    }
    means
}
