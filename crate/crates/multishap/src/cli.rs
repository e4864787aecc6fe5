//! File-based pipeline CLI: generate -> preprocess -> train -> eval ->
//! explain -> report, all under one working directory, all randomness derived
//! from a single seed.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attribution::{
    explain_case, global_aggregate, global_csv, modality_contribution, step1_attribution,
    AttributionReport, ExplainConfig, PropagationMode, ShapleyConfig,
};
use crate::data::ProcessedRecord;
use crate::error::{Error, Result};
use crate::eval::{precision_recall_f1, roc_auc, stratified_split, Split, SplitSpec};
use crate::fusion::{staged_train, ModalityInputs, MultimodalModel};
use crate::nn::{class_weights, LabeledSample, TrainConfig};
use crate::preprocess::{io as pio, preprocess_cohort, DEFAULT_KNN_K};
use crate::synth::{generate_cohort, inject_missingness, GeneratorConfig, MissingnessRates};
use crate::util::derive_seed;

pub const RAW_SUBDIR: &str = "raw";
pub const PROCESSED_SUBDIR: &str = "processed";
pub const MODEL_SUBDIR: &str = "model";
pub const EVAL_SUBDIR: &str = "eval";
pub const EXPLAIN_SUBDIR: &str = "explain";

/// Flat run configuration; every subcommand reads the slice it needs.
/// Unknown keys are rejected so typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: String,
    pub seed: u64,

    // generate
    pub n_patients: usize,
    pub prevalence_target: f64,
    pub modality_signal_weights: [f64; 5],
    pub signal_scale: f64,
    pub missing_static: f64,
    pub missing_vitals: f64,
    pub missing_medication: f64,
    pub vitals_len_min: usize,
    pub vitals_len_max: usize,

    // preprocess
    pub knn_k: usize,

    // train / eval
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_halving_patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub l2_weight: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub threshold: f64,

    // explain
    pub mode: String,
    pub n_samples: usize,
    pub exact_cap: usize,
    pub background_cap: usize,
    /// Cap on the number of (test) cases aggregated by `explain --global`.
    pub global_cases: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GeneratorConfig::default();
        let train = TrainConfig::default();
        let shap = ShapleyConfig::default();
        Self {
            out_dir: "runs".into(),
            seed: 0,
            n_patients: gen.n_patients,
            prevalence_target: gen.prevalence_target,
            modality_signal_weights: gen.modality_signal_weights,
            signal_scale: gen.signal_scale,
            missing_static: gen.missingness.static_cells,
            missing_vitals: gen.missingness.vitals_cells,
            missing_medication: gen.missingness.medication_record,
            vitals_len_min: gen.vitals_len_range.0,
            vitals_len_max: gen.vitals_len_range.1,
            knn_k: DEFAULT_KNN_K,
            learning_rate: train.learning_rate,
            max_epochs: train.max_epochs,
            patience: train.patience,
            lr_halving_patience: train.lr_halving_patience,
            batch_size: train.batch_size,
            dropout: train.dropout,
            l2_weight: train.l2_weight,
            train_fraction: 0.50,
            val_fraction: 0.25,
            test_fraction: 0.25,
            threshold: 0.5,
            mode: PropagationMode::Conserving.name().into(),
            n_samples: shap.n_samples,
            exact_cap: shap.exact_cap,
            background_cap: shap.background_cap,
            global_cases: 50,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: self.n_patients,
            prevalence_target: self.prevalence_target,
            modality_signal_weights: self.modality_signal_weights,
            signal_scale: self.signal_scale,
            missingness: MissingnessRates {
                static_cells: self.missing_static,
                vitals_cells: self.missing_vitals,
                medication_record: self.missing_medication,
            },
            vitals_len_range: (self.vitals_len_min, self.vitals_len_max),
            seed: self.seed,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr_halving_patience: self.lr_halving_patience,
            batch_size: self.batch_size,
            dropout: self.dropout,
            l2_weight: self.l2_weight,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            stratified: true,
            seed: derive_seed(self.seed, 0x5011),
        }
    }

    fn explain_config(&self) -> Result<ExplainConfig> {
        Ok(ExplainConfig {
            mode: self.mode.parse()?,
            shapley: ShapleyConfig {
                exact_cap: self.exact_cap,
                n_samples: self.n_samples,
                background_cap: self.background_cap,
                seed: derive_seed(self.seed, 0xE871),
            },
            ..ExplainConfig::default()
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "multishap", about = "Shapley explanations for multimodal early-fusion models", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat JSON config file; defaults apply for every omitted key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Working directory; overrides the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing output artifacts.
    #[arg(long)]
    pub force: bool,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.display().to_string();
        }
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with planted modality signal.
    Generate(CommonArgs),
    /// Impute, resample, and encode the raw cohort.
    Preprocess(CommonArgs),
    /// Staged training of the fused model; writes a model bundle.
    Train(CommonArgs),
    /// Metrics of the trained model on the held-out test split.
    Eval(CommonArgs),
    /// Local (--case) or global (--global) Shapley explanation.
    Explain(ExplainArgs),
    /// Plot-ready data series from explanation artifacts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Propagation mode for the per-input step: paper or conserving.
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of sampled permutations for the Shapley estimator.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Patient id for a local explanation.
    #[arg(long)]
    pub case: Option<String>,
    /// Aggregate explanations over the test split.
    #[arg(long)]
    pub global: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Patient id whose local report becomes a waterfall series.
    #[arg(long)]
    pub case: Option<String>,
    /// Emit the global bar-chart series.
    #[arg(long)]
    pub global: bool,
}

/// Exit code mapping: 0 success, 1 usage error, 2 data/validation error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

fn guard_overwrite(marker: &Path, force: bool) -> Result<()> {
    if marker.exists() && !force {
        return Err(Error::InvalidConfig(format!(
            "{} exists; pass --force to overwrite",
            marker.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CommandManifest {
    command: String,
    seed: u64,
    config: RunConfig,
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    // record paths relative to the working directory so the same run in a
    // different location produces byte-identical artifacts
    let mut config = config.clone();
    config.out_dir = ".".into();
    let manifest = CommandManifest {
        command: command.into(),
        seed: config.seed,
        config,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn cmd_generate(config: &RunConfig, force: bool) -> Result<()> {
    let dir = Path::new(&config.out_dir).join(RAW_SUBDIR);
    guard_overwrite(&dir.join("manifest.json"), force)?;
    let gen = config.generator_config();
    let (mut cohort, truth) = generate_cohort(&gen)?;
    inject_missingness(&mut cohort, &gen.missingness, derive_seed(config.seed, 0x417A))?;
    pio::write_cohort(&dir, &cohort)?;
    write_json(&dir.join("ground_truth.json"), &truth)?;
    write_manifest(&dir, "generate", config)?;
    let (neg, pos) = cohort.class_counts();
    println!(
        "generate: wrote {} records ({} positive, {} negative) to {}",
        cohort.records.len(),
        pos,
        neg,
        dir.display()
    );
    Ok(())
}

pub fn cmd_preprocess(config: &RunConfig, force: bool) -> Result<()> {
    let root = Path::new(&config.out_dir);
    let out = root.join(PROCESSED_SUBDIR);
    guard_overwrite(&out.join("manifest.json"), force)?;
    let cohort = pio::read_cohort(&root.join(RAW_SUBDIR))?;
    let (records, manifest) = preprocess_cohort(&cohort, config.knn_k)?;
    pio::write_processed(&out, &records, &manifest)?;
    write_manifest(&out, "preprocess", config)?;
    println!(
        "preprocess: {} records, {} static cells imputed, mean dropped vitals fraction {:.4}",
        manifest.n_records, manifest.imputed_static_cells, manifest.mean_dropped_step_fraction
    );
    Ok(())
}

/// Patient-id level record of the train/val/test assignment.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    fn from_split(split: &Split, records: &[ProcessedRecord]) -> Self {
        let ids = |idx: &[usize]| idx.iter().map(|&i| records[i].id.clone()).collect();
        Self {
            train: ids(&split.train),
            val: ids(&split.val),
            test: ids(&split.test),
        }
    }

    fn indices(&self, records: &[ProcessedRecord]) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let by_id: HashMap<&str, usize> =
            records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Format(format!("split references unknown id {id}")))
                })
                .collect()
        };
        Ok((lookup(&self.train)?, lookup(&self.val)?, lookup(&self.test)?))
    }
}

fn load_processed(config: &RunConfig) -> Result<Vec<ProcessedRecord>> {
    pio::read_processed(&Path::new(&config.out_dir).join(PROCESSED_SUBDIR))
}

fn to_samples(records: &[ProcessedRecord], idx: &[usize]) -> Vec<LabeledSample<ModalityInputs>> {
    idx.iter()
        .map(|&i| (ModalityInputs::from_record(&records[i]), records[i].label))
        .collect()
}

fn metrics_csv(rows: &[(String, f64, f64, f64, f64)]) -> String {
    let mut out = String::from("model,auc,precision,recall,f1\n");
    for (name, auc, p, r, f1) in rows {
        out.push_str(&format!("{name},{auc:.6},{p:.6},{r:.6},{f1:.6}\n"));
    }
    out
}

fn test_metrics(
    model: &MultimodalModel,
    records: &[ProcessedRecord],
    test: &[usize],
    threshold: f64,
) -> Result<(f64, f64, f64, f64)> {
    let samples = to_samples(records, test);
    let scores: Vec<f64> = samples
        .iter()
        .map(|(x, _)| model.predict(x))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = samples.iter().map(|(_, y)| *y).collect();
    let auc = roc_auc(&scores, &labels)?;
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let (p, r, f1) = precision_recall_f1(&preds, &labels);
    Ok((auc, p, r, f1))
}

pub fn cmd_train(config: &RunConfig, force: bool) -> Result<()> {
    let root = Path::new(&config.out_dir);
    let out = root.join(MODEL_SUBDIR);
    guard_overwrite(&out.join("partition.json"), force)?;
    let records = load_processed(config)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let split = stratified_split(&labels, &config.split_spec())?;
    let train_set = to_samples(&records, &split.train);
    let val_set = to_samples(&records, &split.val);
    let (neg, pos) = {
        let pos = train_set.iter().filter(|(_, y)| *y == 1).count();
        (train_set.len() - pos, pos)
    };
    let weights = class_weights(train_set.len(), (neg, pos))?;
    let model = MultimodalModel::new_seeded(derive_seed(config.seed, 0x1417));
    let (model, report) = staged_train(&model, &train_set, &val_set, &config.train_config(), &weights)?;

    std::fs::create_dir_all(&out)?;
    model.save_bundle(&out)?;
    write_json(&out.join("split.json"), &SplitFile::from_split(&split, &records))?;
    write_json(&out.join("train_report.json"), &report)?;
    let (auc, p, r, f1) = test_metrics(&model, &records, &split.test, config.threshold)?;
    std::fs::write(
        out.join("metrics.csv"),
        metrics_csv(&[("all".into(), auc, p, r, f1)]),
    )?;
    write_manifest(&out, "train", config)?;
    println!("train: bundle at {}; test AUC {auc:.4}", out.display());
    Ok(())
}

fn load_model_and_split(config: &RunConfig) -> Result<(MultimodalModel, Vec<ProcessedRecord>, SplitFile)> {
    let root = Path::new(&config.out_dir);
    let model = MultimodalModel::load_bundle(&root.join(MODEL_SUBDIR))?;
    let records = load_processed(config)?;
    let split: SplitFile = serde_json::from_str(&std::fs::read_to_string(
        root.join(MODEL_SUBDIR).join("split.json"),
    )?)?;
    Ok((model, records, split))
}

pub fn cmd_eval(config: &RunConfig, force: bool) -> Result<()> {
    let root = Path::new(&config.out_dir);
    let out = root.join(EVAL_SUBDIR);
    guard_overwrite(&out.join("manifest.json"), force)?;
    let (model, records, split) = load_model_and_split(config)?;
    let (_, _, test) = split.indices(&records)?;
    let (auc, p, r, f1) = test_metrics(&model, &records, &test, config.threshold)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("metrics.csv"),
        metrics_csv(&[("all".into(), auc, p, r, f1)]),
    )?;
    write_manifest(&out, "eval", config)?;
    println!("eval: AUC {auc:.4} precision {p:.4} recall {r:.4} f1 {f1:.4}");
    Ok(())
}

fn static_feature_names() -> Vec<String> {
    (0..crate::data::N_STATIC_FEATURES).map(|i| format!("f{i}")).collect()
}

pub fn cmd_explain(config: &RunConfig, args: &ExplainArgs) -> Result<()> {
    let mut config = config.clone();
    if let Some(mode) = &args.mode {
        config.mode = mode.clone();
    }
    if let Some(samples) = args.samples {
        config.n_samples = samples;
    }
    if args.case.is_none() && !args.global {
        return Err(Error::InvalidConfig(
            "explain needs --case <id> or --global".into(),
        ));
    }
    let root = Path::new(&config.out_dir);
    let out = root.join(EXPLAIN_SUBDIR);
    let (model, records, split) = load_model_and_split(&config)?;
    let (train_idx, _, test_idx) = split.indices(&records)?;
    let bg: Vec<ModalityInputs> = train_idx
        .iter()
        .map(|&i| ModalityInputs::from_record(&records[i]))
        .collect();
    let explain = config.explain_config()?;
    std::fs::create_dir_all(&out)?;

    if let Some(case) = &args.case {
        let record = records
            .iter()
            .find(|r| &r.id == case)
            .ok_or_else(|| Error::Format(format!("unknown case id {case}")))?;
        let path = out.join(format!("report_{case}.json"));
        guard_overwrite(&path, args.common.force)?;
        let inputs = ModalityInputs::from_record(record);
        let report = explain_case(&model, &inputs, &bg, &static_feature_names(), &explain)?;
        write_json(&path, &report)?;
        let gap = report.prediction
            - report.base_value
            - report.modalities.iter().map(|m| m.ac).sum::<f64>();
        println!(
            "explain: case {case} prediction {:.4} base {:.4} (additivity gap {gap:.2e}) -> {}",
            report.prediction,
            report.base_value,
            path.display()
        );
    }

    if args.global {
        let path = out.join("global.csv");
        guard_overwrite(&path, args.common.force)?;
        let mut contributions = Vec::new();
        for &i in test_idx.iter().take(config.global_cases) {
            let inputs = ModalityInputs::from_record(&records[i]);
            let attr = step1_attribution(&model, &inputs, &bg, &explain.shapley)?;
            contributions.push(modality_contribution(&attr, &model.partition)?);
        }
        let global = global_aggregate(&contributions)?;
        std::fs::write(&path, global_csv(&global))?;
        write_json(&out.join("global.json"), &global)?;
        println!("explain: {} cases aggregated -> {}", global.n_cases, path.display());
    }
    write_manifest(&out, "explain", &config)?;
    Ok(())
}

/// Waterfall series for one case: features sorted by |phi|, cumulative path
/// from the base value to the prediction.
#[derive(Debug, Serialize, Deserialize)]
pub struct WaterfallSeries {
    pub case: String,
    pub base_value: f64,
    pub prediction: f64,
    pub labels: Vec<String>,
    pub deltas: Vec<f64>,
    pub cumulative: Vec<f64>,
}

/// Bar-chart series for the global report: one bar per modality.
#[derive(Debug, Serialize, Deserialize)]
pub struct BarSeries {
    pub labels: Vec<String>,
    pub mean_ac: Vec<f64>,
    pub sd_ac: Vec<f64>,
    pub mean_rc: Vec<f64>,
}

pub fn cmd_report(config: &RunConfig, args: &ReportArgs) -> Result<()> {
    if args.case.is_none() && !args.global {
        return Err(Error::InvalidConfig(
            "report needs --case <id> or --global".into(),
        ));
    }
    let out = Path::new(&config.out_dir).join(EXPLAIN_SUBDIR);
    if let Some(case) = &args.case {
        let report: AttributionReport = serde_json::from_str(&std::fs::read_to_string(
            out.join(format!("report_{case}.json")),
        )?)?;
        // modality bars first, then the propagated static features by |phi|
        let mut entries: Vec<(String, f64)> = report
            .modalities
            .iter()
            .map(|m| (format!("modality:{}", m.name), m.ac))
            .collect();
        let mut static_entries: Vec<(String, f64)> = report
            .static_features
            .iter()
            .map(|s| (s.name.clone(), s.phi))
            .collect();
        static_entries.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        entries.extend(static_entries);
        let mut cumulative = Vec::with_capacity(entries.len());
        let mut acc = report.base_value;
        for (_, delta) in &entries {
            acc += delta;
            cumulative.push(acc);
        }
        let series = WaterfallSeries {
            case: case.clone(),
            base_value: report.base_value,
            prediction: report.prediction,
            labels: entries.iter().map(|(l, _)| l.clone()).collect(),
            deltas: entries.iter().map(|(_, d)| *d).collect(),
            cumulative,
        };
        let path = out.join(format!("waterfall_{case}.json"));
        guard_overwrite(&path, args.common.force)?;
        write_json(&path, &series)?;
        println!("report: waterfall for {case} -> {}", path.display());
    }
    if args.global {
        let global: crate::attribution::GlobalContribution =
            serde_json::from_str(&std::fs::read_to_string(out.join("global.json"))?)?;
        let series = BarSeries {
            labels: global.stats.iter().map(|s| s.modality.name().to_string()).collect(),
            mean_ac: global.stats.iter().map(|s| s.mean_abs_ac).collect(),
            sd_ac: global.stats.iter().map(|s| s.sd_abs_ac).collect(),
            mean_rc: global.stats.iter().map(|s| s.rc).collect(),
        };
        let path = out.join("bars.json");
        guard_overwrite(&path, args.common.force)?;
        write_json(&path, &series)?;
        println!("report: modality bars -> {}", path.display());
    }
    Ok(())
}

/// Dispatches one parsed CLI invocation.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(&args.resolve()?, args.force),
        Command::Preprocess(args) => cmd_preprocess(&args.resolve()?, args.force),
        Command::Train(args) => cmd_train(&args.resolve()?, args.force),
        Command::Eval(args) => cmd_eval(&args.resolve()?, args.force),
        Command::Explain(args) => {
            let config = args.common.resolve()?;
            cmd_explain(&config, args)
        }
        Command::Report(args) => {
            let config = args.common.resolve()?;
            cmd_report(&config, args)
        }
    }
}
