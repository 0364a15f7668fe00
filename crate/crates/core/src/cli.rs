//! Command-line front end. Every subcommand takes its flags from the command
//! line, from `--config` (a TOML file with the same keys as the long flags,
//! or a previous `run.json`), or both, with the command line winning.
//! Each run writes `run.json` into its output directory: the resolved
//! configuration plus SHA-256 hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_manifest, read_nifti, AtlasNames, AtlasParcellation, Cohort, N_PARCELS};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::report::{
    connectogram, crossval_history, final_metrics_doc, history_rows, matrix_pgm, metrics_doc, read_json,
    read_predictions_csv, render_report, render_table2, stats_rows, volume_mid_slices, write_bytes,
    write_history_csv, write_json, write_predictions_csv, write_stats_csv, FinalMetricsDoc, MetricsDoc,
    StatsSummary,
};
use crate::stats::{analyze, build_rv_sets, StatReport, TargetSets};
use crate::synth::{write_synth, CohortSpec, Modality, SynthSpec};
use crate::train::{conform_labels, crossval, final_run, load_input, load_samples, PipelineConfig};
use crate::xai::{explain_session, read_rv_csv, rv_rows, write_heatmap, write_rv_csv, RvRow};

#[derive(Debug, Parser)]
#[command(
    name = "adxai",
    version,
    about = "AD/HC classification from connectomes or T1 volumes, Grad-CAM relevance and relevance statistics"
)]
pub struct Cli {
    /// Worker threads for fold and session parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log more (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with a planted AD effect.
    Synth(SynthArgs),
    /// Subject-exclusive stratified k-fold cross-validation.
    Crossval(TrainArgs),
    /// Train on a 90/10 split, save the model and score every session.
    FinalTrain(TrainArgs),
    /// Grad-CAM heatmaps and per-parcel relevance values for every session.
    Explain(ExplainArgs),
    /// Parcel-wise AD/HC relevance tests, ranking and subgroups.
    Stats(StatsArgs),
    /// Markdown summary of earlier outputs.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Crossval(_) => "crossval",
            Command::FinalTrain(_) => "final-train",
            Command::Explain(_) => "explain",
            Command::Stats(_) => "stats",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 120 HC and 100 AD sessions.
    Default,
    /// 557 HC and 135 AD sessions over 543 subjects.
    Oasis,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthArgs {
    /// TOML file or earlier run.json supplying any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub modality: Option<Modality>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// AD effect size on planted parcels.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Noise scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// +1 strengthens AD edges to planted parcels, -1 weakens them.
    #[arg(long, allow_hyphen_values = true)]
    pub sign: Option<f64>,
    /// Comma-separated 1-based parcel labels carrying the effect.
    #[arg(long, value_delimiter = ',')]
    pub planted: Option<Vec<usize>>,
    /// Share of subjects with sessions in both classes.
    #[arg(long)]
    pub mixed_fraction: Option<f64>,
    #[arg(long)]
    pub hc_sessions: Option<usize>,
    #[arg(long)]
    pub ad_sessions: Option<usize>,
    /// Volume grid, e.g. `32,32,32`.
    #[arg(long, value_delimiter = ',')]
    pub volume_shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// TOML file or earlier run.json supplying any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Maximum epochs per training run.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Smallest validation-loss decrease counted as an improvement.
    #[arg(long)]
    pub min_delta: Option<f64>,
    /// SMOTE neighbours for connectivity training sets.
    #[arg(long)]
    pub smote_k: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_smote: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_class_weighting: Option<bool>,
    /// GPC block widths (3 values) or CNN stage widths (4 values).
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Dense head widths of the graph model (2 values).
    #[arg(long, value_delimiter = ',')]
    pub fc: Option<Vec<usize>>,
    #[arg(long)]
    pub se_reduction: Option<usize>,
    /// Graph size; must match the connectivity matrices.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// CNN stem channels.
    #[arg(long)]
    pub stem: Option<usize>,
    /// Residual blocks per CNN stage.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// CNN input grid, e.g. `115,144,118`.
    #[arg(long, value_delimiter = ',')]
    pub input_shape: Option<Vec<usize>>,
    /// Skip the per-volume mean subtraction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_center: Option<bool>,
    /// Feed connectivity matrices unscaled.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_scale: Option<bool>,
    /// Train only the dense head.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub freeze_backbone: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExplainArgs {
    /// TOML file or earlier run.json supplying any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Model file written by final-train.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label volume (NIfTI); required for the volumetric model.
    #[arg(long)]
    pub atlas_labels: Option<PathBuf>,
    /// Parcel table (`index<TAB>acronym<TAB>lobe`); defaults to the shipped one.
    #[arg(long)]
    pub atlas_names: Option<PathBuf>,
    /// Also write 8-bit PGM previews of each heatmap.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub slices: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct StatsArgs {
    /// TOML file or earlier run.json supplying any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// rv.csv written by explain.
    #[arg(long)]
    pub rv: Option<PathBuf>,
    /// predictions.csv written by final-train.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub atlas_names: Option<PathBuf>,
    /// Target parcel sets (TOML with `mtl` and `dmn` lists).
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Second model's rv.csv, for the common-to-both marker.
    #[arg(long)]
    pub rv_b: Option<PathBuf>,
    #[arg(long)]
    pub predictions_b: Option<PathBuf>,
    /// Defaults to --manifest.
    #[arg(long)]
    pub manifest_b: Option<PathBuf>,
    /// Defaults to --atlas-names.
    #[arg(long)]
    pub atlas_names_b: Option<PathBuf>,
    #[arg(long)]
    pub label_a: Option<String>,
    #[arg(long)]
    pub label_b: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportArgs {
    /// TOML file or earlier run.json supplying any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory written by crossval.
    #[arg(long)]
    pub crossval: Option<PathBuf>,
    /// Directory written by final-train.
    #[arg(long = "final")]
    #[serde(rename = "final")]
    pub final_dir: Option<PathBuf>,
    /// Directory written by stats.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What `run.json` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// Input path as given → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory → SHA-256, for every file there
    /// except run.json itself.
    pub outputs: BTreeMap<String, String>,
}

pub const RUN_FILE: &str = "run.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of every file below `dir`, keyed by `/`-separated relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if key != RUN_FILE {
                    out.insert(key, sha256_file(&path)?);
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("argument structs serialize")
}

/// Reads `--config`: a run.json (its `config` field) or a TOML table.
fn read_config_file(path: &Path, command: &str) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let value: serde_json::Value = if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    match value.get("config") {
        Some(cfg) if is_json => {
            if let Some(c) = value.get("command").and_then(|c| c.as_str()) {
                if c != command {
                    return Err(Error::Config(format!(
                        "{} was written by `{c}`, not `{command}`",
                        path.display()
                    )));
                }
            }
            Ok(cfg.clone())
        }
        _ => Ok(value),
    }
}

/// Command-line values over `--config` values.
pub fn resolve_args<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Path>, command: &str) -> Result<T> {
    let mut merged = match config {
        Some(p) => read_config_file(p, command)?,
        None => serde_json::Value::Object(Default::default()),
    };
    let Some(base) = merged.as_object_mut() else {
        return Err(Error::Config("config file must hold a table of options".into()));
    };
    if let serde_json::Value::Object(over) = to_value(cli) {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn write_run(out: &Path, command: &str, config: &impl Serialize, inputs: &[&Path]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let record = RunRecord {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: to_value(config),
        inputs: hashes,
        outputs: hash_tree(out)?,
    };
    write_json(&out.join(RUN_FILE), &record)
}

pub fn synth_spec(args: &SynthArgs) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    if args.preset == Some(Preset::Oasis) {
        spec.cohort = CohortSpec::oasis_shaped();
    }
    let c = &mut spec.cohort;
    c.hc_sessions = args.hc_sessions.unwrap_or(c.hc_sessions);
    c.ad_sessions = args.ad_sessions.unwrap_or(c.ad_sessions);
    c.mixed_fraction = args.mixed_fraction.unwrap_or(c.mixed_fraction);
    let s = &mut spec.signal;
    s.delta = args.delta.unwrap_or(s.delta);
    s.sigma = args.sigma.unwrap_or(s.sigma);
    s.sign = args.sign.unwrap_or(s.sign);
    if let Some(p) = &args.planted {
        s.planted = p.clone();
    }
    spec.modality = args.modality.unwrap_or(spec.modality);
    spec.seed = args.seed.unwrap_or(0);
    if let Some(v) = &args.volume_shape {
        spec.volume_shape = three(v, "volume-shape")?;
    }
    spec.signal.validate()?;
    Ok(spec)
}

fn three(v: &[usize], flag: &str) -> Result<[usize; 3]> {
    match *v {
        [x] => Ok([x; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(Error::Config(format!("--{flag} takes 1 or 3 values, got {}", v.len()))),
    }
}

/// Pipeline configuration from training flags, starting from the model's defaults.
pub fn pipeline_config(args: &TrainArgs) -> Result<PipelineConfig> {
    let kind = args.model.unwrap_or(ModelKind::Bcgcnse);
    let mut cfg = match kind {
        ModelKind::Bcgcnse => PipelineConfig::default(),
        ModelKind::Cnn3d => PipelineConfig::cnn3d(),
    };
    match &mut cfg.model {
        ModelConfig::Bcgcnse(g) => {
            if let Some(w) = &args.widths {
                g.widths = w
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Config("--widths takes 3 values for bcgcnse".into()))?;
            }
            if let Some(f) = &args.fc {
                g.fc = f
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Config("--fc takes 2 values".into()))?;
            }
            g.se_reduction = args.se_reduction.unwrap_or(g.se_reduction);
            g.n_nodes = args.nodes.unwrap_or(g.n_nodes);
            g.validate()?;
        }
        ModelConfig::Cnn3d(c) => {
            if let Some(w) = &args.widths {
                c.stage_widths = w
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Config("--widths takes 4 values for cnn3d".into()))?;
            }
            if let Some(s) = &args.input_shape {
                c.input_shape = three(s, "input-shape")?;
            }
            c.stem_channels = args.stem.unwrap_or(c.stem_channels);
            c.blocks_per_stage = args.blocks.unwrap_or(c.blocks_per_stage);
            if args.fc.is_some() || args.nodes.is_some() || args.se_reduction.is_some() {
                return Err(Error::Config("--fc, --nodes and --se-reduction apply to bcgcnse only".into()));
            }
        }
    }
    if kind == ModelKind::Bcgcnse && (args.stem.is_some() || args.blocks.is_some() || args.input_shape.is_some()) {
        return Err(Error::Config("--stem, --blocks and --input-shape apply to cnn3d only".into()));
    }
    let t = &mut cfg.train;
    t.seed = args.seed.unwrap_or(t.seed);
    t.max_epochs = args.epochs.unwrap_or(t.max_epochs);
    t.patience = args.patience.unwrap_or(t.patience);
    t.lr = args.lr.unwrap_or(t.lr);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.min_delta = args.min_delta.unwrap_or(t.min_delta);
    if args.no_class_weighting == Some(true) {
        t.class_weighting = false;
    }
    cfg.folds = args.folds.unwrap_or(cfg.folds);
    if let Some(k) = args.smote_k {
        cfg.smote_k = Some(k);
    }
    if args.no_smote == Some(true) {
        cfg.smote_k = None;
    }
    if args.no_center == Some(true) {
        cfg.center_volumes = false;
    }
    if args.no_scale == Some(true) {
        cfg.scale_matrices = false;
    }
    cfg.freeze_backbone = args.freeze_backbone.unwrap_or(cfg.freeze_backbone);
    Ok(cfg)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let out = required(&args.out, "out")?;
    let spec = synth_spec(args)?;
    let written = write_synth(out, &spec)?;
    let (hc, ad) = written.cohort.class_counts();
    info!(
        "wrote {} sessions ({hc} HC, {ad} AD) from {} subjects to {}",
        written.cohort.len(),
        written.cohort.subjects().len(),
        out.display()
    );
    write_run(out, "synth", args, &[])
}

fn load_cohort(manifest: &Path, cfg: &PipelineConfig) -> Result<(Cohort, Vec<crate::train::Sample>)> {
    let cohort = read_manifest(manifest)?;
    if cohort.is_empty() {
        return Err(Error::Data(format!("{} lists no sessions", manifest.display())));
    }
    let samples = load_samples(&cohort, cfg)?;
    Ok((cohort, samples))
}

fn cmd_crossval(args: &TrainArgs) -> Result<()> {
    let manifest = required(&args.manifest, "manifest")?;
    let out = required(&args.out, "out")?;
    let cfg = pipeline_config(args)?;
    let (cohort, samples) = load_cohort(manifest, &cfg)?;
    info!("{}-fold cross-validation of {} on {} sessions", cfg.folds, cfg.model.kind().as_str(), cohort.len());
    let outcome = crossval(&cohort, &samples, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let doc = metrics_doc(cfg.model.kind(), cohort.len(), &outcome);
    info!("median accuracy {}", doc.metrics.accuracy.render());
    write_json(&out.join("metrics.json"), &doc)?;
    write_history_csv(&out.join("history.csv"), &crossval_history(&outcome))?;
    let splits: Vec<_> = outcome.folds.iter().map(|f| &f.split).collect();
    write_json(&out.join("folds.json"), &splits)?;
    write_run(out, "crossval", args, &[manifest])
}

fn cmd_final_train(args: &TrainArgs) -> Result<()> {
    let manifest = required(&args.manifest, "manifest")?;
    let out = required(&args.out, "out")?;
    let cfg = pipeline_config(args)?;
    let (cohort, samples) = load_cohort(manifest, &cfg)?;
    let outcome = final_run(&cohort, &samples, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let meta = serde_json::json!({
        "pipeline": cfg,
        "best_epoch": outcome.best_epoch,
    });
    save_checkpoint(&out.join("model.ckpt"), &outcome.model, meta)?;
    let doc = final_metrics_doc(cfg.model.kind(), &outcome);
    info!(
        "best epoch {}; validation accuracy {:.3}; union accuracy {:.3}",
        doc.best_epoch, doc.validation.accuracy, doc.union.accuracy
    );
    write_json(&out.join("final_metrics.json"), &doc)?;
    write_predictions_csv(&out.join("predictions.csv"), &outcome.predictions)?;
    write_history_csv(&out.join("history.csv"), &history_rows("final", &outcome.history))?;
    write_json(&out.join("split.json"), &outcome.split)?;
    write_run(out, "final-train", args, &[manifest])
}

fn read_names(path: Option<&PathBuf>, n: usize) -> Result<AtlasNames> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            AtlasNames::parse(&text, n).map_err(|e| Error::format(p, e.to_string()))
        }
        None if n == N_PARCELS => Ok(AtlasNames::shipped()),
        None => Ok(AtlasNames::numbered(n)),
    }
}

/// Pipeline configuration stored in a final-train checkpoint.
pub fn checkpoint_pipeline(meta: &serde_json::Value) -> Result<PipelineConfig> {
    let p = meta
        .get("pipeline")
        .ok_or_else(|| Error::Config("checkpoint metadata has no `pipeline` entry".into()))?;
    serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("checkpoint pipeline: {e}")))
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let manifest = required(&args.manifest, "manifest")?;
    let ckpt_path = required(&args.checkpoint, "checkpoint")?;
    let out = required(&args.out, "out")?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let cfg = checkpoint_pipeline(&ckpt.meta)?;
    let mut model = cfg.model.build(0)?;
    ckpt.apply(&mut model)?;
    let cohort = read_manifest(manifest)?;

    let mut inputs: Vec<&Path> = vec![manifest, ckpt_path];
    let (names, atlas) = match &cfg.model {
        ModelConfig::Bcgcnse(g) => (read_names(args.atlas_names.as_ref(), g.n_nodes)?, None),
        ModelConfig::Cnn3d(_) => {
            let labels_path = args
                .atlas_labels
                .as_ref()
                .ok_or_else(|| Error::Config("--atlas-labels is required for the volumetric model".into()))?;
            inputs.push(labels_path);
            let labels = conform_labels(&read_nifti(labels_path)?.data, &cfg)?;
            let n = labels.data().iter().fold(0.0f64, |m, &v| m.max(v)) as usize;
            let names = read_names(args.atlas_names.as_ref(), n)?;
            let atlas = AtlasParcellation::new(labels, names.clone()).map_err(|e| Error::format(labels_path, e.to_string()))?;
            (names, Some(atlas))
        }
    };
    if let Some(p) = &args.atlas_names {
        inputs.push(p);
    }
    let slices = args.slices.unwrap_or(false);
    let heat_dir = out.join("heatmaps");
    let slice_dir = out.join("slices");
    fs::create_dir_all(&heat_dir).map_err(|e| Error::io(format!("creating {}", heat_dir.display()), e))?;
    info!("explaining {} sessions", cohort.len());
    let per_session: Vec<Vec<RvRow>> = cohort
        .sessions()
        .par_iter()
        .map_init(
            || model.clone(),
            |m, s| {
                let input = load_input(s, &cfg)?;
                let e = explain_session(m, &input, s.class, atlas.as_ref())
                    .map_err(|e| Error::Data(format!("session `{}`: {e}", s.session_id)))?;
                write_heatmap(&heat_dir.join(format!("{}.bin", s.session_id)), &e.heatmap)?;
                if slices {
                    if e.heatmap.ndim() == 2 {
                        write_bytes(&slice_dir.join(format!("{}.pgm", s.session_id)), &matrix_pgm(&e.heatmap)?)?;
                    } else {
                        for (axis, img) in volume_mid_slices(&e.heatmap)? {
                            write_bytes(&slice_dir.join(format!("{}_{axis}.pgm", s.session_id)), &img)?;
                        }
                    }
                }
                Ok(rv_rows(&s.session_id, s.class, &e.rvs, &names))
            },
        )
        .collect::<Result<_>>()?;
    let rows: Vec<RvRow> = per_session.into_iter().flatten().collect();
    write_rv_csv(&out.join("rv.csv"), &rows)?;
    write_run(out, "explain", args, &inputs)
}

fn n_parcels(rows: &[RvRow]) -> usize {
    rows.iter().map(|r| r.parcel).max().unwrap_or(0)
}

fn targets_for(args: &StatsArgs, names: &AtlasNames) -> Result<TargetSets> {
    match &args.targets {
        Some(p) => {
            let t = TargetSets::read(p)?;
            t.validate(names)?;
            Ok(t)
        }
        None => {
            let t = TargetSets::shipped();
            match t.validate(names) {
                Ok(()) => Ok(t),
                Err(e) => {
                    warn!("shipped target sets do not fit this atlas ({e}); target overlap left empty");
                    Ok(TargetSets {
                        mtl: vec![],
                        dmn: vec![],
                    })
                }
            }
        }
    }
}

struct ModelStats {
    report: StatReport,
    sets: crate::stats::RvSets,
    names: AtlasNames,
}

fn model_stats(
    args: &StatsArgs,
    rv: &Path,
    predictions: &Path,
    manifest: &Path,
    names_path: Option<&PathBuf>,
) -> Result<ModelStats> {
    let rows = read_rv_csv(rv)?;
    let preds = read_predictions_csv(predictions)?;
    let cohort = read_manifest(manifest)?;
    let names = read_names(names_path, n_parcels(&rows))?;
    let sets = build_rv_sets(&rows, &preds, &cohort)?;
    let targets = targets_for(args, &names)?;
    let report = analyze(&sets, &names, &targets)?;
    Ok(ModelStats { report, sets, names })
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let rv = required(&args.rv, "rv")?;
    let predictions = required(&args.predictions, "predictions")?;
    let manifest = required(&args.manifest, "manifest")?;
    let out = required(&args.out, "out")?;
    let mut inputs: Vec<&Path> = vec![rv, predictions, manifest];
    inputs.extend(args.atlas_names.as_deref());
    inputs.extend(args.targets.as_deref());
    let a = model_stats(args, rv, predictions, manifest, args.atlas_names.as_ref())?;
    let b = match (&args.rv_b, &args.predictions_b) {
        (Some(rv_b), Some(pred_b)) => {
            let manifest_b = args.manifest_b.as_ref().unwrap_or(manifest);
            let names_b = args.atlas_names_b.as_ref().or(args.atlas_names.as_ref());
            inputs.extend([rv_b.as_path(), pred_b.as_path()]);
            inputs.extend(args.manifest_b.as_deref());
            inputs.extend(args.atlas_names_b.as_deref());
            Some(model_stats(args, rv_b, pred_b, manifest_b, names_b)?)
        }
        (None, None) => None,
        _ => return Err(Error::Config("--rv-b and --predictions-b go together".into())),
    };
    let label_a = args.label_a.clone().unwrap_or_else(|| "Model A".into());
    let label_b = args.label_b.clone().unwrap_or_else(|| "Model B".into());
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let other_a = b.as_ref().map(|m| &m.report);
    write_stats_csv(&out.join("stats.csv"), &stats_rows(&a.report, other_a))?;
    write_json(&out.join("subgroups.json"), &StatsSummary::of(&a.report))?;
    write_json(&out.join("connectogram.json"), &connectogram(&a.sets, &a.report, &a.names))?;
    let table = match &b {
        Some(m) => {
            write_stats_csv(&out.join("stats_b.csv"), &stats_rows(&m.report, Some(&a.report)))?;
            write_json(&out.join("subgroups_b.json"), &StatsSummary::of(&m.report))?;
            write_json(&out.join("connectogram_b.json"), &connectogram(&m.sets, &m.report, &m.names))?;
            render_table2(&[(label_a.as_str(), &a.report), (label_b.as_str(), &m.report)])
        }
        None => render_table2(&[(label_a.as_str(), &a.report)]),
    };
    write_bytes(&out.join("table2.md"), table.as_bytes())?;
    info!("{} of {} parcels significant", a.report.significant().count(), a.report.parcels.len());
    write_run(out, "stats", args, &inputs)
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let out = required(&args.out, "out")?;
    if args.crossval.is_none() && args.final_dir.is_none() && args.stats.is_none() {
        return Err(Error::Config("give at least one of --crossval, --final, --stats".into()));
    }
    let metrics_path = args.crossval.as_ref().map(|d| d.join("metrics.json"));
    let final_path = args.final_dir.as_ref().map(|d| d.join("final_metrics.json"));
    let stats_path = args.stats.as_ref().map(|d| d.join("subgroups.json"));
    let table_path = args.stats.as_ref().map(|d| d.join("table2.md"));
    let metrics: Option<MetricsDoc> = metrics_path.as_deref().map(read_json).transpose()?;
    let final_doc: Option<FinalMetricsDoc> = final_path.as_deref().map(read_json).transpose()?;
    let stats: Option<StatsSummary> = stats_path.as_deref().map(read_json).transpose()?;
    let table = table_path
        .as_deref()
        .map(|p| fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e)))
        .transpose()?;
    let text = render_report(metrics.as_ref(), final_doc.as_ref(), stats.as_ref(), table.as_deref());
    write_bytes(&out.join("report.md"), text.as_bytes())?;
    let inputs: Vec<&Path> = [&metrics_path, &final_path, &stats_path, &table_path]
        .into_iter()
        .filter_map(|p| p.as_deref())
        .collect();
    write_run(out, "report", args, &inputs)
}

/// Resolves `--config` and runs one subcommand.
pub fn run(command: &Command) -> Result<()> {
    let name = command.name();
    match command {
        Command::Synth(a) => cmd_synth(&resolve_args(a, a.config.as_deref(), name)?),
        Command::Crossval(a) => cmd_crossval(&resolve_args(a, a.config.as_deref(), name)?),
        Command::FinalTrain(a) => cmd_final_train(&resolve_args(a, a.config.as_deref(), name)?),
        Command::Explain(a) => cmd_explain(&resolve_args(a, a.config.as_deref(), name)?),
        Command::Stats(a) => cmd_stats(&resolve_args(a, a.config.as_deref(), name)?),
        Command::Report(a) => cmd_report(&resolve_args(a, a.config.as_deref(), name)?),
    }
}

/// Parses `args`, runs, and returns the process exit code: 0 success,
/// 1 usage or configuration error, 2 data error, 3 numeric failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(&cli.command)),
            Err(e) => Err(Error::Config(format!("--jobs {n}: {e}"))),
        },
        None => run(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
