//! Command implementations behind the `fcmformer` binary.
//!
//! Commands write their normal output to the supplied writer and return
//! [`CliError`] on failure; the binary maps that to the exit code.

pub mod config;

pub use config::RunConfig;

use crate::fcs::cohort::{load_cohort, load_sample, CohortManifest, EventMatrix, Lineage};
use crate::fcs::panel::{harmonize, PanelSchema};
use crate::fcs::parse_fcs;
use crate::metrics::evaluate;
use crate::model::checkpoint::{self, CheckpointError};
use crate::model::{parameter_count, ArchVariant, FcmFormer};
use crate::synth::{generate, write_cohort};
use crate::training::{history_csv, infer, report_csv, run_cv, CvSummary, TrainError};
use log::info;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Parameter total the variant table is reconciled against.
pub const REFERENCE_TOTAL: usize = 31_572;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, bad config or a missing input path.
    #[error("{0}")]
    Usage(String),
    /// Anything that failed after the inputs were accepted.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} not found", path.display())))
    }
}

fn class_names() -> Vec<&'static str> {
    Lineage::ALL.iter().map(|l| l.as_str()).collect()
}

/// Loads a config file, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            require_file("config", p)?;
            RunConfig::from_file(p).map_err(CliError::Usage)
        }
        None => Ok(RunConfig::default()),
    }
}

/// Reads a manifest after checking that it and every tube it lists exist.
fn checked_manifest(path: &Path) -> Result<CohortManifest> {
    require_file("manifest", path)?;
    let manifest = CohortManifest::read(path).map_err(|e| CliError::Usage(e.to_string()))?;
    if manifest.is_empty() {
        return Err(CliError::Usage(format!("manifest {} lists no samples", path.display())));
    }
    for s in &manifest.samples {
        for t in &s.tubes {
            require_file(&format!("tube of sample {}", s.sample_id), t)?;
        }
    }
    Ok(manifest)
}

fn load_checkpoint(path: &Path) -> Result<FcmFormer<f32>> {
    require_file("checkpoint", path)?;
    let model: FcmFormer<f32> = checkpoint::load(path).map_err(runtime)?;
    let width = PanelSchema::standard().len();
    if model.config().n_features != width {
        return Err(runtime(CheckpointError::Incompatible(format!(
            "model expects {} features, the panel has {width}",
            model.config().n_features
        ))));
    }
    if model.config().n_classes != Lineage::ALL.len() {
        return Err(runtime(CheckpointError::Incompatible(format!(
            "model has {} classes, expected {}",
            model.config().n_classes,
            Lineage::ALL.len()
        ))));
    }
    Ok(model)
}

/// Generates a synthetic cohort into `dir` and returns the manifest path.
pub fn cmd_synth(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<PathBuf> {
    let cohort = generate(&cfg.synth).map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = write_cohort(&cohort, &cfg.synth, dir).map_err(runtime)?;
    writeln!(
        out,
        "wrote {} samples × {} tubes to {}",
        cohort.len(),
        cfg.synth.tubes_per_sample,
        manifest.display()
    )
    .map_err(runtime)?;
    Ok(manifest)
}

/// Parses and harmonises each file and prints a summary of it.
pub fn cmd_parse(paths: &[PathBuf], out: &mut dyn Write) -> Result<()> {
    if paths.is_empty() {
        return Err(CliError::Usage("no FCS files given".into()));
    }
    for p in paths {
        require_file("FCS file", p)?;
    }
    let schema = PanelSchema::standard();
    for p in paths {
        let bytes = std::fs::read(p).map_err(io_err(p))?;
        let file = parse_fcs(&bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        let tube = harmonize(&file, &schema).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        let missing: Vec<&str> = schema
            .names()
            .iter()
            .zip(&tube.present)
            .filter(|(_, &present)| !present)
            .map(|(n, _)| n.as_str())
            .collect();
        let mut line = format!(
            "{}: {} events, {} parameters, {}/{} panel features",
            p.display(),
            file.n_events(),
            file.n_params(),
            schema.len() - missing.len(),
            schema.len()
        );
        if !missing.is_empty() {
            write!(line, ", zero-filled: {}", missing.join(" ")).unwrap();
        }
        writeln!(out, "{line}").map_err(runtime)?;
    }
    Ok(())
}

/// Cross-validated training on the config's manifest. Writes
/// `report.csv`, `confusion_fold{i}.csv`, `history_fold{i}.csv`,
/// `fold{i}.ckpt` and `run_manifest.txt` into the output directory.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<CvSummary> {
    let manifest_path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Usage("config sets no manifest".into()))?;
    let schema = PanelSchema::standard();
    if cfg.model.n_features != schema.len() {
        return Err(CliError::Usage(format!(
            "n_features is {}, the panel has {} features",
            cfg.model.n_features,
            schema.len()
        )));
    }
    if cfg.model.n_classes != Lineage::ALL.len() {
        return Err(CliError::Usage(format!("n_classes must be {}", Lineage::ALL.len())));
    }
    let manifest = checked_manifest(manifest_path)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;

    let load = load_cohort(&manifest, &schema);
    if load.samples.is_empty() {
        return Err(runtime(format!("no sample of {} could be loaded", manifest_path.display())));
    }
    info!("loaded {} samples, {} failed", load.samples.len(), load.failures.len());
    let outcome = run_cv::<f32>(&load.samples, &cfg.model, &cfg.train).map_err(|e| match e {
        TrainError::Config(_) => CliError::Usage(e.to_string()),
        other => runtime(other),
    })?;

    let names = class_names();
    let write = |name: String, text: String| {
        let path = cfg.out_dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))
    };
    let reports: Vec<_> = outcome.folds.iter().map(|f| f.report.clone()).collect();
    write("report.csv".into(), report_csv(&reports, &names))?;
    for f in &outcome.folds {
        let i = f.report.fold;
        write(format!("confusion_fold{i}.csv"), f.report.test.confusion.to_csv(&names))?;
        write(format!("history_fold{i}.csv"), history_csv(&f.report))?;
        checkpoint::save(&cfg.out_dir.join(format!("fold{i}.ckpt")), &f.model).map_err(runtime)?;
    }

    let s = &outcome.summary;
    let mut run = String::from("# resolved configuration\n");
    run.push_str(&cfg.render());
    writeln!(run, "\n# cohort\nsamples_loaded = {}", load.samples.len()).unwrap();
    for (id, e) in &load.failures {
        writeln!(run, "# failed {id}: {e}").unwrap();
    }
    writeln!(
        run,
        "\n# results\nmean_accuracy = {}\nstd_accuracy = {}\nmean_roc_auc = {}\nstd_roc_auc = {}",
        s.mean_accuracy, s.std_accuracy, s.mean_roc_auc, s.std_roc_auc
    )
    .unwrap();
    write("run_manifest.txt".into(), run)?;

    for r in &reports {
        writeln!(
            out,
            "fold {}: best epoch {}, test accuracy {:.4}, test ROC-AUC {:.4}",
            r.fold, r.best_epoch, r.test.accuracy, r.test.roc_auc
        )
        .map_err(runtime)?;
    }
    writeln!(
        out,
        "accuracy {:.4} ± {:.4}, ROC-AUC {:.4} ± {:.4}; outputs in {}",
        s.mean_accuracy,
        s.std_accuracy,
        s.mean_roc_auc,
        s.std_roc_auc,
        cfg.out_dir.display()
    )
    .map_err(runtime)?;
    Ok(outcome.summary.clone())
}

/// Scores a checkpoint on every sample of a labelled manifest.
pub fn cmd_evaluate(checkpoint_path: &Path, manifest_path: &Path, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(checkpoint_path)?;
    let manifest = checked_manifest(manifest_path)?;
    let load = load_cohort(&manifest, &PanelSchema::standard());
    if let Some((id, e)) = load.failures.first() {
        return Err(runtime(format!("sample {id}: {e}")));
    }
    let ids: Vec<usize> = (0..load.samples.len()).collect();
    let (preds, probs) = infer(&model, &load.samples, &ids).map_err(runtime)?;
    let truth: Vec<usize> = manifest.samples.iter().map(|s| s.label.index()).collect();
    let result = evaluate(&preds, &probs, &truth, model.config().n_classes).map_err(runtime)?;
    let mut text = format!(
        "samples {}\naccuracy {}\nroc_auc {}\n",
        truth.len(),
        result.accuracy,
        result.roc_auc
    );
    for (name, auc) in class_names().iter().zip(&result.per_class_auc) {
        writeln!(text, "roc_auc_{name} {auc}").unwrap();
    }
    text.push_str(&result.confusion.to_csv(&class_names()));
    out.write_all(text.as_bytes()).map_err(runtime)
}

/// What `cmd_predict` classifies.
#[derive(Debug, Clone)]
pub enum PredictInput {
    /// Tubes of a single sample.
    Tubes { sample_id: Option<String>, paths: Vec<PathBuf> },
    /// Every sample of a manifest; labels are ignored.
    Manifest(PathBuf),
}

fn prediction_line(model: &FcmFormer<f32>, sample: &EventMatrix) -> Result<String> {
    let p = model.predict(sample).map_err(runtime)?;
    let label = Lineage::from_index(p.label).map_or("?", Lineage::as_str);
    let mut line = format!("{},{label}", sample.sample_id);
    for v in &p.probabilities {
        write!(line, ",{:.9}", *v as f64).unwrap();
    }
    Ok(line)
}

/// Prints `sample_id,label,p_ball,p_tall,p_aml` for each sample.
pub fn cmd_predict(checkpoint_path: &Path, input: &PredictInput, out: &mut dyn Write) -> Result<()> {
    let schema = PanelSchema::standard();
    let samples: Vec<(String, Vec<PathBuf>)> = match input {
        PredictInput::Tubes { sample_id, paths } => {
            let first = paths.first().ok_or_else(|| CliError::Usage("no tube files given".into()))?;
            for p in paths {
                require_file("tube", p)?;
            }
            let id = sample_id.clone().unwrap_or_else(|| {
                first.file_stem().map_or("sample".into(), |s| s.to_string_lossy().into_owned())
            });
            vec![(id, paths.clone())]
        }
        PredictInput::Manifest(path) => checked_manifest(path)?
            .samples
            .into_iter()
            .map(|s| (s.sample_id, s.tubes))
            .collect(),
    };
    let model = load_checkpoint(checkpoint_path)?;
    for (id, tubes) in &samples {
        let sample = load_sample(id, None, tubes, &schema).map_err(runtime)?;
        let line = prediction_line(&model, &sample)?;
        writeln!(out, "{line}").map_err(runtime)?;
    }
    Ok(())
}

/// Prints the itemised parameter ledger and, with `variants`, the totals
/// of every architecture variant ordered by distance from
/// [`REFERENCE_TOTAL`].
pub fn cmd_params(cfg: &RunConfig, variants: bool, out: &mut dyn Write) -> Result<usize> {
    let ledger = parameter_count(&cfg.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut text = format!("{ledger}\n");
    if variants {
        let mut rows: Vec<(usize, ArchVariant)> =
            ArchVariant::all().into_iter().map(|v| (v.total(&cfg.model), v)).collect();
        rows.sort_by_key(|(t, v)| (t.abs_diff(REFERENCE_TOTAL), *t, v.describe()));
        writeln!(text, "\nvariant totals against {REFERENCE_TOTAL}:").unwrap();
        for (total, v) in rows {
            let mark = if v == ArchVariant::IMPLEMENTED { "  <- implemented" } else { "" };
            let diff = total as i64 - REFERENCE_TOTAL as i64;
            writeln!(text, "{total:>7} {diff:>+7}  {}{mark}", v.describe()).unwrap();
        }
    }
    out.write_all(text.as_bytes()).map_err(runtime)?;
    Ok(ledger.total)
}
