//! Flat `key = value` run configuration.
//!
//! One file covers the model, training, synthetic-cohort and path
//! settings. Blank lines and everything after `#` are ignored. Unknown
//! and repeated keys are errors. Relative paths resolve against the
//! directory of the config file.

use crate::fcs::{ByteOrder, DataType};
use crate::model::{ModelConfig, Readout};
use crate::synth::SynthConfig;
use crate::training::TrainConfig;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Every key in rendering order with its one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "single source of randomness for model init, splits, shuffling and the generator"),
    ("manifest", "cohort manifest CSV (sample_id,label,tube_path) used by train"),
    ("out_dir", "directory for reports, checkpoints and the run manifest"),
    ("n_features", "panel width fed to the model"),
    ("d", "embedding width"),
    ("m", "inducing points per layer"),
    ("heads", "attention heads; must divide d"),
    ("n_layers", "stacked set-attention layers"),
    ("n_classes", "output classes"),
    ("readout", "class_token or cross_attention"),
    ("subsample_cap", "maximum events per forward pass, or none"),
    ("epochs", "maximum training epochs per fold"),
    ("patience", "epochs without a validation-accuracy gain before stopping"),
    ("lr_max", "learning rate at epoch 0"),
    ("lr_min", "learning rate reached after anneal_period epochs and held"),
    ("anneal_period", "epochs of cosine annealing"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam denominator epsilon"),
    ("n_train", "training samples per fold"),
    ("n_val", "validation samples per fold"),
    ("n_test", "test samples per fold"),
    ("n_folds", "cross-validation folds; 1 is a plain holdout"),
    ("jobs", "folds trained concurrently"),
    ("n_per_class", "synthetic samples per class"),
    ("tubes_per_sample", "synthetic tubes per sample"),
    ("events_per_tube", "synthetic events per tube"),
    ("blast_fraction_min", "lower end of the per-sample blast fraction"),
    ("blast_fraction_max", "upper end of the per-sample blast fraction"),
    ("noise_scale", "per-event standard deviation around population means"),
    ("sample_jitter", "per-sample standard deviation of population means"),
    ("tube_panels", "markers per synthetic tube besides scatter and CD45; tubes separated by ';'"),
    ("datatype", "synthetic FCS storage: F, D or I"),
    ("byte_order", "synthetic FCS byte order: little or big"),
    ("int_scale", "multiplier applied before rounding for datatype I"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            manifest: None,
            out_dir: PathBuf::from("run"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        };
        cfg.set_seed(0);
        cfg
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
}

fn parse_datatype(value: &str) -> Result<DataType, String> {
    match value {
        "F" => Ok(DataType::Float),
        "D" => Ok(DataType::Double),
        "I" => Ok(DataType::Integer),
        _ => Err(format!("bad value {value:?} for datatype (F | D | I)")),
    }
}

fn byte_order_name(b: ByteOrder) -> &'static str {
    match b {
        ByteOrder::Little => "little",
        ByteOrder::Big => "big",
    }
}

impl RunConfig {
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    /// Reads and validates a config file.
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: String| format!("line {}: {e}", i + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("key {key} given twice")));
            }
            cfg.set(key, value, base).map_err(at)?;
        }
        let seed = cfg.seed;
        cfg.set_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let (m, t, s) = (&mut self.model, &mut self.train, &mut self.synth);
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "manifest" => self.manifest = Some(path(value)),
            "out_dir" => self.out_dir = path(value),
            "n_features" => m.n_features = parse_num(key, value)?,
            "d" => m.d = parse_num(key, value)?,
            "m" => m.m = parse_num(key, value)?,
            "heads" => m.heads = parse_num(key, value)?,
            "n_layers" => m.n_layers = parse_num(key, value)?,
            "n_classes" => m.n_classes = parse_num(key, value)?,
            "readout" => m.readout = value.parse::<Readout>()?,
            "subsample_cap" => {
                m.subsample_cap = if value == "none" { None } else { Some(parse_num(key, value)?) }
            }
            "epochs" => t.epochs = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "lr_max" => t.lr_max = parse_num(key, value)?,
            "lr_min" => t.lr_min = parse_num(key, value)?,
            "anneal_period" => t.anneal_period = parse_num(key, value)?,
            "beta1" => t.beta1 = parse_num(key, value)?,
            "beta2" => t.beta2 = parse_num(key, value)?,
            "eps" => t.eps = parse_num(key, value)?,
            "n_train" => t.n_train = parse_num(key, value)?,
            "n_val" => t.n_val = parse_num(key, value)?,
            "n_test" => t.n_test = parse_num(key, value)?,
            "n_folds" => t.n_folds = parse_num(key, value)?,
            "jobs" => t.jobs = parse_num(key, value)?,
            "n_per_class" => s.n_per_class = parse_num(key, value)?,
            "tubes_per_sample" => s.tubes_per_sample = parse_num(key, value)?,
            "events_per_tube" => s.events_per_tube = parse_num(key, value)?,
            "blast_fraction_min" => s.blast_fraction.0 = parse_num(key, value)?,
            "blast_fraction_max" => s.blast_fraction.1 = parse_num(key, value)?,
            "noise_scale" => s.noise_scale = parse_num(key, value)?,
            "sample_jitter" => s.sample_jitter = parse_num(key, value)?,
            "tube_panels" => {
                s.tube_panels = value
                    .split(';')
                    .map(|tube| tube.split_whitespace().map(str::to_string).collect())
                    .collect()
            }
            "datatype" => s.datatype = parse_datatype(value)?,
            "byte_order" => {
                s.byte_order = match value {
                    "little" => ByteOrder::Little,
                    "big" => ByteOrder::Big,
                    _ => return Err(format!("bad value {value:?} for byte_order (little | big)")),
                }
            }
            "int_scale" => s.int_scale = parse_num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.synth.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        let (m, t, s) = (&self.model, &self.train, &self.synth);
        match key {
            "seed" => self.seed.to_string(),
            "manifest" => self.manifest.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "out_dir" => self.out_dir.display().to_string(),
            "n_features" => m.n_features.to_string(),
            "d" => m.d.to_string(),
            "m" => m.m.to_string(),
            "heads" => m.heads.to_string(),
            "n_layers" => m.n_layers.to_string(),
            "n_classes" => m.n_classes.to_string(),
            "readout" => m.readout.to_string(),
            "subsample_cap" => m.subsample_cap.map_or("none".into(), |c| c.to_string()),
            "epochs" => t.epochs.to_string(),
            "patience" => t.patience.to_string(),
            "lr_max" => t.lr_max.to_string(),
            "lr_min" => t.lr_min.to_string(),
            "anneal_period" => t.anneal_period.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "eps" => t.eps.to_string(),
            "n_train" => t.n_train.to_string(),
            "n_val" => t.n_val.to_string(),
            "n_test" => t.n_test.to_string(),
            "n_folds" => t.n_folds.to_string(),
            "jobs" => t.jobs.to_string(),
            "n_per_class" => s.n_per_class.to_string(),
            "tubes_per_sample" => s.tubes_per_sample.to_string(),
            "events_per_tube" => s.events_per_tube.to_string(),
            "blast_fraction_min" => s.blast_fraction.0.to_string(),
            "blast_fraction_max" => s.blast_fraction.1.to_string(),
            "noise_scale" => s.noise_scale.to_string(),
            "sample_jitter" => s.sample_jitter.to_string(),
            "tube_panels" => s.tube_panels.iter().map(|t| t.join(" ")).collect::<Vec<_>>().join("; "),
            "datatype" => s.datatype.code().to_string(),
            "byte_order" => byte_order_name(s.byte_order).to_string(),
            "int_scale" => s.int_scale.to_string(),
            _ => unreachable!("key table and renderer disagree on {key}"),
        }
    }

    /// Every key with its current value, each preceded by its description
    /// as a comment. Parses back to the same config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let v = self.value(key);
            if *key == "manifest" && v.is_empty() {
                writeln!(out, "# {doc}\n# manifest = cohort/manifest.csv").unwrap();
                continue;
            }
            writeln!(out, "# {doc}\n{key} = {v}").unwrap();
        }
        out
    }
}
