//! Supervised training: one sample per Adam step, cosine-annealed learning
//! rate, early stopping on validation accuracy, and a k-fold harness.

mod adam;
mod split;

pub use adam::AdamState;
pub use split::{fold_seed, make_splits, test_block_size, FoldSplit};

use crate::fcs::cohort::{EventMatrix, Lineage};
use crate::metrics::{self, EvalResult, MetricsError};
use crate::model::{FcmFormer, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::tensor::softmax_in_place;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("sample {0} has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Epochs over which the rate anneals from `lr_max` to `lr_min`.
    pub anneal_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_folds: usize,
    /// Folds trained concurrently.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            patience: 50,
            lr_max: 0.001,
            lr_min: 0.0002,
            anneal_period: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            n_train: 660,
            n_val: 100,
            n_test: 200,
            n_folds: 5,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return fail(format!("need 0 < lr_min < lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if self.patience == 0 || self.patience > self.epochs {
            return fail(format!("need 1 <= patience <= epochs, got {} and {}", self.patience, self.epochs));
        }
        if self.anneal_period == 0 {
            return fail("anneal_period must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.n_folds == 0 || self.jobs == 0 {
            return fail("n_folds and jobs must be positive".into());
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return fail("split sizes must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch: half a cosine from `lr_max` down to
/// `lr_min` over `anneal_period` epochs, then held at `lr_min`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch >= cfg.anneal_period {
        return cfg.lr_min;
    }
    let c = 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.anneal_period as f64).cos());
    cfg.lr_max * c + cfg.lr_min * (1.0 - c)
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(TrainError::Contract(format!("label {label} outside 0..{}", logits.len())));
    }
    let mut p = logits.to_vec();
    let lse = softmax_in_place(&mut p).ok_or_else(|| TrainError::Contract("non-finite logits".into()))?;
    Ok(lse - logits[label])
}

/// Tracks the best validation accuracy. Only a strict improvement moves
/// the best epoch, so ties keep the earlier one.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_epoch: usize,
    best: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_epoch: 0,
            best: f64::NEG_INFINITY,
        }
    }

    /// Records a 1-based epoch; returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> bool {
        if accuracy > self.best {
            self.best = accuracy;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch - self.best_epoch >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_ids: Vec<String>,
    pub test_predictions: Vec<usize>,
    pub test: EvalResult,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub model: FcmFormer<T>,
    pub report: FoldReport,
}

fn label_of(s: &EventMatrix) -> Result<usize> {
    s.label.map(Lineage::index).ok_or_else(|| TrainError::Unlabeled(s.sample_id.clone()))
}

/// Arg-max labels and `n × n_classes` probabilities for `ids`.
pub fn infer<T: Scalar>(model: &FcmFormer<T>, cohort: &[EventMatrix], ids: &[usize]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(ids.len());
    let mut probs = Vec::with_capacity(ids.len() * model.config().n_classes);
    for &i in ids {
        let p = model.predict(&cohort[i])?;
        labels.push(p.label);
        probs.extend(p.probabilities.iter().map(|v| v.to_f64_lossy()));
    }
    Ok((labels, probs))
}

/// Accuracy, AUC and confusion of `model` over cohort positions `ids`.
pub fn evaluate_ids<T: Scalar>(model: &FcmFormer<T>, cohort: &[EventMatrix], ids: &[usize]) -> Result<(Vec<usize>, EvalResult)> {
    let truth = ids.iter().map(|&i| label_of(&cohort[i])).collect::<Result<Vec<_>>>()?;
    let (preds, probs) = infer(model, cohort, ids)?;
    let eval = metrics::evaluate(&preds, &probs, &truth, model.config().n_classes)?;
    Ok((preds, eval))
}

fn val_accuracy<T: Scalar>(model: &FcmFormer<T>, cohort: &[EventMatrix], ids: &[usize], truth: &[usize]) -> Result<f64> {
    let (preds, _) = infer(model, cohort, ids)?;
    Ok(metrics::accuracy(&preds, truth)?)
}

/// Trains one fold from a fresh model seeded with the fold seed and
/// scores the best-validation checkpoint on the test ids.
pub fn train_fold<T: Scalar>(
    cohort: &[EventMatrix],
    split: &FoldSplit,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FoldOutcome<T>> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(TrainError::Config(format!("fold {} has an empty partition", split.fold)));
    }
    if let Some(&i) = split.train.iter().chain(&split.val).chain(&split.test).find(|&&i| i >= cohort.len()) {
        return Err(TrainError::Config(format!("split index {i} outside cohort of {}", cohort.len())));
    }
    let seed = fold_seed(cfg.seed, split.fold);
    let mut model = FcmFormer::<T>::new(ModelConfig {
        seed: fold_seed(model_cfg.seed, split.fold),
        ..model_cfg.clone()
    })?;
    let train_labels = split.train.iter().map(|&i| label_of(&cohort[i])).collect::<Result<Vec<_>>>()?;
    let val_truth = split.val.iter().map(|&i| label_of(&cohort[i])).collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::for_tree(model.params(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();

    for e in 0..cfg.epochs {
        let epoch = e + 1;
        let lr = lr_schedule(e, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &k in &order {
            let (loss, grads) = model.loss_and_grads(&cohort[split.train[k]], train_labels[k])?;
            loss_sum += loss.to_f64_lossy();
            adam.step_tree(model.params_mut(), &grads, lr)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_acc = val_accuracy(&model, cohort, &split.val, &val_truth)?;
        if stop.observe(epoch, val_acc) {
            best = model.clone();
        }
        info!("fold {} epoch {epoch}: lr {lr:.6} loss {train_loss:.5} val_acc {val_acc:.4}", split.fold);
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_accuracy: val_acc,
        });
        if stop.should_stop(epoch) {
            info!("fold {}: no improvement for {} epochs, stopping", split.fold, cfg.patience);
            break;
        }
    }

    let (test_predictions, test) = evaluate_ids(&best, cohort, &split.test)?;
    info!(
        "fold {}: best epoch {} val_acc {:.4} test_acc {:.4} test_auc {:.4}",
        split.fold,
        stop.best_epoch(),
        stop.best(),
        test.accuracy,
        test.roc_auc
    );
    Ok(FoldOutcome {
        model: best,
        report: FoldReport {
            fold: split.fold,
            history,
            best_epoch: stop.best_epoch(),
            best_val_accuracy: stop.best(),
            test_ids: split.test.iter().map(|&i| cohort[i].sample_id.clone()).collect(),
            test_predictions,
            test,
        },
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_roc_auc: f64,
    pub std_roc_auc: f64,
}

impl CvSummary {
    pub fn of(reports: &[FoldReport]) -> Self {
        let acc: Vec<f64> = reports.iter().map(|r| r.test.accuracy).collect();
        let auc: Vec<f64> = reports.iter().map(|r| r.test.roc_auc).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_roc_auc, std_roc_auc) = mean_std(&auc);
        Self {
            mean_accuracy,
            std_accuracy,
            mean_roc_auc,
            std_roc_auc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvOutcome<T> {
    pub folds: Vec<FoldOutcome<T>>,
    pub summary: CvSummary,
}

/// Every fold of [`make_splits`], trained `cfg.jobs` at a time.
pub fn run_cv<T: Scalar>(cohort: &[EventMatrix], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<CvOutcome<T>> {
    cfg.validate()?;
    model_cfg.validate()?;
    let labels = cohort.iter().map(label_of).collect::<Result<Vec<_>>>()?;
    let splits = make_splits(&labels, model_cfg.n_classes, cfg)?;
    let folds: Vec<FoldOutcome<T>> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            splits
                .par_iter()
                .map(|s| train_fold(cohort, s, model_cfg, cfg))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        splits
            .iter()
            .map(|s| train_fold(cohort, s, model_cfg, cfg))
            .collect::<Result<Vec<_>>>()?
    };
    let reports: Vec<FoldReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(CvOutcome {
        summary: CvSummary::of(&reports),
        folds,
    })
}

/// One row per fold: fold, best_epoch, test_accuracy, test_roc_auc, then
/// precision and recall for each class.
pub fn report_csv(reports: &[FoldReport], class_names: &[&str]) -> String {
    let mut s = String::from("fold,best_epoch,test_accuracy,test_roc_auc");
    for n in class_names {
        write!(s, ",precision_{n},recall_{n}").unwrap();
    }
    s.push('\n');
    for r in reports {
        write!(s, "{},{},{},{}", r.fold, r.best_epoch, r.test.accuracy, r.test.roc_auc).unwrap();
        let (p, rc) = (r.test.confusion.precision(), r.test.confusion.recall());
        for c in 0..class_names.len() {
            write!(s, ",{},{}", p[c], rc[c]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn history_csv(report: &FoldReport) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_accuracy\n");
    for h in &report.history {
        writeln!(s, "{},{},{},{}", h.epoch, h.lr, h.train_loss, h.val_accuracy).unwrap();
    }
    s
}
