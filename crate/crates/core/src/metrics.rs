//! Accuracy, rank-based ROC-AUC and confusion matrices.
//!
//! The multiclass AUC is the unweighted mean of one-vs-rest binary AUCs.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{what}: lengths differ ({left} vs {right})")]
    Length {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{0}: no samples")]
    Empty(&'static str),
    #[error("AUC undefined: truth contains only {0} samples")]
    SingleClass(&'static str),
    #[error("AUC undefined: classes {0:?} absent from truth")]
    MissingClasses(Vec<usize>),
    #[error("label {label} outside 0..{n_classes}")]
    Label { label: usize, n_classes: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    same_len("accuracy", preds.len(), truth.len())?;
    if preds.is_empty() {
        return Err(MetricsError::Empty("accuracy"));
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn same_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(MetricsError::Length { what, left, right });
    }
    Ok(())
}

/// 1-based ranks with tied values sharing the mean of their positions.
/// Values are doubled so every midrank is an exact integer.
fn doubled_midranks(scores: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0u64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i+1..=j+1, mean (i+j+2)/2, doubled
        let r2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC: the probability a positive outscores a negative,
/// counting ties as one half.
pub fn binary_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    same_len("binary_auc", scores.len(), truth.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let n_pos = truth.iter().filter(|&&t| t).count() as u64;
    let n_neg = truth.len() as u64 - n_pos;
    if n_pos == 0 {
        return Err(MetricsError::SingleClass("negative"));
    }
    if n_neg == 0 {
        return Err(MetricsError::SingleClass("positive"));
    }
    let ranks = doubled_midranks(scores);
    let rank_sum2: u64 = ranks.iter().zip(truth).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    // 2U = 2·Σranks⁺ − n⁺(n⁺+1)
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-class one-vs-rest AUCs from an `n × n_classes` row-major
/// probability matrix.
pub fn per_class_auc(probabilities: &[f64], n_classes: usize, truth: &[usize]) -> Result<Vec<f64>> {
    same_len("per_class_auc", probabilities.len(), truth.len() * n_classes)?;
    check_labels(truth, n_classes)?;
    let missing: Vec<usize> = (0..n_classes).filter(|c| !truth.contains(c)).collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingClasses(missing));
    }
    (0..n_classes)
        .map(|c| {
            let scores: Vec<f64> = probabilities.chunks_exact(n_classes).map(|row| row[c]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            binary_auc(&scores, &pos)
        })
        .collect()
}

pub fn macro_ovr_auc(probabilities: &[f64], n_classes: usize, truth: &[usize]) -> Result<f64> {
    let per = per_class_auc(probabilities, n_classes, truth)?;
    Ok(per.iter().sum::<f64>() / n_classes as f64)
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= n_classes) {
        Some(&label) => Err(MetricsError::Label { label, n_classes }),
        None => Ok(()),
    }
}

/// `n_classes × n_classes` counts; row = truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(preds: &[usize], truth: &[usize], n_classes: usize) -> Result<Self> {
        same_len("confusion", preds.len(), truth.len())?;
        check_labels(preds, n_classes)?;
        check_labels(truth, n_classes)?;
        let mut counts = vec![0; n_classes * n_classes];
        for (&p, &t) in preds.iter().zip(truth) {
            counts[t * n_classes + p] += 1;
        }
        Ok(Self { n_classes, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> usize {
        (0..self.n_classes).map(|t| self.get(t, pred)).sum()
    }

    /// Precision per predicted class; 0 when the class was never predicted.
    pub fn precision(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| ratio(self.get(c, c), self.col_sum(c)))
            .collect()
    }

    /// Recall per true class; 0 when the class is absent.
    pub fn recall(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| ratio(self.get(c, c), self.row_sum(c)))
            .collect()
    }

    /// CSV with a `truth\pred` corner and class names on both axes.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut s = String::from("truth\\pred");
        for n in names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (t, n) in names.iter().enumerate() {
            s.push_str(n);
            for p in 0..self.n_classes {
                s.push_str(&format!(",{}", self.get(t, p)));
            }
            s.push('\n');
        }
        s
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub roc_auc: f64,
    pub per_class_auc: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

/// Scores predictions against truth. `probabilities` is `n × n_classes`
/// row-major; predicted labels are taken from the caller.
pub fn evaluate(preds: &[usize], probabilities: &[f64], truth: &[usize], n_classes: usize) -> Result<EvalResult> {
    let confusion = ConfusionMatrix::new(preds, truth, n_classes)?;
    let accuracy = accuracy(preds, truth)?;
    let per_class_auc = per_class_auc(probabilities, n_classes, truth)?;
    let roc_auc = per_class_auc.iter().sum::<f64>() / n_classes as f64;
    Ok(EvalResult {
        accuracy,
        roc_auc,
        per_class_auc,
        confusion,
    })
}
