//! Per-sample event matrices and cohort manifests.

use super::panel::{harmonize, PanelSchema};
use super::{parse_fcs, FcsError};
use log::warn;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Leukemia lineage; the discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lineage {
    BAll = 0,
    TAll = 1,
    Aml = 2,
}

impl Lineage {
    pub const ALL: [Lineage; 3] = [Lineage::BAll, Lineage::TAll, Lineage::Aml];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lineage::BAll => "B-ALL",
            Lineage::TAll => "T-ALL",
            Lineage::Aml => "AML",
        }
    }
}

impl fmt::Display for Lineage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lineage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        match key.as_str() {
            "BALL" => Ok(Lineage::BAll),
            "TALL" => Ok(Lineage::TAll),
            "AML" => Ok(Lineage::Aml),
            _ => Err(format!("unknown lineage label {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("event matrix {sample_id}: {reason}")]
    Invalid { sample_id: String, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("manifest {path} row {row}: {reason}")]
    ManifestRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("tube {path}: {source}")]
    Tube {
        path: PathBuf,
        #[source]
        source: FcsError,
    },
    #[error("tube {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One sample: `N` events × `n_features`, stacked tube by tube.
///
/// For every tube and every feature masked absent in it, the tube's rows
/// hold exactly zero in that column.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMatrix {
    pub sample_id: String,
    pub label: Option<Lineage>,
    n_features: usize,
    data: Vec<f32>,
    tube_offsets: Vec<usize>,
    present_mask: Vec<Vec<bool>>,
}

impl EventMatrix {
    pub fn new(
        sample_id: impl Into<String>,
        label: Option<Lineage>,
        n_features: usize,
        data: Vec<f32>,
        tube_offsets: Vec<usize>,
        present_mask: Vec<Vec<bool>>,
    ) -> Result<Self, CohortError> {
        let m = Self {
            sample_id: sample_id.into(),
            label,
            n_features,
            data,
            tube_offsets,
            present_mask,
        };
        m.validate()?;
        Ok(m)
    }

    /// Single tube with every feature present.
    pub fn from_rows(
        sample_id: impl Into<String>,
        label: Option<Lineage>,
        n_features: usize,
        data: Vec<f32>,
    ) -> Result<Self, CohortError> {
        Self::new(sample_id, label, n_features, data, vec![0], vec![vec![true; n_features]])
    }

    /// Stacks tubes of `(row-major data, present mask)` in order.
    pub fn from_tubes(
        sample_id: impl Into<String>,
        label: Option<Lineage>,
        n_features: usize,
        tubes: Vec<(Vec<f32>, Vec<bool>)>,
    ) -> Result<Self, CohortError> {
        let mut data = Vec::new();
        let mut offsets = Vec::with_capacity(tubes.len());
        let mut masks = Vec::with_capacity(tubes.len());
        for (d, mask) in tubes {
            offsets.push(data.len() / n_features.max(1));
            data.extend(d);
            masks.push(mask);
        }
        Self::new(sample_id, label, n_features, data, offsets, masks)
    }

    fn invalid(&self, reason: impl Into<String>) -> CohortError {
        CohortError::Invalid {
            sample_id: self.sample_id.clone(),
            reason: reason.into(),
        }
    }

    fn validate(&self) -> Result<(), CohortError> {
        if self.n_features == 0 {
            return Err(self.invalid("zero feature width"));
        }
        if self.data.len() % self.n_features != 0 {
            return Err(self.invalid(format!(
                "{} values do not fill rows of width {}",
                self.data.len(),
                self.n_features
            )));
        }
        if self.tube_offsets.first() != Some(&0) {
            return Err(self.invalid("first tube offset must be 0"));
        }
        if self.tube_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(self.invalid("tube offsets must be strictly increasing"));
        }
        let n = self.n_events();
        if self.tube_offsets.last().is_some_and(|&o| o >= n) && n > 0 {
            return Err(self.invalid("empty trailing tube"));
        }
        if self.present_mask.len() != self.tube_offsets.len() {
            return Err(self.invalid("one present mask per tube required"));
        }
        for (t, mask) in self.present_mask.iter().enumerate() {
            if mask.len() != self.n_features {
                return Err(self.invalid(format!("tube {t} mask has width {}", mask.len())));
            }
            let range = self.tube_rows(t);
            for (j, _) in mask.iter().enumerate().filter(|(_, &p)| !p) {
                if range.clone().any(|r| self.data[r * self.n_features + j] != 0.0) {
                    return Err(self.invalid(format!("tube {t} feature {j} is masked absent but non-zero")));
                }
            }
        }
        Ok(())
    }

    pub fn n_events(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn tube_offsets(&self) -> &[usize] {
        &self.tube_offsets
    }

    pub fn present_mask(&self) -> &[Vec<bool>] {
        &self.present_mask
    }

    pub fn n_tubes(&self) -> usize {
        self.tube_offsets.len()
    }

    /// Row range of tube `t`.
    pub fn tube_rows(&self, t: usize) -> std::ops::Range<usize> {
        let start = self.tube_offsets[t];
        let end = self.tube_offsets.get(t + 1).copied().unwrap_or_else(|| self.n_events());
        start..end
    }

    /// Per-feature mean over all events.
    pub fn mean_vector(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_features];
        for row in self.data.chunks_exact(self.n_features) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        let n = self.n_events().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// `x·scale + offset` per feature on present columns; imputed zeros stay zero.
    pub fn affine_rescale(&mut self, scale: &[f32], offset: &[f32]) {
        assert_eq!(scale.len(), self.n_features);
        assert_eq!(offset.len(), self.n_features);
        for t in 0..self.n_tubes() {
            let mask = self.present_mask[t].clone();
            for r in self.tube_rows(t) {
                let row = &mut self.data[r * self.n_features..(r + 1) * self.n_features];
                for j in 0..row.len() {
                    if mask[j] {
                        row[j] = row[j] * scale[j] + offset[j];
                    }
                }
            }
        }
    }
}

/// One manifest row: a single tube belonging to a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub label: Lineage,
    pub tube_path: PathBuf,
}

/// Samples in order of first appearance, each with its tubes in row order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSample {
    pub sample_id: String,
    pub label: Lineage,
    pub tubes: Vec<PathBuf>,
}

pub const MANIFEST_HEADER: [&str; 3] = ["sample_id", "label", "tube_path"];

impl CohortManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self, String> {
        let mut samples: Vec<ManifestSample> = Vec::new();
        for e in entries {
            match samples.iter_mut().find(|s| s.sample_id == e.sample_id) {
                Some(s) => {
                    if s.label != e.label {
                        return Err(format!(
                            "sample {} labelled both {} and {}",
                            e.sample_id, s.label, e.label
                        ));
                    }
                    s.tubes.push(e.tube_path);
                }
                None => samples.push(ManifestSample {
                    sample_id: e.sample_id,
                    label: e.label,
                    tubes: vec![e.tube_path],
                }),
            }
        }
        Ok(Self { samples })
    }

    /// Reads `sample_id,label,tube_path` CSV. Relative tube paths resolve
    /// against the manifest's directory.
    pub fn read(path: &Path) -> Result<Self, CohortError> {
        let merr = |reason: String| CohortError::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| merr(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).map_err(|err| match err {
            CohortError::Manifest { reason, .. } => merr(reason),
            CohortError::ManifestRow { row, reason, .. } => CohortError::ManifestRow {
                path: path.to_path_buf(),
                row,
                reason,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CohortError> {
        let merr = |reason: String| CohortError::Manifest {
            path: PathBuf::new(),
            reason,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| merr(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(merr(format!(
                "expected header {}, found {}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            // header is line 1
            let row = i + 2;
            let row_err = |reason: String| CohortError::ManifestRow {
                path: PathBuf::new(),
                row,
                reason,
            };
            let rec = rec.map_err(|e| row_err(e.to_string()))?;
            if rec.len() != 3 {
                return Err(row_err(format!("expected 3 fields, found {}", rec.len())));
            }
            let sample_id = rec[0].to_string();
            if sample_id.is_empty() {
                return Err(row_err("empty sample_id".into()));
            }
            let label = rec[1].parse::<Lineage>().map_err(row_err)?;
            let p = PathBuf::from(&rec[2]);
            let tube_path = if p.is_absolute() { p } else { base.join(p) };
            entries.push(ManifestEntry {
                sample_id,
                label,
                tube_path,
            });
        }
        Self::from_entries(entries).map_err(merr)
    }

    /// CSV text with tube paths written as given.
    pub fn to_csv(&self) -> String {
        let mut out = MANIFEST_HEADER.join(",");
        out.push('\n');
        for s in &self.samples {
            for t in &s.tubes {
                out.push_str(&format!("{},{},{}\n", s.sample_id, s.label, t.display()));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Result of loading a cohort: usable samples plus per-sample failures.
#[derive(Debug, Default)]
pub struct CohortLoad {
    pub samples: Vec<EventMatrix>,
    pub failures: Vec<(String, CohortError)>,
}

/// Parses and harmonises one sample's tubes and stacks them in order.
pub fn load_sample(
    sample_id: &str,
    label: Option<Lineage>,
    tubes: &[PathBuf],
    schema: &PanelSchema,
) -> Result<EventMatrix, CohortError> {
    let mut parts = Vec::with_capacity(tubes.len());
    for path in tubes {
        let bytes = std::fs::read(path).map_err(|source| CohortError::Io {
            path: path.clone(),
            source,
        })?;
        let tube = parse_fcs(&bytes)
            .and_then(|f| harmonize(&f, schema))
            .map_err(|source| CohortError::Tube {
                path: path.clone(),
                source,
            })?;
        if tube.n_events == 0 {
            warn!("{}: tube holds no events, skipped", path.display());
            continue;
        }
        parts.push((tube.data, tube.present));
    }
    if parts.is_empty() {
        return Err(CohortError::Invalid {
            sample_id: sample_id.to_string(),
            reason: "no events in any tube".into(),
        });
    }
    EventMatrix::from_tubes(sample_id, label, schema.len(), parts)
}

/// Loads every manifest sample; a failing tube marks its sample failed
/// without aborting the rest.
pub fn load_cohort(manifest: &CohortManifest, schema: &PanelSchema) -> CohortLoad {
    let mut load = CohortLoad::default();
    for s in &manifest.samples {
        match load_sample(&s.sample_id, Some(s.label), &s.tubes, schema) {
            Ok(m) => load.samples.push(m),
            Err(e) => {
                warn!("sample {} failed: {e}", s.sample_id);
                load.failures.push((s.sample_id.clone(), e));
            }
        }
    }
    load
}
