//! Seeded synthetic cohorts with lineage-specific blast populations.
//!
//! Each sample mixes one malignant "blast" population, whose marker
//! signature depends on the class, with five shared normal populations
//! (T and B lymphocytes, granulocytes, monocytes, erythroid precursors).
//! Every population is an axis-aligned Gaussian on a linear scale of
//! roughly 0 to 5, clipped at zero. Each tube measures scatter, CD45 and
//! a tube-specific marker subset; the columns a tube leaves out are
//! zero-filled and masked absent, exactly as harmonisation would leave
//! them. All numeric levels are arbitrary defaults.

use crate::fcs::cohort::{CohortError, CohortManifest, EventMatrix, Lineage, ManifestSample};
use crate::fcs::panel::{N_SCATTER, PANEL};
use crate::fcs::{write_fcs, ByteOrder, DataType, FcsError, FcsFile, FcsParameter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Fcs(#[from] FcsError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

const CD45: usize = N_SCATTER;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub tubes_per_sample: usize,
    pub events_per_tube: usize,
    /// Blast fraction of each sample is uniform on this closed range.
    pub blast_fraction: (f64, f64),
    /// Per-event standard deviation around a population mean.
    pub noise_scale: f64,
    /// Per-sample standard deviation of every population mean.
    pub sample_jitter: f64,
    /// Markers measured by each tube besides scatter and CD45, by canonical
    /// name. Tube `k` uses entry `k % len`.
    pub tube_panels: Vec<Vec<String>>,
    pub seed: u64,
    /// Storage type for written files. Integer storage also quantises the
    /// in-memory values so both agree exactly.
    pub datatype: DataType,
    pub byte_order: ByteOrder,
    /// Multiplier applied before rounding for integer storage.
    pub int_scale: f64,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 60,
            tubes_per_sample: 3,
            events_per_tube: 2000,
            blast_fraction: (0.2, 0.9),
            noise_scale: 0.35,
            sample_jitter: 0.2,
            tube_panels: vec![
                names(&["CD19", "CD10", "CD34", "(i)CD79A", "(i)CD22", "CD71"]),
                names(&["(i)CD3", "CD5", "CD7", "CD34", "CD10"]),
                names(&["CD13", "CD33", "CD117", "(i)MPO", "LZ", "CD64", "CD65", "SY41", "CD34"]),
            ],
            seed: 0,
            datatype: DataType::Float,
            byte_order: ByteOrder::Little,
            int_scale: 1000.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SynthError::Config(m));
        let (lo, hi) = self.blast_fraction;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return fail(format!("blast fraction range [{lo}, {hi}] must lie inside (0, 1)"));
        }
        if self.events_per_tube < 10 {
            return fail(format!("events_per_tube {} is below 10", self.events_per_tube));
        }
        if self.n_per_class == 0 || self.tubes_per_sample == 0 {
            return fail("n_per_class and tubes_per_sample must be positive".into());
        }
        if !(self.noise_scale >= 0.0 && self.sample_jitter >= 0.0) {
            return fail("noise_scale and sample_jitter must be non-negative".into());
        }
        if self.tube_panels.is_empty() {
            return fail("at least one tube panel is required".into());
        }
        for p in &self.tube_panels {
            for name in p {
                if !PANEL.contains(&name.as_str()) {
                    return fail(format!("tube panel marker {name:?} is not a panel feature"));
                }
            }
        }
        if self.datatype == DataType::Integer && !(self.int_scale > 0.0) {
            return fail("int_scale must be positive".into());
        }
        Ok(())
    }

    /// Present-feature mask of tube `k`: scatter, CD45 and its markers.
    pub fn tube_mask(&self, k: usize) -> Vec<bool> {
        let mut mask = vec![false; PANEL.len()];
        mask[..=CD45].iter_mut().for_each(|m| *m = true);
        for name in &self.tube_panels[k % self.tube_panels.len()] {
            if let Some(i) = PANEL.iter().position(|p| p == name) {
                mask[i] = true;
            }
        }
        mask
    }
}

fn col(name: &str) -> usize {
    PANEL.iter().position(|p| *p == name).expect("panel feature")
}

/// Mean vector: a dim background with the listed features overridden.
fn population(levels: &[(&str, f64)]) -> [f64; 22] {
    let mut mean = [0.2; 22];
    mean[col("FSC-A")] = 2.0;
    mean[col("FSC-W")] = 1.5;
    mean[col("FSC-H")] = 1.8;
    mean[col("SSC-A")] = 1.0;
    for &(name, v) in levels {
        mean[col(name)] = v;
    }
    mean
}

/// Normal populations and their baseline mixture weights.
fn normal_populations() -> Vec<(f64, [f64; 22])> {
    vec![
        (
            0.30,
            population(&[("FSC-A", 1.5), ("FSC-H", 1.4), ("SSC-A", 0.5), ("CD45", 4.0), ("(i)CD3", 3.0), ("CD5", 3.0), ("CD7", 3.0)]),
        ),
        (
            0.12,
            population(&[("FSC-A", 1.5), ("FSC-H", 1.4), ("SSC-A", 0.5), ("CD45", 3.8), ("CD19", 3.0), ("(i)CD79A", 2.5), ("(i)CD22", 2.5)]),
        ),
        (
            0.35,
            population(&[
                ("FSC-A", 3.0),
                ("FSC-H", 2.8),
                ("SSC-A", 4.0),
                ("CD45", 2.5),
                ("CD13", 3.0),
                ("CD33", 1.5),
                ("(i)MPO", 3.5),
                ("LZ", 3.0),
                ("CD65", 3.0),
                ("CD64", 0.8),
                ("SY41", 1.0),
            ]),
        ),
        (
            0.13,
            population(&[
                ("FSC-A", 2.8),
                ("FSC-H", 2.6),
                ("SSC-A", 2.2),
                ("CD45", 3.5),
                ("CD33", 3.5),
                ("CD64", 3.0),
                ("CD13", 2.5),
                ("LZ", 2.5),
                ("CD65", 1.0),
            ]),
        ),
        (0.10, population(&[("FSC-A", 1.8), ("SSC-A", 0.6), ("CD45", 0.3), ("CD71", 4.0)])),
    ]
}

/// Blast mean for a lineage: dim CD45, CD34 and nucleic-acid stain, plus
/// the lineage markers.
pub fn blast_signature(lineage: Lineage) -> [f64; 22] {
    let mut levels = vec![("CD45", 1.5), ("CD34", 3.0), ("SY41", 2.5), ("FSC-W", 1.6), ("FSC-H", 1.9)];
    match lineage {
        Lineage::BAll => levels.extend([("CD19", 3.5), ("CD10", 3.5), ("(i)CD79A", 3.0), ("(i)CD22", 3.0), ("CD71", 1.0)]),
        Lineage::TAll => levels.extend([("(i)CD3", 3.5), ("CD5", 2.5), ("CD7", 3.5), ("CD34", 1.5), ("CD10", 0.6)]),
        Lineage::Aml => levels.extend([("CD13", 3.0), ("CD33", 3.5), ("CD117", 3.5), ("(i)MPO", 2.0), ("SSC-A", 1.8), ("CD64", 0.8)]),
    }
    population(&levels)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_id(lineage: Lineage, i: usize) -> String {
    let code: String = lineage.as_str().chars().filter(char::is_ascii_alphanumeric).collect();
    format!("{}-{:03}", code.to_ascii_lowercase(), i + 1)
}

/// One sample. `stream` selects an independent random stream so samples
/// can be generated in any order.
pub fn generate_sample(cfg: &SynthConfig, lineage: Lineage, index: usize, stream: u64) -> Result<EventMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let (lo, hi) = cfg.blast_fraction;
    let blast_fraction = if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut pops: Vec<(f64, [f64; 22])> = normal_populations()
        .into_iter()
        .map(|(w, mean)| (w * rng.random_range(0.5..1.5), mean))
        .collect();
    let normal_total: f64 = pops.iter().map(|p| p.0).sum();
    for p in &mut pops {
        p.0 *= (1.0 - blast_fraction) / normal_total;
    }
    pops.push((blast_fraction, blast_signature(lineage)));
    for (_, mean) in &mut pops {
        for m in mean.iter_mut() {
            *m += cfg.sample_jitter * gauss(&mut rng);
        }
    }

    let width = PANEL.len();
    let mut tubes = Vec::with_capacity(cfg.tubes_per_sample);
    for k in 0..cfg.tubes_per_sample {
        let mask = cfg.tube_mask(k);
        let mut data = vec![0f32; cfg.events_per_tube * width];
        for row in data.chunks_exact_mut(width) {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = pops.len() - 1;
            for (i, p) in pops.iter().enumerate() {
                acc += p.0;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let mean = &pops[pick].1;
            for j in 0..width {
                // draw for every column so the stream does not depend on the mask
                let v = (mean[j] + cfg.noise_scale * gauss(&mut rng)).max(0.0);
                if mask[j] {
                    row[j] = match cfg.datatype {
                        DataType::Integer => (v * cfg.int_scale).round() as f32,
                        _ => v as f32,
                    };
                }
            }
        }
        tubes.push((data, mask));
    }
    Ok(EventMatrix::from_tubes(sample_id(lineage, index), Some(lineage), width, tubes)?)
}

/// `n_per_class` samples of each lineage, classes in index order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<EventMatrix>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(3 * cfg.n_per_class);
    for lineage in Lineage::ALL {
        for i in 0..cfg.n_per_class {
            let stream = (lineage.index() * cfg.n_per_class + i) as u64;
            out.push(generate_sample(cfg, lineage, i, stream)?);
        }
    }
    Ok(out)
}

/// Laboratory-style stain label for a canonical marker.
fn stain_label(name: &str, k: usize) -> String {
    const FLUORS: [&str; 8] = ["FITC", "PE", "PerCP-Cy5.5", "PE-Cy7", "APC", "APC-H7", "BV421", "KO"];
    let marker = match name {
        "(i)CD79A" => "cyCD79a".to_string(),
        "(i)CD3" => "cyCD3".to_string(),
        "(i)CD22" => "cyCD22".to_string(),
        "(i)MPO" => "cyMPO".to_string(),
        "LZ" => "Lysozyme".to_string(),
        "SY41" => "SYTO41".to_string(),
        other => other.to_string(),
    };
    format!("{marker} {}", FLUORS[k % FLUORS.len()])
}

/// One tube of `sample` as an FCS file: scatter under its own names,
/// markers on `FLn-A` detectors with a stain label, and a trailing `Time`
/// channel that harmonisation drops.
pub fn tube_file(sample: &EventMatrix, t: usize, datatype: DataType, byte_order: ByteOrder) -> Result<FcsFile> {
    let mask = &sample.present_mask()[t];
    let cols: Vec<usize> = (0..PANEL.len()).filter(|&j| mask[j]).collect();
    let bits = if datatype == DataType::Double { 64 } else { 32 };
    let mut params = Vec::with_capacity(cols.len() + 1);
    for (k, &j) in cols.iter().enumerate() {
        params.push(if j < N_SCATTER {
            FcsParameter::new(PANEL[j], None, bits)
        } else {
            FcsParameter::new(format!("FL{}-A", k + 1 - N_SCATTER), Some(&stain_label(PANEL[j], k)), bits)
        });
    }
    params.push(FcsParameter::new("Time", None, bits));
    let rows = sample.tube_rows(t);
    let mut events = Vec::with_capacity(rows.len() * params.len());
    for (i, r) in rows.enumerate() {
        let row = sample.row(r);
        events.extend(cols.iter().map(|&j| row[j] as f64));
        events.push(i as f64);
    }
    let mut file = FcsFile::new(params, events, datatype, byte_order)?;
    file.text.insert("$SRC".into(), sample.sample_id.clone());
    file.text.insert("$CYT".into(), "synthetic".into());
    Ok(file)
}

/// Writes every tube as FCS 3.1 plus `manifest.csv` into `dir`; returns
/// the manifest path. Tube paths in the manifest are relative to `dir`.
pub fn write_cohort(cohort: &[EventMatrix], cfg: &SynthConfig, dir: &Path) -> Result<PathBuf> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = CohortManifest::default();
    for s in cohort {
        let label = s
            .label
            .ok_or_else(|| SynthError::Config(format!("sample {} has no label", s.sample_id)))?;
        let mut tubes = Vec::with_capacity(s.n_tubes());
        for t in 0..s.n_tubes() {
            let name = format!("{}_t{}.fcs", s.sample_id, t + 1);
            let bytes = write_fcs(&tube_file(s, t, cfg.datatype, cfg.byte_order)?)?;
            let path = dir.join(&name);
            std::fs::write(&path, bytes).map_err(io(&path))?;
            tubes.push(PathBuf::from(name));
        }
        manifest.samples.push(ManifestSample {
            sample_id: s.sample_id.clone(),
            label,
            tubes,
        });
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest.to_csv()).map_err(io(&path))?;
    Ok(path)
}

/// Accuracy of classifying each test sample by the nearest class centroid
/// of training-sample mean vectors (Euclidean).
pub fn nearest_centroid_accuracy(cohort: &[EventMatrix], train: &[usize], test: &[usize]) -> f64 {
    let width = PANEL.len();
    let mut centroids = vec![vec![0.0; width]; 3];
    let mut counts = [0usize; 3];
    for &i in train {
        let c = cohort[i].label.expect("labelled").index();
        for (a, v) in centroids[c].iter_mut().zip(cohort[i].mean_vector()) {
            *a += v;
        }
        counts[c] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let hits = test
        .iter()
        .filter(|&&i| {
            let m = cohort[i].mean_vector();
            let dist = |c: &Vec<f64>| c.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            Some(best) == cohort[i].label.map(Lineage::index)
        })
        .count();
    hits as f64 / test.len() as f64
}
