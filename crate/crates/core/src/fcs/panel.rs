//! The canonical 22-feature panel and mapping of tube parameters onto it.

use super::{FcsError, FcsFile};
use log::{info, warn};
use std::collections::HashMap;

/// Canonical features in model column order.
pub const PANEL: [&str; 22] = [
    "FSC-A", "FSC-W", "FSC-H", "SSC-A", "CD45", "CD71", "CD34", "CD19", "(i)CD79A", "(i)CD3", "(i)CD22", "CD10",
    "CD5", "CD7", "CD13", "CD117", "CD33", "SY41", "LZ", "(i)MPO", "CD64", "CD65",
];

/// Number of light-scatter features at the start of [`PANEL`].
pub const N_SCATTER: usize = 4;

/// Fluorochrome tokens stripped from the end of normalized marker names.
pub const FLUOROCHROME_SUFFIXES: &[&str] = &[
    "FITC", "AF488", "PE", "PECY5", "PECY55", "PECY7", "PECF594", "ECD", "PERCP", "PERCPCY55", "PC5", "PC55",
    "PC7", "APC", "APCCY7", "APCH7", "APCA700", "APCA750", "APCR700", "AF647", "A700", "AF700", "A750", "BV421",
    "BV510", "BV605", "BV786", "HORIZONV450", "V450", "V500", "KO", "KRO", "PB", "PO",
];

/// Extra normalized spellings per canonical marker, beyond the
/// normalized canonical name itself.
const ALIASES: &[(&str, &[&str])] = &[
    ("(i)CD79A", &["CD79A", "CYCD79A", "CD79ACY"]),
    ("(i)CD3", &["CD3", "CYCD3", "SCD3", "SMCD3", "CD3CY"]),
    ("(i)CD22", &["CD22", "CYCD22", "CD22CY"]),
    ("SY41", &["SYTO41"]),
    ("LZ", &["LYSOZYME", "LYZ", "CYLZ"]),
    ("(i)MPO", &["MPO", "CYMPO", "MPOCY"]),
];

fn alnum_upper(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

fn is_fluorochrome(token: &str) -> bool {
    FLUOROCHROME_SUFFIXES.contains(&token)
}

/// Upper-cased alphanumeric marker identity with fluorochromes removed.
///
/// Trailing whitespace-separated words that are fluorochromes are dropped
/// (`"CD34 PerCP-Cy5.5"` → `CD34`), never the first word. A fluorochrome
/// glued to the marker is stripped once when a digit precedes it
/// (`"CD45-KO"` → `CD45`), so names such as MPO keep their letters.
pub fn normalize_marker(raw: &str) -> String {
    let mut words: Vec<&str> = raw.split_whitespace().collect();
    while words.len() > 1 && is_fluorochrome(&alnum_upper(words[words.len() - 1])) {
        words.pop();
    }
    let s = alnum_upper(&words.concat());
    let glued = FLUOROCHROME_SUFFIXES
        .iter()
        .filter(|suf| {
            s.len() > suf.len() && s.ends_with(*suf) && s.as_bytes()[s.len() - suf.len() - 1].is_ascii_digit()
        })
        .max_by_key(|suf| suf.len());
    match glued {
        Some(suf) => s[..s.len() - suf.len()].to_string(),
        None => s,
    }
}

#[derive(Debug, Clone)]
pub struct PanelSchema {
    names: Vec<String>,
    aliases: HashMap<String, usize>,
    n_scatter: usize,
}

impl PanelSchema {
    pub fn standard() -> Self {
        let names: Vec<String> = PANEL.iter().map(|s| s.to_string()).collect();
        let mut aliases = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            aliases.insert(normalize_marker(name), i);
        }
        for (canon, extra) in ALIASES {
            let i = PANEL.iter().position(|p| p == canon).expect("alias target in panel");
            for a in *extra {
                aliases.insert((*a).to_string(), i);
            }
        }
        Self {
            names,
            aliases,
            n_scatter: N_SCATTER,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.names.iter().position(|n| n == canonical)
    }

    /// Canonical column for an already-normalized token.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.aliases.get(token).copied()
    }

    fn is_scatter(&self, col: usize) -> bool {
        col < self.n_scatter
    }

    /// Column for one file parameter: scatter channels by `$PnN`, markers
    /// by `$PnS` when present, else `$PnN`.
    pub fn resolve(&self, short_name: &str, stain: Option<&str>) -> Option<usize> {
        if let Some(c) = self.lookup(&normalize_marker(short_name)).filter(|&c| self.is_scatter(c)) {
            return Some(c);
        }
        let identity = stain.filter(|s| !s.trim().is_empty()).unwrap_or(short_name);
        self.lookup(&normalize_marker(identity)).filter(|&c| !self.is_scatter(c))
    }
}

/// One tube projected onto the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizedTube {
    pub n_events: usize,
    /// Row-major `n_events × panel width`.
    pub data: Vec<f32>,
    pub present: Vec<bool>,
    /// Source parameter index for each panel column.
    pub source: Vec<Option<usize>>,
}

/// Maps each panel column from the first matching file parameter and
/// zero-fills the rest.
pub fn harmonize(file: &FcsFile, schema: &PanelSchema) -> Result<HarmonizedTube, FcsError> {
    let width = schema.len();
    let mut source: Vec<Option<usize>> = vec![None; width];
    for (i, p) in file.parameters.iter().enumerate() {
        match schema.resolve(&p.short_name, p.stain.as_deref()) {
            Some(col) => match source[col] {
                None => source[col] = Some(i),
                Some(first) => warn!(
                    "parameters {} ({}) and {} ({}) both map to {}; keeping the first",
                    first + 1,
                    label_of(file, first),
                    i + 1,
                    label_of(file, i),
                    schema.names()[col]
                ),
            },
            None => info!("parameter {} ({}) is not in the panel, dropped", i + 1, label_of(file, i)),
        }
    }
    if source.iter().all(Option::is_none) {
        return Err(FcsError::EmptyPanel);
    }
    let n = file.n_events();
    let mut data = vec![0f32; n * width];
    for e in 0..n {
        let ev = file.event(e);
        let row = &mut data[e * width..(e + 1) * width];
        for (col, src) in source.iter().enumerate() {
            if let Some(i) = src {
                row[col] = ev[*i] as f32;
            }
        }
    }
    let present = source.iter().map(Option::is_some).collect();
    Ok(HarmonizedTube {
        n_events: n,
        data,
        present,
        source,
    })
}

fn label_of(file: &FcsFile, i: usize) -> String {
    let p = &file.parameters[i];
    match &p.stain {
        Some(s) => format!("{} / {}", p.short_name, s),
        None => p.short_name.clone(),
    }
}
