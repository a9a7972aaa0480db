//! FCS 3.0/3.1 list-mode files, panel harmonisation and cohort loading.
//!
//! Only the HEADER, TEXT and DATA segments are read. DATA must be
//! list-mode with `$DATATYPE` F, D or I and linear amplification.

pub mod cohort;
pub mod panel;

use indexmap::IndexMap;
use thiserror::Error;

const HEADER_LEN: usize = 58;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FcsError {
    #[error("byte {offset}: file too short ({len} bytes, need at least 58)")]
    TooShort { offset: usize, len: usize },
    #[error("byte {offset}: unsupported FCS version {version:?}")]
    UnsupportedVersion { offset: usize, version: String },
    #[error("byte {offset}: malformed header: {reason}")]
    Header { offset: usize, reason: String },
    #[error("byte {offset}: malformed TEXT segment: {reason}")]
    Text { offset: usize, reason: String },
    #[error("byte {offset}: missing required keyword {key}")]
    MissingKeyword { offset: usize, key: String },
    #[error("byte {offset}: invalid value {value:?} for {key}")]
    InvalidKeyword {
        offset: usize,
        key: String,
        value: String,
    },
    #[error("byte {offset}: unsupported $DATATYPE {value:?}")]
    UnsupportedDatatype { offset: usize, value: String },
    #[error("byte {offset}: unsupported $BYTEORD {value:?}")]
    UnsupportedByteOrder { offset: usize, value: String },
    #[error("byte {offset}: unsupported $MODE {value:?}")]
    UnsupportedMode { offset: usize, value: String },
    #[error("byte {offset}: parameter {index} has unsupported amplification $P{index}E {value:?}")]
    UnsupportedAmplification {
        offset: usize,
        index: usize,
        value: String,
    },
    #[error("byte {offset}: corrupt DATA segment: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("no parameter matched the panel")]
    EmptyPanel,
    #[error("cannot encode: {0}")]
    Encode(String),
}

impl FcsError {
    /// Byte offset into the file where the problem was detected.
    pub fn offset(&self) -> Option<usize> {
        use FcsError::*;
        match self {
            TooShort { offset, .. }
            | UnsupportedVersion { offset, .. }
            | Header { offset, .. }
            | Text { offset, .. }
            | MissingKeyword { offset, .. }
            | InvalidKeyword { offset, .. }
            | UnsupportedDatatype { offset, .. }
            | UnsupportedByteOrder { offset, .. }
            | UnsupportedMode { offset, .. }
            | UnsupportedAmplification { offset, .. }
            | Corrupt { offset, .. } => Some(*offset),
            EmptyPanel | Encode(_) => None,
        }
    }
}

pub type Result<T, E = FcsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcsVersion {
    V3_0,
    V3_1,
}

impl FcsVersion {
    pub fn tag(self) -> &'static str {
        match self {
            FcsVersion::V3_0 => "FCS3.0",
            FcsVersion::V3_1 => "FCS3.1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    /// 32-bit IEEE float.
    Float,
    /// 64-bit IEEE float.
    Double,
    /// Unsigned integer of `$PnB` bits.
    Integer,
}

impl DataType {
    pub fn code(self) -> &'static str {
        match self {
            DataType::Float => "F",
            DataType::Double => "D",
            DataType::Integer => "I",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn keyword(self, bytes: usize) -> String {
        let seq: Vec<String> = match self {
            ByteOrder::Little => (1..=bytes).map(|i| i.to_string()).collect(),
            ByteOrder::Big => (1..=bytes).rev().map(|i| i.to_string()).collect(),
        };
        seq.join(",")
    }

    fn parse(value: &str) -> Option<Self> {
        let seq: Vec<usize> = value
            .split(',')
            .map(|s| s.trim().parse().ok())
            .collect::<Option<_>>()?;
        let n = seq.len();
        if n == 0 {
            None
        } else if seq.iter().enumerate().all(|(i, &b)| b == i + 1) {
            Some(ByteOrder::Little)
        } else if seq.iter().enumerate().all(|(i, &b)| b == n - i) {
            Some(ByteOrder::Big)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcsParameter {
    /// `$PnN`
    pub short_name: String,
    /// `$PnS`
    pub stain: Option<String>,
    /// `$PnB`
    pub bits: u32,
    /// `$PnE` decades and offset; `(0, 0)` is linear.
    pub amplification: (f64, f64),
    /// `$PnR`
    pub range: Option<f64>,
}

impl FcsParameter {
    pub fn new(short_name: impl Into<String>, stain: Option<&str>, bits: u32) -> Self {
        Self {
            short_name: short_name.into(),
            stain: stain.map(str::to_string),
            bits,
            amplification: (0.0, 0.0),
            range: None,
        }
    }
}

/// A parsed list-mode FCS file.
#[derive(Debug, Clone, PartialEq)]
pub struct FcsFile {
    pub version: FcsVersion,
    /// TEXT keywords in file order, keys upper-cased.
    pub text: IndexMap<String, String>,
    pub datatype: DataType,
    pub byte_order: ByteOrder,
    pub parameters: Vec<FcsParameter>,
    n_events: usize,
    /// Row-major `n_events × n_params`.
    events: Vec<f64>,
}

impl FcsFile {
    /// In-memory file for writing; TEXT holds only `extra_text`.
    pub fn new(
        parameters: Vec<FcsParameter>,
        events: Vec<f64>,
        datatype: DataType,
        byte_order: ByteOrder,
    ) -> Result<Self> {
        let p = parameters.len();
        if p == 0 {
            return Err(FcsError::Encode("no parameters".into()));
        }
        if events.len() % p != 0 {
            return Err(FcsError::Encode(format!(
                "{} values do not fill rows of {p} parameters",
                events.len()
            )));
        }
        for (i, par) in parameters.iter().enumerate() {
            check_bits(datatype, par.bits).map_err(|_| {
                FcsError::Encode(format!("parameter {} has {} bits for $DATATYPE {}", i + 1, par.bits, datatype.code()))
            })?;
        }
        Ok(Self {
            version: FcsVersion::V3_1,
            text: IndexMap::new(),
            datatype,
            byte_order,
            n_events: events.len() / p,
            parameters,
            events,
        })
    }

    pub fn n_params(&self) -> usize {
        self.parameters.len()
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn event(&self, i: usize) -> &[f64] {
        let p = self.n_params();
        &self.events[i * p..(i + 1) * p]
    }

    /// Case-insensitive TEXT lookup.
    pub fn keyword(&self, key: &str) -> Option<&str> {
        self.text.get(&key.to_ascii_uppercase()).map(String::as_str)
    }
}

fn check_bits(datatype: DataType, bits: u32) -> std::result::Result<(), ()> {
    let ok = match datatype {
        DataType::Float => bits == 32,
        DataType::Double => bits == 64,
        DataType::Integer => matches!(bits, 8 | 16 | 32 | 64),
    };
    ok.then_some(()).ok_or(())
}

fn parse_header_offset(bytes: &[u8], start: usize) -> Result<usize> {
    let field = &bytes[start..start + 8];
    let s = std::str::from_utf8(field).map_err(|_| FcsError::Header {
        offset: start,
        reason: "non-ASCII offset field".into(),
    })?;
    let s = s.trim();
    if s.is_empty() {
        return Ok(0);
    }
    s.parse().map_err(|_| FcsError::Header {
        offset: start,
        reason: format!("offset field {s:?} is not an integer"),
    })
}

/// Splits a TEXT segment on its leading delimiter; a doubled delimiter is
/// a literal delimiter character.
fn parse_text(segment: &[u8], base: usize) -> Result<IndexMap<String, String>> {
    let delim = *segment.first().ok_or(FcsError::Text {
        offset: base,
        reason: "empty segment".into(),
    })?;
    let mut tokens: Vec<Vec<u8>> = Vec::new();
    let mut cur = Vec::new();
    let mut i = 1;
    while i < segment.len() {
        let b = segment[i];
        if b == delim {
            if segment.get(i + 1) == Some(&delim) {
                cur.push(delim);
                i += 2;
                continue;
            }
            tokens.push(std::mem::take(&mut cur));
        } else {
            cur.push(b);
        }
        i += 1;
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    if tokens.len() % 2 != 0 {
        return Err(FcsError::Text {
            offset: base,
            reason: format!("odd number of tokens ({})", tokens.len()),
        });
    }
    let mut map = IndexMap::with_capacity(tokens.len() / 2);
    for pair in tokens.chunks_exact(2) {
        let key = String::from_utf8_lossy(&pair[0]).trim().to_ascii_uppercase();
        let value = String::from_utf8_lossy(&pair[1]).trim().to_string();
        if key.is_empty() {
            return Err(FcsError::Text {
                offset: base,
                reason: "empty keyword".into(),
            });
        }
        map.insert(key, value);
    }
    Ok(map)
}

struct Keywords<'a> {
    text: &'a IndexMap<String, String>,
    offset: usize,
}

impl<'a> Keywords<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.text.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&'a str> {
        self.get(key).ok_or_else(|| FcsError::MissingKeyword {
            offset: self.offset,
            key: key.to_string(),
        })
    }

    fn number<N: std::str::FromStr>(&self, key: &str, value: &str) -> Result<N> {
        value.trim().parse().map_err(|_| FcsError::InvalidKeyword {
            offset: self.offset,
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    fn required_number<N: std::str::FromStr>(&self, key: &str) -> Result<N> {
        let v = self.required(key)?;
        self.number(key, v)
    }
}

/// Decodes an FCS 3.0 or 3.1 byte stream.
pub fn parse_fcs(bytes: &[u8]) -> Result<FcsFile> {
    if bytes.len() < HEADER_LEN {
        return Err(FcsError::TooShort {
            offset: 0,
            len: bytes.len(),
        });
    }
    let version = match &bytes[0..6] {
        b"FCS3.0" => FcsVersion::V3_0,
        b"FCS3.1" => FcsVersion::V3_1,
        other => {
            return Err(FcsError::UnsupportedVersion {
                offset: 0,
                version: String::from_utf8_lossy(other).into_owned(),
            })
        }
    };
    let text_start = parse_header_offset(bytes, 10)?;
    let text_end = parse_header_offset(bytes, 18)?;
    let mut data_start = parse_header_offset(bytes, 26)?;
    let mut data_end = parse_header_offset(bytes, 34)?;
    if text_start < HEADER_LEN || text_end <= text_start || text_end >= bytes.len() {
        return Err(FcsError::Header {
            offset: 10,
            reason: format!(
                "TEXT segment {text_start}..={text_end} invalid for a {}-byte file",
                bytes.len()
            ),
        });
    }
    let text = parse_text(&bytes[text_start..=text_end], text_start)?;
    let kw = Keywords {
        text: &text,
        offset: text_start,
    };

    if data_start == 0 && data_end == 0 {
        if let (Some(b), Some(e)) = (kw.get("$BEGINDATA"), kw.get("$ENDDATA")) {
            data_start = kw.number("$BEGINDATA", b)?;
            data_end = kw.number("$ENDDATA", e)?;
        }
    }

    if let Some(mode) = kw.get("$MODE") {
        if !mode.eq_ignore_ascii_case("L") {
            return Err(FcsError::UnsupportedMode {
                offset: text_start,
                value: mode.to_string(),
            });
        }
    }
    let dt = kw.required("$DATATYPE")?;
    let datatype = match dt.to_ascii_uppercase().as_str() {
        "F" => DataType::Float,
        "D" => DataType::Double,
        "I" => DataType::Integer,
        _ => {
            return Err(FcsError::UnsupportedDatatype {
                offset: text_start,
                value: dt.to_string(),
            })
        }
    };
    let bo = kw.required("$BYTEORD")?;
    let byte_order = ByteOrder::parse(bo).ok_or_else(|| FcsError::UnsupportedByteOrder {
        offset: text_start,
        value: bo.to_string(),
    })?;
    let n_params: usize = kw.required_number("$PAR")?;
    let n_events: usize = kw.required_number("$TOT")?;

    let mut parameters = Vec::with_capacity(n_params);
    for i in 1..=n_params {
        let short_name = kw.required(&format!("$P{i}N"))?.to_string();
        let bkey = format!("$P{i}B");
        let bits: u32 = kw.required_number(&bkey)?;
        if check_bits(datatype, bits).is_err() {
            return Err(FcsError::InvalidKeyword {
                offset: text_start,
                key: bkey,
                value: bits.to_string(),
            });
        }
        let ekey = format!("$P{i}E");
        let amplification = match kw.get(&ekey) {
            None => (0.0, 0.0),
            Some(v) => {
                let parts: Option<Vec<f64>> = v.split(',').map(|s| s.trim().parse().ok()).collect();
                match parts.as_deref() {
                    Some(&[a, b]) if a == 0.0 && b == 0.0 => (a, b),
                    _ => {
                        return Err(FcsError::UnsupportedAmplification {
                            offset: text_start,
                            index: i,
                            value: v.to_string(),
                        })
                    }
                }
            }
        };
        let stain = kw
            .get(&format!("$P{i}S"))
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string);
        let rkey = format!("$P{i}R");
        let range = kw.get(&rkey).map(|v| kw.number::<f64>(&rkey, v)).transpose()?;
        parameters.push(FcsParameter {
            short_name,
            stain,
            bits,
            amplification,
            range,
        });
    }

    let row_bytes: usize = parameters.iter().map(|p| p.bits as usize / 8).sum();
    let expected = n_events * row_bytes;
    let events = if expected == 0 {
        Vec::new()
    } else {
        if data_start < HEADER_LEN || data_end < data_start {
            return Err(FcsError::Corrupt {
                offset: 26,
                reason: format!("DATA segment {data_start}..={data_end} is invalid"),
            });
        }
        if data_end >= bytes.len() {
            return Err(FcsError::Corrupt {
                offset: bytes.len(),
                reason: format!("DATA segment ends at byte {data_end} beyond end of file"),
            });
        }
        let actual = data_end - data_start + 1;
        if actual != expected {
            return Err(FcsError::Corrupt {
                offset: data_start,
                reason: format!(
                    "$TOT={n_events} with {row_bytes}-byte rows needs {expected} bytes, segment holds {actual}"
                ),
            });
        }
        decode_data(&bytes[data_start..=data_end], &parameters, datatype, byte_order, n_events)
    };

    Ok(FcsFile {
        version,
        text,
        datatype,
        byte_order,
        parameters,
        n_events,
        events,
    })
}

fn decode_data(
    data: &[u8],
    parameters: &[FcsParameter],
    datatype: DataType,
    order: ByteOrder,
    n_events: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_events * parameters.len());
    let mut pos = 0;
    for _ in 0..n_events {
        for p in parameters {
            let width = p.bits as usize / 8;
            let raw = &data[pos..pos + width];
            pos += width;
            let mut buf = [0u8; 8];
            buf[..width].copy_from_slice(raw);
            if order == ByteOrder::Big {
                buf[..width].reverse();
            }
            let v = match datatype {
                DataType::Float => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
                DataType::Double => f64::from_le_bytes(buf),
                DataType::Integer => u64::from_le_bytes(buf) as f64,
            };
            out.push(v);
        }
    }
    out
}

fn escape(s: &str, delim: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.len());
    for &b in s.as_bytes() {
        out.push(b);
        if b == delim {
            out.push(delim);
        }
    }
    out
}

fn is_layout_keyword(key: &str) -> bool {
    const FIXED: [&str; 12] = [
        "$BEGINANALYSIS",
        "$ENDANALYSIS",
        "$BEGINSTEXT",
        "$ENDSTEXT",
        "$BEGINDATA",
        "$ENDDATA",
        "$BYTEORD",
        "$DATATYPE",
        "$MODE",
        "$NEXTDATA",
        "$PAR",
        "$TOT",
    ];
    if FIXED.contains(&key) {
        return true;
    }
    // $PnX for the per-parameter keywords the writer regenerates
    let Some(rest) = key.strip_prefix("$P") else { return false };
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    digits > 0 && matches!(&rest[digits..], "N" | "S" | "B" | "E" | "R")
}

/// Encodes `file` as FCS 3.1 with its datatype and byte order.
///
/// TEXT keywords other than the layout ones are carried over in order.
pub fn write_fcs(file: &FcsFile) -> Result<Vec<u8>> {
    let data = encode_data(file)?;

    let mut fixed: Vec<(String, String)> = vec![
        ("$BEGINANALYSIS".into(), "0".into()),
        ("$ENDANALYSIS".into(), "0".into()),
        ("$BEGINSTEXT".into(), "0".into()),
        ("$ENDSTEXT".into(), "0".into()),
        ("$BYTEORD".into(), file.byte_order.keyword(4)),
        ("$DATATYPE".into(), file.datatype.code().into()),
        ("$MODE".into(), "L".into()),
        ("$NEXTDATA".into(), "0".into()),
        ("$PAR".into(), file.n_params().to_string()),
        ("$TOT".into(), file.n_events().to_string()),
    ];
    for (i, p) in file.parameters.iter().enumerate() {
        let n = i + 1;
        fixed.push((format!("$P{n}N"), p.short_name.clone()));
        if let Some(s) = p.stain.as_ref().filter(|s| !s.trim().is_empty()) {
            fixed.push((format!("$P{n}S"), s.clone()));
        }
        fixed.push((format!("$P{n}B"), p.bits.to_string()));
        fixed.push((format!("$P{n}E"), "0,0".into()));
        let range = p.range.unwrap_or(match file.datatype {
            DataType::Integer => 2f64.powi(p.bits as i32),
            _ => 262144.0,
        });
        fixed.push((format!("$P{n}R"), format_number(range)));
    }
    for (k, v) in &file.text {
        if !is_layout_keyword(k) && !v.trim().is_empty() {
            fixed.push((k.clone(), v.clone()));
        }
    }

    // a value opening with the delimiter would read as an escape, so pick
    // one that no token starts with
    let starts = |d: u8| fixed.iter().any(|(k, v)| k.as_bytes().first() == Some(&d) || v.as_bytes().first() == Some(&d));
    let delim = *b"/|!^~\\"
        .iter()
        .find(|&&d| !starts(d))
        .ok_or_else(|| FcsError::Encode("every candidate delimiter opens some keyword value".into()))?;
    let mut body = Vec::new();
    for (k, v) in &fixed {
        body.extend(escape(k, delim));
        body.push(delim);
        body.extend(escape(v, delim));
        body.push(delim);
    }

    // $BEGINDATA/$ENDDATA live inside TEXT, so their digit counts feed back
    // into the TEXT length; iterate to a fixed point.
    let text_start = HEADER_LEN;
    let mut guess = 0usize;
    let (text, data_start) = loop {
        let ds = text_start + guess;
        let de = if data.is_empty() { ds } else { ds + data.len() - 1 };
        let mut text = vec![delim];
        text.extend(format!("$BEGINDATA{0}{ds}{0}$ENDDATA{0}{de}{0}", delim as char).bytes());
        text.extend(&body);
        if text.len() == guess {
            break (text, ds);
        }
        guess = text.len();
    };
    let text_end = text_start + text.len() - 1;
    let data_end = if data.is_empty() { data_start } else { data_start + data.len() - 1 };

    let field = |v: usize| -> String {
        if v > 99_999_999 {
            format!("{:>8}", 0)
        } else {
            format!("{v:>8}")
        }
    };
    let mut out = Vec::with_capacity(HEADER_LEN + text.len() + data.len());
    out.extend(FcsVersion::V3_1.tag().bytes());
    out.extend(b"    ");
    out.extend(field(text_start).bytes());
    out.extend(field(text_end).bytes());
    out.extend(field(data_start).bytes());
    out.extend(field(data_end).bytes());
    out.extend(field(0).bytes());
    out.extend(field(0).bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend(text);
    out.extend(data);
    Ok(out)
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn encode_data(file: &FcsFile) -> Result<Vec<u8>> {
    let row_bytes: usize = file.parameters.iter().map(|p| p.bits as usize / 8).sum();
    let mut out = Vec::with_capacity(row_bytes * file.n_events());
    for e in 0..file.n_events() {
        for (j, (p, &v)) in file.parameters.iter().zip(file.event(e)).enumerate() {
            let width = p.bits as usize / 8;
            let mut buf = match file.datatype {
                DataType::Float => {
                    let f = v as f32;
                    if f as f64 != v && v.is_finite() {
                        return Err(FcsError::Encode(format!(
                            "event {e} parameter {}: {v} is not representable as f32",
                            j + 1
                        )));
                    }
                    let mut b = [0u8; 8];
                    b[..4].copy_from_slice(&f.to_le_bytes());
                    b
                }
                DataType::Double => v.to_le_bytes(),
                DataType::Integer => {
                    let max = if p.bits == 64 { u64::MAX as f64 } else { (1u64 << p.bits) as f64 - 1.0 };
                    if v.fract() != 0.0 || v < 0.0 || v > max {
                        return Err(FcsError::Encode(format!(
                            "event {e} parameter {}: {v} is not a {}-bit unsigned integer",
                            j + 1,
                            p.bits
                        )));
                    }
                    (v as u64).to_le_bytes()
                }
            };
            if file.byte_order == ByteOrder::Big {
                buf[..width].reverse();
            }
            out.extend_from_slice(&buf[..width]);
        }
    }
    Ok(out)
}
