//! Closed-form parameter accounting.
//!
//! [`parameter_count`] itemises the implemented architecture component by
//! component, in the same order the parameter tree (and therefore the
//! checkpoint) enumerates tensors. [`ArchVariant`] counts alternative
//! layer conventions for comparing against externally quoted totals.

use super::{ModelConfig, Readout, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    /// Tensor-name prefix covered by this row.
    pub component: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLedger {
    pub entries: Vec<LedgerEntry>,
    pub total: usize,
}

impl fmt::Display for ParamLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.component.len()).max().unwrap_or(5).max(5);
        for e in &self.entries {
            writeln!(f, "{:<width$}  {:>8}", e.component, e.count)?;
        }
        write!(f, "{:<width$}  {:>8}", "total", self.total)
    }
}

/// Itemised parameter count of the implemented architecture.
pub fn parameter_count(cfg: &ModelConfig) -> Result<ParamLedger> {
    cfg.validate()?;
    let d = cfg.d;
    let mut entries = Vec::new();
    let mut push = |component: String, count: usize| entries.push(LedgerEntry { component, count });

    push("input_proj".into(), cfg.n_features * d + d);
    push("class_token".into(), d);
    for i in 0..cfg.n_layers {
        push(format!("layers.{i}.inducing"), cfg.m * d);
        for block in ["inner", "outer"] {
            push(format!("layers.{i}.{block}.mh"), 4 * d * d);
            push(format!("layers.{i}.{block}.ln1"), 2 * d);
            push(format!("layers.{i}.{block}.rff"), d * d + d);
            push(format!("layers.{i}.{block}.ln2"), 2 * d);
        }
    }
    if cfg.readout == Readout::CrossAttention {
        push("readout".into(), 4 * d * d);
    }
    push("classifier".into(), d * cfg.n_classes + cfg.n_classes);

    let total = entries.iter().map(|e| e.count).sum();
    Ok(ParamLedger { entries, total })
}

/// Layer conventions that change the parameter total without changing
/// the block structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchVariant {
    /// Affine `n_features → d` map before the encoder. Without it the first
    /// layer's projections read raw features and the class token has
    /// `n_features` entries.
    pub input_projection: bool,
    /// Bias vectors on the query/key/value (and output) projections.
    pub projection_bias: bool,
    /// Separate `d×d` output map after concatenating heads.
    pub output_map: bool,
    /// Number of `d→d` affine layers in the row-wise feed-forward.
    pub rff_layers: usize,
    /// Both LayerNorms in every MSAB (gain and bias each).
    pub layer_norms: bool,
    /// One inducing-point matrix shared by all layers.
    pub shared_inducing: bool,
}

impl ArchVariant {
    /// The architecture [`parameter_count`] describes.
    pub const IMPLEMENTED: ArchVariant = ArchVariant {
        input_projection: true,
        projection_bias: false,
        output_map: true,
        rff_layers: 1,
        layer_norms: true,
        shared_inducing: false,
    };

    pub fn describe(&self) -> String {
        format!(
            "input_proj={} proj_bias={} w_o={} rff_layers={} layer_norm={} shared_inducing={}",
            self.input_projection as u8,
            self.projection_bias as u8,
            self.output_map as u8,
            self.rff_layers,
            self.layer_norms as u8,
            self.shared_inducing as u8
        )
    }

    /// Every combination of the boolean switches with 0–2 rFF layers.
    pub fn all() -> Vec<ArchVariant> {
        let mut out = Vec::new();
        for bits in 0u8..32 {
            for rff_layers in 0..=2 {
                out.push(ArchVariant {
                    input_projection: bits & 1 != 0,
                    projection_bias: bits & 2 != 0,
                    output_map: bits & 4 != 0,
                    layer_norms: bits & 8 != 0,
                    shared_inducing: bits & 16 != 0,
                    rff_layers,
                });
            }
        }
        out
    }

    /// Total parameters of this variant under `cfg`.
    pub fn total(&self, cfg: &ModelConfig) -> usize {
        let d = cfg.d;
        let bias = |n: usize| if self.projection_bias { n } else { 0 };
        // one multi-head attention whose queries have width q_in and whose
        // keys/values have width kv_in
        let mh = |q_in: usize, kv_in: usize| {
            let mut n = q_in * d + 2 * kv_in * d + bias(3 * d);
            if self.output_map {
                n += d * d + bias(d);
            }
            n
        };
        let msab = |q_in: usize, kv_in: usize| {
            mh(q_in, kv_in) + self.rff_layers * (d * d + d) + if self.layer_norms { 4 * d } else { 0 }
        };
        let inducing = cfg.m * d;
        let mut total = 0;
        let mut width = cfg.n_features;
        if self.input_projection {
            total += cfg.n_features * d + d;
            width = d;
        }
        total += width; // class token
        if self.shared_inducing {
            total += inducing;
        }
        for _ in 0..cfg.n_layers {
            if !self.shared_inducing {
                total += inducing;
            }
            total += msab(d, width) + msab(width, d);
            width = d;
        }
        if cfg.readout == Readout::CrossAttention {
            total += mh(d, d);
        }
        total + d * cfg.n_classes + cfg.n_classes
    }
}
