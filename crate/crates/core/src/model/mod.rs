//! The set-transformer lineage classifier.
//!
//! Events are projected row-wise to the model width, a learnable class
//! token is prepended as row 0, a stack of STAB layers runs over the
//! set, and the class-token row feeds a linear classifier. The
//! cross-attention readout instead pools the encoded events with one
//! multi-head attention whose single query is the class token.

pub mod checkpoint;
pub mod ledger;

use crate::attention::{self, check_heads, AttentionError, MultiheadParams, StabParams};
use crate::fcs::cohort::EventMatrix;
use crate::params::{count_scalars, glorot_uniform, join, normal, ParamTree};
use crate::scalar::Scalar;
use crate::tensor::{softmax_in_place, Graph, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub use ledger::{parameter_count, ArchVariant, LedgerEntry, ParamLedger};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sample {sample_id} has no events")]
    EmptySample { sample_id: String },
    #[error("sample {sample_id} has {found} features, model expects {expected}")]
    Width {
        sample_id: String,
        expected: usize,
        found: usize,
    },
    #[error("operation needs readout {needed}, model uses {actual}")]
    Readout { needed: Readout, actual: Readout },
    #[error("parameter {name}: {reason}")]
    Param { name: String, reason: String },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    ClassToken,
    CrossAttention,
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::ClassToken => "class_token",
            Readout::CrossAttention => "cross_attention",
        })
    }
}

impl FromStr for Readout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "class_token" => Ok(Readout::ClassToken),
            "cross_attention" => Ok(Readout::CrossAttention),
            _ => Err(format!("unknown readout {s:?} (class_token | cross_attention)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_features: usize,
    pub d: usize,
    /// Inducing points per STAB layer.
    pub m: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub readout: Readout,
    /// Largest event count used per forward pass; larger samples are
    /// subsampled uniformly without replacement.
    pub subsample_cap: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_features: 22,
            d: 32,
            m: 16,
            heads: 4,
            n_layers: 3,
            n_classes: 3,
            readout: Readout::ClassToken,
            subsample_cap: Some(100_000),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_features", self.n_features),
            ("d", self.d),
            ("m", self.m),
            ("heads", self.heads),
            ("n_layers", self.n_layers),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{k} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(ModelError::Config("n_classes must be at least 2".into()));
        }
        if self.subsample_cap == Some(0) {
            return Err(ModelError::Config("subsample_cap must be positive".into()));
        }
        check_heads(self.d, self.heads).map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Every learnable value of the classifier, generic over the leaf type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P> {
    /// `n_features × d`
    pub input_weight: P,
    pub input_bias: P,
    /// `1 × d`
    pub class_token: P,
    pub layers: Vec<StabParams<P>>,
    /// Present only with [`Readout::CrossAttention`].
    pub readout: Option<MultiheadParams<P>>,
    /// `d × n_classes`
    pub classifier_weight: P,
    pub classifier_bias: P,
}

impl<P> ParamTree<P> for ModelParams<P> {
    type With<Q> = ModelParams<Q>;

    fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        f(&join(prefix, "input_proj.weight"), &self.input_weight);
        f(&join(prefix, "input_proj.bias"), &self.input_bias);
        f(&join(prefix, "class_token"), &self.class_token);
        for (i, l) in self.layers.iter().enumerate() {
            l.for_each(&join(prefix, &format!("layers.{i}")), f);
        }
        if let Some(r) = &self.readout {
            r.for_each(&join(prefix, "readout"), f);
        }
        f(&join(prefix, "classifier.weight"), &self.classifier_weight);
        f(&join(prefix, "classifier.bias"), &self.classifier_bias);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "input_proj.weight"), &mut self.input_weight);
        f(&join(prefix, "input_proj.bias"), &mut self.input_bias);
        f(&join(prefix, "class_token"), &mut self.class_token);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        if let Some(r) = &mut self.readout {
            r.for_each_mut(&join(prefix, "readout"), f);
        }
        f(&join(prefix, "classifier.weight"), &mut self.classifier_weight);
        f(&join(prefix, "classifier.bias"), &mut self.classifier_bias);
    }

    fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            input_weight: f(&self.input_weight),
            input_bias: f(&self.input_bias),
            class_token: f(&self.class_token),
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            readout: self.readout.as_ref().map(|r| r.map(f)),
            classifier_weight: f(&self.classifier_weight),
            classifier_bias: f(&self.classifier_bias),
        }
    }
}

impl<T: Scalar> ModelParams<Tensor<T>> {
    /// Seeded initialisation; identical seeds give identical parameters.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let token_std = 1.0 / (cfg.d as f64).sqrt();
        let input_weight = glorot_uniform(cfg.n_features, cfg.d, &mut rng);
        let input_bias = Tensor::zeros(vec![cfg.d]);
        let class_token = normal(vec![1, cfg.d], token_std, &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|_| StabParams::init(cfg.d, cfg.m, cfg.heads, &mut rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let readout = match cfg.readout {
            Readout::ClassToken => None,
            Readout::CrossAttention => Some(MultiheadParams::init(cfg.d, cfg.heads, &mut rng)?),
        };
        let classifier_weight = glorot_uniform(cfg.d, cfg.n_classes, &mut rng);
        let classifier_bias = Tensor::zeros(vec![cfg.n_classes]);
        Ok(Self {
            input_weight,
            input_bias,
            class_token,
            layers,
            readout,
            classifier_weight,
            classifier_bias,
        })
    }
}

/// A configured classifier and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FcmFormer<T> {
    config: ModelConfig,
    params: ModelParams<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub label: usize,
    pub probabilities: Vec<T>,
}

/// Softmax probabilities and the arg-max label; ties go to the lowest
/// class index.
pub fn predict_from_logits<T: Scalar>(logits: &[T]) -> Prediction<T> {
    let mut probabilities = logits.to_vec();
    softmax_in_place(&mut probabilities);
    let mut label = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[label] {
            label = i;
        }
    }
    Prediction { label, probabilities }
}

impl<T: Scalar> FcmFormer<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking every shape against the
    /// config.
    pub fn from_params(config: ModelConfig, params: ModelParams<Tensor<T>>) -> Result<Self> {
        let reference = ModelParams::<Tensor<T>>::init(&config)?;
        let mut expected = Vec::new();
        reference.for_each("", &mut |n, t| expected.push((n.to_string(), t.shape().to_vec())));
        let mut found = Vec::new();
        params.for_each("", &mut |n, t| found.push((n.to_string(), t.shape().to_vec())));
        if expected.len() != found.len() {
            return Err(ModelError::Param {
                name: "*".into(),
                reason: format!("expected {} tensors, found {}", expected.len(), found.len()),
            });
        }
        for ((en, es), (fname, fs)) in expected.iter().zip(&found) {
            if en != fname || es != fs {
                return Err(ModelError::Param {
                    name: fname.clone(),
                    reason: format!("expected {en} with shape {es:?}, found shape {fs:?}"),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<Tensor<T>> {
        &mut self.params
    }

    /// Gradient-carrying scalars found by walking the parameter tree.
    pub fn scalar_count(&self) -> usize {
        count_scalars(&self.params)
    }

    /// Events as an `N × n_features` tensor, subsampled when over the cap.
    pub fn input_tensor(&self, sample: &EventMatrix) -> Result<Tensor<T>> {
        if sample.n_features() != self.config.n_features {
            return Err(ModelError::Width {
                sample_id: sample.sample_id.clone(),
                expected: self.config.n_features,
                found: sample.n_features(),
            });
        }
        let n = sample.n_events();
        if n == 0 {
            return Err(ModelError::EmptySample {
                sample_id: sample.sample_id.clone(),
            });
        }
        let w = sample.n_features();
        let data: Vec<T> = match self.config.subsample_cap {
            Some(cap) if n > cap => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ fnv1a(sample.sample_id.as_bytes()));
                let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
                idx.sort_unstable();
                idx.iter()
                    .flat_map(|&r| sample.row(r).iter().map(|&v| T::widen_f32(v)))
                    .collect()
            }
            _ => sample.data().iter().map(|&v| T::widen_f32(v)).collect(),
        };
        let rows = data.len() / w;
        Ok(Tensor::new(vec![rows, w], data)?)
    }

    /// Records the forward pass onto `g` and returns the `1 × n_classes`
    /// logits. `events` is an `N × n_features` node.
    pub fn logits_graph(&self, g: &mut Graph<T>, p: &ModelParams<Var>, events: Var) -> Result<Var> {
        let proj = g.matmul(events, p.input_weight)?;
        let proj = g.add_row(proj, p.input_bias)?;
        let pooled = match self.config.readout {
            Readout::ClassToken => {
                let mut x = g.concat_rows(&[p.class_token, proj])?;
                for layer in &p.layers {
                    x = attention::stab(g, layer, x)?;
                }
                g.slice_rows(x, 0, 1)?
            }
            Readout::CrossAttention => {
                let mut x = proj;
                for layer in &p.layers {
                    x = attention::stab(g, layer, x)?;
                }
                let r = p.readout.as_ref().ok_or_else(|| ModelError::Param {
                    name: "readout".into(),
                    reason: "missing for cross_attention".into(),
                })?;
                attention::multihead(g, r, p.class_token, x, x)?
            }
        };
        let logits = g.matmul(pooled, p.classifier_weight)?;
        Ok(g.add_row(logits, p.classifier_bias)?)
    }

    /// Class logits for one sample.
    pub fn forward(&self, sample: &EventMatrix) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let p = attention::bind(&mut g, &self.params);
        let x = g.constant(self.input_tensor(sample)?);
        let logits = self.logits_graph(&mut g, &p, x)?;
        Ok(g.value(logits).data().to_vec())
    }

    /// [`FcmFormer::forward`] restricted to the cross-attention readout.
    pub fn forward_cross_attention(&self, sample: &EventMatrix) -> Result<Vec<T>> {
        if self.config.readout != Readout::CrossAttention {
            return Err(ModelError::Readout {
                needed: Readout::CrossAttention,
                actual: self.config.readout,
            });
        }
        self.forward(sample)
    }

    pub fn predict(&self, sample: &EventMatrix) -> Result<Prediction<T>> {
        Ok(predict_from_logits(&self.forward(sample)?))
    }

    /// Cross-entropy loss for one labelled sample and the gradient of
    /// every parameter in canonical order.
    pub fn loss_and_grads(&self, sample: &EventMatrix, label: usize) -> Result<(T, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let p = attention::bind(&mut g, &self.params);
        let x = g.constant(self.input_tensor(sample)?);
        let logits = self.logits_graph(&mut g, &p, x)?;
        let loss = g.cross_entropy(logits, label)?;
        g.backward(loss)?;
        let mut grads = Vec::new();
        p.for_each("", &mut |_, &v| grads.push(g.grad(v).cloned().expect("bound param has grad")));
        Ok((g.value(loss).data()[0], grads))
    }

    pub fn convert<U: Scalar>(&self) -> FcmFormer<U> {
        FcmFormer {
            config: self.config.clone(),
            params: self.params.map(&mut |t| t.convert()),
        }
    }
}

/// 64-bit FNV-1a, used to derive stable per-sample seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
