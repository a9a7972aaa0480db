//! Set-attention building blocks: scaled dot-product attention,
//! multi-head attention, the multihead set attention block (MSAB) and the
//! induced set attention block (STAB).
//!
//! All blocks are free functions over a [`Graph`] and parameters already
//! bound to graph variables (`*Params<Var>`). Stored parameters
//! (`*Params<Tensor<T>>`) are created with the `init` constructors.

use crate::params::{glorot_uniform, join, normal, ParamTree};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};
use rand::Rng;
use thiserror::Error;

/// LayerNorm epsilon for every block.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("head count {heads} does not divide model width {width}")]
    Heads { width: usize, heads: usize },
}

pub type Result<T, E = AttentionError> = std::result::Result<T, E>;

/// Projection maps of one multi-head attention; each is a full `d×d` map
/// whose column blocks of width `d/h` feed the individual heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiheadParams<P> {
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
    pub w_o: P,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsabParams<P> {
    pub mh: MultiheadParams<P>,
    pub ln1_gain: P,
    pub ln1_bias: P,
    pub rff_weight: P,
    pub rff_bias: P,
    pub ln2_gain: P,
    pub ln2_bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabParams<P> {
    /// `m×d` learnable inducing points.
    pub inducing: P,
    pub inner: MsabParams<P>,
    pub outer: MsabParams<P>,
}

pub fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || width % heads != 0 {
        return Err(AttentionError::Heads { width, heads });
    }
    Ok(())
}

impl<T: Scalar> MultiheadParams<Tensor<T>> {
    pub fn init<R: Rng>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(d, heads)?;
        Ok(Self {
            w_q: glorot_uniform(d, d, rng),
            w_k: glorot_uniform(d, d, rng),
            w_v: glorot_uniform(d, d, rng),
            w_o: glorot_uniform(d, d, rng),
            heads,
        })
    }

    /// All four maps set to the `d×d` identity.
    pub fn identity(d: usize, heads: usize) -> Result<Self> {
        check_heads(d, heads)?;
        let mut eye = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            eye.data_mut()[i * d + i] = T::one();
        }
        Ok(Self {
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye.clone(),
            w_o: eye,
            heads,
        })
    }
}

impl<T: Scalar> MsabParams<Tensor<T>> {
    pub fn init<R: Rng>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let mh = MultiheadParams::init(d, heads, rng)?;
        Ok(Self {
            mh,
            ln1_gain: Tensor::full(vec![d], T::one()),
            ln1_bias: Tensor::zeros(vec![d]),
            rff_weight: glorot_uniform(d, d, rng),
            rff_bias: Tensor::zeros(vec![d]),
            ln2_gain: Tensor::full(vec![d], T::one()),
            ln2_bias: Tensor::zeros(vec![d]),
        })
    }
}

impl<T: Scalar> StabParams<Tensor<T>> {
    pub fn init<R: Rng>(d: usize, m: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(d, heads)?;
        let inducing = normal(vec![m, d], 1.0 / (d as f64).sqrt(), rng);
        let inner = MsabParams::init(d, heads, rng)?;
        let outer = MsabParams::init(d, heads, rng)?;
        Ok(Self {
            inducing,
            inner,
            outer,
        })
    }
}

impl<P> ParamTree<P> for MultiheadParams<P> {
    type With<Q> = MultiheadParams<Q>;

    fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        f(&join(prefix, "w_q"), &self.w_q);
        f(&join(prefix, "w_k"), &self.w_k);
        f(&join(prefix, "w_v"), &self.w_v);
        f(&join(prefix, "w_o"), &self.w_o);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        f(&join(prefix, "w_o"), &mut self.w_o);
    }

    fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> MultiheadParams<Q> {
        MultiheadParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
            heads: self.heads,
        }
    }
}

impl<P> ParamTree<P> for MsabParams<P> {
    type With<Q> = MsabParams<Q>;

    fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        self.mh.for_each(&join(prefix, "mh"), f);
        f(&join(prefix, "ln1.gain"), &self.ln1_gain);
        f(&join(prefix, "ln1.bias"), &self.ln1_bias);
        f(&join(prefix, "rff.weight"), &self.rff_weight);
        f(&join(prefix, "rff.bias"), &self.rff_bias);
        f(&join(prefix, "ln2.gain"), &self.ln2_gain);
        f(&join(prefix, "ln2.bias"), &self.ln2_bias);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.mh.for_each_mut(&join(prefix, "mh"), f);
        f(&join(prefix, "ln1.gain"), &mut self.ln1_gain);
        f(&join(prefix, "ln1.bias"), &mut self.ln1_bias);
        f(&join(prefix, "rff.weight"), &mut self.rff_weight);
        f(&join(prefix, "rff.bias"), &mut self.rff_bias);
        f(&join(prefix, "ln2.gain"), &mut self.ln2_gain);
        f(&join(prefix, "ln2.bias"), &mut self.ln2_bias);
    }

    fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> MsabParams<Q> {
        MsabParams {
            mh: self.mh.map(f),
            ln1_gain: f(&self.ln1_gain),
            ln1_bias: f(&self.ln1_bias),
            rff_weight: f(&self.rff_weight),
            rff_bias: f(&self.rff_bias),
            ln2_gain: f(&self.ln2_gain),
            ln2_bias: f(&self.ln2_bias),
        }
    }
}

impl<P> ParamTree<P> for StabParams<P> {
    type With<Q> = StabParams<Q>;

    fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        f(&join(prefix, "inducing"), &self.inducing);
        self.inner.for_each(&join(prefix, "inner"), f);
        self.outer.for_each(&join(prefix, "outer"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "inducing"), &mut self.inducing);
        self.inner.for_each_mut(&join(prefix, "inner"), f);
        self.outer.for_each_mut(&join(prefix, "outer"), f);
    }

    fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> StabParams<Q> {
        StabParams {
            inducing: f(&self.inducing),
            inner: self.inner.map(f),
            outer: self.outer.map(f),
        }
    }
}

/// Post-softmax attention weights `softmax(q·kᵀ/√d_k)`, one row per query.
pub fn attention_weights<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var) -> Result<Var> {
    let (_, dq) = g.value(q).dims2("attn")?;
    let (_, dk) = g.value(k).dims2("attn")?;
    if dq != dk {
        return Err(shape_err(g, "attn", q, k));
    }
    let scores = g.matmul_t(q, k)?;
    let scaled = g.scale(scores, T::lit(1.0 / (dk as f64).sqrt()));
    Ok(g.softmax_rows(scaled)?)
}

/// `softmax(q·kᵀ/√d)·v` where `d` is the key width.
pub fn attn<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (nk, _) = g.value(k).dims2("attn")?;
    let (nv, _) = g.value(v).dims2("attn")?;
    if nk != nv {
        return Err(shape_err(g, "attn", k, v));
    }
    let w = attention_weights(g, q, k)?;
    Ok(g.matmul(w, v)?)
}

/// Heads attend over column blocks of width `d/h` of the projected
/// inputs; their outputs are concatenated and mapped by `w_o`.
pub fn multihead<T: Scalar>(
    g: &mut Graph<T>,
    p: &MultiheadParams<Var>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<Var> {
    let (d, _) = g.value(p.w_q).dims2("multihead")?;
    check_heads(d, p.heads)?;
    let qp = g.matmul(q, p.w_q)?;
    let kp = g.matmul(k, p.w_k)?;
    let vp = g.matmul(v, p.w_v)?;
    let width = d / p.heads;
    let out = if p.heads == 1 {
        attn(g, qp, kp, vp)?
    } else {
        let mut heads = Vec::with_capacity(p.heads);
        for j in 0..p.heads {
            let qj = g.slice_cols(qp, j * width, width)?;
            let kj = g.slice_cols(kp, j * width, width)?;
            let vj = g.slice_cols(vp, j * width, width)?;
            heads.push(attn(g, qj, kj, vj)?);
        }
        g.concat_cols(&heads)?
    };
    Ok(g.matmul(out, p.w_o)?)
}

/// `LayerNorm(X + rFF(X))` with `X = LayerNorm(I + Multihead(I, S, S))`;
/// rFF is one row-wise affine map followed by ReLU.
pub fn msab<T: Scalar>(g: &mut Graph<T>, p: &MsabParams<Var>, i: Var, s: Var) -> Result<Var> {
    let eps = T::lit(LAYER_NORM_EPS);
    let mh = multihead(g, &p.mh, i, s, s)?;
    let res = g.add(i, mh)?;
    let x = g.layer_norm(res, p.ln1_gain, p.ln1_bias, eps)?;
    let lin = g.matmul(x, p.rff_weight)?;
    let lin = g.add_row(lin, p.rff_bias)?;
    let ff = g.relu(lin);
    let res = g.add(x, ff)?;
    Ok(g.layer_norm(res, p.ln2_gain, p.ln2_bias, eps)?)
}

/// `MSAB(S, MSAB(I, S))`: the inducing points summarise the set, then the
/// set attends to the summary. Cost is linear in the set size.
pub fn stab<T: Scalar>(g: &mut Graph<T>, p: &StabParams<Var>, s: Var) -> Result<Var> {
    let summary = msab(g, &p.inner, p.inducing, s)?;
    msab(g, &p.outer, s, summary)
}

/// Binds stored parameters onto `g` as gradient-carrying leaves.
pub fn bind<T: Scalar, S: ParamTree<Tensor<T>>>(g: &mut Graph<T>, params: &S) -> S::With<Var> {
    params.map(&mut |t| g.param(t.clone()))
}

fn shape_err<T: Scalar>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> AttentionError {
    AttentionError::Tensor(TensorError::Shape {
        op,
        lhs: g.value(a).shape().to_vec(),
        rhs: g.value(b).shape().to_vec(),
    })
}
