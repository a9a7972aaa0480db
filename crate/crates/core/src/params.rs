//! Named parameter trees and weight initialisation.
//!
//! Parameter structs are generic over their leaf type: `Tensor<T>` while
//! stored, [`Var`](crate::tensor::Var) once bound onto a graph. Every tree
//! enumerates its leaves in one canonical order, which the parameter
//! ledger and the checkpoint format both follow.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

pub trait ParamTree<P> {
    type With<Q>;

    fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P));

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P));

    fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::With<Q>;

    /// Leaf names in canonical order.
    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each("", &mut |name, _| out.push(name.to_string()));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total scalar count of a stored tree.
pub fn count_scalars<T: Scalar, S: ParamTree<Tensor<T>>>(tree: &S) -> usize {
    let mut n = 0;
    tree.for_each("", &mut |_, t| n += t.numel());
    n
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let data = (0..fan_in * fan_out).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

pub fn normal<T: Scalar, R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("normal shape")
}
