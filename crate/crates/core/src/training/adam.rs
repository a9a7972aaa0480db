use super::{Result, TrainError};
use crate::params::ParamTree;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[usize]], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        Self {
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn for_tree<S: ParamTree<Tensor<T>>>(tree: &S, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut shapes = Vec::new();
        tree.for_each("", &mut |_, t| shapes.push(t.shape().to_vec()));
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        Self::new(&refs, beta1, beta2, eps)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        {
            let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
            self.check(&shapes, grads)?;
        }
        let k = self.advance(lr);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g, &k);
        }
        Ok(())
    }

    /// [`AdamState::step`] over a parameter tree in canonical order.
    pub fn step_tree<S: ParamTree<Tensor<T>>>(&mut self, tree: &mut S, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        let mut shapes = Vec::new();
        tree.for_each("", &mut |_, t| shapes.push(t.shape().to_vec()));
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        self.check(&refs, grads)?;
        let k = self.advance(lr);
        let mut i = 0;
        tree.for_each_mut("", &mut |_, p| {
            self.update(i, p, &grads[i], &k);
            i += 1;
        });
        Ok(())
    }

    fn check(&self, shapes: &[&[usize]], grads: &[Tensor<T>]) -> Result<()> {
        if shapes.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Contract(format!(
                "adam: state holds {} tensors, got {} params and {} grads",
                self.m.len(),
                shapes.len(),
                grads.len()
            )));
        }
        for (i, (s, g)) in shapes.iter().zip(grads).enumerate() {
            if *s != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(TrainError::Contract(format!(
                    "adam: tensor {i} has shape {s:?}, grad {:?}, state {:?}",
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        Ok(())
    }

    /// Increments the step counter and returns the step constants
    /// `(lr, 1 - β1^t, 1 - β2^t)`.
    fn advance(&mut self, lr: f64) -> [T; 3] {
        self.step += 1;
        let t = self.step as i32;
        [T::lit(lr), T::lit(1.0 - self.beta1.powi(t)), T::lit(1.0 - self.beta2.powi(t))]
    }

    fn update(&mut self, i: usize, p: &mut Tensor<T>, g: &Tensor<T>, &[lr, c1, c2]: &[T; 3]) {
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let eps = T::lit(self.eps);
        let one = T::one();
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(shape: &[usize]) -> AdamState<f64> {
        AdamState::new(&[shape], 0.9, 0.999, 1e-8)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut s = state(&[3]);
        s.step(&mut p, &[Tensor::zeros(vec![3])], 0.01).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap()];
        let mut s = state(&[2]);
        s.step(&mut p, &[Tensor::from_f64(vec![2], &[250.0, -4.0]).unwrap()], 0.1).unwrap();
        assert!((p[0].data()[0] + 0.1).abs() < 1e-9);
        assert!((p[0].data()[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = vec![Tensor::<f64>::zeros(vec![2])];
        let mut s = state(&[2]);
        assert!(matches!(s.step(&mut p, &[Tensor::zeros(vec![3])], 0.1), Err(TrainError::Contract(_))));
        assert!(matches!(s.step(&mut p, &[], 0.1), Err(TrainError::Contract(_))));
    }
}
