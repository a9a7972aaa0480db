//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of the backward rules it audits.

use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over all checked scalars.
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` at the worst scalar.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares autodiff gradients of `f` with central differences of width
/// `2·step` for every element of every input.
///
/// `f` builds a one-element loss from the inputs registered as
/// gradient-carrying leaves, in order.
pub fn check_gradients<F, E>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().expect("param leaf carries a grad"))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            probe[i].data_mut()[e] = orig + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[e] = orig - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i].data()[e];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, e, a, numeric));
            }
        }
    }
    Ok(report)
}
