//! Central finite-difference verification of analytic gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |numeric|)` over the checked coordinates.
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Checks the gradient of scalar `f` at `x`.
pub fn grad_check<F, Fun>(f: Fun, x: &Tensor<F>, eps: f64) -> Result<f64>
where
    F: Real,
    Fun: Fn(&mut Graph<F>, Var) -> Result<Var>,
{
    let r = grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps, None)?;
    Ok(r.max_rel_error)
}

/// Checks the gradient of scalar `f` with respect to every input tensor.
///
/// `max_coords` caps how many coordinates per input are perturbed; they are spread
/// evenly over the tensor so large parameter blocks stay affordable.
pub fn grad_check_many<F, Fun>(f: Fun, inputs: &[Tensor<F>], eps: f64, max_coords: Option<usize>) -> Result<GradCheck>
where
    F: Real,
    Fun: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<F>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item()?.as_f64())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::NonScalar { shape: g.shape(out).to_vec() });
    }
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut perturbed: Vec<Tensor<F>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("tracked leaf has a gradient").to_f64_vec();
        let n = inputs[i].numel();
        let stride = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for c in (0..n).step_by(stride) {
            let orig = inputs[i].data()[c];
            perturbed[i].data_mut()[c] = F::of(orig.as_f64() + eps);
            let plus = eval(&perturbed)?;
            perturbed[i].data_mut()[c] = F::of(orig.as_f64() - eps);
            let minus = eval(&perturbed)?;
            perturbed[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_error: worst, coords_checked: checked })
}
