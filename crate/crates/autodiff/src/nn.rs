//! Composite functions built from primitive ops.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;

impl<F: Real> Graph<F> {
    /// `softmax(q·kᵀ/√C)·v` over the last two axes.
    ///
    /// `q: [..., Lq, C]`, `k: [..., Lk, C]`, `v: [..., Lk, Cv]`; leading batch axes must agree.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        let r = sq.len();
        if r < 2 || sk.len() != r || sv.len() != r {
            return shape_err("attention", format!("q {:?} k {:?} v {:?}", sq, sk, sv));
        }
        if sq[r - 1] != sk[r - 1] || sk[r - 2] != sv[r - 2] || sq[..r - 2] != sk[..r - 2] || sk[..r - 2] != sv[..r - 2] {
            return shape_err("attention", format!("q {:?} k {:?} v {:?}", sq, sk, sv));
        }
        let c = sq[r - 1];
        let scores = self.matmul_nt(q, k)?;
        let scaled = self.scale(scores, F::one() / F::of(c as f64).sqrt())?;
        let attn = self.softmax(scaled, r - 1)?;
        self.matmul(attn, v)
    }

    /// `x·w + b` with `w: [in, out]` and `b: [out]`; `x: [..., in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bcast(y, b),
            None => Ok(y),
        }
    }

    /// Linear layers with ReLU between them (none after the last).
    pub fn mlp_forward(&mut self, x: Var, layers: &[(Var, Var)]) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            h = self.linear(h, w, Some(b))?;
            if i + 1 < layers.len() {
                h = self.relu(h)?;
            }
        }
        Ok(h)
    }
}
