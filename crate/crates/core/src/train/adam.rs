use alloc::collections::BTreeMap;
use alloc::string::String;

use super::TrainConfig;
use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam moments of one parameter. Each parameter counts its own steps, so
/// an adapter that only trains every few rounds keeps a correct bias
/// correction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMoments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub moments: BTreeMap<String, ParamMoments>,
}

impl OptimizerState {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            moments: BTreeMap::new(),
        }
    }

    /// Bias-corrected Adam update of every parameter named in `grads`.
    /// Nothing is written if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let st = self.moments.entry(name.clone()).or_insert_with(|| ParamMoments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
                step: 0,
            });
            st.step += 1;
            let c1 = 1.0 - libm::pow(b1, st.step as f64);
            let c2 = 1.0 - libm::pow(b2, st.step as f64);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *w -= lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.values().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>());
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
