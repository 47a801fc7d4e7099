//! Named parameters and the AdamW update.

use super::ops::{NnError, Result};
use super::tensor::{el, Element, Tensor};

/// A named tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
}

impl<E: Element> Parameter<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = E::zero());
    }
}

/// AdamW with decoupled weight decay and bias correction. The learning rate
/// is supplied per step so a schedule can drive it.
#[derive(Debug, Clone)]
pub struct AdamW<E> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(params: &[Parameter<E>], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters from their accumulated gradients;
    /// gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut [Parameter<E>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "optimizer holds {} moment buffers but got {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let b1 = el::<E>(self.beta1);
        let b2 = el::<E>(self.beta2);
        let one = E::one();
        let bc1 = el::<E>(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = el::<E>(1.0 - self.beta2.powi(self.t as i32));
        let lr_e = el::<E>(lr);
        let wd = el::<E>(lr * self.weight_decay);
        let eps = el::<E>(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.shape() != p.value.shape() || self.m[i].shape() != p.value.shape() {
                return Err(NnError::Shape(format!("parameter {} shape drifted", p.name)));
            }
            let g = p.grad.data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] - wd * w[j] - lr_e * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
