use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Adam optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f64> {
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(len: usize, lr: T) -> Self {
        Self {
            step: 0,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam step, in place.
    pub fn update(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = T::from_u64(self.step).expect("step fits scalar");
        let c1 = T::one() - self.beta1.powf(t);
        let c2 = T::one() - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
