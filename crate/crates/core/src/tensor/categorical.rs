use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Normalized probability vector over class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical<T: Scalar = f64> {
    probs: Vec<T>,
}

impl<T: Scalar> Categorical<T> {
    /// Validates non-negativity and normalization (within the scalar's tolerance).
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("categorical over zero classes"));
        }
        if probs.iter().any(|p| !(*p >= T::zero()) || !p.is_finite()) {
            return Err(invalid("categorical with negative or non-finite entry"));
        }
        let total = probs.iter().fold(T::zero(), |a, &p| a + p);
        if (total - T::one()).abs() > T::normalization_tolerance() {
            return Err(invalid(format!("categorical sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        let total = weights.iter().fold(T::zero(), |a, &p| a + p);
        if !(total > T::zero()) || !total.is_finite() {
            return Err(invalid("weights have no positive finite mass"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        let p = T::one() / T::from_usize(k).expect("class count fits scalar");
        Self { probs: vec![p; k] }
    }

    /// Softmax of `logits`.
    pub fn from_logits(logits: &[T]) -> Self {
        Self {
            probs: softmax(logits),
        }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> T {
        entropy_of(&self.probs)
    }

    /// First index of the largest probability.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn total_variation(&self, other: &Self) -> T {
        let half = T::lit(0.5);
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(T::zero(), |a, (&p, &q)| a + (p - q).abs())
            * half
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }
}

/// Entropy of an already-validated probability slice.
pub fn entropy_of<T: Scalar>(probs: &[T]) -> T {
    probs
        .iter()
        .filter(|&&p| p > T::zero())
        .fold(T::zero(), |acc, &p| acc - p * p.ln())
}

/// Entropy of `probs` after checking it is a valid distribution.
pub fn entropy<T: Scalar>(probs: &[T]) -> Result<T> {
    Categorical::new(probs.to_vec()).map(|c| c.entropy())
}

pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().fold(T::zero(), |a, &x| a + (x - max).exp()).ln()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total = out.iter().fold(T::zero(), |a, &p| a + p);
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| x - lse).collect()
}

/// First index of the maximum; NaNs never win.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.25f64; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.25f64; 4]).unwrap() - 1.386_294_4).abs() < 1e-7);
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) summed directly.
        let direct = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        let h = entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - direct).abs() < 1e-15);
        assert!((h - 1.039_720_8).abs() < 1e-7);
    }

    #[test]
    fn unnormalized_rejected() {
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let c = Categorical::<f32>::from_logits(&[0.0, 0.0, 0.0, 0.0]);
        assert!((c.entropy() - 4f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
        assert!((log_sum_exp(&[1000.0f64, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    fn random_categorical(k: usize, seed: u64) -> Categorical {
        let mut rng = crate::SeededRng::new(seed);
        let w: Vec<f64> = (0..k).map(|_| rng.uniform().powi(3)).collect();
        Categorical::from_weights(w).unwrap()
    }

    #[test]
    fn uniform_maximizes_entropy() {
        for i in 0..1000u64 {
            let k = 2 + (i as usize % 12);
            let c = random_categorical(k, i);
            assert!(c.entropy() <= (k as f64).ln() + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn zero_entropy_iff_delta(k in 1usize..10, hot in 0usize..10, eps in 0.0f64..0.5) {
            let hot = hot % k;
            let mut p = vec![0.0f64; k];
            p[hot] = 1.0;
            prop_assert!(entropy(&p).unwrap().abs() <= 1e-12);
            if k > 1 && eps > 1e-6 {
                p[hot] -= eps;
                p[(hot + 1) % k] += eps;
                prop_assert!(entropy(&p).unwrap() > 1e-12);
            }
        }
    }
}
