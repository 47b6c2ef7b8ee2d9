use alloc::vec::Vec;

use crate::math;
use crate::model::retain_by;

/// Adam hyperparameters and shared step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    // β^t, tracked incrementally
    pow1: f64,
    pow2: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            pow1: 1.0,
            pow2: 1.0,
        }
    }
}

impl AdamHyper {
    /// Advances the step counter and the bias-correction powers.
    pub fn advance(&mut self) {
        self.step += 1;
        self.pow1 *= self.beta1;
        self.pow2 *= self.beta2;
    }
}

/// First and second moments for one parameter group of fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn new(width: usize, count: usize) -> Self {
        Self {
            width,
            m: alloc::vec![0.0; width * count],
            v: alloc::vec![0.0; width * count],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, hyper: &AdamHyper) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let bc1 = 1.0 - hyper.pow1;
        let bc2 = 1.0 - hyper.pow2;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (math::sqrt(v_hat) + hyper.eps);
        }
    }

    pub fn extend(&mut self, count: usize) {
        let n = self.m.len() + count * self.width;
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let expanded: Vec<bool> = keep
            .iter()
            .flat_map(|&k| core::iter::repeat_n(k, self.width))
            .collect();
        retain_by(&mut self.m, &expanded);
        retain_by(&mut self.v, &expanded);
    }
}

/// Optimizer state for the three attribute groups of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub position: Moments,
    pub covariance: Moments,
    pub color: Moments,
}

impl AdamState {
    pub fn new(count: usize) -> Self {
        Self {
            hyper: AdamHyper::default(),
            position: Moments::new(2, count),
            covariance: Moments::new(3, count),
            color: Moments::new(3, count),
        }
    }

    pub fn begin_step(&mut self) {
        self.hyper.advance();
    }

    /// Number of primitives tracked.
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Zero moments for `count` appended primitives.
    pub fn extend(&mut self, count: usize) {
        self.position.extend(count);
        self.covariance.extend(count);
        self.color.extend(count);
    }

    pub fn retain(&mut self, keep: &[bool]) {
        self.position.retain(keep);
        self.covariance.retain(keep);
        self.color.retain(keep);
    }
}
