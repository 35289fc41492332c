use crate::error::{ensure_same_dim, Result};

/// Adam with bias correction and a Polyak (running mean) shadow of the iterates.
///
/// The shadow starts at the initial parameters and averages every iterate
/// produced by [`step`](Self::step), including the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_num: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    shadow: Vec<f64>,
}

impl Adam {
    /// Defaults `β1 = 0.5`, `β2 = 0.999`, `eps_num = 1e-8`.
    pub fn new(initial: &[f64], learning_rate: f64) -> Self {
        Self::with_betas(initial, learning_rate, 0.5, 0.999)
    }

    pub fn with_betas(initial: &[f64], learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        assert!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "betas must lie in (0, 1)");
        let n = initial.len();
        Self {
            learning_rate,
            beta1,
            beta2,
            eps_num: 1e-8,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            shadow: initial.to_vec(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Running mean of all iterates so far.
    pub fn shadow(&self) -> &[f64] {
        &self.shadow
    }

    /// One descent step `params -= lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_same_dim(self.first_moment.len(), params.len())?;
        ensure_same_dim(params.len(), grads.len())?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            let g = grads[k];
            let m = self.beta1 * self.first_moment[k] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[k] + (1.0 - self.beta2) * g * g;
            self.first_moment[k] = m;
            self.second_moment[k] = v;
            params[k] -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.eps_num);
        }
        let n = (self.step_count + 1) as f64;
        for (s, p) in self.shadow.iter_mut().zip(params.iter()) {
            *s += (p - *s) / n;
        }
        Ok(())
    }

    /// Ascent step: descends on the negated gradient.
    pub fn ascend(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
        self.step(params, &neg)
    }
}
