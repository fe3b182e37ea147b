//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(invalid(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S = f32> {
    config: AdamConfig,
    step: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Real> Adam<S> {
    pub fn new(config: AdamConfig, len: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        })
    }

    pub fn from_state(config: AdamConfig, step: u64, m: Vec<S>, v: Vec<S>) -> Result<Self> {
        config.validate()?;
        if m.len() != v.len() {
            return Err(invalid("Adam moment buffers differ in length"));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[S] {
        &self.m
    }

    pub fn second_moment(&self) -> &[S] {
        &self.v
    }

    pub fn update(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid(format!(
                "Adam holds {} values, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = S::from_f64(c.beta1);
        let b2 = S::from_f64(c.beta2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - c.beta1.powi(t));
        let corr2 = S::from_f64(1.0 - c.beta2.powi(t));
        let lr = S::from_f64(c.learning_rate);
        let eps = S::from_f64(c.eps);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / corr1;
            let vhat = *v / corr2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}
