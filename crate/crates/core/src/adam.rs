//! Adam optimizer over any set of flat parameter blocks.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A model whose parameters can be viewed as a list of flat `f64` blocks.
///
/// Gradient types implement it with the same block layout as their model.
pub trait Params {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `block_lens`.
    pub fn new(config: AdamConfig, block_lens: &[usize]) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", config.lr)));
        }
        Ok(Self {
            config,
            step: 0,
            m: block_lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: block_lens.iter().map(|&l| vec![0.0; l]).collect(),
        })
    }

    pub fn for_params<P: Params + ?Sized>(config: AdamConfig, params: &P) -> Result<Self> {
        let lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        Self::new(config, &lens)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn step<P: Params + ?Sized, G: Params + ?Sized>(&mut self, params: &mut P, grads: &G) -> Result<()> {
        self.step_blocks(params.blocks_mut(), &grads.blocks())
    }

    /// One bias-corrected Adam update.
    pub fn step_blocks(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        check_len("parameter blocks", self.m.len(), params.len())?;
        check_len("gradient blocks", self.m.len(), grads.len())?;
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            check_len(&format!("parameter block {b}"), self.m[b].len(), p.len())?;
            check_len(&format!("gradient block {b}"), self.m[b].len(), g.len())?;
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
