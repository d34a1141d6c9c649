//! Multi-layer perceptron feature extractor with hand-written backprop.
//!
//! Hidden layers apply the configured activation; the output layer is linear,
//! so the network maps an input vector to an unconstrained descriptor.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adam::Params;
use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// `[input, hidden..., d]`.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    /// Layer `l` maps `layer_sizes[l]` to `layer_sizes[l + 1]`; stored `out×in`.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is `x`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &MlpGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            axpy(s, b.as_slice(), a.as_mut_slice());
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            axpy(s, b, a);
        }
    }
}

impl Mlp {
    /// He-scaled normal weights for relu, Xavier-scaled for tanh; zero biases.
    pub fn init(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, Stream::MlpInit);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in config.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = match config.activation {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                Activation::Tanh => (2.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let data = (0..fan_in * fan_out)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    std * g
                })
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: config.layer_sizes.clone(),
            activation: config.activation,
            weights,
            biases,
        })
    }

    pub fn from_parts(activation: Activation, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        check_len("bias layers", weights.len(), biases.len())?;
        let mut layer_sizes = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            check_len(&format!("layer {l} input"), *layer_sizes.last().unwrap(), w.cols())?;
            check_len(&format!("layer {l} bias"), w.rows(), b.len())?;
            layer_sizes.push(w.rows());
        }
        Ok(Self {
            layer_sizes,
            activation,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("MLP input", self.input_dim(), x.len())?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut zl = w.matvec(&a)?;
            axpy(1.0, b, &mut zl);
            inputs.push(a);
            if l == last {
                a = zl;
            } else {
                a = zl.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(zl);
            }
        }
        Ok((a, ForwardCache { inputs, pre }))
    }

    /// Descriptor only.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Descriptors for every row of `x`.
    pub fn embed_batch(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Vec::with_capacity(x.rows() * self.output_dim());
        for row in x.iter_rows() {
            out.extend(self.embed(row)?);
        }
        Matrix::from_vec(x.rows(), self.output_dim(), out)
    }

    /// Gradients of a loss with respect to all parameters given `∂L/∂z`.
    pub fn backward(&self, cache: &ForwardCache, dz: &[f64]) -> Result<MlpGradients> {
        let mut grads = MlpGradients::zeros_like(self);
        self.backward_into(cache, dz, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates `scale ×` the gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dz: &[f64],
        scale: f64,
        grads: &mut MlpGradients,
    ) -> Result<()> {
        let layers = self.weights.len();
        if cache.inputs.len() != layers
            || cache.pre.len() + 1 != layers
            || cache
                .inputs
                .iter()
                .zip(&self.layer_sizes)
                .any(|(a, &s)| a.len() != s)
        {
            return Err(Error::Dimension("forward cache does not match this network".into()));
        }
        check_len("descriptor gradient", self.output_dim(), dz.len())?;

        let mut delta: Vec<f64> = dz.to_vec();
        for l in (0..layers).rev() {
            if l < layers - 1 {
                // delta currently holds ∂L/∂(activation output) of layer l.
                let pre = &cache.pre[l];
                let out = &cache.inputs[l + 1];
                for (j, d) in delta.iter_mut().enumerate() {
                    *d *= self.activation.derivative(pre[j], out[j]);
                }
            }
            grads.weights[l].add_outer(scale, &delta, &cache.inputs[l]);
            axpy(scale, &delta, &mut grads.biases[l]);
            if l > 0 {
                delta = self.weights[l].matvec_t(&delta)?;
            }
        }
        Ok(())
    }
}

impl Params for Mlp {
    fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(Matrix::as_slice)
            .chain(self.biases.iter().map(Vec::as_slice))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(Matrix::as_mut_slice)
            .chain(self.biases.iter_mut().map(Vec::as_mut_slice))
            .collect()
    }
}

impl Params for MlpGradients {
    fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(Matrix::as_slice)
            .chain(self.biases.iter().map(Vec::as_slice))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(Matrix::as_mut_slice)
            .chain(self.biases.iter_mut().map(Vec::as_mut_slice))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&MlpRepr {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            weights: self.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: self.biases.clone(),
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: MlpRepr = serde_json::from_str(s)?;
        if r.layer_sizes.len() != r.weights.len() + 1 {
            return Err(Error::Config("layer_sizes does not match weight count".into()));
        }
        let weights = r
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, w)| Matrix::from_vec(r.layer_sizes[l + 1], r.layer_sizes[l], w))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_parts(r.activation, weights, r.biases)
    }
}
