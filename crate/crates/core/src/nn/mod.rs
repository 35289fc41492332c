//! Small dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters are addressed as one flat vector (per layer: weights row-major,
//! then bias), which is also the layout [`Adam`] operates on.

mod adam;

pub use adam::Adam;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, Error, Result};
use crate::matrix::Matrix;

/// Leaky ReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn n_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    version: u64,
}

/// Activations recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Post-activation output of each layer.
    outputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("non-empty network")
    }
}

impl DenseNet {
    /// Builds a network from explicit layers, checking that dimensions chain
    /// and that softmax appears only last.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(Error::Dimension { expected: l.weights.rows(), got: l.bias.len() });
            }
            if k + 1 < layers.len() {
                let next_in = layers[k + 1].weights.cols();
                if next_in != l.weights.rows() {
                    return Err(Error::Dimension { expected: l.weights.rows(), got: next_in });
                }
                if l.activation == Activation::Softmax {
                    return Err(Error::Domain("softmax is only allowed as the final activation".into()));
                }
            }
            if l.weights.as_slice().iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Domain("non-finite parameter".into()));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Random initialization: He-uniform for (leaky) ReLU layers, Xavier-uniform otherwise.
    /// `sizes` lists layer widths including input and output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for k in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let activation = if k + 2 == sizes.len() { output } else { hidden };
            let limit = match activation {
                Activation::Relu | Activation::LeakyRelu => (6.0 / fan_in as f64).sqrt(),
                Activation::Linear | Activation::Softmax => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let weights = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
            layers.push(Layer { weights, bias: vec![0.0; fan_out], activation });
        }
        Self { layers, version: 0 }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrites all parameters; invalidates outstanding forward caches.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure_same_dim(self.n_params(), flat.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        self.version += 1;
        Ok(())
    }

    /// Output only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_same_dim(self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut z = affine(l, &h);
            activate(l.activation, &mut z);
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        ensure_same_dim(self.input_dim(), x.len())?;
        let n = self.layers.len();
        let mut cache = ForwardCache {
            version: self.version,
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
        };
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = affine(l, &h);
            let mut a = z.clone();
            activate(l.activation, &mut a);
            cache.inputs.push(h);
            cache.pre.push(z);
            h = a.clone();
            cache.outputs.push(a);
        }
        Ok((h, cache))
    }

    /// Backpropagates `grad_out` (gradient of a scalar loss w.r.t. the network
    /// output) and returns `(parameter gradients, input gradient)`.
    pub fn backward(&self, grad_out: &[f64], cache: &ForwardCache) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.n_params()];
        let gx = self.backward_accumulate(grad_out, cache, &mut grads)?;
        Ok((grads, gx))
    }

    /// Like [`backward`](Self::backward) but adds into an existing gradient buffer.
    pub fn backward_accumulate(&self, grad_out: &[f64], cache: &ForwardCache, grads: &mut [f64]) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::Cache("parameters changed since the forward pass"));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Cache("cache comes from a different network"));
        }
        ensure_same_dim(self.output_dim(), grad_out.len())?;
        ensure_same_dim(self.n_params(), grads.len())?;

        let offsets = self.layer_offsets();
        let mut g = grad_out.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let dz = activation_backward(l.activation, &cache.pre[k], &cache.outputs[k], &g);
            let input = &cache.inputs[k];
            let (rows, cols) = (l.weights.rows(), l.weights.cols());
            let off = offsets[k];
            for r in 0..rows {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[off + r * cols..off + (r + 1) * cols];
                for (gw, &xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
                grads[off + rows * cols + r] += d;
            }
            let mut gin = vec![0.0; cols];
            for r in 0..rows {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                for (gi, &w) in gin.iter_mut().zip(l.weights.row(r)) {
                    *gi += d * w;
                }
            }
            g = gin;
        }
        Ok(g)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.n_params();
                o
            })
            .collect()
    }

    /// Flat JSON checkpoint: layer shapes plus row-major weights.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    activation: l.activation,
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let layers = ck
            .layers
            .iter()
            .map(|r| {
                if r.weights.len() != r.rows * r.cols {
                    return Err(Error::Dimension { expected: r.rows * r.cols, got: r.weights.len() });
                }
                Ok(Layer {
                    weights: Matrix::from_vec(r.rows, r.cols, r.weights.clone()),
                    bias: r.bias.clone(),
                    activation: r.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}

/// Serialized network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn affine(l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.weights.rows())
        .map(|r| l.bias[r] + l.weights.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn activate(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::LeakyRelu => z.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= LEAKY_SLOPE
            }
        }),
        Activation::Linear => {}
        Activation::Softmax => softmax_in_place(z),
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn activation_backward(act: Activation, pre: &[f64], out: &[f64], g: &[f64]) -> Vec<f64> {
    match act {
        Activation::Relu => pre.iter().zip(g).map(|(&z, &g)| if z > 0.0 { g } else { 0.0 }).collect(),
        Activation::LeakyRelu => pre
            .iter()
            .zip(g)
            .map(|(&z, &g)| if z > 0.0 { g } else { LEAKY_SLOPE * g })
            .collect(),
        Activation::Linear => g.to_vec(),
        Activation::Softmax => {
            let dot: f64 = out.iter().zip(g).map(|(s, g)| s * g).sum();
            out.iter().zip(g).map(|(s, g)| s * (g - dot)).collect()
        }
    }
}
