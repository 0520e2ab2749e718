//! Small dense network with inverted dropout, manual backprop and Adam.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
            Self::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `a`.
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - a * a,
            Self::Sigmoid => a * (1.0 - a),
        }
    }
}

/// `out = act(W x + b)` with `W` stored `out x in`, row-major. Dropout is
/// applied to the layer output in training mode only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Dense {
    /// He initialization for ReLU layers, Xavier otherwise.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, dropout: f64, rng: &mut impl Rng) -> Self {
        let std = match activation {
            Activation::Relu => (2.0 / inputs as f64).sqrt(),
            _ => (2.0 / (inputs + outputs) as f64).sqrt(),
        };
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; outputs],
            activation,
            dropout,
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Per-layer activations from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Cache {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

/// Gradients laid out like `Mlp::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub flat: Vec<f64>,
    /// Gradient with respect to the network input, `batch x inputs`.
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    adam: Adam,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        if layers.windows(2).any(|p| p[0].outputs != p[1].inputs) {
            return Err(Error::invalid("layer dimensions do not chain"));
        }
        let n: usize = layers.iter().map(Dense::param_count).sum();
        Ok(Self {
            layers,
            adam: Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    /// Inference-mode forward pass on a row-major `batch x inputs` block.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_impl(x, None::<&mut rand_chacha::ChaCha8Rng>).map(|(out, _)| out)
    }

    /// Training-mode forward pass: dropout masks are drawn from `rng` and
    /// kept in the cache.
    pub fn forward(&self, x: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, Cache)> {
        self.forward_impl(x, Some(rng))
    }

    fn forward_impl<R: Rng>(&self, x: &[f64], mut rng: Option<&mut R>) -> Result<(Vec<f64>, Cache)> {
        let d = self.inputs();
        if x.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x.len() % d,
            });
        }
        let batch = x.len() / d;
        let mut cache = Cache {
            batch,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut z = vec![0.0; batch * l.outputs];
            for r in 0..batch {
                let xin = &cur[r * l.inputs..(r + 1) * l.inputs];
                let zr = &mut z[r * l.outputs..(r + 1) * l.outputs];
                for (o, zo) in zr.iter_mut().enumerate() {
                    let wrow = &l.w[o * l.inputs..(o + 1) * l.inputs];
                    *zo = l.b[o] + wrow.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(rng) if l.dropout > 0.0 => {
                    let keep = 1.0 - l.dropout;
                    let m: Vec<f64> = (0..a.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    Some(m)
                }
                _ => None,
            };
            let out = match &mask {
                Some(m) => a.iter().zip(m).map(|(v, k)| v * k).collect(),
                None => a.clone(),
            };
            cache.inputs.push(std::mem::replace(&mut cur, out));
            cache.pre.push(z);
            // the unmasked activation feeds the derivative
            cache.post.push(a);
            cache.masks.push(mask);
        }
        Ok((cur, cache))
    }

    /// Reverse-mode gradients given `dout = dL/d(output)`.
    pub fn backward(&self, cache: &Cache, dout: &[f64]) -> Result<Grads> {
        if cache.inputs.len() != self.layers.len() || dout.len() != cache.batch * self.outputs() {
            return Err(Error::invalid("stale or mismatched forward cache"));
        }
        let batch = cache.batch;
        let mut flat = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.param_count();
        }
        let mut grad = dout.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if let Some(m) = &cache.masks[li] {
                for (g, k) in grad.iter_mut().zip(m) {
                    *g *= k;
                }
            }
            let dz: Vec<f64> = grad
                .iter()
                .zip(&cache.pre[li])
                .zip(&cache.post[li])
                .map(|((g, &z), &a)| g * l.activation.grad(z, a))
                .collect();
            let xin = &cache.inputs[li];
            let (gw, gb) = flat[offsets[li]..offsets[li] + l.param_count()].split_at_mut(l.w.len());
            let mut dx = vec![0.0; batch * l.inputs];
            for r in 0..batch {
                let xr = &xin[r * l.inputs..(r + 1) * l.inputs];
                let dxr = &mut dx[r * l.inputs..(r + 1) * l.inputs];
                for o in 0..l.outputs {
                    let g = dz[r * l.outputs + o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let wrow = &l.w[o * l.inputs..(o + 1) * l.inputs];
                    let gwrow = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    for i in 0..l.inputs {
                        gwrow[i] += g * xr[i];
                        dxr[i] += g * wrow[i];
                    }
                }
            }
            grad = dx;
        }
        Ok(Grads { flat, input: grad })
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) {
        self.adam.t += 1;
        let c1 = 1.0 - BETA1.powi(self.adam.t);
        let c2 = 1.0 - BETA2.powi(self.adam.t);
        let mut params = self.params();
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.flat[i];
            let m = &mut self.adam.m[i];
            let v = &mut self.adam.v[i];
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
        self.set_params(&params);
    }
}

/// Mean binary cross-entropy of probabilities `p` against soft targets, and
/// its gradient with respect to `p`.
pub fn bce(p: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    const EPS: f64 = 1e-12;
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let q = p.clamp(EPS, 1.0 - EPS);
            loss -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
            (q - t) / (q * (1.0 - q)) / n
        })
        .collect();
    (loss / n, grad)
}
