//! Small fully connected networks with ReLU hidden layers and explicit backprop.

use rand::Rng;

/// Layer sizes plus a flat parameter vector laid out per layer as
/// `[W (out×in, row-major), b (out)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (params.len() == param_count(sizes)).then(|| Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Mutable view of the output-layer bias.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let out = self.output_dim();
        let n = self.params.len();
        &mut self.params[n - out..]
    }

    /// Mutable view of the output-layer weights.
    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let out = self.output_dim();
        let inp = self.sizes[self.sizes.len() - 2];
        let n = self.params.len();
        &mut self.params[n - out - out * inp..n - out]
    }

    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, MlpTape) {
        debug_assert_eq!(input.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut y = b.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *yo += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            inputs.push(std::mem::take(&mut x));
            if l + 1 < layers {
                x = y.iter().map(|v| v.max(0.0)).collect();
                pre.push(y);
            } else {
                x = y;
            }
        }
        (x, MlpTape { inputs, pre })
    }

    /// Accumulates `∂L/∂params` into `dparams` and returns `∂L/∂input`.
    pub fn backward(&self, tape: &MlpTape, dout: &[f64], dparams: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut g = dout.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &tape.inputs[l];
            let w = &self.params[off..off + n_in * n_out];
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let dw = &mut dparams[off + o * n_in..off + (o + 1) * n_in];
                for i in 0..n_in {
                    dw[i] += go * x[i];
                    dx[i] += go * w[o * n_in + i];
                }
                dparams[off + n_in * n_out + o] += go;
            }
            if l > 0 {
                for (d, p) in dx.iter_mut().zip(&tape.pre[l - 1]) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            g = dx;
        }
        g
    }
}
