use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
        Linear { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Fully connected network: ReLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Forward {
    /// `(batch, out)` network output.
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Random network with layer widths `sizes` (input first, output last).
    /// Weights and biases are uniform in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Linear::uniform(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Linear {
                    weight: Array2::zeros((w[1], w[0])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    /// Zeroes the weights and biases of the output layer.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Linear::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &Array2<f64>) -> Result<Forward> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(x);
            x = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        Ok(Forward { inputs, pre })
    }

    /// Single-sample forward pass.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward(&x)?.output().row(0).to_vec())
    }

    /// Backpropagates `upstream = dL/d(output)` through a recorded forward
    /// pass. Returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, fwd: &Forward, upstream: &Array2<f64>) -> (Gradients, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                let z = &fwd.pre[i];
                delta.zip_mut_with(z, |d, &zv| {
                    if zv <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            let weight = delta.t().dot(&fwd.inputs[i]).as_standard_layout().into_owned();
            let bias = delta.sum_axis(Axis(0));
            grads.push(Linear { weight, bias });
            delta = delta.dot(&self.layers[i].weight);
        }
        grads.reverse();
        (Gradients { layers: grads }, delta)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("flat parameter vector too short");
            }
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Soft target update `self <- sigma * source + (1 - sigma) * self`.
    pub fn polyak_from(&mut self, source: &Mlp, sigma: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weight.zip_mut_with(&s.weight, |a, &b| *a = sigma * b + (1.0 - sigma) * *a);
            t.bias.zip_mut_with(&s.bias, |a, &b| *a = sigma * b + (1.0 - sigma) * *a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}
