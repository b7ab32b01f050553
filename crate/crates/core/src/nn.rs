//! Dense feed-forward networks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Identity => t.clone(),
            Activation::Relu => t.map(|x| x.max(0.0)),
            Activation::Tanh => t.map(f64::tanh),
            Activation::Sigmoid => t.map(sigmoid),
            Activation::Softmax => t.softmax_rows(),
        }
    }

    fn apply_on(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Softmax => tape.softmax_rows(v),
        }
    }
}

/// `y = activation(x W + b)` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Whether the final activation is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Output {
    Activated,
    PreActivation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.shape() != [1, layer.output_dim()] {
                return Err(Error::shape(
                    "dense layer",
                    format!("layer {i}: bias shape {:?}", layer.bias.shape()),
                ));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::LayerShape {
                    layer: i,
                    expected: layers[i - 1].output_dim(),
                    actual: layer.input_dim(),
                });
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::config(format!(
                    "softmax is only allowed on the final layer (found on layer {i})"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists every width
    /// including input and output.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(sizes, hidden, output, |fan_in, fan_out| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::new(
                fan_in,
                fan_out,
                (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)).collect(),
            )
            .expect("sized")
        })
    }

    /// All weights and biases zero.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::build(sizes, hidden, output, Tensor::zeros)
    }

    fn build(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        mut weights: impl FnMut(usize, usize) -> Tensor,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("network sizes need input and output widths"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer {
                weights: weights(sizes[i], sizes[i + 1]),
                bias: Tensor::zeros(1, sizes[i + 1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    /// Number of parameter tensors (a weight and a bias per layer).
    pub fn param_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::LayerShape {
                layer: 0,
                expected: self.input_dim(),
                actual: width,
            });
        }
        Ok(())
    }

    /// Evaluates the network on a batch without recording anything.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_with(input, Output::Activated)
    }

    pub fn forward_with(&self, input: &Tensor, output: Output) -> Result<Tensor> {
        self.check_input(input.cols())?;
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weights)?.add_row_broadcast(&layer.bias)?;
            if i < last || output == Output::Activated {
                h = layer.activation.apply(&h);
            }
        }
        Ok(h)
    }

    /// Registers the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass on `tape` using parameter handles from
    /// [`DenseNetwork::bind`] (or a slice of a larger parameter list).
    pub fn forward_on(&self, tape: &mut Tape, params: &[Var], input: Var, output: Output) -> Result<Var> {
        self.check_input(tape.value(input).cols())?;
        if params.len() != self.param_count() {
            return Err(Error::contract(format!(
                "network expects {} parameter handles, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, params[2 * i]);
            h = tape.add_row(z, params[2 * i + 1]);
            if i < last || output == Output::Activated {
                h = layer.activation.apply_on(tape, h);
            }
        }
        Ok(h)
    }

    /// Most likely class per row.
    pub fn predict_class(&self, input: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward_with(input, Output::PreActivation)?.argmax_rows())
    }
}
