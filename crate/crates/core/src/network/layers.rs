use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{kernels, Activation, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn zeros(cin: usize, cout: usize, k: usize, padding: Padding, activation: Activation) -> Self {
        ConvLayer {
            weight: Tensor::zeros(&[cout, cin, k, k]),
            bias: Tensor::zeros(&[cout]),
            padding,
            activation,
        }
    }

    /// LeCun normal weights (std = 1/sqrt(fan-in)), zero bias.
    pub fn lecun<R: Rng>(cin: usize, cout: usize, k: usize, padding: Padding, activation: Activation, rng: &mut R) -> Self {
        let mut layer = Self::zeros(cin, cout, k, padding, activation);
        let normal = Normal::new(0.0, 1.0 / ((cin * k * k) as f64).sqrt()).expect("positive std");
        for v in layer.weight.data_mut() {
            *v = normal.sample(rng);
        }
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = kernels::conv2d_forward(x, &self.weight, &self.bias, self.padding)?;
        if self.activation == Activation::Selu {
            kernels::selu_in_place(&mut y);
        }
        Ok(y)
    }
}

/// Convolution layers applied in sequence.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
}

/// Tape handles of a stack's weights and biases.
#[derive(Clone, Debug)]
pub struct StackVars {
    pub params: Vec<(Var, Var)>,
    pub trainable: bool,
}

impl ConvStack {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = self.layers.first().ok_or_else(|| Error::Shape("empty stack".into()))?.forward(x)?;
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Records weights on `tape`; frozen stacks enter as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> StackVars {
        let params = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        StackVars { params, trainable }
    }

    pub fn forward_tape(&self, tape: &mut Tape, vars: &StackVars, x: Var) -> Result<Var> {
        let mut cur = x;
        for (layer, &(w, b)) in self.layers.iter().zip(&vars.params) {
            cur = tape.conv2d(cur, w, b, layer.padding)?;
            if layer.activation == Activation::Selu {
                cur = tape.selu(cur);
            }
        }
        Ok(cur)
    }
}
