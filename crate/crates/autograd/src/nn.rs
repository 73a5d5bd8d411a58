//! Layers whose weights live in [`ModelParams`] and are bound onto a graph
//! through a [`Session`].

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;

use crate::{Gradients, Graph, ModelParams, Result, Tensor, Var};

/// Batch-norm running statistics: `running = MOMENTUM·running + (1−MOMENTUM)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Whether batch normalization uses batch statistics (and updates running
/// statistics) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One forward (and optional backward) pass of a model over a graph.
///
/// Parameters are bound onto the graph lazily, the first time a layer asks
/// for them, so only parameters that actually take part in the pass receive
/// gradients.
pub struct Session<'g, 'p> {
    graph: &'g Graph,
    params: &'p ModelParams,
    mode: Mode,
    bound: RefCell<HashMap<String, Var<'g>>>,
    bn_stats: RefCell<Vec<(String, Vec<f64>, Vec<f64>)>>,
}

/// Owned results of a session, applied with [`SessionUpdate::apply`].
#[derive(Debug, Default)]
pub struct SessionUpdate {
    pub grads: Vec<(String, Tensor)>,
    bn_stats: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl<'g, 'p> Session<'g, 'p> {
    pub fn new(graph: &'g Graph, params: &'p ModelParams, mode: Mode) -> Self {
        Session {
            graph,
            params,
            mode,
            bound: RefCell::new(HashMap::new()),
            bn_stats: RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    /// The graph variable for parameter `name`, binding it on first use.
    pub fn param(&self, name: &str) -> Result<Var<'g>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self.params.param(name)?.value.clone();
        let var = self.graph.param(value);
        self.bound.borrow_mut().insert(name.to_string(), var);
        Ok(var)
    }

    pub fn constant(&self, value: Tensor) -> Var<'g> {
        self.graph.constant(value)
    }

    /// Collects gradients for every bound parameter and the batch-norm
    /// statistics observed during the pass.
    pub fn finish(self, grads: Option<&Gradients>) -> SessionUpdate {
        let grads = match grads {
            Some(g) => self
                .bound
                .into_inner()
                .into_iter()
                .filter_map(|(name, var)| g.get(var).map(|t| (name, t.clone())))
                .collect(),
            None => Vec::new(),
        };
        SessionUpdate {
            grads,
            bn_stats: self.bn_stats.into_inner(),
        }
    }
}

impl SessionUpdate {
    /// Stores gradients on the parameters and folds the batch statistics
    /// into the running statistics.
    pub fn apply(self, params: &mut ModelParams) -> Result<()> {
        for (name, g) in self.grads {
            params.set_grad(&name, g)?;
        }
        for (prefix, mean, var) in self.bn_stats {
            for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                let buf = params.buffer_mut(&format!("{prefix}.{suffix}"))?;
                for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                }
            }
        }
        Ok(())
    }
}

fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("finite init")
}

/// Affine layer `y = x·W + b` with `W` shaped `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: String,
    bias: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let layer = Dense {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            inputs,
            outputs,
        };
        params.add_param(&layer.weight, glorot(&[inputs, outputs], inputs, outputs, rng))?;
        params.add_param(&layer.bias, Tensor::zeros(&[outputs]))?;
        Ok(layer)
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(s.param(&self.weight)?)?.add(s.param(&self.bias)?)
    }
}

/// Stride-1 "same" convolution over `[n, c, h, w]` inputs.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: String,
    bias: String,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layer = Conv2d {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
        };
        let k2 = kernel * kernel;
        let w = glorot(&[out_channels, in_channels, kernel, kernel], in_channels * k2, out_channels * k2, rng);
        params.add_param(&layer.weight, w)?;
        params.add_param(&layer.bias, Tensor::zeros(&[out_channels]))?;
        Ok(layer)
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        x.conv2d(s.param(&self.weight)?, s.param(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    prefix: String,
}

impl BatchNorm {
    pub fn new(params: &mut ModelParams, name: &str, channels: usize) -> Result<Self> {
        params.add_param(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?;
        params.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        params.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?;
        params.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?;
        Ok(BatchNorm { prefix: name.to_string() })
    }

    pub fn forward<'g>(&self, s: &Session<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
        let gamma = s.param(&format!("{}.gamma", self.prefix))?;
        let beta = s.param(&format!("{}.beta", self.prefix))?;
        match s.mode {
            Mode::Train => {
                let (y, mean, var) = s.graph.batch_norm_train(x, gamma, beta, BN_EPS)?;
                s.bn_stats.borrow_mut().push((self.prefix.clone(), mean, var));
                Ok(y)
            }
            Mode::Infer => {
                let rm = s.params.buffer(&format!("{}.running_mean", self.prefix))?;
                let rv = s.params.buffer(&format!("{}.running_var", self.prefix))?;
                s.graph.batch_norm_infer(x, gamma, beta, rm.data(), rv.data(), BN_EPS)
            }
        }
    }
}
