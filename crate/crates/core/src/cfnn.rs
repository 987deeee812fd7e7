//! Cascade-forward neural network.
//!
//! Layer `d` receives the activations of every connected earlier layer,
//! including the input layer, rather than only layer `d - 1`. With all
//! non-adjacent connections disabled the network is an ordinary multilayer
//! perceptron.
//!
//! Parameters live in one flat vector. For each destination layer in order,
//! each connected source layer contributes a row-major
//! `size(dest) x size(src)` weight block (sources in ascending order),
//! followed by the destination's bias vector.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CfnnError {
    #[error("invalid topology: {0}")]
    InvalidTopology(&'static str),
    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `2 / (1 + exp(-2x)) - 1`, i.e. `tanh`.
    Tansig,
    /// Identity.
    Purelin,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tansig => tansig(x),
            Activation::Purelin => x,
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tansig => 1.0 - a * a,
            Activation::Purelin => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tansig => "tansig",
            Activation::Purelin => "purelin",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tansig" => Some(Activation::Tansig),
            "purelin" => Some(Activation::Purelin),
            _ => None,
        }
    }
}

/// Hyperbolic tangent sigmoid, evaluated without overflow for any finite `x`.
#[inline]
pub fn tansig(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    let y = (1.0 - e) / (1.0 + e);
    if x < 0.0 {
        -y
    } else {
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    src: usize,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    blocks: Vec<Block>,
    bias: usize,
}

/// Layer sizes, activations and the connection mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    /// `connected[src * n_layers + dst]`
    connected: Vec<bool>,
    layout: Vec<LayerLayout>,
    n_params: usize,
}

impl Topology {
    /// Builds a topology. `activations` has one entry per non-input layer and
    /// the last must be [`Activation::Purelin`]. `cascade(src, dst)` decides the
    /// non-adjacent connections; adjacent layers are always connected.
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        cascade: impl Fn(usize, usize) -> bool,
    ) -> Result<Self, CfnnError> {
        let n = layer_sizes.len();
        if n < 2 {
            return Err(CfnnError::InvalidTopology("need an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(CfnnError::InvalidTopology("layer sizes must be at least 1"));
        }
        if activations.len() != n - 1 {
            return Err(CfnnError::InvalidTopology("one activation per non-input layer"));
        }
        if activations[n - 2] != Activation::Purelin {
            return Err(CfnnError::InvalidTopology("output layer must be purelin"));
        }
        let mut connected = vec![false; n * n];
        for dst in 1..n {
            for src in 0..dst {
                connected[src * n + dst] = src + 1 == dst || cascade(src, dst);
            }
        }
        let mut layout = Vec::with_capacity(n - 1);
        let mut offset = 0;
        for dst in 1..n {
            let mut blocks = Vec::new();
            for src in 0..dst {
                if connected[src * n + dst] {
                    blocks.push(Block { src, offset });
                    offset += layer_sizes[dst] * layer_sizes[src];
                }
            }
            layout.push(LayerLayout { blocks, bias: offset });
            offset += layer_sizes[dst];
        }
        Ok(Self {
            layer_sizes,
            activations,
            connected,
            layout,
            n_params: offset,
        })
    }

    /// Tansig hidden layers, purelin output, every forward connection present.
    pub fn cascade(layer_sizes: Vec<usize>) -> Result<Self, CfnnError> {
        Self::with_cascade(layer_sizes, true)
    }

    /// Tansig hidden layers, purelin output, adjacent connections only.
    pub fn feed_forward(layer_sizes: Vec<usize>) -> Result<Self, CfnnError> {
        Self::with_cascade(layer_sizes, false)
    }

    pub fn with_cascade(layer_sizes: Vec<usize>, cascade: bool) -> Result<Self, CfnnError> {
        let n = layer_sizes.len().max(1);
        let mut acts = vec![Activation::Tansig; n - 1];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Purelin;
        }
        Self::new(layer_sizes, acts, |_, _| cascade)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        self.layer_sizes[self.n_layers() - 1]
    }

    pub fn is_connected(&self, src: usize, dst: usize) -> bool {
        src < dst && dst < self.n_layers() && self.connected[src * self.n_layers() + dst]
    }

    /// Connected `(src, dst)` pairs that skip at least one layer.
    pub fn cascade_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_layers();
        let mut pairs = Vec::new();
        for dst in 2..n {
            for src in 0..dst - 1 {
                if self.is_connected(src, dst) {
                    pairs.push((src, dst));
                }
            }
        }
        pairs
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.n_params
    }

    /// Sum of the sizes of the layers feeding `dst`.
    pub fn fan_in(&self, dst: usize) -> usize {
        self.layout[dst - 1]
            .blocks
            .iter()
            .map(|b| self.layer_sizes[b.src])
            .sum()
    }

    /// Offset range of the weight block `src -> dst`, if connected.
    pub fn block_range(&self, src: usize, dst: usize) -> Option<core::ops::Range<usize>> {
        let block = self
            .layout
            .get(dst.checked_sub(1)?)?
            .blocks
            .iter()
            .find(|b| b.src == src)?;
        Some(block.offset..block.offset + self.layer_sizes[dst] * self.layer_sizes[src])
    }

    /// Offset range of the bias vector of `dst`.
    pub fn bias_range(&self, dst: usize) -> core::ops::Range<usize> {
        let start = self.layout[dst - 1].bias;
        start..start + self.layer_sizes[dst]
    }

    fn check_params(&self, params: &[f64]) -> Result<(), CfnnError> {
        if params.len() != self.n_params {
            return Err(CfnnError::DimensionMismatch {
                what: "parameter vector",
                expected: self.n_params,
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<(), CfnnError> {
        if ds.n_inputs != self.n_inputs() {
            return Err(CfnnError::DimensionMismatch {
                what: "dataset input width",
                expected: self.n_inputs(),
                actual: ds.n_inputs,
            });
        }
        if ds.n_outputs != self.n_outputs() {
            return Err(CfnnError::DimensionMismatch {
                what: "dataset target width",
                expected: self.n_outputs(),
                actual: ds.n_outputs,
            });
        }
        Ok(())
    }

    fn workspace(&self) -> Vec<Vec<f64>> {
        self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect()
    }

    /// Fills `acts[1..]` from `acts[0]`.
    fn propagate(&self, params: &[f64], acts: &mut [Vec<f64>]) {
        for (l, layer) in self.layout.iter().enumerate() {
            let dst = l + 1;
            let (before, rest) = acts.split_at_mut(dst);
            let out = &mut rest[0];
            let width = out.len();
            out.copy_from_slice(&params[layer.bias..layer.bias + width]);
            for block in &layer.blocks {
                let src = &before[block.src];
                let w = &params[block.offset..block.offset + out.len() * src.len()];
                for (o, row) in out.iter_mut().zip(w.chunks_exact(src.len())) {
                    *o += dot(row, src);
                }
            }
            let act = self.activations[l];
            if act != Activation::Purelin {
                for o in out.iter_mut() {
                    *o = act.apply(*o);
                }
            }
        }
    }

    /// Accumulates the SSE gradient of one row into `grad`; returns the row's
    /// squared error. Expects `acts` filled by [`Self::propagate`].
    fn backpropagate(
        &self,
        params: &[f64],
        acts: &[Vec<f64>],
        target: &[f64],
        upstream: &mut [Vec<f64>],
        grad: &mut [f64],
    ) -> f64 {
        let last = self.n_layers() - 1;
        let mut sse = 0.0;
        for (g, (&y, &t)) in upstream[last].iter_mut().zip(acts[last].iter().zip(target)) {
            let e = y - t;
            sse += e * e;
            *g = 2.0 * e;
        }
        for g in upstream[1..last].iter_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        for dst in (1..=last).rev() {
            let act = self.activations[dst - 1];
            let (lower, upper) = upstream.split_at_mut(dst);
            let delta = &mut upper[0];
            for (d, &a) in delta.iter_mut().zip(&acts[dst]) {
                *d *= act.derivative_from_output(a);
            }
            let layer = &self.layout[dst - 1];
            for (g, &d) in grad[layer.bias..layer.bias + delta.len()].iter_mut().zip(delta.iter()) {
                *g += d;
            }
            for block in &layer.blocks {
                let src_act = &acts[block.src];
                let ns = src_act.len();
                let size = delta.len() * ns;
                let w = &params[block.offset..block.offset + size];
                let gw = &mut grad[block.offset..block.offset + size];
                for ((grow, &d), wrow) in gw.chunks_exact_mut(ns).zip(delta.iter()).zip(w.chunks_exact(ns)) {
                    for (g, &a) in grow.iter_mut().zip(src_act) {
                        *g += d * a;
                    }
                    if block.src > 0 {
                        for (u, &wv) in lower[block.src].iter_mut().zip(wrow) {
                            *u += wv * d;
                        }
                    }
                }
            }
        }
        sse
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Network output for one input row.
pub fn forward(topology: &Topology, params: &[f64], x: &[f64]) -> Result<Vec<f64>, CfnnError> {
    topology.check_params(params)?;
    if x.len() != topology.n_inputs() {
        return Err(CfnnError::DimensionMismatch {
            what: "input row",
            expected: topology.n_inputs(),
            actual: x.len(),
        });
    }
    let mut acts = topology.workspace();
    acts[0].copy_from_slice(x);
    topology.propagate(params, &mut acts);
    Ok(acts.pop().unwrap_or_default())
}

/// Reusable forward evaluator for many rows.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    topology: &'a Topology,
    params: &'a [f64],
    acts: Vec<Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(topology: &'a Topology, params: &'a [f64]) -> Result<Self, CfnnError> {
        topology.check_params(params)?;
        Ok(Self {
            topology,
            params,
            acts: topology.workspace(),
        })
    }

    /// Output for `x`; `x` must have the topology's input width.
    pub fn eval(&mut self, x: &[f64]) -> &[f64] {
        self.acts[0].copy_from_slice(x);
        self.topology.propagate(self.params, &mut self.acts);
        &self.acts[self.topology.n_layers() - 1]
    }
}

/// Sum of squared errors over every row and output.
pub fn sse_loss(topology: &Topology, params: &[f64], dataset: &Dataset) -> Result<f64, CfnnError> {
    topology.check_dataset(dataset)?;
    let mut eval = Evaluator::new(topology, params)?;
    let mut total = 0.0;
    for row in 0..dataset.len() {
        let y = eval.eval(dataset.input(row));
        total += y
            .iter()
            .zip(dataset.target(row))
            .map(|(y, t)| (t - y) * (t - y))
            .sum::<f64>();
    }
    Ok(total)
}

/// SSE and its exact gradient, accumulated row by row in dataset order.
pub fn loss_and_gradient(
    topology: &Topology,
    params: &[f64],
    dataset: &Dataset,
    grad: &mut [f64],
) -> Result<f64, CfnnError> {
    topology.check_dataset(dataset)?;
    topology.check_params(params)?;
    topology.check_params(grad)?;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut acts = topology.workspace();
    let mut upstream = topology.workspace();
    let mut total = 0.0;
    for row in 0..dataset.len() {
        acts[0].copy_from_slice(dataset.input(row));
        topology.propagate(params, &mut acts);
        total += topology.backpropagate(params, &acts, dataset.target(row), &mut upstream, grad);
    }
    Ok(total)
}

/// Gradient of [`sse_loss`] in canonical parameter order.
pub fn gradient(topology: &Topology, params: &[f64], dataset: &Dataset) -> Result<Vec<f64>, CfnnError> {
    let mut grad = vec![0.0; topology.param_count()];
    loss_and_gradient(topology, params, dataset, &mut grad)?;
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Uniform in `±1/sqrt(fan_in)` of each destination layer, biases included.
    UniformScaled,
    /// Every parameter set to the given value.
    Constant(f64),
}

pub fn init_weights(topology: &Topology, seed: u64, scheme: InitScheme) -> Vec<f64> {
    let n = topology.param_count();
    match scheme {
        InitScheme::Constant(c) => vec![c; n],
        InitScheme::UniformScaled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = vec![0.0; n];
            for dst in 1..topology.n_layers() {
                let bound = 1.0 / (topology.fan_in(dst) as f64).sqrt();
                let layer = &topology.layout[dst - 1];
                let end = layer.bias + topology.layer_sizes[dst];
                let start = layer.blocks.first().map_or(layer.bias, |b| b.offset);
                for p in &mut params[start..end] {
                    *p = rng.random_range(-bound..=bound);
                }
            }
            params
        }
    }
}
