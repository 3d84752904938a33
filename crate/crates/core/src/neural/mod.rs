//! Minimal differentiable networks: dense, Elman recurrent, tanh and output scaling
//! layers with exact reverse-mode gradients for parameters and inputs.

mod layer;
mod loss;
mod optim;
pub(crate) mod serial;

pub use layer::{Activations, Dense, Layer, Recurrent, Scale, ScaleKind};
pub use loss::{loss, LossKind};
pub use optim::{OptimizerKind, TrainState};
pub use serial::{deserialize, serialize};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use layer::LayerCache;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    /// `(features, steps)` of the final layer.
    out_shape: (usize, usize),
}

/// Gradient tensors for every trainable parameter, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

/// Cached intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<LayerCache>,
    output: Array2<f64>,
}

impl Trace {
    /// `batch x output_dim`
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = (input_dim, 1);
        for (i, l) in layers.iter().enumerate() {
            shape = l
                .output_shape(shape.0, shape.1)
                .map_err(|m| Error::Shape(format!("layer {i} ({}): {m}", l.kind_name())))?;
        }
        Ok(Self {
            input_dim,
            layers,
            out_shape: shape,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.out_shape.0 * self.out_shape.1
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// The final scale layer, if the network ends in one.
    pub fn output_scale(&self) -> Option<&Scale> {
        match self.layers.last() {
            Some(Layer::Scale(s)) => Some(s),
            _ => None,
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "network takes {} inputs, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn to_output(&self, act: Activations) -> Array2<f64> {
        let batch = act.batch();
        act.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch, self.output_dim()))
            .expect("contiguous output")
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, z.len()), z).expect("row vector");
        Ok(layer::row_major(self.forward_batch(x)?))
    }

    /// `batch x input_dim` to `batch x output_dim`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut act = Activations {
            data: x.to_owned(),
            steps: 1,
        };
        for l in &self.layers {
            act = layer::forward_nocache(l, act);
        }
        Ok(self.to_output(act))
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&x)?;
        let mut act = Activations {
            data: x.to_owned(),
            steps: 1,
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (next, cache) = layer::forward(l, act);
            caches.push(cache);
            act = next;
        }
        Ok(Trace {
            caches,
            output: self.to_output(act),
        })
    }

    /// Gradients of `sum_b <upstream_b, output_b>` with respect to every parameter
    /// (when `want_params`) and to the inputs (`batch x input_dim`).
    pub fn backward(
        &self,
        trace: &Trace,
        upstream: ArrayView2<f64>,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Array2<f64>)> {
        if upstream.dim() != trace.output.dim() || trace.caches.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "upstream {:?} does not match traced output {:?}",
                upstream.dim(),
                trace.output.dim()
            )));
        }
        let (features, steps) = self.out_shape;
        let batch = upstream.nrows();
        let mut grad = Activations {
            data: upstream
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((batch * steps, features))
                .expect("contiguous upstream"),
            steps,
        };
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (l, cache) in self.layers.iter().zip(&trace.caches).rev() {
            let (g, pg) = layer::backward(l, cache, grad, want_params);
            per_layer.push(pg);
            grad = g;
        }
        let params = want_params.then(|| Gradients(per_layer.into_iter().rev().flatten().collect()));
        Ok((params, grad.data))
    }
}

/// Single-sample gradient session; `backward` needs a prior `forward`.
#[derive(Debug)]
pub struct GradSession<'a> {
    net: &'a Network,
    trace: Option<Trace>,
}

impl<'a> GradSession<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self { net, trace: None }
    }

    pub fn forward(&mut self, z: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, z.len()), z).expect("row vector");
        let trace = self.net.forward_trace(x)?;
        let out = trace.output.row(0).to_vec();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Parameter gradients and input gradient of `<upstream, forward(z)>`.
    pub fn backward(&self, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let trace = self.trace.as_ref().ok_or(Error::NoForwardCache)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|e| Error::Shape(e.to_string()))?;
        let (g, dx) = self.net.backward(trace, up, true)?;
        Ok((g.expect("requested"), layer::row_major(dx)))
    }
}
