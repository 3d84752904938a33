use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Batch of activations: `rows = batch * steps`, row `b * steps + t` is time step `t`
/// of sample `b`. Non-sequential data has `steps == 1`.
#[derive(Debug, Clone)]
pub struct Activations {
    pub data: Array2<f64>,
    pub steps: usize,
}

impl Activations {
    pub fn batch(&self) -> usize {
        self.data.nrows() / self.steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Linear,
    Log,
}

/// Fixed output scaling from `[-1, 1]` onto `[min, max]`.
///
/// Linear: `min + (z + 1) / 2 * (max - min)`.
/// Log: `exp((z + 1) / 2 * ln(1 + max - min)) - 1 + min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub kind: ScaleKind,
    pub min: f64,
    pub max: f64,
}

impl Scale {
    fn log_span(&self) -> f64 {
        (1.0 + self.max - self.min).ln()
    }

    pub fn apply(&self, z: f64) -> f64 {
        let u = 0.5 * (z + 1.0);
        match self.kind {
            ScaleKind::Linear => self.min + u * (self.max - self.min),
            ScaleKind::Log => (u * self.log_span()).exp_m1() + self.min,
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let u = 0.5 * (z + 1.0);
        match self.kind {
            ScaleKind::Linear => 0.5 * (self.max - self.min),
            ScaleKind::Log => {
                let span = self.log_span();
                0.5 * span * (u * span).exp()
            }
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match self.kind {
            ScaleKind::Linear => 2.0 * (y - self.min) / (self.max - self.min) - 1.0,
            ScaleKind::Log => 2.0 * (y - self.min).ln_1p() / self.log_span() - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

/// Elman cell `h_t = tanh(x_t W_in + h_{t-1} W_rec + b)` unrolled over `steps`.
/// A single-step input is repeated at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrent {
    pub w_input: Array2<f64>,
    pub w_recurrent: Array2<f64>,
    pub bias: Array1<f64>,
    pub steps: usize,
}

impl Recurrent {
    pub fn hidden(&self) -> usize {
        self.w_recurrent.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Recurrent(Recurrent),
    Tanh,
    Scale(Scale),
}

pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..=limit))
}

impl Layer {
    pub fn dense<R: Rng>(inputs: usize, outputs: usize, bias: bool, rng: &mut R) -> Self {
        Layer::Dense(Dense {
            weight: glorot(inputs, outputs, rng),
            bias: bias.then(|| Array1::zeros(outputs)),
        })
    }

    pub fn recurrent<R: Rng>(inputs: usize, hidden: usize, steps: usize, rng: &mut R) -> Self {
        Layer::Recurrent(Recurrent {
            w_input: glorot(inputs, hidden, rng),
            w_recurrent: glorot(hidden, hidden, rng),
            bias: Array1::zeros(hidden),
            steps,
        })
    }

    pub fn scale(kind: ScaleKind, min: f64, max: f64) -> Self {
        Layer::Scale(Scale { kind, min, max })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Recurrent(_) => "recurrent",
            Layer::Tanh => "tanh",
            Layer::Scale(_) => "scale",
        }
    }

    /// Output `(features, steps)` for an input of `(features, steps)`, if compatible.
    pub fn output_shape(&self, features: usize, steps: usize) -> Result<(usize, usize), String> {
        match self {
            Layer::Dense(d) => {
                if d.weight.nrows() != features {
                    return Err(format!("dense expects {} inputs, got {features}", d.weight.nrows()));
                }
                if let Some(b) = &d.bias {
                    if b.len() != d.weight.ncols() {
                        return Err("dense bias length differs from outputs".into());
                    }
                }
                Ok((d.weight.ncols(), steps))
            }
            Layer::Recurrent(r) => {
                if r.w_input.nrows() != features {
                    return Err(format!(
                        "recurrent expects {} inputs, got {features}",
                        r.w_input.nrows()
                    ));
                }
                let h = r.hidden();
                if r.w_recurrent.ncols() != h || r.w_input.ncols() != h || r.bias.len() != h {
                    return Err("recurrent weight shapes disagree on hidden size".into());
                }
                if r.steps == 0 || (steps != 1 && steps != r.steps) {
                    return Err(format!(
                        "recurrent over {} steps cannot take {steps}-step input",
                        r.steps
                    ));
                }
                Ok((h, r.steps))
            }
            Layer::Tanh | Layer::Scale(_) => Ok((features, steps)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&[f64]> {
        fn sl(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        match self {
            Layer::Dense(d) => {
                let mut v = vec![sl(&d.weight)];
                if let Some(b) = &d.bias {
                    v.push(b.as_slice().expect("contiguous"));
                }
                v
            }
            Layer::Recurrent(r) => vec![
                sl(&r.w_input),
                sl(&r.w_recurrent),
                r.bias.as_slice().expect("contiguous"),
            ],
            Layer::Tanh | Layer::Scale(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => {
                let mut v = vec![d.weight.as_slice_mut().expect("standard layout")];
                if let Some(b) = &mut d.bias {
                    v.push(b.as_slice_mut().expect("contiguous"));
                }
                v
            }
            Layer::Recurrent(r) => vec![
                r.w_input.as_slice_mut().expect("standard layout"),
                r.w_recurrent.as_slice_mut().expect("standard layout"),
                r.bias.as_slice_mut().expect("contiguous"),
            ],
            Layer::Tanh | Layer::Scale(_) => Vec::new(),
        }
    }
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Activations),
    Output(Array2<f64>),
    Recurrent {
        input: Activations,
        /// `steps x batch x hidden`
        hidden: Array3<f64>,
    },
}

pub(crate) fn forward(layer: &Layer, x: Activations) -> (Activations, LayerCache) {
    match layer {
        Layer::Dense(d) => {
            let mut y = x.data.dot(&d.weight);
            if let Some(b) = &d.bias {
                y += b;
            }
            let out = Activations {
                data: y,
                steps: x.steps,
            };
            (out, LayerCache::Input(x))
        }
        Layer::Tanh => {
            let y = x.data.mapv(f64::tanh);
            (
                Activations {
                    data: y.clone(),
                    steps: x.steps,
                },
                LayerCache::Output(y),
            )
        }
        Layer::Scale(sc) => {
            let y = x.data.mapv(|z| sc.apply(z));
            (
                Activations {
                    data: y,
                    steps: x.steps,
                },
                LayerCache::Input(x),
            )
        }
        Layer::Recurrent(r) => {
            let hidden = recurrent_forward(r, &x);
            let (steps, batch, h) = hidden.dim();
            let out = hidden
                .view()
                .permuted_axes([1, 0, 2])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((batch * steps, h))
                .expect("contiguous reshape");
            (
                Activations { data: out, steps },
                LayerCache::Recurrent { input: x, hidden },
            )
        }
    }
}

pub(crate) fn forward_nocache(layer: &Layer, x: Activations) -> Activations {
    match layer {
        Layer::Recurrent(_) | Layer::Dense(_) => forward(layer, x).0,
        Layer::Tanh => Activations {
            data: x.data.mapv_into(f64::tanh),
            steps: x.steps,
        },
        Layer::Scale(sc) => Activations {
            data: x.data.mapv_into(|z| sc.apply(z)),
            steps: x.steps,
        },
    }
}

/// Input rows for step `t`: the whole input when broadcast, otherwise a strided view.
fn step_input(x: &Activations, t: usize) -> ArrayView2<'_, f64> {
    if x.steps == 1 {
        x.data.view()
    } else {
        x.data.slice(s![t..; x.steps, ..])
    }
}

fn recurrent_forward(r: &Recurrent, x: &Activations) -> Array3<f64> {
    let batch = x.batch();
    let h = r.hidden();
    let steps = r.steps;
    let mut hidden = Array3::<f64>::zeros((steps, batch, h));
    let broadcast = (x.steps == 1).then(|| {
        let mut pre = x.data.dot(&r.w_input);
        pre += &r.bias;
        pre
    });
    for t in 0..steps {
        let mut a = match &broadcast {
            Some(pre) => pre.clone(),
            None => {
                let mut pre = step_input(x, t).dot(&r.w_input);
                pre += &r.bias;
                pre
            }
        };
        if t > 0 {
            let (prev, _) = hidden.view().split_at(Axis(0), t);
            general_mat_mul(1.0, &prev.index_axis(Axis(0), t - 1), &r.w_recurrent, 1.0, &mut a);
        }
        a.mapv_inplace(f64::tanh);
        hidden.index_axis_mut(Axis(0), t).assign(&a);
    }
    hidden
}

/// Gradient tensors for one layer, in [`Layer::params`] order.
pub(crate) type LayerGrads = Vec<Vec<f64>>;

pub(crate) fn backward(
    layer: &Layer,
    cache: &LayerCache,
    upstream: Activations,
    want_params: bool,
) -> (Activations, LayerGrads) {
    match (layer, cache) {
        (Layer::Dense(d), LayerCache::Input(x)) => {
            let dx = upstream.data.dot(&d.weight.t());
            let mut grads = Vec::new();
            if want_params {
                let dw = x.data.t().dot(&upstream.data);
                grads.push(row_major(dw));
                if d.bias.is_some() {
                    grads.push(upstream.data.sum_axis(Axis(0)).to_vec());
                }
            }
            (
                Activations {
                    data: dx,
                    steps: x.steps,
                },
                grads,
            )
        }
        (Layer::Tanh, LayerCache::Output(y)) => {
            let mut dx = upstream.data;
            Zip::from(&mut dx).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
            (
                Activations {
                    data: dx,
                    steps: upstream.steps,
                },
                Vec::new(),
            )
        }
        (Layer::Scale(sc), LayerCache::Input(x)) => {
            let mut dx = upstream.data;
            Zip::from(&mut dx).and(&x.data).for_each(|g, &z| *g *= sc.derivative(z));
            (
                Activations {
                    data: dx,
                    steps: x.steps,
                },
                Vec::new(),
            )
        }
        (Layer::Recurrent(r), LayerCache::Recurrent { input, hidden }) => {
            recurrent_backward(r, input, hidden, &upstream, want_params)
        }
        _ => unreachable!("layer cache does not match layer kind"),
    }
}

fn recurrent_backward(
    r: &Recurrent,
    x: &Activations,
    hidden: &Array3<f64>,
    upstream: &Activations,
    want_params: bool,
) -> (Activations, LayerGrads) {
    let (steps, batch, h) = hidden.dim();
    let n_in = r.w_input.nrows();
    let up_std = upstream.data.as_standard_layout();
    let up = up_std
        .view()
        .into_shape_with_order((batch, steps, h))
        .expect("upstream layout");
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dw_in = Array2::<f64>::zeros((n_in, h));
    let mut dw_rec = Array2::<f64>::zeros((h, h));
    let mut db = Array1::<f64>::zeros(h);
    let broadcast = x.steps == 1;
    let mut da_sum = Array2::<f64>::zeros((batch, h));
    let mut dx = if broadcast {
        Array2::zeros((0, 0))
    } else {
        Array2::zeros((batch * steps, n_in))
    };

    for t in (0..steps).rev() {
        let ht = hidden.index_axis(Axis(0), t);
        let mut da = dh_next;
        da += &up.index_axis(Axis(1), t);
        Zip::from(&mut da).and(&ht).for_each(|g, &y| *g *= 1.0 - y * y);
        if want_params {
            db += &da.sum_axis(Axis(0));
            if t > 0 {
                general_mat_mul(1.0, &hidden.index_axis(Axis(0), t - 1).t(), &da, 1.0, &mut dw_rec);
            }
            if !broadcast {
                general_mat_mul(1.0, &step_input(x, t).t(), &da, 1.0, &mut dw_in);
            }
        }
        if broadcast {
            da_sum += &da;
        } else {
            let dxt = da.dot(&r.w_input.t());
            for (b, row) in dxt.outer_iter().enumerate() {
                dx.row_mut(b * steps + t).assign(&row);
            }
        }
        dh_next = if t > 0 { da.dot(&r.w_recurrent.t()) } else { da };
    }

    if broadcast {
        dx = da_sum.dot(&r.w_input.t());
        if want_params {
            general_mat_mul(1.0, &x.data.t(), &da_sum, 1.0, &mut dw_in);
        }
    }
    let mut grads = Vec::new();
    if want_params {
        grads.push(row_major(dw_in));
        grads.push(row_major(dw_rec));
        grads.push(db.to_vec());
    }
    (
        Activations {
            data: dx,
            steps: x.steps,
        },
        grads,
    )
}

/// Flattens in row-major order regardless of the array's memory layout.
pub(crate) fn row_major(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}
