//! JSON model format: layer kinds, shapes, row-major weights, scale constants.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::layer::{Dense, Layer, Recurrent, Scale, ScaleKind};
use super::Network;
use crate::error::{Error, Result};

const FORMAT: &str = "modelpoint-network";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LayerDoc {
    Dense {
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Option<Vec<f64>>,
    },
    Recurrent {
        inputs: usize,
        hidden: usize,
        steps: usize,
        w_input: Vec<f64>,
        w_recurrent: Vec<f64>,
        bias: Vec<f64>,
    },
    Tanh,
    Scale {
        mode: ScaleKind,
        min: f64,
        max: f64,
    },
}

#[derive(Serialize)]
struct NetworkDoc {
    format: &'static str,
    input_dim: usize,
    layers: Vec<LayerDoc>,
}

fn to_doc(layer: &Layer) -> LayerDoc {
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
    match layer {
        Layer::Dense(d) => LayerDoc::Dense {
            inputs: d.weight.nrows(),
            outputs: d.weight.ncols(),
            weight: flat(&d.weight),
            bias: d.bias.as_ref().map(|b| b.to_vec()),
        },
        Layer::Recurrent(r) => LayerDoc::Recurrent {
            inputs: r.w_input.nrows(),
            hidden: r.hidden(),
            steps: r.steps,
            w_input: flat(&r.w_input),
            w_recurrent: flat(&r.w_recurrent),
            bias: r.bias.to_vec(),
        },
        Layer::Tanh => LayerDoc::Tanh,
        Layer::Scale(s) => LayerDoc::Scale {
            mode: s.kind,
            min: s.min,
            max: s.max,
        },
    }
}

pub(crate) fn to_value(net: &Network) -> Value {
    let doc = NetworkDoc {
        format: FORMAT,
        input_dim: net.input_dim(),
        layers: net.layers().iter().map(to_doc).collect(),
    };
    serde_json::to_value(doc).expect("network serializes")
}

/// Pretty JSON document; floats are written in shortest round-trip form.
pub fn serialize(net: &Network) -> String {
    serde_json::to_string_pretty(&to_value(net)).expect("network serializes")
}

fn matrix(layer: usize, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<Array2<f64>> {
    let len = data.len();
    Array2::from_shape_vec((rows, cols), data).map_err(|_| {
        Error::Shape(format!(
            "layer {layer}: `{name}` has {len} values, expected {rows} x {cols}"
        ))
    })
}

fn vector(layer: usize, name: &str, len: usize, data: Vec<f64>) -> Result<Array1<f64>> {
    if data.len() != len {
        return Err(Error::Shape(format!(
            "layer {layer}: `{name}` has {} values, expected {len}",
            data.len()
        )));
    }
    Ok(Array1::from(data))
}

fn from_doc(i: usize, doc: LayerDoc) -> Result<Layer> {
    Ok(match doc {
        LayerDoc::Dense {
            inputs,
            outputs,
            weight,
            bias,
        } => Layer::Dense(Dense {
            weight: matrix(i, "weight", inputs, outputs, weight)?,
            bias: bias.map(|b| vector(i, "bias", outputs, b)).transpose()?,
        }),
        LayerDoc::Recurrent {
            inputs,
            hidden,
            steps,
            w_input,
            w_recurrent,
            bias,
        } => Layer::Recurrent(Recurrent {
            w_input: matrix(i, "w_input", inputs, hidden, w_input)?,
            w_recurrent: matrix(i, "w_recurrent", hidden, hidden, w_recurrent)?,
            bias: vector(i, "bias", hidden, bias)?,
            steps,
        }),
        LayerDoc::Tanh => Layer::Tanh,
        LayerDoc::Scale { mode, min, max } => {
            if max.is_nan() || min.is_nan() || max <= min {
                return Err(Error::ModelParse {
                    layer: Some(i),
                    msg: format!("scale needs max > min, got [{min}, {max}]"),
                });
            }
            Layer::Scale(Scale { kind: mode, min, max })
        }
    })
}

pub(crate) fn from_value(v: &Value) -> Result<Network> {
    let parse = |msg: String| Error::ModelParse { layer: None, msg };
    let obj = v.as_object().ok_or_else(|| parse("expected a JSON object".into()))?;
    let input_dim = obj
        .get("input_dim")
        .ok_or_else(|| parse("missing field `input_dim`".into()))?
        .as_u64()
        .ok_or_else(|| parse("`input_dim` must be a non-negative integer".into()))? as usize;
    let layers = obj
        .get("layers")
        .ok_or_else(|| parse("missing field `layers`".into()))?
        .as_array()
        .ok_or_else(|| parse("`layers` must be an array".into()))?;
    let layers = layers
        .iter()
        .enumerate()
        .map(|(i, lv)| {
            let doc: LayerDoc = serde_json::from_value(lv.clone()).map_err(|e| Error::ModelParse {
                layer: Some(i),
                msg: e.to_string(),
            })?;
            from_doc(i, doc)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(input_dim, layers)
}

pub fn deserialize(text: &str) -> Result<Network> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::ModelParse {
        layer: None,
        msg: e.to_string(),
    })?;
    from_value(&v)
}
