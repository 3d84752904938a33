use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
}

impl LossKind {
    /// Loss value for one sample, accumulating `scale * dloss/dpred` into `grad`.
    pub(crate) fn accumulate(self, pred: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let n = pred.len() as f64;
        let mut total = 0.0;
        for ((p, t), g) in pred.iter().zip(target).zip(grad.iter_mut()) {
            let d = p - t;
            match self {
                LossKind::Mse => {
                    total += d * d;
                    *g += scale * 2.0 * d / n;
                }
                LossKind::Mae => {
                    total += d.abs();
                    // subgradient 0 at ties
                    *g += scale
                        * if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                        / n;
                }
            }
        }
        total / n
    }
}

/// Mean squared or mean absolute error and its gradient with respect to `pred`.
pub fn loss(kind: LossKind, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "loss needs equal lengths");
    let mut grad = vec![0.0; pred.len()];
    let value = kind.accumulate(pred, target, 1.0, &mut grad);
    (value, grad)
}
