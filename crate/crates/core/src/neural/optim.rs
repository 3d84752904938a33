use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    FixedStep { lr: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam(0.001)
    }
}

/// Optimizer state with moment buffers shaped like the parameter tensors.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step_count: u64,
    pub epoch: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(optimizer: OptimizerKind, shapes: &[usize], seed: u64) -> Self {
        let buffers = || shapes.iter().map(|&n| vec![0.0; n]).collect();
        let adam = matches!(optimizer, OptimizerKind::Adam { .. });
        Self {
            optimizer,
            first: if adam { buffers() } else { Vec::new() },
            second: if adam { buffers() } else { Vec::new() },
            step_count: 0,
            epoch: 0,
            seed,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient tensor counts differ");
        self.step_count += 1;
        match self.optimizer {
            OptimizerKind::FixedStep { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    assert_eq!(p.len(), m.len(), "moment buffer shape mismatch");
                    for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
