use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, Scalar, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }
}

/// Applies SGD or bias-corrected Adam updates; Adam moments live here and
/// persist across steps.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter from its gradient buffer. All parameters must
    /// carry a gradient.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(TensorError::Usage(format!("parameter {:?} has no gradient", p.name)));
        }
        let lr = self.config.lr;
        self.steps += 1;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let g: Vec<f64> = p.tensor.grad().expect("checked").iter().map(|v| v.as_f64()).collect();
                    for (w, g) in p.tensor.data_mut().iter_mut().zip(g) {
                        *w = T::from_f64(w.as_f64() - lr * g);
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
                    self.second = self.first.clone();
                }
                let (b1, b2) = self.config.betas;
                let c1 = 1.0 - b1.powi(self.steps as i32);
                let c2 = 1.0 - b2.powi(self.steps as i32);
                let eps = self.config.eps;
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let g: Vec<f64> = p.tensor.grad().expect("checked").iter().map(|v| v.as_f64()).collect();
                    for (((w, g), m), v) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        *w = T::from_f64(w.as_f64() - update);
                    }
                }
            }
        }
        Ok(())
    }
}
