use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd|adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Optimizer bound to a fixed subset of a [`ParamStore`].
///
/// `step` never zeroes gradients; that stays with the caller.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    params: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: Vec<ParamId>, store: &ParamStore) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f64>> = params.iter().map(|&p| vec![0.0; store.get(p).len()]).collect();
                (zeros.clone(), zeros)
            }
        };
        Self {
            kind,
            learning_rate,
            params,
            m,
            v,
            t: 0,
        }
    }

    pub fn sgd(learning_rate: f64, params: Vec<ParamId>, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, params, store)
    }

    pub fn adam(learning_rate: f64, params: Vec<ParamId>, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, params, store)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.kind == OptimizerKind::Adam {
            for (i, &p) in self.params.iter().enumerate() {
                if self.m[i].len() != store.get(p).len() {
                    return Err(Error::usage(format!(
                        "adam state for `{}` has {} entries, parameter has {}",
                        store.name(p),
                        self.m[i].len(),
                        store.get(p).len()
                    )));
                }
            }
        }
        self.t += 1;
        let lr = self.learning_rate;
        let t = self.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, &p) in self.params.iter().enumerate() {
            let tensor = store.get_mut(p);
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor.grad().to_vec();
            let values = tensor.values_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, g) in values.iter_mut().zip(&grad) {
                        *x -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..values.len() {
                        let g = grad[j];
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        values[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;

    fn store_with(theta: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::param(vec![1], vec![theta]).unwrap());
        store.get_mut(id).grad_mut()[0] = grad;
        (store, id)
    }

    #[test]
    fn sgd_unit_rate() {
        let (mut store, id) = store_with(2.0, 0.5);
        let mut opt = Optimizer::sgd(1.0, vec![id], &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).values(), &[1.5]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let (mut store, id) = store_with(2.0, 0.0);
            let mut opt = Optimizer::new(kind, 0.1, vec![id], &store);
            for _ in 0..5 {
                opt.step(&mut store).unwrap();
            }
            assert_eq!(store.get(id).values(), &[2.0], "{kind}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let (mut store, id) = store_with(1.0, 0.2);
        let mut opt = Optimizer::adam(0.001, vec![id], &store);
        opt.step(&mut store).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
        let expected = 1.0 - 0.001 * 0.2 / (0.2 + ADAM_EPS);
        assert!((store.get(id).values()[0] - expected).abs() < 1e-15);
        assert!(((1.0 - store.get(id).values()[0]) - 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_detects_shape_mismatch() {
        let (store, id) = store_with(1.0, 0.2);
        let mut opt = Optimizer::adam(0.001, vec![id], &store);
        let mut other = ParamStore::new();
        other.add("theta", Tensor::param(vec![3], vec![0.0; 3]).unwrap());
        assert!(matches!(opt.step(&mut other), Err(Error::Usage(_))));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let (mut store, id) = store_with(2.0, 0.5);
        store.get_mut(id).set_requires_grad(false);
        let mut opt = Optimizer::sgd(1.0, vec![id], &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).values(), &[2.0]);
    }
}
