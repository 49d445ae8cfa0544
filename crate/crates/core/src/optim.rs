//! Adam and RMSProp over a [`ParamStore`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Rmsprop {
        lr: f64,
        rho: f64,
        eps: f64,
    },
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        OptimConfig::Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimConfig::Rmsprop { lr, rho: 0.9, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimConfig::Adam { lr, .. } | OptimConfig::Rmsprop { lr, .. } => lr,
        }
    }
}

/// Moment accumulators for one parameter. `second` is the mean-square
/// accumulator for RMSProp; `first` stays zero there.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    pub t: u64,
    pub slots: BTreeMap<String, Moments>,
}

impl OptimState {
    pub fn new(config: OptimConfig, params: &ParamStore) -> Self {
        let slots = params
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    Moments {
                        first: vec![0.0; t.len()],
                        second: vec![0.0; t.len()],
                    },
                )
            })
            .collect();
        OptimState { config, t: 0, slots }
    }

    /// Applies one update with whichever rule the state was built for.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        check_coverage(params, grads, self)?;
        self.t += 1;
        match self.config {
            OptimConfig::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (name, p) in params.iter_mut() {
                    let g = grads[name].data();
                    let m = self.slots.get_mut(name).expect("slot checked");
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g[i];
                        m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = m.first[i] / bc1;
                        let vhat = m.second[i] / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            OptimConfig::Rmsprop { lr, rho, eps } => {
                for (name, p) in params.iter_mut() {
                    let g = grads[name].data();
                    let m = self.slots.get_mut(name).expect("slot checked");
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        m.second[i] = rho * m.second[i] + (1.0 - rho) * g[i] * g[i];
                        *w -= lr * g[i] / (m.second[i].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_coverage(params: &ParamStore, grads: &BTreeMap<String, Tensor>, state: &OptimState) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let slot = state
            .slots
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no optimizer slot for `{name}`")))?;
        if g.len() != p.len() || slot.second.len() != p.len() {
            return Err(Error::Shape {
                op: "optimizer step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, state: &mut OptimState) -> Result<()> {
    if !matches!(state.config, OptimConfig::Adam { .. }) {
        return Err(Error::Invalid("adam_step on a non-Adam state".into()));
    }
    state.step(params, grads)
}

pub fn rmsprop_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
) -> Result<()> {
    if !matches!(state.config, OptimConfig::Rmsprop { .. }) {
        return Err(Error::Invalid("rmsprop_step on a non-RMSProp state".into()));
    }
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(x));
        p
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = scalar_store(0.0);
        let mut s = OptimState::new(OptimConfig::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, &p);
        adam_step(&mut p, &grad(1.0), &mut s).unwrap();
        let delta = p.get("x").unwrap().item();
        assert!((delta + 1e-3).abs() < 1e-6, "{delta}");
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for cfg in [OptimConfig::adam(1e-3), OptimConfig::rmsprop(1e-2)] {
            let mut p = scalar_store(1.5);
            let mut s = OptimState::new(cfg, &p);
            for _ in 0..10 {
                s.step(&mut p, &grad(0.0)).unwrap();
            }
            assert_eq!(p.get("x").unwrap().item(), 1.5);
            assert_eq!(s.t, 10);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = scalar_store(0.0);
        let mut s = OptimState::new(OptimConfig::Adam { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, &p);
        for _ in 0..100 {
            let x = p.get("x").unwrap().item();
            adam_step(&mut p, &grad(2.0 * (x - 2.0)), &mut s).unwrap();
        }
        let x = p.get("x").unwrap().item();
        assert!((x - 2.0).abs() < 0.05, "{x}");
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = scalar_store(0.0);
        let mut s = OptimState::new(OptimConfig::Rmsprop { lr: 0.01, rho: 0.9, eps: 1e-8 }, &p);
        rmsprop_step(&mut p, &grad(1.0), &mut s).unwrap();
        let delta = p.get("x").unwrap().item().abs();
        let expected = 0.01 / 0.1f64.sqrt();
        assert!((delta - expected).abs() / expected < 0.01);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = scalar_store(0.0);
        p.insert("y", Tensor::scalar(0.0));
        let mut s = OptimState::new(OptimConfig::adam(1e-3), &p);
        let err = s.step(&mut p, &grad(1.0)).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "y"));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn wrong_rule_is_rejected() {
        let mut p = scalar_store(0.0);
        let mut s = OptimState::new(OptimConfig::adam(1e-3), &p);
        assert!(rmsprop_step(&mut p, &grad(1.0), &mut s).is_err());
    }
}
