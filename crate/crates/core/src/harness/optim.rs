//! First-order optimizers and an exact solver for quadratic objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd { lr: f64 },
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// One Newton step per epoch on the whole training set. Only for affine
    /// estimators with losses quadratic in the parameters (fixed random draws).
    ExactQuadratic,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam { lr: default_lr(), beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerSpec::Sgd { lr } if !(lr > 0.0) => Err(Error::param("lr", "must be positive")),
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                if !(lr > 0.0) {
                    return Err(Error::param("lr", "must be positive"));
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::param("beta", "must lie in [0, 1)"));
                }
                if !(eps > 0.0) {
                    return Err(Error::param("eps", "must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Stateful first-order optimizer.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, num_params: usize) -> Result<Self> {
        spec.validate()?;
        if spec == OptimizerSpec::ExactQuadratic {
            return Err(Error::Capability("the exact quadratic solver does not take gradient steps".into()));
        }
        Ok(Optimizer { spec, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.spec {
            OptimizerSpec::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            OptimizerSpec::ExactQuadratic => unreachable!("rejected in new"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        for spec in [OptimizerSpec::Sgd { lr: 0.1 }, OptimizerSpec::default()] {
            let mut o = Optimizer::new(spec, 3).unwrap();
            let mut p = vec![1.0, -2.0, 0.5];
            o.step(&mut p, &[0.0; 3]);
            assert_eq!(p, vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn adam_first_step_uses_bias_corrected_moments() {
        let mut o = Optimizer::new(OptimizerSpec::adam(0.01), 2).unwrap();
        let mut p = vec![0.0, 0.0];
        let g = [0.3, -4.0];
        o.step(&mut p, &g);
        for i in 0..2 {
            let expect = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(Optimizer::new(OptimizerSpec::Sgd { lr: 0.0 }, 1).is_err());
    }
}
