use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: MlpGrads<T>,
    pub second_moment: MlpGrads<T>,
    pub step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Mlp<T>) -> Self {
        AdamState {
            first_moment: MlpGrads::zeros_like(net),
            second_moment: MlpGrads::zeros_like(net),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Non-finite gradients abort the update and leave both `params` and `state`
/// untouched.
pub fn adam_step<T: Scalar>(
    params: &mut Mlp<T>,
    grads: &MlpGrads<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grads.same_shapes(params) || !state.first_moment.same_shapes(params) {
        return Err(Error::Shape("adam: gradient/state shapes differ from parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("adam: non-finite gradient entry".into()));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);

    let update = |p: &mut T, g: &T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * *g;
        *v = b2 * *v + (one - b2) * *g * *g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    };

    let layers = params.num_layers();
    for l in 0..layers {
        Zip::from(&mut params.weights_mut()[l])
            .and(&grads.weights[l])
            .and(&mut state.first_moment.weights[l])
            .and(&mut state.second_moment.weights[l])
            .for_each(|p, g, m, v| update(p, g, m, v));
        Zip::from(&mut params.biases_mut()[l])
            .and(&grads.biases[l])
            .and(&mut state.first_moment.biases[l])
            .and(&mut state.second_moment.biases[l])
            .for_each(|p, g, m, v| update(p, g, m, v));
    }
    Ok(())
}

/// Adam for a single scalar parameter (entropy temperature).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub step_count: u64,
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, cfg: &AdamConfig) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Numeric("adam: non-finite scalar gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad;
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - cfg.beta1.powi(t));
        let v_hat = self.v / (1.0 - cfg.beta2.powi(t));
        *param -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;

    fn scalar_net(w: f64) -> Mlp<f64> {
        Mlp::from_parts(Activation::Relu, vec![array![[w]]], vec![array![0.0]]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = Mlp::<f64>::init(&[3, 4, 2], Activation::Relu, 8).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net);
        let g = MlpGrads::zeros_like(&net);
        adam_step(&mut net, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut net = scalar_net(0.5);
        let mut st = AdamState::new(&net);
        let mut g = MlpGrads::zeros_like(&net);
        g.weights[0][[0, 0]] = 1.0;
        let cfg = AdamConfig::with_lr(1e-4);
        adam_step(&mut net, &g, &mut st, &cfg).unwrap();
        let delta = net.weights()[0][[0, 0]] - 0.5;
        let expected = -1e-4 * (1.0 / (1.0 + 1e-8));
        assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
    }

    #[test]
    fn minimizes_quadratic_like_scalar_recurrence() {
        // f(w) = w^2, gradient 2w; compare with an independent scalar Adam loop.
        let cfg = AdamConfig::with_lr(0.01);
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(&net);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let mut g = MlpGrads::zeros_like(&net);
            g.weights[0][[0, 0]] = 2.0 * net.weights()[0][[0, 0]];
            adam_step(&mut net, &g, &mut st, &cfg).unwrap();

            let gw = 2.0 * w;
            m = 0.9 * m + 0.1 * gw;
            v = 0.999 * v + 0.001 * gw * gw;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        let got = net.weights()[0][[0, 0]];
        assert!((got - w).abs() < 1e-12);
        assert!(got.abs() < 1.0);
        assert_eq!(st.step_count, 100);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = scalar_net(0.5);
        let mut st = AdamState::new(&net);
        let mut g = MlpGrads::zeros_like(&net);
        g.weights[0][[0, 0]] = f64::NAN;
        let before = (net.clone(), st.clone());
        let err = adam_step(&mut net, &g, &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!((net, st), before);
    }
}
