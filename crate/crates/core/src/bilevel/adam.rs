use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Array2<f64>,
    pub second_moment: Array2<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(shape: (usize, usize), config: AdamConfig) -> Self {
        OptimizerState {
            first_moment: Array2::zeros(shape),
            second_moment: Array2::zeros(shape),
            step_count: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(state: &mut OptimizerState, param: &mut Array2<f64>, grad: ArrayView2<f64>) {
    assert_eq!(
        param.dim(),
        grad.dim(),
        "parameter and gradient shapes differ"
    );
    assert_eq!(
        param.dim(),
        state.first_moment.dim(),
        "optimizer state shape differs"
    );
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    Zip::from(param)
        .and(&mut state.first_moment)
        .and(&mut state.second_moment)
        .and(grad)
        .for_each(|p, m, v, &g| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}
