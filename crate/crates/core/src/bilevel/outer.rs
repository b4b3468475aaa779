use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;

use crate::koopman::mode_factor_table;
use crate::reservoir::Activation;

/// One outer-problem trajectory: the reservoir state at its first step and
/// the `n × H` targets `y_0 .. y_{H−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSample {
    pub r0: Array1<f64>,
    pub targets: Array2<f64>,
}

/// How a lifted initial state is carried forward `j` steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagator {
    /// Mode decomposition: `z_j = Re(λ^j) ⊙ φ0`; column `j` of the table
    /// holds `Re(λ^j)`.
    Modes(Array2<f64>),
    /// Nested operator: `z_j = K^j φ0`.
    Power(Array2<f64>),
}

impl Propagator {
    pub fn modes(lambdas: &[Complex64], horizon: usize) -> Self {
        Propagator::Modes(mode_factor_table(lambdas, horizon))
    }

    pub fn dim(&self) -> usize {
        match self {
            Propagator::Modes(f) => f.nrows(),
            Propagator::Power(k) => k.nrows(),
        }
    }

    /// `m × horizon` matrix whose column `j` is `z_j`.
    pub fn propagate(&self, phi0: ArrayView1<f64>, horizon: usize) -> Array2<f64> {
        match self {
            Propagator::Modes(f) => {
                assert!(
                    horizon <= f.ncols(),
                    "horizon {horizon} exceeds the mode table"
                );
                let mut z = f.slice(ndarray::s![.., ..horizon]).to_owned();
                for (mut row, &p) in z.axis_iter_mut(Axis(0)).zip(phi0.iter()) {
                    row *= p;
                }
                z
            }
            Propagator::Power(k) => {
                let mut z = Array2::zeros((phi0.len(), horizon));
                let mut cur = phi0.to_owned();
                for j in 0..horizon {
                    if j > 0 {
                        cur = k.dot(&cur);
                    }
                    z.column_mut(j).assign(&cur);
                }
                z
            }
        }
    }

    /// Adjoint of [`Self::propagate`]: `Σ_j (∂z_j/∂φ0)ᵀ g_j`.
    fn pull_back(&self, g: ArrayView2<f64>) -> Array1<f64> {
        let horizon = g.ncols();
        match self {
            Propagator::Modes(f) => {
                let f = f.slice(ndarray::s![.., ..horizon]);
                (&f * &g).sum_axis(Axis(1))
            }
            Propagator::Power(k) => {
                // Horner: Σ_j (Kᵀ)^j g_j.
                let mut acc = g.column(horizon - 1).to_owned();
                for j in (0..horizon - 1).rev() {
                    acc = k.t().dot(&acc) + g.column(j);
                }
                acc
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterGrad {
    pub loss: f64,
    pub grad_w: Array2<f64>,
    pub grad_v: Array2<f64>,
}

fn sq_norm<'a>(a: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().map(|x| x * x).sum()
}

/// Outer loss and its gradients with respect to `W` and `V`.
///
/// With `e_j = y_j − Vᵀ z_j`: `∂/∂V = −2 Σ z_j e_jᵀ`, the lifted-state
/// gradient pulls `−2 V e_j` back through the propagator, and the chain rule
/// through `h` gives `∂/∂W = (g_φ0 ⊙ h′(W r0)) r0ᵀ`.
pub fn outer_loss_grad<'a>(
    w: ArrayView2<f64>,
    v: ArrayView2<f64>,
    propagator: &Propagator,
    samples: impl IntoIterator<Item = &'a OuterSample>,
    readout: Activation,
    weight_decay: f64,
) -> OuterGrad {
    let (m, d) = w.dim();
    assert_eq!(v.nrows(), m, "V must have m rows");
    assert_eq!(propagator.dim(), m, "propagator dimension differs from m");

    let mut loss = 0.0;
    let mut grad_v = Array2::zeros(v.raw_dim());
    let mut pre_grads: Vec<f64> = Vec::new();
    let mut states: Vec<f64> = Vec::new();
    let mut count = 0;

    for sample in samples {
        assert_eq!(sample.r0.len(), d, "reservoir state length differs from W");
        let horizon = sample.targets.ncols();
        let pre = w.dot(&sample.r0);
        let phi0 = pre.mapv(|x| readout.apply(x));
        let z = propagator.propagate(phi0.view(), horizon);
        let err = &sample.targets - &v.t().dot(&z);
        loss += sq_norm(err.iter());

        grad_v -= &(z.dot(&err.t()) * 2.0);
        let back = v.dot(&err) * -2.0;
        let g_phi = propagator.pull_back(back.view());
        pre_grads.extend(
            g_phi
                .iter()
                .zip(pre.iter())
                .map(|(g, &p)| g * readout.derivative(p)),
        );
        states.extend(sample.r0.iter());
        count += 1;
    }

    // Stack per-sample factors so ∂/∂W is a single m×B by B×d product.
    let mut grad_w = if count > 0 {
        let g = Array2::from_shape_vec((count, m), pre_grads).expect("consistent lengths");
        let r = Array2::from_shape_vec((count, d), states).expect("consistent lengths");
        g.t().dot(&r)
    } else {
        Array2::zeros((m, d))
    };

    loss += weight_decay * (sq_norm(w.iter()) + sq_norm(v.iter()));
    grad_w.scaled_add(2.0 * weight_decay, &w);
    grad_v.scaled_add(2.0 * weight_decay, &v);
    OuterGrad {
        loss,
        grad_w,
        grad_v,
    }
}

pub fn outer_loss<'a>(
    w: ArrayView2<f64>,
    v: ArrayView2<f64>,
    propagator: &Propagator,
    samples: impl IntoIterator<Item = &'a OuterSample>,
    readout: Activation,
    weight_decay: f64,
) -> f64 {
    outer_loss_grad(w, v, propagator, samples, readout, weight_decay).loss
}

pub fn outer_grad<'a>(
    w: ArrayView2<f64>,
    v: ArrayView2<f64>,
    propagator: &Propagator,
    samples: impl IntoIterator<Item = &'a OuterSample>,
    readout: Activation,
    weight_decay: f64,
) -> (Array2<f64>, Array2<f64>) {
    let g = outer_loss_grad(w, v, propagator, samples, readout, weight_decay);
    (g.grad_w, g.grad_v)
}
