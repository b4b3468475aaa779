use ndarray::{Array2, ArrayView2};

use crate::linalg;
use crate::{Error, Result};

/// Lifted pairs and raw next states for one inner batch.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerBatchView {
    /// `m × b` lifted states at `t`.
    pub phi_t: Array2<f64>,
    /// `m × b` lifted states at `t + 1`.
    pub phi_t1: Array2<f64>,
    /// `n × b` observed states at `t + 1`.
    pub x_t1: Array2<f64>,
}

impl InnerBatchView {
    pub fn len(&self) -> usize {
        self.phi_t.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_t.ncols() == 0
    }

    fn check(&self, k: ArrayView2<f64>, v: ArrayView2<f64>) {
        let (m, b) = self.phi_t.dim();
        assert_eq!(self.phi_t1.dim(), (m, b), "lifted pair shapes differ");
        assert_eq!(self.x_t1.ncols(), b, "batch sizes differ");
        assert_eq!(k.dim(), (m, m), "K must be m x m");
        assert_eq!(v.dim(), (m, self.x_t1.nrows()), "V must be m x n");
    }
}

fn sq_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Loss and gradient with respect to `K` in one pass.
pub fn inner_loss_grad(
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    batch: &InnerBatchView,
    weight_decay: f64,
) -> (f64, Array2<f64>) {
    batch.check(k, v);
    let kp = k.dot(&batch.phi_t);
    let lifted_res = &batch.phi_t1 - &kp;
    let recon_res = &batch.x_t1 - &v.t().dot(&kp);
    let loss = sq_norm(&lifted_res) + sq_norm(&recon_res) + weight_decay * sq_norm(&k.to_owned());

    let back = lifted_res + v.dot(&recon_res);
    let mut grad = back.dot(&batch.phi_t.t()) * -2.0;
    grad.scaled_add(2.0 * weight_decay, &k);
    (loss, grad)
}

pub fn inner_loss(
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    batch: &InnerBatchView,
    weight_decay: f64,
) -> f64 {
    inner_loss_grad(k, v, batch, weight_decay).0
}

pub fn inner_grad(
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    batch: &InnerBatchView,
    weight_decay: f64,
) -> Array2<f64> {
    inner_loss_grad(k, v, batch, weight_decay).1
}

/// Exact minimizer of [`inner_loss`] over `K`.
///
/// Stationarity gives `(I + V Vᵀ) K G + wd K = C` with `G = Φ_t Φ_tᵀ` and
/// `C = (Φ_{t+1} + V X_{t+1}) Φ_tᵀ`. Both `I + V Vᵀ = Q D Qᵀ` and
/// `G = P E Pᵀ` are symmetric, so in the rotated unknown `Qᵀ K P` the system
/// decouples entrywise with divisors `D_i E_j + wd`.
pub fn inner_closed_form(
    v: ArrayView2<f64>,
    batch: &InnerBatchView,
    weight_decay: f64,
) -> Result<Array2<f64>> {
    let m = batch.phi_t.nrows();
    if v.nrows() != m || v.ncols() != batch.x_t1.nrows() {
        return Err(Error::Shape(format!(
            "V is {}x{}, expected {m}x{}",
            v.nrows(),
            v.ncols(),
            batch.x_t1.nrows()
        )));
    }
    let mut left = v.dot(&v.t());
    for i in 0..m {
        left[[i, i]] += 1.0;
    }
    let gram = batch.phi_t.dot(&batch.phi_t.t());
    let rhs = (&batch.phi_t1 + &v.dot(&batch.x_t1)).dot(&batch.phi_t.t());

    let (d, q) = linalg::sym_eigen(left.view())?;
    let (e, p) = linalg::sym_eigen(gram.view())?;
    let scale = d.iter().cloned().fold(0.0, f64::max) * e.iter().cloned().fold(0.0, f64::max)
        + weight_decay;

    let mut rotated = q.t().dot(&rhs).dot(&p);
    for ((i, j), x) in rotated.indexed_iter_mut() {
        let div = d[i] * e[j] + weight_decay;
        if !(div > 1e-13 * scale) {
            return Err(Error::Singular(format!(
                "inner normal equations are singular (divisor {div:.3e}); add weight decay or more pairs"
            )));
        }
        *x /= div;
    }
    Ok(q.dot(&rotated).dot(&p.t()))
}
