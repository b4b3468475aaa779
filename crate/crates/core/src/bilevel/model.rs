use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::Uniform;

use crate::koopman::project_spectral;
use crate::reservoir::{Activation, Readout};
use crate::seed::{self, Stream};
use crate::{Error, Result};

/// The trainable triple: readout `W` (`m × d`), Koopman operator `K`
/// (`m × m`) and reconstruction `V` (`m × n`, predictions are `Vᵀ φ`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReKoModel {
    pub w: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub readout: Activation,
}

impl ReKoModel {
    /// Each matrix is drawn uniform in `±1/sqrt(fan_in)`; `K` is then
    /// projected onto the spectral-radius ball.
    pub fn init(
        n: usize,
        d: usize,
        m: usize,
        readout: Activation,
        rho_target: f64,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || d == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "model dimensions must be positive (n={n}, d={d}, m={m})"
            )));
        }
        let mut rng = seed::rng(seed, 0, 0, Stream::ModelInit);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).expect("valid range");
            Array2::from_shape_simple_fn((rows, cols), || rng.sample(dist))
        };
        let w = draw(m, d, d);
        let k = draw(m, m, m);
        let v = draw(m, n, m);
        let k = project_spectral(k.view(), rho_target)?;
        Ok(ReKoModel { w, k, v, readout })
    }

    pub fn n_features(&self) -> usize {
        self.v.ncols()
    }

    pub fn reservoir_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn lifted_dim(&self) -> usize {
        self.k.nrows()
    }

    /// Number of trainable values exchanged per round: `m·d + m² + m·n`.
    pub fn param_count(&self) -> usize {
        self.w.len() + self.k.len() + self.v.len()
    }

    pub fn readout(&self) -> Readout {
        Readout {
            w: self.w.clone(),
            activation: self.readout,
        }
    }

    pub fn lift(&self, r: ArrayView1<f64>) -> ndarray::Array1<f64> {
        let h = self.readout;
        self.w.dot(&r).mapv(|x| h.apply(x))
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.k.iter())
            .chain(self.v.iter())
            .all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::spectral_radius;

    #[test]
    fn parameter_count_identity() {
        let model = ReKoModel::init(25, 256, 128, Activation::Identity, 0.99, 3).unwrap();
        assert_eq!(model.param_count(), 128 * 256 + 128 * 128 + 128 * 25);
        assert_eq!(model.param_count(), 52_352);
    }

    #[test]
    fn init_is_feasible_and_seeded() {
        let a = ReKoModel::init(3, 16, 8, Activation::Identity, 0.5, 11).unwrap();
        let b = ReKoModel::init(3, 16, 8, Activation::Identity, 0.5, 11).unwrap();
        let c = ReKoModel::init(3, 16, 8, Activation::Identity, 0.5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(spectral_radius(a.k.view()).unwrap() <= 0.5 + 1e-8);
        let bound = 1.0 / 16f64.sqrt();
        assert!(a.w.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(ReKoModel::init(0, 4, 4, Activation::Identity, 0.9, 0).is_err());
    }
}
