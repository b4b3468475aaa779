//! Fixed leaky echo-state reservoir and the trainable readout lift.
//!
//! State update (teacher forced on observed data):
//!
//! ```text
//! r(t) = (1 − α) r(t−1) + α f(W_in x(t) + W_res r(t−1) + b_res)
//! ```
//!
//! with `f = tanh`. The lift is `φ(t) = h(W r(t))` where only `W` is trained.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::koopman::spectral_radius;
use crate::seed::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Shape and scaling of a reservoir.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirParams {
    pub d: usize,
    /// Leaking rate in `(0, 1]`.
    pub alpha: f64,
    /// Spectral radius of `W_res` after scaling.
    pub rho_res: f64,
    pub scale_in: f64,
    pub scale_b: f64,
}

impl Default for ReservoirParams {
    fn default() -> Self {
        ReservoirParams {
            d: 256,
            alpha: 0.75,
            rho_res: 0.99,
            scale_in: 1.0,
            scale_b: 0.1,
        }
    }
}

impl ReservoirParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter(
                "reservoir size must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leaking rate must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.rho_res > 0.0 && self.rho_res < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "reservoir spectral radius must lie in (0, 1), got {}",
                self.rho_res
            )));
        }
        if !self.scale_in.is_finite() || !self.scale_b.is_finite() {
            return Err(Error::InvalidParameter(
                "reservoir scales must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// The untrained part of the model, shared by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirBank {
    pub w_in: Array2<f64>,
    pub w_res: Array2<f64>,
    pub b_res: Array1<f64>,
    pub alpha: f64,
    pub rho_res: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl ReservoirBank {
    /// Uniform `[-1, 1]` draws for `W_in`, `W_res` and `b_res`, then input and
    /// bias scaling and an exact rescale of `W_res` to `rho_res`.
    pub fn init(n: usize, params: &ReservoirParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if n == 0 {
            return Err(Error::InvalidParameter(
                "need at least one input feature".into(),
            ));
        }
        let d = params.d;
        let mut rng = seed::rng(seed, 0, 0, Stream::Reservoir);
        let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng.sample(unit))
        };
        let w_in = draw(d, n) * params.scale_in;
        let mut w_res = draw(d, d);
        let b_res = draw(d, 1).remove_axis(Axis(1)) * params.scale_b;

        let rho = spectral_radius(w_res.view())?;
        if rho == 0.0 {
            return Err(Error::Singular(
                "random reservoir matrix is nilpotent".into(),
            ));
        }
        w_res *= params.rho_res / rho;

        Ok(ReservoirBank {
            w_in,
            w_res,
            b_res,
            alpha: params.alpha,
            rho_res: params.rho_res,
            activation: Activation::Tanh,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.w_res.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn step(&self, r: ArrayView1<f64>, x: ArrayView1<f64>) -> Array1<f64> {
        let mut pre = self.w_in.dot(&x);
        pre += &self.w_res.dot(&r);
        pre += &self.b_res;
        let a = self.alpha;
        let f = self.activation;
        let mut out = r.to_owned();
        out.zip_mut_with(&pre, |ri, &p| *ri = (1.0 - a) * *ri + a * f.apply(p));
        out
    }

    /// Teacher-forced pass; column `t` of the trace is the state after
    /// consuming `values[:, t]`. `r0` defaults to zeros.
    pub fn run(
        &self,
        values: ArrayView2<f64>,
        r0: Option<ArrayView1<f64>>,
        washout: usize,
    ) -> Result<StateTrace> {
        if values.nrows() != self.n_inputs() {
            return Err(Error::Shape(format!(
                "reservoir expects {} inputs, data has {}",
                self.n_inputs(),
                values.nrows()
            )));
        }
        let d = self.size();
        let mut r = match r0 {
            Some(r0) if r0.len() != d => {
                return Err(Error::Shape(format!(
                    "initial state has length {}, expected {d}",
                    r0.len()
                )))
            }
            Some(r0) => r0.to_owned(),
            None => Array1::zeros(d),
        };
        let mut states = Array2::zeros((d, values.ncols()));
        for (t, x) in values.axis_iter(Axis(1)).enumerate() {
            r = self.step(r.view(), x);
            states.column_mut(t).assign(&r);
        }
        Ok(StateTrace { states, washout })
    }
}

/// Reservoir states over a series; the first `washout` columns are excluded
/// from every loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub states: Array2<f64>,
    pub washout: usize,
}

impl StateTrace {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }
}

/// Trainable readout `φ = h(W r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub w: Array2<f64>,
    pub activation: Activation,
}

impl Readout {
    pub fn apply(&self, r: ArrayView1<f64>) -> Array1<f64> {
        let h = self.activation;
        self.w.dot(&r).mapv(|v| h.apply(v))
    }

    pub fn apply_columns(&self, states: ArrayView2<f64>) -> Array2<f64> {
        let h = self.activation;
        let mut out = self.w.dot(&states);
        if h != Activation::Identity {
            out.mapv_inplace(|v| h.apply(v));
        }
        out
    }
}

/// Lifts the selected trace columns; indices inside the washout are rejected.
pub fn lift(readout: &Readout, trace: &StateTrace, columns: &[usize]) -> Result<Array2<f64>> {
    if let Some(&bad) = columns
        .iter()
        .find(|&&c| c < trace.washout || c >= trace.len())
    {
        return Err(Error::InvalidParameter(format!(
            "column {bad} outside the usable range {}..{}",
            trace.washout,
            trace.len()
        )));
    }
    let selected = trace.states.select(Axis(1), columns);
    Ok(readout.apply_columns(selected.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, concatenate, s};

    fn params(d: usize) -> ReservoirParams {
        ReservoirParams {
            d,
            ..ReservoirParams::default()
        }
    }

    fn scalar_bank(alpha: f64) -> ReservoirBank {
        ReservoirBank {
            w_in: array![[1.0]],
            w_res: array![[0.0]],
            b_res: array![0.0],
            alpha,
            rho_res: 0.5,
            activation: Activation::Tanh,
            seed: 0,
        }
    }

    #[test]
    fn init_hits_target_radius() {
        for seed in 0..3 {
            let bank = ReservoirBank::init(3, &params(64), seed).unwrap();
            let rho = spectral_radius(bank.w_res.view()).unwrap();
            assert!((rho - 0.99).abs() < 1e-9, "rho = {rho}");
            assert!(bank.w_in.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn init_is_deterministic_and_validates() {
        let a = ReservoirBank::init(2, &params(16), 5).unwrap();
        let b = ReservoirBank::init(2, &params(16), 5).unwrap();
        assert_eq!(a, b);
        let zero_bias = ReservoirParams {
            scale_b: 0.0,
            ..params(16)
        };
        assert!(ReservoirBank::init(2, &zero_bias, 5)
            .unwrap()
            .b_res
            .iter()
            .all(|&v| v == 0.0));
        assert!(ReservoirBank::init(2, &params(0), 5).is_err());
        assert!(ReservoirBank::init(
            2,
            &ReservoirParams {
                rho_res: 1.0,
                ..params(8)
            },
            5
        )
        .is_err());
        assert!(ReservoirBank::init(
            2,
            &ReservoirParams {
                alpha: 0.0,
                ..params(8)
            },
            5
        )
        .is_err());
    }

    #[test]
    fn scalar_step() {
        let bank = scalar_bank(0.5);
        let r = bank.step(array![0.0].view(), array![1.0].view());
        assert!((r[0] - 0.380_797_077_977_882_3).abs() < 1e-15);
        let r = bank.step(array![0.0].view(), array![0.0].view());
        assert_eq!(r[0], 0.0);
        let full = scalar_bank(1.0);
        let r = full.step(array![0.3].view(), array![0.7].view());
        assert_eq!(r[0], 0.7f64.tanh());
    }

    #[test]
    fn step_matches_scalar_loop() {
        let bank = ReservoirBank::init(
            3,
            &ReservoirParams {
                d: 3,
                alpha: 0.6,
                ..params(3)
            },
            17,
        )
        .unwrap();
        let r = array![0.2, -0.4, 0.9];
        let x = array![1.5, -0.3, 0.25];
        let got = bank.step(r.view(), x.view());
        for i in 0..3 {
            let mut pre = bank.b_res[i];
            for j in 0..3 {
                pre += bank.w_in[[i, j]] * x[j];
            }
            for j in 0..3 {
                pre += bank.w_res[[i, j]] * r[j];
            }
            let expected = (1.0 - bank.alpha) * r[i] + bank.alpha * pre.tanh();
            assert!((got[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn run_single_step_and_range() {
        let bank = ReservoirBank::init(
            2,
            &ReservoirParams {
                alpha: 1.0,
                ..params(32)
            },
            3,
        )
        .unwrap();
        let data = Array2::from_shape_fn((2, 50), |(i, t)| {
            ((i + 1) as f64 * t as f64 * 0.37).sin() * 3.0
        });
        let trace = bank.run(data.view(), None, 0).unwrap();
        assert!(trace.states.iter().all(|v| v.abs() < 1.0));
        let one = bank.run(data.slice(s![.., ..1]), None, 0).unwrap();
        let expected = bank.step(Array1::zeros(32).view(), data.column(0));
        assert_eq!(one.states.column(0), expected);
        assert_eq!(trace, bank.run(data.view(), None, 0).unwrap());
        assert!(bank.run(Array2::zeros((3, 5)).view(), None, 0).is_err());
    }

    #[test]
    fn lift_examples() {
        let states = Array2::from_shape_fn((3, 20), |(i, t)| (i as f64 - 1.0) * 0.1 * t as f64);
        let trace = StateTrace {
            states: states.clone(),
            washout: 10,
        };
        let eye = Readout {
            w: Array2::eye(3),
            activation: Activation::Identity,
        };
        let cols = [10, 15, 19];
        assert_eq!(
            lift(&eye, &trace, &cols).unwrap(),
            states.select(Axis(1), &cols)
        );

        let stacked = concatenate![Axis(0), Array2::<f64>::eye(3), -Array2::<f64>::eye(3)];
        let ro = Readout {
            w: stacked,
            activation: Activation::Identity,
        };
        let phi = lift(&ro, &trace, &cols).unwrap();
        let r = states.select(Axis(1), &cols);
        assert_eq!(phi.slice(s![..3, ..]), r);
        assert_eq!(phi.slice(s![3.., ..]), -&r);

        let tanh = Readout {
            w: Array2::eye(3) * 5.0,
            activation: Activation::Tanh,
        };
        assert!(lift(&tanh, &trace, &cols)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1.0));
        assert!(lift(&eye, &trace, &[9]).is_err());
    }
}
