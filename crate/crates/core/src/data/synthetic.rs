//! Ground-truth data: a stable linear system with injected anomaly segments.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

use super::Dataset;
use crate::koopman::spectral_radius;
use crate::seed::{self, Stream};
use crate::{Error, Result};

/// Expected number of steps in one anomaly segment.
pub const MEAN_SEGMENT_LEN: f64 = 5.0;

const BURN_IN: usize = 200;

/// `x(t+1) = A x(t) + ε(t)` with `ρ(A)` fixed by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Array2<f64>,
}

impl LinearSystem {
    /// Gaussian random `A` rescaled so that its spectral radius is `rho`.
    pub fn random<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one feature".into()));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "system spectral radius must lie in (0, 1), got {rho}"
            )));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let mut a =
            Array2::from_shape_simple_fn((n, n), || scale * rng.sample::<f64, _>(StandardNormal));
        let current = spectral_radius(a.view())?;
        if current == 0.0 {
            return Err(Error::Singular("random system matrix is nilpotent".into()));
        }
        a *= rho / current;
        Ok(LinearSystem { a })
    }

    /// Simulates `len` steps after a burn-in from the zero state.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        len: usize,
        noise_std: f64,
        rng: &mut R,
    ) -> Array2<f64> {
        let n = self.a.nrows();
        let mut x = Array1::<f64>::zeros(n);
        let mut out = Array2::zeros((n, len));
        for t in 0..BURN_IN + len {
            let noise = Array1::from_shape_simple_fn(n, || {
                noise_std * rng.sample::<f64, _>(StandardNormal)
            });
            x = self.a.dot(&x) + noise;
            if t >= BURN_IN {
                out.column_mut(t - BURN_IN).assign(&x);
            }
        }
        out
    }
}

/// Adds anomaly segments to `values` in place and returns the step labels.
///
/// Segments start with a probability chosen so that the expected labeled
/// fraction is `rate`; their lengths are geometric with mean
/// [`MEAN_SEGMENT_LEN`]. Every step inside a segment gets a spike of
/// `magnitude` feature standard deviations with a random sign on one random
/// feature. Segments are separated by at least one normal step.
pub fn inject_anomalies<R: Rng + ?Sized>(
    values: &mut Array2<f64>,
    rate: f64,
    magnitude: f64,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if !(0.0..0.5).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "anomaly rate must lie in [0, 0.5), got {rate}"
        )));
    }
    if !magnitude.is_finite() {
        return Err(Error::InvalidParameter(
            "anomaly magnitude must be finite".into(),
        ));
    }
    let (n, len) = values.dim();
    let mut labels = vec![0u8; len];
    if rate == 0.0 {
        return Ok(labels);
    }
    let std = values.std_axis(Axis(1), 0.0);
    let start_prob = rate / (MEAN_SEGMENT_LEN * (1.0 - rate));
    let lengths = Geometric::new(1.0 / MEAN_SEGMENT_LEN).expect("valid probability");

    let mut t = 0;
    while t < len {
        if rng.random::<f64>() < start_prob {
            let seg_len = 1 + lengths.sample(rng) as usize;
            let end = (t + seg_len).min(len);
            for step in t..end {
                let k = rng.random_range(0..n);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                values[[k, step]] += sign * magnitude * std[k];
                labels[step] = 1;
            }
            // Keep segments maximal: the step after a segment is normal.
            t = end + 1;
        } else {
            t += 1;
        }
    }
    Ok(labels)
}

/// A labeled synthetic series from a fresh random system.
pub fn gen_synthetic(
    n: usize,
    len: usize,
    rho_a: f64,
    noise_std: f64,
    anomaly_rate: f64,
    anomaly_magnitude: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise std must be non-negative, got {noise_std}"
        )));
    }
    let mut rng = seed::rng(seed, 0, 0, Stream::Synthetic);
    let system = LinearSystem::random(n, rho_a, &mut rng)?;
    let mut values = system.simulate(len, noise_std, &mut rng);
    let labels = inject_anomalies(&mut values, anomaly_rate, anomaly_magnitude, &mut rng)?;
    Dataset::new(format!("synthetic-{seed}"), values, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn system_has_requested_radius() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sys = LinearSystem::random(6, 0.9, &mut rng).unwrap();
            let rho = spectral_radius(sys.a.view()).unwrap();
            assert!((rho - 0.9).abs() < 1e-10, "rho = {rho}");
        }
    }

    #[test]
    fn zero_rate_has_no_labels() {
        let d = gen_synthetic(3, 500, 0.8, 0.1, 0.0, 8.0, 4).unwrap();
        assert!(d.labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn label_fraction_near_rate() {
        let d = gen_synthetic(5, 2000, 0.9, 0.05, 0.05, 8.0, 1).unwrap();
        let labels = d.labels.unwrap();
        let frac = labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len() as f64;
        assert!((0.02..=0.10).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn labels_mark_exactly_the_perturbed_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sys = LinearSystem::random(4, 0.9, &mut rng).unwrap();
        let clean = sys.simulate(3000, 0.05, &mut rng);
        let mut dirty = clean.clone();
        let labels = inject_anomalies(&mut dirty, 0.1, 8.0, &mut rng).unwrap();
        for (t, &label) in labels.iter().enumerate() {
            let changed = clean.column(t) != dirty.column(t);
            assert_eq!(changed, label == 1, "step {t}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(3, 300, 0.9, 0.05, 0.05, 8.0, 9).unwrap();
        let b = gen_synthetic(3, 300, 0.9, 0.05, 0.05, 8.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(gen_synthetic(3, 300, 1.0, 0.05, 0.05, 8.0, 9).is_err());
        assert!(gen_synthetic(3, 300, 0.9, 0.05, 0.5, 8.0, 9).is_err());
        assert!(gen_synthetic(3, 300, 0.9, -1.0, 0.05, 8.0, 9).is_err());
    }
}
