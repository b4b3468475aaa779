//! Koopman operator algebra: spectral radius, direct-scaling projection,
//! eigendecomposition and lifted-space prediction.
//!
//! Conventions: lifted states are column vectors `φ ∈ R^m`, `K ∈ R^{m×m}`
//! advances them, and `V ∈ R^{m×n}` reconstructs with `x̂ = Vᵀ φ`.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::linalg;
use crate::{Error, Result};

/// Eigenpair residuals above this mark the operator as near-defective.
pub const EIG_RESIDUAL_TOL: f64 = 1e-6;

/// Radii within this margin of the target count as feasible, which keeps
/// projection idempotent under eigenvalue round-off.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

pub fn spectral_radius(k: ArrayView2<f64>) -> Result<f64> {
    Ok(linalg::eigenvalues(k)?
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

/// Outcome of [`project_spectral_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub k: Array2<f64>,
    pub rho_before: f64,
    pub scaled: bool,
}

/// Direct scaling `K ← K · ρ_target / ρ(K)`, applied only when `K` is
/// infeasible.
pub fn project_spectral_report(k: ArrayView2<f64>, rho_target: f64) -> Result<Projection> {
    if !(rho_target > 0.0 && rho_target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target spectral radius must lie in (0, 1), got {rho_target}"
        )));
    }
    let rho = spectral_radius(k)?;
    if rho > rho_target + FEASIBILITY_SLACK {
        Ok(Projection {
            k: &k * (rho_target / rho),
            rho_before: rho,
            scaled: true,
        })
    } else {
        Ok(Projection {
            k: k.to_owned(),
            rho_before: rho,
            scaled: false,
        })
    }
}

pub fn project_spectral(k: ArrayView2<f64>, rho_target: f64) -> Result<Array2<f64>> {
    project_spectral_report(k, rho_target).map(|p| p.k)
}

/// Right eigenpairs `K E = E Λ`, sorted by magnitude (descending), then
/// imaginary part, then real part.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub lambdas: Vec<Complex64>,
    /// Eigenvectors as columns, aligned with `lambdas`.
    pub vectors: Array2<Complex64>,
    /// `‖K E − E Λ‖_F / ‖K‖_F`.
    pub residual: f64,
}

impl EigenSystem {
    pub fn spectral_radius(&self) -> f64 {
        self.lambdas.first().map(|l| l.norm()).unwrap_or(0.0)
    }
}

fn eigen_order(a: &Complex64, b: &Complex64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.im.total_cmp(&a.im))
        .then(b.re.total_cmp(&a.re))
}

/// Eigendecomposition without the residual gate.
pub fn eig_unchecked(k: ArrayView2<f64>) -> Result<EigenSystem> {
    let (values, vectors) = linalg::eigen(k)?;
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eigen_order(&values[i], &values[j]));
    let lambdas: Vec<Complex64> = order.iter().map(|&i| values[i]).collect();
    let vectors = Array2::from_shape_fn((m, m), |(r, c)| vectors[[r, order[c]]]);

    let kc = k.mapv(|x| Complex64::new(x, 0.0));
    let mut diff = kc.dot(&vectors);
    for (c, lambda) in lambdas.iter().enumerate() {
        let mut col = diff.column_mut(c);
        col.zip_mut_with(&vectors.column(c), |d, e| *d -= e * lambda);
    }
    let num = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let den = linalg::frobenius(k);
    let residual = if den > 0.0 { num / den } else { 0.0 };
    Ok(EigenSystem {
        lambdas,
        vectors,
        residual,
    })
}

/// Eigendecomposition; fails with [`Error::NearDefective`] when the
/// eigenpair residual exceeds [`EIG_RESIDUAL_TOL`].
pub fn eig(k: ArrayView2<f64>) -> Result<EigenSystem> {
    let sys = eig_unchecked(k)?;
    if !(sys.residual <= EIG_RESIDUAL_TOL) {
        return Err(Error::NearDefective {
            residual: sys.residual,
        });
    }
    Ok(sys)
}

/// `Re(λ^j)` for every eigenvalue.
pub fn mode_factors(lambdas: &[Complex64], j: usize) -> Array1<f64> {
    lambdas
        .iter()
        .map(|&l| {
            let mut p = Complex64::new(1.0, 0.0);
            for _ in 0..j {
                p *= l;
            }
            p.re
        })
        .collect()
}

/// Column `j` holds `Re(λ^j)` for `j = 0..horizon`.
pub fn mode_factor_table(lambdas: &[Complex64], horizon: usize) -> Array2<f64> {
    let m = lambdas.len();
    let mut table = Array2::zeros((m, horizon));
    for (i, &l) in lambdas.iter().enumerate() {
        let mut p = Complex64::new(1.0, 0.0);
        for j in 0..horizon {
            table[[i, j]] = p.re;
            p *= l;
        }
    }
    table
}

fn check_dims(k: Option<ArrayView2<f64>>, v: ArrayView2<f64>, phi: ArrayView1<f64>) -> Result<()> {
    if let Some(k) = k {
        if k.nrows() != k.ncols() || k.nrows() != phi.len() {
            return Err(Error::Shape(format!(
                "K is {}x{}, lifted state has length {}",
                k.nrows(),
                k.ncols(),
                phi.len()
            )));
        }
    }
    if v.nrows() != phi.len() {
        return Err(Error::Shape(format!(
            "V has {} rows, lifted state has length {}",
            v.nrows(),
            phi.len()
        )));
    }
    Ok(())
}

/// `x̂ = Vᵀ (K φ)`.
pub fn predict_onestep(
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    phi: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_dims(Some(k), v, phi)?;
    Ok(v.t().dot(&k.dot(&phi)))
}

/// Mode-decomposition forecast `x̂_j = Vᵀ (Re(λ^j) ⊙ φ0)`, with `φ0` read in
/// eigen-coordinates.
pub fn predict_modes(
    lambdas: &[Complex64],
    v: ArrayView2<f64>,
    phi0: ArrayView1<f64>,
    j: usize,
) -> Result<Array1<f64>> {
    check_dims(None, v, phi0)?;
    if lambdas.len() != phi0.len() {
        return Err(Error::Shape(format!(
            "{} eigenvalues for a lifted state of length {}",
            lambdas.len(),
            phi0.len()
        )));
    }
    let scaled = mode_factors(lambdas, j) * phi0;
    Ok(v.t().dot(&scaled))
}

/// Nested-operator forecast `x̂_j = Vᵀ K^j φ0`.
pub fn predict_power(
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    phi0: ArrayView1<f64>,
    j: usize,
) -> Result<Array1<f64>> {
    check_dims(Some(k), v, phi0)?;
    let mut phi = phi0.to_owned();
    for _ in 0..j {
        phi = k.dot(&phi);
    }
    Ok(v.t().dot(&phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rotation(theta: f64, scale: f64) -> Array2<f64> {
        array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]] * scale
    }

    #[test]
    fn radius_examples() {
        assert_eq!(
            spectral_radius(array![[0.5, 0.0], [0.0, -0.8]].view()).unwrap(),
            0.8
        );
        let r = spectral_radius(rotation(0.7, 0.9).view()).unwrap();
        assert!((r - 0.9).abs() < 1e-14);
        assert_eq!(
            spectral_radius(Array2::<f64>::zeros((3, 3)).view()).unwrap(),
            0.0
        );
        assert!(matches!(
            spectral_radius(Array2::<f64>::zeros((2, 3)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let k = Array2::<f64>::eye(2) * 2.0;
        assert_eq!(
            project_spectral(k.view(), 0.99).unwrap(),
            Array2::<f64>::eye(2) * 0.99
        );
        let k = Array2::<f64>::eye(2) * 0.5;
        assert_eq!(project_spectral(k.view(), 0.99).unwrap(), k);
        let z = Array2::<f64>::zeros((2, 2));
        assert_eq!(project_spectral(z.view(), 0.99).unwrap(), z);
        assert!(project_spectral(k.view(), 1.0).is_err());
    }

    #[test]
    fn eig_sorted_diagonal() {
        let sys = eig(array![[0.5, 0.0], [0.0, 0.9]].view()).unwrap();
        assert_eq!(
            sys.lambdas,
            vec![Complex64::new(0.9, 0.0), Complex64::new(0.5, 0.0)]
        );
        assert!(sys.vectors[[1, 0]].norm() > 0.999 && sys.vectors[[0, 0]].norm() < 1e-12);
        assert!(sys.residual < 1e-14);
    }

    #[test]
    fn eig_rotation_pair() {
        let theta = 0.4;
        let sys = eig(rotation(theta, 0.9).view()).unwrap();
        let expected = Complex64::from_polar(0.9, theta);
        assert!((sys.lambdas[0] - expected).norm() < 1e-14);
        assert!((sys.lambdas[1] - expected.conj()).norm() < 1e-14);
    }

    #[test]
    fn scalar_mode_prediction() {
        let x = predict_modes(
            &[Complex64::new(0.5, 0.0)],
            array![[1.0]].view(),
            array![1.0].view(),
            2,
        )
        .unwrap();
        assert_eq!(x[0], 0.25);
    }

    #[test]
    fn zeroth_mode_is_reconstruction() {
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let phi = array![0.1, -0.2, 0.3];
        let lambdas = [
            Complex64::new(0.3, 0.4),
            Complex64::new(0.3, -0.4),
            Complex64::new(-0.9, 0.0),
        ];
        assert_eq!(
            predict_modes(&lambdas, v.view(), phi.view(), 0).unwrap(),
            v.t().dot(&phi)
        );
    }

    #[test]
    fn onestep_examples() {
        let v = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let phi = array![0.3, -0.7, 1.0];
        let k = Array2::<f64>::eye(3);
        assert_eq!(
            predict_onestep(k.view(), v.view(), phi.view()).unwrap(),
            array![0.3, -0.7]
        );
        let z = Array2::<f64>::zeros((3, 3));
        assert_eq!(
            predict_onestep(z.view(), v.view(), phi.view()).unwrap(),
            array![0.0, 0.0]
        );
    }

    #[test]
    fn factor_table_matches_powers() {
        let lambdas = [Complex64::from_polar(0.95, 0.3), Complex64::new(-0.5, 0.0)];
        let table = mode_factor_table(&lambdas, 6);
        for j in 0..6 {
            let f = mode_factors(&lambdas, j);
            assert_eq!(table.column(j), f);
        }
    }
}
