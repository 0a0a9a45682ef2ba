//! Readout: Hermitian expectation values, sampled estimates with Hoeffding shot
//! budgets, and Fourier sums of the decoded variables.
//!
//! Two expectation values are reported. `state` is `<phi|M|phi>` on the
//! normalised amplitude vector. `amplitude` sums `conj(z_j) M_jk z_k` over the
//! padded coordinates `z_0 = 1, z_1, .., z_n`, i.e. `<phi|M|phi> / |phi_0|^2`,
//! which is twice the state value for a freshly encoded vector.

use std::f64::consts::PI;
use std::io::Read;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::state::AmplitudeState;
use crate::C64;

/// Largest tolerated `max |M - M^dagger|`.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Observable {
    name: String,
    matrix: DMatrix<C64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<C64>,
}

impl Observable {
    /// Wraps a square Hermitian matrix.
    pub fn dense(name: impl Into<String>, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), actual: matrix.ncols() });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidParameter("observable needs dimension >= 1".into()));
        }
        if matrix.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("observable entries".into()));
        }
        let skew = (&matrix - matrix.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if skew > HERMITIAN_TOL {
            return Err(Error::NotHermitian(skew));
        }
        let hermitian = (&matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(hermitian);
        Ok(Self {
            name: name.into(),
            matrix,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
        })
    }

    /// Builds a dense observable from row vectors.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.len() });
        }
        Self::dense(name, DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
    }

    pub fn from_sparse(name: impl Into<String>, m: &SparseMatrix) -> Result<Self> {
        Self::dense(name, m.to_dense())
    }

    /// Loads `row,col,re,im` triplets into a `dim x dim` observable.
    pub fn read_triplets_csv<R: Read>(name: impl Into<String>, r: R, dim: usize) -> Result<Self> {
        Self::from_sparse(name, &SparseMatrix::read_triplets_csv(r, dim, dim)?)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::dense("identity", DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let diag = DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0)));
        Self::dense("diagonal", DMatrix::from_diagonal(&diag))
    }

    /// `|j><j|` on `dim` levels.
    pub fn projector(dim: usize, j: usize) -> Result<Self> {
        if j >= dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: j });
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(j, j)] = C64::new(1.0, 0.0);
        Self::dense(format!("projector_{j}"), m)
    }

    /// Projector onto `chi_k = n^{-1/2} sum_{j=1..n} e^{-2 pi i j k / n} |j>`, so
    /// that its amplitude-convention value on `z` is `|S_k(z)|^2`.
    pub fn fourier_k(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 || k > n {
            return Err(Error::InvalidParameter(format!("fourier mode k = {k} must lie in 1..={n}")));
        }
        let mut chi = DVector::zeros(n + 1);
        for j in 1..=n {
            chi[j] = C64::from_polar(1.0, -2.0 * PI * (j * k % n) as f64 / n as f64) / (n as f64).sqrt();
        }
        Self::dense(format!("fourier_{k}"), &chi * chi.adjoint())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Spectral norm `||M||`.
    pub fn norm_bound(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(lambda_min, lambda_max)`.
    pub fn spectral_range(&self) -> (f64, f64) {
        self.eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Outcome probabilities `|<v_i|phi>|^2` in eigenvalue order.
    fn outcome_probabilities(&self, amps: &[C64]) -> Vec<f64> {
        let phi = DVector::from_column_slice(amps);
        (self.eigenvectors.adjoint() * phi).iter().map(|c| c.norm_sqr()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    /// `<phi|M|phi>`.
    pub state: f64,
    /// `sum conj(z_j) M_jk z_k` with `z_0 = 1`.
    pub amplitude: f64,
    /// Imaginary part of `<phi|M|phi>`, a rounding diagnostic.
    pub imag: f64,
}

pub fn expectation(state: &AmplitudeState, m: &Observable) -> Result<Expectation> {
    let amps = state.amplitudes();
    if amps.len() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), actual: amps.len() });
    }
    let phi = DVector::from_column_slice(amps);
    let value = phi.dotc(&(m.matrix() * &phi)) / phi.norm_squared();
    let anchor = state.anchor().norm_sqr() / state.norm().powi(2);
    if anchor == 0.0 {
        return Err(Error::VanishingAnchor(0.0));
    }
    Ok(Expectation { state: value.re, amplitude: value.re / anchor, imag: value.im })
}

/// Hoeffding shot count `max(1, ceil(R^2 ln(2/alpha) / (2 delta^2)))` for
/// outcomes confined to an interval of width `R`.
pub fn hoeffding_shots(range: f64, delta: f64, alpha: f64) -> Result<u64> {
    if !(delta > 0.0) || !(alpha > 0.0 && alpha < 1.0) || !(range >= 0.0 && range.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need delta > 0, 0 < alpha < 1, finite range >= 0; got delta = {delta}, alpha = {alpha}, range = {range}"
        )));
    }
    let shots = (range * range * (2.0 / alpha).ln() / (2.0 * delta * delta)).ceil();
    Ok((shots as u64).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledExpectation {
    pub estimate: f64,
    pub shots: u64,
    pub exact: f64,
    pub target_error: f64,
    pub alpha: f64,
}

/// Simulates projective measurements of `M` on `state` and averages them.
///
/// The shot budget uses the width of `M`'s spectrum, which is what Hoeffding's
/// inequality needs; for observables with `0 <= M <= ||M||` it equals the
/// `||M||^2 ln(2/alpha) / (2 delta^2)` budget.
pub fn sample_expectation<R: Rng + ?Sized>(
    state: &AmplitudeState,
    m: &Observable,
    delta: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<SampledExpectation> {
    let exact = expectation(state, m)?.state;
    let (lo, hi) = m.spectral_range();
    let shots = hoeffding_shots(hi - lo, delta, alpha)?;
    let weights = m.outcome_probabilities(state.amplitudes());
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidParameter(format!("outcome distribution: {e}")))?;
    let total: f64 = (0..shots).map(|_| m.eigenvalues()[dist.sample(rng)]).sum();
    Ok(SampledExpectation { estimate: total / shots as f64, shots, exact, target_error: delta, alpha })
}

/// `S_k = n^{-1/2} sum_{j=1..n} z_j e^{2 pi i j k / n}` for `k = 1..n`, by direct summation.
pub fn fourier_spectrum(z: &[C64]) -> Vec<C64> {
    let n = z.len();
    let scale = 1.0 / (n as f64).sqrt();
    (1..=n)
        .map(|k| {
            z.iter()
                .enumerate()
                .map(|(i, &zj)| {
                    let j = i + 1;
                    zj * C64::from_polar(1.0, 2.0 * PI * (j * k % n) as f64 / n as f64)
                })
                .sum::<C64>()
                * scale
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::SampleDomain;
    use crate::rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn encoded(z: &[C64]) -> AmplitudeState {
        AmplitudeState::encode(z, 1e-12).unwrap()
    }

    #[test]
    fn identity_and_projector() {
        let z = [c(0.6, 0.0), c(0.0, 0.8)];
        let s = encoded(&z);
        let e = expectation(&s, &Observable::identity(3).unwrap()).unwrap();
        assert!((e.state - 1.0).abs() < 1e-15);
        assert!((e.amplitude - 2.0).abs() < 1e-14);
        let e = expectation(&s, &Observable::projector(3, 2).unwrap()).unwrap();
        assert!((e.state - 0.32).abs() < 1e-15);
        assert!((e.amplitude - 0.64).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian_and_mismatch() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(Observable::dense("x", m), Err(Error::NotHermitian(_))));
        let s = encoded(&[c(1.0, 0.0)]);
        assert!(expectation(&s, &Observable::identity(3).unwrap()).is_err());
    }

    #[test]
    fn diagonal_stays_in_spectrum() {
        let s = encoded(&SampleDomain::Complex.sample_unit(4, &mut rng::stream(2, 0)));
        let m = Observable::diagonal(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let e = expectation(&s, &m).unwrap();
        assert!(e.imag.abs() < 1e-12);
        assert!((0.0..=4.0).contains(&e.state));
    }

    #[test]
    fn fourier_observable_matches_spectrum() {
        let z = SampleDomain::Complex.sample_unit(5, &mut rng::stream(4, 0));
        let s = fourier_spectrum(&z);
        for k in 1..=5 {
            let e = expectation(&encoded(&z), &Observable::fourier_k(5, k).unwrap()).unwrap();
            assert!((e.amplitude - s[k - 1].norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_examples() {
        let n = 6;
        let flat = vec![c(1.0 / (n as f64).sqrt(), 0.0); n];
        let s = fourier_spectrum(&flat);
        for v in &s[..n - 1] {
            assert!(v.norm() < 1e-12);
        }
        assert!((s[n - 1] - c(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(fourier_spectrum(&[c(0.3, -0.4)]), vec![c(0.3, -0.4)]);
    }

    #[test]
    fn shot_budget() {
        assert_eq!(hoeffding_shots(1.0, 0.05, 0.05).unwrap(), 738);
        assert_eq!(hoeffding_shots(0.0, 0.05, 0.05).unwrap(), 1);
        assert!(hoeffding_shots(1.0, 0.0, 0.05).is_err());
        assert!(hoeffding_shots(1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn identity_sampling_is_exact() {
        let s = encoded(&[c(0.6, 0.0), c(0.0, 0.8)]);
        let r = sample_expectation(&s, &Observable::identity(3).unwrap(), 0.05, 0.05, &mut rng::stream(0, 0))
            .unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-12);
    }
}
