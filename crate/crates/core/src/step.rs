//! One nonlinear step: the `A` operator, the pointer Hamiltonian
//! `H = -i A (x) |1><0| + i A^dagger (x) |0><1|`, the exact isometry
//! `sqrt(I - eps^2 H^2) + i eps H`, and post-selection on the ancilla.
//!
//! `H^2` is block diagonal with blocks `A^dagger A` (ancilla 0) and `A A^dagger`
//! (ancilla 1). `A` only has `n + 1` nonzero rows, the targets `|alpha 0..0>`,
//! so both square roots follow from the eigendecomposition of the small
//! `(n+1) x (n+1)` Gram matrix `R R^dagger` of those rows:
//!
//! - `sqrt(I - eps^2 A A^dagger) = U diag(sqrt(1 - eps^2 s_i)) U^dagger` on the target span,
//!   identity elsewhere;
//! - `sqrt(I - eps^2 A^dagger A) = I - R^dagger U diag(g_i) U^dagger R` with
//!   `g_i = eps^2 / (1 + sqrt(1 - eps^2 s_i))`, which stays finite as `s_i -> 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{distinct_permutations, PolynomialMap};
use crate::sparse::SparseMatrix;
use crate::state::{AmplitudeState, JointState, DEFAULT_REGISTER_CAP};
use crate::C64;

/// Slack allowed on `eps * ||H|| <= 1` and on `1 - eps^2 s_i >= 0`.
const RANGE_SLACK: f64 = 1e-12;
/// Post-selected mass allowed outside `|0..0>` on registers `2..d`.
pub const COLLAPSE_TOL: f64 = 1e-10;
const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 200_000;

/// Scale applied to every entry of `A` for degree `d`, chosen so that
/// `A |phi>^{(x) d} = (1/sqrt 2) |phi'> |0..0>` for every degree.
pub fn degree_scale(d: usize) -> f64 {
    2f64.powf((d as f64 - 2.0) / 2.0)
}

/// Row index of `|alpha 0 .. 0>` in the register space.
pub fn target_row(alpha: usize, levels: usize, degree: usize) -> usize {
    alpha * levels.pow(degree as u32 - 1)
}

fn flatten(index: &[usize], levels: usize) -> usize {
    index.iter().fold(0, |acc, &k| acc * levels + k)
}

/// Builds `A = sum a^(alpha)_{k..} |alpha 0..0><k..|`, including the `f_0 = 1` row.
pub fn build_a(map: &PolynomialMap) -> Result<SparseMatrix> {
    let levels = map.n() + 1;
    let d = map.degree();
    let dim = levels
        .checked_pow(d as u32)
        .ok_or(Error::CapExceeded { dim: usize::MAX, cap: DEFAULT_REGISTER_CAP })?;
    let scale = degree_scale(d);
    let mut a = SparseMatrix::zeros(dim, dim);
    a.add(target_row(0, levels, d), 0, C64::new(scale, 0.0))?;
    for (alpha, idx, coeff) in map.entries() {
        let row = target_row(alpha, levels, d);
        let perms = distinct_permutations(idx);
        let entry = coeff * (scale / perms.len() as f64);
        for p in perms {
            a.add(row, flatten(&p, levels), entry)?;
        }
    }
    Ok(a)
}

/// Largest singular value of `A` by power iteration on `A^dagger A`.
pub fn operator_norm(a: &SparseMatrix, max_iter: usize) -> Result<f64> {
    let n = a.ncols();
    let mut v: Vec<C64> = (0..n)
        .map(|c| C64::from_polar(1.0 / (1.0 + c as f64).sqrt(), 0.7 * c as f64))
        .collect();
    normalize(&mut v);
    for _ in 0..max_iter {
        let w = a.adjoint_matvec(&a.matvec(&v));
        let rayleigh: f64 = v.iter().zip(&w).map(|(x, y)| (x.conj() * y).re).sum();
        if rayleigh <= 0.0 {
            return Ok(0.0);
        }
        let residual = v
            .iter()
            .zip(&w)
            .map(|(x, y)| (y - x * rayleigh).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_TOL * rayleigh {
            return Ok(rayleigh.sqrt());
        }
        v = w;
        normalize(&mut v);
    }
    Err(Error::NoConvergence(max_iter))
}

/// `(s, a_max, s * a_max)` with `s = 2 * max(entries per row, entries per column)`.
pub fn gershgorin_bound(a: &SparseMatrix) -> (usize, f64, f64) {
    let row_max = (0..a.nrows()).map(|r| a.row(r).len()).max().unwrap_or(0);
    let mut col_counts = vec![0usize; a.ncols()];
    for (_, c, _) in a.triplets() {
        col_counts[c] += 1;
    }
    let col_max = col_counts.into_iter().max().unwrap_or(0);
    let s = 2 * row_max.max(col_max);
    let a_max = a.max_abs();
    (s, a_max, s as f64 * a_max)
}

fn normalize(v: &mut [C64]) {
    let nrm = crate::poly::norm(v);
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Always follow the success branch.
    Exact,
    /// Draw the ancilla outcome; failures discard the pair.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ancilla {
    Zero,
    One,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub success: bool,
    pub probability: f64,
    /// First register after post-selection on `|1>`, anchor real positive.
    pub posterior: Option<AmplitudeState>,
    /// `||F(z)||` for the decoded input `z`, recovered from `probability`.
    /// Filled by [`StepOperator::step`]; raw [`postselect`] leaves it empty.
    pub norm_factor: Option<f64>,
    /// Post-selected mass outside `|0..0>` on registers `2..d`.
    pub register_residual: f64,
}

/// The step operator for one polynomial map at a fixed `epsilon`.
#[derive(Clone, Debug)]
pub struct StepOperator {
    a: SparseMatrix,
    levels: usize,
    degree: usize,
    epsilon: f64,
    h_norm: f64,
    h_norm_bound: f64,
    sparsity: usize,
    a_max: f64,
    targets: Vec<usize>,
    gram_vectors: DMatrix<C64>,
    gram_values: Vec<f64>,
}

impl StepOperator {
    /// Builds the operator; `epsilon = None` picks `0.9 / h_norm_bound`.
    pub fn new(map: &PolynomialMap, epsilon: Option<f64>) -> Result<Self> {
        Self::with_cap(map, epsilon, DEFAULT_REGISTER_CAP)
    }

    pub fn with_cap(map: &PolynomialMap, epsilon: Option<f64>, cap: usize) -> Result<Self> {
        let levels = map.n() + 1;
        let degree = map.degree();
        let dim = levels.checked_pow(degree as u32).unwrap_or(usize::MAX);
        if dim > cap {
            return Err(Error::CapExceeded { dim, cap });
        }
        let a = build_a(map)?;
        let h_norm = operator_norm(&a, POWER_MAX_ITER)?;
        let (sparsity, a_max, h_norm_bound) = gershgorin_bound(&a);
        let epsilon = epsilon.unwrap_or(0.9 / h_norm_bound);
        let product = epsilon * h_norm;
        if !(epsilon >= 0.0 && epsilon.is_finite()) || product > 1.0 + RANGE_SLACK {
            return Err(Error::EpsilonOutOfRange { epsilon, product });
        }

        let targets: Vec<usize> = (0..levels).map(|a| target_row(a, levels, degree)).collect();
        let k = targets.len();
        let gram = DMatrix::from_fn(k, k, |i, j| sparse_dot(a.row(targets[i]), a.row(targets[j])));
        let eig = SymmetricEigen::new(gram);
        let gram_values = eig.eigenvalues.iter().map(|&s| s.max(0.0)).collect();

        Ok(Self {
            a,
            levels,
            degree,
            epsilon,
            h_norm,
            h_norm_bound,
            sparsity,
            a_max,
            targets,
            gram_vectors: eig.eigenvectors,
            gram_values,
        })
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `||H|| = sigma_max(A)`.
    pub fn h_norm(&self) -> f64 {
        self.h_norm
    }

    pub fn h_norm_bound(&self) -> f64 {
        self.h_norm_bound
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn register_dim(&self) -> usize {
        self.a.ncols()
    }

    /// Same operator at a different `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let product = epsilon * self.h_norm;
        if !(epsilon >= 0.0 && epsilon.is_finite()) || product > 1.0 + RANGE_SLACK {
            return Err(Error::EpsilonOutOfRange { epsilon, product });
        }
        Ok(Self { epsilon, ..self.clone() })
    }

    fn check_joint(&self, joint: &JointState) -> Result<()> {
        if joint.levels() != self.levels || joint.registers() != self.degree {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.register_dim(),
                actual: joint.amplitudes().len(),
            });
        }
        Ok(())
    }

    /// `H |x>`.
    pub fn apply_h(&self, joint: &JointState) -> Result<JointState> {
        self.check_joint(joint)?;
        let i = C64::new(0.0, 1.0);
        let out0 = self.a.adjoint_matvec(joint.sector(1));
        let out1 = self.a.matvec(joint.sector(0));
        let amps = out0
            .into_iter()
            .map(|v| v * i)
            .chain(out1.into_iter().map(|v| -v * i))
            .collect();
        JointState::from_parts(amps, self.levels, self.degree)
    }

    /// `sqrt(I - eps^2 A^dagger A) x`.
    fn sqrt_block0(&self, x: &[C64]) -> Vec<C64> {
        let eps2 = self.epsilon * self.epsilon;
        let rx = DVector::from_iterator(
            self.targets.len(),
            self.targets.iter().map(|&t| {
                self.a.row(t).iter().map(|&(c, v)| v * x[c]).sum::<C64>()
            }),
        );
        let mut w = self.gram_vectors.adjoint() * rx;
        for (wi, &s) in w.iter_mut().zip(&self.gram_values) {
            let root = (1.0 - eps2 * s).max(0.0).sqrt();
            *wi *= eps2 / (1.0 + root);
        }
        let v = &self.gram_vectors * w;
        let mut out = x.to_vec();
        for (i, &t) in self.targets.iter().enumerate() {
            for &(c, val) in self.a.row(t) {
                out[c] -= val.conj() * v[i];
            }
        }
        out
    }

    /// `sqrt(I - eps^2 A A^dagger) y`.
    fn sqrt_block1(&self, y: &[C64]) -> Vec<C64> {
        let eps2 = self.epsilon * self.epsilon;
        let yt = DVector::from_iterator(self.targets.len(), self.targets.iter().map(|&t| y[t]));
        let mut w = self.gram_vectors.adjoint() * yt;
        for (wi, &s) in w.iter_mut().zip(&self.gram_values) {
            *wi *= (1.0 - eps2 * s).max(0.0).sqrt();
        }
        let v = &self.gram_vectors * w;
        let mut out = y.to_vec();
        for (i, &t) in self.targets.iter().enumerate() {
            out[t] = v[i];
        }
        out
    }

    /// Applies `sqrt(I - eps^2 H^2) + i eps H`, a unitary on the joint space.
    pub fn apply_step(&self, joint: &JointState) -> Result<JointState> {
        self.check_joint(joint)?;
        let eps = self.epsilon;
        let x0 = joint.sector(0);
        let x1 = joint.sector(1);
        let ax0 = self.a.matvec(x0);
        let adx1 = self.a.adjoint_matvec(x1);
        let out0 = self
            .sqrt_block0(x0)
            .into_iter()
            .zip(adx1)
            .map(|(s, v)| s - v * eps);
        let out1 = self
            .sqrt_block1(x1)
            .into_iter()
            .zip(ax0)
            .map(|(s, v)| s + v * eps);
        let amps: Vec<C64> = out0.chain(out1).collect();
        if amps.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("joint amplitudes after step".into()));
        }
        JointState::from_parts(amps, self.levels, self.degree)
    }

    /// encode-free step on an already prepared single-register state.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &AmplitudeState,
        mode: StepMode,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if state.n() + 1 != self.levels {
            return Err(Error::DimensionMismatch { expected: self.levels, actual: state.n() + 1 });
        }
        let joint = state.tensor_power(self.degree, usize::MAX)?;
        let evolved = self.apply_step(&joint)?;
        let mut outcome = postselect(&evolved, Ancilla::One)?;
        outcome.norm_factor = Some(self.norm_factor(outcome.probability, state.anchor().norm()));
        if mode == StepMode::Sampled && rng.random::<f64>() >= outcome.probability {
            outcome.success = false;
            outcome.posterior = None;
        }
        Ok(outcome)
    }

    /// `||F(z)||` from `p = eps^2 |a_0|^{2d} (1 + ||F(z)||^2) / 2^{2 - d}`, where
    /// `a_0` is the input anchor amplitude.
    pub fn norm_factor(&self, probability: f64, anchor: f64) -> f64 {
        let scale = degree_scale(self.degree);
        let weight = (self.epsilon * scale).powi(2) * anchor.powi(2 * self.degree as i32);
        (probability / weight - 1.0).max(0.0).sqrt()
    }
}

fn sparse_dot(x: &[(usize, C64)], y: &[(usize, C64)]) -> C64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = C64::new(0.0, 0.0);
    while i < x.len() && j < y.len() {
        match x[i].0.cmp(&y[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += x[i].1 * y[j].1.conj();
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Projects onto the ancilla outcome. On `|1>` the first register is returned
/// after checking that the others collapsed to `|0..0>`.
pub fn postselect(joint: &JointState, outcome: Ancilla) -> Result<StepOutcome> {
    let sector = joint.sector(match outcome {
        Ancilla::Zero => 0,
        Ancilla::One => 1,
    });
    let probability: f64 = sector.iter().map(|v| v.norm_sqr()).sum();
    if probability == 0.0 {
        return Err(Error::ZeroProbability);
    }
    if outcome == Ancilla::Zero {
        return Ok(StepOutcome {
            success: false,
            probability,
            posterior: None,
            norm_factor: None,
            register_residual: 0.0,
        });
    }
    let (first, residual) = first_register(sector, joint.levels());
    let residual = residual / probability;
    if residual > COLLAPSE_TOL {
        return Err(Error::RegisterNotCollapsed(residual));
    }
    let posterior = AmplitudeState::from_amplitudes(first)?.phase_aligned();
    Ok(StepOutcome {
        success: true,
        probability,
        posterior: Some(posterior),
        norm_factor: None,
        register_residual: residual,
    })
}

/// Splits a register-space vector into the first-register component with
/// registers `2..d` in `|0..0>` and the mass left elsewhere.
pub fn first_register(sector: &[C64], levels: usize) -> (Vec<C64>, f64) {
    let stride = sector.len() / levels;
    let first: Vec<C64> = (0..levels).map(|j| sector[j * stride]).collect();
    let kept: f64 = first.iter().map(|v| v.norm_sqr()).sum();
    let total: f64 = sector.iter().map(|v| v.norm_sqr()).sum();
    (first, (total - kept).max(0.0))
}

/// Encodes `z`, builds the operator for `map` and performs one step.
pub fn quantum_step<R: Rng + ?Sized>(
    z: &[C64],
    map: &PolynomialMap,
    epsilon: Option<f64>,
    mode: StepMode,
    rng: &mut R,
) -> Result<StepOutcome> {
    let op = StepOperator::new(map, epsilon)?;
    let state = AmplitudeState::encode(z, 1e-9)?;
    op.step(&state, mode, rng)
}
