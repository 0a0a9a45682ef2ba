//! Sparse polynomial maps and ODE right-hand sides over `C^n`.
//!
//! Every monomial is stored as a sorted multi-index of fixed length `degree`
//! over `0..=n`, where index `0` stands for the constant `z_0 = 1`. A linear
//! term `z_j` in a quadratic map is therefore the multi-index `[0, j]`. The
//! stored value is the coefficient of the whole monomial; the entry of the
//! symmetric coefficient tensor at any ordering of the multi-index is that
//! coefficient divided by the number of distinct orderings.
//!
//! The evaluation routines here are the classical oracle every quantum-side
//! result is checked against.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, gaussian_complex};
use crate::C64;

/// Largest supported monomial degree (including `z_0` padding).
pub const MAX_DEGREE: usize = 4;

/// Where random test points are drawn when checking norm preservation or
/// estimating Lipschitz constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleDomain {
    /// Unit sphere in `C^n`.
    #[default]
    Complex,
    /// Unit sphere in `R^n`.
    Real,
    /// Torus `|z_j| = 1/sqrt(n)` with uniform random phases.
    Torus,
    /// Conjugate-doubled vectors `(u, conj(u))`, normalised; `n` must be even.
    Conjugate,
}

impl SampleDomain {
    fn check(self, n: usize) -> Result<()> {
        if self == SampleDomain::Conjugate && n % 2 != 0 {
            return Err(Error::InvalidPolynomial(format!(
                "conjugate domain needs an even variable count, got {n}"
            )));
        }
        Ok(())
    }

    /// Draws a unit-norm point of this domain.
    pub fn sample_unit<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<C64> {
        let raw: Vec<C64> = match self {
            SampleDomain::Complex => (0..n).map(|_| gaussian_complex(rng)).collect(),
            SampleDomain::Real => (0..n)
                .map(|_| C64::new(StandardNormal.sample(rng), 0.0))
                .collect(),
            SampleDomain::Torus => (0..n)
                .map(|_| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect(),
            SampleDomain::Conjugate => {
                let half: Vec<C64> = (0..n / 2).map(|_| gaussian_complex(rng)).collect();
                half.iter()
                    .copied()
                    .chain(half.iter().map(|u| u.conj()))
                    .collect()
            }
        };
        normalized(raw)
    }

    /// Draws a point of this domain scaled into the unit ball.
    pub fn sample_ball<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<C64> {
        let dim = match self {
            SampleDomain::Real => n as f64,
            _ => 2.0 * n as f64,
        };
        let radius = rng.random::<f64>().powf(1.0 / dim);
        self.sample_unit(n, rng)
            .into_iter()
            .map(|v| v * radius)
            .collect()
    }
}

pub(crate) fn norm(z: &[C64]) -> f64 {
    z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn normalized(mut z: Vec<C64>) -> Vec<C64> {
    let nrm = norm(&z);
    if nrm > 0.0 {
        z.iter_mut().for_each(|v| *v /= nrm);
    }
    z
}

/// Number of distinct orderings of a multi-index.
pub fn multiplicity(index: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &k in index {
        *counts.entry(k).or_default() += 1;
    }
    let fact = |k: usize| (1..=k).product::<usize>();
    counts.values().fold(fact(index.len()), |acc, &c| acc / fact(c))
}

/// All distinct orderings of a sorted multi-index, in lexicographic order.
pub fn distinct_permutations(sorted: &[usize]) -> Vec<Vec<usize>> {
    let mut current = sorted.to_vec();
    current.sort_unstable();
    let mut out = vec![current.clone()];
    loop {
        // next lexicographic permutation
        let Some(i) = (0..current.len().saturating_sub(1))
            .rev()
            .find(|&i| current[i] < current[i + 1])
        else {
            break;
        };
        let j = (i + 1..current.len())
            .rev()
            .find(|&j| current[j] > current[i])
            .expect("successor exists");
        current.swap(i, j);
        current[i + 1..].reverse();
        out.push(current.clone());
    }
    out
}

/// Sparse rows of padded monomials; shared storage for maps and ODE systems.
#[derive(Clone, Debug, PartialEq)]
struct Terms {
    n: usize,
    degree: usize,
    /// `rows[alpha - 1]` holds `f_alpha`.
    rows: Vec<BTreeMap<Vec<usize>, C64>>,
}

impl Terms {
    fn new(n: usize, degree: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPolynomial("variable count must be positive".into()));
        }
        if degree > MAX_DEGREE {
            return Err(Error::DegreeOverflow { degree, max: MAX_DEGREE });
        }
        Ok(Self { n, degree, rows: vec![BTreeMap::new(); n] })
    }

    fn add_entry(&mut self, alpha: usize, index: &[usize], coeff: C64) -> Result<()> {
        if alpha == 0 || alpha > self.n {
            return Err(Error::InvalidPolynomial(format!(
                "row {alpha} outside 1..={}",
                self.n
            )));
        }
        if index.len() != self.degree {
            return Err(Error::InvalidPolynomial(format!(
                "multi-index {index:?} has length {} but the degree is {}",
                index.len(),
                self.degree
            )));
        }
        if let Some(&bad) = index.iter().find(|&&k| k > self.n) {
            return Err(Error::InvalidPolynomial(format!(
                "index {bad} outside 0..={}",
                self.n
            )));
        }
        if !(coeff.re.is_finite() && coeff.im.is_finite()) {
            return Err(Error::NonFinite(format!("coefficient of {index:?}")));
        }
        let mut key = index.to_vec();
        key.sort_unstable();
        let row = &mut self.rows[alpha - 1];
        let slot = row.entry(key.clone()).or_insert(C64::new(0.0, 0.0));
        *slot += coeff;
        if *slot == C64::new(0.0, 0.0) {
            row.remove(&key);
        }
        Ok(())
    }

    fn add_term(&mut self, alpha: usize, vars: &[usize], coeff: C64) -> Result<()> {
        if vars.len() > self.degree {
            return Err(Error::DegreeOverflow { degree: vars.len(), max: self.degree });
        }
        if vars.contains(&0) {
            return Err(Error::InvalidPolynomial(
                "variables are numbered from 1; index 0 is the implicit constant".into(),
            ));
        }
        let mut index = vec![0; self.degree - vars.len()];
        index.extend_from_slice(vars);
        self.add_entry(alpha, &index, coeff)
    }

    fn padded_to(&self, degree: usize) -> Result<Self> {
        let mut out = Terms::new(self.n, degree)?;
        let extra = degree - self.degree;
        for (alpha, row) in self.rows.iter().enumerate() {
            for (idx, &c) in row {
                let mut padded = vec![0; extra];
                padded.extend_from_slice(idx);
                out.add_entry(alpha + 1, &padded, c)?;
            }
        }
        Ok(out)
    }

    fn eval(&self, z: &[C64]) -> Result<Vec<C64>> {
        if z.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: z.len() });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|(idx, &c)| {
                        idx.iter()
                            .filter(|&&k| k > 0)
                            .fold(c, |acc, &k| acc * z[k - 1])
                    })
                    .sum()
            })
            .collect())
    }

    fn entries(&self) -> impl Iterator<Item = (usize, &[usize], C64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(a, row)| {
            row.iter().map(move |(idx, &c)| (a + 1, idx.as_slice(), c))
        })
    }

    fn to_document(&self, domain: SampleDomain, claimed: Option<bool>) -> PolyDocument {
        PolyDocument {
            n: self.n,
            degree: self.degree,
            domain,
            measure_preserving_claimed: claimed,
            entries: self
                .entries()
                .map(|(alpha, idx, c)| PolyEntry {
                    alpha,
                    index: idx.to_vec(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
    }

    fn from_document(doc: &PolyDocument) -> Result<Self> {
        let mut terms = Terms::new(doc.n, doc.degree)?;
        for e in &doc.entries {
            terms.add_entry(e.alpha, &e.index, C64::new(e.re, e.im))?;
        }
        Ok(terms)
    }
}

/// Serialised form of a map or ODE system.
///
/// Indices are written sorted; on read they may come in any order and
/// repeated monomials are summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyDocument {
    pub n: usize,
    pub degree: usize,
    #[serde(default, skip_serializing_if = "is_complex")]
    pub domain: SampleDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_preserving_claimed: Option<bool>,
    pub entries: Vec<PolyEntry>,
}

fn is_complex(d: &SampleDomain) -> bool {
    *d == SampleDomain::Complex
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyEntry {
    pub alpha: usize,
    pub index: Vec<usize>,
    pub re: f64,
    pub im: f64,
}

/// A polynomial map `z -> F(z)` whose components are homogeneous of degree
/// `degree` in the padded variables `(z_0, z_1, ..., z_n)`.
///
/// The row `f_0 = 1` is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialMap {
    terms: Terms,
    domain: SampleDomain,
}

impl PolynomialMap {
    pub fn new(n: usize, degree: usize) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidPolynomial(format!(
                "map degree must be at least 2, got {degree}"
            )));
        }
        Ok(Self { terms: Terms::new(n, degree)?, domain: SampleDomain::Complex })
    }

    pub fn with_domain(mut self, domain: SampleDomain) -> Result<Self> {
        domain.check(self.terms.n)?;
        self.domain = domain;
        Ok(self)
    }

    /// Adds `coeff * z_{vars[0]} * ... ` to `f_alpha`; `vars` are variable
    /// numbers in `1..=n` and are padded with `z_0` up to the map degree.
    pub fn add_term(&mut self, alpha: usize, vars: &[usize], coeff: C64) -> Result<()> {
        self.terms.add_term(alpha, vars, coeff)
    }

    /// Adds a coefficient at a full multi-index (length `degree`, any order).
    pub fn add_entry(&mut self, alpha: usize, index: &[usize], coeff: C64) -> Result<()> {
        self.terms.add_entry(alpha, index, coeff)
    }

    pub fn n(&self) -> usize {
        self.terms.n
    }

    pub fn degree(&self) -> usize {
        self.terms.degree
    }

    pub fn domain(&self) -> SampleDomain {
        self.domain
    }

    /// Canonical monomials of `f_alpha` for `alpha >= 1`.
    pub fn row(&self, alpha: usize) -> impl Iterator<Item = (&[usize], C64)> + '_ {
        self.terms.rows[alpha - 1].iter().map(|(k, &c)| (k.as_slice(), c))
    }

    /// All stored `(alpha, canonical index, coefficient)` triples.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &[usize], C64)> + '_ {
        self.terms.entries()
    }

    /// Symmetric tensor entry `a^(alpha)_{k_1..k_d}` for any ordering of the index.
    pub fn tensor_entry(&self, alpha: usize, index: &[usize]) -> C64 {
        if alpha == 0 {
            return if index.iter().all(|&k| k == 0) { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        }
        let mut key = index.to_vec();
        key.sort_unstable();
        self.terms.rows[alpha - 1]
            .get(&key)
            .map(|&c| c / multiplicity(&key) as f64)
            .unwrap_or(C64::new(0.0, 0.0))
    }

    /// Evaluates `(f_1(z), ..., f_n(z))` with `z_0 = 1`.
    pub fn apply(&self, z: &[C64]) -> Result<Vec<C64>> {
        self.terms.eval(z)
    }

    /// Sparsity counts in the ordered-tensor sense: `(max entries per row,
    /// max rows per ordered index)` over rows `alpha >= 1`.
    pub fn sparsity(&self) -> (usize, usize) {
        let s_row = self
            .terms
            .rows
            .iter()
            .map(|row| row.keys().map(|k| multiplicity(k)).sum::<usize>())
            .max()
            .unwrap_or(0);
        let mut per_monomial: BTreeMap<&[usize], usize> = BTreeMap::new();
        for (_, idx, _) in self.terms.entries() {
            *per_monomial.entry(idx).or_default() += 1;
        }
        let s_col = per_monomial.values().copied().max().unwrap_or(0);
        (s_row, s_col)
    }

    pub fn validate(&self, sample_count: usize, seed: u64) -> Result<ValidationReport> {
        if sample_count == 0 {
            return Err(Error::InvalidParameter("sample_count must be at least 1".into()));
        }
        let n = self.n();
        let (s_row, s_col) = self.sparsity();
        let a_max_observed = self
            .terms
            .entries()
            .map(|(_, idx, c)| c.norm() / multiplicity(idx) as f64)
            .fold(0.0, f64::max);

        let mut rng = rng::stream(seed, 0);
        let mut measure_deviation: f64 = 0.0;
        for _ in 0..sample_count {
            let z = self.domain.sample_unit(n, &mut rng);
            let fz = self.apply(&z)?;
            let dev = (fz.iter().map(|v| v.norm_sqr()).sum::<f64>() - 1.0).abs();
            measure_deviation = measure_deviation.max(dev);
        }

        // Half the pairs are global, half are local perturbations that probe
        // the derivative.
        let mut lipschitz_estimate: f64 = 0.0;
        for i in 0..sample_count {
            let x = self.domain.sample_ball(n, &mut rng);
            let y = if i % 2 == 0 {
                self.domain.sample_ball(n, &mut rng)
            } else {
                let dir = self.domain.sample_unit(n, &mut rng);
                let mut y: Vec<C64> = x.iter().zip(&dir).map(|(a, b)| a + b * 1e-5).collect();
                let ny = norm(&y);
                if ny > 1.0 {
                    y.iter_mut().for_each(|v| *v /= ny);
                }
                y
            };
            let dxy = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dxy == 0.0 {
                continue;
            }
            let fx = self.apply(&x)?;
            let fy = self.apply(&y)?;
            let dfy = norm(&fx.iter().zip(&fy).map(|(a, b)| a - b).collect::<Vec<_>>());
            lipschitz_estimate = lipschitz_estimate.max(dfy / dxy);
        }

        Ok(ValidationReport {
            s_row,
            s_col,
            a_max_observed,
            measure_deviation,
            lipschitz_estimate,
            samples: sample_count,
        })
    }

    pub fn to_document(&self) -> PolyDocument {
        self.terms.to_document(self.domain, None)
    }

    pub fn from_document(doc: &PolyDocument) -> Result<Self> {
        if doc.degree < 2 {
            return Err(Error::InvalidPolynomial(format!(
                "map degree must be at least 2, got {}",
                doc.degree
            )));
        }
        Self { terms: Terms::from_document(doc)?, domain: SampleDomain::Complex }
            .with_domain(doc.domain)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_document())?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Self::from_document(&serde_json::from_reader(r)?)
    }
}

/// Structural and sampled diagnostics of a [`PolynomialMap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Max nonzero ordered tensor entries in one row.
    pub s_row: usize,
    /// Max number of rows sharing one ordered multi-index.
    pub s_col: usize,
    pub a_max_observed: f64,
    /// Max of `| ||F(z)||^2 - 1 |` over sampled unit points.
    pub measure_deviation: f64,
    /// Max of `||F(x) - F(y)|| / ||x - y||` over sampled pairs in the unit ball.
    pub lipschitz_estimate: f64,
    pub samples: usize,
}

/// Right-hand side `dz/dt = f(z)` with polynomial components.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeSystem {
    terms: Terms,
    domain: SampleDomain,
    measure_preserving_claimed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

/// Outcome of the norm-conservation check on an ODE right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureCheck {
    pub preserving: bool,
    /// Max of `| sum_j conj(z_j) f_j + z_j conj(f_j) |` over samples.
    pub residual: f64,
}

impl OdeSystem {
    pub fn new(n: usize, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidPolynomial("system degree must be at least 1".into()));
        }
        Ok(Self {
            terms: Terms::new(n, degree)?,
            domain: SampleDomain::Complex,
            measure_preserving_claimed: false,
        })
    }

    pub fn with_domain(mut self, domain: SampleDomain) -> Result<Self> {
        domain.check(self.terms.n)?;
        self.domain = domain;
        Ok(self)
    }

    pub fn claim_measure_preserving(mut self, claimed: bool) -> Self {
        self.measure_preserving_claimed = claimed;
        self
    }

    pub fn add_term(&mut self, alpha: usize, vars: &[usize], coeff: C64) -> Result<()> {
        self.terms.add_term(alpha, vars, coeff)
    }

    pub fn add_entry(&mut self, alpha: usize, index: &[usize], coeff: C64) -> Result<()> {
        self.terms.add_entry(alpha, index, coeff)
    }

    pub fn n(&self) -> usize {
        self.terms.n
    }

    pub fn degree(&self) -> usize {
        self.terms.degree
    }

    pub fn domain(&self) -> SampleDomain {
        self.domain
    }

    pub fn measure_preserving_claimed(&self) -> bool {
        self.measure_preserving_claimed
    }

    pub fn row(&self, alpha: usize) -> impl Iterator<Item = (&[usize], C64)> + '_ {
        self.terms.rows[alpha - 1].iter().map(|(k, &c)| (k.as_slice(), c))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &[usize], C64)> + '_ {
        self.terms.entries()
    }

    pub fn rhs(&self, z: &[C64]) -> Result<Vec<C64>> {
        self.terms.eval(z)
    }

    /// Samples `sum_j conj(z_j) f_j(z) + z_j conj(f_j(z))` on unit points of the
    /// system's domain.
    pub fn check_measure_preserving(&self, samples: usize, tol: f64, seed: u64) -> Result<MeasureCheck> {
        if samples == 0 {
            return Err(Error::InvalidParameter("samples must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, 0);
        let mut residual: f64 = 0.0;
        for _ in 0..samples {
            let z = self.domain.sample_unit(self.n(), &mut rng);
            residual = residual.max(self.norm_derivative(&z)?.abs());
        }
        Ok(MeasureCheck { preserving: residual <= tol, residual })
    }

    /// `d/dt ||z||^2 = sum_j conj(z_j) f_j + z_j conj(f_j)` at `z`.
    pub fn norm_derivative(&self, z: &[C64]) -> Result<f64> {
        let f = self.rhs(z)?;
        Ok(z.iter().zip(&f).map(|(a, b)| 2.0 * (a.conj() * b).re).sum())
    }

    /// Classical trajectory at `t_k = k t / steps`, `k = 0..=steps`.
    pub fn reference_integrate(
        &self,
        z0: &[C64],
        t: f64,
        steps: usize,
        method: Method,
    ) -> Result<Vec<Vec<C64>>> {
        if steps == 0 || !(t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need steps >= 1 and t > 0, got steps = {steps}, t = {t}"
            )));
        }
        if z0.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), actual: z0.len() });
        }
        let h = t / steps as f64;
        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(z0.to_vec());
        for k in 0..steps {
            let z = &traj[k];
            let next: Vec<C64> = match method {
                Method::Euler => {
                    let f = self.rhs(z)?;
                    z.iter().zip(&f).map(|(a, b)| a + b * h).collect()
                }
                Method::Rk4 => {
                    let axpy = |x: &[C64], k: &[C64], s: f64| -> Vec<C64> {
                        x.iter().zip(k).map(|(a, b)| a + b * s).collect()
                    };
                    let k1 = self.rhs(z)?;
                    let k2 = self.rhs(&axpy(z, &k1, h / 2.0))?;
                    let k3 = self.rhs(&axpy(z, &k2, h / 2.0))?;
                    let k4 = self.rhs(&axpy(z, &k3, h))?;
                    (0..z.len())
                        .map(|j| z[j] + (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (h / 6.0))
                        .collect()
                }
            };
            if next.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::NonFinite(format!("state at step {}", k + 1)));
            }
            traj.push(next);
        }
        Ok(traj)
    }

    pub fn to_document(&self) -> PolyDocument {
        self.terms
            .to_document(self.domain, Some(self.measure_preserving_claimed))
    }

    pub fn from_document(doc: &PolyDocument) -> Result<Self> {
        if doc.degree == 0 {
            return Err(Error::InvalidPolynomial("system degree must be at least 1".into()));
        }
        Self {
            terms: Terms::from_document(doc)?,
            domain: SampleDomain::Complex,
            measure_preserving_claimed: doc.measure_preserving_claimed.unwrap_or(false),
        }
        .with_domain(doc.domain)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_document())?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Self::from_document(&serde_json::from_reader(r)?)
    }
}

/// The Euler map `z_j -> z_j + h f_j(z)`, padded to degree `max(deg f, 2)`.
pub fn euler_map(sys: &OdeSystem, h: f64) -> Result<PolynomialMap> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    let degree = sys.degree().max(2);
    let padded = sys.terms.padded_to(degree)?;
    let mut map = PolynomialMap::new(sys.n(), degree)?.with_domain(sys.domain)?;
    for j in 1..=sys.n() {
        map.add_term(j, &[j], C64::new(1.0, 0.0))?;
    }
    for (alpha, idx, c) in padded.entries() {
        map.add_entry(alpha, idx, c * h)?;
    }
    Ok(map)
}

/// Canonical multi-indices used by any row of the map (diagnostics).
pub fn monomial_support(map: &PolynomialMap) -> BTreeSet<Vec<usize>> {
    map.entries().map(|(_, idx, _)| idx.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn identity(n: usize) -> PolynomialMap {
        let mut m = PolynomialMap::new(n, 2).unwrap();
        for j in 1..=n {
            m.add_term(j, &[j], c(1.0, 0.0)).unwrap();
        }
        m
    }

    #[test]
    fn identity_map_is_identity() {
        let m = identity(2);
        let z = [c(0.6, 0.0), c(0.8, 0.0)];
        assert_eq!(m.apply(&z).unwrap(), z.to_vec());
        assert_eq!(m.tensor_entry(1, &[1, 0]), c(0.5, 0.0));
        assert_eq!(m.tensor_entry(1, &[0, 1]), c(0.5, 0.0));
    }

    #[test]
    fn swap_map() {
        let mut m = PolynomialMap::new(2, 2).unwrap();
        m.add_term(1, &[2], c(1.0, 0.0)).unwrap();
        m.add_term(2, &[1], c(1.0, 0.0)).unwrap();
        let out = m.apply(&[c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
        assert_eq!(out, vec![c(0.8, 0.0), c(0.6, 0.0)]);
    }

    #[test]
    fn doubling_map() {
        let mut m = PolynomialMap::new(1, 2).unwrap();
        m.add_term(1, &[1, 1], c(1.0, 0.0)).unwrap();
        let out = m.apply(&[C64::from_polar(1.0, PI / 5.0)]).unwrap();
        assert!((out[0] - C64::from_polar(1.0, 2.0 * PI / 5.0)).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            identity(2).apply(&[c(1.0, 0.0)]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn zero_variables_rejected() {
        assert!(PolynomialMap::new(0, 2).is_err());
        assert!(OdeSystem::new(0, 2).is_err());
    }

    #[test]
    fn unsorted_entries_are_canonicalised() {
        let mut m = PolynomialMap::new(2, 2).unwrap();
        m.add_entry(1, &[2, 1], c(1.0, 0.0)).unwrap();
        m.add_entry(1, &[1, 2], c(1.0, 0.0)).unwrap();
        let row: Vec<_> = m.row(1).collect();
        assert_eq!(row, vec![(&[1usize, 2][..], c(2.0, 0.0))]);
        assert_eq!(m.tensor_entry(1, &[2, 1]), c(1.0, 0.0));
    }

    #[test]
    fn cancelling_entries_are_dropped() {
        let mut m = PolynomialMap::new(1, 2).unwrap();
        m.add_term(1, &[1], c(1.0, 0.0)).unwrap();
        m.add_term(1, &[1], c(-1.0, 0.0)).unwrap();
        assert_eq!(m.row(1).count(), 0);
    }

    #[test]
    fn multiplicities() {
        assert_eq!(multiplicity(&[0, 0]), 1);
        assert_eq!(multiplicity(&[0, 1]), 2);
        assert_eq!(multiplicity(&[0, 1, 1]), 3);
        assert_eq!(multiplicity(&[0, 1, 2]), 6);
        assert_eq!(distinct_permutations(&[0, 1, 1]).len(), 3);
        assert_eq!(distinct_permutations(&[1, 2, 3]).len(), 6);
    }

    #[test]
    fn validate_identity() {
        let r = identity(3).validate(64, 1).unwrap();
        assert_eq!(r.s_row, 2);
        assert!(r.s_col <= 2);
        assert!(r.measure_deviation < 1e-12);
        assert!((r.a_max_observed - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validate_doubling_on_circle() {
        let mut m = PolynomialMap::new(1, 2).unwrap();
        m.add_term(1, &[1, 1], c(1.0, 0.0)).unwrap();
        let r = m.validate(64, 2).unwrap();
        assert!(r.measure_deviation < 1e-12);
        assert!(r.lipschitz_estimate > 1.0 && r.lipschitz_estimate <= 2.0 + 1e-9);
    }

    #[test]
    fn validate_rejects_zero_samples() {
        assert!(identity(1).validate(0, 0).is_err());
    }

    #[test]
    fn validation_is_reproducible() {
        let m = identity(4);
        assert_eq!(m.validate(32, 9).unwrap(), m.validate(32, 9).unwrap());
    }

    #[test]
    fn euler_of_zero_field_is_identity() {
        let sys = OdeSystem::new(3, 2).unwrap();
        let map = euler_map(&sys, 0.3).unwrap();
        assert_eq!(map, identity(3));
    }

    #[test]
    fn euler_rotation() {
        let mut sys = OdeSystem::new(1, 1).unwrap();
        sys.add_term(1, &[1], c(0.0, 1.0)).unwrap();
        let map = euler_map(&sys, 0.1).unwrap();
        assert_eq!(map.degree(), 2);
        let out = map.apply(&[c(1.0, 0.0)]).unwrap();
        assert!((out[0] - c(1.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn euler_degree_overflow() {
        assert!(matches!(
            OdeSystem::new(1, MAX_DEGREE + 1),
            Err(Error::DegreeOverflow { .. })
        ));
        assert!(euler_map(&OdeSystem::new(1, 2).unwrap(), 0.0).is_err());
    }

    #[test]
    fn rk4_rotation() {
        let mut sys = OdeSystem::new(1, 1).unwrap();
        sys.add_term(1, &[1], c(0.0, 1.0)).unwrap();
        let z0 = c(0.6, 0.8);
        let traj = sys
            .reference_integrate(&[z0], 1.0, 1000, Method::Rk4)
            .unwrap();
        let exact = z0 * C64::from_polar(1.0, 1.0);
        assert!((traj[1000][0] - exact).norm() < 1e-9);
    }

    #[test]
    fn zero_field_trajectory_is_constant() {
        let sys = OdeSystem::new(2, 2).unwrap();
        let z0 = [c(0.6, 0.0), c(0.0, 0.8)];
        for method in [Method::Euler, Method::Rk4] {
            let traj = sys.reference_integrate(&z0, 1.0, 10, method).unwrap();
            assert!(traj.iter().all(|z| z == &z0.to_vec()));
        }
    }

    #[test]
    fn blow_up_is_reported() {
        // dz/dt = z^2 blows up at t = 1 from z = 1.
        let mut sys = OdeSystem::new(1, 2).unwrap();
        sys.add_term(1, &[1, 1], c(1.0, 0.0)).unwrap();
        let err = sys
            .reference_integrate(&[c(1.0, 0.0)], 400.0, 16, Method::Euler)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn zero_field_preserves_measure() {
        let sys = OdeSystem::new(3, 2).unwrap();
        let chk = sys.check_measure_preserving(16, 1e-12, 0).unwrap();
        assert!(chk.preserving);
        assert_eq!(chk.residual, 0.0);
    }

    #[test]
    fn document_accepts_unsorted_and_writes_sorted() {
        let text = r#"{"n": 2, "degree": 2, "entries": [
            {"alpha": 1, "index": [2, 0], "re": 1.0, "im": 0.0},
            {"alpha": 2, "index": [1, 0], "re": 0.0, "im": 1.0}]}"#;
        let map = PolynomialMap::read_json(text.as_bytes()).unwrap();
        let doc = map.to_document();
        assert_eq!(doc.entries[0].index, vec![0, 2]);
        assert_eq!(doc.entries[1].index, vec![0, 1]);
        let mut buf = Vec::new();
        map.write_json(&mut buf).unwrap();
        assert_eq!(PolynomialMap::read_json(&buf[..]).unwrap(), map);
    }

    #[test]
    fn document_rejects_bad_index() {
        let text = r#"{"n": 1, "degree": 2, "entries": [{"alpha": 1, "index": [0, 3], "re": 1.0, "im": 0.0}]}"#;
        assert!(PolynomialMap::read_json(text.as_bytes()).is_err());
        let text = r#"{"n": 1, "degree": 2, "entries": [{"alpha": 1, "index": [1], "re": 1.0, "im": 0.0}]}"#;
        assert!(PolynomialMap::read_json(text.as_bytes()).is_err());
    }
}
