//! Built-in model systems and maps.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{OdeSystem, PolynomialMap, SampleDomain};
use crate::C64;

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Simple undirected graph with a degree bound. Vertices are `0..vertices`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
    pub max_degree: usize,
}

impl GraphSpec {
    pub fn new(vertices: usize, edges: Vec<(usize, usize)>, max_degree: usize) -> Result<Self> {
        let g = Self { vertices, edges, max_degree };
        g.check()?;
        Ok(g)
    }

    pub fn path(vertices: usize) -> Result<Self> {
        let edges = (1..vertices).map(|v| (v - 1, v)).collect();
        Self::new(vertices, edges, 2)
    }

    pub fn cycle(vertices: usize) -> Result<Self> {
        let edges = (0..vertices).map(|v| (v, (v + 1) % vertices)).collect();
        Self::new(vertices, edges, 2)
    }

    pub fn check(&self) -> Result<()> {
        if self.vertices == 0 {
            return Err(Error::InvalidGraph("graph has no vertices".into()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.edges {
            if a >= self.vertices || b >= self.vertices {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self loop at {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
        }
        if let Some(v) = (0..self.vertices).find(|&v| self.degree(v) > self.max_degree) {
            return Err(Error::InvalidGraph(format!(
                "vertex {v} has degree {} above the bound {}",
                self.degree(v),
                self.max_degree
            )));
        }
        Ok(())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == v, b == v) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }
}

/// `dx_j/dt = x_{j+1} x_{j+2} + x_{j-1} x_{j-2} - 2 x_{j+1} x_{j-1}`, periodic.
pub fn orszag_mclaughlin(n: usize) -> Result<OdeSystem> {
    if n < 5 {
        return Err(Error::InvalidParameter(format!(
            "Orszag-McLaughlin needs n >= 5, got {n}"
        )));
    }
    let var = |j: usize, off: isize| ((j as isize + off).rem_euclid(n as isize)) as usize + 1;
    let mut sys = OdeSystem::new(n, 2)?
        .with_domain(SampleDomain::Real)?
        .claim_measure_preserving(true);
    for j in 0..n {
        let alpha = j + 1;
        sys.add_term(alpha, &[var(j, 1), var(j, 2)], re(1.0))?;
        sys.add_term(alpha, &[var(j, -1), var(j, -2)], re(1.0))?;
        sys.add_term(alpha, &[var(j, 1), var(j, -1)], re(-2.0))?;
    }
    Ok(sys)
}

pub fn lorenz() -> OdeSystem {
    lorenz_with(10.0, 28.0, 8.0 / 3.0).expect("default Lorenz parameters are valid")
}

/// Lorenz system with variables `(x, y, z) = (z_1, z_2, z_3)`.
pub fn lorenz_with(sigma: f64, rho: f64, beta: f64) -> Result<OdeSystem> {
    let mut sys = OdeSystem::new(3, 2)?.with_domain(SampleDomain::Real)?;
    sys.add_term(1, &[2], re(sigma))?;
    sys.add_term(1, &[1], re(-sigma))?;
    sys.add_term(2, &[1], re(rho))?;
    sys.add_term(2, &[1, 3], re(-1.0))?;
    sys.add_term(2, &[2], re(-1.0))?;
    sys.add_term(3, &[1, 2], re(1.0))?;
    sys.add_term(3, &[3], re(-beta))?;
    Ok(sys)
}

/// Discrete nonlinear Schrodinger equation on `g` with `z = scale * u`,
/// `-i du_v/dt = 2 deg(v) u_v - sum_{w~v} u_w + scale^k |u_v|^k u_v`.
///
/// The system is conjugate-doubled: variables `1..=V` hold `u_v` and
/// `V+1..=2V` hold `w_v`, which evolves by the conjugate equation so that
/// `w = conj(u)` is invariant. `|u_v|^k u_v = (u_v w_v)^{k/2} u_v` is then a
/// polynomial of degree `k + 1`.
pub fn discrete_nls_scaled(g: &GraphSpec, k: u32, scale: f64) -> Result<OdeSystem> {
    g.check()?;
    if k % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "odd nonlinearity exponent k = {k} has no polynomial embedding"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    let nv = g.vertices;
    let degree = (k as usize + 1).max(1);
    let mut sys = OdeSystem::new(2 * nv, degree)?
        .with_domain(SampleDomain::Conjugate)?
        .claim_measure_preserving(true);
    let i = C64::new(0.0, 1.0);
    let strength = scale.powi(k as i32);
    let half = k as usize / 2;
    for v in 0..nv {
        let (u, w) = (v + 1, nv + v + 1);
        let diag = 2.0 * g.degree(v) as f64;
        sys.add_term(u, &[u], i * diag)?;
        sys.add_term(w, &[w], -i * diag)?;
        for nb in g.neighbours(v) {
            sys.add_term(u, &[nb + 1], -i)?;
            sys.add_term(w, &[nv + nb + 1], i)?;
        }
        let mut vars_u = vec![u; half + 1];
        vars_u.extend(std::iter::repeat_n(w, half));
        let mut vars_w = vec![w; half + 1];
        vars_w.extend(std::iter::repeat_n(u, half));
        sys.add_term(u, &vars_u, i * strength)?;
        sys.add_term(w, &vars_w, -i * strength)?;
    }
    Ok(sys)
}

pub fn discrete_nls(g: &GraphSpec, k: u32) -> Result<OdeSystem> {
    discrete_nls_scaled(g, k, 1.0)
}

/// Splits a physical NLS state `z` into the unit doubled vector `(u, conj u)`
/// and the scale with `z = scale * u`, for use with [`discrete_nls_scaled`].
pub fn nls_encode(z: &[C64]) -> Result<(Vec<C64>, f64)> {
    let norm2: f64 = z.iter().map(|v| v.norm_sqr()).sum();
    if !(norm2 > 0.0) {
        return Err(Error::InvalidParameter("NLS state must be nonzero".into()));
    }
    let scale = (2.0 * norm2).sqrt();
    let doubled = z
        .iter()
        .map(|v| v / scale)
        .chain(z.iter().map(|v| v.conj() / scale))
        .collect();
    Ok((doubled, scale))
}

/// Physical `z` from a doubled vector and its scale.
pub fn nls_decode(doubled: &[C64], scale: f64) -> Vec<C64> {
    doubled[..doubled.len() / 2].iter().map(|v| v * scale).collect()
}

/// `f_j = z_j`.
pub fn identity_map(n: usize) -> Result<PolynomialMap> {
    let mut m = PolynomialMap::new(n, 2)?;
    for j in 1..=n {
        m.add_term(j, &[j], re(1.0))?;
    }
    Ok(m)
}

/// `z -> z^2` on the unit circle.
pub fn doubling_map() -> PolynomialMap {
    power_map(2)
}

/// `z -> z^3` on the unit circle, consuming three copies per step.
pub fn tripling_map() -> PolynomialMap {
    power_map(3)
}

fn power_map(d: usize) -> PolynomialMap {
    let mut m = PolynomialMap::new(1, d)
        .and_then(|m| m.with_domain(SampleDomain::Torus))
        .expect("power map is valid");
    m.add_term(1, &vec![1; d], re(1.0)).expect("power map term is valid");
    m
}

/// Random sparse unitary-linear map: a random permutation with random
/// phases, with randomly chosen disjoint pairs mixed by a random 2x2 unitary.
/// Norm-preserving on the whole complex sphere.
pub fn random_unitary_map<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PolynomialMap> {
    let mut perm: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut map = PolynomialMap::new(n, 2)?;
    let mut alpha = 1;
    while alpha <= n {
        let mix = alpha < n && rng.random_bool(0.5);
        if mix {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let phases: [f64; 3] = [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ];
            let (c, s) = (theta.cos(), theta.sin());
            let (p, q) = (perm[alpha - 1], perm[alpha]);
            let g = C64::from_polar(1.0, phases[0]);
            let u = C64::from_polar(1.0, phases[1]);
            let v = C64::from_polar(1.0, phases[2]);
            // [[g u c, g v s], [-g conj(v) s, g conj(u) c]] is unitary.
            map.add_term(alpha, &[p], g * u * c)?;
            map.add_term(alpha, &[q], g * v * s)?;
            map.add_term(alpha + 1, &[p], -g * v.conj() * s)?;
            map.add_term(alpha + 1, &[q], g * u.conj() * c)?;
            alpha += 2;
        } else {
            let phase = C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            map.add_term(alpha, &[perm[alpha - 1]], phase)?;
            alpha += 1;
        }
    }
    Ok(map)
}

/// Random monomial map of the given degree that preserves the torus
/// `|z_j| = 1/sqrt(n)`: each `f_alpha` is `n^{(m-1)/2} e^{i theta} z_{k_1} .. z_{k_m}`
/// for a random number `m` of random variables. Sparse and genuinely nonlinear.
pub fn random_torus_map<R: Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Result<PolynomialMap> {
    let mut map = PolynomialMap::new(n, degree)?.with_domain(SampleDomain::Torus)?;
    for alpha in 1..=n {
        let order = rng.random_range(1..=degree);
        let vars: Vec<usize> = (0..order).map(|_| rng.random_range(1..=n)).collect();
        let coeff = C64::from_polar(
            (n as f64).powf((order as f64 - 1.0) / 2.0),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        map.add_term(alpha, &vars, coeff)?;
    }
    Ok(map)
}
