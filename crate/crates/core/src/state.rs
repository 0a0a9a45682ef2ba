//! Amplitude encoding of variable vectors and multi-register joint states.
//!
//! A vector `z` with `||z|| = 1` is stored as
//! `(1/sqrt 2)|0> + (1/sqrt 2) sum_j z_j |j>`; basis index `0` is the anchor.
//! Decoding divides by the anchor amplitude, which also undoes any global phase.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Default cap on the register-space dimension `(n+1)^d`.
pub const DEFAULT_REGISTER_CAP: usize = 1 << 14;

/// Anchors smaller than this are treated as absent by [`AmplitudeState::decode`].
pub const MIN_ANCHOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeState {
    amps: Vec<C64>,
}

impl AmplitudeState {
    /// Encodes `z`; fails when `| ||z||^2 - 1 | > tol`.
    pub fn encode(z: &[C64], tol: f64) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::InvalidParameter("cannot encode an empty vector".into()));
        }
        let norm2: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        let deviation = (norm2 - 1.0).abs();
        if !(deviation <= tol) {
            return Err(Error::NotNormalized { deviation, tol });
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = std::iter::once(C64::new(s, 0.0))
            .chain(z.iter().map(|v| v * s))
            .collect();
        Ok(Self { amps })
    }

    /// Wraps raw amplitudes after normalising them.
    pub fn from_amplitudes(mut amps: Vec<C64>) -> Result<Self> {
        if amps.len() < 2 {
            return Err(Error::InvalidParameter("a state needs at least two levels".into()));
        }
        let nrm = crate::poly::norm(&amps);
        if !(nrm > 0.0 && nrm.is_finite()) {
            return Err(Error::NonFinite("state norm".into()));
        }
        amps.iter_mut().for_each(|v| *v /= nrm);
        Ok(Self { amps })
    }

    /// Number of encoded variables `n` (the state has `n + 1` levels).
    pub fn n(&self) -> usize {
        self.amps.len() - 1
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn anchor(&self) -> C64 {
        self.amps[0]
    }

    pub fn norm(&self) -> f64 {
        crate::poly::norm(&self.amps)
    }

    /// Copy rotated by the global phase that makes the anchor real positive.
    pub fn phase_aligned(&self) -> Self {
        let a = self.amps[0];
        if a.norm() == 0.0 {
            return self.clone();
        }
        let phase = a.conj() / a.norm();
        let mut amps: Vec<C64> = self.amps.iter().map(|v| v * phase).collect();
        amps[0] = C64::new(a.norm(), 0.0);
        Self { amps }
    }

    pub fn scaled_phase(&self, phase: C64) -> Self {
        Self { amps: self.amps.iter().map(|v| v * phase).collect() }
    }

    /// `z_j = amps[j] / amps[0]`.
    pub fn decode(&self) -> Result<Vec<C64>> {
        let a = self.amps[0];
        if a.norm() < MIN_ANCHOR {
            return Err(Error::VanishingAnchor(a.norm()));
        }
        if a.im == 0.0 {
            return Ok(self.amps[1..].iter().map(|v| v / a.re).collect());
        }
        Ok(self.amps[1..].iter().map(|v| v / a).collect())
    }

    /// `|phi>^{(x) d} (x) |0>_ancilla`.
    pub fn tensor_power(&self, d: usize, cap: usize) -> Result<JointState> {
        if d == 0 {
            return Err(Error::InvalidParameter("tensor power needs d >= 1".into()));
        }
        let levels = self.amps.len();
        let dim = levels
            .checked_pow(d as u32)
            .filter(|&dim| dim <= cap)
            .ok_or(Error::CapExceeded { dim: levels.saturating_pow(d as u32), cap })?;
        let mut reg = self.amps.clone();
        for _ in 1..d {
            reg = reg
                .iter()
                .flat_map(|&a| self.amps.iter().map(move |&b| a * b))
                .collect();
        }
        debug_assert_eq!(reg.len(), dim);
        let mut amps = reg;
        amps.resize(2 * dim, C64::new(0.0, 0.0));
        Ok(JointState { amps, levels, registers: d })
    }

    /// Dumps `basis_index,re,im` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_amplitudes_csv(&self.amps, w)
    }
}

pub(crate) fn write_amplitudes_csv<W: Write>(amps: &[C64], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["basis_index", "re", "im"])?;
    for (i, v) in amps.iter().enumerate() {
        wtr.write_record([i.to_string(), v.re.to_string(), v.im.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `d` registers of `levels` states each, plus one ancilla qubit.
///
/// Layout is ancilla-slowest: index `= ancilla * levels^d + sum_i j_i levels^(d-1-i)`,
/// so the first register is the most significant digit.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    amps: Vec<C64>,
    levels: usize,
    registers: usize,
}

impl JointState {
    pub fn from_parts(amps: Vec<C64>, levels: usize, registers: usize) -> Result<Self> {
        let expected = 2 * levels.pow(registers as u32);
        if amps.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: amps.len() });
        }
        Ok(Self { amps, levels, registers })
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn registers(&self) -> usize {
        self.registers
    }

    /// Dimension of the register space, `levels^registers`.
    pub fn register_dim(&self) -> usize {
        self.amps.len() / 2
    }

    pub fn sector(&self, ancilla: usize) -> &[C64] {
        let d = self.register_dim();
        &self.amps[ancilla * d..(ancilla + 1) * d]
    }

    pub fn norm(&self) -> f64 {
        crate::poly::norm(&self.amps)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_amplitudes_csv(&self.amps, w)
    }
}

/// Euclidean distance after rotating `b` by the global phase that maximises
/// its overlap with `a`.
pub fn distance(a: &[C64], b: &[C64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let overlap: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap.conj() / overlap.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y * phase).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

impl AmplitudeState {
    pub fn distance(&self, other: &AmplitudeState) -> Result<f64> {
        distance(&self.amps, &other.amps)
    }
}
