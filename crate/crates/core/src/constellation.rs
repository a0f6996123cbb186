//! Constellations, Gray bit mapping, and stream-level RMS EVM.
//!
//! Point tables follow the 802.11a subcarrier modulation mapping: the first
//! half of each bit group drives I, the second half drives Q, and each axis
//! is Gray coded over ascending amplitude levels.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Bpsk,
    Qpsk,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Bpsk, Scheme::Qpsk, Scheme::Qam16, Scheme::Qam64];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Scheme::Bpsk => 1,
            Scheme::Qpsk => 2,
            Scheme::Qam16 => 4,
            Scheme::Qam64 => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSpec {
    pub scheme: Scheme,
    /// Amplitude levels per dimension (`L`).
    pub levels_per_dim: u32,
    /// Constellation order (`M`).
    pub order: u32,
    /// Normalized points indexed by bit label. Bit 0 of the group is the
    /// label's most significant bit.
    pub ideal_points: Vec<Complex64>,
    /// Unnormalized lattice points, same indexing.
    pub raw_points: Vec<Complex64>,
    /// `|A0|`, the factor taking `raw_points` to unit mean power.
    pub ideal_norm_factor: f64,
}

impl ConstellationSpec {
    pub fn bits_per_symbol(&self) -> usize {
        self.scheme.bits_per_symbol()
    }

    /// Bits of `label`, first transmitted bit first.
    pub fn label_bits(&self, label: usize) -> impl Iterator<Item = u8> {
        let n = self.bits_per_symbol();
        (0..n).map(move |i| ((label >> (n - 1 - i)) & 1) as u8)
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.ideal_points[label]
    }

    /// Mean power of the normalized points; 1 up to rounding.
    pub fn mean_power(&self) -> f64 {
        self.ideal_points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.ideal_points.len() as f64
    }
}

// Gray-coded amplitude for `bits` bits on one axis: position p carries the
// Gray code of p, levels ascend -(2^n - 1), ..., 2^n - 1.
fn axis_level(gray: usize, bits: usize) -> f64 {
    let mut position = gray;
    let mut shift = gray >> 1;
    while shift != 0 {
        position ^= shift;
        shift >>= 1;
    }
    let levels = 1usize << bits;
    (2 * position) as f64 - (levels - 1) as f64
}

/// Normalization factor `|A0| = sqrt(N / Σ|p|²)` over the N unique points.
pub fn ideal_norm_factor(raw_points: &[Complex64]) -> f64 {
    let total: f64 = raw_points.iter().map(|p| p.re * p.re + p.im * p.im).sum();
    (raw_points.len() as f64 / total).sqrt()
}

pub fn build_constellation(scheme: Scheme) -> ConstellationSpec {
    let bits = scheme.bits_per_symbol();
    let order = 1usize << bits;
    let raw_points: Vec<Complex64> = match scheme {
        Scheme::Bpsk => (0..2).map(|label| Complex64::new(axis_level(label, 1), 0.0)).collect(),
        _ => {
            let axis_bits = bits / 2;
            let mask = (1 << axis_bits) - 1;
            (0..order)
                .map(|label| {
                    Complex64::new(axis_level(label >> axis_bits, axis_bits), axis_level(label & mask, axis_bits))
                })
                .collect()
        }
    };
    let a0 = ideal_norm_factor(&raw_points);
    let ideal_points = raw_points.iter().map(|p| p * a0).collect();
    let levels_per_dim = match scheme {
        Scheme::Bpsk => 2,
        _ => (order as f64).sqrt().round() as u32,
    };
    ConstellationSpec { scheme, levels_per_dim, order: order as u32, ideal_points, raw_points, ideal_norm_factor: a0 }
}

/// Map a bit stream (one bit per `u8`, 0 or 1) onto normalized points.
pub fn map_bits(bits: &[u8], spec: &ConstellationSpec) -> Result<Vec<Complex64>> {
    let n = spec.bits_per_symbol();
    if !bits.len().is_multiple_of(n) {
        return Err(Error::Framing(format!(
            "{} bits is not a multiple of {n} bits per {:?} symbol",
            bits.len(),
            spec.scheme
        )));
    }
    Ok(bits
        .chunks_exact(n)
        .map(|group| {
            let label = group.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            spec.ideal_points[label]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub label: usize,
    pub point: Complex64,
}

/// Nearest ideal point by Euclidean distance; on ties the smallest label wins.
pub fn demap_nearest(measured: Complex64, spec: &ConstellationSpec) -> Decision {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (label, p) in spec.ideal_points.iter().enumerate() {
        let d = (measured - p).norm_sqr();
        if d < best_dist {
            best = label;
            best_dist = d;
        }
    }
    Decision { label: best, point: spec.ideal_points[best] }
}

/// Hard-decision demap of a symbol stream back to bits.
pub fn demap_bits(symbols: &[Complex64], spec: &ConstellationSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(symbols.len() * spec.bits_per_symbol());
    for &s in symbols {
        out.extend(spec.label_bits(demap_nearest(s, spec).label));
    }
    out
}

/// `|A| = sqrt(T / P_v)` with `P_v = Σ (V_I² + V_Q²)` over the T symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFactors {
    pub factor: f64,
    pub total_power: f64,
    pub symbol_count: usize,
}

impl NormalizationFactors {
    pub fn measure(symbols: &[Complex64]) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Domain("cannot normalize an empty symbol block".into()));
        }
        let total_power: f64 = symbols.iter().map(|s| s.re * s.re + s.im * s.im).sum();
        if !(total_power > 0.0) {
            return Err(Error::DegenerateInput("measured block has zero power".into()));
        }
        Ok(Self { factor: (symbols.len() as f64 / total_power).sqrt(), total_power, symbol_count: symbols.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Each stream is rescaled to unit mean power over the analyzed block.
    #[default]
    Block,
    /// Raw values, for fixtures that are already on the reference scale.
    None,
}

/// RMS EVM (fraction) of a measured stream against its ideal references.
///
/// References are given in normalized ideal-point units.
pub fn evm_rms_stream(measured: &[Complex64], references: &[Complex64], spec: &ConstellationSpec) -> Result<f64> {
    evm_rms_stream_with(measured, references, spec, Normalization::Block)
}

pub fn evm_rms_stream_with(
    measured: &[Complex64],
    references: &[Complex64],
    _spec: &ConstellationSpec,
    normalization: Normalization,
) -> Result<f64> {
    if measured.is_empty() {
        return Err(Error::Domain("EVM of an empty stream is undefined".into()));
    }
    if measured.len() != references.len() {
        return Err(Error::Framing(format!(
            "measured stream has {} symbols but {} references",
            measured.len(),
            references.len()
        )));
    }
    let (scale, ref_scale) = match normalization {
        Normalization::Block => {
            (NormalizationFactors::measure(measured)?.factor, NormalizationFactors::measure(references)?.factor)
        }
        Normalization::None => (1.0, 1.0),
    };
    let mut err = 0.0;
    let mut power = 0.0;
    for (m, r) in measured.iter().zip(references) {
        let ideal = r * ref_scale;
        err += (m * scale - ideal).norm_sqr();
        power += ideal.norm_sqr();
    }
    if !(power > 0.0) {
        return Err(Error::DegenerateInput("reference stream has zero power".into()));
    }
    Ok((err / power).sqrt())
}
