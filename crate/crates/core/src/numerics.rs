//! Closed-form signal-quality mathematics.
//!
//! Gaussian tail probability, M-ary QAM bit error rate in AWGN, and the
//! EVM ↔ SNR ↔ BER conversion chain used by the analyzer and the handover
//! engine. Everything here is a pure function.

use std::f64::consts::SQRT_2;

use crate::constellation::ConstellationSpec;
use crate::error::{Error, Result};

/// Gaussian tail probability `Q(x) = P[N(0,1) > x]`.
///
/// Evaluated as `½·erfc(x/√2)`; `erfc` is the FreeBSD `s_erf.c`
/// rational approximation (sub-ulp accuracy over the whole real line).
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("q_function argument must be finite, got {x}")));
    }
    Ok(0.5 * libm::erfc(x / SQRT_2))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Operating point expressed three ways. `snr` is the symbol-rate SNR and
/// therefore equals `esn0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub ebn0: f64,
    pub esn0: f64,
    pub snr: f64,
}

impl LinkBudget {
    pub fn from_ebn0(ebn0: f64, spec: &ConstellationSpec) -> Result<Self> {
        check_ratio("ebn0", ebn0)?;
        let esn0 = ebn0 * spec.bits_per_symbol() as f64;
        Ok(Self { ebn0, esn0, snr: esn0 })
    }

    pub fn from_ebn0_db(ebn0_db: f64, spec: &ConstellationSpec) -> Result<Self> {
        Self::from_ebn0(db_to_linear(ebn0_db), spec)
    }

    pub fn from_esn0(esn0: f64, spec: &ConstellationSpec) -> Result<Self> {
        check_ratio("esn0", esn0)?;
        Ok(Self { ebn0: esn0 / spec.bits_per_symbol() as f64, esn0, snr: esn0 })
    }

    pub fn from_snr_db(snr_db: f64, spec: &ConstellationSpec) -> Result<Self> {
        Self::from_esn0(db_to_linear(snr_db), spec)
    }
}

fn check_ratio(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be a positive power ratio, got {value}")))
    }
}

/// Which energy ratio feeds the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BerInput {
    /// `2·Eb/N0` inside the square root.
    PerBit,
    /// `2·Es/(N0·log2 M)`: raised-cosine pulses sampled at the data rate.
    PerSymbolRaisedCosine,
}

/// Coherent square M-QAM bit error probability in AWGN.
pub fn ber_closed_form(spec: &ConstellationSpec, budget: &LinkBudget, input: BerInput) -> Result<f64> {
    let (levels, order) = check_levels(spec)?;
    let energy_term = match input {
        BerInput::PerBit => {
            check_ratio("ebn0", budget.ebn0)?;
            2.0 * budget.ebn0
        }
        BerInput::PerSymbolRaisedCosine => {
            check_ratio("esn0", budget.esn0)?;
            2.0 * budget.esn0 / order.log2()
        }
    };
    mary_ber(levels, energy_term)
}

/// Bit error probability predicted directly from an RMS EVM (fraction).
///
/// Substitutes `Es/N0 = 1/EVM²` into the raised-cosine form.
pub fn ber_from_evm(spec: &ConstellationSpec, evm_rms: f64) -> Result<f64> {
    if !(evm_rms > 0.0) || !evm_rms.is_finite() {
        return Err(Error::Domain(format!("evm_rms must be positive and finite, got {evm_rms}")));
    }
    let (levels, order) = check_levels(spec)?;
    mary_ber(levels, 2.0 / (order.log2() * evm_rms * evm_rms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvmSnrDirection {
    /// Linear SNR in, EVM fraction out.
    SnrToEvm,
    /// EVM fraction in, linear SNR out.
    EvmToSnr,
}

/// Gaussian-noise relation `EVM = SNR^(-1/2)` and its inverse `SNR = 1/EVM²`.
pub fn evm_snr_convert(value: f64, direction: EvmSnrDirection) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Domain(format!("value must be positive and finite, got {value}")));
    }
    Ok(match direction {
        EvmSnrDirection::SnrToEvm => (1.0 / value).sqrt(),
        EvmSnrDirection::EvmToSnr => 1.0 / (value * value),
    })
}

fn check_levels(spec: &ConstellationSpec) -> Result<(f64, f64)> {
    if spec.levels_per_dim < 2 {
        return Err(Error::Domain(format!("levels per dimension must be at least 2, got {}", spec.levels_per_dim)));
    }
    Ok((spec.levels_per_dim as f64, spec.order as f64))
}

// [2(1-1/L)/log2 L] · Q(sqrt(3·log2 L/(L²-1) · energy_term))
fn mary_ber(levels: f64, energy_term: f64) -> Result<f64> {
    let log_l = levels.log2();
    let coefficient = 2.0 * (1.0 - 1.0 / levels) / log_l;
    let argument = (3.0 * log_l / (levels * levels - 1.0) * energy_term).sqrt();
    let q = if argument.is_infinite() { 0.0 } else { q_function(argument)? };
    Ok((coefficient * q).clamp(0.0, 0.5))
}
