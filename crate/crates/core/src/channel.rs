//! Baseband impairment channel.
//!
//! Stages run in a fixed order: optional PA compression, static multipath,
//! IQ imbalance, carrier frequency offset, Wiener phase noise, then AWGN
//! calibrated to the configured Eb/N0. A stage at its neutral value is
//! skipped entirely, so a neutral configuration returns the input unchanged.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constellation::ConstellationSpec;
use crate::error::{Error, Result};
use crate::numerics::db_to_linear;
use crate::ofdm_phy::{OfdmParams, TxFrame, FFT_SIZE, USED_SUBCARRIERS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathTap {
    pub delay_samples: usize,
    pub gain_re: f64,
    #[serde(default)]
    pub gain_im: f64,
}

impl MultipathTap {
    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.gain_re, self.gain_im)
    }
}

fn default_taps() -> Vec<MultipathTap> {
    vec![MultipathTap { delay_samples: 0, gain_re: 1.0, gain_im: 0.0 }]
}

/// Impairments applied to one transmission. `ebn0_db: None` disables noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentConfig {
    pub ebn0_db: Option<f64>,
    pub cfo_hz: f64,
    /// 3 dB linewidth of the Wiener phase process.
    pub phase_noise_linewidth_hz: f64,
    pub iq_gain_imbalance_db: f64,
    pub iq_phase_skew_deg: f64,
    pub multipath_taps: Vec<MultipathTap>,
    /// Memoryless saturating amplifier; input backoff from saturation in dB.
    pub pa_input_backoff_db: Option<f64>,
    pub seed: u64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            ebn0_db: None,
            cfo_hz: 0.0,
            phase_noise_linewidth_hz: 0.0,
            iq_gain_imbalance_db: 0.0,
            iq_phase_skew_deg: 0.0,
            multipath_taps: default_taps(),
            pa_input_backoff_db: None,
            seed: 0,
        }
    }
}

impl ImpairmentConfig {
    pub fn neutral() -> Self {
        Self::default()
    }

    pub fn awgn(ebn0_db: f64, seed: u64) -> Self {
        Self { ebn0_db: Some(ebn0_db), seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipath_taps.is_empty() {
            return Err(Error::Configuration("multipath tap list is empty".into()));
        }
        let energy: f64 = self.multipath_taps.iter().map(|t| t.gain().norm_sqr()).sum();
        if (energy - 1.0).abs() > 1e-9 {
            return Err(Error::Configuration(format!("multipath taps carry energy {energy}, expected 1")));
        }
        for (name, v) in [
            ("cfo_hz", self.cfo_hz),
            ("iq_gain_imbalance_db", self.iq_gain_imbalance_db),
            ("iq_phase_skew_deg", self.iq_phase_skew_deg),
        ] {
            if !v.is_finite() {
                return Err(Error::Configuration(format!("{name} must be finite")));
            }
        }
        if !(self.phase_noise_linewidth_hz >= 0.0) || !self.phase_noise_linewidth_hz.is_finite() {
            return Err(Error::Configuration("phase_noise_linewidth_hz must be finite and non-negative".into()));
        }
        if let Some(e) = self.ebn0_db {
            if e.is_nan() || e == f64::NEG_INFINITY {
                return Err(Error::Configuration(format!("ebn0_db {e} is not a usable operating point")));
            }
        }
        Ok(())
    }

    fn taps_are_identity(&self) -> bool {
        self.multipath_taps.len() == 1
            && self.multipath_taps[0].delay_samples == 0
            && self.multipath_taps[0].gain() == Complex64::new(1.0, 0.0)
    }

    pub fn max_delay(&self) -> usize {
        self.multipath_taps.iter().map(|t| t.delay_samples).max().unwrap_or(0)
    }
}

/// Rates the noise calibration needs from the transmitted frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelContext {
    pub sample_rate_hz: f64,
    pub bits_per_second: f64,
}

impl ChannelContext {
    pub fn for_frame(frame: &TxFrame) -> Self {
        Self::for_link(&frame.params, &frame.spec)
    }

    pub fn for_link(params: &OfdmParams, spec: &ConstellationSpec) -> Self {
        Self { sample_rate_hz: params.sample_rate_hz, bits_per_second: params.bit_rate(spec) }
    }

    /// One bit per sample: for uncoded single-carrier symbol streams.
    pub fn symbol_stream(bits_per_symbol: usize) -> Self {
        Self { sample_rate_hz: 1.0, bits_per_second: bits_per_symbol as f64 }
    }

    /// Per-sample SNR implied by an Eb/N0 at unit signal power.
    pub fn sample_snr_db(&self, ebn0_db: f64) -> f64 {
        ebn0_db + 10.0 * (self.bits_per_second / self.sample_rate_hz).log10()
    }

    /// SNR seen on one occupied subcarrier after the receiver FFT.
    pub fn subcarrier_snr_db(&self, ebn0_db: f64) -> f64 {
        self.sample_snr_db(ebn0_db) + 10.0 * (FFT_SIZE as f64 / USED_SUBCARRIERS as f64).log10()
    }

    /// Eb/N0 that yields a given subcarrier SNR.
    pub fn ebn0_for_subcarrier_snr_db(&self, snr_db: f64) -> f64 {
        snr_db - self.subcarrier_snr_db(0.0)
    }
}

/// Complex noise variance per sample for a target Eb/N0:
/// `σ² = P·fs / (Eb/N0 · Rb)`. `+∞` dB means no noise.
pub fn calibrate_noise(signal_power: f64, ebn0_db: f64, bits_per_second: f64, sample_rate: f64) -> Result<f64> {
    for (name, v) in
        [("signal_power", signal_power), ("bits_per_second", bits_per_second), ("sample_rate", sample_rate)]
    {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if ebn0_db.is_nan() || ebn0_db == f64::NEG_INFINITY {
        return Err(Error::Domain(format!("ebn0_db must be a real number or +inf, got {ebn0_db}")));
    }
    if ebn0_db == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(signal_power * sample_rate / (db_to_linear(ebn0_db) * bits_per_second))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for an independent trial: the run seed is folded with each
/// stream coordinate through SplitMix64, `h ← splitmix(h ⊕ splitmix(c))`.
pub fn derive_seed(run_seed: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(splitmix64(run_seed), |h, &c| splitmix64(h ^ splitmix64(c)))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn apply_pa(samples: &mut [Complex64], backoff_db: f64) {
    const SMOOTHNESS: f64 = 2.0;
    let power = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len().max(1) as f64;
    let sat = (power * db_to_linear(backoff_db)).sqrt();
    if sat <= 0.0 {
        return;
    }
    for s in samples.iter_mut() {
        let r = s.norm() / sat;
        *s /= (1.0 + r.powf(2.0 * SMOOTHNESS)).powf(1.0 / (2.0 * SMOOTHNESS));
    }
}

fn convolve(samples: &[Complex64], taps: &[MultipathTap], max_delay: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); samples.len() + max_delay];
    for tap in taps {
        let g = tap.gain();
        for (o, &x) in out[tap.delay_samples..].iter_mut().zip(samples) {
            *o += g * x;
        }
    }
    out
}

fn apply_iq_imbalance(samples: &mut [Complex64], gain_db: f64, skew_deg: f64) {
    let g = 10f64.powf(gain_db / 20.0);
    let phi = skew_deg.to_radians();
    let k1 = (Complex64::new(1.0, 0.0) + Complex64::from_polar(g, -phi)) / 2.0;
    let k2 = (Complex64::new(1.0, 0.0) - Complex64::from_polar(g, phi)) / 2.0;
    for s in samples.iter_mut() {
        *s = k1 * *s + k2 * s.conj();
    }
}

fn apply_cfo(samples: &mut [Complex64], cfo_hz: f64, sample_rate: f64) {
    let step = 2.0 * std::f64::consts::PI * cfo_hz / sample_rate;
    for (n, s) in samples.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, step * n as f64);
    }
}

fn apply_phase_noise(samples: &mut [Complex64], linewidth_hz: f64, sample_rate: f64, rng: &mut ChaCha8Rng) {
    let sigma = (2.0 * std::f64::consts::PI * linewidth_hz / sample_rate).sqrt();
    let mut theta = 0.0;
    for (n, s) in samples.iter_mut().enumerate() {
        if n > 0 {
            theta += sigma * gaussian(rng);
        }
        *s *= Complex64::from_polar(1.0, theta);
    }
}

/// Run `samples` through the configured impairments.
pub fn apply_channel(samples: &[Complex64], ctx: &ChannelContext, cfg: &ImpairmentConfig) -> Result<Vec<Complex64>> {
    if samples.is_empty() {
        return Err(Error::Domain("channel input is empty".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut x = samples.to_vec();
    if let Some(backoff) = cfg.pa_input_backoff_db {
        apply_pa(&mut x, backoff);
    }
    if !cfg.taps_are_identity() {
        x = convolve(&x, &cfg.multipath_taps, cfg.max_delay());
    }
    if cfg.iq_gain_imbalance_db != 0.0 || cfg.iq_phase_skew_deg != 0.0 {
        apply_iq_imbalance(&mut x, cfg.iq_gain_imbalance_db, cfg.iq_phase_skew_deg);
    }
    if cfg.cfo_hz != 0.0 {
        apply_cfo(&mut x, cfg.cfo_hz, ctx.sample_rate_hz);
    }
    if cfg.phase_noise_linewidth_hz > 0.0 {
        apply_phase_noise(&mut x, cfg.phase_noise_linewidth_hz, ctx.sample_rate_hz, &mut rng);
    }
    if let Some(ebn0_db) = cfg.ebn0_db {
        let power = x.iter().map(|s| s.norm_sqr()).sum::<f64>() / x.len() as f64;
        let variance = calibrate_noise(power, ebn0_db, ctx.bits_per_second, ctx.sample_rate_hz)?;
        if variance > 0.0 {
            let sigma = (variance / 2.0).sqrt();
            for s in x.iter_mut() {
                let re = gaussian(&mut rng);
                let im = gaussian(&mut rng);
                *s += Complex64::new(re, im) * sigma;
            }
        }
    }
    Ok(x)
}
