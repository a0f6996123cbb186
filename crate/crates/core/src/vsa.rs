//! Vector-signal-analyzer style receiver and EVM measurement.
//!
//! A frame is analyzed in four steps: preamble synchronization with a coarse
//! (short training) and fine (long training) frequency estimate, FFT
//! demodulation with least-squares channel equalization, optional per-symbol
//! pilot tracking, and finally the per-frame RMS error of the measured grid
//! against its references, averaged over frames.
//!
//! The reported frequency error adds a pilot-phase regression over the whole
//! payload to the preamble estimate; the preamble alone is too short to
//! resolve tens of hertz at low SNR.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::constellation::{build_constellation, demap_nearest, ConstellationSpec};
use crate::error::{Error, Result};
use crate::ofdm_phy::capture::Capture;
use crate::ofdm_phy::{
    long_training_row, long_training_symbol, pilot_values, OfdmFft, OfdmParams, SymbolRow, DATA_POSITIONS, FFT_SIZE,
    HEADER_SAMPLES, LTF_OFFSET, PILOT_POSITIONS, PILOT_SUBCARRIERS, PREAMBLE_SAMPLES, SUBCARRIERS, USED_SUBCARRIERS,
};

/// Reported floor for `20·log10(E_rms)` so that a perfect grid stays finite.
pub const EVM_DB_FLOOR: f64 = -100.0;

/// Minimum normalized long-training correlation accepted as a preamble.
pub const SYNC_THRESHOLD: f64 = 0.35;

/// Candidate start positions examined beyond the nominal long-training offset.
const SYNC_SEARCH_SAMPLES: usize = 1024;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn evm_to_db(evm_rms: f64) -> f64 {
    if evm_rms > 0.0 {
        (20.0 * evm_rms.log10()).max(EVM_DB_FLOOR)
    } else {
        EVM_DB_FLOOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracking {
    Off,
    /// Common phase and amplitude per OFDM symbol from the four pilots.
    #[default]
    PilotPhaseAmplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfoCorrection {
    /// Leave the received frequency offset in place; the channel's offset then
    /// plays the role of the residual left after estimation.
    None,
    /// Correct with the preamble estimate only.
    Preamble,
    /// Correct with the preamble estimate refined by pilot phase regression.
    #[default]
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelEstimation {
    /// Least squares on the two long training symbols.
    #[default]
    LongTraining,
    /// Least squares on the long training symbols and every payload symbol
    /// against its reference.
    FullFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzerConfig {
    pub tracking: Tracking,
    pub cfo_correction: CfoCorrection,
    pub channel_estimation: ChannelEstimation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvmScope {
    DataAndPilot,
    PilotOnly,
    DataOnly,
}

impl EvmScope {
    const ALL: [EvmScope; 3] = [EvmScope::DataAndPilot, EvmScope::PilotOnly, EvmScope::DataOnly];

    pub fn positions(self) -> &'static [usize] {
        static ALL_POSITIONS: [usize; USED_SUBCARRIERS] = {
            let mut p = [0; USED_SUBCARRIERS];
            let mut i = 0;
            while i < USED_SUBCARRIERS {
                p[i] = i;
                i += 1;
            }
            p
        };
        match self {
            EvmScope::DataAndPilot => &ALL_POSITIONS,
            EvmScope::PilotOnly => &PILOT_POSITIONS,
            EvmScope::DataOnly => &DATA_POSITIONS,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Preamble timing and frequency estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    /// Index of the first preamble sample.
    pub timing_offset: usize,
    pub coarse_cfo_hz: f64,
    pub fine_cfo_hz: f64,
    /// `coarse + fine`.
    pub freq_err_hz: f64,
    /// Normalized correlation at the detected position, in [0, 1].
    pub peak_metric: f64,
}

fn energy(x: &[Complex64]) -> f64 {
    x.iter().map(|s| s.norm_sqr()).sum()
}

fn correlate(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

/// Locate the preamble by cross-correlating against both long training
/// symbols and estimate the carrier offset from the training repetitions.
pub fn synchronize(rx: &[Complex64], params: &OfdmParams) -> Result<SyncResult> {
    params.check()?;
    if rx.len() < PREAMBLE_SAMPLES {
        return Err(Error::SyncFailure(format!("{} samples cannot hold a preamble", rx.len())));
    }
    let fft = OfdmFft::new();
    let ltf = long_training_symbol(&fft);
    let ltf_energy = energy(&ltf);
    let normalized = |at: usize| {
        let seg = &rx[at..at + FFT_SIZE];
        let e = energy(seg);
        if e > 0.0 {
            correlate(seg, &ltf).norm() / (e * ltf_energy).sqrt()
        } else {
            0.0
        }
    };

    let last = (rx.len() - 2 * FFT_SIZE).min(LTF_OFFSET + SYNC_SEARCH_SAMPLES);
    let (mut peak, mut metric) = (0, -1.0);
    for n in 0..=last {
        let m = 0.5 * (normalized(n) + normalized(n + FFT_SIZE));
        if m > metric {
            peak = n;
            metric = m;
        }
    }
    if metric < SYNC_THRESHOLD {
        return Err(Error::SyncFailure(format!("correlation peak {metric:.3} below {SYNC_THRESHOLD}")));
    }
    if peak < LTF_OFFSET || peak + 2 * FFT_SIZE > rx.len() {
        return Err(Error::SyncFailure("preamble is truncated".into()));
    }
    let start = peak - LTF_OFFSET;
    let fs = params.sample_rate_hz;

    let stf = &rx[start..start + 160];
    let coarse = correlate(&stf[16..], &stf[..160 - 16]).arg() * fs / (2.0 * PI * 16.0);

    let t1 = &rx[peak..peak + FFT_SIZE];
    let t2 = &rx[peak + FFT_SIZE..peak + 2 * FFT_SIZE];
    let lag = Complex64::from_polar(1.0, -2.0 * PI * coarse * FFT_SIZE as f64 / fs);
    let fine = (correlate(t2, t1) * lag).arg() * fs / (2.0 * PI * FFT_SIZE as f64);

    Ok(SyncResult {
        timing_offset: start,
        coarse_cfo_hz: coarse,
        fine_cfo_hz: fine,
        freq_err_hz: coarse + fine,
        peak_metric: metric,
    })
}

/// One analyzed frame: equalized measurements and the matching ideal points.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    pub measured: Vec<SymbolRow>,
    pub reference: Vec<SymbolRow>,
    /// Refined carrier frequency estimate.
    pub freq_err_hz: f64,
    /// SNR seen on the long training symbols, from their difference.
    pub ltf_snr_db: f64,
}

impl GridFrame {
    /// Wrap an externally produced grid; shapes must match.
    pub fn new(measured: Vec<SymbolRow>, reference: Vec<SymbolRow>) -> Result<Self> {
        let frame = GridFrame { measured, reference, freq_err_hz: 0.0, ltf_snr_db: f64::INFINITY };
        frame.check()?;
        Ok(frame)
    }

    pub fn symbols(&self) -> usize {
        self.reference.len()
    }

    fn check(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::DegenerateInput("frame carries no OFDM symbols".into()));
        }
        if self.measured.len() != self.reference.len() {
            return Err(Error::Framing(format!(
                "{} measured symbols against {} reference symbols",
                self.measured.len(),
                self.reference.len()
            )));
        }
        Ok(())
    }
}

/// Measured and reference points indexed by (frame, symbol, subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct RxGrid {
    pub frames: Vec<GridFrame>,
    /// `P_o`, mean power of the ideal constellation.
    pub avg_power: f64,
}

impl RxGrid {
    pub fn new(avg_power: f64) -> Self {
        RxGrid { frames: Vec::new(), avg_power }
    }

    pub fn for_constellation(spec: &ConstellationSpec) -> Self {
        Self::new(spec.mean_power())
    }

    pub fn push(&mut self, frame: GridFrame) -> Result<()> {
        frame.check()?;
        if let Some(first) = self.frames.first() {
            if first.symbols() != frame.symbols() {
                return Err(Error::Framing(format!(
                    "frame with {} symbols added to a grid of {}-symbol frames",
                    frame.symbols(),
                    first.symbols()
                )));
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn pilot_mask() -> [bool; USED_SUBCARRIERS] {
        let mut mask = [false; USED_SUBCARRIERS];
        PILOT_POSITIONS.iter().for_each(|&p| mask[p] = true);
        mask
    }
}

fn derotated(rx: &[Complex64], from: usize, len: usize, f_hz: f64, fs: f64) -> Vec<Complex64> {
    if f_hz == 0.0 {
        return rx[from..from + len].to_vec();
    }
    let w = -2.0 * PI * f_hz / fs;
    (from..from + len).map(|n| rx[n] * Complex64::from_polar(1.0, w * n as f64)).collect()
}

struct Demodulated {
    ltf: [SymbolRow; 2],
    /// FFT output per payload symbol before equalization.
    raw: Vec<SymbolRow>,
}

fn demodulate_raw(
    rx: &[Complex64],
    timing: usize,
    symbols: usize,
    f_hz: f64,
    params: &OfdmParams,
    fft: &OfdmFft,
) -> Result<Demodulated> {
    let sym_len = params.symbol_samples();
    let needed = timing + HEADER_SAMPLES + symbols * sym_len;
    if rx.len() < needed {
        return Err(Error::Framing(format!(
            "{symbols} symbols need {needed} samples from the preamble start, received {}",
            rx.len()
        )));
    }
    let fs = params.sample_rate_hz;
    let t1 = timing + LTF_OFFSET;
    let ltf = [
        fft.analyze(&derotated(rx, t1, FFT_SIZE, f_hz, fs)),
        fft.analyze(&derotated(rx, t1 + FFT_SIZE, FFT_SIZE, f_hz, fs)),
    ];
    let cp = params.cyclic_prefix_samples;
    let raw = (0..symbols)
        .map(|j| fft.analyze(&derotated(rx, timing + HEADER_SAMPLES + j * sym_len + cp, FFT_SIZE, f_hz, fs)))
        .collect();
    Ok(Demodulated { ltf, raw })
}

fn estimate_channel(d: &Demodulated, reference: Option<&[SymbolRow]>, mode: ChannelEstimation) -> SymbolRow {
    let l = long_training_row();
    let mut h = [ZERO; USED_SUBCARRIERS];
    for k in 0..USED_SUBCARRIERS {
        let mut num = (d.ltf[0][k] + d.ltf[1][k]) * l[k].conj();
        let mut den = 2.0 * l[k].norm_sqr();
        if let (ChannelEstimation::FullFrame, Some(refs)) = (mode, reference) {
            for (y, x) in d.raw.iter().zip(refs) {
                num += y[k] * x[k].conj();
                den += x[k].norm_sqr();
            }
        }
        h[k] = num / den;
    }
    h
}

fn ltf_snr_db(ltf: &[SymbolRow; 2]) -> f64 {
    let n = USED_SUBCARRIERS as f64;
    let noise = ltf[0].iter().zip(&ltf[1]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / (2.0 * n);
    let mean = ltf[0].iter().zip(&ltf[1]).map(|(a, b)| ((a + b) / 2.0).norm_sqr()).sum::<f64>() / n;
    let signal = (mean - noise / 2.0).max(f64::MIN_POSITIVE);
    if noise > 0.0 {
        10.0 * (signal / noise).log10()
    } else {
        f64::INFINITY
    }
}

fn pilot_sum(row: &SymbolRow, j: usize) -> Complex64 {
    let p = pilot_values(j + 1);
    PILOT_POSITIONS.iter().zip(p.iter()).map(|(&pos, &v)| row[pos] * v).sum()
}

/// Residual frequency from the pilot phase trajectory, in hertz.
///
/// `z[j]` is the pilot correlation of symbol j. The tone frequency maximizing
/// `|Σ z[j]·e^(-iωj)|` is located on a zero-padded FFT and then polished by
/// golden-section search; no phase unwrapping, so isolated noisy symbols
/// cannot cause cycle slips.
fn pilot_residual_hz(z: &[Complex64], symbol_s: f64) -> f64 {
    if z.len() < 2 {
        return 0.0;
    }
    let m = (4 * z.len()).next_power_of_two().max(64);
    let mut buf = vec![ZERO; m];
    buf[..z.len()].copy_from_slice(z);
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let k = (0..m).max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr())).unwrap_or(0);
    let bin = 2.0 * PI / m as f64;
    let center = if k > m / 2 { (k as f64 - m as f64) * bin } else { k as f64 * bin };

    let power = |w: f64| {
        let step = Complex64::from_polar(1.0, -w);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = ZERO;
        for zj in z {
            acc += zj * rot;
            rot *= step;
        }
        acc.norm_sqr()
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (center - bin, center + bin);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (power(x1), power(x2));
    for _ in 0..40 {
        if f1 > f2 {
            hi = x2;
            (x2, f2) = (x1, f1);
            x1 = hi - g * (hi - lo);
            f1 = power(x1);
        } else {
            lo = x1;
            (x1, f1) = (x2, f2);
            x2 = lo + g * (hi - lo);
            f2 = power(x2);
        }
    }
    // Newton steps on d|S|²/dω reach full precision where the search stalls.
    let mut w = 0.5 * (lo + hi);
    for _ in 0..3 {
        let (mut s0, mut s1, mut s2) = (ZERO, ZERO, ZERO);
        for (j, zj) in z.iter().enumerate() {
            let t = zj * Complex64::from_polar(1.0, -w * j as f64);
            let jf = j as f64;
            s0 += t;
            s1 += t * Complex64::new(0.0, -jf);
            s2 += t * -(jf * jf);
        }
        let d1 = 2.0 * (s0.conj() * s1).re;
        let d2 = 2.0 * (s1.norm_sqr() + (s0.conj() * s2).re);
        if d2 >= 0.0 {
            break;
        }
        let step = -d1 / d2;
        if !step.is_finite() || step.abs() > bin {
            break;
        }
        w += step;
    }
    w / (2.0 * PI * symbol_s)
}

/// Symbols on each side averaged into the pilot amplitude estimate.
const AMPLITUDE_HALF_WINDOW: usize = 8;

/// Per-symbol common phase from the pilots; amplitude from the pilot
/// magnitude averaged over neighbouring symbols, so a symbol whose four
/// pilots happen to cancel in noise is not divided by a near-zero gain.
fn track(rows: &mut [SymbolRow]) {
    let c: Vec<Complex64> =
        rows.iter().enumerate().map(|(j, row)| pilot_sum(row, j) / PILOT_SUBCARRIERS as f64).collect();
    let mut prefix = vec![0.0; c.len() + 1];
    for (j, cj) in c.iter().enumerate() {
        prefix[j + 1] = prefix[j] + cj.norm();
    }
    for (j, row) in rows.iter_mut().enumerate() {
        let lo = j.saturating_sub(AMPLITUDE_HALF_WINDOW);
        let hi = (j + AMPLITUDE_HALF_WINDOW + 1).min(c.len());
        let amplitude = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        if amplitude > 0.0 && c[j].norm_sqr() > 0.0 {
            let gain = Complex64::from_polar(amplitude, c[j].arg());
            row.iter_mut().for_each(|y| *y /= gain);
        }
    }
}

struct Equalized {
    rows: Vec<SymbolRow>,
    freq_err_hz: f64,
    ltf_snr_db: f64,
}

fn equalize_pass(
    rx: &[Complex64],
    sync: &SyncResult,
    params: &OfdmParams,
    symbols: usize,
    reference: Option<&[SymbolRow]>,
    estimation: ChannelEstimation,
    applied_hz: f64,
    fft: &OfdmFft,
) -> Result<Equalized> {
    let d = demodulate_raw(rx, sync.timing_offset, symbols, applied_hz, params, fft)?;
    let h = estimate_channel(&d, reference, estimation);
    let rows: Vec<SymbolRow> = d
        .raw
        .iter()
        .map(|y| {
            let mut row = *y;
            row.iter_mut().zip(&h).for_each(|(v, hk)| *v = if hk.norm_sqr() > 0.0 { *v / hk } else { ZERO });
            row
        })
        .collect();

    // Pilot phase advance measured relative to the preamble estimate. Pilots
    // are combined through conj(h) rather than 1/h so a faded estimate on
    // one pilot cannot dominate the sum.
    let t_sym = params.symbol_duration_s();
    let offset = 2.0 * PI * (sync.freq_err_hz - applied_hz) * t_sym;
    let z: Vec<Complex64> = d
        .raw
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let mut mf = *y;
            mf.iter_mut().zip(&h).for_each(|(v, hk)| *v *= hk.conj());
            pilot_sum(&mf, j) * Complex64::from_polar(1.0, -offset * j as f64)
        })
        .collect();
    let freq_err_hz = sync.freq_err_hz + pilot_residual_hz(&z, t_sym);
    Ok(Equalized { rows, freq_err_hz, ltf_snr_db: ltf_snr_db(&d.ltf) })
}

/// Demodulate `reference.len()` payload symbols into an equalized grid.
pub fn demodulate_to_grid(
    rx: &[Complex64],
    sync: &SyncResult,
    params: &OfdmParams,
    reference: &[SymbolRow],
    cfg: &AnalyzerConfig,
) -> Result<GridFrame> {
    if reference.is_empty() {
        return Err(Error::Framing("declared symbol count is zero".into()));
    }
    let fft = OfdmFft::new();
    let pass = |applied: f64, estimation: ChannelEstimation| {
        equalize_pass(rx, sync, params, reference.len(), Some(reference), estimation, applied, &fft)
    };
    // The refining pass uses the training-only channel estimate: a data-aided
    // one averaged over a drifting phase collapses toward zero.
    let mut eq = match cfg.cfo_correction {
        CfoCorrection::None => pass(0.0, cfg.channel_estimation)?,
        CfoCorrection::Preamble => pass(sync.freq_err_hz, cfg.channel_estimation)?,
        CfoCorrection::Refined => {
            let refined = pass(sync.freq_err_hz, ChannelEstimation::LongTraining)?.freq_err_hz;
            pass(refined, cfg.channel_estimation)?
        }
    };
    if cfg.tracking == Tracking::PilotPhaseAmplitude {
        track(&mut eq.rows);
    }
    Ok(GridFrame {
        measured: eq.rows,
        reference: reference.to_vec(),
        freq_err_hz: eq.freq_err_hz,
        ltf_snr_db: eq.ltf_snr_db,
    })
}

/// Synchronize and demodulate a frame whose transmitted grid is known.
pub fn analyze_frame(
    rx: &[Complex64],
    reference: &[SymbolRow],
    params: &OfdmParams,
    cfg: &AnalyzerConfig,
) -> Result<GridFrame> {
    let sync = synchronize(rx, params)?;
    demodulate_to_grid(rx, &sync, params, reference, cfg)
}

fn decided_reference(rows: &[SymbolRow], spec: &ConstellationSpec) -> Vec<SymbolRow> {
    rows.iter()
        .enumerate()
        .map(|(j, row)| {
            let mut r = [ZERO; USED_SUBCARRIERS];
            for &pos in &DATA_POSITIONS {
                r[pos] = demap_nearest(row[pos], spec).point;
            }
            for (&pos, &v) in PILOT_POSITIONS.iter().zip(pilot_values(j + 1).iter()) {
                r[pos] = Complex64::new(v, 0.0);
            }
            r
        })
        .collect()
}

/// Analyze a frame without its transmitted grid: data references are the
/// nearest ideal points to the measurements, pilots are known.
pub fn analyze_frame_decision_directed(
    rx: &[Complex64],
    symbols: usize,
    params: &OfdmParams,
    spec: &ConstellationSpec,
    cfg: &AnalyzerConfig,
) -> Result<GridFrame> {
    if symbols == 0 {
        return Err(Error::Framing("declared symbol count is zero".into()));
    }
    let sync = synchronize(rx, params)?;
    let fft = OfdmFft::new();
    let applied = match cfg.cfo_correction {
        CfoCorrection::None => 0.0,
        CfoCorrection::Preamble => sync.freq_err_hz,
        CfoCorrection::Refined => {
            equalize_pass(rx, &sync, params, symbols, None, ChannelEstimation::LongTraining, sync.freq_err_hz, &fft)?
                .freq_err_hz
        }
    };
    let mut eq = equalize_pass(rx, &sync, params, symbols, None, ChannelEstimation::LongTraining, applied, &fft)?;
    if cfg.tracking == Tracking::PilotPhaseAmplitude {
        track(&mut eq.rows);
    }
    let mut reference = decided_reference(&eq.rows, spec);
    if cfg.channel_estimation == ChannelEstimation::FullFrame {
        eq = equalize_pass(rx, &sync, params, symbols, Some(&reference), cfg.channel_estimation, applied, &fft)?;
        if cfg.tracking == Tracking::PilotPhaseAmplitude {
            track(&mut eq.rows);
        }
        reference = decided_reference(&eq.rows, spec);
    }
    Ok(GridFrame { measured: eq.rows, reference, freq_err_hz: eq.freq_err_hz, ltf_snr_db: eq.ltf_snr_db })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopedEvm {
    pub evm_rms: f64,
    /// RMS over frames and symbols at each subcarrier, whatever the scope.
    pub per_subcarrier_evm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvmReport {
    pub evm_rms: f64,
    pub evm_db: f64,
    pub evm_pilot: f64,
    pub evm_pilot_db: f64,
    pub freq_err_hz: f64,
    pub per_subcarrier_evm: Vec<f64>,
    pub n_frames: usize,
    pub symbols_per_frame: usize,
    pub avg_constellation_power: f64,
}

impl EvmReport {
    pub fn csv_header() -> Vec<String> {
        let mut cols: Vec<String> =
            ["frame_count", "evm_rms", "evm_db", "evm_pilot", "evm_pilot_db", "freq_err_hz"].map(String::from).into();
        cols.extend(SUBCARRIERS.iter().map(|k| format!("evm_sc{k:+}")));
        cols
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut rec = vec![
            self.n_frames.to_string(),
            self.evm_rms.to_string(),
            self.evm_db.to_string(),
            self.evm_pilot.to_string(),
            self.evm_pilot_db.to_string(),
            self.freq_err_hz.to_string(),
        ];
        rec.extend(self.per_subcarrier_evm.iter().map(|v| v.to_string()));
        rec
    }
}

/// Order-independent aggregation of per-frame EVM.
#[derive(Debug, Clone, PartialEq)]
pub struct EvmAccumulator {
    avg_power: f64,
    frames: usize,
    symbols_per_frame: Option<usize>,
    rms_sum: [f64; 3],
    per_subcarrier_err: [f64; USED_SUBCARRIERS],
    freq_err_sum: f64,
}

impl EvmAccumulator {
    pub fn new(avg_power: f64) -> Result<Self> {
        if !(avg_power > 0.0) || !avg_power.is_finite() {
            return Err(Error::DegenerateInput(format!("average constellation power {avg_power}")));
        }
        Ok(Self {
            avg_power,
            frames: 0,
            symbols_per_frame: None,
            rms_sum: [0.0; 3],
            per_subcarrier_err: [0.0; USED_SUBCARRIERS],
            freq_err_sum: 0.0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    fn check_symbols(&mut self, symbols: usize) -> Result<()> {
        match self.symbols_per_frame {
            Some(s) if s != symbols => {
                Err(Error::Framing(format!("{symbols}-symbol frame mixed with {s}-symbol frames")))
            }
            _ => {
                self.symbols_per_frame = Some(symbols);
                Ok(())
            }
        }
    }

    pub fn add(&mut self, frame: &GridFrame) -> Result<()> {
        frame.check()?;
        self.check_symbols(frame.symbols())?;
        let mut err = [0.0; USED_SUBCARRIERS];
        for (m, r) in frame.measured.iter().zip(&frame.reference) {
            for k in 0..USED_SUBCARRIERS {
                err[k] += (m[k] - r[k]).norm_sqr();
            }
        }
        let lp = frame.symbols() as f64;
        for scope in EvmScope::ALL {
            let pos = scope.positions();
            let total: f64 = pos.iter().map(|&k| err[k]).sum();
            self.rms_sum[scope.index()] += (total / (pos.len() as f64 * lp * self.avg_power)).sqrt();
        }
        self.per_subcarrier_err.iter_mut().zip(&err).for_each(|(a, e)| *a += e);
        self.freq_err_sum += frame.freq_err_hz;
        self.frames += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &EvmAccumulator) -> Result<()> {
        if other.frames == 0 {
            return Ok(());
        }
        if other.avg_power != self.avg_power {
            return Err(Error::Configuration("cannot merge EVM over different constellation powers".into()));
        }
        self.check_symbols(other.symbols_per_frame.unwrap_or(0))?;
        self.frames += other.frames;
        (0..3).for_each(|i| self.rms_sum[i] += other.rms_sum[i]);
        self.per_subcarrier_err.iter_mut().zip(&other.per_subcarrier_err).for_each(|(a, b)| *a += b);
        self.freq_err_sum += other.freq_err_sum;
        Ok(())
    }

    fn require_frames(&self) -> Result<usize> {
        match (self.frames, self.symbols_per_frame) {
            (0, _) | (_, None) => Err(Error::DegenerateInput("no frames analyzed".into())),
            (_, Some(lp)) => Ok(lp),
        }
    }

    pub fn scoped(&self, scope: EvmScope) -> Result<ScopedEvm> {
        let lp = self.require_frames()?;
        let denom = self.frames as f64 * lp as f64 * self.avg_power;
        Ok(ScopedEvm {
            evm_rms: self.rms_sum[scope.index()] / self.frames as f64,
            per_subcarrier_evm: self.per_subcarrier_err.iter().map(|e| (e / denom).sqrt()).collect(),
        })
    }

    pub fn report(&self) -> Result<EvmReport> {
        let lp = self.require_frames()?;
        let all = self.scoped(EvmScope::DataAndPilot)?;
        let pilot = self.scoped(EvmScope::PilotOnly)?.evm_rms;
        Ok(EvmReport {
            evm_rms: all.evm_rms,
            evm_db: evm_to_db(all.evm_rms),
            evm_pilot: pilot,
            evm_pilot_db: evm_to_db(pilot),
            freq_err_hz: self.freq_err_sum / self.frames as f64,
            per_subcarrier_evm: all.per_subcarrier_evm,
            n_frames: self.frames,
            symbols_per_frame: lp,
            avg_constellation_power: self.avg_power,
        })
    }
}

fn accumulate(grid: &RxGrid) -> Result<EvmAccumulator> {
    let mut acc = EvmAccumulator::new(grid.avg_power)?;
    for f in &grid.frames {
        acc.add(f)?;
    }
    Ok(acc)
}

/// `(1/N_f)·Σᵢ sqrt(Σⱼ Σₖ |Y − X|² / (n_k·L_p·P_o))` over the subcarriers in
/// `scope`, where `n_k` is the number of subcarriers in the scope.
pub fn compute_evm(grid: &RxGrid, scope: EvmScope) -> Result<ScopedEvm> {
    accumulate(grid)?.scoped(scope)
}

pub fn evm_report(grid: &RxGrid) -> Result<EvmReport> {
    accumulate(grid)?.report()
}

/// Decision-directed EVM over every frame of a capture file.
pub fn analyze_capture(capture: &Capture, cfg: &AnalyzerConfig) -> Result<EvmReport> {
    let h = &capture.header;
    let params = OfdmParams { sample_rate_hz: h.sample_rate_hz, code_rate: h.code_rate, ..OfdmParams::default() };
    let spec = build_constellation(h.scheme);
    let mut acc = EvmAccumulator::new(spec.mean_power())?;
    for (i, b) in h.frames.iter().enumerate() {
        let rx = capture.frame(i).ok_or_else(|| Error::Framing(format!("frame {i} lies outside the capture")))?;
        acc.add(&analyze_frame_decision_directed(rx, b.symbols as usize, &params, &spec, cfg)?)?;
    }
    acc.report()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub bits: usize,
    pub errors: usize,
    pub ber: f64,
}

pub fn measure_ber(decoded: &[u8], truth: &[u8]) -> Result<BerReport> {
    if decoded.len() != truth.len() {
        return Err(Error::Framing(format!("{} decoded bits against {} reference bits", decoded.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::DegenerateInput("no bits to compare".into()));
    }
    let errors = decoded.iter().zip(truth).filter(|(a, b)| (*a & 1) != (*b & 1)).count();
    Ok(BerReport { bits: truth.len(), errors, ber: errors as f64 / truth.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, ChannelContext, ImpairmentConfig};
    use crate::constellation::{evm_rms_stream, Scheme};
    use crate::ofdm_phy::{transmit, DataRate, TxFrame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn frame(rate: DataRate, symbols: usize, seed: u64) -> TxFrame {
        let (p, s) = OfdmParams::for_rate(rate);
        let spec = build_constellation(s);
        let n = symbols * p.data_bits_per_symbol(&spec) - crate::ofdm_phy::TAIL_BITS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let f = transmit(&bits, &p, &spec, 0x5d).unwrap();
        assert_eq!(f.symbol_count(), symbols);
        f
    }

    fn through(f: &TxFrame, cfg: &ImpairmentConfig) -> Vec<Complex64> {
        apply_channel(&f.samples, &ChannelContext::for_frame(f), cfg).unwrap()
    }

    fn cfg(tracking: Tracking, cfo: CfoCorrection, est: ChannelEstimation) -> AnalyzerConfig {
        AnalyzerConfig { tracking, cfo_correction: cfo, channel_estimation: est }
    }

    #[test]
    fn clean_sync_is_exact() {
        let f = frame(DataRate::Mbps6, 20, 1);
        let s = synchronize(&f.samples, &f.params).unwrap();
        assert_eq!(s.timing_offset, 0);
        assert!(s.freq_err_hz.abs() < 1e-6);
        assert!(s.peak_metric > 0.999);

        let mut padded = vec![ZERO; 37];
        padded.extend_from_slice(&f.samples);
        assert_eq!(synchronize(&padded, &f.params).unwrap().timing_offset, 37);
    }

    #[test]
    fn noise_does_not_synchronize() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<Complex64> =
            (0..3000).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let (p, _) = OfdmParams::for_rate(DataRate::Mbps6);
        assert!(matches!(synchronize(&noise, &p), Err(Error::SyncFailure(_))));
        assert!(matches!(synchronize(&noise[..100], &p), Err(Error::SyncFailure(_))));
    }

    #[test]
    fn cfo_estimate_at_20db() {
        let f = frame(DataRate::Mbps6, 200, 2);
        for trial in 0..5 {
            let rx = through(&f, &ImpairmentConfig { cfo_hz: 1000.0, ..ImpairmentConfig::awgn(20.0, trial) });
            let g = analyze_frame(&rx, &f.reference_grid, &f.params, &AnalyzerConfig::default()).unwrap();
            assert!((g.freq_err_hz - 1000.0).abs() < 50.0, "F_err {}", g.freq_err_hz);
        }
    }

    #[test]
    fn loopback_grid_matches_reference() {
        for rate in [DataRate::Mbps6, DataRate::Mbps24, DataRate::Mbps54] {
            let f = frame(rate, 12, 3);
            let g = analyze_frame(&f.samples, &f.reference_grid, &f.params, &AnalyzerConfig::default()).unwrap();
            for (m, r) in g.measured.iter().zip(&g.reference) {
                for k in 0..USED_SUBCARRIERS {
                    assert!((m[k] - r[k]).norm() < 1e-9);
                }
            }
            assert!(g.freq_err_hz.abs() < 1e-6);
        }
    }

    #[test]
    fn tracking_is_identity_without_impairments() {
        let f = frame(DataRate::Mbps12, 15, 4);
        for est in [ChannelEstimation::LongTraining, ChannelEstimation::FullFrame] {
            let on = analyze_frame(
                &f.samples,
                &f.reference_grid,
                &f.params,
                &cfg(Tracking::PilotPhaseAmplitude, CfoCorrection::Preamble, est),
            )
            .unwrap();
            let off = analyze_frame(
                &f.samples,
                &f.reference_grid,
                &f.params,
                &cfg(Tracking::Off, CfoCorrection::Preamble, est),
            )
            .unwrap();
            for (a, b) in on.measured.iter().zip(&off.measured) {
                for k in 0..USED_SUBCARRIERS {
                    assert!((a[k] - b[k]).norm() < 1e-12);
                }
            }
        }
    }

    fn evm_of(f: &TxFrame, rx: &[Complex64], c: &AnalyzerConfig) -> f64 {
        let mut grid = RxGrid::for_constellation(&f.spec);
        grid.push(analyze_frame(rx, &f.reference_grid, &f.params, c).unwrap()).unwrap();
        compute_evm(&grid, EvmScope::DataAndPilot).unwrap().evm_rms
    }

    #[test]
    fn tracking_removes_residual_cfo() {
        let f = frame(DataRate::Mbps6, 300, 5);
        for seed in 0..3 {
            let rx = through(&f, &ImpairmentConfig { cfo_hz: 200.0, ..ImpairmentConfig::awgn(20.0, seed) });
            let on = evm_of(
                &f,
                &rx,
                &cfg(Tracking::PilotPhaseAmplitude, CfoCorrection::None, ChannelEstimation::LongTraining),
            );
            let off = evm_of(&f, &rx, &cfg(Tracking::Off, CfoCorrection::None, ChannelEstimation::LongTraining));
            assert!(on < off, "tracked {on} untracked {off}");
        }
    }

    #[test]
    fn perfect_grid_reports_floor() {
        let f = frame(DataRate::Mbps6, 3, 6);
        let mut grid = RxGrid::for_constellation(&f.spec);
        grid.push(GridFrame::new(f.reference_grid.clone(), f.reference_grid.clone()).unwrap()).unwrap();
        let r = evm_report(&grid).unwrap();
        assert_eq!(r.evm_rms, 0.0);
        assert_eq!(r.evm_db, EVM_DB_FLOOR);
        assert_eq!(r.evm_pilot_db, EVM_DB_FLOOR);
        assert_eq!(r.per_subcarrier_evm.len(), 52);
    }

    #[test]
    fn single_point_error_substitution() {
        let lp = 1;
        let f = frame(DataRate::Mbps6, lp, 7);
        let d = 0.3;
        let mut measured = f.reference_grid.clone();
        measured[0][10] += Complex64::new(0.0, d);
        let mut grid = RxGrid::new(1.0);
        grid.push(GridFrame::new(measured, f.reference_grid.clone()).unwrap()).unwrap();
        let e = compute_evm(&grid, EvmScope::DataAndPilot).unwrap();
        assert!((e.evm_rms - d / (52.0 * lp as f64).sqrt()).abs() < 1e-12);
        let data = compute_evm(&grid, EvmScope::DataOnly).unwrap().evm_rms;
        assert!((data - d / 48f64.sqrt()).abs() < 1e-12);
        assert_eq!(compute_evm(&grid, EvmScope::PilotOnly).unwrap().evm_rms, 0.0);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        let f = frame(DataRate::Mbps6, 2, 8);
        let mut grid = RxGrid::new(0.0);
        grid.push(GridFrame::new(f.reference_grid.clone(), f.reference_grid.clone()).unwrap()).unwrap();
        assert!(matches!(compute_evm(&grid, EvmScope::DataAndPilot), Err(Error::DegenerateInput(_))));
        assert!(matches!(compute_evm(&RxGrid::new(1.0), EvmScope::DataAndPilot), Err(Error::DegenerateInput(_))));
        assert!(matches!(
            GridFrame::new(f.reference_grid[..1].to_vec(), f.reference_grid.clone()),
            Err(Error::Framing(_))
        ));
    }

    #[test]
    fn short_capture_is_a_framing_error() {
        let f = frame(DataRate::Mbps6, 10, 9);
        let mut long_ref = f.reference_grid.clone();
        long_ref.extend_from_slice(&f.reference_grid);
        let r = analyze_frame(&f.samples, &long_ref, &f.params, &AnalyzerConfig::default());
        assert!(matches!(r, Err(Error::Framing(_))));
    }

    #[test]
    fn awgn_evm_follows_snr() {
        let f = frame(DataRate::Mbps6, 100, 10);
        let ctx = ChannelContext::for_frame(&f);
        let c = cfg(Tracking::Off, CfoCorrection::Refined, ChannelEstimation::FullFrame);
        let mut grid = RxGrid::for_constellation(&f.spec);
        for i in 0..20 {
            let rx = through(&f, &ImpairmentConfig::awgn(ctx.ebn0_for_subcarrier_snr_db(20.0), 100 + i));
            grid.push(analyze_frame(&rx, &f.reference_grid, &f.params, &c).unwrap()).unwrap();
        }
        let r = evm_report(&grid).unwrap();
        assert!((r.evm_rms - 0.1).abs() < 0.005, "{}", r.evm_rms);
        assert!((r.evm_db - 20.0 * r.evm_rms.log10()).abs() < 1e-9);
    }

    #[test]
    fn per_subcarrier_rms_matches_total() {
        let f = frame(DataRate::Mbps12, 30, 11);
        let rx = through(&f, &ImpairmentConfig::awgn(12.0, 3));
        let mut grid = RxGrid::for_constellation(&f.spec);
        grid.push(analyze_frame(&rx, &f.reference_grid, &f.params, &AnalyzerConfig::default()).unwrap()).unwrap();
        let e = compute_evm(&grid, EvmScope::DataAndPilot).unwrap();
        let rms = (e.per_subcarrier_evm.iter().map(|v| v * v).sum::<f64>() / 52.0).sqrt();
        assert!((rms - e.evm_rms).abs() < 1e-9);
    }

    #[test]
    fn flat_grid_matches_stream_evm() {
        let spec = build_constellation(Scheme::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lp = 4;
        let reference: Vec<SymbolRow> =
            (0..lp).map(|_| std::array::from_fn(|_| spec.ideal_points[rng.gen_range(0..4)])).collect();
        let mut measured: Vec<SymbolRow> = reference
            .iter()
            .map(|row| row.map(|x| x + 0.1 * Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))))
            .collect();
        let p = measured.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>() / (52 * lp) as f64;
        measured.iter_mut().flatten().for_each(|x| *x /= p.sqrt());

        let mut grid = RxGrid::new(1.0);
        grid.push(GridFrame::new(measured.clone(), reference.clone()).unwrap()).unwrap();
        let grid_evm = compute_evm(&grid, EvmScope::DataAndPilot).unwrap().evm_rms;
        let flat_m: Vec<Complex64> = measured.iter().flatten().copied().collect();
        let flat_r: Vec<Complex64> = reference.iter().flatten().copied().collect();
        let stream = evm_rms_stream(&flat_m, &flat_r, &spec).unwrap();
        assert!((grid_evm - stream).abs() < 1e-9);
    }

    #[test]
    fn accumulator_merge_is_order_independent() {
        let f = frame(DataRate::Mbps6, 8, 13);
        let frames: Vec<GridFrame> = (0..4)
            .map(|s| {
                let rx = through(&f, &ImpairmentConfig::awgn(10.0, s));
                analyze_frame(&rx, &f.reference_grid, &f.params, &AnalyzerConfig::default()).unwrap()
            })
            .collect();
        let mut a = EvmAccumulator::new(1.0).unwrap();
        let mut b = EvmAccumulator::new(1.0).unwrap();
        a.add(&frames[0]).unwrap();
        a.add(&frames[1]).unwrap();
        b.add(&frames[3]).unwrap();
        b.add(&frames[2]).unwrap();
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b;
        ba.merge(&a).unwrap();
        let (x, y) = (ab.report().unwrap(), ba.report().unwrap());
        assert!((x.evm_rms - y.evm_rms).abs() < 1e-12);
        assert_eq!(x.n_frames, 4);

        let short = GridFrame::new(f.reference_grid[..2].to_vec(), f.reference_grid[..2].to_vec()).unwrap();
        assert!(matches!(ab.add(&short), Err(Error::Framing(_))));
    }

    #[test]
    fn csv_row_shape() {
        let f = frame(DataRate::Mbps6, 2, 14);
        let mut grid = RxGrid::for_constellation(&f.spec);
        grid.push(GridFrame::new(f.reference_grid.clone(), f.reference_grid.clone()).unwrap()).unwrap();
        let r = evm_report(&grid).unwrap();
        let header = EvmReport::csv_header();
        assert_eq!(header.len(), 58);
        assert_eq!(header[6], "evm_sc-26");
        assert_eq!(header[57], "evm_sc+26");
        assert_eq!(r.csv_record().len(), 58);
    }

    #[test]
    fn ber_counts() {
        let a = [0u8, 1, 1, 0, 1];
        assert_eq!(measure_ber(&a, &a).unwrap().ber, 0.0);
        let inv: Vec<u8> = a.iter().map(|b| 1 - b).collect();
        let r = measure_ber(&inv, &a).unwrap();
        assert_eq!((r.errors, r.ber), (5, 1.0));
        assert!(matches!(measure_ber(&a[..3], &a), Err(Error::Framing(_))));
    }

    #[test]
    fn capture_analysis_is_decision_directed() {
        let f = frame(DataRate::Mbps24, 10, 15);
        let g = frame(DataRate::Mbps24, 10, 16);
        let cap = Capture::from_tx_frames(&[f, g]).unwrap();
        let clean = analyze_capture(&cap, &AnalyzerConfig::default()).unwrap();
        assert_eq!(clean.n_frames, 2);
        assert!(clean.evm_rms < 1e-6);

        let mut noisy = cap.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for s in noisy.samples.iter_mut() {
            *s += 0.05 * Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        let r = analyze_capture(&noisy, &AnalyzerConfig::default()).unwrap();
        assert!(r.evm_rms > 0.02 && r.evm_rms < 0.2, "{}", r.evm_rms);
    }

    #[test]
    fn ltf_snr_tracks_channel_snr() {
        let f = frame(DataRate::Mbps6, 10, 18);
        let ctx = ChannelContext::for_frame(&f);
        let mut mean = 0.0;
        for s in 0..40 {
            let rx = through(&f, &ImpairmentConfig::awgn(ctx.ebn0_for_subcarrier_snr_db(15.0), s));
            mean += analyze_frame(&rx, &f.reference_grid, &f.params, &AnalyzerConfig::default()).unwrap().ltf_snr_db;
        }
        mean /= 40.0;
        assert!((mean - 15.0).abs() < 0.7, "{mean}");
    }
}
