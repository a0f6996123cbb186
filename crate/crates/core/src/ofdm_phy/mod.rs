//! 802.11a-style OFDM transmitter and bit recovery.
//!
//! Numerology: 64-point FFT at 20 MHz, 16-sample cyclic prefix, 48 data and
//! 4 pilot subcarriers, short/long training preamble followed by a BPSK
//! SIGNAL symbol. The DATA field is scrambled, tail-terminated, convolutionally
//! coded, punctured, and interleaved per OFDM symbol.

pub mod capture;
pub mod convolutional;
pub mod interleaver;
pub mod scrambler;

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constellation::{demap_nearest, map_bits, ConstellationSpec, Scheme};
use crate::error::{Error, Result};

pub use convolutional::CodeRate;
use scrambler::Scrambler;

pub const FFT_SIZE: usize = 64;
pub const USED_SUBCARRIERS: usize = 52;
pub const DATA_SUBCARRIERS: usize = 48;
pub const PILOT_SUBCARRIERS: usize = 4;
pub const TAIL_BITS: usize = 6;
pub const SERVICE_BITS: usize = 16;

/// Short + long training, 16 µs at 20 MHz.
pub const PREAMBLE_SAMPLES: usize = 320;
/// Preamble plus the SIGNAL symbol.
pub const HEADER_SAMPLES: usize = PREAMBLE_SAMPLES + 80;
/// Offset of the first long training symbol (after the 32-sample guard).
pub const LTF_OFFSET: usize = 192;

/// Subcarrier index k of each grid column, ascending and skipping DC.
pub const SUBCARRIERS: [i32; USED_SUBCARRIERS] = {
    let mut out = [0i32; USED_SUBCARRIERS];
    let mut i = 0;
    while i < USED_SUBCARRIERS {
        out[i] = if i < 26 { i as i32 - 26 } else { i as i32 - 25 };
        i += 1;
    }
    out
};

/// Grid columns of the pilots at k = −21, −7, +7, +21.
pub const PILOT_POSITIONS: [usize; PILOT_SUBCARRIERS] = [5, 19, 32, 46];
const PILOT_BASE: [f64; PILOT_SUBCARRIERS] = [1.0, 1.0, 1.0, -1.0];

pub const DATA_POSITIONS: [usize; DATA_SUBCARRIERS] = {
    let mut out = [0usize; DATA_SUBCARRIERS];
    let (mut i, mut n) = (0, 0);
    while i < USED_SUBCARRIERS {
        if i != 5 && i != 19 && i != 32 && i != 46 {
            out[n] = i;
            n += 1;
        }
        i += 1;
    }
    out
};

pub fn is_pilot(position: usize) -> bool {
    PILOT_POSITIONS.contains(&position)
}

/// FFT bin of subcarrier k.
pub fn bin_of(k: i32) -> usize {
    (k + FFT_SIZE as i32) as usize % FFT_SIZE
}

/// One OFDM symbol across the 52 used subcarriers.
pub type SymbolRow = [Complex64; USED_SUBCARRIERS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub fft_size: usize,
    pub cyclic_prefix_samples: usize,
    pub sample_rate_hz: f64,
    pub code_rate: CodeRate,
    pub scrambler_enabled: bool,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            fft_size: FFT_SIZE,
            cyclic_prefix_samples: 16,
            sample_rate_hz: 20e6,
            code_rate: CodeRate::Half,
            scrambler_enabled: true,
        }
    }
}

impl OfdmParams {
    pub fn for_rate(rate: DataRate) -> (Self, Scheme) {
        (Self { code_rate: rate.code_rate(), ..Self::default() }, rate.scheme())
    }

    pub fn symbol_samples(&self) -> usize {
        self.fft_size + self.cyclic_prefix_samples
    }

    pub fn symbol_duration_s(&self) -> f64 {
        self.symbol_samples() as f64 / self.sample_rate_hz
    }

    pub fn coded_bits_per_symbol(&self, spec: &ConstellationSpec) -> usize {
        DATA_SUBCARRIERS * spec.bits_per_symbol()
    }

    pub fn data_bits_per_symbol(&self, spec: &ConstellationSpec) -> usize {
        self.coded_bits_per_symbol(spec) * self.code_rate.numerator() / self.code_rate.denominator()
    }

    pub fn bit_rate(&self, spec: &ConstellationSpec) -> f64 {
        self.data_bits_per_symbol(spec) as f64 / self.symbol_duration_s()
    }

    pub fn data_rate(&self, spec: &ConstellationSpec) -> Result<DataRate> {
        DataRate::lookup(spec.scheme, self.code_rate).ok_or_else(|| {
            Error::Configuration(format!("{:?} with code rate {:?} is not an OFDM rate", spec.scheme, self.code_rate))
        })
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.fft_size != FFT_SIZE || self.cyclic_prefix_samples != 16 {
            return Err(Error::Configuration(format!(
                "only the 64-point FFT with 16-sample prefix is supported, got {}/{}",
                self.fft_size, self.cyclic_prefix_samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataRate {
    Mbps6,
    Mbps9,
    Mbps12,
    Mbps18,
    Mbps24,
    Mbps36,
    Mbps48,
    Mbps54,
}

impl DataRate {
    pub const ALL: [DataRate; 8] = [
        DataRate::Mbps6,
        DataRate::Mbps9,
        DataRate::Mbps12,
        DataRate::Mbps18,
        DataRate::Mbps24,
        DataRate::Mbps36,
        DataRate::Mbps48,
        DataRate::Mbps54,
    ];

    pub fn scheme(self) -> Scheme {
        match self {
            DataRate::Mbps6 | DataRate::Mbps9 => Scheme::Bpsk,
            DataRate::Mbps12 | DataRate::Mbps18 => Scheme::Qpsk,
            DataRate::Mbps24 | DataRate::Mbps36 => Scheme::Qam16,
            DataRate::Mbps48 | DataRate::Mbps54 => Scheme::Qam64,
        }
    }

    pub fn code_rate(self) -> CodeRate {
        match self {
            DataRate::Mbps6 | DataRate::Mbps12 | DataRate::Mbps24 => CodeRate::Half,
            DataRate::Mbps48 => CodeRate::TwoThirds,
            _ => CodeRate::ThreeQuarters,
        }
    }

    pub fn mbps(self) -> u32 {
        match self {
            DataRate::Mbps6 => 6,
            DataRate::Mbps9 => 9,
            DataRate::Mbps12 => 12,
            DataRate::Mbps18 => 18,
            DataRate::Mbps24 => 24,
            DataRate::Mbps36 => 36,
            DataRate::Mbps48 => 48,
            DataRate::Mbps54 => 54,
        }
    }

    pub fn from_mbps(mbps: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.mbps() == mbps)
    }

    pub fn lookup(scheme: Scheme, code_rate: CodeRate) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.scheme() == scheme && r.code_rate() == code_rate)
    }

    /// RATE bits R1..R4 of the SIGNAL field.
    fn signal_bits(self) -> [u8; 4] {
        match self {
            DataRate::Mbps6 => [1, 1, 0, 1],
            DataRate::Mbps9 => [1, 1, 1, 1],
            DataRate::Mbps12 => [0, 1, 0, 1],
            DataRate::Mbps18 => [0, 1, 1, 1],
            DataRate::Mbps24 => [1, 0, 0, 1],
            DataRate::Mbps36 => [1, 0, 1, 1],
            DataRate::Mbps48 => [0, 0, 0, 1],
            DataRate::Mbps54 => [0, 0, 1, 1],
        }
    }
}

/// Forward/inverse 64-point transforms with the normalization that maps a
/// 52-subcarrier symbol of unit-power points to unit-power time samples.
#[derive(Clone)]
pub struct OfdmFft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OfdmFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OfdmFft")
    }
}

impl Default for OfdmFft {
    fn default() -> Self {
        Self::new()
    }
}

impl OfdmFft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(FFT_SIZE), inverse: planner.plan_fft_inverse(FFT_SIZE) }
    }

    /// Time-domain body (no prefix) of a symbol.
    pub fn synthesize(&self, row: &SymbolRow) -> [Complex64; FFT_SIZE] {
        let mut buf = [Complex64::new(0.0, 0.0); FFT_SIZE];
        for (pos, &k) in SUBCARRIERS.iter().enumerate() {
            buf[bin_of(k)] = row[pos];
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (USED_SUBCARRIERS as f64).sqrt();
        buf.iter_mut().for_each(|x| *x *= scale);
        buf
    }

    /// Subcarrier values of a 64-sample body.
    pub fn analyze(&self, body: &[Complex64]) -> SymbolRow {
        let mut buf = [Complex64::new(0.0, 0.0); FFT_SIZE];
        buf.copy_from_slice(&body[..FFT_SIZE]);
        self.forward.process(&mut buf);
        let scale = (USED_SUBCARRIERS as f64).sqrt() / FFT_SIZE as f64;
        let mut row = [Complex64::new(0.0, 0.0); USED_SUBCARRIERS];
        for (pos, &k) in SUBCARRIERS.iter().enumerate() {
            row[pos] = buf[bin_of(k)] * scale;
        }
        row
    }
}

/// Long training sequence on the 52 used subcarriers.
pub fn long_training_row() -> SymbolRow {
    const L: [i8; 52] = [
        1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, //
        1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
    ];
    let mut row = [Complex64::new(0.0, 0.0); USED_SUBCARRIERS];
    for (r, &l) in row.iter_mut().zip(L.iter()) {
        *r = Complex64::new(l as f64, 0.0);
    }
    row
}

/// Short training sequence: 12 nonzero subcarriers at multiples of 4.
pub fn short_training_row() -> SymbolRow {
    // (k, sign of 1+j)
    const S: [(i32, f64); 12] = [
        (-24, 1.0),
        (-20, -1.0),
        (-16, 1.0),
        (-12, -1.0),
        (-8, -1.0),
        (-4, 1.0),
        (4, -1.0),
        (8, -1.0),
        (12, 1.0),
        (16, 1.0),
        (20, 1.0),
        (24, 1.0),
    ];
    let scale = (13.0f64 / 6.0).sqrt();
    let mut row = [Complex64::new(0.0, 0.0); USED_SUBCARRIERS];
    for &(k, sign) in &S {
        let pos = SUBCARRIERS.iter().position(|&x| x == k).unwrap();
        row[pos] = Complex64::new(sign * scale, sign * scale);
    }
    row
}

/// 320-sample training preamble.
pub fn preamble(fft: &OfdmFft) -> Vec<Complex64> {
    let short = fft.synthesize(&short_training_row());
    let long = fft.synthesize(&long_training_row());
    let mut out = Vec::with_capacity(PREAMBLE_SAMPLES);
    out.extend((0..160).map(|n| short[n % FFT_SIZE]));
    out.extend_from_slice(&long[FFT_SIZE - 32..]);
    out.extend_from_slice(&long);
    out.extend_from_slice(&long);
    out
}

/// 64-sample long training symbol as seen in the time domain.
pub fn long_training_symbol(fft: &OfdmFft) -> [Complex64; FFT_SIZE] {
    fft.synthesize(&long_training_row())
}

/// Pilot values of OFDM symbol `n` (SIGNAL is n = 0, DATA symbol j is n = j + 1).
pub fn pilot_values(n: usize) -> [f64; PILOT_SUBCARRIERS] {
    static POLARITY: OnceLock<[f64; 127]> = OnceLock::new();
    let p = POLARITY.get_or_init(scrambler::pilot_polarity)[n % 127];
    PILOT_BASE.map(|b| b * p)
}

/// Padded DATA-field length: payload plus tail, rounded up to whole symbols.
pub fn padded_len(payload_len: usize, params: &OfdmParams, spec: &ConstellationSpec) -> usize {
    let n_dbps = params.data_bits_per_symbol(spec);
    (payload_len + TAIL_BITS).div_ceil(n_dbps) * n_dbps
}

/// Number of DATA OFDM symbols a payload occupies.
pub fn symbol_count(payload_len: usize, params: &OfdmParams, spec: &ConstellationSpec) -> usize {
    padded_len(payload_len, params, spec) / params.data_bits_per_symbol(spec)
}

/// Scramble, append tail, pad to whole symbols, encode, puncture, interleave.
///
/// The six tail bits after the payload are forced to zero after scrambling so
/// the trellis returns to the zero state; pad bits follow the tail.
pub fn encode_bits(bits: &[u8], params: &OfdmParams, spec: &ConstellationSpec, scramble_seed: u8) -> Result<Vec<u8>> {
    params.check()?;
    if bits.is_empty() {
        return Err(Error::Framing("cannot encode an empty bit sequence".into()));
    }
    let mut data = vec![0u8; padded_len(bits.len(), params, spec)];
    data[..bits.len()].iter_mut().zip(bits).for_each(|(d, &b)| *d = b & 1);
    if params.scrambler_enabled {
        Scrambler::new(scramble_seed)?.apply(&mut data);
        data[bits.len()..bits.len() + TAIL_BITS].fill(0);
    }
    let coded = convolutional::puncture(&convolutional::encode(&data), params.code_rate);
    interleaver::interleave(&coded, params.coded_bits_per_symbol(spec), spec.bits_per_symbol())
}

/// Inverse of [`encode_bits`] for a payload of `payload_len` bits.
pub fn decode_bits(
    coded: &[u8],
    params: &OfdmParams,
    spec: &ConstellationSpec,
    scramble_seed: u8,
    payload_len: usize,
) -> Result<Vec<u8>> {
    params.check()?;
    let n_cbps = params.coded_bits_per_symbol(spec);
    let n_dbps = params.data_bits_per_symbol(spec);
    if coded.is_empty() || !coded.len().is_multiple_of(n_cbps) {
        return Err(Error::Framing(format!(
            "{} coded bits is not a whole number of {n_cbps}-bit symbols",
            coded.len()
        )));
    }
    let data_len = coded.len() / n_cbps * n_dbps;
    if data_len != padded_len(payload_len, params, spec) {
        return Err(Error::Framing(format!(
            "{} coded bits carry {data_len} data bits, a {payload_len}-bit payload needs {}",
            coded.len(),
            padded_len(payload_len, params, spec)
        )));
    }
    let deinterleaved = interleaver::deinterleave(coded, n_cbps, spec.bits_per_symbol())?;
    let mother = convolutional::depuncture(&deinterleaved, params.code_rate, data_len)?;
    let mut data = convolutional::viterbi_decode(&mother)?;
    if params.scrambler_enabled {
        Scrambler::new(scramble_seed)?.apply(&mut data);
    }
    data.truncate(payload_len);
    Ok(data)
}

/// Transmitted frame: baseband samples and the ideal grid behind them.
#[derive(Debug, Clone)]
pub struct TxFrame {
    pub samples: Vec<Complex64>,
    /// Ideal point per (DATA symbol, subcarrier), pilots included.
    pub reference_grid: Vec<SymbolRow>,
    pub source_bits: Vec<u8>,
    pub params: OfdmParams,
    pub spec: ConstellationSpec,
}

impl TxFrame {
    /// `L_p`, the number of DATA OFDM symbols.
    pub fn symbol_count(&self) -> usize {
        self.reference_grid.len()
    }

    pub fn airtime_us(&self) -> f64 {
        self.samples.len() as f64 / self.params.sample_rate_hz * 1e6
    }
}

fn signal_field(rate: DataRate, length_octets: usize) -> Vec<u8> {
    let mut bits = Vec::with_capacity(24);
    bits.extend(rate.signal_bits());
    bits.push(0);
    let length = length_octets.min(4095);
    bits.extend((0..12).map(|i| ((length >> i) & 1) as u8));
    let parity = bits.iter().fold(0u8, |acc, &b| acc ^ b);
    bits.push(parity);
    bits.extend([0; 6]);
    bits
}

fn place_symbol(row_points: &[Complex64], pilot_index: usize) -> SymbolRow {
    let mut row = [Complex64::new(0.0, 0.0); USED_SUBCARRIERS];
    for (&pos, &p) in DATA_POSITIONS.iter().zip(row_points) {
        row[pos] = p;
    }
    for (&pos, &v) in PILOT_POSITIONS.iter().zip(pilot_values(pilot_index).iter()) {
        row[pos] = Complex64::new(v, 0.0);
    }
    row
}

fn push_symbol(out: &mut Vec<Complex64>, body: &[Complex64; FFT_SIZE], cp: usize) {
    out.extend_from_slice(&body[FFT_SIZE - cp..]);
    out.extend_from_slice(body);
}

/// Build the waveform for an interleaved coded stream.
///
/// The SIGNAL LENGTH field advertises the octets the DATA field can hold
/// after SERVICE and tail, capped at 4095.
pub fn modulate_frame(coded_bits: &[u8], params: &OfdmParams, spec: &ConstellationSpec) -> Result<TxFrame> {
    params.check()?;
    let rate = params.data_rate(spec)?;
    let n_cbps = params.coded_bits_per_symbol(spec);
    if coded_bits.is_empty() || !coded_bits.len().is_multiple_of(n_cbps) {
        return Err(Error::Framing(format!(
            "{} coded bits is not a whole number of {n_cbps}-bit symbols",
            coded_bits.len()
        )));
    }
    let n_sym = coded_bits.len() / n_cbps;
    let fft = OfdmFft::new();
    let cp = params.cyclic_prefix_samples;
    let mut samples = Vec::with_capacity(HEADER_SAMPLES + n_sym * params.symbol_samples());
    samples.extend(preamble(&fft));

    let capacity = (n_sym * params.data_bits_per_symbol(spec)).saturating_sub(SERVICE_BITS + TAIL_BITS) / 8;
    let signal = signal_field(rate, capacity);
    let signal_coded = interleaver::interleave(&convolutional::encode(&signal), 48, 1)?;
    let bpsk = crate::constellation::build_constellation(Scheme::Bpsk);
    let signal_row = place_symbol(&map_bits(&signal_coded, &bpsk)?, 0);
    push_symbol(&mut samples, &fft.synthesize(&signal_row), cp);

    let mut reference_grid = Vec::with_capacity(n_sym);
    for (j, chunk) in coded_bits.chunks_exact(n_cbps).enumerate() {
        let row = place_symbol(&map_bits(chunk, spec)?, j + 1);
        push_symbol(&mut samples, &fft.synthesize(&row), cp);
        reference_grid.push(row);
    }
    Ok(TxFrame { samples, reference_grid, source_bits: Vec::new(), params: *params, spec: spec.clone() })
}

/// Encode and modulate a payload in one step, keeping the source bits.
pub fn transmit(bits: &[u8], params: &OfdmParams, spec: &ConstellationSpec, scramble_seed: u8) -> Result<TxFrame> {
    let coded = encode_bits(bits, params, spec, scramble_seed)?;
    let mut frame = modulate_frame(&coded, params, spec)?;
    frame.source_bits = bits.to_vec();
    Ok(frame)
}

/// Hard-decision coded bits from the data subcarriers of a demodulated grid.
pub fn grid_to_coded_bits(rows: &[SymbolRow], spec: &ConstellationSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows.len() * DATA_SUBCARRIERS * spec.bits_per_symbol());
    for row in rows {
        for &pos in &DATA_POSITIONS {
            out.extend(spec.label_bits(demap_nearest(row[pos], spec).label));
        }
    }
    out
}

/// Mean power of the DATA portion of a frame's samples.
pub fn payload_power(frame: &TxFrame) -> f64 {
    let payload = &frame.samples[HEADER_SAMPLES..];
    payload.iter().map(|s| s.norm_sqr()).sum::<f64>() / payload.len() as f64
}
