//! 802.11 management frames and their airtime accounting.
//!
//! A frame is a 24-byte MAC header (frame control, Duration, three
//! addresses, sequence control), a body holding the fixed fields the frame
//! type requires plus an SSID element where the type carries one, a
//! pseudorandom fill up to the requested payload size, and a CRC-32 FCS.
//! Bits go on air least-significant bit first within each octet.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::ConstellationSpec;
use crate::error::{Error, Result};
use crate::ofdm_phy::{OfdmParams, HEADER_SAMPLES, SERVICE_BITS, TAIL_BITS};

pub const MAC_HEADER_BYTES: usize = 24;
pub const FCS_BYTES: usize = 4;
/// Bits of the PLCP SIGNAL field.
pub const SIGNAL_BITS: usize = 24;
pub const MAX_DURATION_US: u32 = 32767;
pub const MAX_SSID_BYTES: usize = 32;

const ELEMENT_SSID: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameType {
    AssocRequest,
    AssocResponse,
    ReassocRequest,
    ReassocResponse,
    ProbeRequest,
    ProbeResponse,
    Beacon,
    Disassociation,
    Authentication,
    Deauthentication,
}

impl FrameType {
    pub const ALL: [FrameType; 10] = [
        FrameType::AssocRequest,
        FrameType::AssocResponse,
        FrameType::ReassocRequest,
        FrameType::ReassocResponse,
        FrameType::ProbeRequest,
        FrameType::ProbeResponse,
        FrameType::Beacon,
        FrameType::Disassociation,
        FrameType::Authentication,
        FrameType::Deauthentication,
    ];

    /// The association, reassociation, and probe exchanges.
    pub const EXCHANGE: [FrameType; 6] = [
        FrameType::AssocRequest,
        FrameType::AssocResponse,
        FrameType::ReassocRequest,
        FrameType::ReassocResponse,
        FrameType::ProbeRequest,
        FrameType::ProbeResponse,
    ];

    /// Management subtype code.
    pub fn subtype(self) -> u8 {
        match self {
            FrameType::AssocRequest => 0,
            FrameType::AssocResponse => 1,
            FrameType::ReassocRequest => 2,
            FrameType::ReassocResponse => 3,
            FrameType::ProbeRequest => 4,
            FrameType::ProbeResponse => 5,
            FrameType::Beacon => 8,
            FrameType::Disassociation => 10,
            FrameType::Authentication => 11,
            FrameType::Deauthentication => 12,
        }
    }

    pub fn from_subtype(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.subtype() == code)
    }

    pub fn carries_ssid(self) -> bool {
        matches!(
            self,
            FrameType::AssocRequest
                | FrameType::ReassocRequest
                | FrameType::ProbeRequest
                | FrameType::ProbeResponse
                | FrameType::Beacon
        )
    }

    /// Length of the fixed body fields ahead of any element.
    fn fixed_field_bytes(self) -> usize {
        match self {
            FrameType::AssocRequest => 4,
            FrameType::AssocResponse | FrameType::ReassocResponse => 6,
            FrameType::ReassocRequest => 10,
            FrameType::ProbeRequest => 0,
            FrameType::ProbeResponse | FrameType::Beacon => 12,
            FrameType::Disassociation | FrameType::Deauthentication => 2,
            FrameType::Authentication => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameType::AssocRequest => "AssocRequest",
            FrameType::AssocResponse => "AssocResponse",
            FrameType::ReassocRequest => "ReassocRequest",
            FrameType::ReassocResponse => "ReassocResponse",
            FrameType::ProbeRequest => "ProbeRequest",
            FrameType::ProbeResponse => "ProbeResponse",
            FrameType::Beacon => "Beacon",
            FrameType::Disassociation => "Disassociation",
            FrameType::Authentication => "Authentication",
            FrameType::Deauthentication => "Deauthentication",
        }
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// 48-bit MAC address, written as `aa:bb:cc:dd:ee:ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

impl FromStr for MacAddr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(Error::Configuration(format!("MAC address {s:?} needs six octets")));
        }
        let mut out = [0u8; 6];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = u8::from_str_radix(p, 16).map_err(|_| Error::Configuration(format!("bad MAC octet {p:?}")))?;
        }
        Ok(MacAddr(out))
    }
}

impl TryFrom<String> for MacAddr {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MacAddr> for String {
    fn from(a: MacAddr) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgmtFrameSpec {
    pub frame_type: FrameType,
    /// Duration field value in microseconds.
    pub nav_us: u32,
    /// Frame body size in bits; a whole number of octets.
    pub payload_bits: usize,
    pub source: MacAddr,
    pub dest: MacAddr,
    pub bssid: MacAddr,
    /// 12-bit sequence number.
    pub sequence_number: u16,
    pub ssid: String,
}

impl Default for MgmtFrameSpec {
    fn default() -> Self {
        let ap = MacAddr([0x02, 0, 0, 0, 0, 0x01]);
        MgmtFrameSpec {
            frame_type: FrameType::AssocRequest,
            nav_us: 0,
            payload_bits: 10_000,
            source: MacAddr([0x02, 0, 0, 0, 0, 0x02]),
            dest: ap,
            bssid: ap,
            sequence_number: 0,
            ssid: "evmlink".into(),
        }
    }
}

impl MgmtFrameSpec {
    /// Same frame as another type; the SSID is dropped where the type has none.
    pub fn with_frame_type(&self, frame_type: FrameType) -> Self {
        let ssid = if frame_type.carries_ssid() { self.ssid.clone() } else { String::new() };
        MgmtFrameSpec { frame_type, ssid, ..self.clone() }
    }

    /// Smallest body holding the required fields and the SSID element.
    pub fn required_body_bytes(&self) -> usize {
        let element = if self.frame_type.carries_ssid() { 2 + self.ssid.len() } else { 0 };
        self.frame_type.fixed_field_bytes() + element
    }

    pub fn validate(&self) -> Result<()> {
        if self.nav_us > MAX_DURATION_US {
            return Err(Error::Encoding(format!("NAV {} µs exceeds the 15-bit Duration field", self.nav_us)));
        }
        if !self.payload_bits.is_multiple_of(8) {
            return Err(Error::Encoding(format!("payload of {} bits is not whole octets", self.payload_bits)));
        }
        if self.sequence_number > 0x0fff {
            return Err(Error::Encoding(format!("sequence number {} exceeds 12 bits", self.sequence_number)));
        }
        if self.ssid.len() > MAX_SSID_BYTES {
            return Err(Error::Encoding(format!("SSID of {} bytes exceeds {MAX_SSID_BYTES}", self.ssid.len())));
        }
        if !self.frame_type.carries_ssid() && !self.ssid.is_empty() {
            return Err(Error::Encoding(format!("{} frames carry no SSID", self.frame_type)));
        }
        if self.payload_bits / 8 < self.required_body_bytes() {
            return Err(Error::Encoding(format!(
                "{} body needs {} octets, payload allows {}",
                self.frame_type,
                self.required_body_bytes(),
                self.payload_bits / 8
            )));
        }
        Ok(())
    }

    /// MAC frame length in bits: header, body, FCS.
    pub fn mac_bits(&self) -> usize {
        8 * (MAC_HEADER_BYTES + FCS_BYTES) + self.payload_bits
    }
}

pub fn encode_duration(nav_us: u32) -> Result<[u8; 2]> {
    if nav_us > MAX_DURATION_US {
        return Err(Error::Encoding(format!("NAV {nav_us} µs exceeds the 15-bit Duration field")));
    }
    Ok((nav_us as u16).to_le_bytes())
}

/// Duration field value; bit 15 set means a non-duration encoding.
pub fn decode_duration(field: [u8; 2]) -> Result<u32> {
    let v = u16::from_le_bytes(field);
    if v & 0x8000 != 0 {
        return Err(Error::Encoding(format!("Duration field {v:#06x} is not a duration")));
    }
    Ok(v as u32)
}

pub fn fcs(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

fn fixed_fields(spec: &MgmtFrameSpec) -> Vec<u8> {
    const CAPABILITY_ESS: [u8; 2] = [0x01, 0x00];
    let mut f = Vec::with_capacity(spec.frame_type.fixed_field_bytes());
    match spec.frame_type {
        FrameType::AssocRequest => {
            f.extend(CAPABILITY_ESS);
            f.extend(10u16.to_le_bytes()); // listen interval
        }
        FrameType::ReassocRequest => {
            f.extend(CAPABILITY_ESS);
            f.extend(10u16.to_le_bytes());
            f.extend(spec.bssid.0); // current AP
        }
        FrameType::AssocResponse | FrameType::ReassocResponse => {
            f.extend(CAPABILITY_ESS);
            f.extend(0u16.to_le_bytes()); // status: success
            f.extend((0xc000u16 | 1).to_le_bytes()); // association ID 1
        }
        FrameType::ProbeRequest => {}
        FrameType::ProbeResponse | FrameType::Beacon => {
            f.extend(0u64.to_le_bytes()); // timestamp
            f.extend(100u16.to_le_bytes()); // beacon interval
            f.extend(CAPABILITY_ESS);
        }
        FrameType::Disassociation | FrameType::Deauthentication => f.extend(1u16.to_le_bytes()),
        FrameType::Authentication => {
            f.extend(0u16.to_le_bytes()); // open system
            f.extend(1u16.to_le_bytes()); // transaction sequence
            f.extend(0u16.to_le_bytes()); // status
        }
    }
    f
}

fn header(spec: &MgmtFrameSpec) -> Result<[u8; MAC_HEADER_BYTES]> {
    let mut h = [0u8; MAC_HEADER_BYTES];
    h[0] = spec.frame_type.subtype() << 4; // protocol 0, type 00 (management)
    h[2..4].copy_from_slice(&encode_duration(spec.nav_us)?);
    h[4..10].copy_from_slice(&spec.dest.0);
    h[10..16].copy_from_slice(&spec.source.0);
    h[16..22].copy_from_slice(&spec.bssid.0);
    h[22..24].copy_from_slice(&(spec.sequence_number << 4).to_le_bytes());
    Ok(h)
}

/// Frame octets, FCS included.
pub fn build_mgmt_frame_bytes(spec: &MgmtFrameSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let body_len = spec.payload_bits / 8;
    let mut out = Vec::with_capacity(MAC_HEADER_BYTES + body_len + FCS_BYTES);
    out.extend(header(spec)?);
    out.extend(fixed_fields(spec));
    if spec.frame_type.carries_ssid() {
        out.push(ELEMENT_SSID);
        out.push(spec.ssid.len() as u8);
        out.extend(spec.ssid.as_bytes());
    }
    let fill = MAC_HEADER_BYTES + body_len - out.len();
    let mut rng = ChaCha8Rng::seed_from_u64(fcs(&out) as u64 ^ ((body_len as u64) << 32));
    let start = out.len();
    out.resize(start + fill, 0);
    rng.fill_bytes(&mut out[start..]);
    let crc = fcs(&out);
    out.extend(crc.to_le_bytes());
    Ok(out)
}

/// Frame as an on-air bit sequence, LSB first within each octet.
pub fn build_mgmt_frame(spec: &MgmtFrameSpec) -> Result<Vec<u8>> {
    Ok(bytes_to_bits(&build_mgmt_frame_bytes(spec)?))
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|&b| (0..8).map(move |i| (b >> i) & 1)).collect()
}

pub fn bits_to_bytes(bits: &[u8]) -> Result<Vec<u8>> {
    if !bits.len().is_multiple_of(8) {
        return Err(Error::Framing(format!("{} bits is not whole octets", bits.len())));
    }
    Ok(bits.chunks_exact(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i))).collect())
}

pub fn parse_mgmt_frame_bytes(bytes: &[u8]) -> Result<MgmtFrameSpec> {
    if bytes.len() < MAC_HEADER_BYTES + FCS_BYTES {
        return Err(Error::Framing(format!("{} octets cannot hold a management frame", bytes.len())));
    }
    let (frame, trailer) = bytes.split_at(bytes.len() - FCS_BYTES);
    let expected = u32::from_le_bytes(trailer.try_into().unwrap());
    if fcs(frame) != expected {
        return Err(Error::Framing("FCS mismatch".into()));
    }
    if frame[0] & 0x0f != 0 || frame[1] != 0 {
        return Err(Error::Framing(format!(
            "frame control {:02x}{:02x} is not a plain management frame",
            frame[0], frame[1]
        )));
    }
    let frame_type = FrameType::from_subtype(frame[0] >> 4)
        .ok_or_else(|| Error::Framing(format!("unknown management subtype {}", frame[0] >> 4)))?;
    let addr = |at: usize| MacAddr(frame[at..at + 6].try_into().unwrap());
    let body = &frame[MAC_HEADER_BYTES..];
    let mut ssid = String::new();
    if frame_type.carries_ssid() {
        let at = frame_type.fixed_field_bytes();
        if body.len() < at + 2 || body[at] != ELEMENT_SSID || body.len() < at + 2 + body[at + 1] as usize {
            return Err(Error::Framing(format!("{frame_type} body lacks an SSID element")));
        }
        let raw = &body[at + 2..at + 2 + body[at + 1] as usize];
        ssid = String::from_utf8(raw.to_vec()).map_err(|_| Error::Framing("SSID is not UTF-8".into()))?;
    }
    Ok(MgmtFrameSpec {
        frame_type,
        nav_us: decode_duration([frame[2], frame[3]])?,
        payload_bits: body.len() * 8,
        source: addr(10),
        dest: addr(4),
        bssid: addr(16),
        sequence_number: u16::from_le_bytes([frame[22], frame[23]]) >> 4,
        ssid,
    })
}

pub fn parse_mgmt_frame(bits: &[u8]) -> Result<MgmtFrameSpec> {
    parse_mgmt_frame_bytes(&bits_to_bytes(bits)?)
}

/// DATA-field bits handed to the PHY: SERVICE zeros followed by the frame.
pub fn data_field_bits(frame_bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; SERVICE_BITS];
    out.extend_from_slice(frame_bits);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    /// SIGNAL field, MAC header, and FCS bits. The training preamble is
    /// counted as airtime only.
    pub oh_mgt_bits: usize,
    /// SIGNAL bits plus every DATA-field bit including SERVICE, tail, and pad.
    pub total_bits: usize,
    pub airtime_us: f64,
    pub ofdm_symbol_count: usize,
}

pub fn frame_layout(spec: &MgmtFrameSpec, params: &OfdmParams, constellation: &ConstellationSpec) -> FrameLayout {
    let n_dbps = params.data_bits_per_symbol(constellation);
    let symbols = (SERVICE_BITS + spec.mac_bits() + TAIL_BITS).div_ceil(n_dbps);
    let samples = HEADER_SAMPLES + symbols * params.symbol_samples();
    FrameLayout {
        oh_mgt_bits: SIGNAL_BITS + 8 * (MAC_HEADER_BYTES + FCS_BYTES),
        total_bits: SIGNAL_BITS + symbols * n_dbps,
        airtime_us: samples as f64 / params.sample_rate_hz * 1e6,
        ofdm_symbol_count: symbols,
    }
}

fn header_us(params: &OfdmParams) -> f64 {
    HEADER_SAMPLES as f64 / params.sample_rate_hz * 1e6
}

/// `L_p = ⌊(nav − 20 µs) / 4 µs⌋`: the NAV value read as the frame's
/// airtime budget.
pub fn nav_to_symbol_count(nav_us: u32, params: &OfdmParams) -> Result<usize> {
    let sym_us = params.symbol_duration_s() * 1e6;
    let min = header_us(params) + sym_us;
    if (nav_us as f64) < min - 1e-9 {
        return Err(Error::Domain(format!("NAV {nav_us} µs is shorter than a one-symbol frame ({min} µs)")));
    }
    Ok(((nav_us as f64 - header_us(params)) / sym_us + 1e-9).floor() as usize)
}

/// Body size (bits) that makes `frame_type` occupy exactly `symbols` DATA
/// symbols, or the smallest legal body when that many cannot hold the header.
pub fn payload_bits_for_symbols(
    spec: &MgmtFrameSpec,
    symbols: usize,
    params: &OfdmParams,
    constellation: &ConstellationSpec,
) -> usize {
    let capacity = symbols * params.data_bits_per_symbol(constellation);
    let overhead = SERVICE_BITS + TAIL_BITS + 8 * (MAC_HEADER_BYTES + FCS_BYTES);
    let octets = capacity.saturating_sub(overhead) / 8;
    octets.max(spec.required_body_bytes()) * 8
}
