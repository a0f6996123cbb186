//! I/Q capture files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "EVMCAP01"
//! header_len   u32      byte length of the JSON header
//! header       JSON     CaptureHeader (UTF-8)
//! samples      f32 × 2  interleaved I, Q until end of file
//! ```

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{CodeRate, OfdmParams, TxFrame};
use crate::constellation::Scheme;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EVMCAP01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBoundary {
    /// First sample of the frame within the capture.
    pub start: u64,
    pub samples: u64,
    /// DATA OFDM symbols in the frame.
    pub symbols: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureHeader {
    pub sample_format: String,
    pub sample_rate_hz: f64,
    pub scheme: Scheme,
    pub code_rate: CodeRate,
    pub frames: Vec<FrameBoundary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub header: CaptureHeader,
    pub samples: Vec<Complex64>,
}

impl Capture {
    /// Concatenate received frames (each with its DATA symbol count).
    pub fn from_frames<'a>(
        frames: impl IntoIterator<Item = (&'a [Complex64], usize)>,
        params: &OfdmParams,
        scheme: Scheme,
    ) -> Self {
        let mut samples = Vec::new();
        let mut bounds = Vec::new();
        for (frame, symbols) in frames {
            bounds.push(FrameBoundary {
                start: samples.len() as u64,
                samples: frame.len() as u64,
                symbols: symbols as u64,
            });
            samples.extend_from_slice(frame);
        }
        Capture {
            header: CaptureHeader {
                sample_format: "cf32le".into(),
                sample_rate_hz: params.sample_rate_hz,
                scheme,
                code_rate: params.code_rate,
                frames: bounds,
            },
            samples,
        }
    }

    pub fn from_tx_frames(frames: &[TxFrame]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::DegenerateInput("no frames to capture".into()))?;
        Ok(Self::from_frames(
            frames.iter().map(|f| (f.samples.as_slice(), f.symbol_count())),
            &first.params,
            first.spec.scheme,
        ))
    }

    pub fn frame(&self, index: usize) -> Option<&[Complex64]> {
        let b = self.header.frames.get(index)?;
        self.samples.get(b.start as usize..(b.start + b.samples) as usize)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Encoding(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            buf.extend_from_slice(&(s.re as f32).to_le_bytes());
            buf.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Framing("not an EVM capture file (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: CaptureHeader =
            serde_json::from_slice(&header).map_err(|e| Error::Framing(format!("capture header: {e}")))?;
        if header.sample_format != "cf32le" {
            return Err(Error::Framing(format!("unsupported sample format {}", header.sample_format)));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % 8 != 0 {
            return Err(Error::Framing("truncated I/Q sample".into()));
        }
        let samples: Vec<Complex64> = body
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        for b in &header.frames {
            if b.start + b.samples > samples.len() as u64 {
                return Err(Error::Framing(format!("frame at {} runs past end of capture", b.start)));
            }
        }
        Ok(Capture { header, samples })
    }
}
