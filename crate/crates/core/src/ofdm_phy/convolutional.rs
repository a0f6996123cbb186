//! Rate-1/2, K = 7 convolutional code (generators 133, 171 octal), the
//! 2/3 and 3/4 puncturing patterns, and a hard-decision Viterbi decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const G0: u32 = 0o133;
const G1: u32 = 0o171;
const STATES: usize = 64;

/// Marker for a punctured (not transmitted) coded bit.
pub const ERASURE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeRate {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "2/3")]
    TwoThirds,
    #[serde(rename = "3/4")]
    ThreeQuarters,
}

impl CodeRate {
    pub fn numerator(self) -> usize {
        match self {
            CodeRate::Half => 1,
            CodeRate::TwoThirds => 2,
            CodeRate::ThreeQuarters => 3,
        }
    }

    pub fn denominator(self) -> usize {
        match self {
            CodeRate::Half => 2,
            CodeRate::TwoThirds => 3,
            CodeRate::ThreeQuarters => 4,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.numerator() as f64 / self.denominator() as f64
    }

    // Keep-mask over one period of mother-code output (A0 B0 A1 B1 ...).
    fn keep_pattern(self) -> &'static [bool] {
        match self {
            CodeRate::Half => &[true, true],
            CodeRate::TwoThirds => &[true, true, true, false],
            CodeRate::ThreeQuarters => &[true, true, true, false, false, true],
        }
    }
}

fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

// Output pair for register contents `(input << 6) | state`, where state holds
// the previous six inputs, most recent in bit 5.
fn branch_output(state: usize, input: u8) -> (u8, u8) {
    let reg = ((input as u32) << 6) | state as u32;
    (parity(reg & G0), parity(reg & G1))
}

/// Mother-code encoding from the all-zero state: two output bits per input.
pub fn encode(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len() * 2);
    let mut state = 0usize;
    for &b in bits {
        let (a, c) = branch_output(state, b & 1);
        out.push(a);
        out.push(c);
        state = (((b & 1) as usize) << 5) | (state >> 1);
    }
    out
}

pub fn puncture(coded: &[u8], rate: CodeRate) -> Vec<u8> {
    let pattern = rate.keep_pattern();
    coded.iter().zip(pattern.iter().cycle()).filter_map(|(&b, &keep)| keep.then_some(b)).collect()
}

/// Reinsert erasures for punctured positions. `data_len` is the number of
/// decoder input bits the stream represents.
pub fn depuncture(received: &[u8], rate: CodeRate, data_len: usize) -> Result<Vec<u8>> {
    let pattern = rate.keep_pattern();
    let total = data_len * 2;
    let kept = (0..total).filter(|i| pattern[i % pattern.len()]).count();
    if kept != received.len() {
        return Err(Error::Framing(format!(
            "rate {}/{} stream of {} bits cannot carry {data_len} data bits",
            rate.numerator(),
            rate.denominator(),
            received.len()
        )));
    }
    let mut it = received.iter();
    Ok((0..total).map(|i| if pattern[i % pattern.len()] { *it.next().unwrap() } else { ERASURE }).collect())
}

/// Hard-decision Viterbi over the mother code. Erased positions carry no
/// metric. Traceback starts from the best final state (lowest index on ties).
pub fn viterbi_decode(coded: &[u8]) -> Result<Vec<u8>> {
    if !coded.len().is_multiple_of(2) {
        return Err(Error::Framing(format!("mother-code stream has odd length {}", coded.len())));
    }
    let steps = coded.len() / 2;
    let mut outputs = [[(0u8, 0u8); 2]; STATES];
    for (s, o) in outputs.iter_mut().enumerate() {
        o[0] = branch_output(s, 0);
        o[1] = branch_output(s, 1);
    }

    const UNREACHED: u32 = u32::MAX / 2;
    let mut metric = [UNREACHED; STATES];
    metric[0] = 0;
    let mut survivors: Vec<u64> = Vec::with_capacity(steps);

    for pair in coded.chunks_exact(2) {
        let (ra, rb) = (pair[0], pair[1]);
        let cost = |a: u8, b: u8| -> u32 { (ra != ERASURE && ra != a) as u32 + (rb != ERASURE && rb != b) as u32 };
        let mut next = [UNREACHED; STATES];
        let mut decisions = 0u64;
        for (ns, slot) in next.iter_mut().enumerate() {
            let input = (ns >> 5) as u8;
            let base = (ns & 0x1f) << 1;
            let (p0, p1) = (base, base | 1);
            let (a0, b0) = outputs[p0][input as usize];
            let (a1, b1) = outputs[p1][input as usize];
            let m0 = metric[p0].saturating_add(cost(a0, b0));
            let m1 = metric[p1].saturating_add(cost(a1, b1));
            if m1 < m0 {
                *slot = m1;
                decisions |= 1 << ns;
            } else {
                *slot = m0;
            }
        }
        let floor = *next.iter().min().unwrap();
        for m in next.iter_mut() {
            *m = m.saturating_sub(floor).min(UNREACHED);
        }
        metric = next;
        survivors.push(decisions);
    }

    let mut state = (0..STATES).min_by_key(|&s| (metric[s], s)).unwrap_or(0);
    let mut decoded = vec![0u8; steps];
    for (t, &decisions) in survivors.iter().enumerate().rev() {
        decoded[t] = (state >> 5) as u8;
        let x = ((decisions >> state) & 1) as usize;
        state = ((state & 0x1f) << 1) | x;
    }
    Ok(decoded)
}
