//! Frame-synchronous scrambler, generator `x^7 + x^4 + 1`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scrambler {
    state: u8,
}

impl Scrambler {
    pub fn new(seed: u8) -> Result<Self> {
        let state = seed & 0x7f;
        if state == 0 {
            return Err(Error::Configuration(
                "scrambler seed must be nonzero (all-zero LFSR never leaves zero)".into(),
            ));
        }
        Ok(Self { state })
    }

    pub fn next_bit(&mut self) -> u8 {
        let bit = ((self.state >> 6) ^ (self.state >> 3)) & 1;
        self.state = ((self.state << 1) | bit) & 0x7f;
        bit
    }

    /// XOR the sequence onto `bits` in place. Applying twice restores the input.
    pub fn apply(&mut self, bits: &mut [u8]) {
        for b in bits {
            *b ^= self.next_bit();
        }
    }
}

/// Pilot polarity sequence `p_0..p_126`: scrambler output from the all-ones
/// state with 0 → +1 and 1 → −1.
pub fn pilot_polarity() -> [f64; 127] {
    let mut s = Scrambler::new(0x7f).expect("nonzero");
    let mut out = [0.0; 127];
    for p in out.iter_mut() {
        *p = if s.next_bit() == 0 { 1.0 } else { -1.0 };
    }
    out
}
