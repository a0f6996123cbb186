//! Per-symbol block interleaver (two-step permutation over `N_CBPS` bits).

use crate::error::{Error, Result};

/// Output position of input bit `k` within one OFDM symbol.
pub fn permutation(n_cbps: usize, n_bpsc: usize) -> Vec<usize> {
    let s = (n_bpsc / 2).max(1);
    (0..n_cbps)
        .map(|k| {
            let i = (n_cbps / 16) * (k % 16) + k / 16;
            s * (i / s) + (i + n_cbps - (16 * i / n_cbps)) % s
        })
        .collect()
}

fn check(len: usize, n_cbps: usize) -> Result<()> {
    if !len.is_multiple_of(n_cbps) {
        return Err(Error::Framing(format!("{len} coded bits is not a whole number of {n_cbps}-bit symbols")));
    }
    Ok(())
}

pub fn interleave(bits: &[u8], n_cbps: usize, n_bpsc: usize) -> Result<Vec<u8>> {
    check(bits.len(), n_cbps)?;
    let perm = permutation(n_cbps, n_bpsc);
    let mut out = vec![0u8; bits.len()];
    for (block_in, block_out) in bits.chunks_exact(n_cbps).zip(out.chunks_exact_mut(n_cbps)) {
        for (k, &j) in perm.iter().enumerate() {
            block_out[j] = block_in[k];
        }
    }
    Ok(out)
}

pub fn deinterleave(bits: &[u8], n_cbps: usize, n_bpsc: usize) -> Result<Vec<u8>> {
    check(bits.len(), n_cbps)?;
    let perm = permutation(n_cbps, n_bpsc);
    let mut out = vec![0u8; bits.len()];
    for (block_in, block_out) in bits.chunks_exact(n_cbps).zip(out.chunks_exact_mut(n_cbps)) {
        for (k, &j) in perm.iter().enumerate() {
            block_out[k] = block_in[j];
        }
    }
    Ok(out)
}
