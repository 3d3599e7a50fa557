//! Toeplitz-matrix privacy amplification.
//!
//! The corrected buffer of a whole round is compressed through a binary
//! Toeplitz matrix drawn from a seed of `n + out_len - 1` bits:
//!
//! ```text
//! T[i][j] = seed[i + n - 1 - j],   i in 0..out_len, j in 0..n
//! out[i]  = XOR_j T[i][j] & input[j]
//! ```
//!
//! which is the coefficient slice `[n-1, n-1+out_len)` of the carry-less
//! polynomial product `seed(x) * input(x)`; the multiply runs on packed
//! words instead of materializing the matrix.

use thiserror::Error;

use crate::bits::{gf2_conv, Bits, BitsSlice};

#[derive(Debug, Error, PartialEq)]
pub enum ToeplitzError {
    #[error("seed length {got} does not match required {expected} (n + out_len - 1)")]
    InvalidSeedLength { expected: usize, got: usize },
    #[error("output length {out_len} exceeds input length {input_len}")]
    OutputTooLong { out_len: usize, input_len: usize },
}

/// Hashes `input` down to `out_len` bits with the Toeplitz matrix described
/// by `seed`. Both parties apply this to identical inputs with the identical
/// seed announced over the authenticated channel.
pub fn privacy_amplify(
    input: &BitsSlice,
    seed: &BitsSlice,
    out_len: usize,
) -> Result<Bits, ToeplitzError> {
    let n = input.len();
    if out_len > n {
        return Err(ToeplitzError::OutputTooLong {
            out_len,
            input_len: n,
        });
    }
    if out_len == 0 {
        return Ok(Bits::new());
    }
    let expected = n + out_len - 1;
    if seed.len() != expected {
        return Err(ToeplitzError::InvalidSeedLength {
            expected,
            got: seed.len(),
        });
    }
    let product = gf2_conv(seed, input);
    Ok(product[n - 1..n - 1 + out_len].to_bitvec())
}
