//! Bit-sequence storage and the GF(2) primitives shared by the pipeline.
//!
//! Key material at every stage (raw, sifted, corrected, secret) is a plain
//! bit sequence. Bit `i` of a sequence is the coefficient of `x^i` wherever a
//! sequence is interpreted as a polynomial over GF(2).

use bitvec::field::BitField;
use bitvec::prelude::*;
use rand::RngCore;

/// Bit sequence, LSB-first within 64-bit words.
pub type Bits = BitVec<u64, Lsb0>;
/// Borrowed view of a [`Bits`].
pub type BitsSlice = BitSlice<u64, Lsb0>;

/// Draws `n` random bits from `rng`, word at a time.
pub fn random_bits(rng: &mut impl RngCore, n: usize) -> Bits {
    let mut out = Bits::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(64);
        let word = rng.next_u64();
        for i in 0..take {
            out.push(word >> i & 1 == 1);
        }
        remaining -= take;
    }
    out
}

/// XOR of two equal-length sequences.
pub fn xor(a: &BitsSlice, b: &BitsSlice) -> Bits {
    assert_eq!(a.len(), b.len(), "xor requires equal lengths");
    let mut out = a.to_bitvec();
    out ^= b;
    out
}

/// Parity (XOR fold) of a bit sequence.
pub fn parity(a: &BitsSlice) -> bool {
    a.count_ones() & 1 == 1
}

/// Number of positions where `a` and `b` differ.
pub fn hamming(a: &BitsSlice, b: &BitsSlice) -> usize {
    assert_eq!(a.len(), b.len());
    a.iter()
        .by_vals()
        .zip(b.iter().by_vals())
        .filter(|(x, y)| x != y)
        .count()
}

/// Canonical byte encoding: byte `j` holds bits `8j..8j+8`, bit `8j` in the
/// least significant position; the final byte is zero-padded.
pub fn to_bytes(a: &BitsSlice) -> Vec<u8> {
    let mut out = vec![0u8; a.len().div_ceil(8)];
    for (i, bit) in a.iter().by_vals().enumerate() {
        if bit {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

/// Inverse of [`to_bytes`]; `len` recovers the unpadded length.
pub fn from_bytes(bytes: &[u8], len: usize) -> Bits {
    assert!(len <= bytes.len() * 8);
    let mut out = Bits::with_capacity(len);
    for i in 0..len {
        out.push(bytes[i / 8] >> (i % 8) & 1 == 1);
    }
    out
}

/// Parses a `"0101"` literal; test and scenario convenience.
pub fn parse_bits(s: &str) -> Bits {
    s.chars()
        .map(|c| match c {
            '0' => false,
            '1' => true,
            _ => panic!("bit literal may contain only 0 and 1"),
        })
        .collect()
}

/// Packs a bit slice into little-endian 64-bit words (bit `i` at word `i/64`,
/// position `i%64`), zero-padding the tail.
pub fn to_words(a: &BitsSlice) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len().div_ceil(64));
    for chunk in a.chunks(64) {
        out.push(chunk.load_le::<u64>());
    }
    out
}

fn words_to_bits(words: &[u64], len: usize) -> Bits {
    let mut out = Bits::with_capacity(len);
    for i in 0..len {
        out.push(words[i / 64] >> (i % 64) & 1 == 1);
    }
    out
}

/// Carry-less product of one word against a 4-bit window table.
#[inline]
fn clmul64_tabled(table: &[(u64, u64); 16], y: u64) -> (u64, u64) {
    let mut lo = 0u64;
    let mut hi = 0u64;
    for i in 0..16 {
        let nib = (y >> (4 * i)) & 0xF;
        if nib == 0 {
            continue;
        }
        let (tlo, thi) = table[nib as usize];
        let s = 4 * i;
        if s == 0 {
            lo ^= tlo;
            hi ^= thi;
        } else {
            lo ^= tlo << s;
            hi ^= (tlo >> (64 - s)) | (thi << s);
        }
    }
    (lo, hi)
}

fn window_table(x: u64) -> [(u64, u64); 16] {
    let mut table = [(0u64, 0u64); 16];
    for v in 1..16u64 {
        let mut lo = 0u64;
        let mut hi = 0u64;
        for bit in 0..4 {
            if v >> bit & 1 == 1 {
                lo ^= x << bit;
                if bit > 0 {
                    hi ^= x >> (64 - bit);
                }
            }
        }
        table[v as usize] = (lo, hi);
    }
    table
}

/// Polynomial product over GF(2): `out[k] = XOR_{i+j=k} a[i] & b[j]`, with
/// `out.len() = a.len() + b.len() - 1`. Empty inputs yield an empty product.
pub fn gf2_conv(a: &BitsSlice, b: &BitsSlice) -> Bits {
    if a.is_empty() || b.is_empty() {
        return Bits::new();
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let sw = to_words(short);
    let lw = to_words(long);
    let out_len = a.len() + b.len() - 1;
    let mut acc = vec![0u64; out_len.div_ceil(64) + 1];
    for (i, &x) in sw.iter().enumerate() {
        if x == 0 {
            continue;
        }
        let table = window_table(x);
        for (j, &y) in lw.iter().enumerate() {
            if y == 0 {
                continue;
            }
            let (lo, hi) = clmul64_tabled(&table, y);
            acc[i + j] ^= lo;
            acc[i + j + 1] ^= hi;
        }
    }
    words_to_bits(&acc, out_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Schoolbook O(n*m) product, the independent check for gf2_conv.
    fn conv_naive(a: &BitsSlice, b: &BitsSlice) -> Bits {
        if a.is_empty() || b.is_empty() {
            return Bits::new();
        }
        let mut out = bitvec![u64, Lsb0; 0; a.len() + b.len() - 1];
        for i in 0..a.len() {
            if !a[i] {
                continue;
            }
            for j in 0..b.len() {
                if b[j] {
                    let k = i + j;
                    let v = out[k];
                    out.set(k, !v);
                }
            }
        }
        out
    }

    #[test]
    fn byte_round_trip() {
        let b = parse_bits("10110010111");
        assert_eq!(from_bytes(&to_bytes(&b), b.len()), b);
    }

    #[test]
    fn parity_and_hamming() {
        let a = parse_bits("1101");
        let b = parse_bits("1011");
        assert!(parity(&a));
        assert_eq!(hamming(&a, &b), 2);
        assert_eq!(hamming(&a, &a), 0);
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (la, lb) in [(1, 1), (3, 4), (64, 64), (65, 130), (200, 517)] {
            let a = random_bits(&mut rng, la);
            let b = random_bits(&mut rng, lb);
            assert_eq!(gf2_conv(&a, &b), conv_naive(&a, &b), "sizes {la}x{lb}");
        }
    }

    #[test]
    fn conv_is_commutative_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_bits(&mut rng, 97);
        let b = random_bits(&mut rng, 201);
        let c = random_bits(&mut rng, 97);
        assert_eq!(gf2_conv(&a, &b), gf2_conv(&b, &a));
        let ac = xor(&a, &c);
        assert_eq!(
            gf2_conv(&ac, &b),
            xor(&gf2_conv(&a, &b), &gf2_conv(&c, &b))
        );
    }

    #[test]
    fn random_bits_reproducible() {
        let a = random_bits(&mut ChaCha8Rng::seed_from_u64(3), 1000);
        let b = random_bits(&mut ChaCha8Rng::seed_from_u64(3), 1000);
        assert_eq!(a, b);
    }
}
