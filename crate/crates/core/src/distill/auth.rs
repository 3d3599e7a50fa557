//! Wegman-Carter authentication: polynomial-evaluation hash over GF(2^128)
//! with a one-time-pad tag.
//!
//! A 256-bit key segment authenticates one message: the first 128 bits key
//! the hash, the last 128 pad the tag. Key bits are never reused; the pool
//! they come from is replenished from each round's fresh secret key, after an
//! initial secret bootstraps the first rounds.
//!
//! Field convention: bit `i` of a `u128` is the coefficient of `x^i`;
//! reduction polynomial `x^128 + x^7 + x^2 + x + 1`. Message blocks are 16
//! bytes little-endian, zero-padded, with a closing length block, folded by
//! Horner's rule.

use thiserror::Error;

use crate::bits::{to_bytes, Bits, BitsSlice};

/// Key bits consumed per tag.
pub const AUTH_KEY_BITS_PER_TAG: u64 = 256;

#[derive(Debug, Error, PartialEq)]
pub enum AuthError {
    #[error("authentication key pool exhausted: need {need} bits, have {have}")]
    InsufficientAuthKey { need: u64, have: u64 },
    #[error("auth key segment must be 256 bits, got {0}")]
    BadSegmentLength(usize),
}

/// 128-bit message tag plus the key budget it consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthTag {
    pub tag: [u8; 16],
    pub key_consumed: u64,
}

fn gf128_mul(x: u128, y: u128) -> u128 {
    let mut acc = 0u128;
    let mut a = x;
    for i in 0..128 {
        if y >> i & 1 == 1 {
            acc ^= a;
        }
        let carry = a >> 127;
        a <<= 1;
        if carry == 1 {
            a ^= 0x87; // x^7 + x^2 + x + 1
        }
    }
    acc
}

fn poly_hash(message: &[u8], h: u128) -> u128 {
    let mut acc = 0u128;
    for chunk in message.chunks(16) {
        let mut block = [0u8; 16];
        block[..chunk.len()].copy_from_slice(chunk);
        acc = gf128_mul(acc ^ u128::from_le_bytes(block), h);
    }
    let length_block = (message.len() as u128) * 8;
    gf128_mul(acc ^ length_block, h)
}

fn split_segment(auth_key: &BitsSlice) -> Result<(u128, u128), AuthError> {
    if auth_key.len() != AUTH_KEY_BITS_PER_TAG as usize {
        return Err(AuthError::BadSegmentLength(auth_key.len()));
    }
    let bytes = to_bytes(auth_key);
    let h = u128::from_le_bytes(bytes[0..16].try_into().unwrap());
    let pad = u128::from_le_bytes(bytes[16..32].try_into().unwrap());
    Ok((h, pad))
}

/// Tags `message` with a fresh 256-bit key segment.
pub fn wegman_carter_tag(message: &[u8], auth_key: &BitsSlice) -> Result<AuthTag, AuthError> {
    let (h, pad) = split_segment(auth_key)?;
    let tag = poly_hash(message, h) ^ pad;
    Ok(AuthTag {
        tag: tag.to_le_bytes(),
        key_consumed: AUTH_KEY_BITS_PER_TAG,
    })
}

/// Recomputes and compares in constant time.
pub fn verify_tag(message: &[u8], auth_key: &BitsSlice, tag: &AuthTag) -> Result<bool, AuthError> {
    let expected = wegman_carter_tag(message, auth_key)?;
    let mut diff = 0u8;
    for (a, b) in expected.tag.iter().zip(tag.tag.iter()) {
        diff |= a ^ b;
    }
    Ok(diff == 0)
}

/// FIFO pool of authentication key bits shared by the two ends of a link.
///
/// Bootstrapped with the provisioned initial secret; replenished from each
/// successful round before the remainder is exported.
#[derive(Debug, Clone, Default)]
pub struct AuthKeyPool {
    bits: Bits,
    cursor: usize,
    total_consumed: u64,
    total_pushed: u64,
}

impl AuthKeyPool {
    pub fn new(initial: Bits) -> Self {
        let total_pushed = initial.len() as u64;
        Self {
            bits: initial,
            cursor: 0,
            total_consumed: 0,
            total_pushed,
        }
    }

    pub fn available(&self) -> u64 {
        (self.bits.len() - self.cursor) as u64
    }

    pub fn take(&mut self, n: u64) -> Result<Bits, AuthError> {
        if self.available() < n {
            return Err(AuthError::InsufficientAuthKey {
                need: n,
                have: self.available(),
            });
        }
        let start = self.cursor;
        self.cursor += n as usize;
        self.total_consumed += n;
        let out = self.bits[start..self.cursor].to_bitvec();
        if self.cursor > 1 << 16 {
            self.bits = self.bits[self.cursor..].to_bitvec();
            self.cursor = 0;
        }
        Ok(out)
    }

    pub fn push(&mut self, fresh: &BitsSlice) {
        self.bits.extend_from_bitslice(fresh);
        self.total_pushed += fresh.len() as u64;
    }

    pub fn total_consumed(&self) -> u64 {
        self.total_consumed
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::random_bits;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn segment(seed: u64) -> Bits {
        random_bits(&mut stream_rng(seed, "auth-key"), 256)
    }

    #[test]
    fn same_message_same_key_same_tag() {
        let key = segment(1);
        let t1 = wegman_carter_tag(b"round transcript bytes", &key).unwrap();
        let t2 = wegman_carter_tag(b"round transcript bytes", &key).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.key_consumed, 256);
        assert!(verify_tag(b"round transcript bytes", &key, &t1).unwrap());
    }

    #[test]
    fn single_bit_flip_changes_tag() {
        let key = segment(2);
        let msg = b"some classical round transcript".to_vec();
        let tag = wegman_carter_tag(&msg, &key).unwrap();
        let mut flipped = msg.clone();
        flipped[5] ^= 0x10;
        let tag2 = wegman_carter_tag(&flipped, &key).unwrap();
        assert_ne!(tag, tag2);
        assert!(!verify_tag(&flipped, &key, &tag).unwrap());
    }

    #[test]
    fn no_forgeries_over_random_trials() {
        // Smaller sibling of the acceptance forgery suite.
        let mut rng = stream_rng(3, "auth-forge");
        for _ in 0..2_000 {
            let key = random_bits(&mut rng, 256);
            let len = rng.gen_range(0..64);
            let mut msg = vec![0u8; len];
            rng.fill(&mut msg[..]);
            let tag = wegman_carter_tag(&msg, &key).unwrap();
            let mut forged = msg.clone();
            if forged.is_empty() {
                forged.push(rng.gen());
            } else {
                let idx = rng.gen_range(0..forged.len());
                let mask = loop {
                    let m: u8 = rng.gen();
                    if m != 0 {
                        break m;
                    }
                };
                forged[idx] ^= mask;
            }
            assert!(!verify_tag(&forged, &key, &tag).unwrap());
        }
    }

    #[test]
    fn empty_message_tag_is_pad() {
        // poly_hash(empty) = (0 ^ 0) * h = 0, so the tag is exactly the pad.
        let key = segment(4);
        let tag = wegman_carter_tag(b"", &key).unwrap();
        let pad = &to_bytes(&key)[16..32];
        assert_eq!(&tag.tag[..], pad);
    }

    #[test]
    fn length_extension_is_distinguished() {
        // "abc" followed by zero padding differs from "abc\0" thanks to the
        // length block.
        let key = segment(5);
        let t1 = wegman_carter_tag(b"abc", &key).unwrap();
        let t2 = wegman_carter_tag(b"abc\0", &key).unwrap();
        assert_ne!(t1, t2);
    }

    #[test]
    fn pool_take_push_accounting() {
        let mut pool = AuthKeyPool::new(random_bits(&mut stream_rng(6, "pool"), 1024));
        assert_eq!(pool.available(), 1024);
        let seg = pool.take(256).unwrap();
        assert_eq!(seg.len(), 256);
        assert_eq!(pool.available(), 768);
        pool.push(&random_bits(&mut stream_rng(7, "pool2"), 128));
        assert_eq!(pool.available(), 896);
        assert_eq!(pool.total_consumed(), 256);
        assert_eq!(
            pool.take(1024),
            Err(AuthError::InsufficientAuthKey {
                need: 1024,
                have: 896
            })
        );
    }

    #[test]
    fn pool_is_fifo() {
        let bits = random_bits(&mut stream_rng(8, "fifo"), 512);
        let mut pool = AuthKeyPool::new(bits.clone());
        let first = pool.take(256).unwrap();
        let second = pool.take(256).unwrap();
        assert_eq!(first, bits[..256].to_bitvec());
        assert_eq!(second, bits[256..].to_bitvec());
    }

    #[test]
    fn gf128_mul_field_axioms() {
        let mut rng = stream_rng(9, "gf128");
        for _ in 0..200 {
            let a: u128 = rng.gen();
            let b: u128 = rng.gen();
            let c: u128 = rng.gen();
            assert_eq!(gf128_mul(a, b), gf128_mul(b, a));
            assert_eq!(gf128_mul(a, 1), a);
            assert_eq!(gf128_mul(a, 0), 0);
            assert_eq!(
                gf128_mul(a, b ^ c),
                gf128_mul(a, b) ^ gf128_mul(a, c),
                "distributivity"
            );
            assert_eq!(
                gf128_mul(gf128_mul(a, b), c),
                gf128_mul(a, gf128_mul(b, c)),
                "associativity"
            );
        }
    }
}
