//! Pointer-authentication model.
//!
//! A 64-bit value carries its authentication code in bits 48–63 and the
//! payload in bits 0–47. Signing computes a 16-bit code over (payload,
//! modifier, key, domain) and overwrites the top bits; authentication
//! recomputes and compares, stripping on success.
//!
//! The code is a SplitMix64-style keyed mix, truncated by folding the two
//! top 16-bit lanes. It is deterministic per build and carries no
//! cryptographic-strength claim; the suite only needs distinct modifiers
//! to produce distinct codes over the corpus tag set, which the tests
//! assert against the fixture key.

use serde::{Deserialize, Serialize};

pub const PAC_SHIFT: u32 = 48;
pub const PAYLOAD_MASK: u64 = (1u64 << PAC_SHIFT) - 1;

/// Key domain: instruction-key (`pacia`/`autia`) vs data-key (`pacda`/`autda`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacDomain {
    Instruction,
    Data,
}

/// A signed 64-bit word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacValue {
    pub raw: u64,
}

impl PacValue {
    pub fn pac_bits(&self) -> u16 {
        (self.raw >> PAC_SHIFT) as u16
    }

    pub fn payload(&self) -> u64 {
        self.raw & PAYLOAD_MASK
    }
}

pub fn strip(value: u64) -> u64 {
    value & PAYLOAD_MASK
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 16-bit authentication code over (payload bits, modifier, key, domain).
pub fn compute_pac(value: u64, modifier: u64, key: u128, domain: PacDomain) -> u16 {
    let key_lo = key as u64;
    let key_hi = (key >> 64) as u64;
    let dom = match domain {
        PacDomain::Instruction => 0x49u64,
        PacDomain::Data => 0x44u64,
    };
    let mut h = splitmix64(strip(value) ^ key_lo.rotate_left(13));
    h = splitmix64(h ^ modifier.rotate_left(29) ^ key_hi);
    h = splitmix64(h ^ dom);
    ((h >> 48) as u16) ^ ((h >> 32) as u16)
}

/// Sign: overwrite the PAC field with the code for this (modifier, domain).
pub fn sign(value: u64, modifier: u64, key: u128, domain: PacDomain) -> PacValue {
    let pac = compute_pac(value, modifier, key, domain) as u64;
    PacValue {
        raw: strip(value) | (pac << PAC_SHIFT),
    }
}

/// Authenticate: `Ok(stripped)` when the PAC field matches, `Err` with the
/// expected/actual codes otherwise.
pub fn auth(value: u64, modifier: u64, key: u128, domain: PacDomain) -> Result<u64, PacMismatch> {
    let expected = compute_pac(value, modifier, key, domain);
    let actual = (value >> PAC_SHIFT) as u16;
    if expected == actual {
        Ok(strip(value))
    } else {
        Err(PacMismatch { expected, actual })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacMismatch {
    pub expected: u16,
    pub actual: u16,
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: u128 = 0x0102_0304_0506_0708_090a_0b0c_0d0e_0f10;

    #[test]
    fn deterministic() {
        let a = compute_pac(0x1234, 0x9c2, KEY, PacDomain::Data);
        let b = compute_pac(0x1234, 0x9c2, KEY, PacDomain::Data);
        assert_eq!(a, b);
    }

    #[test]
    fn strip_of_signed_equals_strip() {
        for v in [0u64, 0x1234, 0xffff_ffff_ffff_ffff, 0x0000_7fff_0000_0008] {
            let signed = sign(v, 0x135, KEY, PacDomain::Instruction);
            assert_eq!(strip(signed.raw), strip(v));
        }
    }

    #[test]
    fn adjacent_modifiers_differ() {
        // Brute-force check over a corpus-like tag set with the fixture key.
        let values = [0u64, 0x2, 0x1000_0000, 0x1000_8040, 0x7fff_0008];
        let tags: Vec<u64> = (1u64..=0x40).chain([0x135, 0x9c2, 0x8f7]).collect();
        for &v in &values {
            for &m in &tags {
                for dom in [PacDomain::Instruction, PacDomain::Data] {
                    assert_ne!(
                        compute_pac(v, m, KEY, dom),
                        compute_pac(v, m ^ 1, KEY, dom),
                        "collision at value {v:#x} modifier {m:#x}"
                    );
                }
            }
        }
    }

    #[test]
    fn auth_round_trip_and_mismatch() {
        let signed = sign(0x4321, 0x9c2, KEY, PacDomain::Data);
        assert_eq!(auth(signed.raw, 0x9c2, KEY, PacDomain::Data), Ok(0x4321));
        assert!(auth(signed.raw, 0, KEY, PacDomain::Data).is_err());
        assert!(auth(signed.raw, 0x9c2, KEY, PacDomain::Instruction).is_err());
    }
}
