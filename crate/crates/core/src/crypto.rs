//! AES first-round leakage model and TVLA input generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream_id, SeededStream};

#[rustfmt::skip]
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

/// First-round S-box output `S(plaintext ^ key)`.
#[inline]
pub fn sbox_output(plaintext_byte: u8, key_byte: u8) -> u8 {
    SBOX[(plaintext_byte ^ key_byte) as usize]
}

#[inline]
pub fn hamming_weight(v: u8) -> u32 {
    v.count_ones()
}

/// Hamming weight of the first-round S-box output: the leakage model.
#[inline]
pub fn leakage_model(plaintext_byte: u8, key_byte: u8) -> u32 {
    hamming_weight(sbox_output(plaintext_byte, key_byte))
}

/// Variance of `HW(S(P ^ k))` over uniform `P`: S is a bijection, so this is
/// the variance of a Binomial(8, 1/2).
pub const MODEL_VARIANCE: f64 = 2.0;

/// A guess for one key byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KeyByteHypothesis {
    byte_index: u8,
    value: u8,
}

impl KeyByteHypothesis {
    pub fn new(byte_index: usize, value: u8) -> Result<Self> {
        if byte_index >= 16 {
            return Err(Error::invalid(format!("key byte index {byte_index} >= 16")));
        }
        Ok(Self {
            byte_index: byte_index as u8,
            value,
        })
    }

    pub fn byte_index(&self) -> usize {
        self.byte_index as usize
    }

    pub fn value(&self) -> u8 {
        self.value
    }

    /// Predicted leakage for a plaintext under this hypothesis.
    pub fn predict(&self, plaintext: &[u8; 16]) -> u32 {
        leakage_model(plaintext[self.byte_index()], self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    FixedPlaintext,
    RandomPlaintext,
}

/// Plaintexts to encrypt under one key during a capture batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSet {
    pub kind: InputKind,
    pub key: [u8; 16],
    pub plaintexts: Vec<[u8; 16]>,
}

impl InputSet {
    pub fn fixed(key: [u8; 16], plaintext: [u8; 16], count: usize) -> Self {
        Self {
            kind: InputKind::FixedPlaintext,
            key,
            plaintexts: vec![plaintext; count],
        }
    }

    /// `count` uniform plaintext blocks drawn from the plaintext stream of `seed`.
    pub fn random(seed: u64, count: usize, key: [u8; 16]) -> Self {
        let mut stream = SeededStream::new(seed, stream_id(purpose::PLAINTEXTS, 0));
        let plaintexts = (0..count)
            .map(|_| {
                let mut block = [0u8; 16];
                stream.fill_bytes(&mut block);
                block
            })
            .collect();
        Self {
            kind: InputKind::RandomPlaintext,
            key,
            plaintexts,
        }
    }

    pub fn len(&self) -> usize {
        self.plaintexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plaintexts.is_empty()
    }
}

/// Input sets for a non-specific fixed-versus-random t-test.
///
/// Returns `(fixed, random)`, each holding `group_size` plaintexts under `key`.
pub fn generate_tvla_sets(
    seed: u64,
    group_size: usize,
    key: [u8; 16],
    fixed_pt: [u8; 16],
) -> Result<(InputSet, InputSet)> {
    if group_size < 2 {
        return Err(Error::invalid(format!(
            "t-test groups need at least 2 traces, got {group_size}"
        )));
    }
    Ok((
        InputSet::fixed(key, fixed_pt, group_size),
        InputSet::random(seed, group_size, key),
    ))
}

/// Fixed key used by the TVLA test-vector convention.
pub const TVLA_KEY: [u8; 16] = [
    0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef, 0x12, 0x34, 0x56, 0x78, 0x9a, 0xbc, 0xde, 0xf0,
];

/// Fixed plaintext used by the TVLA test-vector convention.
pub const TVLA_FIXED_PLAINTEXT: [u8; 16] = [
    0xda, 0x39, 0xa3, 0xee, 0x5e, 0x6b, 0x4b, 0x0d, 0x32, 0x55, 0xbf, 0xef, 0x95, 0x60, 0x18, 0x90,
];

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn from_hex16(s: &str) -> Result<[u8; 16]> {
    let s = s.trim();
    if s.len() != 32 || !s.is_ascii() {
        return Err(Error::invalid(format!("expected 32 hex digits, got {s:?}")));
    }
    let mut out = [0u8; 16];
    for (k, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&s[2 * k..2 * k + 2], 16)
            .map_err(|e| Error::invalid(format!("bad hex {s:?}: {e}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sbox_examples() {
        assert_eq!(sbox_output(0x00, 0x00), 0x63);
        assert_eq!(sbox_output(0x53, 0x00), 0xed);
    }

    #[test]
    fn hamming_weight_examples() {
        assert_eq!(hamming_weight(0x00), 0);
        assert_eq!(hamming_weight(0xff), 8);
        assert_eq!(hamming_weight(0x53), 4);
    }

    #[test]
    fn sbox_is_bijective_for_every_key() {
        for k in 0..=255u8 {
            let mut seen = [false; 256];
            for p in 0..=255u8 {
                seen[sbox_output(p, k) as usize] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn model_variance_is_binomial() {
        let hws: Vec<f64> = (0..=255u8).map(|p| leakage_model(p, 0x2b) as f64).collect();
        let mean = hws.iter().sum::<f64>() / 256.0;
        let var = hws.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / 256.0;
        assert_eq!(mean, 4.0);
        assert_eq!(var, MODEL_VARIANCE);
    }

    #[test]
    fn tvla_sets_follow_protocol() {
        let (fixed, random) = generate_tvla_sets(7, 200, TVLA_KEY, TVLA_FIXED_PLAINTEXT).unwrap();
        assert_eq!(fixed.len(), 200);
        assert_eq!(random.len(), 200);
        assert_eq!(fixed.kind, InputKind::FixedPlaintext);
        assert_eq!(random.kind, InputKind::RandomPlaintext);
        assert!(fixed.plaintexts.iter().all(|p| *p == TVLA_FIXED_PLAINTEXT));
        assert_eq!(fixed.key, random.key);

        let (_, again) = generate_tvla_sets(7, 200, TVLA_KEY, TVLA_FIXED_PLAINTEXT).unwrap();
        assert_eq!(random, again);

        let (f2, r2) = generate_tvla_sets(7, 2, TVLA_KEY, TVLA_FIXED_PLAINTEXT).unwrap();
        assert_eq!((f2.len(), r2.len()), (2, 2));
    }

    #[test]
    fn tvla_sets_reject_tiny_groups() {
        assert!(matches!(
            generate_tvla_sets(1, 1, TVLA_KEY, TVLA_FIXED_PLAINTEXT),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn hypothesis_bounds() {
        assert!(KeyByteHypothesis::new(15, 0xff).is_ok());
        assert!(KeyByteHypothesis::new(16, 0).is_err());
    }

    #[test]
    fn hex_round_trip() {
        let s = to_hex(&TVLA_KEY);
        assert_eq!(s, "0123456789abcdef123456789abcdef0");
        assert_eq!(from_hex16(&s).unwrap(), TVLA_KEY);
        assert!(from_hex16("abc").is_err());
    }

    proptest! {
        #[test]
        fn xor_identity(a: u8, k: u8) {
            prop_assert_eq!(sbox_output(a, k), sbox_output(a ^ k, 0));
        }

        #[test]
        fn hamming_weight_subadditive(a: u8, b: u8) {
            prop_assert!(hamming_weight(a ^ b) <= hamming_weight(a) + hamming_weight(b));
        }
    }
}
