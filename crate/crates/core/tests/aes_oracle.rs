//! The S-box table checked against its algebraic definition, and against a
//! full AES-128 encryption of the published known-answer vector.

use scniffer::crypto::{from_hex16, sbox_output, SBOX};

fn gf_mul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

fn gf_inv(a: u8) -> u8 {
    if a == 0 {
        return 0;
    }
    (1..=255u8).find(|&b| gf_mul(a, b) == 1).unwrap()
}

/// Multiplicative inverse followed by the affine map.
fn derived_sbox(x: u8) -> u8 {
    let b = gf_inv(x);
    b ^ b.rotate_left(1) ^ b.rotate_left(2) ^ b.rotate_left(3) ^ b.rotate_left(4) ^ 0x63
}

#[test]
fn table_matches_field_definition() {
    for x in 0..=255u8 {
        assert_eq!(SBOX[x as usize], derived_sbox(x), "S({x:#04x})");
    }
}

fn expand_key(key: &[u8; 16]) -> [[u8; 16]; 11] {
    let mut w = [[0u8; 4]; 44];
    for i in 0..4 {
        w[i].copy_from_slice(&key[4 * i..4 * i + 4]);
    }
    let mut rcon = 1u8;
    for i in 4..44 {
        let mut t = w[i - 1];
        if i % 4 == 0 {
            t = [t[1], t[2], t[3], t[0]].map(derived_sbox);
            t[0] ^= rcon;
            rcon = gf_mul(rcon, 2);
        }
        for k in 0..4 {
            w[i][k] = w[i - 4][k] ^ t[k];
        }
    }
    let mut rk = [[0u8; 16]; 11];
    for r in 0..11 {
        for c in 0..4 {
            rk[r][4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
        }
    }
    rk
}

fn add(s: &mut [u8; 16], k: &[u8; 16]) {
    s.iter_mut().zip(k).for_each(|(a, b)| *a ^= b);
}

fn shift_rows(s: &mut [u8; 16]) {
    let old = *s;
    for c in 0..4 {
        for r in 0..4 {
            s[4 * c + r] = old[4 * ((c + r) % 4) + r];
        }
    }
}

fn mix_columns(s: &mut [u8; 16]) {
    for c in 0..4 {
        let a = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
        for r in 0..4 {
            s[4 * c + r] = gf_mul(a[r], 2) ^ gf_mul(a[(r + 1) % 4], 3) ^ a[(r + 2) % 4] ^ a[(r + 3) % 4];
        }
    }
}

/// Encrypts with the library's S-box table.
fn encrypt(pt: &[u8; 16], key: &[u8; 16]) -> [u8; 16] {
    let rk = expand_key(key);
    let mut s = *pt;
    add(&mut s, &rk[0]);
    for (r, k) in rk.iter().enumerate().skip(1) {
        s = s.map(|b| SBOX[b as usize]);
        shift_rows(&mut s);
        if r != 10 {
            mix_columns(&mut s);
        }
        add(&mut s, k);
    }
    s
}

#[test]
fn known_answer_vector() {
    let pt = from_hex16("00112233445566778899aabbccddeeff").unwrap();
    let key = from_hex16("000102030405060708090a0b0c0d0e0f").unwrap();
    let ct = from_hex16("69c4e0d86a7b0430d8cdb78070b4c55a").unwrap();
    assert_eq!(encrypt(&pt, &key), ct);
}

#[test]
fn first_round_output_is_subbytes_after_whitening() {
    let pt = from_hex16("00112233445566778899aabbccddeeff").unwrap();
    let key = from_hex16("000102030405060708090a0b0c0d0e0f").unwrap();
    let mut s = pt;
    add(&mut s, &key);
    for b in 0..16 {
        assert_eq!(sbox_output(pt[b], key[b]), derived_sbox(s[b]));
    }
}
