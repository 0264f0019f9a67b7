//! GF(2^8) arithmetic over x^8 + x^4 + x^3 + x^2 + 1 (0x11D), generator 2.

use crate::error::{Error, Result};

pub const POLY: u16 = 0x11D;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
}

const fn build_tables() -> Tables {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    // Doubled so exp[log a + log b] needs no modulo.
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    Tables { exp, log }
}

static TABLES: Tables = build_tables();

#[inline]
pub fn gf_add(a: u8, b: u8) -> u8 {
    a ^ b
}

#[inline]
pub fn gf_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    TABLES.exp[TABLES.log[a as usize] as usize + TABLES.log[b as usize] as usize]
}

pub fn gf_inv(a: u8) -> Result<u8> {
    if a == 0 {
        return Err(Error::ZeroInverse);
    }
    Ok(TABLES.exp[255 - TABLES.log[a as usize] as usize])
}

pub fn gf_div(a: u8, b: u8) -> Result<u8> {
    Ok(gf_mul(a, gf_inv(b)?))
}

/// `table[x] == gf_mul(c, x)`.
pub fn mul_table(c: u8) -> [u8; 256] {
    let mut t = [0u8; 256];
    for (x, slot) in t.iter_mut().enumerate() {
        *slot = gf_mul(c, x as u8);
    }
    t
}

/// `dst[i] ^= c * src[i]`
pub fn mul_acc(dst: &mut [u8], src: &[u8], c: u8) {
    match c {
        0 => {}
        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s),
        _ => {
            let t = mul_table(c);
            dst.iter_mut()
                .zip(src)
                .for_each(|(d, &s)| *d ^= t[s as usize]);
        }
    }
}
