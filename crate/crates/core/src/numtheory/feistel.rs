//! Keyed permutation over b-bit strings.
//!
//! A 4-round balanced Feistel network whose round function is the framed
//! hash of `key || round || block || half`. Feistel networks are bijections
//! for any round function, so forward and inverse are exact mutual inverses
//! on `[0, 2^width_b)` for every key and every even width.

use super::{hash, int_to_fixed_bytes, BitString, Digest, NumError};
use num_bigint::BigUint;
use num_traits::One;

const ROUNDS: u8 = 4;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Applies the keyed permutation (or its inverse) to a `width_b`-bit string.
pub fn permute(
    key: &Digest,
    width_b: u32,
    x: &BitString,
    direction: Direction,
) -> Result<BitString, NumError> {
    if width_b < 8 || width_b % 2 != 0 {
        return Err(NumError::InvalidWidth(width_b));
    }
    if x.width() != width_b {
        return Err(NumError::WidthMismatch {
            expected: width_b,
            got: x.width(),
        });
    }
    let half = width_b / 2;
    let mask = (BigUint::one() << half as usize) - BigUint::one();
    let mut left: BigUint = x.value() >> half as usize;
    let mut right: BigUint = x.value() & &mask;

    match direction {
        Direction::Forward => {
            for round in 0..ROUNDS {
                let f = round_fn(key, round, &right, half) & &mask;
                let new_right = &left ^ &f;
                left = std::mem::replace(&mut right, new_right);
            }
        }
        Direction::Inverse => {
            for round in (0..ROUNDS).rev() {
                let f = round_fn(key, round, &left, half) & &mask;
                let new_left = &right ^ &f;
                right = std::mem::replace(&mut left, new_left);
            }
        }
    }

    let value = (left << half as usize) | right;
    BitString::new(width_b, value)
}

/// Hash-based round function, counter-extended so halves wider than one
/// digest still get full-width output.
fn round_fn(key: &Digest, round: u8, half_val: &BigUint, half_bits: u32) -> BigUint {
    let needed = (half_bits as usize).div_ceil(8);
    let encoded = int_to_fixed_bytes(half_val, needed);
    let mut out = Vec::with_capacity(needed);
    let mut block = 0u8;
    while out.len() < needed {
        let d = hash(&[key.as_bytes(), &[round], &[block], &encoded]);
        out.extend_from_slice(d.as_bytes());
        block += 1;
    }
    BigUint::from_bytes_be(&out[..needed])
}
