//! Miller-Rabin primality testing.

use super::PrgStream;
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};

/// Deterministic witness set: correct for every n < 2^64.
const SMALL_BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Probabilistic primality test.
///
/// Below 2^64 the fixed witness set makes the answer deterministic and exact;
/// above it, `rounds` pseudorandom witnesses are derived from the candidate
/// itself so the result is still a pure function of `n`.
pub fn is_probable_prime(n: &BigUint, rounds: u32) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n.is_even() {
        return *n == two;
    }
    for small in [3u32, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let s = BigUint::from(small);
        if *n == s {
            return true;
        }
        if (n % &s).is_zero() {
            return false;
        }
    }

    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().expect("n > 1 and odd");
    let d = &n_minus_1 >> s;

    let witness_passes = |a: &BigUint| -> bool {
        let a = a % n;
        if a.is_zero() || a == one {
            return true;
        }
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            return true;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                return true;
            }
        }
        false
    };

    if n.bits() <= 64 {
        return SMALL_BASES
            .iter()
            .all(|&a| witness_passes(&BigUint::from(a)));
    }

    let mut prg = PrgStream::new(&n.to_bytes_be(), b"miller-rabin-witnesses");
    let span = n - BigUint::from(3u32);
    for _ in 0..rounds {
        let a = prg.draw_below(&span).expect("n > 3") + &two;
        if !witness_passes(&a) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(n: u64) -> bool {
        is_probable_prime(&BigUint::from(n), 40)
    }

    #[test]
    fn classifies_small_numbers() {
        let primes = [2u64, 3, 5, 7, 11, 13, 23, 97, 65537, 4294967291];
        let composites = [0u64, 1, 4, 9, 15, 21, 25, 561, 1105, 6601, 4294967295];
        for p in primes {
            assert!(check(p), "{p} should be prime");
        }
        for c in composites {
            assert!(!check(c), "{c} should be composite");
        }
    }

    #[test]
    fn rejects_strong_pseudoprimes() {
        // Strong pseudoprime to bases 2,3,5,7 -- caught by the full base set.
        assert!(!check(3215031751));
        // Carmichael numbers.
        for c in [561u64, 41041, 825265] {
            assert!(!check(c));
        }
    }

    #[test]
    fn handles_large_primes() {
        // 2^89 - 1 is a Mersenne prime; 2^89 + 1 is composite.
        let m89 = (BigUint::from(1u32) << 89) - BigUint::from(1u32);
        assert!(is_probable_prime(&m89, 40));
        let c = (BigUint::from(1u32) << 89) + BigUint::from(1u32);
        assert!(!is_probable_prime(&c, 40));
    }
}
