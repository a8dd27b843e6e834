//! Property-based invariants for the primitive and signature layers.

use meshauth_core::numtheory::{
    self, hash, permute, BitString, Digest, Direction, PrgStream,
};
use meshauth_core::ringsig::{combine, solve_ring};
use num_bigint::BigUint;
use proptest::prelude::*;

fn digest_strategy() -> impl Strategy<Value = Digest> {
    any::<[u8; 32]>().prop_map(Digest::from_bytes)
}

/// Even widths from 8 to 256.
fn width_strategy() -> impl Strategy<Value = u32> {
    (4u32..=128).prop_map(|h| h * 2)
}

proptest! {
    #[test]
    fn permute_roundtrips_and_preserves_width(
        key in digest_strategy(),
        width in width_strategy(),
        seed in any::<u64>(),
    ) {
        let mut prg = PrgStream::new(&seed.to_be_bytes(), b"prop-permute");
        let x = prg.draw_bitstring(width);
        let y = permute(&key, width, &x, Direction::Forward).unwrap();
        prop_assert_eq!(y.width(), width);
        let back = permute(&key, width, &y, Direction::Inverse).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn xor_is_an_involution(width in width_strategy(), seed in any::<u64>()) {
        let mut prg = PrgStream::new(&seed.to_be_bytes(), b"prop-xor");
        let a = prg.draw_bitstring(width);
        let b = prg.draw_bitstring(width);
        prop_assert_eq!(a.xor(&b).unwrap().xor(&b).unwrap(), a);
    }

    #[test]
    fn hash_is_order_sensitive_and_framed(
        a in proptest::collection::vec(any::<u8>(), 0..64),
        b in proptest::collection::vec(any::<u8>(), 1..64),
    ) {
        // Moving one octet across the part boundary must change the digest.
        let joined = [a.clone(), b.clone()].concat();
        let split = hash(&[&a, &b]);
        let merged = hash(&[&joined]);
        prop_assert_ne!(split, merged);
        if a != b {
            prop_assert_ne!(hash(&[&a, &b]), hash(&[&b, &a]));
        }
    }

    #[test]
    fn solve_ring_closes_the_chain(
        key in digest_strategy(),
        width in width_strategy(),
        n in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut prg = PrgStream::new(&seed.to_be_bytes(), b"prop-solve");
        let idx = (seed % n as u64) as usize;
        let v = prg.draw_bitstring(width);
        let others: Vec<BitString> =
            (0..n - 1).map(|_| prg.draw_bitstring(width)).collect();
        let solved = solve_ring(&key, &v, &others, idx).unwrap();
        let mut full = others;
        full.insert(idx, solved);
        prop_assert_eq!(combine(&key, &v, &full).unwrap(), v);
    }

    #[test]
    fn fixed_width_hex_roundtrips(bytes in proptest::collection::vec(any::<u8>(), 1..48)) {
        let value = BigUint::from_bytes_be(&bytes);
        let hex = numtheory::uint_to_hex(&value, bytes.len());
        prop_assert_eq!(hex.len(), bytes.len() * 2);
        prop_assert_eq!(numtheory::uint_from_hex(&hex).unwrap(), value);
    }

    #[test]
    fn seconds_parse_display_roundtrip(num in -1_000_000i128..1_000_000, scale in 0u32..7) {
        use meshauth_core::timebase::Seconds;
        let s = Seconds::new(num, 10i128.pow(scale));
        let text = s.to_string();
        prop_assert_eq!(text.parse::<Seconds>().unwrap(), s);
    }
}
