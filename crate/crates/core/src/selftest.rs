//! Invariant suites runnable outside the test harness.
//!
//! Mirrors the properties the unit tests pin down, packaged so the CLI can
//! run them as a deployment gate and validate parameter files from disk.

use crate::anonake::{
    client_round1, client_round3, server_round2, ReplayCache, ServerKeyMaterial, ServerReject,
};
use crate::keysched::{correction_factor, current_key_index, remaining_validity, KeyList};
use crate::numtheory::{
    gen_group_params, hash, mod_exp, permute, BitString, Direction, GroupParams, GroupParamsFile,
    PrgStream,
};
use crate::ringsig::{
    combine, ring_sign, ring_verify, solve_ring, trapdoor_eval, trapdoor_invert, UserKeyMaterial,
    UserPublicKey,
};
use crate::timebase::Seconds;
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(
    results: &mut Vec<CheckResult>,
    name: &'static str,
    body: impl FnOnce() -> Result<String, String>,
) {
    let (passed, detail) = match body() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    results.push(CheckResult {
        name,
        passed,
        detail,
    });
}

fn make_users(bit_len: u32, n: usize, seed: &[u8]) -> Vec<UserKeyMaterial> {
    (0..n)
        .map(|i| {
            let gseed = hash(&[seed, &[i as u8], &bit_len.to_be_bytes()]);
            let params = gen_group_params(bit_len, gseed.as_bytes()).expect("bit_len >= 16");
            let mut rng = PrgStream::new(gseed.as_bytes(), b"user-key");
            UserKeyMaterial::generate(format!("user-{i}"), params, &mut rng)
                .expect("generated keys are valid")
        })
        .collect()
}

/// Runs every suite; all randomness derives from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let seed = seed.to_be_bytes();
    let mut out = Vec::new();

    check(&mut out, "group-validity", || {
        for bit_len in [16u32, 32, 64] {
            let gp = gen_group_params(bit_len, &[&seed[..], &bit_len.to_be_bytes()].concat())
                .map_err(|e| e.to_string())?;
            gp.validate().map_err(|e| format!("{bit_len}-bit: {e}"))?;
        }
        Ok("generated 16/32/64-bit groups all validate".into())
    });

    check(&mut out, "modexp-oracle", || {
        fn oracle(mut base: u128, mut exp: u64, m: u128) -> u128 {
            let mut acc = 1u128 % m;
            base %= m;
            while exp > 0 {
                if exp & 1 == 1 {
                    acc = acc * base % m;
                }
                base = base * base % m;
                exp >>= 1;
            }
            acc
        }
        let mut prg = PrgStream::new(&seed, b"selftest-modexp");
        for i in 0..1000 {
            let (b, e, m) = (prg.next_u64(), prg.next_u64(), prg.next_u64().max(2));
            let got = mod_exp(&BigUint::from(b), &BigUint::from(e), &BigUint::from(m))
                .map_err(|e| e.to_string())?;
            if got != BigUint::from(oracle(b as u128, e, m as u128)) {
                return Err(format!("disagreement at case {i}"));
            }
        }
        Ok("1000 random triples agree with square-and-multiply".into())
    });

    check(&mut out, "permutation-bijectivity", || {
        let key = hash(&[&seed]);
        let mut seen = [false; 256];
        for v in 0u32..256 {
            let x = BitString::new(8, v.into()).expect("fits");
            let y = permute(&key, 8, &x, Direction::Forward).map_err(|e| e.to_string())?;
            let idx: u32 = y.value().try_into().expect("width 8");
            if seen[idx as usize] {
                return Err(format!("collision at {v}"));
            }
            seen[idx as usize] = true;
        }
        Ok("width-8 permutation hits all 256 outputs".into())
    });

    check(&mut out, "permutation-roundtrip", || {
        let mut prg = PrgStream::new(&seed, b"selftest-feistel");
        for width in [8u32, 16, 32, 64, 128, 256] {
            for i in 0..200 {
                let key = hash(&[&seed, &[i as u8]]);
                let x = prg.draw_bitstring(width);
                let y = permute(&key, width, &x, Direction::Forward).map_err(|e| e.to_string())?;
                let back = permute(&key, width, &y, Direction::Inverse).map_err(|e| e.to_string())?;
                if back != x {
                    return Err(format!("roundtrip failed at width {width}"));
                }
            }
        }
        Ok("forward/inverse agree on 1200 samples across widths".into())
    });

    check(&mut out, "prg-uniformity", || {
        let mut prg = PrgStream::new(&seed, b"selftest-prg");
        let n = 10_000usize;
        let k = 11u64;
        let mut counts = [0usize; 11];
        for _ in 0..n {
            counts[prg.draw_range(0, k).map_err(|e| e.to_string())? as usize] += 1;
        }
        let p = 1.0 / k as f64;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            if (c as f64 - mean).abs() >= 5.0 * sigma {
                return Err(format!("residue {i} off by more than 5 sigma"));
            }
        }
        Ok("draws over [0,11) uniform within 5 sigma".into())
    });

    check(&mut out, "trapdoor-roundtrip", || {
        for bit_len in [16u32, 32, 64] {
            let users = make_users(bit_len, 1, &seed);
            let member = &users[0];
            let mut rng = PrgStream::new(&seed, b"selftest-trapdoor");
            for _ in 0..200 {
                let y = rng
                    .draw_nonzero_below(member.params().p())
                    .map_err(|e| e.to_string())?;
                let pre = trapdoor_invert(member, &y, &mut rng).map_err(|e| e.to_string())?;
                let back = trapdoor_eval(member.public(), &pre).map_err(|e| e.to_string())?;
                if back != y {
                    return Err(format!("eval(invert(y)) != y at {bit_len} bits"));
                }
            }
        }
        Ok("eval after invert is the identity, 600 targets".into())
    });

    check(&mut out, "ring-equation-uniqueness", || {
        let mut rng = PrgStream::new(&seed, b"selftest-unique");
        for trial in 0u8..20 {
            let k = hash(&[&seed, &[trial]]);
            let n = 1 + (trial % 3) as usize;
            let i = trial as usize % n;
            let v = rng.draw_bitstring(8);
            let others: Vec<BitString> = (0..n - 1).map(|_| rng.draw_bitstring(8)).collect();
            let solved = solve_ring(&k, &v, &others, i).map_err(|e| e.to_string())?;
            let mut hits = 0;
            for cand in 0u32..256 {
                let mut full = others.clone();
                full.insert(i, BitString::new(8, cand.into()).expect("fits"));
                if combine(&k, &v, &full).map_err(|e| e.to_string())? == v {
                    hits += 1;
                }
            }
            if hits != 1 {
                return Err(format!("{hits} solutions at trial {trial}"));
            }
            let mut full = others;
            full.insert(i, solved);
            if combine(&k, &v, &full).map_err(|e| e.to_string())? != v {
                return Err("solved slot does not close the chain".into());
            }
        }
        Ok("exhaustive width-8 search finds exactly the solved slot".into())
    });

    check(&mut out, "ring-sign-verify", || {
        let mut rng = PrgStream::new(&seed, b"selftest-ring");
        for trial in 0u32..30 {
            let n = 1 + (trial % 4) as usize;
            let users = make_users(32, n, &[&seed[..], &trial.to_be_bytes()].concat());
            let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
            let i = (trial as usize) % n;
            let k = hash(&[&seed, &trial.to_be_bytes()]);
            let (bv, br) = (BigUint::from(trial + 1), BigUint::from(trial + 2));
            let sig = ring_sign(&ring, i, &users[i], &k, &bv, &br, &mut rng)
                .map_err(|e| e.to_string())?;
            ring_verify(&sig, &k).map_err(|e| format!("honest signature rejected: {e}"))?;
            let mut bad = sig.clone();
            bad.pairs[0].alpha += 1u32;
            if ring_verify(&bad, &k).is_ok() {
                return Err("tampered signature accepted".into());
            }
        }
        Ok("30 sign/verify rounds complete, tampers rejected".into())
    });

    check(&mut out, "ake-honest-and-tampered", || {
        let users = make_users(32, 3, &seed);
        let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
        let sp = gen_group_params(32, &[&seed[..], b"server"].concat()).expect("valid bit_len");
        let mut srng = PrgStream::new(&seed, b"selftest-server-key");
        let server = ServerKeyMaterial::generate(sp, &mut srng).map_err(|e| e.to_string())?;
        let mut replay = ReplayCache::new(64);
        for run in 0u32..20 {
            let mut crng = PrgStream::new(&[&seed[..], &run.to_be_bytes()].concat(), b"c");
            let mut s2rng = PrgStream::new(&[&seed[..], &run.to_be_bytes()].concat(), b"s");
            let (sig, l, mut state) =
                client_round1(&ring, 0, &users[0], server.public(), &mut crng)
                    .map_err(|e| e.to_string())?;
            let accept = server_round2(&sig, &l, &server, &mut s2rng, &mut replay)
                .map_err(|e| format!("honest transcript rejected: {e}"))?;
            let key = client_round3(
                &mut state,
                server.public(),
                &accept.reply.h,
                &accept.reply.y,
                &accept.reply.l,
            )
            .map_err(|e| e.to_string())?;
            if key.k_s != accept.k_s {
                return Err("session keys disagree".into());
            }
            // Replay of the same transcript must bounce.
            match server_round2(&sig, &l, &server, &mut s2rng, &mut replay) {
                Err(ServerReject::Replay) => {}
                other => return Err(format!("replay not rejected: {other:?}")),
            }
        }
        Ok("20 exchanges agree; replays rejected".into())
    });

    check(&mut out, "validity-arithmetic-oracle", || {
        fn oracle(t: Seconds, list: &KeyList) -> (u64, Seconds) {
            let mut idx = 1u64;
            let mut boundary = list.ts_kl() + list.timeout();
            while t >= boundary {
                idx += 1;
                boundary += list.timeout();
            }
            (idx, boundary - t)
        }
        let mut prg = PrgStream::new(&seed, b"selftest-sched");
        for _ in 0..1000 {
            let ts = Seconds::new(prg.draw_range(0, 1000).map_err(|e| e.to_string())? as i128, 10);
            let timeout =
                Seconds::new(prg.draw_range(1, 100).map_err(|e| e.to_string())? as i128, 2);
            let keys = (0u64..4).map(|i| i.to_be_bytes().to_vec()).collect();
            let list = KeyList::new(keys, ts, timeout, 1).map_err(|e| e.to_string())?;
            let t = ts
                + Seconds::new(
                    prg.draw_range(0, 10_000).map_err(|e| e.to_string())? as i128,
                    100,
                );
            let (want_idx, want_rem) = oracle(t, &list);
            if current_key_index(t, &list).map_err(|e| e.to_string())? != want_idx {
                return Err("key index disagrees with slot walk".into());
            }
            if remaining_validity(t, &list).map_err(|e| e.to_string())? != want_rem {
                return Err("remaining validity disagrees with slot walk".into());
            }
        }
        let timeout = Seconds::from_int(60);
        if correction_factor(Seconds::from_int(150), timeout) != 2
            || correction_factor(Seconds::from_int(30), timeout) != 0
        {
            return Err("correction factor fixtures broken".into());
        }
        Ok("1000 instances match the slot-walking oracle".into())
    });

    out
}

/// Key-pair file: a group plus one exponent pair over it.
#[derive(Serialize, Deserialize)]
pub struct KeyPairFile {
    pub group: GroupParamsFile,
    pub owner: String,
    pub x: String,
    pub y: String,
}

/// Validates a JSON parameter or key-pair file, returning a description of
/// what was checked.
pub fn validate_file(json: &str) -> Result<String, String> {
    if let Ok(kp) = serde_json::from_str::<KeyPairFile>(json) {
        let params: GroupParams = kp.group.into_params()?;
        let x = crate::numtheory::uint_from_hex(&kp.x).ok_or("field x: bad hex")?;
        let y = crate::numtheory::uint_from_hex(&kp.y).ok_or("field y: bad hex")?;
        let material =
            UserKeyMaterial::from_secret(kp.owner, params, x).map_err(|e| e.to_string())?;
        if material.public().y != y {
            return Err("stored y does not match g^x mod p".into());
        }
        return Ok(format!(
            "key pair over {}-bit group: all invariants hold",
            material.params().bit_len()
        ));
    }
    let file: GroupParamsFile =
        serde_json::from_str(json).map_err(|e| format!("not a parameter file: {e}"))?;
    let params = file.into_params()?;
    Ok(format!(
        "{}-bit group parameters: all invariants hold",
        params.bit_len()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let results = run_all(7);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert!(results.len() >= 9);
    }

    #[test]
    fn suite_is_deterministic() {
        let a: Vec<String> = run_all(3).iter().map(|r| r.detail.clone()).collect();
        let b: Vec<String> = run_all(3).iter().map(|r| r.detail.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn validates_parameter_and_key_files() {
        let gp = gen_group_params(32, b"file-check").unwrap();
        let text = serde_json::to_string(&GroupParamsFile::from(&gp)).unwrap();
        assert!(validate_file(&text).unwrap().contains("32-bit"));

        let mut rng = PrgStream::new(b"file-check", b"key");
        let km = UserKeyMaterial::generate("owner", gp.clone(), &mut rng).unwrap();
        let w = gp.byte_len();
        let kp = KeyPairFile {
            group: GroupParamsFile::from(&gp),
            owner: "owner".into(),
            x: crate::numtheory::uint_to_hex(km.secret_exponent(), w),
            y: crate::numtheory::uint_to_hex(&km.public().y, w),
        };
        let text = serde_json::to_string(&kp).unwrap();
        assert!(validate_file(&text).unwrap().contains("key pair"));

        // Corrupted y must fail.
        let mut bad = serde_json::from_str::<KeyPairFile>(&text).unwrap();
        bad.y = "00000003".into();
        let bad_text = serde_json::to_string(&bad).unwrap();
        assert!(validate_file(&bad_text).is_err());

        assert!(validate_file("{}").is_err());
        assert!(validate_file("not json").is_err());
    }
}
