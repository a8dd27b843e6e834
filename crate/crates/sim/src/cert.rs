//! Certificate authority with Schnorr-style signatures over a
//! discrete-log group. Backbone routers carry two certificates from the
//! same CA: one gates the access-layer join, the other the exchange with
//! the authentication server.

use meshauth_core::numtheory::{hash, int_to_fixed_bytes, mod_exp, GroupParams, PrgStream};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum CertPurpose {
    #[serde(rename = "network-join")]
    NetworkJoin,
    #[serde(rename = "as-auth")]
    AsAuth,
}

impl CertPurpose {
    fn label(&self) -> &'static [u8] {
        match self {
            CertPurpose::NetworkJoin => b"network-join",
            CertPurpose::AsAuth => b"as-auth",
        }
    }
}

/// CA-signed assertion that `subject` holds a given role credential.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: String,
    pub purpose: CertPurpose,
    pub challenge: String,
    pub response: String,
}

pub struct CertAuthority {
    params: GroupParams,
    x: BigUint,
    y: BigUint,
}

/// The verification half of the CA, distributed to every node.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CaPublic {
    pub params: GroupParams,
    pub y: BigUint,
}

impl CertAuthority {
    pub fn new(params: GroupParams, rng: &mut PrgStream) -> Self {
        let x = rng
            .draw_nonzero_below(params.q())
            .expect("group order exceeds 1");
        let y = mod_exp(params.g(), &x, params.p()).expect("validated modulus");
        CertAuthority { params, x, y }
    }

    pub fn public(&self) -> CaPublic {
        CaPublic {
            params: self.params.clone(),
            y: self.y.clone(),
        }
    }

    /// Issues a signature (e, s) with `e = H(g^k, subject, purpose, y)` and
    /// `s = k - x*e mod q`.
    pub fn issue(&self, subject: &str, purpose: CertPurpose, rng: &mut PrgStream) -> Certificate {
        let p = self.params.p();
        let q = self.params.q();
        let w = self.params.byte_len();
        let k = rng.draw_nonzero_below(q).expect("group order exceeds 1");
        let commit = mod_exp(self.params.g(), &k, p).expect("validated modulus");
        let e = challenge_scalar(&commit, subject, purpose, &self.y, q, w);
        let s = (&k + q - (&self.x * &e) % q) % q;
        Certificate {
            subject: subject.to_owned(),
            purpose,
            challenge: meshauth_core::numtheory::uint_to_hex(&e, self.params.byte_len()),
            response: meshauth_core::numtheory::uint_to_hex(&s, self.params.byte_len()),
        }
    }
}

fn challenge_scalar(
    commit: &BigUint,
    subject: &str,
    purpose: CertPurpose,
    y: &BigUint,
    q: &BigUint,
    w: usize,
) -> BigUint {
    hash(&[
        &int_to_fixed_bytes(commit, w),
        subject.as_bytes(),
        purpose.label(),
        &int_to_fixed_bytes(y, w),
    ])
    .to_uint_mod(q)
}

/// Checks `e == H(g^s * y^e, subject, purpose, y)`.
pub fn verify_certificate(cert: &Certificate, ca: &CaPublic) -> bool {
    let p = ca.params.p();
    let q = ca.params.q();
    let w = ca.params.byte_len();
    let Some(e) = meshauth_core::numtheory::uint_from_hex(&cert.challenge) else {
        return false;
    };
    let Some(s) = meshauth_core::numtheory::uint_from_hex(&cert.response) else {
        return false;
    };
    if &e >= q || &s >= q {
        return false;
    }
    let g_s = mod_exp(ca.params.g(), &s, p).expect("validated modulus");
    let y_e = mod_exp(&ca.y, &e, p).expect("validated modulus");
    let commit = g_s * y_e % p;
    challenge_scalar(&commit, &cert.subject, cert.purpose, &ca.y, q, w) == e
}

/// Flips the response scalar; used by fault injection.
pub fn corrupt(cert: &mut Certificate) {
    let s = meshauth_core::numtheory::uint_from_hex(&cert.response).unwrap_or_default();
    let w = cert.response.len() / 2;
    cert.response = meshauth_core::numtheory::uint_to_hex(&(s ^ BigUint::from(1u32)), w);
}
