//! Schnorr proof of knowledge of the noise seed, made non-interactive by
//! hashing the commitment together with the digests of the noised and clean
//! parameters.
//!
//! Prover: `h_s = g^s`, `t_k = g^k`, `c_s = H(t_k || H(θ̃) || H(θ)) mod q`,
//! `r_s = k + c_s·s mod q`. Verifier: `g^{r_s} = t_k · h_s^{c_s} (mod p)` and
//! `c_s` equals the recomputed challenge.
//!
//! Challenge input is the minimal big-endian encoding of `t_k` followed by
//! the two 32-byte digests; the SHA-256 output is read big-endian and
//! reduced mod `q`.
//!
//! The proof binds the seed to both digests but says nothing about the noise
//! scale that was derived from it.

use alloc::vec::Vec;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{ModelParams, ParamDigest};

/// Subgroup of prime order `q` in `Z_p^*`, generated by `g`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    q: BigUint,
    g: BigUint,
}

// 2048-bit p with a 256-bit q. Generated by taking q as the first probable
// prime from the SHA-256 counter stream labeled "ztfed/schnorr-group/2048-256"
// and then the first p = 2kq + 1 of 2048 bits from the same stream; g = 2^((p-1)/q).
const P_2048: &str = "bfaf1e766d51c673a0bdb5954d748326f7fe370e7b9f7a25f66102726b2dce114b9a4e10aa160c05eb6c3ffeefd40ce9c1c103498353783a5a9a962bee4f62164e2ffc17b97b83cdfe15a04fbc18c7d2e33cd8975fda6dbb9bc272aefa6c968c201bdeee12bbaee90521a02857bb8d64c9a1abbc8ae82f218e944cfce5149ee1c35871216d5a49ccc0d23f0ef8ef9d8e388f7d92a281e650b1b2a5138368fdfa17cadf4db85a1abf87f379d58dedaac95544db9f754251ff0b9e0a04848dcdc19485739abcd77f87798ee60f34c0ab3fee0a23c77c809014576fbd2024cb358e00c440eaf5aed1526e9544d0cccafe667bd9c58751412d685752dd3bc5514e2f";
const Q_256: &str = "a24583079fc02fe56f2aaafd393870f1f0fa2dbf809f1dce2a84ba29dae6e81d";
const G_2048: &str = "658eea72817a07754dfcf6154fc4dbf8b5289cbf3bb1621dfdf8bc012a8895ab26a22be77eb852d559370cd3e13cd09504f5069f5fe3753246009e2bcceecd2198b576d60f2ea34a28a0ff9da9d6f992fafd19b01acfb5715a9ccbafa3223c5bab8091a4318fe75fc2d15e503fa0184c10a76497eb2742f10176dbcee84e45f9148062fb5af80a298bc510a04d80b45260d3f52bdc41ab8c6f96b25155496eb428c0ff417b16a25a8209e4330d7a441ca985aaaad718b1ebf844d222a5526eba282c107f35e53ab780456c759b87562d7ba32ccf81c3bf9fcf955a1cd43e529fbd9d0c1f305fd9658f1ebbb79f8358f6b7013eed22524bc7bc4f3990534754e7";

// Same construction, label "ztfed/schnorr-group/512-160". Test-speed only.
const P_512: &str = "8bb9242cc7afec07b2e8455c15d10e3dbf081b743228df6bbf5865ca7703c1a81ede0f74d9c84548b413f8810a75e759b1514c9e973b5b75d80b3429d0187aaf";
const Q_160: &str = "d43617e528a6dcfa18c639aa5af1eb5b0094ab17";
const G_512: &str = "6bf2e80c2360f616350752ebed541cb1be0b04295b5e5c68dc0b5cdfb9bd57b3969b67a736864f66dab9fa858aedb30195a9db3a4d8c4a492e070738b0473296";

fn hex(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid hex constant")
}

impl GroupParams {
    /// Checks `q | p - 1`, `1 < g < p` and `g^q = 1 (mod p)`.
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self> {
        let one = BigUint::one();
        if p <= BigUint::from(3u8) || q <= one {
            return Err(Error::Nizk("modulus and order must exceed trivial sizes"));
        }
        if !(&p - &one).is_multiple_of(&q) {
            return Err(Error::Nizk("q does not divide p - 1"));
        }
        if g <= one || g >= p {
            return Err(Error::Nizk("generator out of range"));
        }
        if !mod_pow(&g, &q, &p, q.bits()).is_one() {
            return Err(Error::Nizk("generator does not have order q"));
        }
        Ok(Self { p, q, g })
    }

    /// Default production group: 2048-bit modulus, 256-bit prime order.
    pub fn schnorr_2048() -> Self {
        Self { p: hex(P_2048), q: hex(Q_256), g: hex(G_2048) }
    }

    /// 512-bit modulus, 160-bit order, for fast tests.
    pub fn test_512() -> Self {
        Self { p: hex(P_512), q: hex(Q_160), g: hex(G_512) }
    }

    /// `(p, q, g) = (23, 11, 2)`, small enough for hand checks.
    pub fn toy() -> Self {
        Self { p: BigUint::from(23u8), q: BigUint::from(11u8), g: BigUint::from(2u8) }
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    /// Miller–Rabin on both `p` and `q` with `rounds` hash-derived bases.
    pub fn primes_are_probable(&self, rounds: usize) -> bool {
        is_probable_prime(&self.p, rounds) && is_probable_prime(&self.q, rounds)
    }

    /// Uniform draw from `[1, q-1]` by rejection sampling.
    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        let bits = self.q.bits();
        let nbytes = bits.div_ceil(8) as usize;
        let excess = (nbytes as u64 * 8 - bits) as u32;
        let mut buf = alloc::vec![0u8; nbytes];
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= 0xffu8 >> excess;
            let x = BigUint::from_bytes_be(&buf);
            if !x.is_zero() && x < self.q {
                return x;
            }
        }
    }
}

/// Square-and-multiply with a fixed operation pattern: every one of the
/// `exp_bits` iterations squares and multiplies, and the product is kept or
/// discarded by the exponent bit.
pub fn mod_pow(base: &BigUint, exp: &BigUint, modulus: &BigUint, exp_bits: u64) -> BigUint {
    let bits = exp_bits.max(exp.bits());
    let base = base % modulus;
    let mut acc = BigUint::one() % modulus;
    for i in (0..bits).rev() {
        acc = (&acc * &acc) % modulus;
        let with_base = (&acc * &base) % modulus;
        if exp.bit(i) {
            acc = with_base;
        }
    }
    acc
}

fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    let two = BigUint::from(2u8);
    if *n < two {
        return false;
    }
    for small in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let s = BigUint::from(small);
        if *n == s {
            return true;
        }
        if (n % &s).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let mut d = n_minus_1.clone();
    let mut r = 0u32;
    while d.is_even() {
        d >>= 1;
        r += 1;
    }
    let n_minus_3 = n - 3u32;
    'witness: for round in 0..rounds {
        let h = Sha256::new().chain_update(n.to_bytes_be()).chain_update((round as u64).to_be_bytes()).finalize();
        let a = BigUint::from_bytes_be(&h) % &n_minus_3 + &two;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..r {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Noise seed `s` (the witness) and a fresh nonce `k`.
#[derive(Clone, PartialEq, Eq)]
pub struct NizkSecret {
    pub seed: BigUint,
    pub nonce: BigUint,
}

impl core::fmt::Debug for NizkSecret {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("NizkSecret { .. }")
    }
}

impl NizkSecret {
    pub fn random<R: RngCore + ?Sized>(grp: &GroupParams, rng: &mut R) -> Self {
        let seed = grp.random_scalar(rng);
        let nonce = grp.random_scalar(rng);
        Self { seed, nonce }
    }

    /// Seed bytes fed to the noise generator (minimal big-endian).
    pub fn seed_bytes(&self) -> Vec<u8> {
        self.seed.to_bytes_be()
    }

    fn check(&self, grp: &GroupParams) -> Result<()> {
        for (v, what) in [(&self.seed, "seed out of [1, q-1]"), (&self.nonce, "nonce out of [1, q-1]")] {
            if v.is_zero() || *v >= grp.q {
                return Err(Error::Nizk(what));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NizkProof {
    pub t_k: BigUint,
    pub r_s: BigUint,
    pub c_s: BigUint,
    pub h_s: BigUint,
    pub digest_noised: ParamDigest,
    pub digest_clean: ParamDigest,
}

pub fn challenge(t_k: &BigUint, digest_noised: &ParamDigest, digest_clean: &ParamDigest, q: &BigUint) -> BigUint {
    let h = Sha256::new()
        .chain_update(t_k.to_bytes_be())
        .chain_update(digest_noised.as_bytes())
        .chain_update(digest_clean.as_bytes())
        .finalize();
    BigUint::from_bytes_be(&h) % q
}

/// `(k + c·s) mod q`.
pub fn respond(nonce: &BigUint, challenge: &BigUint, seed: &BigUint, q: &BigUint) -> BigUint {
    (nonce + challenge * seed) % q
}

pub fn nizk_prove(secret: &NizkSecret, grp: &GroupParams, noised: &ModelParams, clean: &ModelParams) -> Result<NizkProof> {
    prove_digests(secret, grp, noised.digest(), clean.digest())
}

pub fn prove_digests(
    secret: &NizkSecret,
    grp: &GroupParams,
    digest_noised: ParamDigest,
    digest_clean: ParamDigest,
) -> Result<NizkProof> {
    secret.check(grp)?;
    let bits = grp.q.bits();
    let h_s = mod_pow(&grp.g, &secret.seed, &grp.p, bits);
    let t_k = mod_pow(&grp.g, &secret.nonce, &grp.p, bits);
    let c_s = challenge(&t_k, &digest_noised, &digest_clean, &grp.q);
    let r_s = respond(&secret.nonce, &c_s, &secret.seed, &grp.q);
    Ok(NizkProof { t_k, r_s, c_s, h_s, digest_noised, digest_clean })
}

/// All failures, including out-of-range fields, yield `false`.
pub fn nizk_verify(proof: &NizkProof, grp: &GroupParams) -> bool {
    let one = BigUint::one();
    let in_group = |x: &BigUint| *x >= one && *x < grp.p;
    if !in_group(&proof.t_k) || !in_group(&proof.h_s) || proof.r_s >= grp.q || proof.c_s >= grp.q {
        return false;
    }
    if challenge(&proof.t_k, &proof.digest_noised, &proof.digest_clean, &grp.q) != proof.c_s {
        return false;
    }
    let bits = grp.q.bits();
    let lhs = mod_pow(&grp.g, &proof.r_s, &grp.p, bits);
    let rhs = (&proof.t_k * mod_pow(&proof.h_s, &proof.c_s, &grp.p, bits)) % &grp.p;
    lhs == rhs
}

impl NizkProof {
    /// `len(u16 BE) || bytes` for `t_k, r_s, c_s, h_s`, then both digests.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        for v in [&self.t_k, &self.r_s, &self.c_s, &self.h_s] {
            let b = v.to_bytes_be();
            out.extend_from_slice(&(b.len() as u16).to_be_bytes());
            out.extend_from_slice(&b);
        }
        out.extend_from_slice(self.digest_noised.as_bytes());
        out.extend_from_slice(self.digest_clean.as_bytes());
        out
    }

    pub fn encoded_len(&self) -> usize {
        [&self.t_k, &self.r_s, &self.c_s, &self.h_s].iter().map(|v| 2 + v.to_bytes_be().len()).sum::<usize>() + 64
    }

    /// Decode one proof from the front of `buf`; returns it with the number
    /// of bytes consumed.
    pub fn from_bytes(buf: &[u8]) -> Result<(Self, usize)> {
        let mut pos = 0usize;
        let mut ints: [BigUint; 4] = Default::default();
        for slot in ints.iter_mut() {
            let len_bytes = buf.get(pos..pos + 2).ok_or(Error::Decode("truncated proof length"))?;
            let len = u16::from_be_bytes([len_bytes[0], len_bytes[1]]) as usize;
            pos += 2;
            let body = buf.get(pos..pos + len).ok_or(Error::Decode("truncated proof integer"))?;
            *slot = BigUint::from_bytes_be(body);
            pos += len;
        }
        let d = buf.get(pos..pos + 64).ok_or(Error::Decode("truncated proof digests"))?;
        let digest_noised = ParamDigest(d[..32].try_into().unwrap());
        let digest_clean = ParamDigest(d[32..].try_into().unwrap());
        pos += 64;
        let [t_k, r_s, c_s, h_s] = ints;
        Ok((Self { t_k, r_s, c_s, h_s, digest_noised, digest_clean }, pos))
    }
}
