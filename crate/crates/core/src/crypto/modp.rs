//! Finite-field Diffie-Hellman groups.

use std::sync::LazyLock;

use num_bigint::BigUint;
use num_traits::{One, Zero};

use super::{CryptoError, Drbg};

/// A prime-order subgroup of the multiplicative group modulo `p`.
pub(crate) struct ModpGroup {
    pub p: BigUint,
    pub g: BigUint,
    /// Order of `g`.
    pub q: BigUint,
    /// Encoded length of group elements in bytes.
    pub element_len: usize,
}

impl ModpGroup {
    fn from_hex(p: &str, g: &str, q: &str) -> Self {
        let parse = |s: &str| {
            let digits: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            BigUint::parse_bytes(digits.as_bytes(), 16).expect("valid group constant")
        };
        let p = parse(p);
        let element_len = p.bits().div_ceil(8) as usize;
        ModpGroup {
            p,
            g: parse(g),
            q: parse(q),
            element_len,
        }
    }

    /// Draws a private exponent uniformly from `[1, q-1]` by rejection sampling.
    pub fn random_exponent(&self, drbg: &mut Drbg) -> BigUint {
        let len = self.q.bits().div_ceil(8) as usize;
        loop {
            let x = BigUint::from_bytes_be(&drbg.generate(len));
            if !x.is_zero() && x < self.q {
                return x;
            }
        }
    }

    pub fn check_exponent(&self, x: &BigUint) -> Result<(), CryptoError> {
        if x.is_zero() || x >= &self.q {
            return Err(CryptoError::InvalidPrivateKey);
        }
        Ok(())
    }

    pub fn public_value(&self, x: &BigUint) -> Vec<u8> {
        self.encode(&self.g.modpow(x, &self.p))
    }

    /// Rejects values outside `[2, p-2]` and values outside the order-`q` subgroup.
    pub fn decode_peer(&self, bytes: &[u8]) -> Result<BigUint, CryptoError> {
        if bytes.len() != self.element_len {
            return Err(CryptoError::InvalidPeerPublic);
        }
        let y = BigUint::from_bytes_be(bytes);
        let two = BigUint::from(2u8);
        if y < two || y > &self.p - &two {
            return Err(CryptoError::InvalidPeerPublic);
        }
        if !self.q.is_zero() && !y.modpow(&self.q, &self.p).is_one() {
            return Err(CryptoError::InvalidPeerPublic);
        }
        Ok(y)
    }

    pub fn shared(&self, x: &BigUint, peer: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let y = self.decode_peer(peer)?;
        let z = y.modpow(x, &self.p);
        if z.is_one() {
            return Err(CryptoError::InvalidPeerPublic);
        }
        Ok(self.encode(&z))
    }

    pub fn encode(&self, v: &BigUint) -> Vec<u8> {
        let raw = v.to_bytes_be();
        let mut out = vec![0u8; self.element_len - raw.len()];
        out.extend_from_slice(&raw);
        out
    }
}

/// RFC 5114 section 2.3: 2048-bit MODP group with 256-bit prime order subgroup.
pub(crate) static MODP_2048_256: LazyLock<ModpGroup> = LazyLock::new(|| {
    ModpGroup::from_hex(
        "87A8E61D B4B6663C FFBBD19C 65195999 8CEEF608 660DD0F2 5D2CEED4 435E3B00
         E00DF8F1 D61957D4 FAF7DF45 61B2AA30 16C3D911 34096FAA 3BF4296D 830E9A7C
         209E0C64 97517ABD 5A8A9D30 6BCF67ED 91F9E672 5B4758C0 22E0B1EF 4275BF7B
         6C5BFC11 D45F9088 B941F54E B1E59BB8 BC39A0BF 12307F5C 4FDB70C5 81B23F76
         B63ACAE1 CAA6B790 2D525267 35488A0E F13C6D9A 51BFA4AB 3AD83477 96524D8E
         F6A167B5 A41825D9 67E144E5 14056425 1CCACB83 E6B486F6 B3CA3F79 71506026
         C0B857F6 89962856 DED4010A BD0BE621 C3A3960A 54E710C3 75F26375 D7014103
         A4B54330 C198AF12 6116D227 6E11715F 693877FA D7EF09CA DB094AE9 1E1A1597",
        "3FB32C9B 73134D0B 2E775066 60EDBD48 4CA7B18F 21EF2054 07F4793A 1A0BA125
         10DBC150 77BE463F FF4FED4A AC0BB555 BE3A6C1B 0C6B47B1 BC3773BF 7E8C6F62
         901228F8 C28CBB18 A55AE313 41000A65 0196F931 C77A57F2 DDF463E5 E9EC144B
         777DE62A AAB8A862 8AC376D2 82D6ED38 64E67982 428EBC83 1D14348F 6F2F9193
         B5045AF2 767164E1 DFC967C1 FB3F2E55 A4BD1BFF E83B9C80 D052B985 D182EA0A
         DB2A3B73 13D3FE14 C8484B1E 052588B9 B7D2BBD2 DF016199 ECD06E15 57CD0915
         B3353BBB 64E0EC37 7FD02837 0DF92B52 C7891428 CDC67EB6 184B523D 1DB246C3
         2F630784 90F00EF8 D647D148 D4795451 5E2327CF EF98C582 664B4C0F 6CC41659",
        "8CF83642 A709A097 B4479976 40129DA2 99B1A47D 1EB3750B A308B0FE 64F5FBD3",
    )
});

/// p = 23, g = 5. `g` generates the whole group, so its order is p - 1 = 22.
#[cfg(test)]
pub(crate) static TOY_GROUP: LazyLock<ModpGroup> =
    LazyLock::new(|| ModpGroup::from_hex("17", "5", "16"));
