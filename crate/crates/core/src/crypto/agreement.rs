use num_bigint::BigUint;
use p256::elliptic_curve::sec1::ToEncodedPoint;

use super::modp::{ModpGroup, MODP_2048_256};
use super::{CryptoError, Drbg, Suite};

#[derive(Clone, Copy)]
enum Group {
    Modp(&'static ModpGroup),
    P256,
}

impl Group {
    fn of(suite: Suite) -> Group {
        match suite {
            Suite::DhModp2048_256 => Group::Modp(&MODP_2048_256),
            Suite::EcdhP256 => Group::P256,
        }
    }
}

/// A key-agreement keypair for one of the two suites.
///
/// Public values are encoded as fixed-length big-endian integers for the MODP
/// suite and as uncompressed SEC1 points for P-256.
#[derive(Clone)]
pub struct AgreementKeypair {
    suite: Suite,
    group: Group,
    private: Vec<u8>,
    public: Vec<u8>,
}

impl std::fmt::Debug for AgreementKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgreementKeypair")
            .field("suite", &self.suite)
            .field("public", &hex::encode(&self.public))
            .finish_non_exhaustive()
    }
}

impl AgreementKeypair {
    pub fn generate(suite: Suite, drbg: &mut Drbg) -> Self {
        match Group::of(suite) {
            Group::Modp(group) => {
                let x = group.random_exponent(drbg);
                Self::from_modp_exponent(suite, group, &x)
            }
            Group::P256 => {
                let secret = p256::SecretKey::random(drbg);
                Self::from_p256_secret(&secret)
            }
        }
    }

    /// Rebuilds a keypair from its encoded private scalar.
    pub fn from_private(suite: Suite, private: &[u8]) -> Result<Self, CryptoError> {
        match Group::of(suite) {
            Group::Modp(group) => {
                let x = BigUint::from_bytes_be(private);
                group.check_exponent(&x)?;
                Ok(Self::from_modp_exponent(suite, group, &x))
            }
            Group::P256 => {
                let secret = p256::SecretKey::from_slice(private)
                    .map_err(|_| CryptoError::InvalidPrivateKey)?;
                Ok(Self::from_p256_secret(&secret))
            }
        }
    }

    fn from_modp_exponent(suite: Suite, group: &'static ModpGroup, x: &BigUint) -> Self {
        let qlen = group.q.bits().div_ceil(8) as usize;
        let raw = x.to_bytes_be();
        let mut private = vec![0u8; qlen - raw.len()];
        private.extend_from_slice(&raw);
        AgreementKeypair {
            suite,
            group: Group::Modp(group),
            public: group.public_value(x),
            private,
        }
    }

    fn from_p256_secret(secret: &p256::SecretKey) -> Self {
        AgreementKeypair {
            suite: Suite::EcdhP256,
            group: Group::P256,
            private: secret.to_bytes().to_vec(),
            public: secret
                .public_key()
                .to_encoded_point(false)
                .as_bytes()
                .to_vec(),
        }
    }

    /// Keypair in the p = 23 test group, reported under the MODP suite.
    #[cfg(test)]
    pub(crate) fn toy(exponent: u8) -> Self {
        let group: &'static ModpGroup = &super::TOY_GROUP;
        Self::from_modp_exponent(Suite::DhModp2048_256, group, &BigUint::from(exponent))
    }

    pub fn suite(&self) -> Suite {
        self.suite
    }

    pub fn public(&self) -> &[u8] {
        &self.public
    }

    pub fn private_bytes(&self) -> &[u8] {
        &self.private
    }

    /// Computes the raw shared secret: the big-endian group element for MODP,
    /// the affine x-coordinate for P-256.
    pub fn shared(&self, peer_public: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match self.group {
            Group::Modp(group) => group.shared(&BigUint::from_bytes_be(&self.private), peer_public),
            Group::P256 => {
                // uncompressed points only, so every public value has one encoding
                if peer_public.len() != 65 || peer_public[0] != 0x04 {
                    return Err(CryptoError::InvalidPeerPublic);
                }
                let peer = p256::PublicKey::from_sec1_bytes(peer_public)
                    .map_err(|_| CryptoError::InvalidPeerPublic)?;
                let secret = p256::SecretKey::from_slice(&self.private)
                    .map_err(|_| CryptoError::InvalidPrivateKey)?;
                let shared =
                    p256::ecdh::diffie_hellman(secret.to_nonzero_scalar(), peer.as_affine());
                Ok(shared.raw_secret_bytes().to_vec())
            }
        }
    }
}
