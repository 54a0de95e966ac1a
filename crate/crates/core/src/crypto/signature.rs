use p256::ecdsa::signature::hazmat::PrehashVerifier;
use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};

use super::{CryptoError, Drbg};

/// Fixed-size `r || s` ECDSA P-256 signature length.
pub const SIGNATURE_LEN: usize = 64;
/// Uncompressed SEC1 point length.
pub const SIGNING_PUBLIC_LEN: usize = 65;

/// ECDSA P-256 / SHA-256 signing key. Nonces are derived per RFC 6979.
#[derive(Clone)]
pub struct SigningKeypair {
    key: SigningKey,
    public: Vec<u8>,
}

impl std::fmt::Debug for SigningKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKeypair")
            .field("public", &hex::encode(&self.public))
            .finish_non_exhaustive()
    }
}

impl SigningKeypair {
    pub fn generate(drbg: &mut Drbg) -> Self {
        Self::from_key(SigningKey::random(drbg))
    }

    pub fn from_private(bytes: &[u8]) -> Result<Self, CryptoError> {
        let key = SigningKey::from_slice(bytes).map_err(|_| CryptoError::InvalidPrivateKey)?;
        Ok(Self::from_key(key))
    }

    fn from_key(key: SigningKey) -> Self {
        let public = key
            .verifying_key()
            .to_encoded_point(false)
            .as_bytes()
            .to_vec();
        SigningKeypair { key, public }
    }

    pub fn public(&self) -> &[u8] {
        &self.public
    }

    pub fn private_bytes(&self) -> Vec<u8> {
        self.key.to_bytes().to_vec()
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        let sig: Signature = self.key.sign(message);
        sig.to_bytes().into()
    }
}

/// Verifies an `r || s` signature.
///
/// A structurally invalid signature or key is an error; a well-formed
/// signature that does not verify is `Ok(false)`.
pub fn verify(public: &[u8], message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
    let (key, sig) = parse(public, signature)?;
    Ok(key.verify(message, &sig).is_ok())
}

/// Like [`verify`] over a precomputed SHA-256 digest.
pub fn verify_prehash(
    public: &[u8],
    digest: &[u8; 32],
    signature: &[u8],
) -> Result<bool, CryptoError> {
    let (key, sig) = parse(public, signature)?;
    Ok(key.verify_prehash(digest, &sig).is_ok())
}

fn parse(public: &[u8], signature: &[u8]) -> Result<(VerifyingKey, Signature), CryptoError> {
    let key = VerifyingKey::from_sec1_bytes(public).map_err(|_| CryptoError::MalformedPublicKey)?;
    if signature.len() != SIGNATURE_LEN {
        return Err(CryptoError::MalformedSignature);
    }
    let sig = Signature::from_slice(signature).map_err(|_| CryptoError::MalformedSignature)?;
    Ok((key, sig))
}
