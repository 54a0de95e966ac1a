//! Cryptographic primitives shared by the handshake, session and tunnel code.
//!
//! Nothing in here touches the network or the filesystem. Everything is a pure
//! function of its inputs except [`Drbg`], which owns mutable generator state.

mod aead;
mod agreement;
mod drbg;
mod kdf;
mod modp;
mod signature;
mod suite;

pub use aead::{aead_open, aead_seal, gmac_tag, GCM_IV_LEN, GCM_TAG_LEN};
pub use agreement::AgreementKeypair;
pub use drbg::{Drbg, RESEED_INTERVAL};
pub use kdf::{hkdf, HKDF_MAX_OUTPUT};
pub use signature::{verify, verify_prehash, SigningKeypair, SIGNATURE_LEN, SIGNING_PUBLIC_LEN};
pub use suite::Suite;

#[cfg(test)]
pub(crate) use modp::TOY_GROUP;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("peer key-agreement public value is not a valid group element")]
    InvalidPeerPublic,
    #[error("private key encoding is invalid for the suite")]
    InvalidPrivateKey,
    #[error("signature is malformed")]
    MalformedSignature,
    #[error("signing public key is malformed")]
    MalformedPublicKey,
    #[error("requested output of {0} bytes exceeds the HKDF limit")]
    OutputTooLong(usize),
    #[error("AES key must be 16 or 32 bytes, got {0}")]
    InvalidKeyLength(usize),
    #[error("authentication failed")]
    AuthenticationFailure,
    #[error("unknown suite identifier {0:?}")]
    UnknownSuite(String),
}
