use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Aes256Gcm, Nonce};

use super::CryptoError;

pub const GCM_IV_LEN: usize = 12;
pub const GCM_TAG_LEN: usize = 16;

enum Cipher {
    Aes128(Box<Aes128Gcm>),
    Aes256(Box<Aes256Gcm>),
}

impl Cipher {
    fn new(key: &[u8]) -> Result<Self, CryptoError> {
        match key.len() {
            16 => Ok(Cipher::Aes128(Box::new(
                Aes128Gcm::new_from_slice(key).expect("16-byte key"),
            ))),
            32 => Ok(Cipher::Aes256(Box::new(
                Aes256Gcm::new_from_slice(key).expect("32-byte key"),
            ))),
            n => Err(CryptoError::InvalidKeyLength(n)),
        }
    }
}

/// AES-GCM encryption with a 96-bit IV. Returns `ciphertext || tag`.
pub fn aead_seal(
    key: &[u8],
    iv: &[u8; GCM_IV_LEN],
    aad: &[u8],
    plaintext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let nonce = Nonce::from_slice(iv);
    let payload = Payload {
        msg: plaintext,
        aad,
    };
    let sealed = match Cipher::new(key)? {
        Cipher::Aes128(c) => c.encrypt(nonce, payload),
        Cipher::Aes256(c) => c.encrypt(nonce, payload),
    };
    sealed.map_err(|_| CryptoError::AuthenticationFailure)
}

/// Inverse of [`aead_seal`]. No plaintext is released unless the tag verifies.
pub fn aead_open(
    key: &[u8],
    iv: &[u8; GCM_IV_LEN],
    aad: &[u8],
    sealed: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < GCM_TAG_LEN {
        return Err(CryptoError::AuthenticationFailure);
    }
    let nonce = Nonce::from_slice(iv);
    let payload = Payload { msg: sealed, aad };
    let opened = match Cipher::new(key)? {
        Cipher::Aes128(c) => c.decrypt(nonce, payload),
        Cipher::Aes256(c) => c.decrypt(nonce, payload),
    };
    opened.map_err(|_| CryptoError::AuthenticationFailure)
}

/// AES-GMAC: the GCM tag over `data` as associated data with an empty plaintext.
pub fn gmac_tag(
    key: &[u8],
    iv: &[u8; GCM_IV_LEN],
    data: &[u8],
) -> Result<[u8; GCM_TAG_LEN], CryptoError> {
    let sealed = aead_seal(key, iv, data, &[])?;
    Ok(sealed
        .try_into()
        .expect("empty plaintext yields a bare tag"))
}
