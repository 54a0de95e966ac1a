//! In-process stand-in for a site-to-site VPN: the whole inner frame is
//! encrypted with AES-128-CBC under a random IV and authenticated with
//! HMAC-SHA256 (encrypt-then-MAC).

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::crypto::Drbg;

type Aes128CbcEnc = cbc::Encryptor<aes::Aes128>;
type Aes128CbcDec = cbc::Decryptor<aes::Aes128>;
type HmacSha256 = Hmac<Sha256>;

pub const TUNNEL_IV_LEN: usize = 16;
pub const TUNNEL_MAC_LEN: usize = 32;
pub const TUNNEL_KEY_LEN: usize = 16;
pub const TUNNEL_MAC_KEY_LEN: usize = 32;

/// Pre-shared tunnel keys.
#[derive(Clone, PartialEq, Eq)]
pub struct TunnelKeys {
    pub cipher_key: [u8; TUNNEL_KEY_LEN],
    pub mac_key: [u8; TUNNEL_MAC_KEY_LEN],
}

impl std::fmt::Debug for TunnelKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TunnelKeys(..)")
    }
}

impl TunnelKeys {
    pub const ENCODED_LEN: usize = TUNNEL_KEY_LEN + TUNNEL_MAC_KEY_LEN;

    /// `cipher key (16) || mac key (32)`.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return None;
        }
        Some(TunnelKeys {
            cipher_key: bytes[..TUNNEL_KEY_LEN].try_into().ok()?,
            mac_key: bytes[TUNNEL_KEY_LEN..].try_into().ok()?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        [&self.cipher_key[..], &self.mac_key[..]].concat()
    }

    pub fn generate(drbg: &mut Drbg) -> Self {
        TunnelKeys {
            cipher_key: drbg.array(),
            mac_key: drbg.array(),
        }
    }
}

/// Ciphertext length for `plaintext_len` bytes under PKCS#7.
pub fn padded_len(plaintext_len: usize) -> usize {
    (plaintext_len / 16 + 1) * 16
}

fn mac(keys: &TunnelKeys, header: &[u8], iv_and_ct: &[u8]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(&keys.mac_key).expect("any key length");
    mac.update(header);
    mac.update(iv_and_ct);
    mac
}

/// Returns `iv || ciphertext || hmac(header || iv || ciphertext)`.
pub fn seal(keys: &TunnelKeys, header: &[u8], inner: &[u8], drbg: &mut Drbg) -> Vec<u8> {
    let iv: [u8; TUNNEL_IV_LEN] = drbg.array();
    let ct = Aes128CbcEnc::new(&keys.cipher_key.into(), &iv.into())
        .encrypt_padded_vec_mut::<Pkcs7>(inner);
    let mut out = Vec::with_capacity(TUNNEL_IV_LEN + ct.len() + TUNNEL_MAC_LEN);
    out.extend_from_slice(&iv);
    out.extend_from_slice(&ct);
    let tag = mac(keys, header, &out).finalize().into_bytes();
    out.extend_from_slice(&tag);
    out
}

/// Verifies the MAC before touching the ciphertext.
pub fn open(keys: &TunnelKeys, header: &[u8], body: &[u8]) -> Option<Vec<u8>> {
    if body.len() < TUNNEL_IV_LEN + 16 + TUNNEL_MAC_LEN {
        return None;
    }
    let (iv_and_ct, tag) = body.split_at(body.len() - TUNNEL_MAC_LEN);
    mac(keys, header, iv_and_ct).verify_slice(tag).ok()?;
    let (iv, ct) = iv_and_ct.split_at(TUNNEL_IV_LEN);
    if ct.len() % 16 != 0 {
        return None;
    }
    let iv: [u8; TUNNEL_IV_LEN] = iv.try_into().ok()?;
    Aes128CbcDec::new(&keys.cipher_key.into(), &iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(ct)
        .ok()
}
