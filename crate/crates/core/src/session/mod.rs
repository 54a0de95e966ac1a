//! Record protection after the handshake.
//!
//! Keys are expanded from the master secret with HKDF using direction labels,
//! so the initiator's send key is the responder's receive key. Each record uses
//! a 96-bit IV made of an 8-byte per-direction prefix and a 32-bit big-endian
//! message counter. The counter never wraps.

mod record;
mod replay;

pub use record::{ProtectedRecord, ReceiverTag, RECORD_FIXED_OVERHEAD};
pub use replay::{ReplayWindow, REPLAY_WINDOW};

use std::collections::BTreeMap;

use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::crypto::{self, CryptoError, GCM_IV_LEN, GCM_TAG_LEN};
use crate::handshake::{Role, MASTER_SECRET_LEN};

pub const SESSION_KEY_LEN: usize = 32;
pub const IV_PREFIX_LEN: usize = 8;
pub const RECEIVER_KEY_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("send counter exhausted; a new handshake is required")]
    CounterExhausted,
    #[error("no GMAC key for receiver {0:?}")]
    UnknownReceiver(String),
    #[error("record failed authentication")]
    AuthenticationFailure,
    #[error("record counter {0} already seen or outside the replay window")]
    ReplayDetected(u32),
    #[error("receiver-specific tag did not verify")]
    BadReceiverTag,
}

fn expand<const N: usize>(master: &[u8], info: &[u8]) -> [u8; N] {
    crypto::hkdf(master, &[], info, N)
        .expect("short outputs are within the HKDF limit")
        .try_into()
        .expect("requested N bytes")
}

/// Directional keys, IV state and replay state for one established session.
#[derive(Clone)]
pub struct SessionKeyMaterial {
    session_id: u64,
    send_key: [u8; SESSION_KEY_LEN],
    recv_key: [u8; SESSION_KEY_LEN],
    send_iv_prefix: [u8; IV_PREFIX_LEN],
    recv_iv_prefix: [u8; IV_PREFIX_LEN],
    send_counter: u32,
    replay: ReplayWindow,
    receiver_mac_keys: BTreeMap<String, [u8; RECEIVER_KEY_LEN]>,
}

impl std::fmt::Debug for SessionKeyMaterial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKeyMaterial")
            .field("session_id", &self.session_id)
            .field("send_counter", &self.send_counter)
            .field(
                "receivers",
                &self.receiver_mac_keys.keys().collect::<Vec<_>>(),
            )
            .finish_non_exhaustive()
    }
}

impl SessionKeyMaterial {
    /// Expands the master secret into session keys.
    ///
    /// | output            | info             | length |
    /// |-------------------|------------------|--------|
    /// | initiator → resp. | `i2r`            | 32     |
    /// | resp. → initiator | `r2i`            | 32     |
    /// | IV prefixes       | `iv:i2r`/`iv:r2i`| 8      |
    /// | session id        | `session-id`     | 8      |
    /// | receiver GMAC key | `gmac:` ‖ name   | 16     |
    ///
    /// All expansions use an empty salt.
    pub fn derive(master: &[u8; MASTER_SECRET_LEN], role: Role, receiver_names: &[&str]) -> Self {
        let i2r = expand::<SESSION_KEY_LEN>(master, b"i2r");
        let r2i = expand::<SESSION_KEY_LEN>(master, b"r2i");
        let iv_i2r = expand::<IV_PREFIX_LEN>(master, b"iv:i2r");
        let iv_r2i = expand::<IV_PREFIX_LEN>(master, b"iv:r2i");
        let (send_key, recv_key, send_iv_prefix, recv_iv_prefix) = match role {
            Role::Initiator => (i2r, r2i, iv_i2r, iv_r2i),
            Role::Responder => (r2i, i2r, iv_r2i, iv_i2r),
        };
        let receiver_mac_keys = receiver_names
            .iter()
            .map(|name| {
                let mut info = b"gmac:".to_vec();
                info.extend_from_slice(name.as_bytes());
                (
                    (*name).to_owned(),
                    expand::<RECEIVER_KEY_LEN>(master, &info),
                )
            })
            .collect();
        SessionKeyMaterial {
            session_id: session_id_from_master(master),
            send_key,
            recv_key,
            send_iv_prefix,
            recv_iv_prefix,
            send_counter: 0,
            replay: ReplayWindow::default(),
            receiver_mac_keys,
        }
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn send_key(&self) -> &[u8; SESSION_KEY_LEN] {
        &self.send_key
    }

    pub fn recv_key(&self) -> &[u8; SESSION_KEY_LEN] {
        &self.recv_key
    }

    pub fn send_iv_prefix(&self) -> &[u8; IV_PREFIX_LEN] {
        &self.send_iv_prefix
    }

    pub fn recv_iv_prefix(&self) -> &[u8; IV_PREFIX_LEN] {
        &self.recv_iv_prefix
    }

    pub fn receiver_mac_keys(&self) -> &BTreeMap<String, [u8; RECEIVER_KEY_LEN]> {
        &self.receiver_mac_keys
    }

    /// Counter the next sealed record will carry.
    pub fn send_counter(&self) -> u32 {
        self.send_counter
    }

    /// Moves the send counter, e.g. to exercise exhaustion without 2^32 seals.
    #[doc(hidden)]
    pub fn set_send_counter(&mut self, counter: u32) {
        self.send_counter = counter;
    }

    /// Returns the next IV and advances the counter. The all-ones counter is
    /// never used.
    pub fn next_iv(&mut self) -> Result<[u8; GCM_IV_LEN], SessionError> {
        if self.send_counter == u32::MAX {
            return Err(SessionError::CounterExhausted);
        }
        let iv = compose_iv(&self.send_iv_prefix, self.send_counter);
        self.send_counter += 1;
        Ok(iv)
    }

    /// Seals `payload` and, for each named receiver, appends a GMAC tag over
    /// the ciphertext under that receiver's key.
    pub fn protect(
        &mut self,
        aad: &[u8],
        payload: &[u8],
        receivers: &[&str],
    ) -> Result<ProtectedRecord, SessionError> {
        let keys = receivers
            .iter()
            .map(|name| {
                self.receiver_mac_keys
                    .get(*name)
                    .map(|k| (*name, *k))
                    .ok_or_else(|| SessionError::UnknownReceiver((*name).to_owned()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let iv = self.next_iv()?;
        let mut sealed = crypto::aead_seal(&self.send_key, &iv, aad, payload)
            .expect("session keys are 32 bytes");
        let tag: [u8; GCM_TAG_LEN] = sealed
            .split_off(payload.len())
            .try_into()
            .expect("16-byte tag");
        let receiver_tags = keys
            .into_iter()
            .map(|(name, key)| ReceiverTag {
                name: name.to_owned(),
                tag: crypto::gmac_tag(&key, &iv, &sealed).expect("receiver keys are 16 bytes"),
            })
            .collect();
        Ok(ProtectedRecord {
            iv,
            ciphertext: sealed,
            tag,
            receiver_tags,
        })
    }

    /// Authenticates and decrypts a record from the peer, then records its
    /// counter in the replay window.
    pub fn unprotect(
        &mut self,
        aad: &[u8],
        record: &ProtectedRecord,
        my_name: Option<&str>,
    ) -> Result<Vec<u8>, SessionError> {
        let counter = self.precheck(&record.iv)?;
        let payload = self.open_record(aad, record, my_name)?;
        self.replay.mark(counter);
        Ok(payload)
    }

    /// Like [`unprotect`](Self::unprotect) over the encoded record body.
    ///
    /// The body does not delimit the ciphertext, so every split point at which
    /// the trailing receiver-tag list parses is a candidate; the AEAD tag
    /// decides which one is genuine.
    pub fn unprotect_encoded(
        &mut self,
        aad: &[u8],
        body: &[u8],
        my_name: Option<&str>,
    ) -> Result<Vec<u8>, SessionError> {
        const MAX_ATTEMPTS: usize = 8;
        let iv: [u8; GCM_IV_LEN] = body
            .get(..GCM_IV_LEN)
            .and_then(|b| b.try_into().ok())
            .ok_or(SessionError::AuthenticationFailure)?;
        let counter = self.precheck(&iv)?;
        let mut last = SessionError::AuthenticationFailure;
        for record in ProtectedRecord::decode_candidates(body).take(MAX_ATTEMPTS) {
            match self.open_record(aad, &record, my_name) {
                Ok(payload) => {
                    self.replay.mark(counter);
                    return Ok(payload);
                }
                Err(SessionError::AuthenticationFailure) => continue,
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn precheck(&self, iv: &[u8; GCM_IV_LEN]) -> Result<u32, SessionError> {
        if iv[..IV_PREFIX_LEN] != self.recv_iv_prefix {
            return Err(SessionError::AuthenticationFailure);
        }
        let counter = u32::from_be_bytes(iv[IV_PREFIX_LEN..].try_into().expect("4 bytes"));
        if !self.replay.is_fresh(counter) {
            return Err(SessionError::ReplayDetected(counter));
        }
        Ok(counter)
    }

    fn open_record(
        &self,
        aad: &[u8],
        record: &ProtectedRecord,
        my_name: Option<&str>,
    ) -> Result<Vec<u8>, SessionError> {
        let mut sealed = Vec::with_capacity(record.ciphertext.len() + GCM_TAG_LEN);
        sealed.extend_from_slice(&record.ciphertext);
        sealed.extend_from_slice(&record.tag);
        let payload =
            crypto::aead_open(&self.recv_key, &record.iv, aad, &sealed).map_err(|e| match e {
                CryptoError::AuthenticationFailure => SessionError::AuthenticationFailure,
                other => unreachable!("session keys are valid AES keys: {other}"),
            })?;
        if let Some(name) = my_name {
            let mine = record.receiver_tags.iter().find(|t| t.name == name);
            if let (Some(entry), Some(key)) = (mine, self.receiver_mac_keys.get(name)) {
                let expected = crypto::gmac_tag(key, &record.iv, &record.ciphertext)
                    .expect("receiver keys are 16 bytes");
                if !bool::from(expected.ct_eq(&entry.tag)) {
                    return Err(SessionError::BadReceiverTag);
                }
            }
        }
        Ok(payload)
    }
}

pub fn compose_iv(prefix: &[u8; IV_PREFIX_LEN], counter: u32) -> [u8; GCM_IV_LEN] {
    let mut iv = [0u8; GCM_IV_LEN];
    iv[..IV_PREFIX_LEN].copy_from_slice(prefix);
    iv[IV_PREFIX_LEN..].copy_from_slice(&counter.to_be_bytes());
    iv
}

/// Session identifier shared by both sides; never zero.
pub fn session_id_from_master(master: &[u8; MASTER_SECRET_LEN]) -> u64 {
    let id = u64::from_be_bytes(expand::<8>(master, b"session-id"));
    id.max(1)
}

/// Convenience wrapper matching the free-function style of the crypto module.
pub fn derive_session_keys(
    master: &[u8; MASTER_SECRET_LEN],
    role: Role,
    receiver_names: &[&str],
) -> SessionKeyMaterial {
    SessionKeyMaterial::derive(master, role, receiver_names)
}
