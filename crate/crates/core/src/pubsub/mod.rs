//! Best-effort topic publish/subscribe over unicast UDP.
//!
//! Each message is one datagram per peer. There is no retransmission of data;
//! only the handshake retries. Frames that fail to decode or authenticate are
//! counted in [`Stats`] and dropped.

mod frame;
mod participant;
mod profile;
pub mod tunnel;

pub use frame::{
    Frame, FrameError, FrameKind, FIXED_HEADER_LEN, MAGIC, MAX_DATAGRAM, MAX_TOPIC_LEN, VERSION,
};
pub use participant::{
    create_participant, Delivery, Outbox, Participant, ParticipantConfig, PeerInfo, SendReport,
    Stats, DEFAULT_HANDSHAKE_RETRIES, DEFAULT_HANDSHAKE_TIMEOUT,
};
pub use profile::SecurityProfile;
pub use tunnel::TunnelKeys;

use thiserror::Error;

use crate::handshake::HandshakeError;
use crate::session::SessionError;

/// Topics under this prefix are used internally.
pub const RESERVED_TOPIC_PREFIX: &str = "_sbus/";
/// Outer topic of every Tunnel datagram.
pub const TUNNEL_TOPIC: &str = "_sbus/tunnel";

#[derive(Debug, Error)]
pub enum PubsubError {
    #[error("cannot bind: {0}")]
    BindFailure(std::io::Error),
    #[error("profile configuration: {0}")]
    ProfileConfig(String),
    #[error("handshake failed: {0}")]
    HandshakeFailed(HandshakeError),
    #[error("handshake timed out")]
    Timeout,
    #[error("payload of {size} bytes exceeds the {max}-byte limit for this profile")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("no connected peer")]
    NotConnected,
    #[error("send counter exhausted; reconnect to start a new session")]
    CounterExhausted,
    #[error("topic {0:?} already has a subscriber")]
    DuplicateSubscription(String),
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SessionError> for PubsubError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::CounterExhausted => PubsubError::CounterExhausted,
            other => PubsubError::ProfileConfig(other.to_string()),
        }
    }
}

pub(crate) fn check_topic(topic: &str) -> Result<(), PubsubError> {
    if topic.is_empty() || topic.len() > MAX_TOPIC_LEN || topic.starts_with(RESERVED_TOPIC_PREFIX) {
        return Err(PubsubError::InvalidTopic(topic.to_owned()));
    }
    Ok(())
}
