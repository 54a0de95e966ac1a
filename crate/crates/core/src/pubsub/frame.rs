//! Datagram framing. All integers are big-endian.
//!
//! ```text
//! magic "SBUS" | version 0x01 | kind | session id (8) | sequence (4)
//! | topic length (1) | topic | body length (4) | body
//! ```

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SBUS";
pub const VERSION: u8 = 0x01;
/// Largest UDP payload over IPv4.
pub const MAX_DATAGRAM: usize = 65_507;
/// Frame bytes excluding topic and body.
pub const FIXED_HEADER_LEN: usize = 4 + 1 + 1 + 8 + 4 + 1 + 4;
pub const MAX_TOPIC_LEN: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data = 0x00,
    HsReq = 0x01,
    HsReply = 0x02,
    HsFinal = 0x03,
    BenchCtrl = 0x04,
}

impl FrameKind {
    pub const ALL: [FrameKind; 5] = [
        FrameKind::Data,
        FrameKind::HsReq,
        FrameKind::HsReply,
        FrameKind::HsFinal,
        FrameKind::BenchCtrl,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame too short")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame kind {0:#04x}")]
    BadKind(u8),
    #[error("topic is not valid UTF-8")]
    BadTopic,
    #[error("DATA frames need a non-empty topic")]
    EmptyTopic,
    #[error("topic of {0} bytes exceeds 255")]
    TopicTooLong(usize),
    #[error("body length field disagrees with datagram length")]
    LengthMismatch,
    #[error("frame of {0} bytes exceeds the datagram limit")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub session_id: u64,
    pub sequence: u32,
    pub topic: String,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn data(session_id: u64, sequence: u32, topic: &str, body: Vec<u8>) -> Self {
        Frame {
            kind: FrameKind::Data,
            session_id,
            sequence,
            topic: topic.to_owned(),
            body,
        }
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + self.topic.len() + self.body.len()
    }

    /// Everything from the magic through the topic. Used as AEAD associated
    /// data, so it binds kind, session id, sequence and topic to the body.
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN - 4 + self.topic.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.session_id.to_be_bytes());
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.push(self.topic.len() as u8);
        out.extend_from_slice(self.topic.as_bytes());
        out
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.topic.len() > MAX_TOPIC_LEN {
            return Err(FrameError::TopicTooLong(self.topic.len()));
        }
        if self.kind == FrameKind::Data && self.topic.is_empty() {
            return Err(FrameError::EmptyTopic);
        }
        if self.encoded_len() > MAX_DATAGRAM {
            return Err(FrameError::TooLarge(self.encoded_len()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        self.validate()?;
        let mut out = self.header_bytes();
        out.reserve(4 + self.body.len());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(FrameError::TooLarge(bytes.len()));
        }
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(FrameError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(FrameError::BadVersion(bytes[4]));
        }
        let kind = FrameKind::from_byte(bytes[5]).ok_or(FrameError::BadKind(bytes[5]))?;
        let session_id = u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes"));
        let sequence = u32::from_be_bytes(bytes[14..18].try_into().expect("4 bytes"));
        let topic_len = bytes[18] as usize;
        let topic_end = 19 + topic_len;
        let topic_bytes = bytes.get(19..topic_end).ok_or(FrameError::Truncated)?;
        let topic = std::str::from_utf8(topic_bytes)
            .map_err(|_| FrameError::BadTopic)?
            .to_owned();
        let len_bytes = bytes
            .get(topic_end..topic_end + 4)
            .ok_or(FrameError::Truncated)?;
        let body_len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let body = &bytes[topic_end + 4..];
        if body.len() != body_len {
            return Err(FrameError::LengthMismatch);
        }
        if kind == FrameKind::Data && topic.is_empty() {
            return Err(FrameError::EmptyTopic);
        }
        Ok(Frame {
            kind,
            session_id,
            sequence,
            topic,
            body: body.to_vec(),
        })
    }
}
