use crate::identity::Certificate;
use crate::tlv::{TlvReader, TlvWriter};

use super::{FsMode, HandshakeError, NONCE_LEN};

mod tag {
    pub const KIND: u8 = 0x10;
    pub const MODE: u8 = 0x11;
    pub const CERT: u8 = 0x12;
    pub const AGREEMENT: u8 = 0x13;
    pub const NONCE1: u8 = 0x14;
    pub const NONCE2: u8 = 0x15;
    pub const SIGNATURE: u8 = 0x16;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Request = 1,
    Reply = 2,
    Final = 3,
}

impl MessageKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(MessageKind::Request),
            2 => Some(MessageKind::Reply),
            3 => Some(MessageKind::Final),
            _ => None,
        }
    }
}

/// One of the three handshake messages.
///
/// Request: mode, certificate, agreement public value, nonce1.
/// Reply: mode, certificate, agreement public value, nonce1 (echoed), nonce2.
/// Final: nonce1, nonce2.
/// Every message ends with a signature over the encoding of everything before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeMessage {
    pub kind: MessageKind,
    pub fs_mode: Option<FsMode>,
    pub sender_cert: Option<Certificate>,
    pub agreement_public: Option<Vec<u8>>,
    pub nonce1: [u8; NONCE_LEN],
    pub nonce2: Option<[u8; NONCE_LEN]>,
    pub signature: Vec<u8>,
}

fn field<'a>(r: &mut TlvReader<'a>, tag: u8) -> Result<&'a [u8], HandshakeError> {
    r.expect(tag).map_err(|e| malformed(e.to_string()))
}

fn malformed(what: impl Into<String>) -> HandshakeError {
    HandshakeError::MalformedMessage(what.into())
}

impl HandshakeMessage {
    /// Bytes covered by the signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put(tag::KIND, &[self.kind as u8]).expect("fits");
        if let Some(mode) = self.fs_mode {
            w.put(tag::MODE, &[mode.wire_id()]).expect("fits");
        }
        if let Some(cert) = &self.sender_cert {
            w.put(tag::CERT, &cert.encode()).expect("certificate fits");
        }
        if let Some(public) = &self.agreement_public {
            w.put(tag::AGREEMENT, public).expect("public value fits");
        }
        w.put(tag::NONCE1, &self.nonce1).expect("fits");
        if let Some(n2) = &self.nonce2 {
            w.put(tag::NONCE2, n2).expect("fits");
        }
        w.into_bytes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        let mut w = TlvWriter::new();
        w.put(tag::SIGNATURE, &self.signature)
            .expect("signature fits");
        out.extend_from_slice(w.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, HandshakeError> {
        let mut r = TlvReader::new(bytes);
        let kind = match r.expect(tag::KIND).map_err(|e| malformed(e.to_string()))? {
            [b] => MessageKind::from_byte(*b).ok_or_else(|| malformed("unknown message kind"))?,
            _ => return Err(malformed("kind must be one byte")),
        };
        let full = kind != MessageKind::Final;
        let nonce = |b: &[u8]| -> Result<[u8; NONCE_LEN], HandshakeError> {
            b.try_into()
                .map_err(|_| malformed("nonce must be 32 bytes"))
        };

        let (fs_mode, sender_cert, agreement_public) = if full {
            let mode = match field(&mut r, tag::MODE)? {
                [b] => FsMode::from_wire_id(*b).ok_or_else(|| malformed("unknown mode"))?,
                _ => return Err(malformed("mode must be one byte")),
            };
            let cert = Certificate::decode(field(&mut r, tag::CERT)?)
                .map_err(|e| malformed(format!("certificate: {e}")))?;
            let public = field(&mut r, tag::AGREEMENT)?.to_vec();
            (Some(mode), Some(cert), Some(public))
        } else {
            (None, None, None)
        };
        let nonce1 = nonce(field(&mut r, tag::NONCE1)?)?;
        let nonce2 = if kind == MessageKind::Request {
            None
        } else {
            Some(nonce(field(&mut r, tag::NONCE2)?)?)
        };
        let signature = field(&mut r, tag::SIGNATURE)?.to_vec();
        r.finish().map_err(|e| malformed(e.to_string()))?;
        Ok(HandshakeMessage {
            kind,
            fs_mode,
            sender_cert,
            agreement_public,
            nonce1,
            nonce2,
            signature,
        })
    }
}
