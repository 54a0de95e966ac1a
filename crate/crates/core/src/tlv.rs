//! `tag(1) | len(2, big-endian) | value` encoding used for certificates,
//! identities and handshake messages.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TlvError {
    #[error("truncated TLV")]
    Truncated,
    #[error("expected tag {expected:#04x}, found {found:#04x}")]
    UnexpectedTag { expected: u8, found: u8 },
    #[error("missing tag {0:#04x}")]
    Missing(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("value of {0} bytes does not fit a TLV")]
    TooLong(usize),
}

#[derive(Debug, Default, Clone)]
pub struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, tag: u8, value: &[u8]) -> Result<&mut Self, TlvError> {
        let len = u16::try_from(value.len()).map_err(|_| TlvError::TooLong(value.len()))?;
        self.buf.push(tag);
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(value);
        Ok(self)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Reads fields in a fixed order. Decoding is strict so that every accepted
/// encoding is the canonical one.
#[derive(Debug)]
pub struct TlvReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> TlvReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        TlvReader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn peek_tag(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    pub fn expect(&mut self, tag: u8) -> Result<&'a [u8], TlvError> {
        match self.peek_tag() {
            None => Err(TlvError::Missing(tag)),
            Some(found) if found != tag => Err(TlvError::UnexpectedTag {
                expected: tag,
                found,
            }),
            Some(_) => self.take(),
        }
    }

    pub fn optional(&mut self, tag: u8) -> Result<Option<&'a [u8]>, TlvError> {
        if self.peek_tag() == Some(tag) {
            self.take().map(Some)
        } else {
            Ok(None)
        }
    }

    fn take(&mut self) -> Result<&'a [u8], TlvError> {
        let header = self
            .buf
            .get(self.pos..self.pos + 3)
            .ok_or(TlvError::Truncated)?;
        let len = u16::from_be_bytes([header[1], header[2]]) as usize;
        let start = self.pos + 3;
        let value = self
            .buf
            .get(start..start + len)
            .ok_or(TlvError::Truncated)?;
        self.pos = start + len;
        Ok(value)
    }

    pub fn finish(self) -> Result<(), TlvError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(TlvError::Trailing(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_back_in_order() {
        let mut w = TlvWriter::new();
        w.put(1, b"abc").unwrap().put(3, b"").unwrap();
        let bytes = w.into_bytes();
        assert_eq!(bytes, [1, 0, 3, b'a', b'b', b'c', 3, 0, 0]);
        let mut r = TlvReader::new(&bytes);
        assert_eq!(r.expect(1).unwrap(), b"abc");
        assert_eq!(r.optional(2).unwrap(), None);
        assert_eq!(r.optional(3).unwrap(), Some(&b""[..]));
        r.finish().unwrap();
    }

    #[test]
    fn strictness() {
        let mut r = TlvReader::new(&[1, 0, 5, 0]);
        assert_eq!(r.expect(1), Err(TlvError::Truncated));
        let mut r = TlvReader::new(&[2, 0, 0]);
        assert_eq!(
            r.expect(1),
            Err(TlvError::UnexpectedTag {
                expected: 1,
                found: 2
            })
        );
        let r = TlvReader::new(&[2, 0, 0]);
        assert_eq!(r.finish(), Err(TlvError::Trailing(3)));
        assert_eq!(
            TlvWriter::new().put(1, &vec![0; 70_000]).unwrap_err(),
            TlvError::TooLong(70_000)
        );
    }
}
