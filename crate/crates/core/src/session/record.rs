use crate::crypto::{GCM_IV_LEN, GCM_TAG_LEN};

/// iv + tag + receiver tag count.
pub const RECORD_FIXED_OVERHEAD: usize = GCM_IV_LEN + GCM_TAG_LEN + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverTag {
    pub name: String,
    pub tag: [u8; GCM_TAG_LEN],
}

/// `iv(12) | ciphertext | tag(16) | count(1) | { nameLen(1) | name | tag(16) }*`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedRecord {
    pub iv: [u8; GCM_IV_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; GCM_TAG_LEN],
    pub receiver_tags: Vec<ReceiverTag>,
}

impl ProtectedRecord {
    pub fn encoded_len(&self) -> usize {
        RECORD_FIXED_OVERHEAD
            + self.ciphertext.len()
            + self
                .receiver_tags
                .iter()
                .map(|t| 1 + t.name.len() + GCM_TAG_LEN)
                .sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out.push(u8::try_from(self.receiver_tags.len()).expect("at most 255 receiver tags"));
        for t in &self.receiver_tags {
            out.push(u8::try_from(t.name.len()).expect("receiver names are at most 255 bytes"));
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&t.tag);
        }
        out
    }

    /// Every structurally valid reading of `body`, latest split point first.
    pub fn decode_candidates(body: &[u8]) -> impl Iterator<Item = ProtectedRecord> + '_ {
        let min = GCM_IV_LEN + GCM_TAG_LEN;
        (min..body.len()).rev().filter_map(move |split| {
            let receiver_tags = parse_receiver_tags(&body[split..])?;
            Some(ProtectedRecord {
                iv: body[..GCM_IV_LEN].try_into().ok()?,
                ciphertext: body[GCM_IV_LEN..split - GCM_TAG_LEN].to_vec(),
                tag: body[split - GCM_TAG_LEN..split].try_into().ok()?,
                receiver_tags,
            })
        })
    }
}

fn parse_receiver_tags(mut rest: &[u8]) -> Option<Vec<ReceiverTag>> {
    let (&count, tail) = rest.split_first()?;
    rest = tail;
    let mut tags = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let (&len, tail) = rest.split_first()?;
        let len = len as usize;
        if len == 0 || tail.len() < len + GCM_TAG_LEN {
            return None;
        }
        let name = std::str::from_utf8(&tail[..len]).ok()?.to_owned();
        let tag = tail[len..len + GCM_TAG_LEN].try_into().ok()?;
        tags.push(ReceiverTag { name, tag });
        rest = &tail[len + GCM_TAG_LEN..];
    }
    rest.is_empty().then_some(tags)
}
