use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::IdentityError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PemKind {
    Cert,
    Identity,
}

impl PemKind {
    fn label(self) -> &'static str {
        match self {
            PemKind::Cert => "CERT",
            PemKind::Identity => "IDENTITY",
        }
    }
}

pub fn pem_encode(kind: PemKind, der: &[u8]) -> String {
    let b64 = STANDARD.encode(der);
    let mut out = format!("-----BEGIN SENTRYBUS {}-----\n", kind.label());
    for line in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(line).expect("base64 is ASCII"));
        out.push('\n');
    }
    out.push_str(&format!("-----END SENTRYBUS {}-----\n", kind.label()));
    out
}

pub fn pem_decode(kind: PemKind, text: &str) -> Result<Vec<u8>, IdentityError> {
    let begin = format!("-----BEGIN SENTRYBUS {}-----", kind.label());
    let end = format!("-----END SENTRYBUS {}-----", kind.label());
    let err = || IdentityError::Pem(kind.label());
    let start = text.find(&begin).ok_or_else(err)? + begin.len();
    let stop = start + text[start..].find(&end).ok_or_else(err)?;
    let body: String = text[start..stop]
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    STANDARD.decode(body).map_err(|_| err())
}

pub fn write_pem_file(path: &Path, kind: PemKind, der: &[u8]) -> Result<(), IdentityError> {
    fs::write(path, pem_encode(kind, der))?;
    Ok(())
}

pub fn read_pem_file(path: &Path, kind: PemKind) -> Result<Vec<u8>, IdentityError> {
    pem_decode(kind, &fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fences_and_round_trip() {
        let data: Vec<u8> = (0..=255).collect();
        let text = pem_encode(PemKind::Cert, &data);
        assert!(text.starts_with("-----BEGIN SENTRYBUS CERT-----\n"));
        assert!(text.ends_with("-----END SENTRYBUS CERT-----\n"));
        assert!(text
            .lines()
            .all(|l| l.len() <= 64 || l.starts_with("-----")));
        assert_eq!(pem_decode(PemKind::Cert, &text).unwrap(), data);
        assert!(pem_decode(PemKind::Identity, &text).is_err());
    }
}
