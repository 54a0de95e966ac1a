//! Minimal single-level PKI: a self-signed root issues participant
//! certificates binding a name, an ECDSA P-256 signing key and, for static-DH
//! participants, a long-term key-agreement public value.

mod pem;

pub use pem::{pem_decode, pem_encode, read_pem_file, write_pem_file, PemKind};

use thiserror::Error;

use crate::crypto::{self, AgreementKeypair, CryptoError, Drbg, SigningKeypair, Suite};
use crate::tlv::{TlvError, TlvReader, TlvWriter};

pub const MAX_NAME_LEN: usize = 255;

mod tag {
    pub const SUBJECT: u8 = 0x01;
    pub const SIGNING_PUBLIC: u8 = 0x02;
    pub const AGREEMENT_PUBLIC: u8 = 0x03;
    pub const SUITE: u8 = 0x04;
    pub const ISSUER: u8 = 0x05;
    pub const SERIAL: u8 = 0x06;
    pub const SIGNATURE: u8 = 0x07;

    pub const ID_CERT: u8 = 0x20;
    pub const ID_SIGNING_PRIVATE: u8 = 0x21;
    pub const ID_AGREEMENT_PRIVATE: u8 = 0x22;
}

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("name must not be empty")]
    EmptyName,
    #[error("name is {0} bytes, the limit is 255")]
    NameTooLong(usize),
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error("private key does not match the certificate")]
    KeyMismatch,
    #[error("expected a PEM block of kind {0}")]
    Pem(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TlvError> for IdentityError {
    fn from(e: TlvError) -> Self {
        IdentityError::Malformed(e.to_string())
    }
}

fn check_name(name: &str) -> Result<(), IdentityError> {
    if name.is_empty() {
        return Err(IdentityError::EmptyName);
    }
    if name.len() > MAX_NAME_LEN {
        return Err(IdentityError::NameTooLong(name.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject_name: String,
    pub signing_public: Vec<u8>,
    /// Present only for identities that take part in static-DH handshakes.
    pub agreement_public: Option<Vec<u8>>,
    pub suite: Suite,
    pub issuer_name: String,
    pub serial: u64,
    pub issuer_signature: Vec<u8>,
}

impl Certificate {
    /// Canonical encoding of every field that the issuer signs.
    pub fn to_be_signed(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        self.write_tbs(&mut w)
            .expect("certificate fields fit TLV lengths");
        w.into_bytes()
    }

    fn write_tbs(&self, w: &mut TlvWriter) -> Result<(), TlvError> {
        w.put(tag::SUBJECT, self.subject_name.as_bytes())?;
        w.put(tag::SIGNING_PUBLIC, &self.signing_public)?;
        if let Some(agreement) = &self.agreement_public {
            w.put(tag::AGREEMENT_PUBLIC, agreement)?;
        }
        w.put(tag::SUITE, &[self.suite.wire_id()])?;
        w.put(tag::ISSUER, self.issuer_name.as_bytes())?;
        w.put(tag::SERIAL, &self.serial.to_be_bytes())?;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        self.write_tbs(&mut w)
            .expect("certificate fields fit TLV lengths");
        w.put(tag::SIGNATURE, &self.issuer_signature)
            .expect("signature fits");
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = TlvReader::new(bytes);
        let cert = Self::read(&mut r)?;
        r.finish()?;
        Ok(cert)
    }

    fn read(r: &mut TlvReader<'_>) -> Result<Self, IdentityError> {
        let text = |b: &[u8]| {
            let s = std::str::from_utf8(b)
                .map_err(|_| IdentityError::Malformed("name is not UTF-8".into()))?;
            check_name(s)?;
            Ok::<_, IdentityError>(s.to_owned())
        };
        let subject_name = text(r.expect(tag::SUBJECT)?)?;
        let signing_public = r.expect(tag::SIGNING_PUBLIC)?.to_vec();
        let agreement_public = r.optional(tag::AGREEMENT_PUBLIC)?.map(<[u8]>::to_vec);
        let suite = match r.expect(tag::SUITE)? {
            [id] => Suite::from_wire_id(*id)
                .ok_or_else(|| IdentityError::Malformed(format!("unknown suite id {id}")))?,
            _ => return Err(IdentityError::Malformed("suite must be one byte".into())),
        };
        let issuer_name = text(r.expect(tag::ISSUER)?)?;
        let serial = u64::from_be_bytes(
            r.expect(tag::SERIAL)?
                .try_into()
                .map_err(|_| IdentityError::Malformed("serial must be 8 bytes".into()))?,
        );
        let issuer_signature = r.expect(tag::SIGNATURE)?.to_vec();
        Ok(Certificate {
            subject_name,
            signing_public,
            agreement_public,
            suite,
            issuer_name,
            serial,
            issuer_signature,
        })
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject_name == self.issuer_name && verify_chain(self, self)
    }
}

/// True iff `cert` was issued by `root`. Never fails; malformed input is `false`.
pub fn verify_chain(cert: &Certificate, root: &Certificate) -> bool {
    cert.issuer_name == root.subject_name
        && crypto::verify(
            &root.signing_public,
            &cert.to_be_signed(),
            &cert.issuer_signature,
        )
        .unwrap_or(false)
}

/// [`verify_chain`] over an encoded certificate.
pub fn verify_chain_encoded(cert: &[u8], root: &Certificate) -> bool {
    Certificate::decode(cert).is_ok_and(|c| verify_chain(&c, root))
}

/// Certificate plus the private keys behind it.
#[derive(Debug, Clone)]
pub struct ParticipantIdentity {
    certificate: Certificate,
    signing: SigningKeypair,
    agreement: Option<AgreementKeypair>,
}

impl ParticipantIdentity {
    fn new(
        certificate: Certificate,
        signing: SigningKeypair,
        agreement: Option<AgreementKeypair>,
    ) -> Result<Self, IdentityError> {
        if signing.public() != certificate.signing_public.as_slice() {
            return Err(IdentityError::KeyMismatch);
        }
        match (&agreement, &certificate.agreement_public) {
            (None, None) => {}
            (Some(kp), Some(public)) if kp.public() == public.as_slice() => {}
            _ => return Err(IdentityError::KeyMismatch),
        }
        Ok(ParticipantIdentity {
            certificate,
            signing,
            agreement,
        })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn name(&self) -> &str {
        &self.certificate.subject_name
    }

    pub fn suite(&self) -> Suite {
        self.certificate.suite
    }

    pub fn signing(&self) -> &SigningKeypair {
        &self.signing
    }

    /// The long-term key-agreement keypair, if this identity has one.
    pub fn agreement(&self) -> Option<&AgreementKeypair> {
        self.agreement.as_ref()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put(tag::ID_CERT, &self.certificate.encode())
            .expect("certificate fits");
        w.put(tag::ID_SIGNING_PRIVATE, &self.signing.private_bytes())
            .expect("key fits");
        if let Some(kp) = &self.agreement {
            w.put(tag::ID_AGREEMENT_PRIVATE, kp.private_bytes())
                .expect("key fits");
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let mut r = TlvReader::new(bytes);
        let certificate = Certificate::decode(r.expect(tag::ID_CERT)?)?;
        let signing = SigningKeypair::from_private(r.expect(tag::ID_SIGNING_PRIVATE)?)?;
        let agreement = r
            .optional(tag::ID_AGREEMENT_PRIVATE)?
            .map(|b| AgreementKeypair::from_private(certificate.suite, b))
            .transpose()?;
        r.finish()?;
        Self::new(certificate, signing, agreement)
    }
}

/// A root certificate authority.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    identity: ParticipantIdentity,
}

impl CertificateAuthority {
    /// Creates a self-signed root.
    pub fn create(name: &str, drbg: &mut Drbg) -> Result<Self, IdentityError> {
        check_name(name)?;
        let signing = SigningKeypair::generate(drbg);
        let mut certificate = Certificate {
            subject_name: name.to_owned(),
            signing_public: signing.public().to_vec(),
            agreement_public: None,
            suite: Suite::EcdhP256,
            issuer_name: name.to_owned(),
            serial: drbg.next_serial(),
            issuer_signature: Vec::new(),
        };
        certificate.issuer_signature = signing.sign(&certificate.to_be_signed()).to_vec();
        Ok(CertificateAuthority {
            identity: ParticipantIdentity::new(certificate, signing, None)?,
        })
    }

    pub fn certificate(&self) -> &Certificate {
        self.identity.certificate()
    }

    pub fn issue_identity(
        &self,
        name: &str,
        suite: Suite,
        include_long_term_agreement: bool,
        drbg: &mut Drbg,
    ) -> Result<ParticipantIdentity, IdentityError> {
        let agreement =
            include_long_term_agreement.then(|| AgreementKeypair::generate(suite, drbg));
        self.issue_with_agreement(name, suite, agreement, drbg)
    }

    pub(crate) fn issue_with_agreement(
        &self,
        name: &str,
        suite: Suite,
        agreement: Option<AgreementKeypair>,
        drbg: &mut Drbg,
    ) -> Result<ParticipantIdentity, IdentityError> {
        check_name(name)?;
        let signing = SigningKeypair::generate(drbg);
        let mut certificate = Certificate {
            subject_name: name.to_owned(),
            signing_public: signing.public().to_vec(),
            agreement_public: agreement.as_ref().map(|kp| kp.public().to_vec()),
            suite,
            issuer_name: self.certificate().subject_name.clone(),
            serial: drbg.next_serial(),
            issuer_signature: Vec::new(),
        };
        certificate.issuer_signature = self
            .identity
            .signing
            .sign(&certificate.to_be_signed())
            .to_vec();
        ParticipantIdentity::new(certificate, signing, agreement)
    }

    pub fn encode(&self) -> Vec<u8> {
        self.identity.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        let identity = ParticipantIdentity::decode(bytes)?;
        if !identity.certificate.is_self_signed() {
            return Err(IdentityError::Malformed(
                "CA certificate is not self-signed".into(),
            ));
        }
        Ok(CertificateAuthority { identity })
    }
}

trait SerialSource {
    fn next_serial(&mut self) -> u64;
}

impl SerialSource for Drbg {
    fn next_serial(&mut self) -> u64 {
        u64::from_be_bytes(self.array())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Drbg, CertificateAuthority) {
        let mut drbg = Drbg::from_seed(31);
        let ca = CertificateAuthority::create("testca", &mut drbg).unwrap();
        (drbg, ca)
    }

    #[test]
    fn root_is_self_signed() {
        let (_, ca) = setup();
        let root = ca.certificate();
        assert_eq!(root.subject_name, "testca");
        assert_eq!(root.issuer_name, "testca");
        assert!(verify_chain(root, root));
    }

    #[test]
    fn two_roots_with_one_name_differ() {
        let mut drbg = Drbg::from_seed(32);
        let a = CertificateAuthority::create("same", &mut drbg).unwrap();
        let b = CertificateAuthority::create("same", &mut drbg).unwrap();
        assert_ne!(a.certificate().serial, b.certificate().serial);
        assert_ne!(
            a.certificate().signing_public,
            b.certificate().signing_public
        );
        assert!(!verify_chain(a.certificate(), b.certificate()));
    }

    #[test]
    fn static_and_ephemeral_identities() {
        let (mut drbg, ca) = setup();
        for suite in Suite::ALL {
            let st = ca.issue_identity("alice", suite, true, &mut drbg).unwrap();
            assert!(st.certificate().agreement_public.is_some());
            assert!(st.agreement().is_some());
            assert!(verify_chain(st.certificate(), ca.certificate()));

            let eph = ca.issue_identity("alice", suite, false, &mut drbg).unwrap();
            assert!(eph.certificate().agreement_public.is_none());
            assert!(verify_chain(eph.certificate(), ca.certificate()));
        }
    }

    #[test]
    fn name_limits() {
        let (mut drbg, ca) = setup();
        assert!(matches!(
            ca.issue_identity("", Suite::EcdhP256, false, &mut drbg),
            Err(IdentityError::EmptyName)
        ));
        assert!(matches!(
            ca.issue_identity(&"n".repeat(256), Suite::EcdhP256, false, &mut drbg),
            Err(IdentityError::NameTooLong(256))
        ));
        assert!(ca
            .issue_identity(&"n".repeat(255), Suite::EcdhP256, false, &mut drbg)
            .is_ok());
    }

    #[test]
    fn any_byte_flip_breaks_the_chain() {
        let (mut drbg, ca) = setup();
        let id = ca
            .issue_identity("bob", Suite::EcdhP256, true, &mut drbg)
            .unwrap();
        let bytes = id.certificate().encode();
        assert!(verify_chain_encoded(&bytes, ca.certificate()));
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            assert!(!verify_chain_encoded(&b, ca.certificate()), "byte {i}");
        }
    }

    #[test]
    fn foreign_root_and_truncation_fail() {
        let (mut drbg, ca) = setup();
        let other = CertificateAuthority::create("other", &mut drbg).unwrap();
        let id = other
            .issue_identity("mallory", Suite::EcdhP256, false, &mut drbg)
            .unwrap();
        assert!(!verify_chain(id.certificate(), ca.certificate()));
        let bytes = ca
            .issue_identity("carol", Suite::EcdhP256, false, &mut drbg)
            .unwrap()
            .certificate()
            .encode();
        for cut in [0, 1, 10, bytes.len() - 1] {
            assert!(!verify_chain_encoded(&bytes[..cut], ca.certificate()));
        }
    }

    #[test]
    fn identity_and_ca_round_trip() {
        let (mut drbg, ca) = setup();
        let id = ca
            .issue_identity("dave", Suite::DhModp2048_256, true, &mut drbg)
            .unwrap();
        let back = ParticipantIdentity::decode(&id.encode()).unwrap();
        assert_eq!(back.certificate(), id.certificate());
        assert_eq!(back.encode(), id.encode());
        let ca2 = CertificateAuthority::decode(&ca.encode()).unwrap();
        assert_eq!(ca2.certificate(), ca.certificate());
        assert!(CertificateAuthority::decode(&id.encode()).is_err());
    }
}
