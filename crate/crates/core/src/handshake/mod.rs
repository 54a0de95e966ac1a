//! Three-message authenticated key agreement.
//!
//! ```text
//! Initiator                                   Responder
//!   Request { mode, cert_i, pub_i, n1 }  sig_i  ->
//!        <-  Reply { mode, cert_r, pub_r, n1, n2 }  sig_r
//!   Final { n1, n2 }  sig_i                     ->
//! ```
//!
//! Both sides finish with
//! `master = HKDF(ikm = DH(pub), salt = n1 || n2, info = "sentrybus-master-v1")`.
//! In [`FsMode::Static`] the agreement keys are the long-term values from the
//! certificates, so the DH secret is the same for every session between one
//! pair of identities. [`FsMode::Ephemeral`] draws a fresh keypair per session.

mod message;

pub use message::{HandshakeMessage, MessageKind};

use thiserror::Error;

use crate::crypto::{self, AgreementKeypair, CryptoError, Drbg, SigningKeypair, Suite};
use crate::identity::{verify_chain, Certificate, ParticipantIdentity};

pub const NONCE_LEN: usize = 32;
pub const MASTER_SECRET_LEN: usize = 32;
pub const MASTER_INFO: &[u8] = b"sentrybus-master-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsMode {
    /// Long-term DH keys from the certificates. No forward secrecy.
    Static,
    /// Fresh DH keys per session.
    Ephemeral,
}

impl FsMode {
    pub fn wire_id(self) -> u8 {
        match self {
            FsMode::Static => 1,
            FsMode::Ephemeral => 2,
        }
    }

    pub fn from_wire_id(b: u8) -> Option<Self> {
        match b {
            1 => Some(FsMode::Static),
            2 => Some(FsMode::Ephemeral),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FsMode::Static => "static",
            FsMode::Ephemeral => "ephemeral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeState {
    Idle,
    AwaitingReply,
    AwaitingFinal,
    Established,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandshakeError {
    #[error("identity is not usable in the requested forward-secrecy mode")]
    ModeIdentityMismatch,
    #[error("peer certificate rejected")]
    CertificateRejected,
    #[error("bad signature")]
    BadSignature,
    #[error("suite mismatch")]
    SuiteMismatch,
    #[error("malformed handshake message: {0}")]
    MalformedMessage(String),
    #[error("nonce mismatch")]
    NonceMismatch,
    #[error("invalid peer key-agreement value")]
    InvalidPeerPublic,
    #[error("unexpected {received:?} message in state {state:?}")]
    StateError {
        state: HandshakeState,
        received: Option<MessageKind>,
    },
}

impl From<CryptoError> for HandshakeError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::InvalidPeerPublic => HandshakeError::InvalidPeerPublic,
            CryptoError::MalformedSignature | CryptoError::MalformedPublicKey => {
                HandshakeError::BadSignature
            }
            other => HandshakeError::MalformedMessage(other.to_string()),
        }
    }
}

/// Derives the master secret from the raw DH secret and both nonces.
pub fn derive_master_secret(
    shared: &[u8],
    nonce1: &[u8; NONCE_LEN],
    nonce2: &[u8; NONCE_LEN],
) -> [u8; MASTER_SECRET_LEN] {
    let mut salt = [0u8; 2 * NONCE_LEN];
    salt[..NONCE_LEN].copy_from_slice(nonce1);
    salt[NONCE_LEN..].copy_from_slice(nonce2);
    crypto::hkdf(shared, &salt, MASTER_INFO, MASTER_SECRET_LEN)
        .expect("32 bytes is within the HKDF limit")
        .try_into()
        .expect("requested 32 bytes")
}

/// Per-peer handshake state machine. Single owner; not shared across threads.
#[derive(Debug)]
pub struct HandshakeSession {
    role: Role,
    state: HandshakeState,
    suite: Suite,
    fs_mode: FsMode,
    signing: SigningKeypair,
    local_nonce: [u8; NONCE_LEN],
    peer_nonce: Option<[u8; NONCE_LEN]>,
    local_agreement: AgreementKeypair,
    peer_agreement_public: Option<Vec<u8>>,
    peer_certificate: Option<Certificate>,
    transcript: Vec<Vec<u8>>,
    shared_secret: Option<Vec<u8>>,
    master_secret: Option<[u8; MASTER_SECRET_LEN]>,
}

fn sign(signing: &SigningKeypair, mut msg: HandshakeMessage) -> HandshakeMessage {
    msg.signature = signing.sign(&msg.signed_bytes()).to_vec();
    msg
}

/// Checks the sender certificate and the message signature.
fn authenticate(
    msg: &HandshakeMessage,
    signer: &Certificate,
    trusted_root: Option<&Certificate>,
) -> Result<(), HandshakeError> {
    if let Some(root) = trusted_root {
        if !verify_chain(signer, root) {
            return Err(HandshakeError::CertificateRejected);
        }
    }
    if crypto::verify(&signer.signing_public, &msg.signed_bytes(), &msg.signature)? {
        Ok(())
    } else {
        Err(HandshakeError::BadSignature)
    }
}

/// In static mode the agreement value must be the certified one; in
/// ephemeral mode it must not be.
fn check_agreement_binding(
    mode: FsMode,
    cert: &Certificate,
    public: &[u8],
) -> Result<(), HandshakeError> {
    let certified = cert.agreement_public.as_deref();
    match mode {
        FsMode::Static if certified != Some(public) => Err(HandshakeError::ModeIdentityMismatch),
        FsMode::Ephemeral if certified == Some(public) => Err(HandshakeError::ModeIdentityMismatch),
        _ => Ok(()),
    }
}

fn local_agreement(
    identity: &ParticipantIdentity,
    mode: FsMode,
    drbg: &mut Drbg,
) -> Result<AgreementKeypair, HandshakeError> {
    match mode {
        FsMode::Static => identity
            .agreement()
            .cloned()
            .ok_or(HandshakeError::ModeIdentityMismatch),
        FsMode::Ephemeral => Ok(AgreementKeypair::generate(identity.suite(), drbg)),
    }
}

impl HandshakeSession {
    /// Starts a handshake as initiator and returns the signed Request.
    pub fn begin_request(
        identity: &ParticipantIdentity,
        suite: Suite,
        fs_mode: FsMode,
        drbg: &mut Drbg,
    ) -> Result<(HandshakeSession, HandshakeMessage), HandshakeError> {
        if identity.suite() != suite {
            return Err(HandshakeError::SuiteMismatch);
        }
        let agreement = local_agreement(identity, fs_mode, drbg)?;
        let nonce1 = drbg.array::<NONCE_LEN>();
        let request = sign(
            identity.signing(),
            HandshakeMessage {
                kind: MessageKind::Request,
                fs_mode: Some(fs_mode),
                sender_cert: Some(identity.certificate().clone()),
                agreement_public: Some(agreement.public().to_vec()),
                nonce1,
                nonce2: None,
                signature: Vec::new(),
            },
        );
        let session = HandshakeSession {
            role: Role::Initiator,
            state: HandshakeState::AwaitingReply,
            suite,
            fs_mode,
            signing: identity.signing().clone(),
            local_nonce: nonce1,
            peer_nonce: None,
            local_agreement: agreement,
            peer_agreement_public: None,
            peer_certificate: None,
            transcript: vec![request.encode()],
            shared_secret: None,
            master_secret: None,
        };
        Ok((session, request))
    }

    /// Validates a Request and answers it with a signed Reply.
    ///
    /// Nothing is retained when the request is rejected.
    pub fn process_request(
        identity: &ParticipantIdentity,
        trusted_root: &Certificate,
        request_bytes: &[u8],
        drbg: &mut Drbg,
    ) -> Result<(HandshakeSession, HandshakeMessage), HandshakeError> {
        let request = HandshakeMessage::decode(request_bytes)?;
        if request.kind != MessageKind::Request {
            return Err(HandshakeError::StateError {
                state: HandshakeState::Idle,
                received: Some(request.kind),
            });
        }
        let (Some(fs_mode), Some(cert), Some(peer_public)) = (
            request.fs_mode,
            &request.sender_cert,
            &request.agreement_public,
        ) else {
            return Err(HandshakeError::MalformedMessage(
                "incomplete request".into(),
            ));
        };
        authenticate(&request, cert, Some(trusted_root))?;
        if cert.suite != identity.suite() {
            return Err(HandshakeError::SuiteMismatch);
        }
        check_agreement_binding(fs_mode, cert, peer_public)?;

        let agreement = local_agreement(identity, fs_mode, drbg)?;
        let shared = agreement.shared(peer_public)?;
        let nonce2 = drbg.array::<NONCE_LEN>();
        let reply = sign(
            identity.signing(),
            HandshakeMessage {
                kind: MessageKind::Reply,
                fs_mode: Some(fs_mode),
                sender_cert: Some(identity.certificate().clone()),
                agreement_public: Some(agreement.public().to_vec()),
                nonce1: request.nonce1,
                nonce2: Some(nonce2),
                signature: Vec::new(),
            },
        );
        let session = HandshakeSession {
            role: Role::Responder,
            state: HandshakeState::AwaitingFinal,
            suite: identity.suite(),
            fs_mode,
            signing: identity.signing().clone(),
            local_nonce: nonce2,
            peer_nonce: Some(request.nonce1),
            local_agreement: agreement,
            peer_agreement_public: Some(peer_public.clone()),
            peer_certificate: Some(cert.clone()),
            transcript: vec![request_bytes.to_vec(), reply.encode()],
            shared_secret: Some(shared),
            master_secret: None,
        };
        Ok((session, reply))
    }

    /// Initiator side: validates the Reply, emits Final and establishes the session.
    pub fn process_reply(
        &mut self,
        trusted_root: &Certificate,
        reply_bytes: &[u8],
    ) -> Result<(HandshakeMessage, [u8; MASTER_SECRET_LEN]), HandshakeError> {
        self.guard(HandshakeState::AwaitingReply, reply_bytes)?;
        let result = self.try_process_reply(trusted_root, reply_bytes);
        if result.is_err() {
            self.state = HandshakeState::Failed;
        }
        result
    }

    fn try_process_reply(
        &mut self,
        trusted_root: &Certificate,
        reply_bytes: &[u8],
    ) -> Result<(HandshakeMessage, [u8; MASTER_SECRET_LEN]), HandshakeError> {
        let reply = HandshakeMessage::decode(reply_bytes)?;
        if reply.kind != MessageKind::Reply {
            return Err(HandshakeError::StateError {
                state: self.state,
                received: Some(reply.kind),
            });
        }
        let (Some(fs_mode), Some(cert), Some(peer_public), Some(nonce2)) = (
            reply.fs_mode,
            &reply.sender_cert,
            &reply.agreement_public,
            reply.nonce2,
        ) else {
            return Err(HandshakeError::MalformedMessage("incomplete reply".into()));
        };
        authenticate(&reply, cert, Some(trusted_root))?;
        if cert.suite != self.suite {
            return Err(HandshakeError::SuiteMismatch);
        }
        if reply.nonce1 != self.local_nonce {
            return Err(HandshakeError::NonceMismatch);
        }
        if fs_mode != self.fs_mode {
            return Err(HandshakeError::ModeIdentityMismatch);
        }
        check_agreement_binding(fs_mode, cert, peer_public)?;
        let shared = self.local_agreement.shared(peer_public)?;

        let finale = sign(
            &self.signing,
            HandshakeMessage {
                kind: MessageKind::Final,
                fs_mode: None,
                sender_cert: None,
                agreement_public: None,
                nonce1: self.local_nonce,
                nonce2: Some(nonce2),
                signature: Vec::new(),
            },
        );
        let master = derive_master_secret(&shared, &self.local_nonce, &nonce2);
        self.transcript.push(reply_bytes.to_vec());
        self.transcript.push(finale.encode());
        self.peer_nonce = Some(nonce2);
        self.peer_agreement_public = Some(peer_public.clone());
        self.peer_certificate = Some(cert.clone());
        self.shared_secret = Some(shared);
        self.master_secret = Some(master);
        self.state = HandshakeState::Established;
        Ok((finale, master))
    }

    /// Responder side: validates Final and establishes the session.
    pub fn process_final(
        &mut self,
        final_bytes: &[u8],
    ) -> Result<[u8; MASTER_SECRET_LEN], HandshakeError> {
        self.guard(HandshakeState::AwaitingFinal, final_bytes)?;
        let result = self.try_process_final(final_bytes);
        if result.is_err() {
            self.state = HandshakeState::Failed;
        }
        result
    }

    fn try_process_final(
        &mut self,
        final_bytes: &[u8],
    ) -> Result<[u8; MASTER_SECRET_LEN], HandshakeError> {
        let finale = HandshakeMessage::decode(final_bytes)?;
        if finale.kind != MessageKind::Final {
            return Err(HandshakeError::StateError {
                state: self.state,
                received: Some(finale.kind),
            });
        }
        let cert = self
            .peer_certificate
            .as_ref()
            .expect("responder holds the initiator certificate");
        authenticate(&finale, cert, None)?;
        let peer_nonce = self.peer_nonce.expect("responder holds nonce1");
        if finale.nonce1 != peer_nonce || finale.nonce2 != Some(self.local_nonce) {
            return Err(HandshakeError::NonceMismatch);
        }
        let shared = self
            .shared_secret
            .as_ref()
            .expect("responder computed the DH secret");
        let master = derive_master_secret(shared, &peer_nonce, &self.local_nonce);
        self.transcript.push(final_bytes.to_vec());
        self.master_secret = Some(master);
        self.state = HandshakeState::Established;
        Ok(master)
    }

    /// Terminal sessions reject everything without changing state; a live
    /// session in the wrong state fails.
    fn guard(&mut self, expected: HandshakeState, bytes: &[u8]) -> Result<(), HandshakeError> {
        if self.state == expected {
            return Ok(());
        }
        let received = HandshakeMessage::decode(bytes).ok().map(|m| m.kind);
        let err = HandshakeError::StateError {
            state: self.state,
            received,
        };
        if !matches!(
            self.state,
            HandshakeState::Established | HandshakeState::Failed
        ) {
            self.state = HandshakeState::Failed;
        }
        Err(err)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> HandshakeState {
        self.state
    }

    pub fn suite(&self) -> Suite {
        self.suite
    }

    pub fn fs_mode(&self) -> FsMode {
        self.fs_mode
    }

    pub fn local_nonce(&self) -> &[u8; NONCE_LEN] {
        &self.local_nonce
    }

    pub fn peer_nonce(&self) -> Option<&[u8; NONCE_LEN]> {
        self.peer_nonce.as_ref()
    }

    pub fn local_agreement_public(&self) -> &[u8] {
        self.local_agreement.public()
    }

    pub fn peer_agreement_public(&self) -> Option<&[u8]> {
        self.peer_agreement_public.as_deref()
    }

    pub fn peer_certificate(&self) -> Option<&Certificate> {
        self.peer_certificate.as_ref()
    }

    /// Exact bytes of every message sent or received, in order.
    pub fn transcript(&self) -> &[Vec<u8>] {
        &self.transcript
    }

    /// Present iff the session is established.
    pub fn master_secret(&self) -> Option<&[u8; MASTER_SECRET_LEN]> {
        self.master_secret.as_ref()
    }

    /// The raw DH output fed into HKDF. Exposed for forward-secrecy analysis.
    #[doc(hidden)]
    pub fn agreement_secret(&self) -> Option<&[u8]> {
        self.shared_secret.as_deref()
    }
}
