use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use crate::crypto::{Drbg, GCM_IV_LEN};
use crate::handshake::{HandshakeError, HandshakeSession, HandshakeState, Role};
use crate::identity::{Certificate, ParticipantIdentity};
use crate::session::{SessionError, SessionKeyMaterial, RECORD_FIXED_OVERHEAD};

use super::frame::{Frame, FrameKind, FIXED_HEADER_LEN, MAX_DATAGRAM};
use super::tunnel::{self, TUNNEL_IV_LEN, TUNNEL_MAC_LEN};
use super::{check_topic, PubsubError, SecurityProfile, RESERVED_TOPIC_PREFIX, TUNNEL_TOPIC};

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);
pub const DEFAULT_HANDSHAKE_RETRIES: u32 = 3;

const POLL_INTERVAL: Duration = Duration::from_millis(50);
const RECEIVER_TAG_LEN: usize = 16;

/// First body byte of a rejection notice sent in place of an HS_REPLY.
/// Handshake message encodings always start with a TLV tag, never zero.
const REJECT_MARKER: u8 = 0x00;

#[derive(Debug, Clone)]
pub struct ParticipantConfig {
    pub name: String,
    pub profile: SecurityProfile,
    pub identity: Option<ParticipantIdentity>,
    pub trusted_root: Option<Certificate>,
    /// Wait for a handshake reply before resending the request.
    pub handshake_timeout: Duration,
    pub handshake_retries: u32,
    /// Attach a GMAC tag for the receiving peer to every Crypto DATA frame.
    pub receiver_tags: bool,
    /// Deterministic randomness for tests; OS entropy when `None`.
    pub seed: Option<u64>,
}

impl ParticipantConfig {
    pub fn new(name: &str, profile: SecurityProfile) -> Self {
        ParticipantConfig {
            name: name.to_owned(),
            profile,
            identity: None,
            trusted_root: None,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            handshake_retries: DEFAULT_HANDSHAKE_RETRIES,
            receiver_tags: false,
            seed: None,
        }
    }

    pub fn with_identity(mut self, identity: ParticipantIdentity, root: Certificate) -> Self {
        self.identity = Some(identity);
        self.trusted_root = Some(root);
        self
    }

    fn validate(&self) -> Result<(), PubsubError> {
        let SecurityProfile::Crypto { suite, fs_mode } = &self.profile else {
            return Ok(());
        };
        let identity = self
            .identity
            .as_ref()
            .ok_or_else(|| PubsubError::ProfileConfig("crypto profile needs an identity".into()))?;
        if self.trusted_root.is_none() {
            return Err(PubsubError::ProfileConfig(
                "crypto profile needs a trusted root".into(),
            ));
        }
        if identity.suite() != *suite {
            return Err(PubsubError::ProfileConfig(format!(
                "identity suite {} does not match profile suite {}",
                identity.suite(),
                suite
            )));
        }
        if *fs_mode == crate::handshake::FsMode::Static && identity.agreement().is_none() {
            return Err(PubsubError::ProfileConfig(
                "static mode needs an identity with a certified key-agreement value".into(),
            ));
        }
        Ok(())
    }
}

/// A message handed to a subscriber.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub topic: String,
    pub payload: Vec<u8>,
    pub peer: String,
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SendReport {
    pub bytes_on_wire: usize,
    pub datagrams: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerInfo {
    pub name: String,
    pub addr: SocketAddr,
    pub established: bool,
}

/// Per-frame outcome counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stats {
    pub delivered: u64,
    pub no_subscriber: u64,
    pub malformed: u64,
    pub auth_failures: u64,
    pub replays: u64,
    pub profile_mismatch: u64,
    pub unknown_session: u64,
    pub handshake_failures: u64,
    pub unexpected_handshake: u64,
    pub ignored: u64,
}

#[derive(Default)]
struct Counters {
    delivered: AtomicU64,
    no_subscriber: AtomicU64,
    malformed: AtomicU64,
    auth_failures: AtomicU64,
    replays: AtomicU64,
    profile_mismatch: AtomicU64,
    unknown_session: AtomicU64,
    handshake_failures: AtomicU64,
    unexpected_handshake: AtomicU64,
    ignored: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl Counters {
    fn snapshot(&self) -> Stats {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        Stats {
            delivered: get(&self.delivered),
            no_subscriber: get(&self.no_subscriber),
            malformed: get(&self.malformed),
            auth_failures: get(&self.auth_failures),
            replays: get(&self.replays),
            profile_mismatch: get(&self.profile_mismatch),
            unknown_session: get(&self.unknown_session),
            handshake_failures: get(&self.handshake_failures),
            unexpected_handshake: get(&self.unexpected_handshake),
            ignored: get(&self.ignored),
        }
    }
}

enum Hs {
    Idle,
    /// We sent a Request and wait for the Reply.
    Pending {
        session: HandshakeSession,
        expected_name: Option<String>,
    },
    /// We answered a Request and wait for the Final.
    Responding {
        session: HandshakeSession,
        request: Vec<u8>,
        reply_frame: Vec<u8>,
    },
    /// Outcome of our last initiated handshake, read by `connect`.
    Finished(Result<(), HandshakeError>),
}

struct Peer {
    name: String,
    session: Option<SessionKeyMaterial>,
    hs: Hs,
    /// Reply we answered with a Final, and that Final, for when the Final is lost.
    final_resend: Option<(Vec<u8>, Vec<u8>)>,
}

impl Peer {
    fn new(name: String) -> Self {
        Peer {
            name,
            session: None,
            hs: Hs::Idle,
            final_resend: None,
        }
    }
}

type Handler = Arc<dyn Fn(&Delivery, &Outbox<'_>) + Send + Sync>;

struct Inner {
    config: ParticipantConfig,
    socket: UdpSocket,
    local_addr: SocketAddr,
    drbg: Mutex<Drbg>,
    peers: Mutex<HashMap<SocketAddr, Peer>>,
    peers_changed: Condvar,
    subscriptions: Mutex<HashMap<String, Handler>>,
    counters: Counters,
    plain_sequence: AtomicU32,
    shutdown: AtomicBool,
}

/// Publishing handle passed to subscription handlers.
pub struct Outbox<'a> {
    inner: &'a Inner,
}

impl Outbox<'_> {
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<SendReport, PubsubError> {
        self.inner.publish(topic, payload)
    }
}

/// A bound endpoint. Dropping it stops the receive loop.
pub struct Participant {
    inner: Arc<Inner>,
    receiver: Mutex<Option<JoinHandle<()>>>,
}

pub fn create_participant(
    config: ParticipantConfig,
    bind: impl ToSocketAddrs,
) -> Result<Participant, PubsubError> {
    Participant::bind(config, bind)
}

impl Participant {
    pub fn bind(config: ParticipantConfig, bind: impl ToSocketAddrs) -> Result<Self, PubsubError> {
        config.validate()?;
        let socket = UdpSocket::bind(bind).map_err(PubsubError::BindFailure)?;
        socket.set_read_timeout(Some(POLL_INTERVAL))?;
        let local_addr = socket.local_addr()?;
        let drbg = match config.seed {
            Some(seed) => Drbg::from_seed(seed),
            None => Drbg::from_os_entropy(config.name.as_bytes()),
        };
        info!(
            "{} bound to {} with profile {}",
            config.name, local_addr, config.profile
        );
        Ok(Participant {
            inner: Arc::new(Inner {
                config,
                socket,
                local_addr,
                drbg: Mutex::new(drbg),
                peers: Mutex::new(HashMap::new()),
                peers_changed: Condvar::new(),
                subscriptions: Mutex::new(HashMap::new()),
                counters: Counters::default(),
                plain_sequence: AtomicU32::new(0),
                shutdown: AtomicBool::new(false),
            }),
            receiver: Mutex::new(None),
        })
    }

    pub fn name(&self) -> &str {
        &self.inner.config.name
    }

    pub fn profile(&self) -> &SecurityProfile {
        &self.inner.config.profile
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.local_addr
    }

    pub fn stats(&self) -> Stats {
        self.inner.counters.snapshot()
    }

    pub fn peers(&self) -> Vec<PeerInfo> {
        let peers = self.inner.lock_peers();
        let mut out: Vec<_> = peers
            .iter()
            .map(|(addr, p)| PeerInfo {
                name: p.name.clone(),
                addr: *addr,
                established: p.session.is_some() || !self.inner.config.profile.is_crypto(),
            })
            .collect();
        out.sort_by_key(|p| p.addr);
        out
    }

    /// Session state held for the named peer, if established.
    #[doc(hidden)]
    pub fn session_keys(&self, peer_name: &str) -> Option<SessionKeyMaterial> {
        let peers = self.inner.lock_peers();
        peers
            .values()
            .find(|p| p.name == peer_name)
            .and_then(|p| p.session.clone())
    }

    /// Runs the receive loop on a background thread. Idempotent.
    pub fn start(&self) {
        let mut slot = self.receiver.lock().expect("receiver lock");
        if slot.is_none() {
            let inner = Arc::clone(&self.inner);
            let name = format!("{}-recv", inner.config.name);
            let handle = std::thread::Builder::new()
                .name(name)
                .spawn(move || inner.run_receive_loop())
                .expect("spawn receive thread");
            *slot = Some(handle);
        }
    }

    /// Blocks, processing datagrams until [`shutdown`](Self::shutdown).
    pub fn run_receive_loop(&self) {
        self.inner.run_receive_loop();
    }

    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.receiver.lock().expect("receiver lock").take() {
            let _ = handle.join();
        }
    }

    pub fn is_shut_down(&self) -> bool {
        self.inner.shutdown.load(Ordering::SeqCst)
    }

    /// Registers a peer and, for the Crypto profile, runs the handshake. The
    /// peer's certificate must name `peer_name`.
    pub fn connect(&self, peer_name: &str, addr: SocketAddr) -> Result<(), PubsubError> {
        self.inner.connect(Some(peer_name), addr).map(|_| ())
    }

    /// Like [`connect`](Self::connect) but accepts any certified peer and
    /// returns its name.
    pub fn connect_any(&self, addr: SocketAddr) -> Result<String, PubsubError> {
        self.inner.connect(None, addr)
    }

    /// Sends one datagram to every connected peer.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<SendReport, PubsubError> {
        self.inner.publish(topic, payload)
    }

    pub fn subscribe<F>(&self, topic: &str, handler: F) -> Result<(), PubsubError>
    where
        F: Fn(&Delivery, &Outbox<'_>) + Send + Sync + 'static,
    {
        check_topic(topic)?;
        let mut subs = self.inner.subscriptions.lock().expect("subscription lock");
        if subs.contains_key(topic) {
            return Err(PubsubError::DuplicateSubscription(topic.to_owned()));
        }
        subs.insert(topic.to_owned(), Arc::new(handler));
        Ok(())
    }

    pub fn unsubscribe(&self, topic: &str) -> bool {
        self.inner
            .subscriptions
            .lock()
            .expect("subscription lock")
            .remove(topic)
            .is_some()
    }

    /// Largest payload `publish` accepts on `topic` under this profile.
    pub fn max_payload(&self, topic: &str) -> usize {
        self.inner.max_payload(topic)
    }
}

impl Drop for Participant {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn hs_frame(kind: FrameKind, session_id: u64, body: Vec<u8>) -> Vec<u8> {
    Frame {
        kind,
        session_id,
        sequence: 0,
        topic: String::new(),
        body,
    }
    .encode()
    .expect("handshake messages fit in a datagram")
}

fn reject_code(e: &HandshakeError) -> u8 {
    match e {
        HandshakeError::ModeIdentityMismatch => 1,
        HandshakeError::CertificateRejected => 2,
        HandshakeError::BadSignature => 3,
        HandshakeError::SuiteMismatch => 4,
        HandshakeError::MalformedMessage(_) => 5,
        HandshakeError::NonceMismatch => 6,
        HandshakeError::InvalidPeerPublic => 7,
        HandshakeError::StateError { .. } => 8,
    }
}

fn reject_reason(code: u8) -> HandshakeError {
    match code {
        1 => HandshakeError::ModeIdentityMismatch,
        2 => HandshakeError::CertificateRejected,
        3 => HandshakeError::BadSignature,
        4 => HandshakeError::SuiteMismatch,
        6 => HandshakeError::NonceMismatch,
        7 => HandshakeError::InvalidPeerPublic,
        8 => HandshakeError::StateError {
            state: HandshakeState::Idle,
            received: None,
        },
        _ => HandshakeError::MalformedMessage("rejected by peer".into()),
    }
}

impl Inner {
    fn lock_peers(&self) -> MutexGuard<'_, HashMap<SocketAddr, Peer>> {
        self.peers.lock().expect("peer table lock")
    }

    fn send(&self, bytes: &[u8], addr: SocketAddr) {
        if let Err(e) = self.socket.send_to(bytes, addr) {
            debug!("{}: send to {addr} failed: {e}", self.config.name);
        }
    }

    fn receiver_names(&self, peer: &str) -> Vec<String> {
        vec![self.config.name.clone(), peer.to_owned()]
    }

    fn derive_keys(&self, master: &[u8; 32], role: Role, peer: &str) -> SessionKeyMaterial {
        let names = self.receiver_names(peer);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        SessionKeyMaterial::derive(master, role, &refs)
    }

    fn connect(&self, expected: Option<&str>, addr: SocketAddr) -> Result<String, PubsubError> {
        let SecurityProfile::Crypto { suite, fs_mode } = self.config.profile else {
            let name = expected.map_or_else(|| addr.to_string(), str::to_owned);
            let mut peers = self.lock_peers();
            peers
                .entry(addr)
                .or_insert_with(|| Peer::new(name.clone()))
                .name = name.clone();
            return Ok(name);
        };
        let identity = self.config.identity.as_ref().expect("validated at bind");
        let (session, request) = {
            let mut drbg = self.drbg.lock().expect("drbg lock");
            HandshakeSession::begin_request(identity, suite, fs_mode, &mut drbg)
                .map_err(PubsubError::HandshakeFailed)?
        };
        let request_frame = hs_frame(FrameKind::HsReq, 0, request.encode());
        let mut peers = self.lock_peers();
        let peer = peers
            .entry(addr)
            .or_insert_with(|| Peer::new(expected.map_or_else(|| addr.to_string(), str::to_owned)));
        peer.hs = Hs::Pending {
            session,
            expected_name: expected.map(str::to_owned),
        };
        for attempt in 0..=self.config.handshake_retries {
            if attempt > 0 {
                debug!(
                    "{}: resending handshake request to {addr}",
                    self.config.name
                );
            }
            self.send(&request_frame, addr);
            let deadline = Instant::now() + self.config.handshake_timeout;
            loop {
                let peer = peers.get_mut(&addr).expect("peer entry persists");
                match std::mem::replace(&mut peer.hs, Hs::Idle) {
                    Hs::Finished(Ok(())) => {
                        info!(
                            "{}: session established with {}",
                            self.config.name, peer.name
                        );
                        return Ok(peer.name.clone());
                    }
                    Hs::Finished(Err(e)) => {
                        bump(&self.counters.handshake_failures);
                        return Err(PubsubError::HandshakeFailed(e));
                    }
                    pending @ Hs::Pending { .. } => peer.hs = pending,
                    // Displaced by a concurrent handshake with the same address.
                    other => {
                        peer.hs = other;
                        return Err(PubsubError::Timeout);
                    }
                }
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                peers = self
                    .peers_changed
                    .wait_timeout(peers, deadline - now)
                    .expect("peer table lock")
                    .0;
            }
        }
        if let Some(peer) = peers.get_mut(&addr) {
            peer.hs = Hs::Idle;
        }
        Err(PubsubError::Timeout)
    }

    fn max_payload(&self, topic: &str) -> usize {
        let header = FIXED_HEADER_LEN + topic.len();
        match &self.config.profile {
            SecurityProfile::None => MAX_DATAGRAM - header,
            SecurityProfile::Crypto { .. } => {
                let tags = if self.config.receiver_tags {
                    // Names are bounded by the longest peer name in practice;
                    // reserve the worst case so the limit does not depend on the peer.
                    1 + 255 + RECEIVER_TAG_LEN
                } else {
                    0
                };
                MAX_DATAGRAM - header - RECORD_FIXED_OVERHEAD - tags
            }
            SecurityProfile::Tunnel(_) => {
                let outer = FIXED_HEADER_LEN + TUNNEL_TOPIC.len() + TUNNEL_IV_LEN + TUNNEL_MAC_LEN;
                // Largest inner frame whose padded length still fits.
                let room = (MAX_DATAGRAM - outer) / 16 * 16 - 1;
                room - header
            }
        }
    }

    fn publish(&self, topic: &str, payload: &[u8]) -> Result<SendReport, PubsubError> {
        check_topic(topic)?;
        let max = self.max_payload(topic);
        if payload.len() > max {
            return Err(PubsubError::PayloadTooLarge {
                size: payload.len(),
                max,
            });
        }
        let mut report = SendReport::default();
        let mut peers = self.lock_peers();
        let mut plain: Option<Vec<u8>> = None;
        for (addr, peer) in peers.iter_mut() {
            let datagram = match &self.config.profile {
                SecurityProfile::None => plain
                    .get_or_insert_with(|| {
                        let seq = self.plain_sequence.fetch_add(1, Ordering::Relaxed);
                        Frame::data(0, seq, topic, payload.to_vec())
                            .encode()
                            .expect("size checked")
                    })
                    .clone(),
                SecurityProfile::Tunnel(keys) => {
                    let seq = self.plain_sequence.fetch_add(1, Ordering::Relaxed);
                    let inner = Frame::data(0, seq, topic, payload.to_vec());
                    let mut outer = Frame::data(0, seq, TUNNEL_TOPIC, Vec::new());
                    let header = outer.header_bytes();
                    let inner = inner.encode().expect("size checked");
                    outer.body = {
                        let mut drbg = self.drbg.lock().expect("drbg lock");
                        tunnel::seal(keys, &header, &inner, &mut drbg)
                    };
                    outer.encode().expect("size checked")
                }
                SecurityProfile::Crypto { .. } => {
                    let Some(keys) = peer.session.as_mut() else {
                        continue;
                    };
                    let mut frame =
                        Frame::data(keys.session_id(), keys.send_counter(), topic, Vec::new());
                    let receivers: Vec<&str> = if self.config.receiver_tags {
                        vec![peer.name.as_str()]
                    } else {
                        vec![]
                    };
                    let record = keys.protect(&frame.header_bytes(), payload, &receivers)?;
                    frame.body = record.encode();
                    frame.encode().map_err(|_| PubsubError::PayloadTooLarge {
                        size: payload.len(),
                        max,
                    })?
                }
            };
            self.send(&datagram, *addr);
            report.bytes_on_wire += datagram.len();
            report.datagrams += 1;
        }
        if report.datagrams == 0 {
            return Err(PubsubError::NotConnected);
        }
        Ok(report)
    }

    fn run_receive_loop(&self) {
        let mut buf = vec![0u8; 65_536];
        while !self.shutdown.load(Ordering::SeqCst) {
            match self.socket.recv_from(&mut buf) {
                Ok((n, from)) => self.handle_datagram(&buf[..n], from),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) => {
                    debug!("{}: receive error: {e}", self.config.name);
                    std::thread::sleep(Duration::from_millis(1));
                }
            }
        }
        debug!("{}: receive loop stopped", self.config.name);
    }

    fn handle_datagram(&self, bytes: &[u8], from: SocketAddr) {
        let frame = match Frame::decode(bytes) {
            Ok(f) => f,
            Err(e) => {
                debug!("{}: malformed datagram from {from}: {e}", self.config.name);
                bump(&self.counters.malformed);
                return;
            }
        };
        match frame.kind {
            FrameKind::Data => self.handle_data(frame, from),
            FrameKind::BenchCtrl => bump(&self.counters.ignored),
            kind => {
                if !self.config.profile.is_crypto() {
                    bump(&self.counters.unexpected_handshake);
                    return;
                }
                // Handshake frames carry everything in the signed body.
                if frame.sequence != 0 || !frame.topic.is_empty() {
                    bump(&self.counters.malformed);
                    return;
                }
                match kind {
                    FrameKind::HsReq => self.handle_request(&frame, from),
                    FrameKind::HsReply => self.handle_reply(&frame, from),
                    _ => self.handle_final(&frame, from),
                }
            }
        }
    }

    fn handle_request(&self, frame: &Frame, from: SocketAddr) {
        if frame.session_id != 0 {
            bump(&self.counters.malformed);
            return;
        }
        let mut peers = self.lock_peers();
        if let Some(peer) = peers.get(&from) {
            match &peer.hs {
                Hs::Responding {
                    request,
                    reply_frame,
                    ..
                } if *request == frame.body => {
                    self.send(reply_frame, from);
                    return;
                }
                Hs::Pending { .. } => {
                    bump(&self.counters.unexpected_handshake);
                    return;
                }
                _ => {}
            }
        }
        let identity = self.config.identity.as_ref().expect("validated at bind");
        let root = self
            .config
            .trusted_root
            .as_ref()
            .expect("validated at bind");
        let result = {
            let mut drbg = self.drbg.lock().expect("drbg lock");
            HandshakeSession::process_request(identity, root, &frame.body, &mut drbg)
        };
        match result {
            Ok((session, reply)) => {
                let name = session
                    .peer_certificate()
                    .map(|c| c.subject_name.clone())
                    .expect("validated request carries a certificate");
                let reply_frame = hs_frame(FrameKind::HsReply, 0, reply.encode());
                self.send(&reply_frame, from);
                let peer = peers.entry(from).or_insert_with(|| Peer::new(name.clone()));
                peer.hs = Hs::Responding {
                    session,
                    request: frame.body.clone(),
                    reply_frame,
                };
            }
            Err(e) => {
                warn!(
                    "{}: rejected handshake request from {from}: {e}",
                    self.config.name
                );
                bump(&self.counters.handshake_failures);
                if !matches!(e, HandshakeError::MalformedMessage(_)) {
                    let notice = vec![REJECT_MARKER, reject_code(&e)];
                    self.send(&hs_frame(FrameKind::HsReply, 0, notice), from);
                }
            }
        }
    }

    fn handle_reply(&self, frame: &Frame, from: SocketAddr) {
        let mut peers = self.lock_peers();
        let Some(peer) = peers.get_mut(&from) else {
            bump(&self.counters.unexpected_handshake);
            return;
        };
        if let Some((reply, final_frame)) = &peer.final_resend {
            if *reply == frame.body {
                self.send(final_frame, from);
                return;
            }
        }
        let Hs::Pending {
            session,
            expected_name,
            ..
        } = &mut peer.hs
        else {
            bump(&self.counters.unexpected_handshake);
            return;
        };
        if frame.session_id != 0 {
            bump(&self.counters.malformed);
            return;
        }
        if frame.body.len() == 2 && frame.body[0] == REJECT_MARKER {
            peer.hs = Hs::Finished(Err(reject_reason(frame.body[1])));
            self.peers_changed.notify_all();
            return;
        }
        let root = self
            .config
            .trusted_root
            .as_ref()
            .expect("validated at bind");
        let outcome = session
            .process_reply(root, &frame.body)
            .and_then(|(final_msg, master)| {
                let subject = session
                    .peer_certificate()
                    .map(|c| c.subject_name.clone())
                    .expect("validated reply carries a certificate");
                match expected_name {
                    Some(want) if *want != subject => Err(HandshakeError::CertificateRejected),
                    _ => Ok((final_msg, master, subject)),
                }
            });
        match outcome {
            Ok((final_msg, master, subject)) => {
                let keys = self.derive_keys(&master, Role::Initiator, &subject);
                let final_frame =
                    hs_frame(FrameKind::HsFinal, keys.session_id(), final_msg.encode());
                self.send(&final_frame, from);
                peer.name = subject;
                peer.session = Some(keys);
                peer.final_resend = Some((frame.body.clone(), final_frame));
                peer.hs = Hs::Finished(Ok(()));
            }
            Err(e) => {
                warn!("{}: handshake with {from} failed: {e}", self.config.name);
                peer.hs = Hs::Finished(Err(e));
            }
        }
        self.peers_changed.notify_all();
    }

    fn handle_final(&self, frame: &Frame, from: SocketAddr) {
        let mut peers = self.lock_peers();
        let Some(peer) = peers.get_mut(&from) else {
            bump(&self.counters.unexpected_handshake);
            return;
        };
        let Hs::Responding { session, .. } = &mut peer.hs else {
            bump(&self.counters.unexpected_handshake);
            return;
        };
        let subject = session.peer_certificate().map(|c| c.subject_name.clone());
        match session.process_final(&frame.body) {
            Ok(master) => {
                let name = subject.expect("responder session holds the peer certificate");
                let keys = self.derive_keys(&master, Role::Responder, &name);
                if keys.session_id() != frame.session_id {
                    bump(&self.counters.handshake_failures);
                    peer.hs = Hs::Idle;
                    return;
                }
                info!("{}: session established with {name}", self.config.name);
                peer.name = name;
                peer.session = Some(keys);
                peer.final_resend = None;
                peer.hs = Hs::Idle;
            }
            Err(e) => {
                warn!("{}: bad handshake final from {from}: {e}", self.config.name);
                bump(&self.counters.handshake_failures);
                peer.hs = Hs::Idle;
            }
        }
    }

    fn handle_data(&self, frame: Frame, from: SocketAddr) {
        let (topic, payload, peer_name) = match &self.config.profile {
            SecurityProfile::None => {
                if frame.session_id != 0 || frame.topic.starts_with(RESERVED_TOPIC_PREFIX) {
                    bump(&self.counters.profile_mismatch);
                    return;
                }
                (frame.topic, frame.body, self.note_plain_peer(from))
            }
            SecurityProfile::Tunnel(keys) => {
                if frame.session_id != 0 || frame.topic != TUNNEL_TOPIC {
                    bump(&self.counters.profile_mismatch);
                    return;
                }
                let Some(inner) = tunnel::open(keys, &frame.header_bytes(), &frame.body) else {
                    bump(&self.counters.auth_failures);
                    return;
                };
                match Frame::decode(&inner) {
                    Ok(f)
                        if f.kind == FrameKind::Data
                            && f.session_id == 0
                            && !f.topic.starts_with(RESERVED_TOPIC_PREFIX) =>
                    {
                        (f.topic, f.body, self.note_plain_peer(from))
                    }
                    _ => {
                        bump(&self.counters.malformed);
                        return;
                    }
                }
            }
            SecurityProfile::Crypto { .. } => {
                if frame.session_id == 0 {
                    bump(&self.counters.profile_mismatch);
                    return;
                }
                match self.open_crypto(&frame, from) {
                    Some((payload, name)) => (frame.topic, payload, name),
                    None => return,
                }
            }
        };
        self.deliver(Delivery {
            topic,
            payload,
            peer: peer_name,
            addr: from,
        });
    }

    fn note_plain_peer(&self, from: SocketAddr) -> String {
        let mut peers = self.lock_peers();
        peers
            .entry(from)
            .or_insert_with(|| Peer::new(from.to_string()))
            .name
            .clone()
    }

    fn open_crypto(&self, frame: &Frame, from: SocketAddr) -> Option<(Vec<u8>, String)> {
        let mut peers = self.lock_peers();
        let Some(peer) = peers.get_mut(&from) else {
            bump(&self.counters.unknown_session);
            return None;
        };
        let Some(keys) = peer
            .session
            .as_mut()
            .filter(|k| k.session_id() == frame.session_id)
        else {
            // The initiator's Final may have been lost; a fresh copy of our Reply
            // makes it send the Final again.
            if let Hs::Responding { reply_frame, .. } = &peer.hs {
                self.send(reply_frame, from);
            }
            bump(&self.counters.unknown_session);
            return None;
        };
        let counter = frame
            .body
            .get(GCM_IV_LEN - 4..GCM_IV_LEN)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")));
        if counter != Some(frame.sequence) {
            bump(&self.counters.auth_failures);
            return None;
        }
        match keys.unprotect_encoded(&frame.header_bytes(), &frame.body, Some(&self.config.name)) {
            Ok(payload) => Some((payload, peer.name.clone())),
            Err(SessionError::ReplayDetected(n)) => {
                debug!("{}: replayed record {n} from {from}", self.config.name);
                bump(&self.counters.replays);
                None
            }
            Err(e) => {
                debug!("{}: rejected record from {from}: {e}", self.config.name);
                bump(&self.counters.auth_failures);
                None
            }
        }
    }

    fn deliver(&self, delivery: Delivery) {
        let handler = self
            .subscriptions
            .lock()
            .expect("subscription lock")
            .get(&delivery.topic)
            .cloned();
        match handler {
            Some(handler) => {
                bump(&self.counters.delivered);
                handler(&delivery, &Outbox { inner: self });
            }
            None => bump(&self.counters.no_subscriber),
        }
    }
}
