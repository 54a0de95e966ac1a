#![allow(dead_code)]

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use sentrybus::crypto::{Drbg, Suite};
use sentrybus::handshake::FsMode;
use sentrybus::identity::{CertificateAuthority, ParticipantIdentity};
use sentrybus::pubsub::{Participant, ParticipantConfig, SecurityProfile, TunnelKeys};

/// A datagram as it arrived at the proxy, before filtering.
pub type Captured = (Direction, Vec<u8>);

pub const LOCALHOST: &str = "127.0.0.1:0";

pub struct Pki {
    pub drbg: Drbg,
    pub ca: CertificateAuthority,
}

impl Pki {
    pub fn new(seed: u64) -> Self {
        let mut drbg = Drbg::from_seed(seed);
        let ca = CertificateAuthority::create("root", &mut drbg).unwrap();
        Pki { drbg, ca }
    }

    pub fn identity(&mut self, name: &str, suite: Suite, long_term: bool) -> ParticipantIdentity {
        self.ca
            .issue_identity(name, suite, long_term, &mut self.drbg)
            .unwrap()
    }

    pub fn crypto_config(&mut self, name: &str, suite: Suite, mode: FsMode) -> ParticipantConfig {
        let identity = self.identity(name, suite, mode == FsMode::Static);
        let mut cfg = ParticipantConfig::new(
            name,
            SecurityProfile::Crypto {
                suite,
                fs_mode: mode,
            },
        )
        .with_identity(identity, self.ca.certificate().clone());
        cfg.handshake_timeout = Duration::from_millis(500);
        cfg
    }
}

pub fn tunnel_keys() -> TunnelKeys {
    TunnelKeys {
        cipher_key: [0x11; 16],
        mac_key: [0x22; 32],
    }
}

pub fn started(cfg: ParticipantConfig) -> Participant {
    let p = Participant::bind(cfg, LOCALHOST).unwrap();
    p.start();
    p
}

/// Starts both ends of a connected pair; `a` initiates.
pub fn pair(a: ParticipantConfig, b: ParticipantConfig) -> (Participant, Participant) {
    let b_name = b.name.clone();
    let a = started(a);
    let b = started(b);
    a.connect(&b_name, b.local_addr()).unwrap();
    (a, b)
}

/// Polls `cond` until it holds or `timeout` passes.
pub fn wait_for(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    cond()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// From the client toward the server.
    Forward,
    Backward,
}

pub type Filter = Box<dyn FnMut(Direction, &mut Vec<u8>) -> bool + Send>;

/// UDP relay between one client and `server`. The filter may rewrite a
/// datagram or return false to drop it. Every datagram seen is captured.
pub struct Proxy {
    pub addr: SocketAddr,
    pub captured: Arc<Mutex<Vec<Captured>>>,
    socket: Arc<UdpSocket>,
    server: SocketAddr,
    client: Arc<Mutex<Option<SocketAddr>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Proxy {
    pub fn new(server: SocketAddr, mut filter: Filter) -> Self {
        let socket = Arc::new(UdpSocket::bind(LOCALHOST).unwrap());
        socket
            .set_read_timeout(Some(Duration::from_millis(20)))
            .unwrap();
        let addr = socket.local_addr().unwrap();
        let captured = Arc::new(Mutex::new(Vec::new()));
        let client = Arc::new(Mutex::new(None));
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let (socket, captured, client, stop) = (
                socket.clone(),
                captured.clone(),
                client.clone(),
                stop.clone(),
            );
            std::thread::spawn(move || {
                let mut buf = vec![0u8; 65_536];
                while !stop.load(Ordering::SeqCst) {
                    let Ok((n, from)) = socket.recv_from(&mut buf) else {
                        continue;
                    };
                    let mut data = buf[..n].to_vec();
                    let (dir, to) = if from == server {
                        match *client.lock().unwrap() {
                            Some(c) => (Direction::Backward, c),
                            None => continue,
                        }
                    } else {
                        *client.lock().unwrap() = Some(from);
                        (Direction::Forward, server)
                    };
                    captured.lock().unwrap().push((dir, data.clone()));
                    if filter(dir, &mut data) {
                        let _ = socket.send_to(&data, to);
                    }
                }
            })
        };
        Proxy {
            addr,
            captured,
            socket,
            server,
            client,
            stop,
            thread: Some(thread),
        }
    }

    pub fn transparent(server: SocketAddr) -> Self {
        Self::new(server, Box::new(|_, _| true))
    }

    /// Sends raw bytes to the server as if from the client.
    pub fn inject_forward(&self, bytes: &[u8]) {
        self.socket.send_to(bytes, self.server).unwrap();
    }

    pub fn captured(&self, dir: Direction) -> Vec<Vec<u8>> {
        self.captured
            .lock()
            .unwrap()
            .iter()
            .filter(|(d, _)| *d == dir)
            .map(|(_, b)| b.clone())
            .collect()
    }
}

impl Drop for Proxy {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Collects deliveries on `topic` into a shared vector.
pub fn collect(p: &Participant, topic: &str) -> Arc<Mutex<Vec<Vec<u8>>>> {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    p.subscribe(topic, move |d, _| {
        sink.lock().unwrap().push(d.payload.clone())
    })
    .unwrap();
    seen
}
