mod common;

use std::net::UdpSocket;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use proptest::prelude::*;
use sha2::Sha256;

use common::*;
use sentrybus::crypto::{Drbg, Suite};
use sentrybus::handshake::{FsMode, HandshakeError};
use sentrybus::pubsub::{
    Frame, FrameKind, Participant, ParticipantConfig, PubsubError, SecurityProfile,
    FIXED_HEADER_LEN, MAX_DATAGRAM, TUNNEL_TOPIC,
};

const SETTLE: Duration = Duration::from_secs(3);

fn none(name: &str) -> ParticipantConfig {
    ParticipantConfig::new(name, SecurityProfile::None)
}

fn tunnel(name: &str) -> ParticipantConfig {
    ParticipantConfig::new(name, SecurityProfile::Tunnel(tunnel_keys()))
}

fn kind_of(datagram: &[u8]) -> u8 {
    datagram[5]
}

#[test]
fn none_profile_binds_without_identity() {
    assert!(Participant::bind(none("a"), LOCALHOST).is_ok());
}

#[test]
fn crypto_profile_requires_identity() {
    let cfg = ParticipantConfig::new(
        "a",
        SecurityProfile::Crypto {
            suite: Suite::EcdhP256,
            fs_mode: FsMode::Ephemeral,
        },
    );
    assert!(matches!(
        Participant::bind(cfg, LOCALHOST),
        Err(PubsubError::ProfileConfig(_))
    ));
}

#[test]
fn static_mode_requires_certified_agreement_key() {
    let mut pki = Pki::new(1);
    let mut cfg = pki.crypto_config("a", Suite::EcdhP256, FsMode::Ephemeral);
    cfg.profile = SecurityProfile::Crypto {
        suite: Suite::EcdhP256,
        fs_mode: FsMode::Static,
    };
    assert!(matches!(
        Participant::bind(cfg, LOCALHOST),
        Err(PubsubError::ProfileConfig(_))
    ));
}

#[test]
fn second_bind_on_same_port_fails() {
    let a = Participant::bind(none("a"), LOCALHOST).unwrap();
    let again = Participant::bind(none("b"), a.local_addr());
    assert!(matches!(again, Err(PubsubError::BindFailure(_))));
}

#[test]
fn crypto_connect_yields_mirrored_keys() {
    let mut pki = Pki::new(2);
    for suite in Suite::ALL {
        for mode in [FsMode::Static, FsMode::Ephemeral] {
            let (a, b) = pair(
                pki.crypto_config("alice", suite, mode),
                pki.crypto_config("bob", suite, mode),
            );
            assert!(wait_for(SETTLE, || b.session_keys("alice").is_some()));
            let ka = a.session_keys("bob").unwrap();
            let kb = b.session_keys("alice").unwrap();
            assert_eq!(ka.send_key(), kb.recv_key());
            assert_eq!(ka.recv_key(), kb.send_key());
            assert_eq!(ka.session_id(), kb.session_id());
        }
    }
}

#[test]
fn responder_under_other_root_is_rejected() {
    let mut pki = Pki::new(3);
    let mut other = Pki::new(4);
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    let b = started(other.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let err = a.connect("bob", b.local_addr()).unwrap_err();
    assert!(
        matches!(
            err,
            PubsubError::HandshakeFailed(HandshakeError::CertificateRejected)
        ),
        "{err:?}"
    );
    assert!(a.session_keys("bob").is_none());
    assert!(b.session_keys("alice").is_none());
}

#[test]
fn initiator_rejects_responder_certified_elsewhere() {
    // bob trusts alice's root but holds a certificate from another root.
    let mut pki = Pki::new(5);
    let mut other = Pki::new(6);
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    let mut bob_cfg = other.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral);
    bob_cfg.trusted_root = Some(pki.ca.certificate().clone());
    let b = started(bob_cfg);
    let err = a.connect("bob", b.local_addr()).unwrap_err();
    assert!(matches!(
        err,
        PubsubError::HandshakeFailed(HandshakeError::CertificateRejected)
    ));
}

#[test]
fn connect_checks_the_certified_name() {
    let mut pki = Pki::new(7);
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    let b = started(pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let err = a.connect("carol", b.local_addr()).unwrap_err();
    assert!(matches!(
        err,
        PubsubError::HandshakeFailed(HandshakeError::CertificateRejected)
    ));
    assert_eq!(a.connect_any(b.local_addr()).unwrap(), "bob");
}

#[test]
fn none_connect_sends_nothing() {
    let b = started(none("b"));
    let proxy = Proxy::transparent(b.local_addr());
    let a = started(none("a"));
    a.connect("b", proxy.addr).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    assert!(proxy.captured.lock().unwrap().is_empty());
}

#[test]
fn handshake_survives_a_lost_request() {
    let mut pki = Pki::new(8);
    let b = started(pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let dropped = Arc::new(AtomicUsize::new(0));
    let d = dropped.clone();
    let proxy = Proxy::new(
        b.local_addr(),
        Box::new(move |_, data| {
            if kind_of(data) == FrameKind::HsReq as u8 && d.fetch_add(1, Ordering::SeqCst) == 0 {
                return false;
            }
            true
        }),
    );
    let mut cfg = pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral);
    cfg.handshake_timeout = Duration::from_millis(200);
    let a = started(cfg);
    a.connect("bob", proxy.addr).unwrap();
    assert_eq!(dropped.load(Ordering::SeqCst), 2);
}

#[test]
fn lost_final_is_recovered_by_data() {
    let mut pki = Pki::new(9);
    let b = started(pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let seen = collect(&b, "t");
    let mut finals = 0;
    let proxy = Proxy::new(
        b.local_addr(),
        Box::new(move |_, data| {
            if kind_of(data) == FrameKind::HsFinal as u8 {
                finals += 1;
                return finals > 1;
            }
            true
        }),
    );
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    a.connect("bob", proxy.addr).unwrap();
    assert!(b.session_keys("alice").is_none());
    let delivered = wait_for(SETTLE, || {
        a.publish("t", b"hello").unwrap();
        std::thread::sleep(Duration::from_millis(20));
        !seen.lock().unwrap().is_empty()
    });
    assert!(delivered);
    assert!(b.stats().unknown_session >= 1);
}

#[test]
fn bytes_on_wire_none() {
    let (a, _b) = pair(none("a"), none("b"));
    for n in [16usize, 1024, 12000] {
        let r = a.publish("topic", &vec![7; n]).unwrap();
        assert_eq!(r.bytes_on_wire, FIXED_HEADER_LEN + "topic".len() + n);
        assert_eq!(r.datagrams, 1);
    }
}

#[test]
fn bytes_on_wire_crypto() {
    let mut pki = Pki::new(10);
    let (a, _b) = pair(
        pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral),
        pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral),
    );
    let header = FIXED_HEADER_LEN + "topic".len();
    for n in [0usize, 16, 1024, 12000] {
        let r = a.publish("topic", &vec![7; n]).unwrap();
        // iv, ciphertext, tag, then a one-byte receiver-tag count.
        assert_eq!(r.bytes_on_wire, header + 12 + n + 16 + 1);
    }

    let mut cfg = pki.crypto_config("carol", Suite::EcdhP256, FsMode::Ephemeral);
    cfg.receiver_tags = true;
    let (c, _d) = pair(
        cfg,
        pki.crypto_config("dave", Suite::EcdhP256, FsMode::Ephemeral),
    );
    let r = c.publish("topic", &[1; 100]).unwrap();
    assert_eq!(
        r.bytes_on_wire,
        header + 12 + 100 + 16 + 1 + (1 + "dave".len() + 16)
    );
}

#[test]
fn tunnel_body_matches_cbc_hmac_oracle() {
    let b = started(tunnel("b"));
    let proxy = Proxy::transparent(b.local_addr());
    let a = started(tunnel("a"));
    a.connect("b", proxy.addr).unwrap();
    let keys = tunnel_keys();
    let mut drbg = Drbg::from_seed(11);
    for n in [16usize, 1024, 12000] {
        let payload = drbg.generate(n);
        let report = a.publish("topic", &payload).unwrap();
        assert!(wait_for(SETTLE, || proxy
            .captured(Direction::Forward)
            .len()
            == 1));
        let wire = proxy.captured.lock().unwrap().pop().unwrap().1;
        assert_eq!(wire.len(), report.bytes_on_wire);

        let outer = Frame::decode(&wire).unwrap();
        assert_eq!(outer.topic, TUNNEL_TOPIC);
        let inner_len = FIXED_HEADER_LEN + "topic".len() + n;
        let ct_len = (inner_len / 16 + 1) * 16;
        assert_eq!(outer.body.len(), 16 + ct_len + 32);

        let (iv_ct, tag) = outer.body.split_at(16 + ct_len);
        let mut mac = Hmac::<Sha256>::new_from_slice(&keys.mac_key).unwrap();
        mac.update(&outer.header_bytes());
        mac.update(iv_ct);
        mac.verify_slice(tag).unwrap();
        let (iv, ct) = iv_ct.split_at(16);
        let plain = cbc::Decryptor::<aes::Aes128>::new_from_slices(&keys.cipher_key, iv)
            .unwrap()
            .decrypt_padded_vec_mut::<Pkcs7>(ct)
            .unwrap();
        let inner = Frame::decode(&plain).unwrap();
        assert_eq!((inner.topic.as_str(), inner.body), ("topic", payload));
    }
}

#[test]
fn ordered_delivery_and_topic_filtering() {
    for (a_cfg, b_cfg) in [(none("a"), none("b")), (tunnel("a"), tunnel("b"))] {
        let b = started(b_cfg);
        let seen = collect(&b, "t1");
        let a = started(a_cfg);
        a.connect("b", b.local_addr()).unwrap();
        for msg in [&b"one"[..], b"two", b"three"] {
            a.publish("t1", msg).unwrap();
        }
        a.publish("t2", b"elsewhere").unwrap();
        assert!(wait_for(SETTLE, || b.stats().no_subscriber == 1));
        assert_eq!(
            *seen.lock().unwrap(),
            vec![b"one".to_vec(), b"two".to_vec(), b"three".to_vec()]
        );
    }
}

#[test]
fn crypto_tamper_and_replay_are_counted() {
    let mut pki = Pki::new(12);
    let b = started(pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let seen = collect(&b, "t");
    let mut data_frames = 0;
    // Flip one ciphertext bit of the second DATA frame in flight.
    let proxy = Proxy::new(
        b.local_addr(),
        Box::new(move |_, data| {
            if kind_of(data) == FrameKind::Data as u8 {
                data_frames += 1;
                if data_frames == 2 {
                    let i = data.len() - 20;
                    data[i] ^= 0x01;
                }
            }
            true
        }),
    );
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    a.connect("bob", proxy.addr).unwrap();
    a.publish("t", b"genuine").unwrap();
    assert!(wait_for(SETTLE, || seen.lock().unwrap().len() == 1));
    a.publish("t", b"tampered").unwrap();
    assert!(wait_for(SETTLE, || b.stats().auth_failures == 1));

    let first = proxy
        .captured(Direction::Forward)
        .into_iter()
        .find(|d| kind_of(d) == FrameKind::Data as u8)
        .unwrap();
    proxy.inject_forward(&first);
    assert!(wait_for(SETTLE, || b.stats().replays == 1));
    assert_eq!(*seen.lock().unwrap(), vec![b"genuine".to_vec()]);
}

#[test]
fn garbage_is_counted_and_loop_survives() {
    let (a, b) = pair(none("a"), none("b"));
    let seen = collect(&b, "t");
    let raw = UdpSocket::bind(LOCALHOST).unwrap();
    raw.send_to(b"definitely not a frame", b.local_addr())
        .unwrap();
    assert!(wait_for(SETTLE, || b.stats().malformed == 1));
    a.publish("t", b"still alive").unwrap();
    assert!(wait_for(SETTLE, || seen.lock().unwrap().len() == 1));
}

#[test]
fn shutdown_stops_the_loop() {
    let p = started(none("a"));
    p.shutdown();
    assert!(p.is_shut_down());
}

#[test]
fn none_subscriber_never_yields_protected_payloads() {
    // Tunnel publisher straight at a None subscriber.
    let sub = started(none("sub"));
    let seen = collect(&sub, "t");
    let tun = started(tunnel("tun"));
    tun.connect("sub", sub.local_addr()).unwrap();
    for i in 0..100u32 {
        tun.publish("t", &i.to_be_bytes().repeat(4)).unwrap();
    }

    // Captured Crypto frames replayed at the same subscriber.
    let mut pki = Pki::new(13);
    let b = started(pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let proxy = Proxy::transparent(b.local_addr());
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    a.connect("bob", proxy.addr).unwrap();
    for i in 0..100u32 {
        a.publish("t", &i.to_be_bytes().repeat(4)).unwrap();
    }
    assert!(wait_for(SETTLE, || proxy
        .captured(Direction::Forward)
        .len()
        >= 102));
    let raw = UdpSocket::bind(LOCALHOST).unwrap();
    for d in proxy.captured(Direction::Forward) {
        if kind_of(&d) == FrameKind::Data as u8 {
            raw.send_to(&d, sub.local_addr()).unwrap();
        }
    }
    assert!(wait_for(SETTLE, || sub.stats().profile_mismatch == 200));
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn captured_traffic_hides_plaintext() {
    let mut pki = Pki::new(14);
    let mut drbg = Drbg::from_seed(15);
    let configs: Vec<(ParticipantConfig, ParticipantConfig)> = vec![
        (
            pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral),
            pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral),
        ),
        (tunnel("alice"), tunnel("bob")),
    ];
    for (a_cfg, b_cfg) in configs {
        let b = started(b_cfg);
        let proxy = Proxy::transparent(b.local_addr());
        let a = started(a_cfg);
        a.connect("bob", proxy.addr).unwrap();
        let payload = drbg.generate(4096);
        a.publish("t", &payload).unwrap();
        assert!(wait_for(SETTLE, || proxy
            .captured(Direction::Forward)
            .iter()
            .any(|d| kind_of(d) == FrameKind::Data as u8)));
        for datagram in proxy.captured(Direction::Forward) {
            for window in payload.windows(16) {
                assert!(!datagram.windows(16).any(|w| w == window));
            }
        }
    }
}

#[test]
fn lossy_transport_never_blocks_later_frames() {
    let mut pki = Pki::new(16);
    let b = started(pki.crypto_config("bob", Suite::EcdhP256, FsMode::Ephemeral));
    let seen = collect(&b, "t");
    let mut n = 0u32;
    let proxy = Proxy::new(
        b.local_addr(),
        Box::new(move |_, data| {
            if kind_of(data) != FrameKind::Data as u8 {
                return true;
            }
            n += 1;
            !n.is_multiple_of(3)
        }),
    );
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    a.connect("bob", proxy.addr).unwrap();
    for i in 0..30u8 {
        a.publish("t", &[i; 16]).unwrap();
        std::thread::sleep(Duration::from_millis(1));
    }
    assert!(wait_for(SETTLE, || seen.lock().unwrap().len() == 20));
    let got: Vec<u8> = seen.lock().unwrap().iter().map(|p| p[0]).collect();
    let want: Vec<u8> = (0..30u8).filter(|i| (i + 1) % 3 != 0).collect();
    assert_eq!(got, want);
}

#[test]
fn subscribe_rules() {
    let p = Participant::bind(none("a"), LOCALHOST).unwrap();
    p.subscribe("t", |_, _| {}).unwrap();
    assert!(matches!(
        p.subscribe("t", |_, _| {}),
        Err(PubsubError::DuplicateSubscription(_))
    ));
    assert!(matches!(
        p.subscribe(TUNNEL_TOPIC, |_, _| {}),
        Err(PubsubError::InvalidTopic(_))
    ));
    assert!(matches!(
        p.subscribe("", |_, _| {}),
        Err(PubsubError::InvalidTopic(_))
    ));
    assert!(p.unsubscribe("t"));
    p.subscribe("t", |_, _| {}).unwrap();
}

#[test]
fn publish_errors() {
    let a = Participant::bind(none("a"), LOCALHOST).unwrap();
    assert!(matches!(
        a.publish("t", b"x"),
        Err(PubsubError::NotConnected)
    ));
    let (a, _b) = pair(none("a"), none("b"));
    let max = a.max_payload("t");
    assert_eq!(max, MAX_DATAGRAM - FIXED_HEADER_LEN - 1);
    assert!(matches!(
        a.publish("t", &vec![0; max + 1]),
        Err(PubsubError::PayloadTooLarge { .. })
    ));
}

#[test]
fn crypto_publish_before_connect_is_not_connected() {
    let mut pki = Pki::new(17);
    let a = started(pki.crypto_config("alice", Suite::EcdhP256, FsMode::Ephemeral));
    assert!(matches!(
        a.publish("t", b"x"),
        Err(PubsubError::NotConnected)
    ));
}

#[test]
fn handshake_frames_are_unexpected_without_crypto() {
    let b = started(none("b"));
    let raw = UdpSocket::bind(LOCALHOST).unwrap();
    let f = Frame {
        kind: FrameKind::HsReq,
        session_id: 0,
        sequence: 0,
        topic: String::new(),
        body: vec![1],
    };
    raw.send_to(&f.encode().unwrap(), b.local_addr()).unwrap();
    assert!(wait_for(SETTLE, || b.stats().unexpected_handshake == 1));
}

fn any_frame() -> impl Strategy<Value = Frame> {
    (
        0usize..5,
        any::<u64>(),
        any::<u32>(),
        "[a-z/]{0,40}",
        proptest::collection::vec(any::<u8>(), 0..256),
    )
        .prop_filter_map(
            "DATA frames need a topic",
            |(k, session_id, sequence, topic, body)| {
                let kind = FrameKind::ALL[k];
                (kind != FrameKind::Data || !topic.is_empty()).then_some(Frame {
                    kind,
                    session_id,
                    sequence,
                    topic,
                    body,
                })
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn frame_codec_round_trips(frame in any_frame()) {
        let bytes = frame.encode().unwrap();
        prop_assert_eq!(bytes.len(), frame.encoded_len());
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), frame);
    }
}
