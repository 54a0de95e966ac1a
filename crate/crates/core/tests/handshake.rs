mod common;

use common::Pki;
use sentrybus::crypto::{Drbg, Suite};
use sentrybus::handshake::{FsMode, HandshakeError, HandshakeSession, HandshakeState};
use sentrybus::identity::{Certificate, ParticipantIdentity};

/// Everything needed to rebuild both sides of one handshake exactly.
struct Recorded {
    a: ParticipantIdentity,
    b: ParticipantIdentity,
    root: Certificate,
    mode: FsMode,
    seeds: (u64, u64),
    messages: [Vec<u8>; 3],
    master: [u8; 32],
}

impl Recorded {
    fn new(pki: &mut Pki, suite: Suite, mode: FsMode, seeds: (u64, u64)) -> Recorded {
        let long_term = mode == FsMode::Static;
        let a = pki.identity("alice", suite, long_term);
        let b = pki.identity("bob", suite, long_term);
        let root = pki.ca.certificate().clone();
        let mut rec = Recorded {
            a,
            b,
            root,
            mode,
            seeds,
            messages: Default::default(),
            master: [0; 32],
        };
        let (mut init, req) = rec.initiator();
        let (mut resp, reply) = rec.responder(&req).unwrap();
        let (fin, master) = init.process_reply(&rec.root, &reply).unwrap();
        assert_eq!(resp.process_final(&fin.encode()).unwrap(), master);
        rec.messages = [req, reply, fin.encode()];
        rec.master = master;
        rec
    }

    fn initiator(&self) -> (HandshakeSession, Vec<u8>) {
        let mut drbg = Drbg::from_seed(self.seeds.0);
        let (s, req) =
            HandshakeSession::begin_request(&self.a, self.a.suite(), self.mode, &mut drbg).unwrap();
        (s, req.encode())
    }

    fn responder(&self, request: &[u8]) -> Result<(HandshakeSession, Vec<u8>), HandshakeError> {
        let mut drbg = Drbg::from_seed(self.seeds.1);
        HandshakeSession::process_request(&self.b, &self.root, request, &mut drbg)
            .map(|(s, r)| (s, r.encode()))
    }

    /// Delivers `msgs` to the receive steps of the protocol in order and
    /// reports whether either side reached Established.
    fn deliver(&self, msgs: [&[u8]; 3]) -> bool {
        let (mut init, _) = self.initiator();
        let Ok((mut resp, _)) = self.responder(msgs[0]) else {
            return false;
        };
        let _ = init.process_reply(&self.root, msgs[1]);
        let _ = resp.process_final(msgs[2]);
        init.state() == HandshakeState::Established || resp.state() == HandshakeState::Established
    }
}

#[test]
fn single_bit_mutations_never_establish() {
    let mut pki = Pki::new(700);
    let mut rng = Drbg::from_seed(701);
    let mut below = |n: usize| (u64::from_be_bytes(rng.array()) % n as u64) as usize;
    let configs = [
        (Suite::EcdhP256, FsMode::Ephemeral),
        (Suite::EcdhP256, FsMode::Static),
        (Suite::DhModp2048_256, FsMode::Ephemeral),
        (Suite::DhModp2048_256, FsMode::Static),
    ];
    let records: Vec<Recorded> = configs
        .iter()
        .enumerate()
        .map(|(i, &(suite, mode))| {
            Recorded::new(&mut pki, suite, mode, (10 + i as u64, 20 + i as u64))
        })
        .collect();
    for rec in &records {
        let honest = [
            &rec.messages[0][..],
            &rec.messages[1][..],
            &rec.messages[2][..],
        ];
        assert!(rec.deliver(honest), "replayed honest run must establish");
    }
    for i in 0..1000 {
        let rec = &records[i % records.len()];
        let which = below(3);
        let mut mutated = rec.messages[which].clone();
        let bit = below(mutated.len() * 8);
        mutated[bit / 8] ^= 1 << (bit % 8);

        let (mut init, _) = rec.initiator();
        let failed = match which {
            0 => rec.responder(&mutated).is_err(),
            1 => {
                let r = init.process_reply(&rec.root, &mutated);
                r.is_err() && init.state() == HandshakeState::Failed
            }
            _ => {
                let (mut resp, _) = rec.responder(&rec.messages[0]).unwrap();
                let r = resp.process_final(&mutated);
                r.is_err() && resp.state() == HandshakeState::Failed
            }
        };
        assert!(
            failed,
            "mutation {i}: bit {bit} of message {which} was accepted"
        );
    }
}

#[test]
fn every_wrong_message_order_fails() {
    let mut pki = Pki::new(710);
    for suite in Suite::ALL {
        let rec = Recorded::new(&mut pki, suite, FsMode::Ephemeral, (1, 2));
        let m = &rec.messages;
        let orders = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for order in orders {
            let established = rec.deliver(order.map(|i| &m[i][..]));
            assert_eq!(established, order == [0, 1, 2], "{suite}: order {order:?}");
        }

        // The first out-of-place message is reported as a state error.
        let (mut init, _) = rec.initiator();
        assert!(matches!(
            init.process_reply(&rec.root, &m[2]),
            Err(HandshakeError::StateError { .. })
        ));
        assert_eq!(init.state(), HandshakeState::Failed);
        assert!(matches!(
            rec.responder(&m[1]),
            Err(HandshakeError::StateError { .. })
        ));
        let (mut resp, _) = rec.responder(&m[0]).unwrap();
        assert!(matches!(
            resp.process_final(&m[0]),
            Err(HandshakeError::StateError { .. })
        ));
        assert_eq!(resp.state(), HandshakeState::Failed);
    }
}

#[test]
fn replayed_transcript_reproduces_the_master_secret() {
    let mut pki = Pki::new(720);
    for suite in Suite::ALL {
        for mode in [FsMode::Static, FsMode::Ephemeral] {
            let rec = Recorded::new(&mut pki, suite, mode, (31, 32));
            let (mut init, req) = rec.initiator();
            assert_eq!(req, rec.messages[0]);
            let (mut resp, reply) = rec.responder(&rec.messages[0]).unwrap();
            assert_eq!(reply, rec.messages[1]);
            let (fin, m1) = init.process_reply(&rec.root, &rec.messages[1]).unwrap();
            assert_eq!(fin.encode(), rec.messages[2]);
            let m2 = resp.process_final(&rec.messages[2]).unwrap();
            assert_eq!(m1, rec.master);
            assert_eq!(m2, rec.master);
            assert_eq!(init.transcript(), &rec.messages[..]);
            assert_eq!(resp.transcript(), &rec.messages[..]);
        }
    }
}
