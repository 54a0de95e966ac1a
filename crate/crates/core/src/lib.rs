pub mod bench;
pub mod crypto;
pub mod handshake;
pub mod identity;
pub mod pubsub;
pub mod report;
pub mod session;
pub mod tlv;
