//! HMAC-DRBG (SHA-256) following NIST SP 800-90A.
//!
//! Every nonce, challenge and private scalar in the crate is drawn from one
//! of these. Instances are single-owner; wrap in a mutex to share.

use hmac::{Hmac, Mac};
use rand_core::{CryptoRng, RngCore};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

const OUT_LEN: usize = 32;

/// Reseed interval from SP 800-90A table 2.
pub const RESEED_INTERVAL: u64 = 1 << 48;

/// Maximum bytes produced by a single generate call (2^19 bits).
const MAX_BYTES_PER_REQUEST: usize = 1 << 16;

pub struct Drbg {
    key: [u8; OUT_LEN],
    value: [u8; OUT_LEN],
    reseed_counter: u64,
}

impl std::fmt::Debug for Drbg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Drbg")
            .field("reseed_counter", &self.reseed_counter)
            .finish_non_exhaustive()
    }
}

impl Drbg {
    /// Instantiate from explicit entropy input, nonce and personalization string.
    pub fn new(entropy: &[u8], nonce: &[u8], personalization: &[u8]) -> Self {
        let mut drbg = Drbg {
            key: [0x00; OUT_LEN],
            value: [0x01; OUT_LEN],
            reseed_counter: 1,
        };
        drbg.update(&[entropy, nonce, personalization]);
        drbg
    }

    /// Instantiate from operating-system entropy (48 bytes entropy + 16 bytes nonce).
    pub fn from_os_entropy(personalization: &[u8]) -> Self {
        let (entropy, nonce) = os_entropy();
        Self::new(&entropy, &nonce, personalization)
    }

    /// Deterministic instance for reproducible runs and tests.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(&seed.to_be_bytes(), b"sentrybus-seeded", b"")
    }

    pub fn reseed(&mut self, entropy: &[u8], additional: &[u8]) {
        self.update(&[entropy, additional]);
        self.reseed_counter = 1;
    }

    pub fn reseed_counter(&self) -> u64 {
        self.reseed_counter
    }

    /// Fill `out` with pseudorandom bytes, reseeding from the OS when the
    /// reseed interval is reached.
    pub fn fill(&mut self, out: &mut [u8]) {
        if out.is_empty() {
            self.generate_one(out);
            return;
        }
        for chunk in out.chunks_mut(MAX_BYTES_PER_REQUEST) {
            self.generate_one(chunk);
        }
    }

    pub fn generate(&mut self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        self.fill(&mut out);
        out
    }

    pub fn array<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        self.fill(&mut out);
        out
    }

    fn generate_one(&mut self, out: &mut [u8]) {
        debug_assert!(out.len() <= MAX_BYTES_PER_REQUEST);
        if self.reseed_counter > RESEED_INTERVAL {
            let (entropy, extra) = os_entropy();
            self.reseed(&entropy, &extra);
        }
        for chunk in out.chunks_mut(OUT_LEN) {
            self.value = self.hmac(&[&self.value]);
            chunk.copy_from_slice(&self.value[..chunk.len()]);
        }
        self.update(&[]);
        self.reseed_counter += 1;
    }

    fn update(&mut self, provided: &[&[u8]]) {
        let has_data = provided.iter().any(|p| !p.is_empty());
        let mut parts: Vec<&[u8]> = Vec::with_capacity(provided.len() + 2);
        let value = self.value;
        parts.push(&value);
        parts.push(&[0x00]);
        parts.extend_from_slice(provided);
        self.key = self.hmac(&parts);
        self.value = self.hmac(&[&self.value]);
        if !has_data {
            return;
        }
        let value = self.value;
        parts[0] = &value;
        parts[1] = &[0x01];
        self.key = self.hmac(&parts);
        self.value = self.hmac(&[&self.value]);
    }

    fn hmac(&self, parts: &[&[u8]]) -> [u8; OUT_LEN] {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length");
        for p in parts {
            mac.update(p);
        }
        mac.finalize().into_bytes().into()
    }

    #[cfg(test)]
    pub(crate) fn set_reseed_counter(&mut self, counter: u64) {
        self.reseed_counter = counter;
    }
}

fn os_entropy() -> ([u8; 48], [u8; 16]) {
    let mut entropy = [0u8; 48];
    let mut nonce = [0u8; 16];
    getrandom::getrandom(&mut entropy).expect("operating system entropy source unavailable");
    getrandom::getrandom(&mut nonce).expect("operating system entropy source unavailable");
    (entropy, nonce)
}

impl RngCore for Drbg {
    fn next_u32(&mut self) -> u32 {
        u32::from_be_bytes(self.array())
    }

    fn next_u64(&mut self) -> u64 {
        u64::from_be_bytes(self.array())
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.fill(dest);
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
        self.fill(dest);
        Ok(())
    }
}

impl CryptoRng for Drbg {}
