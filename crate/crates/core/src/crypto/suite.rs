use std::fmt;
use std::str::FromStr;

use super::CryptoError;

/// The two key-agreement suites of the DDS authentication plugin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    /// Finite-field DH over the 2048-bit MODP group with a 256-bit prime-order subgroup.
    DhModp2048_256,
    /// ECDH over NIST P-256.
    EcdhP256,
}

impl Suite {
    pub const ALL: [Suite; 2] = [Suite::DhModp2048_256, Suite::EcdhP256];

    /// Identifier as used by the DDS security plugins.
    pub fn dds_name(self) -> &'static str {
        match self {
            Suite::DhModp2048_256 => "DH+MODP-2048-256",
            // "CEUM" is carried through as an opaque label.
            Suite::EcdhP256 => "ECDH+prime256v1-CEUM",
        }
    }

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            Suite::DhModp2048_256 => "modp2048",
            Suite::EcdhP256 => "p256",
        }
    }

    pub fn wire_id(self) -> u8 {
        match self {
            Suite::DhModp2048_256 => 1,
            Suite::EcdhP256 => 2,
        }
    }

    pub fn from_wire_id(id: u8) -> Option<Suite> {
        match id {
            1 => Some(Suite::DhModp2048_256),
            2 => Some(Suite::EcdhP256),
            _ => None,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dds_name())
    }
}

impl FromStr for Suite {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| s == suite.dds_name() || s == suite.short_name())
            .ok_or_else(|| CryptoError::UnknownSuite(s.to_owned()))
    }
}
