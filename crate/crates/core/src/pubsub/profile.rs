use std::fmt;

use crate::crypto::Suite;
use crate::handshake::FsMode;

use super::tunnel::TunnelKeys;

/// How DATA frames are protected. Both endpoints must use the same profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SecurityProfile {
    None,
    Crypto { suite: Suite, fs_mode: FsMode },
    Tunnel(TunnelKeys),
}

impl SecurityProfile {
    pub fn label(&self) -> &'static str {
        match self {
            SecurityProfile::None => "none",
            SecurityProfile::Crypto { .. } => "crypto",
            SecurityProfile::Tunnel(_) => "tunnel",
        }
    }

    pub fn is_crypto(&self) -> bool {
        matches!(self, SecurityProfile::Crypto { .. })
    }
}

impl fmt::Display for SecurityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecurityProfile::Crypto { suite, fs_mode } => {
                write!(f, "crypto({}, {})", suite.short_name(), fs_mode.label())
            }
            other => f.write_str(other.label()),
        }
    }
}
