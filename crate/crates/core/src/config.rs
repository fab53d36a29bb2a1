use std::fmt;
use std::str::FromStr;

use serde::Serialize;

/// How much of the capability model the machine enforces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No capability checks at all; registers still carry capabilities.
    NoCap,
    /// Conventional tag, permission and bounds checks.
    PureCap,
    /// Conventional checks plus conditional-permission gates.
    Wbr,
}

impl Mode {
    pub fn checks_capabilities(self) -> bool {
        !matches!(self, Mode::NoCap)
    }

    pub fn enforces_conditional(self) -> bool {
        matches!(self, Mode::Wbr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoCap => "nocap",
            Mode::PureCap => "purecap",
            Mode::Wbr => "wbr",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nocap" => Ok(Mode::NoCap),
            "purecap" => Ok(Mode::PureCap),
            "wbr" => Ok(Mode::Wbr),
            other => Err(format!(
                "unknown mode `{other}` (expected nocap, purecap or wbr)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EnforcementConfig {
    pub mode: Mode,
    /// Trap on stores above the operation bound instead of letting them
    /// through without advancing it.
    pub strict_store: bool,
    /// Loads denied by the operation bound yield zero instead of trapping.
    pub auto_init: bool,
}

impl EnforcementConfig {
    pub const fn new(mode: Mode) -> Self {
        EnforcementConfig {
            mode,
            strict_store: false,
            auto_init: false,
        }
    }

    pub const fn wbr() -> Self {
        Self::new(Mode::Wbr)
    }
}

impl Default for EnforcementConfig {
    fn default() -> Self {
        Self::wbr()
    }
}
