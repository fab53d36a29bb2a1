//! 128-bit compressed capabilities extended with a conditional operation bound.
//!
//! The decoded [`Capability`] is what every check runs on. [`EncodedCapability`]
//! is the bit-exact in-memory form: a metadata word, a cursor word and an
//! out-of-band validity tag.
//!
//! Metadata word layout:
//!
//! ```text
//!  63      52 51  49  48  47        30  29   28      17 16        3 2  0
//! +----------+------+---+------------+----+----------+-----------+----+
//! | perms(12)| p_op | f | otype (18) | IE | T (12)   | B (14)    | 0  |
//! +----------+------+---+------------+----+----------+-----------+----+
//! ```
//!
//! The cursor word is the full 64-bit address for conventional capabilities.
//! Conditional capabilities mask the address to 48 bits and keep the
//! compressed operation top in the freed bits:
//!
//! ```text
//!  63        53 52    48 47                                          0
//! +------------+--------+---------------------------------------------+
//! | O[13:3](11)| O_E (5)| a[47:0]                                     |
//! +------------+--------+---------------------------------------------+
//! ```

mod access;
mod bounds;
mod codec;
pub mod oracle;
mod vector;

use std::fmt;

use bitflags::bitflags;
use serde::Serialize;
use thiserror::Error;

pub use access::{advance_op_top, check_access, Access, AccessVerdict, DenyReason};
pub use bounds::{
    representable_alignment, representable_length, round_bounds, set_bounds, set_op_bounds,
};
pub use codec::{correction, decode, decode_full, encode, DecodeScratch, Decoded, Exponent};
pub use vector::{parse_vector, parse_vectors, VectorError, GOLDEN_VECTORS};

/// Mantissa width of the compressed bounds.
pub const MANTISSA_WIDTH: u32 = 14;
/// Width of an address in the simulated address space.
pub const ADDR_BITS: u32 = 48;
/// One past the highest address any capability may cover.
pub const ADDR_LIMIT: u64 = 1 << ADDR_BITS;
/// Largest exponent for which the operation top keeps byte precision.
pub const MAX_CONDITIONAL_EXP: u32 = 2;
pub const OTYPE_MASK: u32 = (1 << 18) - 1;

bitflags! {
    /// The twelve hardware permission bits. These never grow on derivation.
    #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize)]
    pub struct Permissions: u16 {
        const GLOBAL = 1 << 0;
        const EXECUTE = 1 << 1;
        const LOAD = 1 << 2;
        const STORE = 1 << 3;
        const LOAD_CAP = 1 << 4;
        const STORE_CAP = 1 << 5;
        const STORE_LOCAL_CAP = 1 << 6;
        const SEAL = 1 << 7;
        const INVOKE = 1 << 8;
        const UNSEAL = 1 << 9;
        const ACCESS_SYSTEM_REGS = 1 << 10;
        const SET_CID = 1 << 11;
    }
}

impl Permissions {
    pub fn read(self) -> bool {
        self.contains(Permissions::LOAD)
    }

    pub fn write(self) -> bool {
        self.contains(Permissions::STORE)
    }

    pub fn execute(self) -> bool {
        self.contains(Permissions::EXECUTE)
    }

    pub fn load_cap(self) -> bool {
        self.contains(Permissions::LOAD_CAP)
    }

    pub fn store_cap(self) -> bool {
        self.contains(Permissions::STORE_CAP)
    }
}

/// Conditional-permission kind carried in the three `p_op` bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[repr(u8)]
pub enum CpKind {
    WriteBeforeRead = 0,
    WriteBeforeExecute = 1,
    WriteBeforeReadOnly = 2,
    WriteBeforeExecuteOnly = 3,
    WriteOnce = 4,
    ReadOnce = 5,
    ExecuteOnce = 6,
    /// Enforcement off: the disable bit of fresh capabilities is set.
    Disabled = 7,
}

impl CpKind {
    pub const CONDITIONAL: [CpKind; 7] = [
        CpKind::WriteBeforeRead,
        CpKind::WriteBeforeExecute,
        CpKind::WriteBeforeReadOnly,
        CpKind::WriteBeforeExecuteOnly,
        CpKind::WriteOnce,
        CpKind::ReadOnce,
        CpKind::ExecuteOnce,
    ];

    pub fn from_bits(bits: u8) -> CpKind {
        match bits & 7 {
            0 => CpKind::WriteBeforeRead,
            1 => CpKind::WriteBeforeExecute,
            2 => CpKind::WriteBeforeReadOnly,
            3 => CpKind::WriteBeforeExecuteOnly,
            4 => CpKind::WriteOnce,
            5 => CpKind::ReadOnce,
            6 => CpKind::ExecuteOnce,
            _ => CpKind::Disabled,
        }
    }

    pub fn bits(self) -> u8 {
        self as u8
    }

    pub fn is_conditional(self) -> bool {
        self != CpKind::Disabled
    }

    /// The operation whose occurrence moves the operation bound.
    pub fn tracked(self) -> Option<Access> {
        match self {
            CpKind::WriteBeforeRead
            | CpKind::WriteBeforeExecute
            | CpKind::WriteBeforeReadOnly
            | CpKind::WriteBeforeExecuteOnly
            | CpKind::WriteOnce => Some(Access::Store),
            CpKind::ReadOnce => Some(Access::Load),
            CpKind::ExecuteOnce => Some(Access::Fetch),
            CpKind::Disabled => None,
        }
    }

    /// The permission that is only granted once the tracked operation happened.
    pub fn gated(self) -> Option<Access> {
        match self {
            CpKind::WriteBeforeRead | CpKind::WriteBeforeReadOnly | CpKind::ReadOnce => {
                Some(Access::Load)
            }
            CpKind::WriteBeforeExecute | CpKind::WriteBeforeExecuteOnly | CpKind::ExecuteOnce => {
                Some(Access::Fetch)
            }
            CpKind::WriteOnce => Some(Access::Store),
            CpKind::Disabled => None,
        }
    }

    /// Mnemonic of the instruction that installs this kind.
    pub fn mnemonic(self) -> Option<&'static str> {
        Some(match self {
            CpKind::WriteBeforeRead => "csetwbrbound",
            CpKind::WriteBeforeExecute => "csetwbxbound",
            CpKind::WriteBeforeReadOnly => "csetrobound",
            CpKind::WriteBeforeExecuteOnly => "csetxobound",
            CpKind::WriteOnce => "csetwtbound",
            CpKind::ReadOnce => "csetrtbound",
            CpKind::ExecuteOnce => "csetxtbound",
            CpKind::Disabled => return None,
        })
    }

    pub fn from_mnemonic(m: &str) -> Option<CpKind> {
        CpKind::CONDITIONAL
            .into_iter()
            .find(|k| k.mnemonic() == Some(m))
    }

    pub fn short_name(self) -> &'static str {
        match self {
            CpKind::WriteBeforeRead => "WBR",
            CpKind::WriteBeforeExecute => "WBX",
            CpKind::WriteBeforeReadOnly => "WBRO",
            CpKind::WriteBeforeExecuteOnly => "WBXO",
            CpKind::WriteOnce => "WO",
            CpKind::ReadOnce => "RO",
            CpKind::ExecuteOnce => "XO",
            CpKind::Disabled => "-",
        }
    }
}

/// A decoded capability.
///
/// For conventional capabilities (`cp == Disabled`) `op_top` is unused and
/// kept at zero so that decoded values compare structurally.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Capability {
    pub tag: bool,
    pub perms: Permissions,
    pub cp: CpKind,
    pub otype: u32,
    pub flag: bool,
    pub base: u64,
    pub top: u64,
    pub addr: u64,
    pub op_top: u64,
}

impl Capability {
    /// The boot capability covering `[0, top)` with every permission.
    pub fn root(top: u64) -> Capability {
        Capability {
            tag: true,
            perms: Permissions::all(),
            cp: CpKind::Disabled,
            otype: 0,
            flag: false,
            base: 0,
            top,
            addr: 0,
            op_top: 0,
        }
    }

    pub fn length(&self) -> u64 {
        self.top.saturating_sub(self.base)
    }

    pub fn is_conditional(&self) -> bool {
        self.cp.is_conditional()
    }

    pub fn offset(&self) -> u64 {
        self.addr.wrapping_sub(self.base)
    }

    /// Whether `[addr, addr + size)` lies inside the conventional bounds.
    pub fn in_bounds(&self, addr: u64, size: u64) -> bool {
        let end = addr as u128 + size as u128;
        addr >= self.base && end <= self.top as u128
    }

    pub fn exponent(&self) -> Result<Exponent, CapError> {
        Exponent::for_bounds(self.base, self.top)
    }

    pub fn is_representable(&self) -> bool {
        encode(self).is_ok()
    }

    /// Moves the cursor. The tag is dropped when the result no longer
    /// encodes, matching what the hardware does for out-of-window cursors.
    pub fn with_address(&self, addr: u64) -> Capability {
        let mut out = *self;
        out.addr = addr;
        if out.tag && !out.is_representable() {
            out.tag = false;
        }
        out
    }

    pub fn with_perms(&self, mask: Permissions) -> Capability {
        let mut out = *self;
        out.perms &= mask;
        out
    }

    pub fn encode(&self) -> Result<EncodedCapability, CapError> {
        encode(self)
    }

    /// True when `self` grants nothing beyond `parent`: bounds, permissions
    /// and (for two conditional capabilities of one kind) the operation top.
    pub fn derives_from(&self, parent: &Capability) -> bool {
        let bounds = self.base >= parent.base && self.top <= parent.top;
        let perms = parent.perms.contains(self.perms);
        bounds && perms
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{:#x}, {:#x}) a={:#x}",
            if self.tag { "" } else { "!untagged " },
            self.base,
            self.top,
            self.addr
        )?;
        if self.is_conditional() {
            write!(f, " {} o={:#x}", self.cp.short_name(), self.op_top)?;
        }
        write!(f, " perms={:#05x}", self.perms.bits())
    }
}

/// The in-memory form: two 64-bit words plus the out-of-band tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize)]
pub struct EncodedCapability {
    pub meta: u64,
    pub cursor: u64,
    pub tag: bool,
}

impl EncodedCapability {
    pub fn decode(self) -> Capability {
        decode(self)
    }
}

impl fmt::Display for EncodedCapability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{:016X}:{:016X}",
            u8::from(self.tag),
            self.meta,
            self.cursor
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error, Serialize)]
pub enum CapError {
    #[error("capability is not exactly representable")]
    NotRepresentable,
    #[error("capability tag is not set")]
    TagViolation,
    #[error("requested bounds exceed the source capability")]
    MonotonicityViolation,
    #[error("operation bound may only decrease")]
    OpBoundsIncrease,
    #[error("operation bound needs exponent {0}, at most 2 is encodable")]
    RepresentabilityViolation(u32),
    #[error("upper 16 address bits must be clear for a conditional capability")]
    AddressMaskViolation,
    #[error("operation bound exceeds the capability top")]
    OutOfBounds,
    #[error("capability already carries {current:?}, cannot switch to {requested:?}")]
    KindMismatch { current: CpKind, requested: CpKind },
    #[error("Disabled is not a conditional permission")]
    InvalidKind,
}
