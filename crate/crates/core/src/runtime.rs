//! Guest heap behind the `MALLOC`/`FREE` runtime calls.
//!
//! Power-of-two size classes with segregated free lists on top of a bump
//! region. Every block has a 16-byte header below its user region holding the
//! class size. The allocator runs on the host; its guest-visible cost is a
//! fixed instruction count per call, plus three instructions per 8-byte word
//! for the zero-fill of `MALLOC_ZEROED`.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::cap::{
    representable_alignment, set_bounds, set_op_bounds, CapError, Capability, CpKind, Permissions,
};
use crate::machine::{Counters, TaggedMemory};

pub const HEADER: u64 = 16;
pub const MIN_CLASS: u64 = 16;

/// Cost of a call to `malloc` without any operation-bound setup.
pub const MALLOC_COST: Counters = Counters {
    integer: 10,
    branch: 3,
    load: 2,
    store: 1,
    cap: 2,
    runtime_call: 0,
};
/// Cost of a call to `free`.
pub const FREE_COST: Counters = Counters {
    integer: 6,
    branch: 2,
    load: 1,
    store: 1,
    cap: 0,
    runtime_call: 0,
};
/// Extra cost of installing the Write-before-Read bound: one `csetwbrbound`.
pub const OP_BOUNDS_COST: Counters = Counters {
    integer: 0,
    branch: 0,
    load: 0,
    store: 0,
    cap: 1,
    runtime_call: 0,
};
/// Cost per 8-byte word of the zero-fill loop: store, pointer bump, branch.
pub const ZERO_WORD_COST: Counters = Counters {
    integer: 1,
    branch: 1,
    load: 0,
    store: 1,
    cap: 0,
    runtime_call: 0,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error, Serialize)]
pub enum HeapError {
    #[error("heap exhausted")]
    OutOfMemory,
    #[error("zero-sized allocation")]
    ZeroSize,
    #[error("free of a pointer the heap did not hand out")]
    InvalidFree,
    #[error("allocation capability: {0}")]
    Capability(CapError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HeapStats {
    pub mallocs: u64,
    pub frees: u64,
    pub live_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeapState {
    /// Capability over the whole heap region; every block is derived from it.
    pub arena: Capability,
    free_lists: BTreeMap<u64, Vec<u64>>,
    live: BTreeMap<u64, u64>,
    bump: u64,
    end: u64,
    pub stats: HeapStats,
}

impl HeapState {
    /// `arena` must be tagged, unconditional and carry load/store rights.
    pub fn new(arena: Capability) -> HeapState {
        HeapState {
            arena,
            free_lists: BTreeMap::new(),
            live: BTreeMap::new(),
            bump: arena.base,
            end: arena.top,
            stats: HeapStats::default(),
        }
    }

    pub fn size_class(size: u64) -> u64 {
        size.max(MIN_CLASS).next_power_of_two()
    }

    pub fn is_live(&self, base: u64) -> bool {
        self.live.contains_key(&base)
    }

    /// Allocates `size` bytes.
    ///
    /// With `op_bounds` the capability comes back Write-before-Read with an
    /// empty readable prefix. With `zeroed` the region is cleared and the
    /// capability stays unconditional. The returned counters are the guest
    /// cost of the call.
    pub fn rt_malloc(
        &mut self,
        mem: &mut TaggedMemory,
        size: u64,
        zeroed: bool,
        op_bounds: bool,
    ) -> Result<(Capability, Counters), HeapError> {
        if size == 0 {
            return Err(HeapError::ZeroSize);
        }
        let class = HeapState::size_class(size);
        let base = match self.free_lists.get_mut(&class).and_then(Vec::pop) {
            Some(base) => base,
            None => self.carve(class)?,
        };
        let user =
            set_bounds(&self.arena.with_address(base), class).map_err(HeapError::Capability)?;
        let mut cost = MALLOC_COST;
        let cap = if zeroed {
            mem.fill(base, class, 0);
            cost += ZERO_WORD_COST * (class / 8);
            user
        } else if op_bounds {
            cost += OP_BOUNDS_COST;
            set_op_bounds(&user, CpKind::WriteBeforeRead, 0).map_err(HeapError::Capability)?
        } else {
            user
        };
        mem.write(base - HEADER, 8, class);
        self.live.insert(base, class);
        self.stats.mallocs += 1;
        self.stats.live_bytes += class;
        Ok((cap, cost))
    }

    /// Returns a block to its free list. Nothing is revoked: stale copies of
    /// the capability keep working.
    pub fn rt_free(&mut self, cap: &Capability) -> Result<Counters, HeapError> {
        if !cap.tag || cap.addr != cap.base {
            return Err(HeapError::InvalidFree);
        }
        let class = self.live.remove(&cap.base).ok_or(HeapError::InvalidFree)?;
        self.free_lists.entry(class).or_default().push(cap.base);
        self.stats.frees += 1;
        self.stats.live_bytes -= class;
        Ok(FREE_COST)
    }

    fn carve(&mut self, class: u64) -> Result<u64, HeapError> {
        let align = representable_alignment(class).max(MIN_CLASS);
        let base = (self.bump + HEADER).div_ceil(align) * align;
        let end = base.checked_add(class).ok_or(HeapError::OutOfMemory)?;
        if end > self.end {
            return Err(HeapError::OutOfMemory);
        }
        self.bump = end;
        Ok(base)
    }
}

/// Permissions of heap capabilities.
pub fn heap_perms() -> Permissions {
    Permissions::GLOBAL
        | Permissions::LOAD
        | Permissions::STORE
        | Permissions::LOAD_CAP
        | Permissions::STORE_CAP
}
