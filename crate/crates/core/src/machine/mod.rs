//! Register machine with merged integer/capability registers and tagged
//! memory.
//!
//! Memory is split into three regions: code at the bottom (`4` bytes per
//! instruction), the heap in the middle and the stack in the top quarter.
//! At reset `c3` holds the root capability, `c2` a stack capability with its
//! cursor at the stack top, and the PCC is the root capability.

mod asm;
mod exec;
mod isa;
mod memory;

use std::fmt;
use std::ops::{Add, AddAssign, Mul};

use serde::Serialize;
use thiserror::Error;

pub use asm::{assemble, ParseError, Program};
pub use isa::{
    AluOp, BranchOp, CapField, Category, Instr, Operand, Reg, Width, A0, INSTR_BYTES, NUM_REGS, RA,
    ROOT, SP, ZERO,
};
pub use memory::{TaggedMemory, GRANULE};

use crate::cap::{representable_alignment, set_bounds, Capability, ADDR_LIMIT};
use crate::config::EnforcementConfig;
use crate::runtime::{heap_perms, HeapState};

pub const DEFAULT_MEMSIZE: u64 = 1 << 20;
pub const MIN_MEMSIZE: u64 = 4096;

/// Runtime call numbers for `ecall`.
pub mod ecall {
    pub const EXIT: u32 = 0;
    pub const MALLOC: u32 = 1;
    pub const FREE: u32 = 2;
    pub const PRINT_INT: u32 = 3;
    pub const MALLOC_ZEROED: u32 = 4;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Register {
    Int(u64),
    Cap(Capability),
}

impl Register {
    /// Integer view. A capability reads as its cursor.
    pub fn as_int(&self) -> u64 {
        match self {
            Register::Int(v) => *v,
            Register::Cap(c) => c.addr,
        }
    }

    pub fn tag(&self) -> bool {
        matches!(self, Register::Cap(c) if c.tag)
    }

    pub fn cap(&self) -> Option<&Capability> {
        match self {
            Register::Cap(c) => Some(c),
            Register::Int(_) => None,
        }
    }
}

impl Default for Register {
    fn default() -> Self {
        Register::Int(0)
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Register::Int(v) => write!(f, "{}", *v as i64),
            Register::Cap(c) => write!(f, "{c}"),
        }
    }
}

/// Instruction counts per category. Runtime calls add their modeled cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub integer: u64,
    pub branch: u64,
    pub load: u64,
    pub store: u64,
    pub cap: u64,
    pub runtime_call: u64,
}

impl Counters {
    pub fn total(&self) -> u64 {
        self.integer + self.branch + self.load + self.store + self.cap + self.runtime_call
    }

    pub fn bump(&mut self, category: Category) {
        match category {
            Category::Integer => self.integer += 1,
            Category::Branch => self.branch += 1,
            Category::Load => self.load += 1,
            Category::Store => self.store += 1,
            Category::Cap => self.cap += 1,
            Category::RuntimeCall => self.runtime_call += 1,
        }
    }
}

impl Add for Counters {
    type Output = Counters;

    fn add(self, o: Counters) -> Counters {
        Counters {
            integer: self.integer + o.integer,
            branch: self.branch + o.branch,
            load: self.load + o.load,
            store: self.store + o.store,
            cap: self.cap + o.cap,
            runtime_call: self.runtime_call + o.runtime_call,
        }
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Counters) {
        *self = *self + o;
    }
}

impl Mul<u64> for Counters {
    type Output = Counters;

    fn mul(self, k: u64) -> Counters {
        Counters {
            integer: self.integer * k,
            branch: self.branch * k,
            load: self.load * k,
            store: self.store * k,
            cap: self.cap * k,
            runtime_call: self.runtime_call * k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TrapKind {
    TagViolation,
    PermitLoadViolation,
    PermitStoreViolation,
    PermitExecuteViolation,
    BoundsViolation,
    OpBoundsViolation,
    AddressMaskViolation,
    RepresentabilityViolation,
    MisalignedCapAccess,
    UnknownInstruction,
    InvalidFree,
    OutOfFuel,
}

impl TrapKind {
    pub const ALL: [TrapKind; 12] = [
        TrapKind::TagViolation,
        TrapKind::PermitLoadViolation,
        TrapKind::PermitStoreViolation,
        TrapKind::PermitExecuteViolation,
        TrapKind::BoundsViolation,
        TrapKind::OpBoundsViolation,
        TrapKind::AddressMaskViolation,
        TrapKind::RepresentabilityViolation,
        TrapKind::MisalignedCapAccess,
        TrapKind::UnknownInstruction,
        TrapKind::InvalidFree,
        TrapKind::OutOfFuel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrapKind::TagViolation => "TagViolation",
            TrapKind::PermitLoadViolation => "PermitLoadViolation",
            TrapKind::PermitStoreViolation => "PermitStoreViolation",
            TrapKind::PermitExecuteViolation => "PermitExecuteViolation",
            TrapKind::BoundsViolation => "BoundsViolation",
            TrapKind::OpBoundsViolation => "OpBoundsViolation",
            TrapKind::AddressMaskViolation => "AddressMaskViolation",
            TrapKind::RepresentabilityViolation => "RepresentabilityViolation",
            TrapKind::MisalignedCapAccess => "MisalignedCapAccess",
            TrapKind::UnknownInstruction => "UnknownInstruction",
            TrapKind::InvalidFree => "InvalidFree",
            TrapKind::OutOfFuel => "OutOfFuel",
        }
    }

    pub fn from_name(name: &str) -> Option<TrapKind> {
        TrapKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrapReport {
    pub kind: TrapKind,
    pub pc: u64,
    /// The capability the faulting check ran on.
    pub cap: Option<Capability>,
    /// Faulting byte range `[start, end)`.
    pub access: Option<(u64, u64)>,
}

impl fmt::Display for TrapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TRAP {} @pc={:#x}", self.kind, self.pc)?;
        if let Some((lo, hi)) = self.access {
            write!(f, " range=[{lo:#x}, {hi:#x})")?;
        }
        if let Some(cap) = &self.cap {
            write!(f, " cap={cap}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Running,
    Halted(i64),
    Trapped(TrapReport),
}

/// A load the operation bound denied and that read zero instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ZeroFill {
    pub pc: u64,
    pub addr: u64,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("memory size {0} must be at least 4 KiB and a multiple of 16")]
    MemorySize(u64),
    #[error("program of {0} instructions does not fit the code region")]
    ProgramTooLarge(usize),
}

/// Region boundaries derived from the memory size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub code_end: u64,
    pub stack_base: u64,
    pub stack_top: u64,
}

impl Layout {
    pub fn for_memsize(memsize: u64) -> Layout {
        let stack_len = memsize / 4;
        let align = representable_alignment(stack_len).max(GRANULE);
        let stack_base = (memsize - stack_len) / align * align;
        Layout {
            code_end: memsize / 8 / GRANULE * GRANULE,
            stack_base,
            stack_top: stack_base + stack_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub regs: [Register; NUM_REGS],
    pub pcc: Capability,
    pub mem: TaggedMemory,
    pub heap: HeapState,
    pub layout: Layout,
    pub counters: Counters,
    /// Guest instructions retired; fuel is measured against this.
    pub retired: u64,
    pub status: Status,
    pub output: Vec<i64>,
    pub zero_fills: Vec<ZeroFill>,
}

/// Fresh machine state for `memsize` bytes of memory.
pub fn reset(memsize: u64) -> Result<MachineState, ConfigError> {
    if memsize < MIN_MEMSIZE || !memsize.is_multiple_of(GRANULE) || memsize > ADDR_LIMIT {
        return Err(ConfigError::MemorySize(memsize));
    }
    let layout = Layout::for_memsize(memsize);
    let root = Capability::root(memsize);
    let stack = set_bounds(
        &root.with_address(layout.stack_base),
        layout.stack_top - layout.stack_base,
    )
    .expect("stack region is aligned")
    .with_perms(heap_perms())
    .with_address(layout.stack_top);
    let align = representable_alignment(layout.stack_base - layout.code_end);
    let heap_base = layout.code_end.div_ceil(align) * align;
    let heap_top = layout.stack_base / align * align;
    let arena = set_bounds(&root.with_address(heap_base), heap_top - heap_base)
        .expect("heap region lies inside memory")
        .with_perms(heap_perms());

    let mut regs = [Register::Int(0); NUM_REGS];
    regs[SP as usize] = Register::Cap(stack);
    regs[ROOT as usize] = Register::Cap(root);
    Ok(MachineState {
        regs,
        pcc: root,
        mem: TaggedMemory::new(memsize),
        heap: HeapState::new(arena),
        layout,
        counters: Counters::default(),
        retired: 0,
        status: Status::Running,
        output: Vec::new(),
        zero_fills: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunResult {
    pub status: Status,
    pub counters: Counters,
    pub retired: u64,
    pub output: Vec<i64>,
    pub zero_fills: Vec<ZeroFill>,
}

impl RunResult {
    pub fn trap(&self) -> Option<&TrapReport> {
        match &self.status {
            Status::Trapped(t) => Some(t),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> Option<i64> {
        match self.status {
            Status::Halted(code) => Some(code),
            _ => None,
        }
    }
}

/// A program loaded into a machine.
#[derive(Clone, Debug)]
pub struct Machine {
    pub program: Program,
    pub config: EnforcementConfig,
    pub state: MachineState,
}

impl Machine {
    pub fn new(
        program: Program,
        config: EnforcementConfig,
        memsize: u64,
    ) -> Result<Machine, ConfigError> {
        let mut state = reset(memsize)?;
        if program.len() as u64 * INSTR_BYTES > state.layout.code_end {
            return Err(ConfigError::ProgramTooLarge(program.len()));
        }
        state.pcc = state.pcc.with_address(program.entry as u64 * INSTR_BYTES);
        Ok(Machine {
            program,
            config,
            state,
        })
    }

    pub fn reg(&self, r: Reg) -> Register {
        self.state.regs[r as usize]
    }

    /// Executes one instruction. Does nothing once the machine stopped.
    pub fn step(&mut self) {
        if self.state.status != Status::Running {
            return;
        }
        if let Err(trap) = exec::step(&mut self.state, &self.program, &self.config) {
            self.state.status = Status::Trapped(trap);
        }
    }

    /// Steps until the machine halts, traps or has retired `fuel` instructions.
    pub fn run(&mut self, fuel: u64) -> RunResult {
        while self.state.status == Status::Running {
            if self.state.retired >= fuel {
                self.state.status = Status::Trapped(TrapReport {
                    kind: TrapKind::OutOfFuel,
                    pc: self.state.pcc.addr,
                    cap: None,
                    access: None,
                });
                break;
            }
            self.step();
        }
        self.result()
    }

    pub fn result(&self) -> RunResult {
        RunResult {
            status: self.state.status,
            counters: self.state.counters,
            retired: self.state.retired,
            output: self.state.output.clone(),
            zero_fills: self.state.zero_fills.clone(),
        }
    }
}

/// Runs `program` on a fresh machine with the default memory size.
pub fn run(program: &Program, config: EnforcementConfig, fuel: u64) -> RunResult {
    run_with_memory(program, config, fuel, DEFAULT_MEMSIZE).expect("default memory size is valid")
}

pub fn run_with_memory(
    program: &Program,
    config: EnforcementConfig,
    fuel: u64,
    memsize: u64,
) -> Result<RunResult, ConfigError> {
    Ok(Machine::new(program.clone(), config, memsize)?.run(fuel))
}
