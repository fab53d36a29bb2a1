//! Lowering from MIR to machine assembly.
//!
//! Calling convention: arguments in `c4..c7`, result in `c4`, every register
//! caller-saved. `c1` holds the return address and `c2` the stack
//! capability. Registers `c4` upwards are allocatable, `c12..c15` are
//! scratch. Each frame holds the saved return address at offset 0, then the
//! stack variables, then the spill slots.

mod alloc;
mod emit;

pub use alloc::{linear_scan, Allocation, Interval, Loc};

use thiserror::Error;

use crate::mir::passes::{
    pass_bound_allocas, pass_cp_instrument, pass_optimize, pass_store_linearize, InstrumentMode,
};
use crate::mir::Module;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LowerOptions {
    pub apply_cp_instrument: Option<InstrumentMode>,
    pub apply_store_linearize: bool,
    /// Allocatable registers, 4 to 8.
    pub registers: usize,
    pub emit_comments: bool,
    /// Emit bounds instructions. Off when targeting a machine without
    /// capability checks.
    pub capabilities: bool,
}

impl Default for LowerOptions {
    fn default() -> Self {
        LowerOptions {
            apply_cp_instrument: Some(InstrumentMode::AnnotatedFunctions),
            apply_store_linearize: true,
            registers: 8,
            emit_comments: false,
            capabilities: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoweringError {
    #[error("register count {0} is outside 4..=8")]
    Registers(usize),
    #[error("module has no @main")]
    NoMain,
    #[error("@{function}, line {line}: {message}")]
    Unsupported {
        function: String,
        line: usize,
        message: String,
    },
}

/// Runs the pass pipeline selected by `opts`: optimization, optional
/// instrumentation, stack bounds, optional store linearization.
pub fn prepare(module: &Module, opts: &LowerOptions) -> Module {
    let mut m = pass_optimize(module);
    if let Some(mode) = opts.apply_cp_instrument {
        m = pass_cp_instrument(&m, mode);
    }
    m = pass_bound_allocas(&m);
    if opts.apply_store_linearize {
        m = pass_store_linearize(&m);
    }
    m
}

/// Applies the pipeline and emits assembly for the whole module.
pub fn lower(module: &Module, opts: &LowerOptions) -> Result<String, LoweringError> {
    lower_prepared(&prepare(module, opts), opts)
}

/// Emits assembly for a module as is.
pub fn lower_prepared(module: &Module, opts: &LowerOptions) -> Result<String, LoweringError> {
    if !(4..=8).contains(&opts.registers) {
        return Err(LoweringError::Registers(opts.registers));
    }
    if module.function("main").is_none() {
        return Err(LoweringError::NoMain);
    }
    let mut out = String::from("_start:\n  call main\n  ecall 0\n");
    for func in &module.functions {
        out.push('\n');
        emit::emit_function(func, opts, &mut out)?;
    }
    Ok(out)
}
