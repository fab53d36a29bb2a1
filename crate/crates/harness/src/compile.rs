//! Turning corpus and benchmark sources into machine programs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use monvm_compiler::backend::{lower, LowerOptions};
use monvm_compiler::mir::passes::InstrumentMode;
use monvm_compiler::mir::{parse_mir, Module, Op};
use monvm_core::machine::{assemble, Program};
use serde::Serialize;

/// Compiler settings for `.mir` sources. Assembly sources ignore them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    pub instrument: Option<InstrumentMode>,
    pub linearize: bool,
    pub registers: usize,
    pub capabilities: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            instrument: Some(InstrumentMode::AnnotatedFunctions),
            linearize: true,
            registers: 8,
            capabilities: true,
        }
    }
}

impl BuildOptions {
    pub fn lower_options(&self) -> LowerOptions {
        LowerOptions {
            apply_cp_instrument: self.instrument,
            apply_store_linearize: self.linearize,
            registers: self.registers,
            emit_comments: false,
            capabilities: self.capabilities,
        }
    }
}

/// Parses an `--instrument` value.
pub fn parse_instrument(s: &str) -> Result<Option<InstrumentMode>> {
    Ok(Some(match s {
        "all" => InstrumentMode::AllStack,
        "fn" => InstrumentMode::AnnotatedFunctions,
        "var" => InstrumentMode::AnnotatedVariables,
        "none" => return Ok(None),
        other => bail!("unknown instrumentation mode `{other}` (expected all, fn, var or none)"),
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Mir,
    Asm,
}

pub fn source_kind(path: &Path) -> Result<SourceKind> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("mir") => Ok(SourceKind::Mir),
        Some("s") => Ok(SourceKind::Asm),
        _ => bail!("{}: expected a .mir or .s file", path.display()),
    }
}

pub fn read_mir(path: &Path) -> Result<Module> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mir(&text).with_context(|| path.display().to_string())
}

/// Compiles a module to assembly text.
pub fn compile(module: &Module, opts: &BuildOptions) -> Result<String> {
    Ok(lower(module, &opts.lower_options())?)
}

/// Loads a source file as an executable program.
pub fn build_file(path: &Path, opts: &BuildOptions) -> Result<Program> {
    let asm = match source_kind(path)? {
        SourceKind::Asm => {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        SourceKind::Mir => {
            compile(&read_mir(path)?, opts).with_context(|| path.display().to_string())?
        }
    };
    assemble(&asm).with_context(|| format!("assembling {}", path.display()))
}

/// Replaces every call to `malloc` by `malloc_zeroed`.
pub fn zero_allocations(module: &Module) -> Module {
    let mut out = module.clone();
    for inst in out
        .functions
        .iter_mut()
        .flat_map(|f| &mut f.blocks)
        .flat_map(|b| &mut b.insts)
    {
        if let Op::Call { callee, .. } = &mut inst.op {
            if callee == "malloc" {
                *callee = "malloc_zeroed".to_string();
            }
        }
    }
    out
}
