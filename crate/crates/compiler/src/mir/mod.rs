//! A small SSA IR with two value types, integers and capabilities.
//!
//! Textual form:
//!
//! ```text
//! func @main() -> int {
//! entry:
//!   %buf = alloca 32 wbr
//!   %i = const 0
//!   br loop
//! loop:
//!   %j = phi [%i, entry], [%next, loop]
//!   %p = gep %buf, %j
//!   store.i8 %j, %p
//!   %next = add %j, 1
//!   %done = slt %next, 32
//!   condbr %done, loop, exit
//! exit:
//!   %v = load.i8 volatile %buf
//!   ret %v
//! }
//! ```
//!
//! Memory operations name their width: `load.i8/i16/i32/i64/cap` and the
//! matching `store`. `volatile` accesses are never removed. `alloca N wbr`
//! marks a variable for Write-before-Read instrumentation, `!escape` marks the
//! spill slots store linearization creates, `!refresh` marks the capability
//! stores that keep an in-memory copy current. A function header may end in
//! `wbr` to select all of its variables.
//!
//! Builtins `@malloc`, `@malloc_zeroed`, `@free`, `@print` and `@exit` map to
//! runtime calls.

mod interp;
mod parse;
pub mod passes;
pub(crate) mod print;
pub(crate) mod verify;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub use interp::{interpret, InterpOptions, InterpOutcome, InterpResult};
pub use parse::parse_mir;
pub use verify::verify;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl Value {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Int,
    Cap,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Int => "int",
            Type::Cap => "cap",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemType {
    I8,
    I16,
    I32,
    I64,
    Cap,
}

impl MemType {
    pub fn size(self) -> u64 {
        match self {
            MemType::I8 => 1,
            MemType::I16 => 2,
            MemType::I32 => 4,
            MemType::I64 => 8,
            MemType::Cap => 16,
        }
    }

    pub fn value_type(self) -> Type {
        if self == MemType::Cap {
            Type::Cap
        } else {
            Type::Int
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            MemType::I8 => "i8",
            MemType::I16 => "i16",
            MemType::I32 => "i32",
            MemType::I64 => "i64",
            MemType::Cap => "cap",
        }
    }

    pub fn from_suffix(s: &str) -> Option<MemType> {
        Some(match s {
            "i8" => MemType::I8,
            "i16" => MemType::I16,
            "i32" => MemType::I32,
            "i64" => MemType::I64,
            "cap" => MemType::Cap,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Slt,
    Eq,
}

impl BinOp {
    pub const ALL: [BinOp; 8] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Slt,
        BinOp::Eq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Slt => "slt",
            BinOp::Eq => "eq",
        }
    }

    pub fn eval(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Slt => i64::from(a < b),
            BinOp::Eq => i64::from(a == b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(Value),
    Imm(i64),
}

impl Operand {
    pub fn value(self) -> Option<Value> {
        match self {
            Operand::Value(v) => Some(v),
            Operand::Imm(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Const(i64),
    Alloca {
        size: u64,
        wbr: bool,
        escape: bool,
    },
    /// Bounded capability for a stack variable.
    StackCap {
        alloca: Value,
        size: u64,
    },
    /// Installs a Write-before-Read bound at `base + len`.
    SetOpBounds {
        cap: Value,
        len: u64,
    },
    Load {
        ty: MemType,
        volatile: bool,
        ptr: Value,
    },
    Store {
        ty: MemType,
        volatile: bool,
        value: Value,
        ptr: Value,
        refresh: bool,
    },
    /// `base` moved by `offset` bytes.
    Gep {
        base: Value,
        offset: Operand,
    },
    Copy(Value),
    /// Identity that ties a capability to the store that just used it.
    Pin(Value),
    Bin {
        op: BinOp,
        lhs: Value,
        rhs: Operand,
    },
    Call {
        callee: String,
        args: Vec<Value>,
    },
    Phi(Vec<(Value, BlockId)>),
}

impl Op {
    pub fn uses(&self) -> Vec<Value> {
        match self {
            Op::Const(_) | Op::Alloca { .. } => vec![],
            Op::StackCap { alloca: v, .. }
            | Op::SetOpBounds { cap: v, .. }
            | Op::Load { ptr: v, .. }
            | Op::Copy(v)
            | Op::Pin(v) => vec![*v],
            Op::Store { value, ptr, .. } => vec![*value, *ptr],
            Op::Gep { base, offset } => std::iter::once(*base).chain(offset.value()).collect(),
            Op::Bin { lhs, rhs, .. } => std::iter::once(*lhs).chain(rhs.value()).collect(),
            Op::Call { args, .. } => args.clone(),
            Op::Phi(incoming) => incoming.iter().map(|(v, _)| *v).collect(),
        }
    }

    pub fn map_uses(&mut self, mut f: impl FnMut(Value) -> Value) {
        let opnd = |o: &mut Operand, f: &mut dyn FnMut(Value) -> Value| {
            if let Operand::Value(v) = o {
                *v = f(*v);
            }
        };
        match self {
            Op::Const(_) | Op::Alloca { .. } => {}
            Op::StackCap { alloca: v, .. }
            | Op::SetOpBounds { cap: v, .. }
            | Op::Load { ptr: v, .. }
            | Op::Copy(v)
            | Op::Pin(v) => *v = f(*v),
            Op::Store { value, ptr, .. } => {
                *value = f(*value);
                *ptr = f(*ptr);
            }
            Op::Gep { base, offset } => {
                *base = f(*base);
                opnd(offset, &mut f);
            }
            Op::Bin { lhs, rhs, .. } => {
                *lhs = f(*lhs);
                opnd(rhs, &mut f);
            }
            Op::Call { args, .. } => args.iter_mut().for_each(|a| *a = f(*a)),
            Op::Phi(incoming) => incoming.iter_mut().for_each(|(v, _)| *v = f(*v)),
        }
    }

    /// No side effects: removable when the result is unused.
    pub fn is_pure(&self) -> bool {
        match self {
            Op::Const(_) | Op::Gep { .. } | Op::Copy(_) | Op::Bin { .. } | Op::Phi(_) => true,
            Op::Load { volatile, .. } => !volatile,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inst {
    pub result: Option<Value>,
    pub op: Op,
    /// Source line, 0 for instructions a pass created.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Terminator {
    Br(BlockId),
    CondBr {
        cond: Value,
        then: BlockId,
        els: BlockId,
    },
    Ret(Option<Value>),
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Br(b) => vec![*b],
            Terminator::CondBr { then, els, .. } => vec![*then, *els],
            Terminator::Ret(_) => vec![],
        }
    }

    pub fn uses(&self) -> Vec<Value> {
        match self {
            Terminator::Br(_) => vec![],
            Terminator::CondBr { cond, .. } => vec![*cond],
            Terminator::Ret(v) => v.iter().copied().collect(),
        }
    }

    pub fn map_uses(&mut self, mut f: impl FnMut(Value) -> Value) {
        match self {
            Terminator::Br(_) | Terminator::Ret(None) => {}
            Terminator::CondBr { cond, .. } => *cond = f(*cond),
            Terminator::Ret(Some(v)) => *v = f(*v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub insts: Vec<Inst>,
    pub term: Terminator,
    pub line: usize,
    pub term_line: usize,
}

impl Block {
    /// Index of the first instruction after the phis.
    pub fn first_non_phi(&self) -> usize {
        self.insts
            .iter()
            .position(|i| !matches!(i.op, Op::Phi(_)))
            .unwrap_or(self.insts.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueData {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Value>,
    pub ret: Option<Type>,
    /// Every variable of the function is selected for instrumentation.
    pub wbr: bool,
    pub blocks: Vec<Block>,
    pub values: Vec<ValueData>,
    pub line: usize,
}

/// Where a value is defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Def {
    Param(usize),
    Inst(BlockId, usize),
}

impl Function {
    pub fn ty(&self, v: Value) -> Type {
        self.values[v.index()].ty
    }

    pub fn name_of(&self, v: Value) -> &str {
        &self.values[v.index()].name
    }

    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.index()]
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    /// Adds a value named after `hint` with a suffix that keeps names unique.
    pub fn new_value(&mut self, hint: &str, ty: Type) -> Value {
        let taken: BTreeSet<&str> = self.values.iter().map(|v| v.name.as_str()).collect();
        let stem = hint.split('.').next().unwrap_or(hint);
        let name = (1..)
            .map(|n| format!("{stem}.{n}"))
            .find(|n| !taken.contains(n.as_str()))
            .expect("unbounded suffixes");
        self.values.push(ValueData { name, ty });
        Value(self.values.len() as u32 - 1)
    }

    /// Adds a value named after `from`.
    pub fn new_value_like(&mut self, from: Value, ty: Type) -> Value {
        let hint = self.name_of(from).to_string();
        self.new_value(&hint, ty)
    }

    pub fn defs(&self) -> HashMap<Value, Def> {
        let mut defs = HashMap::new();
        for (i, p) in self.params.iter().enumerate() {
            defs.insert(*p, Def::Param(i));
        }
        for b in self.block_ids() {
            for (i, inst) in self.block(b).insts.iter().enumerate() {
                if let Some(r) = inst.result {
                    defs.insert(r, Def::Inst(b, i));
                }
            }
        }
        defs
    }

    pub fn def_op(&self, defs: &HashMap<Value, Def>, v: Value) -> Option<&Op> {
        match defs.get(&v)? {
            Def::Inst(b, i) => Some(&self.block(*b).insts[*i].op),
            Def::Param(_) => None,
        }
    }

    pub fn predecessors(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for b in self.block_ids() {
            for s in self.block(b).term.successors() {
                if !preds[s.index()].contains(&b) {
                    preds[s.index()].push(b);
                }
            }
        }
        preds
    }

    pub fn use_counts(&self) -> HashMap<Value, usize> {
        let mut counts = HashMap::new();
        for block in &self.blocks {
            for inst in &block.insts {
                for u in inst.op.uses() {
                    *counts.entry(u).or_insert(0) += 1;
                }
            }
            for u in block.term.uses() {
                *counts.entry(u).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Rewrites every use of a value in the function.
    pub fn replace_uses(&mut self, mut f: impl FnMut(Value) -> Value) {
        for block in &mut self.blocks {
            for inst in &mut block.insts {
                inst.op.map_uses(&mut f);
            }
            block.term.map_uses(&mut f);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Module {
    pub functions: Vec<Function>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// Runtime services callable as `@name`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Malloc,
    MallocZeroed,
    Free,
    Print,
    Exit,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Builtin> {
        Some(match name {
            "malloc" => Builtin::Malloc,
            "malloc_zeroed" => Builtin::MallocZeroed,
            "free" => Builtin::Free,
            "print" => Builtin::Print,
            "exit" => Builtin::Exit,
            _ => return None,
        })
    }

    pub fn params(self) -> &'static [Type] {
        match self {
            Builtin::Malloc | Builtin::MallocZeroed | Builtin::Print | Builtin::Exit => {
                &[Type::Int]
            }
            Builtin::Free => &[Type::Cap],
        }
    }

    pub fn ret(self) -> Option<Type> {
        match self {
            Builtin::Malloc | Builtin::MallocZeroed => Some(Type::Cap),
            _ => None,
        }
    }

    pub fn ecall(self) -> u32 {
        match self {
            Builtin::Exit => 0,
            Builtin::Malloc => 1,
            Builtin::Free => 2,
            Builtin::Print => 3,
            Builtin::MallocZeroed => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MirError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("@{function}, line {line}: {message}")]
    Verify {
        function: String,
        line: usize,
        message: String,
    },
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_module(self, f)
    }
}
