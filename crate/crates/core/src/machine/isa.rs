use std::fmt;

use serde::Serialize;

use crate::cap::CpKind;

/// Register index, `c0` to `c15`.
pub type Reg = u8;

pub const NUM_REGS: usize = 16;
pub const ZERO: Reg = 0;
pub const RA: Reg = 1;
pub const SP: Reg = 2;
pub const ROOT: Reg = 3;
/// First argument and return register.
pub const A0: Reg = 4;

/// Bytes per instruction slot in the code region.
pub const INSTR_BYTES: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Width {
    B,
    H,
    W,
    D,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::B => 1,
            Width::H => 2,
            Width::W => 4,
            Width::D => 8,
        }
    }

    pub fn suffix(self) -> char {
        match self {
            Width::B => 'b',
            Width::H => 'h',
            Width::W => 'w',
            Width::D => 'd',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Slt,
}

impl AluOp {
    pub const ALL: [AluOp; 7] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Slt,
    ];

    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Slt => u64::from((a as i64) < (b as i64)),
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Slt => "slt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BranchOp {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl BranchOp {
    pub fn taken(self, a: u64, b: u64) -> bool {
        match self {
            BranchOp::Eq => a == b,
            BranchOp::Ne => a != b,
            BranchOp::Lt => (a as i64) < (b as i64),
            BranchOp::Ge => (a as i64) >= (b as i64),
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            BranchOp::Eq => "beq",
            BranchOp::Ne => "bne",
            BranchOp::Lt => "blt",
            BranchOp::Ge => "bge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CapField {
    Addr,
    Base,
    Len,
    OpTop,
}

impl CapField {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CapField::Addr => "cgetaddr",
            CapField::Base => "cgetbase",
            CapField::Len => "cgetlen",
            CapField::OpTop => "cgetoptop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Category {
    Integer,
    Branch,
    Load,
    Store,
    Cap,
    RuntimeCall,
}

/// A decoded instruction. Branch and jump targets are instruction indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Instr {
    Li {
        rd: Reg,
        imm: i64,
    },
    Mv {
        rd: Reg,
        rs: Reg,
    },
    Alu {
        op: AluOp,
        rd: Reg,
        rs1: Reg,
        rs2: Operand,
    },
    Branch {
        op: BranchOp,
        rs1: Reg,
        rs2: Reg,
        target: usize,
    },
    Jal {
        rd: Reg,
        target: usize,
    },
    Jalr {
        rd: Reg,
        rs: Reg,
        imm: i64,
    },
    Halt,
    Ecall {
        code: u32,
    },
    CMove {
        rd: Reg,
        rs: Reg,
    },
    CIncOffset {
        rd: Reg,
        rs: Reg,
        by: Operand,
    },
    CSetBounds {
        rd: Reg,
        rs: Reg,
        len: Operand,
    },
    CAndPerm {
        rd: Reg,
        rs: Reg,
        mask: Operand,
    },
    CSetAddr {
        rd: Reg,
        rs: Reg,
        addr: Operand,
    },
    CGet {
        field: CapField,
        rd: Reg,
        rs: Reg,
    },
    CSetOpBounds {
        kind: CpKind,
        rd: Reg,
        rs: Reg,
        len: Operand,
    },
    Load {
        width: Width,
        rd: Reg,
        base: Reg,
        offset: Operand,
    },
    Store {
        width: Width,
        rs: Reg,
        base: Reg,
        offset: Operand,
    },
    Clc {
        rd: Reg,
        base: Reg,
        offset: Operand,
    },
    Csc {
        rs: Reg,
        base: Reg,
        offset: Operand,
    },
}

impl Instr {
    pub fn category(&self) -> Category {
        match self {
            Instr::Li { .. } | Instr::Mv { .. } | Instr::Alu { .. } => Category::Integer,
            Instr::Branch { .. } | Instr::Jal { .. } | Instr::Jalr { .. } | Instr::Halt => {
                Category::Branch
            }
            Instr::Ecall { .. } => Category::RuntimeCall,
            Instr::Load { .. } | Instr::Clc { .. } => Category::Load,
            Instr::Store { .. } | Instr::Csc { .. } => Category::Store,
            Instr::CMove { .. }
            | Instr::CIncOffset { .. }
            | Instr::CSetBounds { .. }
            | Instr::CAndPerm { .. }
            | Instr::CSetAddr { .. }
            | Instr::CGet { .. }
            | Instr::CSetOpBounds { .. } => Category::Cap,
        }
    }
}

struct R(Reg);

impl fmt::Display for R {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{}", R(*r)),
            Operand::Imm(i) => write!(f, "{i}"),
        }
    }
}

/// Disassembly. Targets print as `@index`, which the assembler accepts.
impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instr::Li { rd, imm } => write!(f, "li {}, {imm}", R(rd)),
            Instr::Mv { rd, rs } => write!(f, "mv {}, {}", R(rd), R(rs)),
            Instr::Alu { op, rd, rs1, rs2 } => {
                write!(f, "{} {}, {}, {rs2}", op.mnemonic(), R(rd), R(rs1))
            }
            Instr::Branch {
                op,
                rs1,
                rs2,
                target,
            } => {
                write!(f, "{} {}, {}, @{target}", op.mnemonic(), R(rs1), R(rs2))
            }
            Instr::Jal { rd, target } => write!(f, "jal {}, @{target}", R(rd)),
            Instr::Jalr { rd, rs, imm } => write!(f, "jalr {}, {}, {imm}", R(rd), R(rs)),
            Instr::Halt => f.write_str("halt"),
            Instr::Ecall { code } => write!(f, "ecall {code}"),
            Instr::CMove { rd, rs } => write!(f, "cmove {}, {}", R(rd), R(rs)),
            Instr::CIncOffset { rd, rs, by } => write!(f, "cincoffset {}, {}, {by}", R(rd), R(rs)),
            Instr::CSetBounds { rd, rs, len } => {
                write!(f, "csetbounds {}, {}, {len}", R(rd), R(rs))
            }
            Instr::CAndPerm { rd, rs, mask } => write!(f, "candperm {}, {}, {mask}", R(rd), R(rs)),
            Instr::CSetAddr { rd, rs, addr } => write!(f, "csetaddr {}, {}, {addr}", R(rd), R(rs)),
            Instr::CGet { field, rd, rs } => write!(f, "{} {}, {}", field.mnemonic(), R(rd), R(rs)),
            Instr::CSetOpBounds { kind, rd, rs, len } => {
                let m = kind.mnemonic().unwrap_or("csetwbrbound");
                write!(f, "{m} {}, {}, {len}", R(rd), R(rs))
            }
            Instr::Load {
                width,
                rd,
                base,
                offset,
            } => {
                write!(f, "l{} {}, {offset}({})", width.suffix(), R(rd), R(base))
            }
            Instr::Store {
                width,
                rs,
                base,
                offset,
            } => {
                write!(f, "s{} {}, {offset}({})", width.suffix(), R(rs), R(base))
            }
            Instr::Clc { rd, base, offset } => write!(f, "clc {}, {offset}({})", R(rd), R(base)),
            Instr::Csc { rs, base, offset } => write!(f, "csc {}, {offset}({})", R(rs), R(base)),
        }
    }
}
