use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::isa::{AluOp, BranchOp, CapField, Instr, Operand, Reg, Width, NUM_REGS, RA, ZERO};
use crate::cap::CpKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// An assembled program. Instruction `i` lives at byte address `4 * i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Program {
    pub instructions: Vec<Instr>,
    pub labels: BTreeMap<String, usize>,
    pub entry: usize,
    /// Source line of each instruction.
    pub lines: Vec<usize>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// The label an instruction index starts, if any.
    pub fn label_at(&self, index: usize) -> Option<&str> {
        self.labels
            .iter()
            .find(|(_, &i)| i == index)
            .map(|(name, _)| name.as_str())
    }
}

/// Assembles source text. Execution starts at `_start` when that label
/// exists, otherwise at the first instruction.
pub fn assemble(source: &str) -> Result<Program, ParseError> {
    let mut labels = BTreeMap::new();
    let mut pending = Vec::new();

    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        while let Some((head, rest)) = split_label(text) {
            if labels.insert(head.to_string(), pending.len()).is_some() {
                return Err(err(line, format!("duplicate label `{head}`")));
            }
            text = rest;
        }
        if !text.is_empty() {
            pending.push((line, text));
        }
    }

    let mut instructions = Vec::with_capacity(pending.len());
    let mut lines = Vec::with_capacity(pending.len());
    for (line, text) in pending {
        let instr = parse_instr(text, &labels).map_err(|m| err(line, m))?;
        instructions.push(instr);
        lines.push(line);
    }
    let entry = labels.get("_start").copied().unwrap_or(0);
    Ok(Program {
        instructions,
        labels,
        entry,
        lines,
    })
}

fn err(line: usize, message: String) -> ParseError {
    ParseError { line, message }
}

fn split_label(text: &str) -> Option<(&str, &str)> {
    let (head, rest) = text.split_once(':')?;
    let head = head.trim();
    let valid = !head.is_empty()
        && head
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$');
    valid.then(|| (head, rest.trim()))
}

fn parse_instr(text: &str, labels: &BTreeMap<String, usize>) -> Result<Instr, String> {
    let (mnemonic, rest) = match text.split_once(char::is_whitespace) {
        Some((m, r)) => (m, r.trim()),
        None => (text, ""),
    };
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let want = |n: usize| -> Result<(), String> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(format!(
                "`{mnemonic}` takes {n} operand(s), got {}",
                ops.len()
            ))
        }
    };
    let target = |s: &str| -> Result<usize, String> {
        if let Some(idx) = s.strip_prefix('@') {
            return idx
                .parse()
                .map_err(|_| format!("bad instruction index `{s}`"));
        }
        labels
            .get(s)
            .copied()
            .ok_or_else(|| format!("undefined label `{s}`"))
    };

    if let Some(op) = AluOp::ALL.into_iter().find(|op| op.mnemonic() == mnemonic) {
        want(3)?;
        return Ok(Instr::Alu {
            op,
            rd: reg(ops[0])?,
            rs1: reg(ops[1])?,
            rs2: operand(ops[2])?,
        });
    }
    if let Some(kind) = CpKind::from_mnemonic(mnemonic) {
        want(3)?;
        return Ok(Instr::CSetOpBounds {
            kind,
            rd: reg(ops[0])?,
            rs: reg(ops[1])?,
            len: operand(ops[2])?,
        });
    }
    let branch = match mnemonic {
        "beq" => Some(BranchOp::Eq),
        "bne" => Some(BranchOp::Ne),
        "blt" => Some(BranchOp::Lt),
        "bge" => Some(BranchOp::Ge),
        _ => None,
    };
    if let Some(op) = branch {
        want(3)?;
        return Ok(Instr::Branch {
            op,
            rs1: reg(ops[0])?,
            rs2: reg(ops[1])?,
            target: target(ops[2])?,
        });
    }
    let width = |c: char| match c {
        'b' => Some(Width::B),
        'h' => Some(Width::H),
        'w' => Some(Width::W),
        'd' => Some(Width::D),
        _ => None,
    };
    let mut chars = mnemonic.chars();
    if let (Some(kind @ ('l' | 's')), Some(w), None) = (chars.next(), chars.next(), chars.next()) {
        if let Some(width) = width(w) {
            want(2)?;
            let r = reg(ops[0])?;
            let (offset, base) = mem_operand(ops[1])?;
            return Ok(if kind == 'l' {
                Instr::Load {
                    width,
                    rd: r,
                    base,
                    offset,
                }
            } else {
                Instr::Store {
                    width,
                    rs: r,
                    base,
                    offset,
                }
            });
        }
    }

    Ok(match mnemonic {
        "li" => {
            want(2)?;
            Instr::Li {
                rd: reg(ops[0])?,
                imm: imm(ops[1])?,
            }
        }
        "mv" => {
            want(2)?;
            Instr::Mv {
                rd: reg(ops[0])?,
                rs: reg(ops[1])?,
            }
        }
        "addi" => {
            want(3)?;
            Instr::Alu {
                op: AluOp::Add,
                rd: reg(ops[0])?,
                rs1: reg(ops[1])?,
                rs2: Operand::Imm(imm(ops[2])?),
            }
        }
        "jal" => match ops.len() {
            1 => Instr::Jal {
                rd: RA,
                target: target(ops[0])?,
            },
            _ => {
                want(2)?;
                Instr::Jal {
                    rd: reg(ops[0])?,
                    target: target(ops[1])?,
                }
            }
        },
        "call" => {
            want(1)?;
            Instr::Jal {
                rd: RA,
                target: target(ops[0])?,
            }
        }
        "jalr" => match ops.len() {
            2 => Instr::Jalr {
                rd: reg(ops[0])?,
                rs: reg(ops[1])?,
                imm: 0,
            },
            _ => {
                want(3)?;
                Instr::Jalr {
                    rd: reg(ops[0])?,
                    rs: reg(ops[1])?,
                    imm: imm(ops[2])?,
                }
            }
        },
        "ret" => {
            want(0)?;
            Instr::Jalr {
                rd: ZERO,
                rs: RA,
                imm: 0,
            }
        }
        "halt" => {
            want(0)?;
            Instr::Halt
        }
        "ecall" => {
            want(1)?;
            let code = imm(ops[0])?;
            Instr::Ecall {
                code: u32::try_from(code).map_err(|_| format!("bad ecall code {code}"))?,
            }
        }
        "cmove" => {
            want(2)?;
            Instr::CMove {
                rd: reg(ops[0])?,
                rs: reg(ops[1])?,
            }
        }
        "cincoffset" | "csetbounds" | "candperm" | "csetaddr" => {
            want(3)?;
            let (rd, rs, x) = (reg(ops[0])?, reg(ops[1])?, operand(ops[2])?);
            match mnemonic {
                "cincoffset" => Instr::CIncOffset { rd, rs, by: x },
                "csetbounds" => Instr::CSetBounds { rd, rs, len: x },
                "candperm" => Instr::CAndPerm { rd, rs, mask: x },
                _ => Instr::CSetAddr { rd, rs, addr: x },
            }
        }
        "cgetaddr" | "cgetbase" | "cgetlen" | "cgetoptop" => {
            want(2)?;
            let field = match mnemonic {
                "cgetaddr" => CapField::Addr,
                "cgetbase" => CapField::Base,
                "cgetlen" => CapField::Len,
                _ => CapField::OpTop,
            };
            Instr::CGet {
                field,
                rd: reg(ops[0])?,
                rs: reg(ops[1])?,
            }
        }
        "clc" | "csc" => {
            want(2)?;
            let r = reg(ops[0])?;
            let (offset, base) = mem_operand(ops[1])?;
            if mnemonic == "clc" {
                Instr::Clc {
                    rd: r,
                    base,
                    offset,
                }
            } else {
                Instr::Csc {
                    rs: r,
                    base,
                    offset,
                }
            }
        }
        other => return Err(format!("unknown mnemonic `{other}`")),
    })
}

fn reg(s: &str) -> Result<Reg, String> {
    let named = match s {
        "zero" => Some(0),
        "ra" => Some(1),
        "sp" => Some(2),
        _ => None,
    };
    if let Some(r) = named {
        return Ok(r);
    }
    s.strip_prefix('c')
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| n < NUM_REGS && !s[1..].starts_with('+'))
        .map(|n| n as Reg)
        .ok_or_else(|| format!("bad register `{s}`"))
}

fn imm(s: &str) -> Result<i64, String> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let parsed = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => body.parse::<u64>().ok(),
    };
    let v = parsed.ok_or_else(|| format!("bad immediate `{s}`"))? as i64;
    Ok(if neg { v.wrapping_neg() } else { v })
}

fn operand(s: &str) -> Result<Operand, String> {
    match reg(s) {
        Ok(r) => Ok(Operand::Reg(r)),
        Err(_) => imm(s)
            .map(Operand::Imm)
            .map_err(|_| format!("bad operand `{s}`")),
    }
}

/// `imm(cs)` or the indexed form `rX(cs)`.
fn mem_operand(s: &str) -> Result<(Operand, Reg), String> {
    let open = s
        .find('(')
        .ok_or_else(|| format!("bad memory operand `{s}`"))?;
    let inner = s[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| format!("bad memory operand `{s}`"))?;
    let off = s[..open].trim();
    let offset = if off.is_empty() {
        Operand::Imm(0)
    } else {
        operand(off)?
    };
    Ok((offset, reg(inner.trim())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = assemble("li c4, 42\nhalt\n").unwrap();
        assert_eq!(
            p.instructions,
            vec![Instr::Li { rd: 4, imm: 42 }, Instr::Halt]
        );
        assert_eq!(p.entry, 0);
    }

    #[test]
    fn conditional_bound_instruction() {
        let p = assemble("csetwbrbound c5, c5, c0").unwrap();
        assert_eq!(
            p.instructions[0],
            Instr::CSetOpBounds {
                kind: CpKind::WriteBeforeRead,
                rd: 5,
                rs: 5,
                len: Operand::Reg(0)
            }
        );
    }

    #[test]
    fn unknown_mnemonic_reports_line() {
        let e = assemble("; comment\nli c4, 1\nbxyz c1, c2, L").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("bxyz"));
    }

    #[test]
    fn labels_and_memory_operands() {
        let src = "_start: li c5, 0\nloop: sw c6, -8(c2)\n  lw c7, c5(c2)\n  bne c5, c0, loop\nret";
        let p = assemble(src).unwrap();
        assert_eq!(p.entry, 0);
        assert_eq!(p.labels["loop"], 1);
        assert_eq!(
            p.instructions[1],
            Instr::Store {
                width: Width::W,
                rs: 6,
                base: 2,
                offset: Operand::Imm(-8)
            }
        );
        assert_eq!(
            p.instructions[2],
            Instr::Load {
                width: Width::W,
                rd: 7,
                base: 2,
                offset: Operand::Reg(5)
            }
        );
        assert_eq!(
            p.instructions[4],
            Instr::Jalr {
                rd: 0,
                rs: 1,
                imm: 0
            }
        );
    }

    #[test]
    fn diagnostics() {
        assert!(assemble("li c16, 1")
            .unwrap_err()
            .message
            .contains("register"));
        assert!(assemble("beq c1, c2, nowhere")
            .unwrap_err()
            .message
            .contains("nowhere"));
        assert!(assemble("add c1, c2").is_err());
        assert!(assemble("a:\na: halt").is_err());
    }

    #[test]
    fn disassembly_reassembles() {
        let src = "_start:\nli c4, -3\naddi c4, c4, 0x10\nloop: csetbounds c5, c3, 64\n\
                   csetrobound c5, c5, 8\nsd c4, 0(c5)\nclc c6, 16(c2)\nbne c4, c0, loop\n\
                   cgetoptop c7, c5\necall 1\njal loop\nhalt";
        let p = assemble(src).unwrap();
        let text: String = p.instructions.iter().map(|i| format!("{i}\n")).collect();
        let q = assemble(&text).unwrap();
        assert_eq!(p.instructions, q.instructions);
    }
}
