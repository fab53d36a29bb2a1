use std::fmt::{self, Write};

use super::{Function, Inst, Module, Op, Operand, Terminator, Value};

pub(super) fn write_module(m: &Module, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for (i, func) in m.functions.iter().enumerate() {
        if i > 0 {
            writeln!(f)?;
        }
        write_function(func, f)?;
    }
    Ok(())
}

fn write_function(func: &Function, f: &mut impl Write) -> fmt::Result {
    let v = |x: Value| format!("%{}", func.name_of(x));
    let params: Vec<String> = func
        .params
        .iter()
        .map(|p| format!("{}: {}", v(*p), func.ty(*p)))
        .collect();
    write!(f, "func @{}({})", func.name, params.join(", "))?;
    if let Some(ret) = func.ret {
        write!(f, " -> {ret}")?;
    }
    if func.wbr {
        write!(f, " wbr")?;
    }
    writeln!(f, " {{")?;
    for block in &func.blocks {
        writeln!(f, "{}:", block.name)?;
        for inst in &block.insts {
            writeln!(f, "  {}", inst_text(func, inst))?;
        }
        match &block.term {
            Terminator::Br(b) => writeln!(f, "  br {}", func.block(*b).name)?,
            Terminator::CondBr { cond, then, els } => writeln!(
                f,
                "  condbr {}, {}, {}",
                v(*cond),
                func.block(*then).name,
                func.block(*els).name
            )?,
            Terminator::Ret(None) => writeln!(f, "  ret")?,
            Terminator::Ret(Some(x)) => writeln!(f, "  ret {}", v(*x))?,
        }
    }
    writeln!(f, "}}")
}

/// One instruction in textual form, without indentation.
pub(crate) fn inst_text(func: &Function, inst: &Inst) -> String {
    let mut f = String::new();
    write_inst(func, inst, &mut f).expect("writing to a string");
    f
}

fn write_inst(func: &Function, inst: &Inst, f: &mut String) -> fmt::Result {
    let v = |x: Value| format!("%{}", func.name_of(x));
    let opnd = |o: Operand| match o {
        Operand::Value(x) => v(x),
        Operand::Imm(i) => i.to_string(),
    };
    if let Some(r) = inst.result {
        write!(f, "{} = ", v(r))?;
    }
    let volatile = |b: bool| if b { " volatile" } else { "" };
    match &inst.op {
        Op::Const(c) => write!(f, "const {c}")?,
        Op::Alloca { size, wbr, escape } => {
            write!(f, "alloca {size}")?;
            if *wbr {
                write!(f, " wbr")?;
            }
            if *escape {
                write!(f, " !escape")?;
            }
        }
        Op::StackCap { alloca, size } => write!(f, "stackcap {}, {size}", v(*alloca))?,
        Op::SetOpBounds { cap, len } => write!(f, "setopbounds {}, {len}", v(*cap))?,
        Op::Load {
            ty,
            volatile: vol,
            ptr,
        } => write!(f, "load.{}{} {}", ty.suffix(), volatile(*vol), v(*ptr))?,
        Op::Store {
            ty,
            volatile: vol,
            value,
            ptr,
            refresh,
        } => {
            write!(
                f,
                "store.{}{} {}, {}",
                ty.suffix(),
                volatile(*vol),
                v(*value),
                v(*ptr)
            )?;
            if *refresh {
                write!(f, " !refresh")?;
            }
        }
        Op::Gep { base, offset } => write!(f, "gep {}, {}", v(*base), opnd(*offset))?,
        Op::Copy(x) => write!(f, "copy {}", v(*x))?,
        Op::Pin(x) => write!(f, "pin {}", v(*x))?,
        Op::Bin { op, lhs, rhs } => write!(f, "{} {}, {}", op.name(), v(*lhs), opnd(*rhs))?,
        Op::Call { callee, args } => {
            let args: Vec<String> = args.iter().map(|a| v(*a)).collect();
            write!(f, "call @{callee}({})", args.join(", "))?;
        }
        Op::Phi(incoming) => {
            let arms: Vec<String> = incoming
                .iter()
                .map(|(x, b)| format!("[{}, {}]", v(*x), func.block(*b).name))
                .collect();
            write!(f, "phi {}", arms.join(", "))?;
        }
    }
    Ok(())
}
