use std::collections::{HashMap, HashSet};

use super::{Builtin, Def, Function, MirError, Module, Op, Operand, Terminator, Type, Value};

/// Blocks reachable from the entry in reverse postorder.
pub(crate) fn reverse_postorder(func: &Function) -> Vec<usize> {
    let mut seen = vec![false; func.blocks.len()];
    let mut post = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    seen[0] = true;
    while let Some((b, i)) = stack.pop() {
        let succs = func.blocks[b].term.successors();
        if let Some(s) = succs.get(i) {
            stack.push((b, i + 1));
            if !seen[s.index()] {
                seen[s.index()] = true;
                stack.push((s.index(), 0));
            }
        } else {
            post.push(b);
        }
    }
    post.reverse();
    post
}

/// Immediate dominators; `None` for unreachable blocks, the entry maps to itself.
pub(crate) fn dominators(func: &Function) -> Vec<Option<usize>> {
    let rpo = reverse_postorder(func);
    let mut order = vec![usize::MAX; func.blocks.len()];
    for (i, b) in rpo.iter().enumerate() {
        order[*b] = i;
    }
    let preds = func.predecessors();
    let mut idom: Vec<Option<usize>> = vec![None; func.blocks.len()];
    idom[0] = Some(0);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].expect("processed");
            }
            while order[b] > order[a] {
                b = idom[b].expect("processed");
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new: Option<usize> = None;
            for p in &preds[b] {
                if idom[p.index()].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p.index(),
                    Some(n) => intersect(&idom, p.index(), n),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

pub(crate) fn dominates(idom: &[Option<usize>], a: usize, mut b: usize) -> bool {
    loop {
        if a == b {
            return true;
        }
        match idom[b] {
            Some(p) if p != b => b = p,
            _ => return false,
        }
    }
}

/// Checks SSA form, phi placement, operand types and call signatures.
pub fn verify(module: &Module) -> Result<(), MirError> {
    let mut sigs: HashMap<&str, (Vec<Type>, Option<Type>)> = HashMap::new();
    for f in &module.functions {
        sigs.insert(
            &f.name,
            (f.params.iter().map(|p| f.ty(*p)).collect(), f.ret),
        );
    }
    for f in &module.functions {
        verify_function(f, &sigs)?;
    }
    Ok(())
}

fn verify_function(
    func: &Function,
    sigs: &HashMap<&str, (Vec<Type>, Option<Type>)>,
) -> Result<(), MirError> {
    let fail = |line: usize, message: String| MirError::Verify {
        function: func.name.clone(),
        line,
        message,
    };
    let name = |v: Value| format!("%{}", func.name_of(v));

    let mut defined = HashSet::new();
    for p in &func.params {
        defined.insert(*p);
    }
    for block in &func.blocks {
        for inst in &block.insts {
            if let Some(r) = inst.result {
                if r.index() >= func.values.len() || !defined.insert(r) {
                    return Err(fail(
                        inst.line,
                        format!("{} is defined more than once", name(r)),
                    ));
                }
            }
        }
    }
    let defs = func.defs();
    let idom = dominators(func);
    let preds = func.predecessors();

    // A use at (block, index) must be dominated by its definition.
    let check_dom = |v: Value, b: usize, at: usize, line: usize| -> Result<(), MirError> {
        if v.index() >= func.values.len() {
            return Err(fail(line, format!("unknown value #{}", v.0)));
        }
        if idom[b].is_none() {
            return Ok(());
        }
        match defs.get(&v) {
            None => Err(fail(line, format!("{} is used but never defined", name(v)))),
            Some(Def::Param(_)) => Ok(()),
            Some(Def::Inst(db, di)) => {
                let ok = if db.index() == b {
                    *di < at
                } else {
                    dominates(&idom, db.index(), b)
                };
                if ok {
                    Ok(())
                } else {
                    Err(fail(
                        line,
                        format!("use of {} is not dominated by its definition", name(v)),
                    ))
                }
            }
        }
    };
    let expect = |v: Value, ty: Type, line: usize, what: &str| -> Result<(), MirError> {
        if func.ty(v) != ty {
            return Err(fail(
                line,
                format!("{what} {} must be {ty}, found {}", name(v), func.ty(v)),
            ));
        }
        Ok(())
    };

    for (b, block) in func.blocks.iter().enumerate() {
        let first = block.first_non_phi();
        for (i, inst) in block.insts.iter().enumerate() {
            let line = inst.line;
            if let Op::Phi(incoming) = &inst.op {
                if i >= first {
                    return Err(fail(line, "phi after a non-phi instruction".into()));
                }
                let mut from: Vec<usize> = incoming.iter().map(|(_, p)| p.index()).collect();
                from.sort_unstable();
                let mut expected: Vec<usize> = preds[b].iter().map(|p| p.index()).collect();
                expected.sort_unstable();
                if from != expected {
                    return Err(fail(
                        line,
                        format!("phi arms do not match the predecessors of `{}`", block.name),
                    ));
                }
                for (v, p) in incoming {
                    let pb = &func.blocks[p.index()];
                    check_dom(*v, p.index(), pb.insts.len(), line)?;
                    expect(
                        *v,
                        func.ty(inst.result.expect("phi has a result")),
                        line,
                        "phi operand",
                    )?;
                }
            } else {
                for u in inst.op.uses() {
                    check_dom(u, b, i, line)?;
                }
            }
            let result_ty = inst.result.map(|r| func.ty(r));
            match &inst.op {
                Op::Alloca { .. } => {}
                Op::StackCap { alloca, .. } => {
                    if !matches!(func.def_op(&defs, *alloca), Some(Op::Alloca { .. })) {
                        return Err(fail(
                            line,
                            format!("stackcap operand {} is not an alloca", name(*alloca)),
                        ));
                    }
                }
                Op::SetOpBounds { cap, .. } => {
                    expect(*cap, Type::Cap, line, "setopbounds operand")?
                }
                Op::Load { ptr, .. } => expect(*ptr, Type::Cap, line, "load address")?,
                Op::Store { ty, value, ptr, .. } => {
                    expect(*ptr, Type::Cap, line, "store address")?;
                    expect(*value, ty.value_type(), line, "stored value")?;
                }
                Op::Gep { base, offset } => {
                    expect(*base, Type::Cap, line, "gep base")?;
                    if let Operand::Value(o) = offset {
                        expect(*o, Type::Int, line, "gep offset")?;
                    }
                }
                Op::Call { callee, args } => {
                    let (params, ret) = match Builtin::from_name(callee) {
                        Some(b) => (b.params().to_vec(), b.ret()),
                        None => sigs
                            .get(callee.as_str())
                            .cloned()
                            .ok_or_else(|| fail(line, format!("unknown function @{callee}")))?,
                    };
                    if params.len() != args.len() {
                        return Err(fail(
                            line,
                            format!("@{callee} takes {} argument(s)", params.len()),
                        ));
                    }
                    for (a, t) in args.iter().zip(&params) {
                        expect(*a, *t, line, "argument")?;
                    }
                    if result_ty.is_some() && ret.is_none() {
                        return Err(fail(line, format!("@{callee} returns nothing")));
                    }
                }
                Op::Const(_) | Op::Copy(_) | Op::Pin(_) | Op::Bin { .. } | Op::Phi(_) => {}
            }
            let needs_result = !matches!(inst.op, Op::Store { .. } | Op::Call { .. });
            if needs_result && inst.result.is_none() {
                return Err(fail(line, "instruction needs a result".into()));
            }
            if matches!(inst.op, Op::Store { .. }) && inst.result.is_some() {
                return Err(fail(line, "store has no result".into()));
            }
        }
        let line = block.term_line;
        for u in block.term.uses() {
            check_dom(u, b, block.insts.len(), line)?;
        }
        if let Terminator::Ret(v) = &block.term {
            match (v, func.ret) {
                (None, None) => {}
                (Some(v), Some(t)) => expect(*v, t, line, "return value")?,
                _ => return Err(fail(line, "return does not match the signature".into())),
            }
        }
    }
    Ok(())
}
