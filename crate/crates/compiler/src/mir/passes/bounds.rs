use crate::mir::{Def, Inst, Module, Op, Type};

/// Adds a bounded capability to each variable whose address leaves the
/// function's direct loads and stores. Variables only ever accessed in place
/// keep using the stack capability.
pub fn pass_bound_allocas(module: &Module) -> Module {
    let mut out = module.clone();
    for func in &mut out.functions {
        let defs = func.defs();
        let mut needs = Vec::new();
        for block in &func.blocks {
            for inst in &block.insts {
                let Op::Alloca {
                    size,
                    escape: false,
                    ..
                } = inst.op
                else {
                    continue;
                };
                let a = inst.result.expect("alloca result");
                let mut bounded = false;
                let mut exposed = false;
                for user in func.blocks.iter().flat_map(|b| &b.insts) {
                    match &user.op {
                        Op::StackCap { alloca, .. } if *alloca == a => bounded = true,
                        Op::Load { ty, ptr, .. } if *ptr == a => exposed |= ty.size() > size,
                        Op::Store { ty, ptr, value, .. } if *ptr == a => {
                            exposed |= *value == a || ty.size() > size
                        }
                        op => exposed |= op.uses().contains(&a),
                    }
                }
                exposed |= func.blocks.iter().any(|b| b.term.uses().contains(&a));
                if exposed && !bounded {
                    needs.push((a, size));
                }
            }
        }
        for (a, size) in needs {
            let Def::Inst(b, i) = defs[&a] else {
                unreachable!("alloca is an instruction")
            };
            let cap = func.new_value_like(a, Type::Cap);
            let line = func.blocks[b.index()].insts[i].line;
            func.replace_uses(|v| if v == a { cap } else { v });
            // Insert after replacing so the new instruction keeps the raw operand.
            let pos = func.blocks[b.index()]
                .insts
                .iter()
                .position(|x| x.result == Some(a))
                .expect("alloca");
            func.blocks[b.index()].insts.insert(
                pos + 1,
                Inst {
                    result: Some(cap),
                    op: Op::StackCap { alloca: a, size },
                    line,
                },
            );
        }
    }
    out
}
