use std::collections::HashMap;

use crate::mir::{Module, Op, Operand, Value};

/// Constant folding, copy elimination and removal of dead pure instructions.
/// Volatile accesses and pins are never touched.
pub fn pass_optimize(module: &Module) -> Module {
    let mut out = module.clone();
    for func in &mut out.functions {
        loop {
            let mut changed = false;
            let mut consts: HashMap<Value, i64> = HashMap::new();
            let mut copies: HashMap<Value, Value> = HashMap::new();
            for block in &func.blocks {
                for inst in &block.insts {
                    match (&inst.op, inst.result) {
                        (Op::Const(c), Some(r)) => {
                            consts.insert(r, *c);
                        }
                        (Op::Copy(src), Some(r)) => {
                            copies.insert(r, *src);
                        }
                        _ => {}
                    }
                }
            }
            let resolve = |mut v: Value| {
                while let Some(s) = copies.get(&v) {
                    v = *s;
                }
                v
            };
            if !copies.is_empty() {
                func.replace_uses(resolve);
                for block in &mut func.blocks {
                    block.insts.retain(|i| !matches!(i.op, Op::Copy(_)));
                }
                changed = true;
            }
            for block in &mut func.blocks {
                for inst in &mut block.insts {
                    let fold = |o: &mut Operand| {
                        if let Operand::Value(v) = o {
                            if let Some(c) = consts.get(v) {
                                *o = Operand::Imm(*c);
                                return true;
                            }
                        }
                        false
                    };
                    match &mut inst.op {
                        Op::Bin { op, lhs, rhs } => {
                            changed |= fold(rhs);
                            if let (Some(a), Operand::Imm(b)) = (consts.get(lhs), *rhs) {
                                inst.op = Op::Const(op.eval(*a, b));
                                changed = true;
                            }
                        }
                        Op::Gep { offset, .. } => changed |= fold(offset),
                        _ => {}
                    }
                }
            }
            let uses = func.use_counts();
            for block in &mut func.blocks {
                let before = block.insts.len();
                block.insts.retain(|i| {
                    !(i.op.is_pure() && i.result.is_some_and(|r| !uses.contains_key(&r)))
                });
                changed |= block.insts.len() != before;
            }
            if !changed {
                break;
            }
        }
    }
    out
}
