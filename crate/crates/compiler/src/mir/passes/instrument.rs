use std::collections::HashMap;

use crate::mir::{Function, Inst, Module, Op, Value};

/// Which stack variables receive a Write-before-Read bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InstrumentMode {
    /// Every variable in every function.
    AllStack,
    /// Every variable of functions declared `wbr`, plus variables declared
    /// `alloca N wbr` elsewhere.
    AnnotatedFunctions,
    /// Only variables declared `alloca N wbr`.
    AnnotatedVariables,
}

impl InstrumentMode {
    fn selects(self, func: &Function, wbr_var: bool) -> bool {
        match self {
            InstrumentMode::AllStack => true,
            InstrumentMode::AnnotatedFunctions => func.wbr || wbr_var,
            InstrumentMode::AnnotatedVariables => wbr_var,
        }
    }
}

/// Gives each selected variable a bounded capability followed by
/// `setopbounds ..., 0`, and routes every use of the variable through it.
pub fn pass_cp_instrument(module: &Module, mode: InstrumentMode) -> Module {
    let mut out = module.clone();
    for func in &mut out.functions {
        instrument_function(func, mode);
    }
    out
}

fn instrument_function(func: &mut Function, mode: InstrumentMode) {
    let mut selected = Vec::new();
    for block in &func.blocks {
        for inst in &block.insts {
            if let (
                Op::Alloca {
                    size,
                    wbr,
                    escape: false,
                },
                Some(r),
            ) = (&inst.op, inst.result)
            {
                if mode.selects(func, *wbr) {
                    selected.push((r, *size));
                }
            }
        }
    }
    for (alloca, size) in selected {
        let defs = func.defs();
        // An existing bounded capability is reused.
        let existing = func.blocks.iter().enumerate().find_map(|(b, block)| {
            block
                .insts
                .iter()
                .enumerate()
                .find_map(|(i, inst)| match inst.op {
                    Op::StackCap { alloca: a, .. } if a == alloca => {
                        Some((b, i, inst.result.expect("stackcap result")))
                    }
                    _ => None,
                })
        });
        let (b, at, cap) = match existing {
            Some((b, i, cap)) => {
                let next = func.blocks[b].insts.get(i + 1);
                if matches!(next, Some(Inst { op: Op::SetOpBounds { cap: c, len: 0 }, .. }) if *c == cap)
                {
                    continue;
                }
                (b, i + 1, cap)
            }
            None => {
                let crate::mir::Def::Inst(b, i) = defs[&alloca] else {
                    unreachable!("alloca is an instruction")
                };
                let cap = func.new_value_like(alloca, crate::mir::Type::Cap);
                let line = func.blocks[b.index()].insts[i].line;
                func.blocks[b.index()].insts.insert(
                    i + 1,
                    Inst {
                        result: Some(cap),
                        op: Op::StackCap { alloca, size },
                        line,
                    },
                );
                (b.index(), i + 2, cap)
            }
        };
        let bounded = func.new_value_like(alloca, crate::mir::Type::Cap);
        let line = func.blocks[b].insts[at - 1].line;
        func.blocks[b].insts.insert(
            at,
            Inst {
                result: Some(bounded),
                op: Op::SetOpBounds { cap, len: 0 },
                line,
            },
        );
        let remap: HashMap<Value, Value> = [(alloca, bounded), (cap, bounded)].into();
        for (bi, block) in func.blocks.iter_mut().enumerate() {
            for (ii, inst) in block.insts.iter_mut().enumerate() {
                let own = (bi == b) && (ii == at || ii == at - 1);
                if !own {
                    inst.op.map_uses(|v| remap.get(&v).copied().unwrap_or(v));
                }
            }
            block.term.map_uses(|v| remap.get(&v).copied().unwrap_or(v));
        }
    }
}
