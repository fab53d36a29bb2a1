//! Reference semantics for MIR.
//!
//! Pointers name an allocation and an offset. Each allocation carries at most
//! one Write-before-Read frontier shared by every pointer into it, so the
//! interpreter behaves as if all stores went through one canonical
//! capability. `pin` is the identity.

use std::collections::{BTreeMap, HashMap};

use monvm_core::machine::TrapKind;
use monvm_core::runtime::HeapState;

use super::{Builtin, Function, MemType, Module, Op, Operand, Terminator, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterpOptions {
    /// Honor `setopbounds` and hand out bounded heap blocks.
    pub enforce: bool,
    pub fuel: u64,
    pub max_depth: usize,
}

impl Default for InterpOptions {
    fn default() -> Self {
        InterpOptions {
            enforce: true,
            fuel: 10_000_000,
            max_depth: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpOutcome {
    Exit(i64),
    Trap(TrapKind),
    OutOfFuel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterpResult {
    pub outcome: InterpOutcome,
    pub output: Vec<i64>,
    pub steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Val {
    Int(i64),
    Ptr { alloc: usize, off: i64 },
}

impl Val {
    /// Integer view; pointers get a stable synthetic address.
    fn int(self) -> i64 {
        match self {
            Val::Int(i) => i,
            Val::Ptr { alloc, off } => (((alloc as i64) + 1) << 24) + off,
        }
    }
}

struct Alloc {
    bytes: Vec<u8>,
    caps: BTreeMap<u64, Val>,
    frontier: Option<u64>,
    heap_live: bool,
}

enum Stop {
    Trap(TrapKind),
    Exit(i64),
    Fuel,
}

struct Interp<'m> {
    module: &'m Module,
    opts: InterpOptions,
    allocs: Vec<Alloc>,
    output: Vec<i64>,
    steps: u64,
}

/// Runs `@main` and reports its exit code, prints and first trap.
pub fn interpret(module: &Module, opts: InterpOptions) -> InterpResult {
    let mut it = Interp {
        module,
        opts,
        allocs: Vec::new(),
        output: Vec::new(),
        steps: 0,
    };
    let outcome = match module.function("main") {
        None => InterpOutcome::Trap(TrapKind::UnknownInstruction),
        Some(main) => match it.call(main, &[], 0) {
            Ok(v) => InterpOutcome::Exit(v.map_or(0, Val::int)),
            Err(Stop::Exit(code)) => InterpOutcome::Exit(code),
            Err(Stop::Trap(kind)) => InterpOutcome::Trap(kind),
            Err(Stop::Fuel) => InterpOutcome::OutOfFuel,
        },
    };
    InterpResult {
        outcome,
        output: it.output,
        steps: it.steps,
    }
}

impl Interp<'_> {
    fn new_alloc(&mut self, len: u64, frontier: Option<u64>, heap: bool) -> Val {
        self.allocs.push(Alloc {
            bytes: vec![0; len as usize],
            caps: BTreeMap::new(),
            frontier,
            heap_live: heap,
        });
        Val::Ptr {
            alloc: self.allocs.len() - 1,
            off: 0,
        }
    }

    /// Validates an access and returns the allocation index and offset.
    fn access(&self, ptr: Val, size: u64, load: bool) -> Result<(usize, u64), Stop> {
        let Val::Ptr { alloc, off } = ptr else {
            return Err(Stop::Trap(TrapKind::TagViolation));
        };
        let a = &self.allocs[alloc];
        if off < 0 || off as u64 + size > a.bytes.len() as u64 {
            return Err(Stop::Trap(TrapKind::BoundsViolation));
        }
        let off = off as u64;
        if size == 16 && !off.is_multiple_of(16) {
            return Err(Stop::Trap(TrapKind::MisalignedCapAccess));
        }
        if load && a.frontier.is_some_and(|f| off + size > f) {
            return Err(Stop::Trap(TrapKind::OpBoundsViolation));
        }
        Ok((alloc, off))
    }

    fn load(&mut self, ty: MemType, ptr: Val) -> Result<Val, Stop> {
        let size = ty.size();
        let (alloc, off) = self.access(ptr, size, true)?;
        let a = &self.allocs[alloc];
        if ty == MemType::Cap {
            if let Some(v) = a.caps.get(&off) {
                return Ok(*v);
            }
        }
        let n = size.min(8) as usize;
        let mut raw = [0u8; 8];
        raw[..n].copy_from_slice(&a.bytes[off as usize..off as usize + n]);
        let v = i64::from_le_bytes(raw);
        let shift = 64 - 8 * n as u32;
        Ok(Val::Int(if shift == 0 { v } else { (v << shift) >> shift }))
    }

    fn store(&mut self, ty: MemType, value: Val, ptr: Val) -> Result<(), Stop> {
        let size = ty.size();
        let (alloc, off) = self.access(ptr, size, false)?;
        let a = &mut self.allocs[alloc];
        if let Some(f) = a.frontier {
            if off <= f && f < off + size {
                a.frontier = Some(off + size);
            }
        }
        let lo = off.saturating_sub(15);
        let stale: Vec<u64> = a
            .caps
            .range(lo..off + size)
            .map(|(k, _)| *k)
            .filter(|k| k + 16 > off)
            .collect();
        for k in stale {
            a.caps.remove(&k);
        }
        let bytes = value.int().to_le_bytes();
        let end = off as usize + size as usize;
        for (i, b) in a.bytes[off as usize..end].iter_mut().enumerate() {
            *b = bytes.get(i).copied().unwrap_or(0);
        }
        if ty == MemType::Cap && matches!(value, Val::Ptr { .. }) {
            a.caps.insert(off, value);
        }
        Ok(())
    }

    fn builtin(&mut self, b: Builtin, args: &[Val]) -> Result<Option<Val>, Stop> {
        let arg = args.first().copied().unwrap_or(Val::Int(0));
        Ok(match b {
            Builtin::Malloc | Builtin::MallocZeroed => {
                let size = arg.int();
                if size <= 0 || size as u64 > 1 << 20 {
                    Some(Val::Int(0))
                } else {
                    let bounded = self.opts.enforce && b == Builtin::Malloc;
                    Some(self.new_alloc(
                        HeapState::size_class(size as u64),
                        bounded.then_some(0),
                        true,
                    ))
                }
            }
            Builtin::Free => {
                match arg {
                    Val::Int(0) => {}
                    Val::Ptr { alloc, off: 0 } if self.allocs[alloc].heap_live => {
                        self.allocs[alloc].heap_live = false;
                    }
                    _ => return Err(Stop::Trap(TrapKind::InvalidFree)),
                }
                None
            }
            Builtin::Print => {
                self.output.push(arg.int());
                None
            }
            Builtin::Exit => return Err(Stop::Exit(arg.int())),
        })
    }

    fn call(&mut self, func: &Function, args: &[Val], depth: usize) -> Result<Option<Val>, Stop> {
        if depth > self.opts.max_depth {
            return Err(Stop::Trap(TrapKind::BoundsViolation));
        }
        let mut env: HashMap<Value, Val> = func
            .params
            .iter()
            .copied()
            .zip(args.iter().copied())
            .collect();
        let get = |env: &HashMap<Value, Val>, v: Value| env.get(&v).copied().unwrap_or(Val::Int(0));
        let mut block = 0usize;
        let mut prev: Option<usize> = None;
        loop {
            let b = &func.blocks[block];
            // Phis read their operands before any of them is written.
            let phis: Vec<(Value, Val)> = b
                .insts
                .iter()
                .filter_map(|inst| match &inst.op {
                    Op::Phi(incoming) => {
                        let p = prev.expect("entry block has no phis");
                        let (v, _) = incoming.iter().find(|(_, from)| from.index() == p)?;
                        Some((inst.result.expect("phi result"), get(&env, *v)))
                    }
                    _ => None,
                })
                .collect();
            env.extend(phis);

            for inst in &b.insts[b.first_non_phi()..] {
                self.steps += 1;
                if self.steps > self.opts.fuel {
                    return Err(Stop::Fuel);
                }
                let out = match &inst.op {
                    Op::Phi(_) => unreachable!("phis lead the block"),
                    Op::Const(c) => Some(Val::Int(*c)),
                    Op::Alloca { size, .. } => Some(self.new_alloc(*size, None, false)),
                    Op::StackCap { alloca, .. } => Some(get(&env, *alloca)),
                    Op::SetOpBounds { cap, len } => {
                        let v = get(&env, *cap);
                        let Val::Ptr { alloc, .. } = v else {
                            return Err(Stop::Trap(TrapKind::TagViolation));
                        };
                        if self.opts.enforce {
                            let a = &mut self.allocs[alloc];
                            if a.frontier.is_some_and(|f| *len > f) {
                                return Err(Stop::Trap(TrapKind::OpBoundsViolation));
                            }
                            a.frontier = Some(*len);
                        }
                        Some(v)
                    }
                    Op::Load { ty, ptr, .. } => Some(self.load(*ty, get(&env, *ptr))?),
                    Op::Store { ty, value, ptr, .. } => {
                        self.store(*ty, get(&env, *value), get(&env, *ptr))?;
                        None
                    }
                    Op::Gep { base, offset } => {
                        let delta = match offset {
                            Operand::Value(v) => get(&env, *v).int(),
                            Operand::Imm(i) => *i,
                        };
                        Some(match get(&env, *base) {
                            Val::Ptr { alloc, off } => Val::Ptr {
                                alloc,
                                off: off.wrapping_add(delta),
                            },
                            Val::Int(i) => Val::Int(i.wrapping_add(delta)),
                        })
                    }
                    Op::Copy(v) | Op::Pin(v) => Some(get(&env, *v)),
                    Op::Bin { op, lhs, rhs } => {
                        let r = match rhs {
                            Operand::Value(v) => get(&env, *v).int(),
                            Operand::Imm(i) => *i,
                        };
                        Some(Val::Int(op.eval(get(&env, *lhs).int(), r)))
                    }
                    Op::Call { callee, args } => {
                        let vals: Vec<Val> = args.iter().map(|a| get(&env, *a)).collect();
                        match Builtin::from_name(callee) {
                            Some(b) => self.builtin(b, &vals)?,
                            None => {
                                let f = self.module.function(callee).expect("verified callee");
                                self.call(f, &vals, depth + 1)?
                            }
                        }
                    }
                };
                if let (Some(r), Some(v)) = (inst.result, out) {
                    env.insert(r, v);
                }
            }
            self.steps += 1;
            prev = Some(block);
            block = match &b.term {
                Terminator::Br(t) => t.index(),
                Terminator::CondBr { cond, then, els } => {
                    if get(&env, *cond).int() != 0 {
                        then.index()
                    } else {
                        els.index()
                    }
                }
                Terminator::Ret(v) => return Ok(v.map(|v| get(&env, v))),
            };
        }
    }
}
