//! Store linearization.
//!
//! Every store through a conditional capability is followed by `pin` of the
//! capability it went through, and later uses in the block read the pinned
//! value. Conditional capabilities that are stored through and used in more
//! than one block live in a dedicated stack slot: each other block reloads
//! the slot on entry, and every pin of a capability that also lives in memory
//! is followed by a `!refresh` store of the pinned value back to that memory.

use std::collections::{BTreeSet, HashMap};

use super::root_of;
use crate::mir::verify::{dominates, dominators};
use crate::mir::{Builtin, Def, Function, Inst, MemType, Module, Op, Operand, Type, Value};

pub fn pass_store_linearize(module: &Module) -> Module {
    let mut out = module.clone();
    for func in &mut out.functions {
        escape_slots(func);
        pin_stores(func);
    }
    out
}

/// Capabilities whose Write-before-Read bound may be live: parameters,
/// results of `setopbounds`, loads, phis and calls that return capabilities.
fn conditional_root(func: &Function, defs: &HashMap<Value, Def>, r: Value) -> bool {
    if func.ty(r) != Type::Cap {
        return false;
    }
    match defs.get(&r) {
        Some(Def::Param(_)) => true,
        Some(Def::Inst(b, i)) => match &func.block(*b).insts[*i].op {
            Op::SetOpBounds { .. }
            | Op::Load {
                ty: MemType::Cap, ..
            }
            | Op::Phi(_) => true,
            Op::Call { callee, .. } => {
                Builtin::from_name(callee).is_none_or(|b| b == Builtin::Malloc)
            }
            _ => false,
        },
        None => false,
    }
}

fn def_block(defs: &HashMap<Value, Def>, v: Value) -> usize {
    match defs.get(&v) {
        Some(Def::Inst(b, _)) => b.index(),
        _ => 0,
    }
}

fn escape_slots(func: &mut Function) {
    let defs = func.defs();
    let roots: HashMap<Value, Value> = (0..func.values.len() as u32)
        .map(Value)
        .map(|v| (v, root_of(func, &defs, v)))
        .collect();

    let mut stored = BTreeSet::new();
    for inst in func.blocks.iter().flat_map(|b| &b.insts) {
        if let Op::Store {
            ptr,
            refresh: false,
            ..
        } = inst.op
        {
            let r = roots[&ptr];
            if conditional_root(func, &defs, r) {
                stored.insert(r);
            }
        }
    }
    let mut escaping = BTreeSet::new();
    // A variable holding a capability that is stored through in another
    // block gets a refresh store there.
    let mut store_blocks: HashMap<Value, BTreeSet<usize>> = HashMap::new();
    for (b, block) in func.blocks.iter().enumerate() {
        for inst in &block.insts {
            if let Op::Store {
                ptr,
                refresh: false,
                ..
            } = inst.op
            {
                store_blocks.entry(roots[&ptr]).or_default().insert(b);
            }
        }
    }
    for inst in func.blocks.iter().flat_map(|b| &b.insts) {
        if let Op::Store {
            ty: MemType::Cap,
            value,
            ptr,
            refresh: false,
            ..
        } = inst.op
        {
            let home = roots[&ptr];
            let elsewhere = store_blocks
                .get(&roots[&value])
                .is_some_and(|bs| bs.iter().any(|&b| b != def_block(&defs, home)));
            if stored.contains(&home) && elsewhere {
                escaping.insert(home);
            }
        }
    }
    let mut check = |u: Value, at: usize| {
        if stored.contains(&roots[&u]) && def_block(&defs, u) != at {
            escaping.insert(roots[&u]);
        }
    };
    for (b, block) in func.blocks.iter().enumerate() {
        for inst in &block.insts {
            match &inst.op {
                Op::Phi(incoming) => incoming.iter().for_each(|(u, p)| check(*u, p.index())),
                op => op.uses().into_iter().for_each(|u| check(u, b)),
            }
        }
        block.term.uses().into_iter().for_each(|u| check(u, b));
    }
    if escaping.is_empty() {
        return;
    }

    let mut slots = HashMap::new();
    let mut entry_prefix = Vec::new();
    for &r in &escaping {
        let slot = func.new_value_like(r, Type::Cap);
        slots.insert(r, slot);
        entry_prefix.push(Inst {
            result: Some(slot),
            op: Op::Alloca {
                size: 16,
                wbr: false,
                escape: true,
            },
            line: 0,
        });
    }
    let derive: HashMap<Value, Op> = func
        .blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter(|i| matches!(i.op, Op::Gep { .. } | Op::Copy(_) | Op::Pin(_)))
        .map(|i| (i.result.expect("derived value"), i.op.clone()))
        .collect();

    // Each block other than the defining one reads the slot instead.
    let mut phi_rewrites = Vec::new();
    for b in 0..func.blocks.len() {
        let mut m = Materializer {
            b,
            header: Vec::new(),
            local: HashMap::new(),
        };
        let mut insts = std::mem::take(&mut func.blocks[b].insts);
        for inst in insts.iter_mut().filter(|i| !matches!(i.op, Op::Phi(_))) {
            inst.op
                .map_uses(|u| m.get(func, &defs, &roots, &slots, &derive, u));
        }
        let mut term = func.blocks[b].term.clone();
        term.map_uses(|u| m.get(func, &defs, &roots, &slots, &derive, u));
        for s in term.successors() {
            let succ = if s.index() == b {
                insts.clone()
            } else {
                func.blocks[s.index()].insts.clone()
            };
            for (pi, phi) in succ.iter().enumerate() {
                let Op::Phi(incoming) = &phi.op else { continue };
                for (ai, (u, p)) in incoming.iter().enumerate() {
                    if p.index() == b {
                        let v = m.get(func, &defs, &roots, &slots, &derive, *u);
                        phi_rewrites.push((s.index(), pi, ai, v));
                    }
                }
            }
        }
        let at = insts
            .iter()
            .position(|i| !matches!(i.op, Op::Phi(_)))
            .unwrap_or(insts.len());
        insts.splice(at..at, m.header);
        func.blocks[b].insts = insts;
        func.blocks[b].term = term;
    }
    for (s, pi, ai, v) in phi_rewrites {
        if let Op::Phi(incoming) = &mut func.blocks[s].insts[pi].op {
            incoming[ai].0 = v;
        }
    }

    // The defining block writes the slot once the value exists.
    for &r in escaping.iter().rev() {
        let store = Inst {
            result: None,
            op: Op::Store {
                ty: MemType::Cap,
                volatile: true,
                value: r,
                ptr: slots[&r],
                refresh: false,
            },
            line: 0,
        };
        match defs[&r] {
            Def::Param(_) => func.blocks[0].insts.insert(0, store),
            Def::Inst(b, _) => {
                let block = &mut func.blocks[b.index()];
                let pos = block
                    .insts
                    .iter()
                    .position(|i| i.result == Some(r))
                    .expect("definition");
                let at = if matches!(block.insts[pos].op, Op::Phi(_)) {
                    block.first_non_phi()
                } else {
                    pos + 1
                };
                block.insts.insert(at, store);
            }
        }
    }
    func.blocks[0].insts.splice(0..0, entry_prefix);
}

struct Materializer {
    b: usize,
    header: Vec<Inst>,
    local: HashMap<Value, Value>,
}

impl Materializer {
    /// The value to use in block `b` in place of `u`.
    fn get(
        &mut self,
        func: &mut Function,
        defs: &HashMap<Value, Def>,
        roots: &HashMap<Value, Value>,
        slots: &HashMap<Value, Value>,
        derive: &HashMap<Value, Op>,
        u: Value,
    ) -> Value {
        let Some(&r) = roots.get(&u) else { return u };
        let Some(&slot) = slots.get(&r) else { return u };
        if def_block(defs, u) == self.b {
            return u;
        }
        if let Some(&v) = self.local.get(&u) {
            return v;
        }
        let v = if u == r {
            let v = func.new_value_like(r, Type::Cap);
            self.header.push(Inst {
                result: Some(v),
                op: Op::Load {
                    ty: MemType::Cap,
                    volatile: true,
                    ptr: slot,
                },
                line: 0,
            });
            v
        } else {
            match &derive[&u] {
                Op::Gep { base, offset } => {
                    let nb = self.get(func, defs, roots, slots, derive, *base);
                    let v = func.new_value_like(u, Type::Cap);
                    self.header.push(Inst {
                        result: Some(v),
                        op: Op::Gep {
                            base: nb,
                            offset: *offset,
                        },
                        line: 0,
                    });
                    v
                }
                Op::Copy(x) | Op::Pin(x) => self.get(func, defs, roots, slots, derive, *x),
                _ => unreachable!("only derived values are rematerialized"),
            }
        };
        self.local.insert(u, v);
        v
    }
}

/// Byte range written through a root, `None` when not constant, and the
/// capability written, if any.
type Writer = (Option<(i64, i64)>, Option<Value>);

/// A memory location known to hold a capability, and the instruction after
/// which it does.
#[derive(Clone, Copy)]
struct Home {
    ptr: Value,
    block: usize,
    index: usize,
}

struct Pinner<'f> {
    func: &'f mut Function,
    /// The function as it was before pinning, for looking up definitions.
    orig: Function,
    defs: HashMap<Value, Def>,
    idom: Vec<Option<usize>>,
    derive: HashMap<Value, Op>,
    /// Escape slot to the capability it holds, and back.
    slot_owner: HashMap<Value, Value>,
    slot_of: HashMap<Value, Value>,
    homes: HashMap<Value, Vec<Home>>,
    out: Vec<Inst>,
    /// Latest pinned version of each root in the current block.
    cur: HashMap<Value, Value>,
    remat: HashMap<(Value, Value), Value>,
    reloads: HashMap<Value, Value>,
}

impl Pinner<'_> {
    fn root(&self, mut v: Value) -> Value {
        while let Some(Op::Gep { base: x, .. } | Op::Copy(x) | Op::Pin(x)) = self.derive.get(&v) {
            v = *x;
        }
        v
    }

    /// The pinned or original capability a derived value was built from.
    fn version(&self, mut v: Value) -> Value {
        while let Some(Op::Gep { base: x, .. } | Op::Copy(x)) = self.derive.get(&v) {
            v = *x;
        }
        v
    }

    /// The capability a root stands for: reloads of an escape slot stand for
    /// the value the slot was created for.
    fn canonical(&self, v: Value) -> Value {
        let r = self.root(v);
        match self.orig.def_op(&self.defs, r) {
            Some(Op::Load {
                ty: MemType::Cap,
                ptr,
                ..
            }) => self.slot_owner.get(ptr).copied().unwrap_or(r),
            _ => r,
        }
    }

    fn conditional(&self, r: Value) -> bool {
        conditional_root(&self.orig, &self.defs, r)
    }

    fn push(&mut self, inst: Inst) {
        if let (Some(r), Op::Gep { .. } | Op::Copy(_) | Op::Pin(_)) = (inst.result, &inst.op) {
            self.derive.insert(r, inst.op.clone());
        }
        self.out.push(inst);
    }

    /// Rebuilds `u` on top of the current version of its root.
    fn current(&mut self, u: Value) -> Value {
        let r = self.root(u);
        let Some(&c) = self.cur.get(&r) else { return u };
        let ver = self.version(u);
        if ver == c {
            return u;
        }
        if u == ver {
            return c;
        }
        if let Some(&v) = self.remat.get(&(u, c)) {
            return v;
        }
        let v = match self.derive[&u].clone() {
            Op::Gep { base, offset } => {
                let nb = self.current(base);
                let v = self.func.new_value_like(u, Type::Cap);
                self.push(Inst {
                    result: Some(v),
                    op: Op::Gep { base: nb, offset },
                    line: 0,
                });
                v
            }
            Op::Copy(x) => self.current(x),
            _ => unreachable!("versions stop at pins"),
        };
        self.remat.insert((u, c), v);
        v
    }

    /// A value usable in block `b` that addresses the same memory as `ptr`.
    fn localize(&mut self, ptr: Value, b: usize) -> Option<Value> {
        if def_block(&self.defs, ptr) == b && self.defs.contains_key(&ptr) {
            return Some(self.current(ptr));
        }
        let owner = self.canonical(ptr);
        let Some(&slot) = self.slot_of.get(&owner) else {
            return Some(ptr);
        };
        if self.root(ptr) != ptr {
            return None;
        }
        if let Some(&v) = self.reloads.get(&owner) {
            return Some(self.current(v));
        }
        let v = self.func.new_value_like(owner, Type::Cap);
        self.push(Inst {
            result: Some(v),
            op: Op::Load {
                ty: MemType::Cap,
                volatile: true,
                ptr: slot,
            },
            line: 0,
        });
        self.reloads.insert(owner, v);
        Some(v)
    }

    /// Stores the freshly pinned `pin` to every memory location that holds
    /// the capability at this point.
    fn refresh(&mut self, pin: Value, root: Value, b: usize, index: usize) {
        let homes = self
            .homes
            .get(&self.canonical(root))
            .cloned()
            .unwrap_or_default();
        for h in homes {
            let holds = if h.block == b {
                h.index < index
            } else {
                dominates(&self.idom, h.block, b)
            };
            if !holds {
                continue;
            }
            if let Some(ptr) = self.localize(h.ptr, b) {
                self.push(Inst {
                    result: None,
                    op: Op::Store {
                        ty: MemType::Cap,
                        volatile: true,
                        value: pin,
                        ptr,
                        refresh: true,
                    },
                    line: 0,
                });
            }
        }
    }
}

fn derived_values(func: &Function) -> HashMap<Value, Op> {
    func.blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter(|i| matches!(i.op, Op::Gep { .. } | Op::Copy(_) | Op::Pin(_)))
        .map(|i| (i.result.expect("derived value"), i.op.clone()))
        .collect()
}

fn pin_stores(func: &mut Function) {
    let defs = func.defs();
    let idom = dominators(func);
    let derive = derived_values(func);
    let orig = func.clone();
    let mut p = Pinner {
        func,
        orig,
        defs,
        idom,
        derive,
        slot_owner: HashMap::new(),
        slot_of: HashMap::new(),
        homes: HashMap::new(),
        out: Vec::new(),
        cur: HashMap::new(),
        remat: HashMap::new(),
        reloads: HashMap::new(),
    };
    p.find_homes();

    for b in 0..p.func.blocks.len() {
        p.cur.clear();
        p.remat.clear();
        p.reloads.clear();
        let insts = std::mem::take(&mut p.func.blocks[b].insts);
        for (i, inst) in insts.iter().enumerate() {
            let mut inst = inst.clone();
            if !matches!(inst.op, Op::Phi(_)) {
                let uses: Vec<Value> = inst.op.uses().into_iter().map(|u| p.current(u)).collect();
                let mut it = uses.into_iter();
                inst.op.map_uses(|_| it.next().expect("same arity"));
            }
            match inst.op.clone() {
                Op::Store {
                    ptr,
                    refresh: false,
                    ..
                } => {
                    p.push(inst);
                    let target = p.root(ptr);
                    if !p.conditional(target) {
                        continue;
                    }
                    let through = p.version(ptr);
                    let already = matches!(insts.get(i + 1), Some(Inst { op: Op::Pin(x), .. }) if *x == through);
                    if !already {
                        let v = p.func.new_value_like(target, Type::Cap);
                        p.push(Inst {
                            result: Some(v),
                            op: Op::Pin(through),
                            line: 0,
                        });
                        p.cur.insert(target, v);
                        p.refresh(v, target, b, i);
                    }
                }
                Op::Pin(x) => {
                    let r = inst.result.expect("pin result");
                    let root = p.root(x);
                    p.push(inst);
                    p.cur.insert(root, r);
                }
                _ => p.push(inst),
            }
        }

        let mut term = p.func.blocks[b].term.clone();
        let uses: Vec<Value> = term.uses().into_iter().map(|u| p.current(u)).collect();
        let mut it = uses.into_iter();
        term.map_uses(|_| it.next().expect("same arity"));
        let mut phi_rewrites = Vec::new();
        for s in term.successors() {
            let succ = if s.index() == b {
                &insts
            } else {
                &p.func.blocks[s.index()].insts
            };
            for (pi, phi) in succ.iter().enumerate() {
                if let Op::Phi(incoming) = &phi.op {
                    for (ai, (u, from)) in incoming.iter().enumerate() {
                        if from.index() == b {
                            phi_rewrites.push((s.index(), pi, ai, *u));
                        }
                    }
                }
            }
        }
        let phi_rewrites: Vec<_> = phi_rewrites
            .into_iter()
            .map(|(s, pi, ai, u)| (s, pi, ai, p.current(u)))
            .collect();
        p.func.blocks[b].insts = std::mem::take(&mut p.out);
        p.func.blocks[b].term = term;
        for (s, pi, ai, v) in phi_rewrites {
            // Phis keep their positions at the head of the block.
            if let Op::Phi(incoming) = &mut p.func.blocks[s].insts[pi].op {
                incoming[ai].0 = v;
            }
        }
    }
}

impl Pinner<'_> {
    /// Collects, per capability, the memory locations that hold it and no
    /// other value, so refreshing them cannot clobber anything.
    /// Constant byte offset of `v` from its root, if it has one.
    fn const_offset(&self, mut v: Value) -> Option<i64> {
        let mut off = 0i64;
        loop {
            match self.derive.get(&v) {
                Some(Op::Gep { base, offset }) => {
                    off = off.wrapping_add(match offset {
                        Operand::Imm(i) => *i,
                        Operand::Value(x) => match self.orig.def_op(&self.defs, *x) {
                            Some(Op::Const(c)) => *c,
                            _ => return None,
                        },
                    });
                    v = *base;
                }
                Some(Op::Copy(x) | Op::Pin(x)) => v = *x,
                _ => return Some(off),
            }
        }
    }

    fn find_homes(&mut self) {
        let func = &*self.func;
        for block in &func.blocks {
            for inst in &block.insts {
                if let Op::Store {
                    ty: MemType::Cap,
                    value,
                    ptr,
                    refresh: false,
                    ..
                } = inst.op
                {
                    if matches!(
                        func.def_op(&self.defs, ptr),
                        Some(Op::Alloca { escape: true, .. })
                    ) {
                        self.slot_owner.insert(ptr, value);
                        self.slot_of.insert(value, ptr);
                    }
                }
            }
        }
        let mut candidates: Vec<(Value, Home)> = Vec::new();
        let mut writers: HashMap<Value, Vec<Writer>> = HashMap::new();
        for (b, block) in self.func.blocks.iter().enumerate() {
            for (i, inst) in block.insts.iter().enumerate() {
                match inst.op {
                    Op::Store {
                        ty,
                        value,
                        ptr,
                        refresh: false,
                        ..
                    } => {
                        let owner = (ty == MemType::Cap).then(|| self.canonical(value));
                        let range = self.const_offset(ptr).map(|o| (o, o + ty.size() as i64));
                        writers
                            .entry(self.root(ptr))
                            .or_default()
                            .push((range, owner));
                        if let Some(owner) = owner {
                            candidates.push((
                                owner,
                                Home {
                                    ptr,
                                    block: b,
                                    index: i,
                                },
                            ));
                        }
                    }
                    Op::Load {
                        ty: MemType::Cap,
                        ptr,
                        ..
                    } => {
                        let r = inst.result.expect("load result");
                        if !self.slot_owner.contains_key(&ptr) {
                            candidates.push((
                                r,
                                Home {
                                    ptr,
                                    block: b,
                                    index: i,
                                },
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
        for (owner, home) in candidates {
            let slot = self
                .const_offset(home.ptr)
                .map(|o| (o, o + MemType::Cap.size() as i64));
            let overlaps = |w: Option<(i64, i64)>| match (w, slot) {
                (Some((a, b)), Some((c, d))) => a < d && c < b,
                _ => true,
            };
            let exclusive = writers.get(&self.root(home.ptr)).is_none_or(|w| {
                w.iter()
                    .all(|(range, o)| !overlaps(*range) || *o == Some(owner))
            });
            if exclusive && self.func.ty(owner) == Type::Cap {
                self.homes.entry(owner).or_default().push(home);
            }
        }
    }
}
