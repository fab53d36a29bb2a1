//! Liveness, live intervals and linear-scan register allocation.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::mir::verify::reverse_postorder;
use crate::mir::{Def, Function, Inst, Op, Operand, Value};

/// Where a value lives between instructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loc {
    Reg(u8),
    Slot(usize),
}

/// Start of an address computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Base {
    /// A stack variable at a fixed frame position.
    Frame(Value),
    Value(Value),
}

/// An address as base plus constant plus register offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Chain {
    pub base: Base,
    pub imm: i64,
    pub offsets: Vec<Value>,
}

/// Per-function facts shared by the allocator and the emitter.
pub(crate) struct Analysis {
    pub defs: HashMap<Value, Def>,
    pub order: Vec<usize>,
    pub consts: HashMap<Value, i64>,
    /// Stack variables addressed only through the frame.
    pub frame: HashSet<Value>,
    /// Address computations with no value of their own.
    pub folded: HashSet<Value>,
    pub block_start: Vec<u32>,
    pub block_end: Vec<u32>,
    pub calls: Vec<u32>,
}

impl Analysis {
    pub fn new(func: &Function) -> Analysis {
        let defs = func.defs();
        let order = reverse_postorder(func);
        let mut consts = HashMap::new();
        let mut geps = HashSet::new();
        let mut allocas = HashSet::new();
        for inst in func.blocks.iter().flat_map(|b| &b.insts) {
            match (&inst.op, inst.result) {
                (Op::Const(c), Some(r)) => {
                    consts.insert(r, *c);
                }
                (Op::Gep { .. } | Op::Copy(_), Some(r)) => {
                    geps.insert(r);
                }
                (Op::Alloca { .. }, Some(r)) => {
                    allocas.insert(r);
                }
                _ => {}
            }
        }
        // Uses that need the value itself, as opposed to an address built on it.
        let mut value_uses: HashSet<Value> = HashSet::new();
        for block in &func.blocks {
            for inst in &block.insts {
                match &inst.op {
                    Op::Load { .. } | Op::Copy(_) | Op::StackCap { .. } => {}
                    Op::Store { value, .. } => {
                        value_uses.insert(*value);
                    }
                    Op::Gep { offset, .. } => value_uses.extend(offset.value()),
                    op => value_uses.extend(op.uses()),
                }
            }
            value_uses.extend(block.term.uses());
        }
        let folded: HashSet<Value> = geps
            .iter()
            .copied()
            .filter(|g| !value_uses.contains(g))
            .collect();
        let frame: HashSet<Value> = allocas
            .iter()
            .copied()
            .filter(|a| !value_uses.contains(a))
            .collect();

        let mut block_start = vec![0; func.blocks.len()];
        let mut block_end = vec![0; func.blocks.len()];
        let mut calls = Vec::new();
        let mut n = 1u32;
        for &b in &order {
            block_start[b] = 2 * n;
            for inst in &func.blocks[b].insts {
                if matches!(inst.op, Op::Call { .. }) {
                    calls.push(2 * n);
                }
                n += 1;
            }
            block_end[b] = 2 * n;
            n += 1;
        }
        Analysis {
            defs,
            order,
            consts,
            frame,
            folded,
            block_start,
            block_end,
            calls,
        }
    }

    /// Resolves an address through `gep` and `copy` to its starting capability.
    pub fn chain(&self, func: &Function, mut v: Value) -> Chain {
        let mut imm = 0i64;
        let mut offsets = Vec::new();
        loop {
            match func.def_op(&self.defs, v) {
                Some(Op::Gep { base, offset }) => {
                    match offset {
                        Operand::Imm(i) => imm = imm.wrapping_add(*i),
                        Operand::Value(o) => match self.consts.get(o) {
                            Some(c) => imm = imm.wrapping_add(*c),
                            None => offsets.push(*o),
                        },
                    }
                    v = *base;
                }
                Some(Op::Copy(x)) => v = *x,
                _ => break,
            }
        }
        offsets.reverse();
        let base = if self.frame.contains(&v) {
            Base::Frame(v)
        } else {
            Base::Value(v)
        };
        Chain { base, imm, offsets }
    }

    /// Values that occupy a location.
    pub fn located(&self, func: &Function, v: Value) -> bool {
        !self.consts.contains_key(&v)
            && !self.folded.contains(&v)
            && !self.frame.contains(&v)
            && (self.defs.contains_key(&v) || func.params.contains(&v))
    }

    fn expand_value(&self, func: &Function, v: Value, out: &mut Vec<Value>) {
        if self.located(func, v) {
            out.push(v);
        } else if self.folded.contains(&v) {
            self.expand_address(func, v, out);
        }
    }

    fn expand_address(&self, func: &Function, ptr: Value, out: &mut Vec<Value>) {
        let chain = self.chain(func, ptr);
        if let Base::Value(b) = chain.base {
            self.expand_value(func, b, out);
        }
        for o in chain.offsets {
            self.expand_value(func, o, out);
        }
    }

    /// Located values read by an instruction, with addresses expanded.
    pub fn inst_uses(&self, func: &Function, inst: &Inst) -> Vec<Value> {
        let mut out = Vec::new();
        match &inst.op {
            Op::Load { ptr, .. } => self.expand_address(func, *ptr, &mut out),
            Op::Store { value, ptr, .. } => {
                self.expand_value(func, *value, &mut out);
                self.expand_address(func, *ptr, &mut out);
            }
            Op::Gep { .. } | Op::Copy(_) => {
                let r = inst.result.expect("address result");
                if !self.folded.contains(&r) {
                    self.expand_address(func, r, &mut out);
                }
            }
            Op::StackCap { .. } | Op::Phi(_) => {}
            op => op
                .uses()
                .into_iter()
                .for_each(|u| self.expand_value(func, u, &mut out)),
        }
        out
    }
}

/// Live range of a group of values that share a location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interval {
    pub start: u32,
    pub end: u32,
    /// Positions that read the value, sorted.
    pub uses: Vec<u32>,
}

/// Result of register allocation for one function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub locs: HashMap<Value, Loc>,
    /// Interval per group, keyed by the group's lowest value id.
    pub intervals: BTreeMap<Value, Interval>,
    pub groups: HashMap<Value, Value>,
    pub spill_slots: usize,
}

impl Allocation {
    pub fn loc(&self, v: Value) -> Option<Loc> {
        self.locs.get(&v).copied()
    }

    pub fn spills(&self) -> usize {
        self.spill_slots
    }
}

/// First allocatable register.
pub const FIRST_REG: u8 = 4;

fn find(parent: &mut HashMap<Value, Value>, v: Value) -> Value {
    let p = *parent.get(&v).unwrap_or(&v);
    if p == v {
        return v;
    }
    let r = find(parent, p);
    parent.insert(v, r);
    r
}

/// Allocates `k` registers, `c4` upwards, to the located values of `func`.
///
/// A pin and its operand always share a location. Values live across a call
/// are spilled. Otherwise the value whose next use is furthest away is
/// spilled first, the lower value id on ties.
pub fn linear_scan(func: &Function, k: usize) -> Allocation {
    assert!((4..=8).contains(&k), "between 4 and 8 registers");
    linear_scan_with(func, &Analysis::new(func), k)
}

pub(crate) fn linear_scan_with(func: &Function, an: &Analysis, k: usize) -> Allocation {
    let nblocks = func.blocks.len();
    let mut live_in: Vec<HashSet<Value>> = vec![HashSet::new(); nblocks];
    let mut live_out: Vec<HashSet<Value>> = vec![HashSet::new(); nblocks];
    let mut uses_at: HashMap<Value, Vec<u32>> = HashMap::new();
    let mut def_at: HashMap<Value, u32> = HashMap::new();
    let mut gen: Vec<HashSet<Value>> = vec![HashSet::new(); nblocks];
    let mut kill: Vec<HashSet<Value>> = vec![HashSet::new(); nblocks];
    let mut phi_uses: Vec<HashSet<Value>> = vec![HashSet::new(); nblocks];
    let mut phi_defs: Vec<HashSet<Value>> = vec![HashSet::new(); nblocks];

    for p in &func.params {
        def_at.insert(*p, 1);
    }
    for &b in &an.order {
        let block = &func.blocks[b];
        let mut pos = an.block_start[b];
        for inst in &block.insts {
            if let Op::Phi(incoming) = &inst.op {
                let r = inst.result.expect("phi result");
                def_at.insert(r, an.block_start[b]);
                kill[b].insert(r);
                phi_defs[b].insert(r);
                for (v, from) in incoming {
                    let mut vs = Vec::new();
                    an.expand_value(func, *v, &mut vs);
                    for u in vs {
                        phi_uses[from.index()].insert(u);
                        uses_at
                            .entry(u)
                            .or_default()
                            .push(an.block_end[from.index()]);
                    }
                }
            } else {
                for u in an.inst_uses(func, inst) {
                    if !kill[b].contains(&u) {
                        gen[b].insert(u);
                    }
                    uses_at.entry(u).or_default().push(pos);
                }
                if let Some(r) = inst.result {
                    if an.located(func, r) {
                        def_at.insert(r, pos + 1);
                        kill[b].insert(r);
                    }
                }
            }
            pos += 2;
        }
        for u in block.term.uses() {
            let mut vs = Vec::new();
            an.expand_value(func, u, &mut vs);
            for u in vs {
                if !kill[b].contains(&u) {
                    gen[b].insert(u);
                }
                uses_at.entry(u).or_default().push(an.block_end[b]);
            }
        }
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &b in an.order.iter().rev() {
            let mut out: HashSet<Value> = phi_uses[b].clone();
            for s in func.blocks[b].term.successors() {
                out.extend(
                    live_in[s.index()]
                        .iter()
                        .filter(|v| !phi_defs[s.index()].contains(v)),
                );
            }
            let mut inn: HashSet<Value> = gen[b].clone();
            inn.extend(out.iter().filter(|v| !kill[b].contains(v)));
            if out != live_out[b] || inn != live_in[b] {
                live_out[b] = out;
                live_in[b] = inn;
                changed = true;
            }
        }
    }

    let preds = func.predecessors();
    let mut ranges: HashMap<Value, (u32, u32)> = HashMap::new();
    let mut widen = |v: Value, p: u32| {
        let e = ranges.entry(v).or_insert((p, p));
        e.0 = e.0.min(p);
        e.1 = e.1.max(p);
    };
    for (v, p) in &def_at {
        widen(*v, *p);
    }
    for (v, ps) in &uses_at {
        ps.iter().for_each(|p| widen(*v, *p));
    }
    for &b in &an.order {
        live_in[b].iter().for_each(|v| widen(*v, an.block_start[b]));
        live_out[b].iter().for_each(|v| widen(*v, an.block_end[b]));
        // Phi results are written on the incoming edges.
        for r in &phi_defs[b] {
            for p in &preds[b] {
                widen(*r, an.block_end[p.index()]);
            }
        }
    }

    // Pins share a location with their operand.
    let mut parent: HashMap<Value, Value> = HashMap::new();
    for inst in func.blocks.iter().flat_map(|b| &b.insts) {
        if let (Op::Pin(x), Some(r)) = (&inst.op, inst.result) {
            if ranges.contains_key(x) && ranges.contains_key(&r) {
                let (a, b) = (find(&mut parent, *x), find(&mut parent, r));
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent.insert(hi, lo);
            }
        }
    }
    let mut groups: HashMap<Value, Value> = HashMap::new();
    let mut intervals: BTreeMap<Value, Interval> = BTreeMap::new();
    let mut members: Vec<Value> = ranges.keys().copied().collect();
    members.sort();
    for v in members {
        let g = find(&mut parent, v);
        groups.insert(v, g);
        let (s, e) = ranges[&v];
        let iv = intervals.entry(g).or_insert(Interval {
            start: s,
            end: e,
            uses: Vec::new(),
        });
        iv.start = iv.start.min(s);
        iv.end = iv.end.max(e);
        iv.uses.extend(uses_at.get(&v).into_iter().flatten());
    }
    for iv in intervals.values_mut() {
        iv.uses.sort_unstable();
        iv.uses.dedup();
    }

    let crosses_call = |iv: &Interval| an.calls.iter().any(|&c| iv.start < c && iv.end > c + 1);
    let mut order: Vec<(u32, Value)> = intervals.iter().map(|(g, iv)| (iv.start, *g)).collect();
    order.sort();
    let mut active: Vec<(Value, u8)> = Vec::new();
    let mut assigned: HashMap<Value, Loc> = HashMap::new();
    let mut slots = 0usize;
    let mut spill = |g: Value, assigned: &mut HashMap<Value, Loc>| {
        assigned.insert(g, Loc::Slot(slots));
        slots += 1;
    };
    for (start, g) in order {
        active.retain(|(a, _)| intervals[a].end >= start);
        if crosses_call(&intervals[&g]) {
            spill(g, &mut assigned);
            continue;
        }
        let free = (FIRST_REG..FIRST_REG + k as u8).find(|r| active.iter().all(|(_, ar)| ar != r));
        if let Some(r) = free {
            active.push((g, r));
            assigned.insert(g, Loc::Reg(r));
            continue;
        }
        let next_use = |x: &Value| {
            intervals[x]
                .uses
                .iter()
                .copied()
                .find(|&u| u >= start)
                .unwrap_or(u32::MAX)
        };
        let victim = active
            .iter()
            .map(|(a, _)| *a)
            .chain(std::iter::once(g))
            .max_by_key(|x| (next_use(x), std::cmp::Reverse(*x)))
            .expect("non-empty");
        if victim == g {
            spill(g, &mut assigned);
        } else {
            let idx = active
                .iter()
                .position(|(a, _)| *a == victim)
                .expect("active");
            let (_, r) = active.remove(idx);
            spill(victim, &mut assigned);
            active.push((g, r));
            assigned.insert(g, Loc::Reg(r));
        }
    }

    let locs = groups.iter().map(|(v, g)| (*v, assigned[g])).collect();
    Allocation {
        locs,
        intervals,
        groups,
        spill_slots: slots,
    }
}
