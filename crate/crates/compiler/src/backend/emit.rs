use std::collections::HashMap;
use std::fmt::Write;

use monvm_core::cap::{representable_alignment, representable_length};

use super::alloc::{linear_scan_with, Allocation, Analysis, Base, Loc};
use super::{LowerOptions, LoweringError};
use crate::mir::print::inst_text;
use crate::mir::{BinOp, Builtin, Function, MemType, Op, Operand, Terminator, Value};

const SP: u8 = 2;
const RESULT: u8 = 4;
const MAX_ARGS: usize = 4;
/// Scratch for results and stored values.
const S_VAL: u8 = 12;
/// Scratch for address bases.
const S_BASE: u8 = 13;
/// Scratch for offsets and memory-to-memory moves.
const S_OFF: u8 = 14;
/// Breaks cycles in parallel moves.
const S_CYCLE: u8 = 15;
const FRAME_ALIGN: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Src {
    Loc(Loc),
    Imm(i64),
}

struct Frame {
    size: i64,
    vars: HashMap<Value, i64>,
    slots: Vec<i64>,
}

struct Emitter<'a> {
    func: &'a Function,
    an: &'a Analysis,
    alloc: &'a Allocation,
    frame: Frame,
    opts: &'a LowerOptions,
    out: &'a mut String,
    /// Spilled base reloaded by the previous memory access.
    last_base: Option<(Value, u8)>,
}

fn label(func: &Function, b: usize) -> String {
    format!("{}.{}", func.name, func.blocks[b].name)
}

fn round_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

fn layout(func: &Function, alloc: &Allocation) -> Result<Frame, LoweringError> {
    let mut off = 16u64;
    let mut vars = HashMap::new();
    for inst in func.blocks.iter().flat_map(|b| &b.insts) {
        if let (Op::Alloca { size, .. }, Some(r)) = (&inst.op, inst.result) {
            let size = (*size).max(1);
            let align = representable_alignment(size).max(16);
            if align > FRAME_ALIGN {
                return Err(LoweringError::Unsupported {
                    function: func.name.clone(),
                    line: inst.line,
                    message: format!("stack variable of {size} bytes needs {align}-byte alignment"),
                });
            }
            off = round_up(off, align);
            vars.insert(r, off as i64);
            off += round_up(representable_length(size), 16);
        }
    }
    let slots = (0..alloc.spill_slots)
        .map(|i| (off + 16 * i as u64) as i64)
        .collect();
    off += 16 * alloc.spill_slots as u64;
    Ok(Frame {
        size: round_up(off, FRAME_ALIGN) as i64,
        vars,
        slots,
    })
}

pub(super) fn emit_function(
    func: &Function,
    opts: &LowerOptions,
    out: &mut String,
) -> Result<(), LoweringError> {
    let an = Analysis::new(func);
    let alloc = linear_scan_with(func, &an, opts.registers);
    let frame = layout(func, &alloc)?;
    for inst in func.blocks.iter().flat_map(|b| &b.insts) {
        if let Op::Call { args, .. } = &inst.op {
            if args.len() > MAX_ARGS {
                return Err(LoweringError::Unsupported {
                    function: func.name.clone(),
                    line: inst.line,
                    message: format!("calls take at most {MAX_ARGS} arguments"),
                });
            }
        }
    }
    if func.params.len() > MAX_ARGS {
        return Err(LoweringError::Unsupported {
            function: func.name.clone(),
            line: func.line,
            message: format!("functions take at most {MAX_ARGS} parameters"),
        });
    }
    let mut e = Emitter {
        func,
        an: &an,
        alloc: &alloc,
        frame,
        opts,
        out,
        last_base: None,
    };
    e.function();
    Ok(())
}

impl Emitter<'_> {
    fn line(&mut self, text: impl AsRef<str>) {
        self.out.push_str("  ");
        self.out.push_str(text.as_ref());
        self.out.push('\n');
    }

    fn comment(&mut self, text: impl AsRef<str>) {
        if self.opts.emit_comments {
            self.line(format!("; {}", text.as_ref()));
        }
    }

    fn slot_off(&self, loc: Loc) -> Option<i64> {
        match loc {
            Loc::Slot(s) => Some(self.frame.slots[s]),
            Loc::Reg(_) => None,
        }
    }

    fn is_cap(&self, v: Value) -> bool {
        self.func.ty(v) == crate::mir::Type::Cap
    }

    fn src(&self, v: Value) -> Src {
        match self.an.consts.get(&v) {
            Some(c) => Src::Imm(*c),
            None => Src::Loc(self.alloc.loc(v).expect("located value")),
        }
    }

    /// A register holding `v`, loading it into `scratch` when needed.
    fn reg(&mut self, v: Value, scratch: u8) -> u8 {
        if let Some(c) = self.an.consts.get(&v) {
            self.line(format!("li c{scratch}, {c}"));
            return scratch;
        }
        if self.an.frame.contains(&v) || self.an.folded.contains(&v) {
            self.address_value(v, scratch);
            return scratch;
        }
        match self.alloc.loc(v).expect("located value") {
            Loc::Reg(r) => r,
            Loc::Slot(s) => {
                let off = self.frame.slots[s];
                self.line(format!("clc c{scratch}, {off}(c{SP})"));
                scratch
            }
        }
    }

    /// Register a result is computed into.
    fn target(&self, v: Value) -> u8 {
        match self.alloc.loc(v) {
            Some(Loc::Reg(r)) => r,
            _ => S_VAL,
        }
    }

    /// Writes a result computed in `reg` back to its slot.
    fn finish(&mut self, v: Value, reg: u8) {
        if let Some(off) = self.alloc.loc(v).and_then(|l| self.slot_off(l)) {
            self.line(format!("csc c{reg}, {off}(c{SP})"));
        }
    }

    /// Base register and offset operand for a memory access.
    fn address(&mut self, ptr: Value) -> (u8, String) {
        let chain = self.an.chain(self.func, ptr);
        let (base, mut imm) = match chain.base {
            Base::Frame(a) => (SP, self.frame.vars[&a] + chain.imm),
            Base::Value(b) => {
                let r = self.reg(b, S_BASE);
                if r == S_BASE {
                    self.last_base = Some((self.alloc.groups[&b], S_BASE));
                }
                (r, chain.imm)
            }
        };
        if chain.offsets.is_empty() {
            return (base, imm.to_string());
        }
        let base = if base == SP {
            self.line(format!("cincoffset c{S_BASE}, c{SP}, {imm}"));
            imm = 0;
            S_BASE
        } else {
            base
        };
        let mut acc = self.reg(chain.offsets[0], S_OFF);
        for o in &chain.offsets[1..] {
            let r = self.reg(*o, S_CYCLE);
            self.line(format!("add c{S_OFF}, c{acc}, c{r}"));
            acc = S_OFF;
        }
        if imm != 0 {
            self.line(format!("add c{S_OFF}, c{acc}, {imm}"));
            acc = S_OFF;
        }
        (base, format!("c{acc}"))
    }

    /// Materializes an address as a capability in `rd`.
    fn address_value(&mut self, v: Value, rd: u8) {
        let chain = self.an.chain(self.func, v);
        let (base, imm) = match chain.base {
            Base::Frame(a) => (SP, self.frame.vars[&a] + chain.imm),
            Base::Value(b) => (self.reg(b, rd), chain.imm),
        };
        if base != rd || imm != 0 || chain.offsets.is_empty() {
            self.line(format!("cincoffset c{rd}, c{base}, {imm}"));
        }
        for o in &chain.offsets {
            let r = self.reg(*o, S_OFF);
            self.line(format!("cincoffset c{rd}, c{rd}, c{r}"));
        }
    }

    fn mov(&mut self, dst: Loc, src: Src, cap: bool) {
        if src == Src::Loc(dst) {
            return;
        }
        let mv = if cap { "cmove" } else { "mv" };
        match (dst, src) {
            (Loc::Reg(d), Src::Loc(Loc::Reg(s))) => self.line(format!("{mv} c{d}, c{s}")),
            (Loc::Reg(d), Src::Loc(Loc::Slot(s))) => {
                let off = self.frame.slots[s];
                self.line(format!("clc c{d}, {off}(c{SP})"));
            }
            (Loc::Reg(d), Src::Imm(i)) => self.line(format!("li c{d}, {i}")),
            (Loc::Slot(d), src) => {
                let off = self.frame.slots[d];
                let r = match src {
                    Src::Loc(Loc::Reg(s)) => s,
                    other => {
                        self.mov(Loc::Reg(S_OFF), other, cap);
                        S_OFF
                    }
                };
                self.line(format!("csc c{r}, {off}(c{SP})"));
            }
        }
    }

    /// Performs all moves as if simultaneously.
    fn parallel_move(&mut self, moves: Vec<(Loc, Src, bool)>) {
        let mut pending: Vec<(Loc, Src, bool)> = moves
            .into_iter()
            .filter(|(d, s, _)| *s != Src::Loc(*d))
            .collect();
        let imms: Vec<(Loc, Src, bool)> = pending
            .iter()
            .copied()
            .filter(|m| matches!(m.1, Src::Imm(_)))
            .collect();
        pending.retain(|m| !matches!(m.1, Src::Imm(_)));
        while !pending.is_empty() {
            let ready = pending
                .iter()
                .position(|(d, _, _)| pending.iter().all(|(_, s, _)| *s != Src::Loc(*d)));
            match ready {
                Some(i) => {
                    let (d, s, cap) = pending.remove(i);
                    self.mov(d, s, cap);
                }
                None => {
                    let (d, _, cap) = pending[0];
                    self.mov(Loc::Reg(S_CYCLE), Src::Loc(d), cap);
                    for m in pending.iter_mut() {
                        if m.1 == Src::Loc(d) {
                            m.1 = Src::Loc(Loc::Reg(S_CYCLE));
                        }
                    }
                }
            }
        }
        for (d, s, cap) in imms {
            self.mov(d, s, cap);
        }
    }

    fn edge_moves(&mut self, from: usize, to: usize) {
        let mut moves = Vec::new();
        for inst in &self.func.blocks[to].insts {
            if let Op::Phi(incoming) = &inst.op {
                let r = inst.result.expect("phi result");
                let (v, _) = incoming
                    .iter()
                    .find(|(_, p)| p.index() == from)
                    .expect("verified phi");
                moves.push((
                    self.alloc.loc(r).expect("phi is located"),
                    self.src(*v),
                    self.is_cap(r),
                ));
            }
        }
        self.parallel_move(moves);
    }

    fn has_phis(&self, b: usize) -> bool {
        matches!(self.func.blocks[b].insts.first(), Some(i) if matches!(i.op, Op::Phi(_)))
    }

    fn function(&mut self) {
        let func = self.func;
        let _ = writeln!(self.out, "{}:", func.name);
        let size = self.frame.size;
        self.line(format!("cincoffset c{SP}, c{SP}, {}", -size));
        self.line(format!("csc c1, 0(c{SP})"));
        let moves = func
            .params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                self.alloc
                    .loc(*p)
                    .map(|l| (l, Src::Loc(Loc::Reg(RESULT + i as u8)), self.is_cap(*p)))
            })
            .collect();
        self.parallel_move(moves);

        let order = self.an.order.clone();
        let mut trampolines = Vec::new();
        for (pos, &b) in order.iter().enumerate() {
            let next = order.get(pos + 1).copied();
            let _ = writeln!(self.out, "{}:", label(func, b));
            for inst in &func.blocks[b].insts {
                self.inst(inst);
            }
            self.last_base = None;
            match &func.blocks[b].term {
                Terminator::Br(s) => {
                    self.edge_moves(b, s.index());
                    if next != Some(s.index()) {
                        self.line(format!("jal c0, {}", label(func, s.index())));
                    }
                }
                Terminator::CondBr { cond, then, els } => {
                    let target = |s: usize, tag: &str, tramps: &mut Vec<(String, usize, usize)>| {
                        if self.has_phis(s) {
                            let name = format!("{}.{tag}", label(func, b));
                            tramps.push((name.clone(), b, s));
                            name
                        } else {
                            label(func, s)
                        }
                    };
                    let t = target(then.index(), "then", &mut trampolines);
                    let f = target(els.index(), "else", &mut trampolines);
                    let rc = self.reg(*cond, S_VAL);
                    self.line(format!("bne c{rc}, c0, {t}"));
                    if next != Some(els.index()) || self.has_phis(els.index()) {
                        self.line(format!("jal c0, {f}"));
                    }
                }
                Terminator::Ret(v) => {
                    if let Some(v) = v {
                        let src = self.src(*v);
                        self.mov(Loc::Reg(RESULT), src, self.is_cap(*v));
                    }
                    self.line(format!("clc c1, 0(c{SP})"));
                    self.line(format!("cincoffset c{SP}, c{SP}, {size}"));
                    self.line("ret");
                }
            }
        }
        for (name, from, to) in trampolines {
            let _ = writeln!(self.out, "{name}:");
            self.edge_moves(from, to);
            self.line(format!("jal c0, {}", label(func, to)));
        }
    }

    fn inst(&mut self, inst: &crate::mir::Inst) {
        let prev_base = self.last_base.take();
        if matches!(inst.op, Op::Phi(_)) {
            return;
        }
        self.comment(inst_text(self.func, inst));
        let Some(result) = inst.result else {
            return self.effect(inst);
        };
        if !self.an.located(self.func, result) {
            return;
        }
        let rd = self.target(result);
        match &inst.op {
            Op::Const(_) | Op::Phi(_) => return,
            Op::Alloca { .. } => {
                let off = self.frame.vars[&result];
                self.line(format!("cincoffset c{rd}, c{SP}, {off}"));
            }
            Op::StackCap { alloca, size } => {
                let off = self.frame.vars[alloca];
                self.line(format!("cincoffset c{rd}, c{SP}, {off}"));
                if self.opts.capabilities {
                    self.line(format!("csetbounds c{rd}, c{rd}, {size}"));
                }
            }
            Op::SetOpBounds { cap, len } => {
                let rs = self.reg(*cap, S_BASE);
                if self.opts.capabilities {
                    let len = if *len == 0 {
                        "c0".to_string()
                    } else {
                        len.to_string()
                    };
                    self.line(format!("csetwbrbound c{rd}, c{rs}, {len}"));
                } else if rs != rd {
                    self.line(format!("cmove c{rd}, c{rs}"));
                }
            }
            Op::Load { ty, ptr, .. } => {
                let (base, off) = self.address(*ptr);
                let m = match ty {
                    MemType::Cap => "clc".to_string(),
                    t => format!("l{}", width(*t)),
                };
                self.line(format!("{m} c{rd}, {off}(c{base})"));
            }
            Op::Gep { .. } | Op::Copy(_) => self.address_value(result, rd),
            Op::Pin(x) => {
                let from = self.alloc.loc(*x);
                if from != self.alloc.loc(result) {
                    self.mov(self.alloc.loc(result).expect("located"), self.src(*x), true);
                    return;
                }
                if let (Some(Loc::Slot(s)), Some((g, r))) = (self.alloc.loc(*x), prev_base) {
                    if self.alloc.groups.get(x) == Some(&g) {
                        let off = self.frame.slots[s];
                        self.line(format!("csc c{r}, {off}(c{SP})"));
                    }
                }
                return;
            }
            Op::Bin { op, lhs, rhs } => {
                let a = self.reg(*lhs, S_VAL);
                let b = match rhs {
                    Operand::Imm(i) => i.to_string(),
                    Operand::Value(v) => format!("c{}", self.reg(*v, S_BASE)),
                };
                match op {
                    BinOp::Eq => {
                        self.line(format!("xor c{rd}, c{a}, {b}"));
                        self.line(format!("slt c{S_OFF}, c{rd}, 0"));
                        self.line(format!("slt c{rd}, c0, c{rd}"));
                        self.line(format!("or c{rd}, c{rd}, c{S_OFF}"));
                        self.line(format!("xor c{rd}, c{rd}, 1"));
                    }
                    op => self.line(format!("{} c{rd}, c{a}, {b}", op.name())),
                }
            }
            Op::Call { callee, args } => {
                self.call(callee, args);
                let cap = self.is_cap(result);
                self.mov(
                    self.alloc.loc(result).expect("located"),
                    Src::Loc(Loc::Reg(RESULT)),
                    cap,
                );
                return;
            }
            Op::Store { .. } => unreachable!("stores have no result"),
        }
        self.finish(result, rd);
    }

    fn effect(&mut self, inst: &crate::mir::Inst) {
        match &inst.op {
            Op::Store { ty, value, ptr, .. } => {
                let rv = self.reg(*value, S_VAL);
                let (base, off) = self.address(*ptr);
                let m = match ty {
                    MemType::Cap => "csc".to_string(),
                    t => format!("s{}", width(*t)),
                };
                self.line(format!("{m} c{rv}, {off}(c{base})"));
            }
            Op::Call { callee, args } => self.call(callee, args),
            _ => {}
        }
    }

    fn call(&mut self, callee: &str, args: &[Value]) {
        let moves = args
            .iter()
            .enumerate()
            .map(|(i, a)| (Loc::Reg(RESULT + i as u8), self.src(*a), self.is_cap(*a)))
            .collect();
        self.parallel_move(moves);
        match Builtin::from_name(callee) {
            Some(b) => self.line(format!("ecall {}", b.ecall())),
            None => self.line(format!("call {callee}")),
        }
    }
}

fn width(t: MemType) -> char {
    match t {
        MemType::I8 => 'b',
        MemType::I16 => 'h',
        MemType::I32 => 'w',
        MemType::I64 => 'd',
        MemType::Cap => unreachable!("capabilities use clc and csc"),
    }
}
