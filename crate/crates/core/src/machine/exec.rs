use super::isa::{CapField, Instr, Operand, Reg, Width, A0, INSTR_BYTES};
use super::memory::GRANULE;
use super::{ecall, MachineState, Program, Register, Status, TrapKind, TrapReport, ZeroFill};
use crate::cap::{
    advance_op_top, check_access, decode, set_bounds, set_op_bounds, Access, AccessVerdict,
    CapError, Capability, DenyReason, EncodedCapability, Permissions,
};
use crate::config::EnforcementConfig;
use crate::runtime::HeapError;

enum Flow {
    Next,
    Jump(Capability),
    Halt(i64),
}

/// Outcome of the check stage of a memory access.
enum Checked {
    Go { addr: u64, cap: Option<Capability> },
    ZeroFill { addr: u64 },
}

struct Ctx<'a> {
    s: &'a mut MachineState,
    cfg: &'a EnforcementConfig,
    pc: u64,
}

pub(super) fn step(
    s: &mut MachineState,
    program: &Program,
    cfg: &EnforcementConfig,
) -> Result<(), TrapReport> {
    let pc = s.pcc.addr;
    let fetch = check_access(&s.pcc, pc, INSTR_BYTES, Access::Fetch, cfg);
    if let AccessVerdict::Deny(reason) = fetch {
        return Err(TrapReport {
            kind: deny_kind(reason),
            pc,
            cap: Some(s.pcc),
            access: Some((pc, pc.wrapping_add(INSTR_BYTES))),
        });
    }
    let instr = match (
        pc % INSTR_BYTES,
        program.instructions.get((pc / INSTR_BYTES) as usize),
    ) {
        (0, Some(i)) => *i,
        _ => {
            return Err(TrapReport {
                kind: TrapKind::UnknownInstruction,
                pc,
                cap: None,
                access: None,
            })
        }
    };
    if s.pcc.cp.tracked() == Some(Access::Fetch) {
        s.pcc = advance_op_top(&s.pcc, pc, INSTR_BYTES);
    }

    let mut ctx = Ctx { s, cfg, pc };
    let flow = ctx.exec(instr)?;
    let s = ctx.s;
    s.counters.bump(instr.category());
    s.retired += 1;
    match flow {
        Flow::Next => s.pcc = s.pcc.with_address(pc.wrapping_add(INSTR_BYTES)),
        Flow::Jump(target) => s.pcc = target,
        Flow::Halt(code) => s.status = Status::Halted(code),
    }
    Ok(())
}

fn deny_kind(reason: DenyReason) -> TrapKind {
    match reason {
        DenyReason::TagViolation => TrapKind::TagViolation,
        DenyReason::PermitViolation(Access::Load) => TrapKind::PermitLoadViolation,
        DenyReason::PermitViolation(Access::Store) => TrapKind::PermitStoreViolation,
        DenyReason::PermitViolation(Access::Fetch) => TrapKind::PermitExecuteViolation,
        DenyReason::BoundsViolation => TrapKind::BoundsViolation,
        DenyReason::OpBoundsViolation => TrapKind::OpBoundsViolation,
    }
}

fn cap_error_kind(e: CapError) -> TrapKind {
    match e {
        CapError::TagViolation => TrapKind::TagViolation,
        CapError::MonotonicityViolation | CapError::OutOfBounds => TrapKind::BoundsViolation,
        CapError::OpBoundsIncrease | CapError::KindMismatch { .. } => TrapKind::OpBoundsViolation,
        CapError::NotRepresentable | CapError::RepresentabilityViolation(_) => {
            TrapKind::RepresentabilityViolation
        }
        CapError::AddressMaskViolation => TrapKind::AddressMaskViolation,
        CapError::InvalidKind => TrapKind::UnknownInstruction,
    }
}

fn sign_extend(v: u64, width: Width) -> u64 {
    let shift = 64 - 8 * width.bytes() as u32;
    (((v << shift) as i64) >> shift) as u64
}

impl Ctx<'_> {
    fn get(&self, r: Reg) -> Register {
        self.s.regs[r as usize]
    }

    fn set(&mut self, r: Reg, v: Register) {
        if r != 0 {
            self.s.regs[r as usize] = v;
        }
    }

    fn int(&self, op: Operand) -> u64 {
        match op {
            Operand::Reg(r) => self.get(r).as_int(),
            Operand::Imm(i) => i as u64,
        }
    }

    fn trap(
        &self,
        kind: TrapKind,
        cap: Option<Capability>,
        access: Option<(u64, u64)>,
    ) -> TrapReport {
        TrapReport {
            kind,
            pc: self.pc,
            cap,
            access,
        }
    }

    /// Capability operand of a capability-manipulation instruction.
    fn source_cap(&self, r: Reg) -> Result<Capability, TrapReport> {
        match self.get(r) {
            Register::Cap(c) => Ok(c),
            Register::Int(_) => Err(self.trap(TrapKind::TagViolation, None, None)),
        }
    }

    fn cap_result(
        &self,
        src: &Capability,
        r: Result<Capability, CapError>,
    ) -> Result<Register, TrapReport> {
        r.map(Register::Cap)
            .map_err(|e| self.trap(cap_error_kind(e), Some(*src), None))
    }

    /// Stage one of a memory access: permission, bounds and operation-bound
    /// checks against the base register.
    fn check(
        &mut self,
        base: Reg,
        offset: Operand,
        size: u64,
        access: Access,
    ) -> Result<Checked, TrapReport> {
        let off = self.int(offset);
        let (addr, cap, verdict) = match self.get(base) {
            Register::Cap(c) => {
                let addr = c.addr.wrapping_add(off);
                (
                    addr,
                    Some(c),
                    check_access(&c, addr, size, access, self.cfg),
                )
            }
            Register::Int(v) => {
                let addr = v.wrapping_add(off);
                let verdict = if self.cfg.mode.checks_capabilities() {
                    AccessVerdict::Deny(DenyReason::TagViolation)
                } else {
                    AccessVerdict::Allow
                };
                (addr, None, verdict)
            }
        };
        let range = Some((addr, addr.wrapping_add(size)));
        match verdict {
            AccessVerdict::Allow => {}
            AccessVerdict::Deny(DenyReason::OpBoundsViolation)
                if access == Access::Load && self.cfg.auto_init =>
            {
                return Ok(Checked::ZeroFill { addr });
            }
            AccessVerdict::Deny(reason) => return Err(self.trap(deny_kind(reason), cap, range)),
        }
        if !self.s.mem.contains(addr, size) {
            return Err(self.trap(TrapKind::BoundsViolation, cap, range));
        }
        Ok(Checked::Go { addr, cap })
    }

    /// Writeback stage: a capability whose tracked operation just happened
    /// gets its advanced operation top written back to the base register.
    fn writeback(
        &mut self,
        base: Reg,
        cap: Option<Capability>,
        addr: u64,
        size: u64,
        access: Access,
    ) {
        if let Some(c) = cap {
            if c.cp.tracked() == Some(access) {
                self.set(base, Register::Cap(advance_op_top(&c, addr, size)));
            }
        }
    }

    fn zero_fill(&mut self, rd: Reg, addr: u64, size: u64) {
        self.s.zero_fills.push(ZeroFill {
            pc: self.pc,
            addr,
            size,
        });
        self.set(rd, Register::Int(0));
    }

    fn exec(&mut self, instr: Instr) -> Result<Flow, TrapReport> {
        match instr {
            Instr::Li { rd, imm } => self.set(rd, Register::Int(imm as u64)),
            Instr::Mv { rd, rs } | Instr::CMove { rd, rs } => self.set(rd, self.get(rs)),
            Instr::Alu { op, rd, rs1, rs2 } => {
                let v = op.apply(self.get(rs1).as_int(), self.int(rs2));
                self.set(rd, Register::Int(v));
            }
            Instr::Branch {
                op,
                rs1,
                rs2,
                target,
            } => {
                if op.taken(self.get(rs1).as_int(), self.get(rs2).as_int()) {
                    return Ok(Flow::Jump(
                        self.s.pcc.with_address(target as u64 * INSTR_BYTES),
                    ));
                }
            }
            Instr::Jal { rd, target } => {
                let link = self.s.pcc.with_address(self.pc.wrapping_add(INSTR_BYTES));
                self.set(rd, Register::Cap(link));
                return Ok(Flow::Jump(
                    self.s.pcc.with_address(target as u64 * INSTR_BYTES),
                ));
            }
            Instr::Jalr { rd, rs, imm } => {
                let target = match self.get(rs) {
                    Register::Cap(c) => c.with_address(c.addr.wrapping_add(imm as u64)),
                    Register::Int(v) => self.s.pcc.with_address(v.wrapping_add(imm as u64)),
                };
                let link = self.s.pcc.with_address(self.pc.wrapping_add(INSTR_BYTES));
                self.set(rd, Register::Cap(link));
                return Ok(Flow::Jump(target));
            }
            Instr::Halt => return Ok(Flow::Halt(0)),
            Instr::Ecall { code } => return self.ecall(code),
            Instr::CIncOffset { rd, rs, by } => {
                let v = match self.get(rs) {
                    Register::Cap(c) => {
                        Register::Cap(c.with_address(c.addr.wrapping_add(self.int(by))))
                    }
                    Register::Int(x) => Register::Int(x.wrapping_add(self.int(by))),
                };
                self.set(rd, v);
            }
            Instr::CSetAddr { rd, rs, addr } => {
                let v = match self.get(rs) {
                    Register::Cap(c) => Register::Cap(c.with_address(self.int(addr))),
                    Register::Int(_) => Register::Int(self.int(addr)),
                };
                self.set(rd, v);
            }
            Instr::CSetBounds { rd, rs, len } => {
                let c = self.source_cap(rs)?;
                let v = self.cap_result(&c, set_bounds(&c, self.int(len)))?;
                self.set(rd, v);
            }
            Instr::CAndPerm { rd, rs, mask } => {
                let c = self.source_cap(rs)?;
                let mask = Permissions::from_bits_truncate(self.int(mask) as u16);
                self.set(rd, Register::Cap(c.with_perms(mask)));
            }
            Instr::CGet { field, rd, rs } => {
                let v = match (self.get(rs), field) {
                    (r, CapField::Addr) => r.as_int(),
                    (Register::Cap(c), CapField::Base) => c.base,
                    (Register::Cap(c), CapField::Len) => c.length(),
                    (Register::Cap(c), CapField::OpTop) => c.op_top,
                    (Register::Int(_), _) => 0,
                };
                self.set(rd, Register::Int(v));
            }
            Instr::CSetOpBounds { kind, rd, rs, len } => {
                let c = self.source_cap(rs)?;
                let v = self.cap_result(&c, set_op_bounds(&c, kind, self.int(len)))?;
                self.set(rd, v);
            }
            Instr::Load {
                width,
                rd,
                base,
                offset,
            } => {
                let size = width.bytes();
                match self.check(base, offset, size, Access::Load)? {
                    Checked::ZeroFill { addr } => self.zero_fill(rd, addr, size),
                    Checked::Go { addr, cap } => {
                        let raw = self.s.mem.read(addr, size);
                        self.writeback(base, cap, addr, size, Access::Load);
                        self.set(rd, Register::Int(sign_extend(raw, width)));
                    }
                }
            }
            Instr::Store {
                width,
                rs,
                base,
                offset,
            } => {
                let size = width.bytes();
                let value = self.get(rs).as_int();
                if let Checked::Go { addr, cap } = self.check(base, offset, size, Access::Store)? {
                    self.s.mem.write(addr, size, value);
                    self.writeback(base, cap, addr, size, Access::Store);
                }
            }
            Instr::Clc { rd, base, offset } => {
                match self.check(base, offset, GRANULE, Access::Load)? {
                    Checked::ZeroFill { addr } => self.zero_fill(rd, addr, GRANULE),
                    Checked::Go { addr, cap } => {
                        if addr % GRANULE != 0 {
                            return Err(self.trap(
                                TrapKind::MisalignedCapAccess,
                                cap,
                                Some((addr, addr + GRANULE)),
                            ));
                        }
                        let enc = self.s.mem.read_cap(addr);
                        let may_load_cap = cap.is_none_or(|c| c.perms.load_cap());
                        let v = if enc.tag && may_load_cap {
                            Register::Cap(decode(enc))
                        } else {
                            Register::Int(enc.cursor)
                        };
                        self.writeback(base, cap, addr, GRANULE, Access::Load);
                        self.set(rd, v);
                    }
                }
            }
            Instr::Csc { rs, base, offset } => {
                let value = self.get(rs);
                if let Checked::Go { addr, cap } =
                    self.check(base, offset, GRANULE, Access::Store)?
                {
                    let range = Some((addr, addr + GRANULE));
                    if addr % GRANULE != 0 {
                        return Err(self.trap(TrapKind::MisalignedCapAccess, cap, range));
                    }
                    let checks = self.cfg.mode.checks_capabilities();
                    if value.tag() && checks && cap.is_some_and(|c| !c.perms.store_cap()) {
                        return Err(self.trap(TrapKind::PermitStoreViolation, cap, range));
                    }
                    let enc = match value {
                        Register::Cap(c) => c.encode().unwrap_or(EncodedCapability {
                            meta: 0,
                            cursor: c.addr,
                            tag: false,
                        }),
                        Register::Int(v) => EncodedCapability {
                            meta: 0,
                            cursor: v,
                            tag: false,
                        },
                    };
                    self.s.mem.write_cap(addr, enc);
                    self.writeback(base, cap, addr, GRANULE, Access::Store);
                }
            }
        }
        Ok(Flow::Next)
    }

    fn ecall(&mut self, code: u32) -> Result<Flow, TrapReport> {
        let arg = self.get(A0);
        match code {
            ecall::EXIT => return Ok(Flow::Halt(arg.as_int() as i64)),
            ecall::MALLOC | ecall::MALLOC_ZEROED => {
                let zeroed = code == ecall::MALLOC_ZEROED;
                let wbr = self.cfg.mode.enforces_conditional();
                let s = &mut *self.s;
                match s.heap.rt_malloc(&mut s.mem, arg.as_int(), zeroed, wbr) {
                    Ok((cap, cost)) => {
                        s.counters += cost;
                        self.set(A0, Register::Cap(cap));
                    }
                    Err(HeapError::OutOfMemory | HeapError::ZeroSize) => {
                        self.set(A0, Register::Int(0))
                    }
                    Err(HeapError::Capability(e)) => {
                        return Err(self.trap(cap_error_kind(e), None, None))
                    }
                    Err(HeapError::InvalidFree) => unreachable!("malloc never reports InvalidFree"),
                }
            }
            ecall::FREE => match arg {
                Register::Int(0) => {}
                Register::Cap(c) => match self.s.heap.rt_free(&c) {
                    Ok(cost) => self.s.counters += cost,
                    Err(_) => return Err(self.trap(TrapKind::InvalidFree, Some(c), None)),
                },
                Register::Int(_) => return Err(self.trap(TrapKind::InvalidFree, None, None)),
            },
            ecall::PRINT_INT => self.s.output.push(arg.as_int() as i64),
            _ => return Err(self.trap(TrapKind::UnknownInstruction, None, None)),
        }
        Ok(Flow::Next)
    }
}
