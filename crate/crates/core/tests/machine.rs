use monvm_core::cap::{check_access, Access, AccessVerdict};
use monvm_core::machine::{
    assemble, reset, run, ConfigError, Machine, Register, Status, TrapKind, DEFAULT_MEMSIZE,
};
use monvm_core::{Capability, CpKind, EnforcementConfig, Mode};
use proptest::prelude::*;

const FUEL: u64 = 100_000;

fn exec(src: &str, cfg: EnforcementConfig) -> Machine {
    let program = assemble(src).unwrap();
    let mut m = Machine::new(program, cfg, DEFAULT_MEMSIZE).unwrap();
    m.run(FUEL);
    m
}

/// `c5` = 64-byte Write-before-Read heap block, `c6` = 7.
const SETUP: &str = "
    li c4, 64
    ecall 1
    mv c5, c4
    li c6, 7
";

#[test]
fn load_after_store_is_allowed() {
    let m = exec(
        &format!("{SETUP} sw c6, 0(c5)\n lw c7, 0(c5)\n halt"),
        EnforcementConfig::wbr(),
    );
    assert_eq!(m.state.status, Status::Halted(0));
    assert_eq!(m.reg(7), Register::Int(7));
}

#[test]
fn load_before_store_traps_with_range() {
    let m = exec(
        &format!("{SETUP} lw c7, 0(c5)\n halt"),
        EnforcementConfig::wbr(),
    );
    let Status::Trapped(trap) = m.state.status else {
        panic!("{:?}", m.state.status)
    };
    assert_eq!(trap.kind, TrapKind::OpBoundsViolation);
    let cap = trap.cap.unwrap();
    assert_eq!(trap.access, Some((cap.base, cap.base + 4)));
    assert_eq!(trap.pc, 4 * 4);
    assert_eq!(m.state.retired, 4, "the faulting load does not retire");
}

#[test]
fn auto_init_reads_zero_and_continues() {
    let cfg = EnforcementConfig {
        auto_init: true,
        ..EnforcementConfig::wbr()
    };
    let m = exec(&format!("{SETUP} li c7, 99\n lw c7, 0(c5)\n halt"), cfg);
    assert_eq!(m.state.status, Status::Halted(0));
    assert_eq!(m.reg(7), Register::Int(0));
    assert_eq!(m.state.zero_fills.len(), 1);
    assert_eq!(m.state.zero_fills[0].pc, 5 * 4);
}

#[test]
fn writeback_shows_advanced_op_top() {
    let m = exec(
        &format!("{SETUP} sd c6, 0(c5)\n cgetoptop c8, c5\n cgetbase c9, c5\n halt"),
        EnforcementConfig::wbr(),
    );
    let base = m.reg(9).as_int();
    assert_eq!(m.reg(8).as_int(), base + 8);
    let Register::Cap(c5) = m.reg(5) else {
        panic!()
    };
    assert_eq!(c5.op_top, base + 8);
}

#[test]
fn copies_do_not_see_the_advance() {
    // The stale copy in c8 still carries the old frontier.
    let src = format!("{SETUP} cmove c8, c5\n sd c6, 0(c5)\n ld c7, 0(c8)\n halt");
    let m = exec(&src, EnforcementConfig::wbr());
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::OpBoundsViolation));
}

#[test]
fn halt_only_and_fuel() {
    let r = run(&assemble("halt").unwrap(), EnforcementConfig::wbr(), 10);
    assert_eq!(r.status, Status::Halted(0));
    assert_eq!(r.retired, 1);

    let r = run(
        &assemble("loop: jal c0, loop").unwrap(),
        EnforcementConfig::wbr(),
        1000,
    );
    assert_eq!(r.trap().unwrap().kind, TrapKind::OutOfFuel);
    assert_eq!(r.retired, 1000);
    assert_eq!(r.counters.total(), 1000);
}

#[test]
fn exit_code_via_ecall() {
    let r = run(
        &assemble("li c4, 42\necall 0").unwrap(),
        EnforcementConfig::wbr(),
        10,
    );
    assert_eq!(r.exit_code(), Some(42));
    let r = run(
        &assemble("li c4, 5\necall 3\nli c4, -1\necall 3\nhalt").unwrap(),
        EnforcementConfig::wbr(),
        10,
    );
    assert_eq!(r.output, vec![5, -1]);
}

#[test]
fn reset_contract() {
    let s = reset(1 << 20).unwrap();
    let Register::Cap(root) = s.regs[3] else {
        panic!()
    };
    assert_eq!((root.base, root.top, root.tag), (0, 1 << 20, true));
    assert_eq!(root.cp, CpKind::Disabled);
    let Register::Cap(sp) = s.regs[2] else {
        panic!()
    };
    assert!(sp.derives_from(&root) && sp.addr == sp.top);
    assert!(s.heap.arena.derives_from(&root));
    assert!(s.heap.arena.top <= sp.base);
    assert_eq!(reset(100), Err(ConfigError::MemorySize(100)));
    assert_eq!(reset(4096 + 8), Err(ConfigError::MemorySize(4104)));
    assert!(reset(4096).is_ok());
}

#[test]
fn tag_hygiene() {
    let src = "
        li c4, 64
        ecall 4
        mv c5, c4
        csetbounds c6, c5, 16
        csc c6, 16(c5)
        clc c7, 16(c5)
        cgetlen c9, c7
        sb c0, 20(c5)
        clc c8, 16(c5)
        lw c10, 0(c8)
        halt";
    let m = exec(src, EnforcementConfig::wbr());
    assert_eq!(m.reg(9).as_int(), 16, "tagged round trip through memory");
    assert!(!m.reg(8).tag());
    let Status::Trapped(t) = m.state.status else {
        panic!()
    };
    assert_eq!(t.kind, TrapKind::TagViolation);
}

#[test]
fn capability_access_faults() {
    let m = exec(
        "li c4, 64\necall 4\nclc c5, 8(c4)\nhalt",
        EnforcementConfig::wbr(),
    );
    assert!(
        matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::MisalignedCapAccess)
    );
    let m = exec(
        "li c4, 64\necall 4\nlw c5, 64(c4)\nhalt",
        EnforcementConfig::wbr(),
    );
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::BoundsViolation));
    let m = exec(
        "li c4, 64\necall 4\ncsetbounds c5, c4, 128\nhalt",
        EnforcementConfig::wbr(),
    );
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::BoundsViolation));
    let m = exec("li c5, 4096\nlw c6, 0(c5)\nhalt", EnforcementConfig::wbr());
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::TagViolation));
    let m = exec(
        "li c4, 64\necall 1\ncsetwbrbound c5, c4, 8\nhalt",
        EnforcementConfig::wbr(),
    );
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::OpBoundsViolation));
    let m = exec(
        "li c4, 64\necall 1\ncsetrtbound c5, c4, 0\nhalt",
        EnforcementConfig::wbr(),
    );
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::OpBoundsViolation));
    let m = exec("ecall 9", EnforcementConfig::wbr());
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::UnknownInstruction));
}

#[test]
fn calls_and_returns() {
    let src = "
        _start:
        li c4, 1
        call double
        call double
        ecall 0
        double:
        add c4, c4, c4
        ret";
    let m = exec(src, EnforcementConfig::wbr());
    assert_eq!(m.state.status, Status::Halted(4));
}

#[test]
fn stack_frame_accesses() {
    let src = "
        cincoffset c2, c2, -32
        li c5, 11
        sd c5, 8(c2)
        ld c6, 8(c2)
        csc c3, 16(c2)
        clc c7, 16(c2)
        cincoffset c2, c2, 32
        sd c5, 0(c2)
        halt";
    let m = exec(src, EnforcementConfig::wbr());
    assert_eq!(m.reg(6), Register::Int(11));
    assert_eq!(m.reg(7), m.reg(3));
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::BoundsViolation));
}

#[test]
fn nocap_passes_through_op_bound_traps() {
    let src =
        format!("{SETUP} lw c7, 4(c5)\n sw c6, 4(c5)\n lw c8, 4(c5)\n add c4, c7, c8\n ecall 0");
    let wbr = exec(&src, EnforcementConfig::wbr());
    assert!(
        matches!(wbr.state.status, Status::Trapped(t) if t.kind == TrapKind::OpBoundsViolation)
    );
    for mode in [Mode::NoCap, Mode::PureCap] {
        let m = exec(&src, EnforcementConfig::new(mode));
        assert_eq!(m.state.status, Status::Halted(7), "{mode}");
    }
}

#[test]
fn runs_are_deterministic() {
    let src = format!(
        "{SETUP} sw c6, 0(c5)\n lw c7, 0(c5)\n li c4, 100\n ecall 1\n ecall 2\n ecall 3\n halt"
    );
    let a = exec(&src, EnforcementConfig::wbr()).result();
    let b = exec(&src, EnforcementConfig::wbr()).result();
    assert_eq!(a, b);
}

#[test]
fn strict_store_does_not_commit() {
    let cfg = EnforcementConfig {
        strict_store: true,
        ..EnforcementConfig::wbr()
    };
    let m = exec(&format!("{SETUP} li c7, 5\n sb c7, 8(c5)\n halt"), cfg);
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::OpBoundsViolation));
    let Register::Cap(c5) = m.reg(5) else {
        panic!()
    };
    assert_eq!(m.state.mem.read(c5.base + 8, 1), 0);
    assert_eq!(c5.op_top, c5.base);
}

#[test]
fn execute_once_pcc_forbids_backward_branches() {
    // Derive an execute-once PCC over the loop and jump into it.
    let src = "
        _start:
        li c5, 20
        csetaddr c6, c3, c5
        csetbounds c6, c6, 16
        csetxtbound c6, c6, 0
        jalr c0, c6, 0
        body:
        li c7, 1
        beq c0, c0, body
        halt";
    let m = exec(src, EnforcementConfig::wbr());
    let Status::Trapped(t) = m.state.status else {
        panic!("{:?}", m.state.status)
    };
    assert_eq!(t.kind, TrapKind::OpBoundsViolation);
    assert_eq!(t.pc, 20);
}

#[derive(Clone, Debug)]
enum CapOp {
    IncOffset(u8, u8, i64),
    SetBounds(u8, u8, u64),
    AndPerm(u8, u8, u16),
    SetAddr(u8, u8, u64),
    OpBounds(u8, u8, CpKind, u64),
    Move(u8, u8),
}

impl CapOp {
    fn text(&self) -> String {
        match self {
            CapOp::IncOffset(d, s, v) => format!("cincoffset c{d}, c{s}, {v}"),
            CapOp::SetBounds(d, s, v) => format!("csetbounds c{d}, c{s}, {v}"),
            CapOp::AndPerm(d, s, v) => format!("candperm c{d}, c{s}, {v}"),
            CapOp::SetAddr(d, s, v) => format!("csetaddr c{d}, c{s}, {v}"),
            CapOp::OpBounds(d, s, k, v) => format!("{} c{d}, c{s}, {v}", k.mnemonic().unwrap()),
            CapOp::Move(d, s) => format!("cmove c{d}, c{s}"),
        }
    }

    fn operands(&self) -> (u8, u8) {
        match *self {
            CapOp::IncOffset(d, s, _)
            | CapOp::SetBounds(d, s, _)
            | CapOp::AndPerm(d, s, _)
            | CapOp::SetAddr(d, s, _)
            | CapOp::OpBounds(d, s, _, _)
            | CapOp::Move(d, s) => (d, s),
        }
    }
}

fn arb_cap_op() -> impl Strategy<Value = CapOp> {
    let r = 3u8..12;
    prop_oneof![
        (r.clone(), r.clone(), -4096i64..4096).prop_map(|(d, s, v)| CapOp::IncOffset(d, s, v)),
        (r.clone(), r.clone(), 0u64..0x20000).prop_map(|(d, s, v)| CapOp::SetBounds(d, s, v)),
        (r.clone(), r.clone(), any::<u16>()).prop_map(|(d, s, v)| CapOp::AndPerm(d, s, v)),
        (r.clone(), r.clone(), 0u64..(1 << 20)).prop_map(|(d, s, v)| CapOp::SetAddr(d, s, v)),
        (r.clone(), r.clone(), 0u8..7, 0u64..0x400).prop_map(|(d, s, k, v)| CapOp::OpBounds(
            d,
            s,
            CpKind::from_bits(k),
            v
        )),
        (r.clone(), r).prop_map(|(d, s)| CapOp::Move(d, s)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivation_is_monotonic(ops in prop::collection::vec(arb_cap_op(), 1..40)) {
        let mut src = String::from("cmove c4, c3\ncmove c5, c3\n");
        for op in &ops {
            src.push_str(&op.text());
            src.push('\n');
        }
        src.push_str("halt\n");
        let program = assemble(&src).unwrap();
        let mut m = Machine::new(program, EnforcementConfig::wbr(), DEFAULT_MEMSIZE).unwrap();
        m.step();
        m.step();
        let Register::Cap(root) = m.reg(3) else { panic!() };
        for op in &ops {
            let (d, s) = op.operands();
            let source = m.reg(s);
            m.step();
            if m.state.status != Status::Running {
                break;
            }
            let out = m.reg(d);
            if let (Register::Cap(out), Register::Cap(src)) = (out, source) {
                if out.tag {
                    prop_assert!(src.tag, "{op:?} tagged a capability from an untagged one");
                    prop_assert!(out.derives_from(&src), "{op:?}: {out} from {src}");
                    prop_assert!(out.derives_from(&root));
                    if src.is_conditional() {
                        prop_assert_eq!(out.cp, src.cp);
                        prop_assert!(out.op_top <= src.op_top.max(out.base));
                    }
                }
            }
        }
    }
}

#[test]
fn fetch_is_checked_against_pcc() {
    let root = Capability::root(1 << 20);
    let no_exec = root.with_perms(!monvm_core::Permissions::EXECUTE);
    assert_eq!(
        check_access(&no_exec, 0, 4, Access::Fetch, &EnforcementConfig::wbr()),
        AccessVerdict::Deny(monvm_core::cap::DenyReason::PermitViolation(Access::Fetch))
    );
    let src = "li c5, -3\ncandperm c6, c3, c5\njalr c0, c6, 12\nhalt";
    let m = exec(src, EnforcementConfig::wbr());
    let Status::Trapped(t) = m.state.status else {
        panic!()
    };
    assert_eq!(t.kind, TrapKind::PermitExecuteViolation);
    assert_eq!(t.pc, 12);
}
