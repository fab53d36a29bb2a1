use monvm_core::machine::{
    assemble, Counters, Machine, Register, Status, TrapKind, DEFAULT_MEMSIZE,
};
use monvm_core::{EnforcementConfig, Mode};
use proptest::prelude::*;

fn run(src: &str, cfg: EnforcementConfig) -> Machine {
    let mut m = Machine::new(assemble(src).unwrap(), cfg, DEFAULT_MEMSIZE).unwrap();
    m.run(1_000_000);
    m
}

fn malloc_counters(size: u64, zeroed: bool, mode: Mode) -> Counters {
    let code = if zeroed { 4 } else { 1 };
    let m = run(
        &format!("li c4, {size}\necall {code}\nhalt"),
        EnforcementConfig::new(mode),
    );
    assert_eq!(m.state.status, Status::Halted(0));
    m.state.counters
}

proptest! {
    #[test]
    fn fresh_allocation_is_unreadable(size in 1u64..2048, off_seed in any::<u64>(), w in 0usize..4) {
        let (mnemonic, bytes) = [("lb", 1), ("lh", 2), ("lw", 4), ("ld", 8)][w];
        let class = size.max(16).next_power_of_two();
        prop_assume!(bytes <= size);
        let off = off_seed % (size - bytes + 1);
        let m = run(&format!("li c4, {size}\necall 1\n{mnemonic} c5, {off}(c4)\nhalt"), EnforcementConfig::wbr());
        let Status::Trapped(t) = m.state.status else { panic!("{:?}", m.state.status) };
        prop_assert_eq!(t.kind, TrapKind::OpBoundsViolation);
        prop_assert_eq!(t.cap.unwrap().length(), class);
    }
}

#[test]
fn reused_block_hides_previous_tenant() {
    let src = "
        li c4, 32
        ecall 1
        mv c5, c4
        li c6, 1234
        sd c6, 0(c5)
        ld c7, 0(c5)
        mv c4, c5
        ecall 2
        li c4, 32
        ecall 1
        cgetbase c8, c4
        cgetbase c9, c5
        ld c10, 0(c4)
        halt";
    let m = run(src, EnforcementConfig::wbr());
    assert_eq!(m.reg(7), Register::Int(1234));
    assert_eq!(m.reg(8), m.reg(9), "same block handed out again");
    let Status::Trapped(t) = m.state.status else {
        panic!()
    };
    assert_eq!(t.kind, TrapKind::OpBoundsViolation);

    let pure = run(src, EnforcementConfig::new(Mode::PureCap));
    assert_eq!(
        pure.reg(10),
        Register::Int(1234),
        "without the bound the old data leaks"
    );
}

#[test]
fn invalid_frees_trap() {
    let m = run(
        "li c4, 16\necall 1\nmv c5, c4\necall 2\nmv c4, c5\necall 2\nhalt",
        EnforcementConfig::wbr(),
    );
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::InvalidFree));
    let m = run("cmove c4, c3\necall 2\nhalt", EnforcementConfig::wbr());
    assert!(matches!(m.state.status, Status::Trapped(t) if t.kind == TrapKind::InvalidFree));
    let m = run("li c4, 0\necall 2\nhalt", EnforcementConfig::wbr());
    assert_eq!(m.state.status, Status::Halted(0));
}

#[test]
fn failed_allocations_return_null() {
    let m = run(
        "li c4, 0\necall 1\nmv c5, c4\nli c4, 0x10000000\necall 1\nhalt",
        EnforcementConfig::wbr(),
    );
    assert_eq!(m.reg(5), Register::Int(0));
    assert_eq!(m.reg(4), Register::Int(0));
}

#[test]
fn op_bound_cost_is_constant() {
    let extra: Vec<u64> = [32u64, 64, 256, 1024, 4096]
        .iter()
        .map(|&s| {
            malloc_counters(s, false, Mode::Wbr).total()
                - malloc_counters(s, false, Mode::PureCap).total()
        })
        .collect();
    assert!(extra.iter().all(|&e| e == extra[0] && e > 0), "{extra:?}");
}

#[test]
fn zeroing_cost_is_linear() {
    let base = |s| malloc_counters(s, false, Mode::PureCap).total();
    let extra = |s| malloc_counters(s, true, Mode::PureCap).total() - base(s);
    let (e32, e4096) = (extra(32), extra(4096));
    assert_eq!(e4096 * 32, e32 * 4096);
    let zeroed = malloc_counters(32, true, Mode::PureCap);
    assert!(zeroed.store - malloc_counters(32, false, Mode::PureCap).store >= 4);
}
