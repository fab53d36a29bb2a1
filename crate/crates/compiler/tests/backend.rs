mod common;

use monvm_compiler::backend::{
    linear_scan, lower, prepare, Allocation, Loc, LowerOptions, LoweringError,
};
use monvm_compiler::mir::{parse_mir, Function, Module, Value};
use monvm_core::machine::TrapKind;

/// `%p` plus nine loaded values summed in the given order.
fn nine_live(order: &[usize]) -> Module {
    let mut src = String::from("func @f(%p: cap) -> int {\nentry:\n");
    for i in 0..9 {
        src += &format!(
            "  %a{i} = gep %p, {}\n  %v{i} = load.i64 volatile %a{i}\n",
            i * 8
        );
    }
    src += &format!("  %s0 = copy %v{}\n", order[0]);
    for (n, i) in order[1..].iter().enumerate() {
        src += &format!("  %s{} = add %s{n}, %v{i}\n", n + 1);
    }
    src += "  ret %s8\n}\n";
    parse_mir(&src).unwrap()
}

fn spilled(f: &Function, a: &Allocation) -> Vec<String> {
    let mut out: Vec<String> = a
        .locs
        .iter()
        .filter(|(_, l)| matches!(l, Loc::Slot(_)))
        .map(|(v, _)| f.name_of(*v).to_string())
        .collect();
    out.sort();
    out
}

fn assert_no_shared_registers(f: &Function, a: &Allocation) {
    let groups: Vec<_> = a.intervals.iter().collect();
    for (i, (g1, r1)) in groups.iter().enumerate() {
        for (g2, r2) in &groups[i + 1..] {
            let (Some(Loc::Reg(x)), Some(Loc::Reg(y))) = (a.loc(**g1), a.loc(**g2)) else {
                continue;
            };
            let overlap = r1.start < r2.end && r2.start < r1.end;
            assert!(
                !(overlap && x == y),
                "%{} and %{} share c{x}",
                f.name_of(**g1),
                f.name_of(**g2)
            );
        }
    }
}

#[test]
fn wbr_variable_prologue_sets_bounds_then_zero_frontier() {
    let asm = lower(
        &common::corpus_file("good/init_scalar.mir"),
        &LowerOptions::default(),
    )
    .unwrap();
    let lines: Vec<&str> = asm.lines().map(str::trim).collect();
    let at = lines
        .iter()
        .position(|l| l.starts_with("csetbounds"))
        .unwrap_or_else(|| panic!("{asm}"));
    assert_eq!(lines[at], "csetbounds c4, c4, 8");
    assert_eq!(lines[at + 1], "csetwbrbound c4, c4, c0");
    assert!(lines[at - 1].starts_with("cincoffset c4, c2, "), "{asm}");
}

#[test]
fn without_capabilities_no_bounds_are_emitted() {
    let opts = LowerOptions {
        capabilities: false,
        ..LowerOptions::default()
    };
    let asm = lower(&common::corpus_file("good/partial_init_array.mir"), &opts).unwrap();
    assert!(
        !asm.contains("csetbounds") && !asm.contains("csetwbrbound"),
        "{asm}"
    );
}

#[test]
fn few_values_need_no_spills() {
    let m = common::corpus_file("good/init_scalar.mir");
    for k in 4..=8 {
        assert_eq!(linear_scan(m.function("main").unwrap(), k).spills(), 0);
    }
}

#[test]
fn one_value_too_many_spills_the_furthest_use() {
    // The geps fold into the loads, so %p stays live up to the last load.
    // Nine values are live when %v7 is loaded: %p, then %v0..%v7 with next
    // uses in load order. %v7 is used last and goes to memory; %p dies
    // before %v8 is loaded.
    let forward = nine_live(&[0, 1, 2, 3, 4, 5, 6, 7, 8]);
    let f = forward.function("f").unwrap();
    let a = linear_scan(f, 8);
    assert_eq!(a.spills(), 1);
    assert_eq!(spilled(f, &a), vec!["v7"]);
    assert_no_shared_registers(f, &a);

    let backward = nine_live(&[8, 7, 6, 5, 4, 3, 2, 1, 0]);
    let f = backward.function("f").unwrap();
    let a = linear_scan(f, 8);
    assert_eq!(spilled(f, &a), vec!["v0"]);
}

#[test]
fn eight_registers_hold_eight_values() {
    // Summing as soon as possible keeps at most two loads live.
    let mut src = String::from("func @f(%p: cap) -> int {\nentry:\n  %s = const 0\n");
    for i in 0..12 {
        src += &format!("  %v{i} = load.i64 volatile %p\n  %t{i} = add %s, %v{i}\n");
    }
    src += "  ret %t11\n}\n";
    let m = parse_mir(&src).unwrap();
    assert_eq!(linear_scan(m.function("f").unwrap(), 4).spills(), 0);
}

#[test]
fn twelve_live_values_spill_with_eight_registers() {
    let mut src = String::from("func @f(%p: cap) -> int {\nentry:\n");
    for i in 0..12 {
        src += &format!("  %v{i} = load.i64 volatile %p\n");
    }
    src += "  %s0 = copy %v0\n";
    for i in 1..12 {
        src += &format!("  %s{i} = add %s{}, %v{i}\n", i - 1);
    }
    src += "  ret %s11\n}\n";
    let m = parse_mir(&src).unwrap();
    let f = m.function("f").unwrap();
    for k in 4..=8 {
        let a = linear_scan(f, k);
        assert!(a.spills() >= 12 - k, "k={k}: {}", a.spills());
        assert_no_shared_registers(f, &a);
    }
}

#[test]
fn pin_shares_its_operand_location_across_a_call() {
    let src = "func @main() -> int wbr {
entry:
  %a = alloca 16
  %one = const 1
  store.i64 volatile %one, %a
  call @print(%one)
  %v = load.i64 volatile %a
  ret %v
}
";
    let m = prepare(&parse_mir(src).unwrap(), &LowerOptions::default());
    let f = m.function("main").unwrap();
    let a = linear_scan(f, 8);
    let pins: Vec<(Value, Value)> = f
        .blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter_map(|i| match i.op {
            monvm_compiler::mir::Op::Pin(x) => Some((x, i.result.unwrap())),
            _ => None,
        })
        .collect();
    assert!(!pins.is_empty(), "{m}");
    for (x, p) in pins {
        assert_eq!(a.loc(x), a.loc(p), "{m}");
        assert!(
            matches!(a.loc(p), Some(Loc::Slot(_))),
            "live across the call\n{m}"
        );
    }
    assert_no_shared_registers(f, &a);
}

#[test]
fn lowering_errors() {
    let five = "func @f(%a: int, %b: int, %c: int, %d: int, %e: int) -> int {\nentry:\n  ret %a\n}\n\nfunc @main() -> int {\nentry:\n  %z = const 0\n  %r = call @f(%z, %z, %z, %z, %z)\n  ret %r\n}\n";
    let m = parse_mir(five).unwrap();
    assert!(matches!(
        lower(&m, &LowerOptions::default()),
        Err(LoweringError::Unsupported { .. })
    ));
    let ok = common::corpus_file("good/init_scalar.mir");
    for k in [0, 3, 9, 64] {
        assert_eq!(
            lower(&ok, &common::opts(true, k)),
            Err(LoweringError::Registers(k))
        );
    }
    let no_main = parse_mir("func @f() {\nentry:\n  ret\n}\n").unwrap();
    assert_eq!(
        lower(&no_main, &LowerOptions::default()),
        Err(LoweringError::NoMain)
    );
}

#[test]
fn linearization_is_necessary_for_the_partially_initialized_array() {
    let m = common::corpus_file("good/partial_init_array.mir");
    let without = common::machine(&m, &common::opts(false, 8));
    assert_eq!(
        without.trap,
        Some(TrapKind::OpBoundsViolation),
        "{without:?}"
    );
    let with = common::machine(&m, &common::opts(true, 8));
    assert_eq!(with, common::interp(&m));
    assert_eq!(with.exit, Some(0));
    assert_eq!(with.output, vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
}

#[test]
fn machine_agrees_with_interpreter_on_the_corpus() {
    for (name, m) in common::corpus() {
        let expected = common::interp(&prepare(&m, &LowerOptions::default()));
        for k in 4..=8 {
            let got = common::machine(&m, &common::opts(true, k));
            assert_eq!(got, expected, "{name} with {k} registers");
        }
    }
}
