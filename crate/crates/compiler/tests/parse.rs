mod common;

use monvm_compiler::mir::{parse_mir, MirError, Op};

#[test]
fn single_alloca_and_ret_is_valid() {
    let m = parse_mir("func @main() {\nentry:\n  %x = alloca 8\n  ret\n}\n").unwrap();
    assert_eq!(m.functions.len(), 1);
    let f = &m.functions[0];
    assert_eq!(f.blocks.len(), 1);
    assert!(matches!(
        f.blocks[0].insts[0].op,
        Op::Alloca {
            size: 8,
            wbr: false,
            escape: false
        }
    ));
}

#[test]
fn use_before_def_is_a_verify_error() {
    let src = "func @main() -> int {\nentry:\n  %y = add %x, 1\n  %x = const 2\n  ret %y\n}\n";
    match parse_mir(src) {
        Err(MirError::Verify { function, line, .. }) => {
            assert_eq!(function, "main");
            assert_eq!(line, 3);
        }
        other => panic!("expected a verify error, got {other:?}"),
    }
}

#[test]
fn use_not_dominated_is_a_verify_error() {
    let src = "func @main(%c: int) -> int {
entry:
  condbr %c, a, b
a:
  %x = const 1
  br b
b:
  ret %x
}
";
    assert!(matches!(
        parse_mir(src),
        Err(MirError::Verify { line: 8, .. })
    ));
}

#[test]
fn partial_init_array_parses_and_verifies() {
    let m = common::corpus_file("bad/partial_init_array.mir");
    let main = m.function("main").unwrap();
    assert!(main.wbr);
    let allocas: Vec<u64> = main
        .blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter_map(|i| match i.op {
            Op::Alloca { size, .. } => Some(size),
            _ => None,
        })
        .collect();
    assert_eq!(allocas, vec![16, 40]);
    assert!(m.function("sink").is_some());
}

#[test]
fn parse_errors_carry_lines() {
    let cases = [
        ("func @main() {\nentry:\n  %x = frob 1\n  ret\n}\n", 3),
        ("func @main() {\nentry:\n  ret\n", 1),
        (
            "func @main() {\nentry:\n  %x = alloca 8\n  %x = alloca 8\n  ret\n}\n",
            4,
        ),
        ("func @main() {\nentry:\n  br nowhere\n}\n", 3),
        ("func @main() {\nentry:\n  %v = load.i64 %x\n  ret\n}\n", 3),
    ];
    for (src, line) in cases {
        let e = parse_mir(src).unwrap_err();
        let got = match &e {
            MirError::Parse { line, .. } | MirError::Verify { line, .. } => *line,
        };
        assert_eq!(got, line, "{src}: {e}");
    }
}

#[test]
fn type_errors_are_rejected() {
    let bad = [
        // integer used as an address
        "func @main() {\nentry:\n  %x = const 1\n  %v = load.i64 %x\n  ret\n}\n",
        // capability stored with an integer width
        "func @f(%p: cap) {\nentry:\n  store.i64 %p, %p\n  ret\n}\n",
        // wrong arity
        "func @f(%a: int) {\nentry:\n  ret\n}\n\nfunc @main() {\nentry:\n  call @f()\n  ret\n}\n",
        // missing return value
        "func @main() -> int {\nentry:\n  ret\n}\n",
        // phi arms must match predecessors
        "func @main() -> int {\nentry:\n  %z = const 0\n  br b\nb:\n  %x = phi [%z, entry], [%z, b]\n  ret %x\n}\n",
    ];
    for src in bad {
        assert!(parse_mir(src).is_err(), "{src}");
    }
}

#[test]
fn printing_round_trips_the_corpus() {
    for (name, m) in common::corpus() {
        let text = m.to_string();
        let again = parse_mir(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
        assert_eq!(again.to_string(), text, "{name}");
    }
}

#[test]
fn untyped_memory_ops_take_their_width_from_the_value() {
    let src = "func @main() -> int {
entry:
  %a = alloca 32
  %b = alloca 16
  %one = const 1
  store %one, %a
  store %a, %b
  %v = load %a
  ret %v
}
";
    let text = parse_mir(src).unwrap().to_string();
    assert!(text.contains("store.i64 %one, %a"), "{text}");
    assert!(text.contains("store.cap %a, %b"), "{text}");
    assert!(text.contains("load.i64 %a"), "{text}");
}
