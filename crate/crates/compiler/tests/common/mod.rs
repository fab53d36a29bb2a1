#![allow(dead_code)]

use std::path::PathBuf;

use monvm_compiler::backend::{lower, LowerOptions};
use monvm_compiler::mir::{interpret, parse_mir, InterpOptions, InterpOutcome, Module};
use monvm_core::machine::{assemble, run, Status, TrapKind};
use monvm_core::EnforcementConfig;
use proptest::prelude::*;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Every MIR program of the corpus, by file name.
pub fn corpus() -> Vec<(String, Module)> {
    let mut out = Vec::new();
    for sub in ["bad", "good"] {
        let mut paths: Vec<_> = std::fs::read_dir(corpus_dir().join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "mir"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p).unwrap();
            let m = parse_mir(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                m,
            ));
        }
    }
    out
}

pub fn corpus_file(rel: &str) -> Module {
    parse_mir(&std::fs::read_to_string(corpus_dir().join(rel)).unwrap()).unwrap()
}

/// What a program did: exit code or trap kind, and what it printed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observed {
    pub exit: Option<i64>,
    pub trap: Option<TrapKind>,
    pub output: Vec<i64>,
}

pub fn interp(m: &Module) -> Observed {
    let r = interpret(m, InterpOptions::default());
    let (exit, trap) = match r.outcome {
        InterpOutcome::Exit(c) => (Some(c), None),
        InterpOutcome::Trap(k) => (None, Some(k)),
        InterpOutcome::OutOfFuel => (None, Some(TrapKind::OutOfFuel)),
    };
    Observed {
        exit,
        trap,
        output: r.output,
    }
}

pub fn machine(m: &Module, opts: &LowerOptions) -> Observed {
    let asm = lower(m, opts).unwrap();
    let program = assemble(&asm).unwrap_or_else(|e| panic!("{e}\n{asm}"));
    let r = run(&program, EnforcementConfig::wbr(), 10_000_000);
    let (exit, trap) = match r.status {
        Status::Halted(c) => (Some(c), None),
        Status::Trapped(t) => (None, Some(t.kind)),
        Status::Running => unreachable!(),
    };
    Observed {
        exit,
        trap,
        output: r.output,
    }
}

pub fn opts(linearize: bool, registers: usize) -> LowerOptions {
    LowerOptions {
        apply_store_linearize: linearize,
        registers,
        ..LowerOptions::default()
    }
}

/// One statement of a generated program. Indices count 8-byte elements.
#[derive(Clone, Debug)]
pub enum Stmt {
    /// Stores `a[i] = i + 1` for `i` in `0..n`.
    Fill {
        arr: usize,
        n: usize,
    },
    Store {
        arr: usize,
        idx: usize,
        val: i64,
    },
    Load {
        arr: usize,
        idx: usize,
    },
    /// Reads an element through the array's pointer variable.
    LoadVia {
        arr: usize,
        idx: usize,
    },
    /// Hands the pointer variable to a callee that reads one element.
    Sink {
        arr: usize,
        idx: usize,
    },
    /// Runs `then` only when the previous loaded sum is odd.
    IfOdd(Vec<Stmt>),
    Print(i64),
}

pub const ELEMS: usize = 6;

fn leaf(arrays: usize) -> impl Strategy<Value = Stmt> {
    let arr = 0..arrays;
    prop_oneof![
        (arr.clone(), 1..=ELEMS).prop_map(|(arr, n)| Stmt::Fill { arr, n }),
        (arr.clone(), 0..ELEMS, -50i64..50).prop_map(|(arr, idx, val)| Stmt::Store {
            arr,
            idx,
            val
        }),
        (arr.clone(), 0..ELEMS).prop_map(|(arr, idx)| Stmt::Load { arr, idx }),
        (arr.clone(), 0..ELEMS).prop_map(|(arr, idx)| Stmt::LoadVia { arr, idx }),
        (arr, 0..ELEMS).prop_map(|(arr, idx)| Stmt::Sink { arr, idx }),
        (0i64..100).prop_map(Stmt::Print),
    ]
}

/// Programs over one to three Write-before-Read arrays, each reachable
/// directly and through a pointer variable.
pub fn arb_program() -> impl Strategy<Value = (usize, Vec<Stmt>)> {
    (1usize..=3).prop_flat_map(|arrays| {
        let stmt = leaf(arrays).prop_recursive(2, 12, 4, move |inner| {
            prop::collection::vec(inner, 1..4).prop_map(Stmt::IfOdd)
        });
        (Just(arrays), prop::collection::vec(stmt, 1..12))
    })
}

struct Gen {
    out: String,
    n: usize,
    block: String,
}

impl Gen {
    fn fresh(&mut self, stem: &str) -> String {
        self.n += 1;
        format!("%{stem}{}", self.n)
    }

    fn label(&mut self, stem: &str) -> String {
        self.n += 1;
        format!("{stem}{}", self.n)
    }

    fn line(&mut self, s: &str) {
        self.out.push_str("  ");
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn start(&mut self, label: &str) {
        self.out.push_str(label);
        self.out.push_str(":\n");
        self.block = label.to_string();
    }

    fn elem(&mut self, base: &str, idx: usize) -> String {
        let p = self.fresh("p");
        self.line(&format!("{p} = gep {base}, {}", idx * 8));
        p
    }

    /// Emits `stmts` and returns the running sum value.
    fn stmts(&mut self, stmts: &[Stmt], mut sum: String) -> String {
        for s in stmts {
            match s {
                Stmt::Fill { arr, n } => {
                    let head = self.label("fill");
                    let exit = self.label("filled");
                    let from = self.block.clone();
                    let (i, inext, off, p, v, more) = (
                        self.fresh("i"),
                        self.fresh("inext"),
                        self.fresh("off"),
                        self.fresh("p"),
                        self.fresh("v"),
                        self.fresh("more"),
                    );
                    self.line(&format!("br {head}"));
                    self.start(&head);
                    self.line(&format!("{i} = phi [%zero, {from}], [{inext}, {head}]"));
                    self.line(&format!("{off} = mul {i}, 8"));
                    self.line(&format!("{p} = gep %a{arr}, {off}"));
                    self.line(&format!("{v} = add {i}, 1"));
                    self.line(&format!("store.i64 volatile {v}, {p}"));
                    self.line(&format!("{inext} = add {i}, 1"));
                    self.line(&format!("{more} = slt {inext}, {n}"));
                    self.line(&format!("condbr {more}, {head}, {exit}"));
                    self.start(&exit);
                }
                Stmt::Store { arr, idx, val } => {
                    let p = self.elem(&format!("%a{arr}"), *idx);
                    let c = self.fresh("c");
                    self.line(&format!("{c} = const {val}"));
                    self.line(&format!("store.i64 volatile {c}, {p}"));
                }
                Stmt::Load { arr, idx } => {
                    let p = self.elem(&format!("%a{arr}"), *idx);
                    let (v, s2) = (self.fresh("v"), self.fresh("s"));
                    self.line(&format!("{v} = load.i64 volatile {p}"));
                    self.line(&format!("{s2} = add {sum}, {v}"));
                    sum = s2;
                }
                Stmt::LoadVia { arr, idx } => {
                    let t = self.fresh("t");
                    self.line(&format!("{t} = load.cap volatile %pv{arr}"));
                    let p = self.elem(&t, *idx);
                    let (v, s2) = (self.fresh("v"), self.fresh("s"));
                    self.line(&format!("{v} = load.i64 volatile {p}"));
                    self.line(&format!("{s2} = add {sum}, {v}"));
                    sum = s2;
                }
                Stmt::Sink { arr, idx } => {
                    let i = self.fresh("c");
                    self.line(&format!("{i} = const {idx}"));
                    let (v, s2) = (self.fresh("v"), self.fresh("s"));
                    self.line(&format!("{v} = call @sink(%pv{arr}, {i})"));
                    self.line(&format!("{s2} = add {sum}, {v}"));
                    sum = s2;
                }
                Stmt::IfOdd(body) => {
                    let (bit, then, join) =
                        (self.fresh("bit"), self.label("then"), self.label("join"));
                    self.line(&format!("{bit} = and {sum}, 1"));
                    let from = self.block.clone();
                    self.line(&format!("condbr {bit}, {then}, {join}"));
                    self.start(&then);
                    let inner = self.stmts(body, sum.clone());
                    let end = self.block.clone();
                    self.line(&format!("br {join}"));
                    self.start(&join);
                    let merged = self.fresh("m");
                    self.line(&format!("{merged} = phi [{sum}, {from}], [{inner}, {end}]"));
                    sum = merged;
                }
                Stmt::Print(c) => {
                    let k = self.fresh("c");
                    self.line(&format!("{k} = const {c}"));
                    self.line(&format!("call @print({k})"));
                    self.line(&format!("call @print({sum})"));
                }
            }
        }
        sum
    }
}

/// Renders a generated program as MIR text.
pub fn render(arrays: usize, stmts: &[Stmt]) -> String {
    let mut g = Gen {
        out: String::new(),
        n: 0,
        block: String::new(),
    };
    g.out.push_str(
        "func @sink(%pp: cap, %i: int) -> int {\nentry:\n  %p = load.cap volatile %pp\n  %off = mul %i, 8\n  %q = gep %p, %off\n  %v = load.i64 volatile %q\n  ret %v\n}\n\n",
    );
    g.out.push_str("func @main() -> int wbr {\n");
    g.start("entry");
    g.line("%zero = const 0");
    for a in 0..arrays {
        g.line(&format!("%a{a} = alloca {}", ELEMS * 8));
        g.line(&format!("%pv{a} = alloca 16"));
        g.line(&format!("store.cap %a{a}, %pv{a}"));
    }
    let sum = g.stmts(stmts, "%zero".to_string());
    g.line(&format!("call @print({sum})"));
    g.line("ret %zero");
    g.out.push_str("}\n");
    g.out
}

pub fn arb_module() -> impl Strategy<Value = (String, Module)> {
    arb_program().prop_map(|(arrays, stmts)| {
        let text = render(arrays, &stmts);
        let m = parse_mir(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        (text, m)
    })
}
