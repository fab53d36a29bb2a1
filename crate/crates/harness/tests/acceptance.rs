//! End-to-end acceptance criteria. Prints one PASS or FAIL line per
//! criterion and exits non-zero if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use monvm_compiler::mir::{interpret, InterpOptions, InterpOutcome};
use monvm_core::machine::{run, Status, TrapKind};
use monvm_core::EnforcementConfig;
use monvm_harness::bench::{allocator_scaling, program_overhead, BenchMode};
use monvm_harness::checks::{codec_fuzz, derivation_sequences, frontier_sequences};
use monvm_harness::compile::{build_file, read_mir, BuildOptions};
use monvm_harness::corpus::{auto_init_parity, run_corpus, CorpusConfig};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus() -> PathBuf {
    root().join("corpus")
}

fn detection() -> Result<String> {
    let t = Instant::now();
    let r = run_corpus(&corpus(), &CorpusConfig::default())?;
    let elapsed = t.elapsed();
    let m = &r.matrix;
    ensure!(
        m.bad_detected >= 20 && m.good_passed + m.good_flagged >= 20,
        "corpus too small: {m:?}"
    );
    ensure!(m.bad_missed == 0, "missed: {:?}", r.deviations);
    ensure!(
        !r.expected_false_positives.is_empty(),
        "no expected false positive in the corpus"
    );
    ensure!(
        r.flagged_good == r.expected_false_positives,
        "flagged {:?}, expected {:?}",
        r.flagged_good,
        r.expected_false_positives
    );
    ensure!(r.deviations.is_empty(), "deviations: {:?}", r.deviations);
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "bad {}/{} detected, good flagged {:?}, {elapsed:.2?}",
        m.bad_detected,
        m.bad_detected + m.bad_missed,
        r.flagged_good
    ))
}

fn codec() -> Result<String> {
    let t = Instant::now();
    let r = codec_fuzz(100_000, 1);
    let elapsed = t.elapsed();
    ensure!(r.passed(), "{r:?}");
    ensure!(
        r.correction_entries == 512 && r.correction_mismatches == 0,
        "{r:?}"
    );
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "{} capabilities, {} correction entries, {elapsed:.2?}",
        r.n, r.correction_entries
    ))
}

fn frontier() -> Result<String> {
    let r = frontier_sequences(10_000, 7);
    ensure!(r.sequences >= 10_000);
    ensure!(r.mismatches == 0, "{:?}", r.failures);
    ensure!(
        r.gap_stores > 0 && r.straddles > 0,
        "gap stores {} straddles {}",
        r.gap_stores,
        r.straddles
    );
    Ok(format!(
        "{} sequences, {} decisions, {} gap stores, {} straddles",
        r.sequences, r.decisions, r.gap_stores, r.straddles
    ))
}

fn necessity() -> Result<String> {
    let path = corpus().join("good/partial_init_array.mir");
    let machine = |linearize: bool| -> Result<_> {
        let opts = BuildOptions {
            linearize,
            registers: 8,
            ..BuildOptions::default()
        };
        Ok(run(
            &build_file(&path, &opts)?,
            EnforcementConfig::wbr(),
            1_000_000,
        ))
    };
    let without = machine(false)?;
    let Status::Trapped(t) = &without.status else {
        anyhow::bail!("no trap without linearization: {:?}", without.status)
    };
    ensure!(
        t.kind == TrapKind::OpBoundsViolation,
        "trapped with {:?}",
        t.kind
    );
    let with = machine(true)?;
    ensure!(
        with.status == Status::Halted(0),
        "with linearization: {:?}",
        with.status
    );
    let reference = interpret(&read_mir(&path)?, InterpOptions::default());
    ensure!(
        reference.outcome == InterpOutcome::Exit(0),
        "interpreter: {:?}",
        reference.outcome
    );
    ensure!(
        with.output == reference.output,
        "output {:?}, interpreter {:?}",
        with.output,
        reference.output
    );
    Ok(format!(
        "no-linearize traps at pc {:#x}, linearized output matches",
        t.pc
    ))
}

fn allocator() -> Result<String> {
    let s = allocator_scaling()?;
    ensure!(
        s.wbr_spread == 0.0,
        "wbr extra per malloc varies by {}",
        s.wbr_spread
    );
    for (a, b, ratio) in &s.zeroed_ratio_to_size_ratio {
        ensure!(
            (ratio - 1.0).abs() <= 0.05,
            "zeroed {a} B to {b} B off by {ratio}"
        );
    }
    let wbr = s.points[0].extra_per_malloc[&BenchMode::Wbr];
    let worst = s
        .zeroed_ratio_to_size_ratio
        .iter()
        .map(|(_, _, r)| (r - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(format!(
        "wbr +{wbr} per malloc at every size, zeroed linear within {:.2}%",
        worst * 100.0
    ))
}

fn overhead() -> Result<String> {
    let o = program_overhead("loop", &read_mir(&root().join("bench/loop.mir"))?)?;
    let c = |m: BenchMode| o.counts[&m];
    ensure!(o.ordered, "counts {:?}", o.counts);
    ensure!(
        c(BenchMode::Nocap) <= c(BenchMode::Purecap)
            && c(BenchMode::Purecap) <= c(BenchMode::WbrNoLinearize)
            && c(BenchMode::WbrNoLinearize) <= c(BenchMode::Wbr),
        "counts {:?}",
        o.counts
    );
    ensure!(
        o.linearization_share > 0.5,
        "linearization share {}",
        o.linearization_share
    );
    Ok(format!(
        "nocap {} <= purecap {} <= wbr-no-linearize {} <= wbr {}, linearization {:.0}% of the wbr delta",
        c(BenchMode::Nocap),
        c(BenchMode::Purecap),
        c(BenchMode::WbrNoLinearize),
        c(BenchMode::Wbr),
        o.linearization_share * 100.0
    ))
}

fn auto_init() -> Result<String> {
    let r = auto_init_parity(&corpus(), &CorpusConfig::default())?;
    ensure!(!r.cases.is_empty());
    for c in &r.cases {
        ensure!(c.completed, "{} did not complete", c.id);
        ensure!(c.zero_fills > 0, "{} read no zero-filled bytes", c.id);
    }
    let off: Vec<&str> = r
        .cases
        .iter()
        .filter(|c| !c.parity)
        .map(|c| c.id.as_str())
        .collect();
    ensure!(r.all_parity, "parity differs for {off:?}");
    Ok(format!(
        "{} bad cases completed, first zero fill = trapping load in all",
        r.cases.len()
    ))
}

fn monotonicity() -> Result<String> {
    let r = derivation_sequences(10_000, 11);
    ensure!(r.violations == 0, "{:?}", r.failures);
    Ok(format!(
        "{} sequences, {} derivations",
        r.sequences, r.derivations
    ))
}

type Criterion = fn() -> Result<String>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("detection fidelity", detection),
        ("codec soundness", codec),
        ("frontier semantics", frontier),
        ("store-linearization necessity", necessity),
        ("allocator scaling", allocator),
        ("overhead structure", overhead),
        ("auto-init emulation", auto_init),
        ("monotonicity", monotonicity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check().with_context(|| name.to_string()) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
