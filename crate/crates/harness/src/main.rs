use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use monvm_core::cap::{decode_full, parse_vector};
use monvm_core::machine::{run_with_memory, DEFAULT_MEMSIZE};
use monvm_core::{EnforcementConfig, Mode};
use serde::Serialize;

use monvm_harness::bench::run_bench;
use monvm_harness::checks::codec_fuzz;
use monvm_harness::compile::{build_file, parse_instrument, read_mir, BuildOptions};
use monvm_harness::corpus::{run_corpus, CorpusConfig};
use monvm_harness::outcome::Outcome;
use monvm_harness::report::write_json;

#[derive(Parser)]
#[command(
    name = "monvm",
    version,
    about = "Write-before-Read capability machine toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build if needed and run one program.
    Run {
        file: PathBuf,
        #[command(flatten)]
        machine: MachineArgs,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compile a MIR file to assembly.
    Build {
        file: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
        /// Annotate the assembly with the MIR it came from.
        #[arg(long)]
        comments: bool,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Run every case of a corpus manifest and report the confusion matrix.
    TestCorpus {
        dir: PathBuf,
        #[command(flatten)]
        machine: MachineArgs,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long, default_value = "monvm-reports/test-corpus.json")]
        json: PathBuf,
    },
    /// Instruction-count overhead of each mode plus the allocator series.
    Bench {
        dir: PathBuf,
        #[arg(long, default_value = "monvm-reports/bench.json")]
        json: PathBuf,
    },
    /// Capability codec tools.
    Codec {
        #[command(subcommand)]
        command: CodecCommand,
    },
}

#[derive(Subcommand)]
enum CodecCommand {
    /// Randomized round-trip and containment checks plus the correction sweep.
    Fuzz {
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "monvm-reports/codec-fuzz.json")]
        json: PathBuf,
    },
    /// Decode one `tag:meta:cursor` vector.
    Decode { vector: String },
}

#[derive(Args)]
struct MachineArgs {
    #[arg(long, default_value = "wbr")]
    mode: Mode,
    /// Trap on stores that leave a gap above the operation bound.
    #[arg(long)]
    strict_store: bool,
    /// Read zero instead of trapping on loads above the operation bound.
    #[arg(long)]
    auto_init: bool,
    #[arg(long, default_value_t = 10_000_000)]
    fuel: u64,
    #[arg(long = "mem", default_value_t = DEFAULT_MEMSIZE)]
    mem: u64,
}

impl MachineArgs {
    fn config(&self) -> EnforcementConfig {
        EnforcementConfig {
            mode: self.mode,
            strict_store: self.strict_store,
            auto_init: self.auto_init,
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    /// Which stack variables get a Write-before-Read bound: all, fn, var or none.
    #[arg(long, default_value = "fn", value_parser = ["all", "fn", "var", "none"])]
    instrument: String,
    #[arg(long, overrides_with = "no_linearize")]
    linearize: bool,
    #[arg(long)]
    no_linearize: bool,
    #[arg(long, default_value_t = 8)]
    registers: usize,
}

impl BuildArgs {
    fn options(&self) -> BuildOptions {
        BuildOptions {
            instrument: parse_instrument(&self.instrument).expect("clap checked the value"),
            linearize: !self.no_linearize,
            registers: self.registers,
            capabilities: true,
        }
    }
}

#[derive(Serialize)]
struct RunReport {
    file: PathBuf,
    mode: Mode,
    outcome: Outcome,
    counters: monvm_core::machine::Counters,
    instructions: u64,
    output: Vec<i64>,
    zero_fills: usize,
}

fn cmd_run(
    file: &Path,
    machine: &MachineArgs,
    build: &BuildArgs,
    json: Option<&Path>,
) -> Result<bool> {
    let program = build_file(file, &build.options())?;
    let r = run_with_memory(&program, machine.config(), machine.fuel, machine.mem)?;
    let outcome = Outcome::of(&r);
    for v in &r.output {
        println!("{v}");
    }
    println!("{outcome}");
    if let Some(t) = r.trap() {
        if let Some(cap) = &t.cap {
            println!("  cap {cap}");
        }
    }
    let c = &r.counters;
    println!(
        "  instructions {} (integer {}, branch {}, load {}, store {}, cap {}, runtime {})",
        c.total(),
        c.integer,
        c.branch,
        c.load,
        c.store,
        c.cap,
        c.runtime_call
    );
    if machine.auto_init {
        println!("  {} loads were zero-filled", r.zero_fills.len());
    }
    let ok = matches!(outcome, Outcome::Exit { code: 0 });
    if let Some(path) = json {
        let report = RunReport {
            file: file.to_path_buf(),
            mode: machine.mode,
            outcome,
            counters: r.counters,
            instructions: r.counters.total(),
            output: r.output.clone(),
            zero_fills: r.zero_fills.len(),
        };
        write_json(path, "run", ok, &report)?;
    }
    Ok(ok)
}

fn cmd_build(file: &Path, build: &BuildArgs, comments: bool, output: &Path) -> Result<bool> {
    let module = read_mir(file)?;
    let mut opts = build.options().lower_options();
    opts.emit_comments = comments;
    let asm = monvm_compiler::backend::lower(&module, &opts)?;
    std::fs::write(output, asm).with_context(|| format!("writing {}", output.display()))?;
    Ok(true)
}

fn cmd_test_corpus(
    dir: &Path,
    machine: &MachineArgs,
    build: &BuildArgs,
    json: &Path,
) -> Result<bool> {
    let cfg = CorpusConfig {
        machine: machine.config(),
        build: build.options(),
        fuel: machine.fuel,
        memsize: machine.mem,
    };
    let report = run_corpus(dir, &cfg)?;
    for v in &report.cases {
        let mark = if v.deviation { "DEVIATION" } else { "ok" };
        let class = if v.bad { "bad " } else { "good" };
        println!(
            "{mark:9} {class} {:32} expected {:40} got {}",
            v.id, v.expected, v.outcome
        );
    }
    let m = &report.matrix;
    println!(
        "mode {}{}: bad detected {} missed {} | good passed {} flagged {} | {} deviations | {} ms",
        report.mode,
        if report.auto_init { " auto-init" } else { "" },
        m.bad_detected,
        m.bad_missed,
        m.good_passed,
        m.good_flagged,
        report.deviations.len(),
        report.elapsed_ms
    );
    let ok = report.deviations.is_empty();
    write_json(json, "test-corpus", ok, &report)?;
    Ok(ok)
}

fn cmd_bench(dir: &Path, json: &Path) -> Result<bool> {
    let report = run_bench(dir)?;
    for p in &report.programs {
        println!("{}:", p.program);
        for (mode, count) in &p.counts {
            println!(
                "  {:18} {:>10} {:>+8.2}%",
                mode.name(),
                count,
                100.0 * p.relative[mode]
            );
        }
        println!(
            "  wbr over purecap {:+}, of which linearization {:+} ({:.0}%)",
            p.wbr_delta,
            p.linearization_delta,
            100.0 * p.linearization_share
        );
    }
    println!("allocator, extra instructions per malloc over purecap:");
    println!(
        "  {:>6} {:>8} {:>10} {:>10}",
        "size", "mallocs", "wbr", "zeroed"
    );
    for pt in &report.allocator.points {
        println!(
            "  {:>6} {:>8} {:>10.2} {:>10.2}",
            pt.size,
            pt.mallocs,
            pt.extra_per_malloc[&monvm_harness::bench::BenchMode::Wbr],
            pt.extra_per_malloc[&monvm_harness::bench::BenchMode::Zeroed]
        );
    }
    let ok = report.programs.iter().all(|p| p.ordered);
    write_json(json, "bench", ok, &report)?;
    Ok(ok)
}

fn cmd_codec_fuzz(n: u64, seed: u64, json: &Path) -> Result<bool> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let r = codec_fuzz(n, seed);
    println!(
        "round trip:  {} capabilities, {} failures",
        r.n, r.round_trip_failures
    );
    println!(
        "containment: {} requests, {} failures",
        r.n, r.containment_failures
    );
    println!(
        "correction:  {} entries, {} mismatches",
        r.correction_entries, r.correction_mismatches
    );
    println!(
        "vectors:     {} vectors, {} failures",
        r.vectors, r.vector_failures
    );
    for f in &r.failures {
        println!("  {f}");
    }
    println!("{}", if r.passed() { "PASS" } else { "FAIL" });
    write_json(json, "codec-fuzz", r.passed(), &r)?;
    Ok(r.passed())
}

fn cmd_codec_decode(vector: &str) -> Result<bool> {
    let enc = parse_vector(vector)?;
    let d = decode_full(enc);
    println!("{}", d.cap);
    println!("  well-formed {}", d.well_formed);
    println!(
        "  re-encodes  {}",
        d.cap
            .encode()
            .map_or("no".into(), |e| (e == enc).to_string())
    );
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            file,
            machine,
            build,
            json,
        } => cmd_run(file, machine, build, json.as_deref()),
        Command::Build {
            file,
            build,
            comments,
            output,
        } => cmd_build(file, build, *comments, output),
        Command::TestCorpus {
            dir,
            machine,
            build,
            json,
        } => cmd_test_corpus(dir, machine, build, json),
        Command::Bench { dir, json } => cmd_bench(dir, json),
        Command::Codec {
            command: CodecCommand::Fuzz { n, seed, json },
        } => cmd_codec_fuzz(*n, *seed, json),
        Command::Codec {
            command: CodecCommand::Decode { vector },
        } => cmd_codec_decode(vector),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
