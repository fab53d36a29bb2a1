//! Instruction-count overhead of each enforcement configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use monvm_compiler::mir::passes::InstrumentMode;
use monvm_compiler::mir::{parse_mir, Module};
use monvm_core::machine::{assemble, run_with_memory, Counters, DEFAULT_MEMSIZE};
use monvm_core::{EnforcementConfig, Mode};
use serde::Serialize;

use crate::compile::{compile, read_mir, zero_allocations, BuildOptions};

/// A way of building and running the same source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    Nocap,
    Purecap,
    WbrNoLinearize,
    Wbr,
    /// Conventional checks with every heap allocation zero-filled.
    Zeroed,
}

impl BenchMode {
    pub const ALL: [BenchMode; 5] = [
        BenchMode::Nocap,
        BenchMode::Purecap,
        BenchMode::WbrNoLinearize,
        BenchMode::Wbr,
        BenchMode::Zeroed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Nocap => "nocap",
            BenchMode::Purecap => "purecap",
            BenchMode::WbrNoLinearize => "wbr-no-linearize",
            BenchMode::Wbr => "wbr",
            BenchMode::Zeroed => "zeroed",
        }
    }

    pub fn build(self) -> BuildOptions {
        let instrumented = matches!(self, BenchMode::Wbr | BenchMode::WbrNoLinearize);
        BuildOptions {
            instrument: instrumented.then_some(InstrumentMode::AnnotatedFunctions),
            linearize: self == BenchMode::Wbr,
            registers: 8,
            capabilities: self != BenchMode::Nocap,
        }
    }

    pub fn machine(self) -> EnforcementConfig {
        EnforcementConfig::new(match self {
            BenchMode::Nocap => Mode::NoCap,
            BenchMode::Purecap | BenchMode::Zeroed => Mode::PureCap,
            BenchMode::WbrNoLinearize | BenchMode::Wbr => Mode::Wbr,
        })
    }

    pub fn prepare(self, module: &Module) -> Module {
        match self {
            BenchMode::Zeroed => zero_allocations(module),
            _ => module.clone(),
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const FUEL: u64 = 50_000_000;

/// Builds `module` for `mode`, runs it and returns its counters. Fails
/// unless the program exits cleanly.
pub fn measure(module: &Module, mode: BenchMode) -> Result<Counters> {
    let asm = compile(&mode.prepare(module), &mode.build())?;
    let program = assemble(&asm)?;
    let r = run_with_memory(&program, mode.machine(), FUEL, DEFAULT_MEMSIZE)?;
    if r.exit_code().is_none() {
        bail!("{mode}: {:?}", r.status);
    }
    Ok(r.counters)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgramOverhead {
    pub program: String,
    pub counts: BTreeMap<BenchMode, u64>,
    /// Relative increase over nocap, per mode.
    pub relative: BTreeMap<BenchMode, f64>,
    /// wbr minus purecap.
    pub wbr_delta: i64,
    /// The part of `wbr_delta` that disappears without linearization.
    pub linearization_delta: i64,
    pub linearization_share: f64,
    /// nocap <= purecap <= wbr-no-linearize <= wbr.
    pub ordered: bool,
}

pub fn program_overhead(name: &str, module: &Module) -> Result<ProgramOverhead> {
    let modes = [
        BenchMode::Nocap,
        BenchMode::Purecap,
        BenchMode::WbrNoLinearize,
        BenchMode::Wbr,
    ];
    let mut counts = BTreeMap::new();
    for mode in modes {
        counts.insert(
            mode,
            measure(module, mode)
                .with_context(|| name.to_string())?
                .total(),
        );
    }
    let base = counts[&BenchMode::Nocap] as f64;
    let relative = counts
        .iter()
        .map(|(m, c)| (*m, *c as f64 / base - 1.0))
        .collect();
    let c = |m| counts[&m] as i64;
    let wbr_delta = c(BenchMode::Wbr) - c(BenchMode::Purecap);
    let linearization_delta = c(BenchMode::Wbr) - c(BenchMode::WbrNoLinearize);
    let share = if wbr_delta == 0 {
        0.0
    } else {
        linearization_delta as f64 / wbr_delta as f64
    };
    let ordered = modes.windows(2).all(|w| counts[&w[0]] <= counts[&w[1]]);
    Ok(ProgramOverhead {
        program: name.to_string(),
        counts,
        relative,
        wbr_delta,
        linearization_delta,
        linearization_share: share,
        ordered,
    })
}

/// Chunk sizes of the allocator series.
pub const CHUNK_SIZES: [u64; 8] = [32, 64, 128, 256, 512, 1024, 2048, 4096];
/// Bytes allocated and freed per chunk size.
pub const VOLUME: u64 = 1 << 20;

/// A loop that allocates, touches and frees `VOLUME / size` chunks.
pub fn allocator_program(size: u64) -> Module {
    let n = VOLUME / size;
    let src = format!(
        "func @main() -> int {{
entry:
  %zero = const 0
  %size = const {size}
  br loop
loop:
  %i = phi [%zero, entry], [%inext, loop]
  %p = call @malloc(%size)
  store.i64 volatile %i, %p
  call @free(%p)
  %inext = add %i, 1
  %more = slt %inext, {n}
  condbr %more, loop, done
done:
  ret %zero
}}
"
    );
    parse_mir(&src).expect("generated program is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocatorPoint {
    pub size: u64,
    pub mallocs: u64,
    pub counts: BTreeMap<BenchMode, u64>,
    /// Instructions per malloc beyond purecap.
    pub extra_per_malloc: BTreeMap<BenchMode, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocatorScaling {
    pub points: Vec<AllocatorPoint>,
    /// Largest minus smallest wbr extra per malloc.
    pub wbr_spread: f64,
    /// Per pair of sizes: zeroed extra ratio divided by the size ratio.
    pub zeroed_ratio_to_size_ratio: Vec<(u64, u64, f64)>,
}

/// The fixed-volume allocation series in wbr and zeroed modes.
pub fn allocator_scaling() -> Result<AllocatorScaling> {
    let mut points = Vec::new();
    for size in CHUNK_SIZES {
        let m = allocator_program(size);
        let mallocs = VOLUME / size;
        let mut counts = BTreeMap::new();
        for mode in [BenchMode::Purecap, BenchMode::Wbr, BenchMode::Zeroed] {
            counts.insert(mode, measure(&m, mode)?.total());
        }
        let base = counts[&BenchMode::Purecap] as f64;
        let extra_per_malloc = [BenchMode::Wbr, BenchMode::Zeroed]
            .into_iter()
            .map(|mode| (mode, (counts[&mode] as f64 - base) / mallocs as f64))
            .collect();
        points.push(AllocatorPoint {
            size,
            mallocs,
            counts,
            extra_per_malloc,
        });
    }
    let wbr: Vec<f64> = points
        .iter()
        .map(|p| p.extra_per_malloc[&BenchMode::Wbr])
        .collect();
    let wbr_spread =
        wbr.iter().cloned().fold(f64::MIN, f64::max) - wbr.iter().cloned().fold(f64::MAX, f64::min);
    let first = &points[0];
    let zeroed_ratio_to_size_ratio = points[1..]
        .iter()
        .map(|p| {
            let ratio =
                p.extra_per_malloc[&BenchMode::Zeroed] / first.extra_per_malloc[&BenchMode::Zeroed];
            (
                first.size,
                p.size,
                ratio / (p.size as f64 / first.size as f64),
            )
        })
        .collect();
    Ok(AllocatorScaling {
        points,
        wbr_spread,
        zeroed_ratio_to_size_ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    pub programs: Vec<ProgramOverhead>,
    pub allocator: AllocatorScaling,
}

/// Measures every `.mir` file in `dir` and the allocator series.
pub fn run_bench(dir: &Path) -> Result<OverheadReport> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "mir"));
    files.sort();
    let mut programs = Vec::new();
    for path in files {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("?")
            .to_string();
        programs.push(program_overhead(&name, &read_mir(&path)?)?);
    }
    Ok(OverheadReport {
        programs,
        allocator: allocator_scaling()?,
    })
}
