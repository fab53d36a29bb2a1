//! The detection corpus: a manifest of good and bad programs with their
//! expected outcome under Write-before-Read enforcement.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use monvm_core::machine::{run_with_memory, TrapKind, DEFAULT_MEMSIZE};
use monvm_core::{EnforcementConfig, Mode};
use serde::Serialize;

use crate::compile::{build_file, BuildOptions};
use crate::outcome::Outcome;

/// Expected outcome of a case with enforcement on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Expectation {
    CleanExit(i64),
    Trap(TrapKind),
    /// A good case whose uninitialized read is never consumed. Enforcement
    /// still flags it.
    ExpectedFalsePositive(TrapKind),
}

impl Expectation {
    pub fn is_bad(self) -> bool {
        matches!(self, Expectation::Trap(_))
    }

    fn trap_kind(self) -> Option<TrapKind> {
        match self {
            Expectation::CleanExit(_) => None,
            Expectation::Trap(k) | Expectation::ExpectedFalsePositive(k) => Some(k),
        }
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::CleanExit(c) => write!(f, "CleanExit({c})"),
            Expectation::Trap(k) => write!(f, "Trap({k})"),
            Expectation::ExpectedFalsePositive(k) => write!(f, "ExpectedFalsePositive({k})"),
        }
    }
}

impl FromStr for Expectation {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .with_context(|| format!("expectation `{s}` is not of the form Name(arg)"))?;
        let kind =
            || TrapKind::from_name(arg).with_context(|| format!("unknown trap kind `{arg}`"));
        Ok(match name {
            "CleanExit" => Expectation::CleanExit(
                arg.parse()
                    .with_context(|| format!("bad exit code `{arg}`"))?,
            ),
            "Trap" => Expectation::Trap(kind()?),
            "ExpectedFalsePositive" => Expectation::ExpectedFalsePositive(kind()?),
            other => bail!("unknown expectation `{other}`"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusCase {
    pub id: String,
    pub source: PathBuf,
    pub expected: Expectation,
    pub tags: Vec<String>,
}

/// Reads `manifest.tsv`: id, path relative to the directory, expectation,
/// comma-separated tags. `#` starts a comment line.
pub fn load_manifest(dir: &Path) -> Result<Vec<CorpusCase>> {
    let path = dir.join("manifest.tsv");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            bail!(
                "{}:{}: expected id, path, expectation and tags",
                path.display(),
                i + 1
            );
        }
        let expected = fields[2]
            .parse()
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let tags = fields
            .get(3)
            .map(|t| {
                t.split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        cases.push(CorpusCase {
            id: fields[0].to_string(),
            source: dir.join(fields[1]),
            expected,
            tags,
        });
    }
    Ok(cases)
}

/// Settings for one corpus run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusConfig {
    pub machine: EnforcementConfig,
    pub build: BuildOptions,
    pub fuel: u64,
    pub memsize: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            machine: EnforcementConfig::wbr(),
            build: BuildOptions::default(),
            fuel: 1_000_000,
            memsize: DEFAULT_MEMSIZE,
        }
    }
}

impl CorpusConfig {
    /// Whether operation-bound violations stop the program.
    pub fn traps_on_op_bounds(&self) -> bool {
        self.machine.mode == Mode::Wbr && !self.machine.auto_init
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CaseVerdict {
    pub id: String,
    pub bad: bool,
    pub expected: String,
    pub outcome: Outcome,
    pub flagged: bool,
    pub deviation: bool,
    pub zero_fills: usize,
    pub output: Vec<i64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub bad_detected: usize,
    pub bad_missed: usize,
    pub good_passed: usize,
    pub good_flagged: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.bad_detected + self.bad_missed + self.good_passed + self.good_flagged
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusReport {
    pub mode: Mode,
    pub auto_init: bool,
    pub strict_store: bool,
    pub matrix: ConfusionMatrix,
    pub deviations: Vec<String>,
    /// Good cases that trapped.
    pub flagged_good: Vec<String>,
    /// Good cases the manifest marks as expected false positives.
    pub expected_false_positives: Vec<String>,
    pub elapsed_ms: u128,
    pub cases: Vec<CaseVerdict>,
}

/// Whether an outcome matches what the manifest predicts under `cfg`.
///
/// With operation bounds not trapping, cases expected to trap on them must
/// run to completion instead, with any exit code.
pub fn matches_expectation(expected: Expectation, outcome: &Outcome, cfg: &CorpusConfig) -> bool {
    let op_bounds = expected.trap_kind() == Some(TrapKind::OpBoundsViolation);
    if op_bounds && !cfg.traps_on_op_bounds() {
        return matches!(outcome, Outcome::Exit { .. });
    }
    match expected {
        Expectation::CleanExit(c) => *outcome == Outcome::Exit { code: c },
        Expectation::Trap(k) | Expectation::ExpectedFalsePositive(k) => {
            outcome.trap_kind() == Some(k)
        }
    }
}

/// Runs one case on a fresh machine.
pub fn run_case(case: &CorpusCase, cfg: &CorpusConfig) -> CaseVerdict {
    let (outcome, zero_fills, output) = match build_file(&case.source, &cfg.build) {
        Err(e) => (
            Outcome::BuildError {
                message: format!("{e:#}"),
            },
            0,
            Vec::new(),
        ),
        Ok(program) => match run_with_memory(&program, cfg.machine, cfg.fuel, cfg.memsize) {
            Ok(r) => (Outcome::of(&r), r.zero_fills.len(), r.output),
            Err(e) => (
                Outcome::BuildError {
                    message: e.to_string(),
                },
                0,
                Vec::new(),
            ),
        },
    };
    let flagged = matches!(outcome, Outcome::Trap { .. });
    let deviation = !matches_expectation(case.expected, &outcome, cfg);
    CaseVerdict {
        id: case.id.clone(),
        bad: case.expected.is_bad(),
        expected: case.expected.to_string(),
        outcome,
        flagged,
        deviation,
        zero_fills,
        output,
    }
}

pub fn run_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<CorpusReport> {
    let start = Instant::now();
    let cases = load_manifest(dir)?;
    let mut matrix = ConfusionMatrix::default();
    let mut verdicts = Vec::with_capacity(cases.len());
    for case in &cases {
        let v = run_case(case, cfg);
        match (v.bad, v.flagged) {
            (true, true) => matrix.bad_detected += 1,
            (true, false) => matrix.bad_missed += 1,
            (false, false) => matrix.good_passed += 1,
            (false, true) => matrix.good_flagged += 1,
        }
        verdicts.push(v);
    }
    Ok(CorpusReport {
        mode: cfg.machine.mode,
        auto_init: cfg.machine.auto_init,
        strict_store: cfg.machine.strict_store,
        matrix,
        deviations: verdicts
            .iter()
            .filter(|v| v.deviation)
            .map(|v| v.id.clone())
            .collect(),
        flagged_good: verdicts
            .iter()
            .filter(|v| !v.bad && v.flagged)
            .map(|v| v.id.clone())
            .collect(),
        expected_false_positives: cases
            .iter()
            .filter(|c| matches!(c.expected, Expectation::ExpectedFalsePositive(_)))
            .map(|c| c.id.clone())
            .collect(),
        elapsed_ms: start.elapsed().as_millis(),
        cases: verdicts,
    })
}

/// Per-case comparison of trapping enforcement with auto-initialization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParityCase {
    pub id: String,
    /// Faulting pc and range under trapping enforcement.
    pub trap: Option<(u64, Option<(u64, u64)>)>,
    /// First zero-filled load under auto-initialization.
    pub first_zero_fill: Option<(u64, (u64, u64))>,
    pub zero_fills: usize,
    pub completed: bool,
    pub parity: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParityReport {
    pub cases: Vec<ParityCase>,
    pub all_completed: bool,
    pub all_parity: bool,
}

/// Runs every bad case twice, trapping and auto-initializing. Parity holds
/// when the first zero-filled load is the load that trapped.
pub fn auto_init_parity(dir: &Path, cfg: &CorpusConfig) -> Result<ParityReport> {
    let mut cases = Vec::new();
    for case in load_manifest(dir)?
        .into_iter()
        .filter(|c| c.expected.is_bad())
    {
        let program = build_file(&case.source, &cfg.build)?;
        let trapping = EnforcementConfig {
            auto_init: false,
            ..cfg.machine
        };
        let filling = EnforcementConfig {
            auto_init: true,
            ..cfg.machine
        };
        let t = run_with_memory(&program, trapping, cfg.fuel, cfg.memsize)?;
        let a = run_with_memory(&program, filling, cfg.fuel, cfg.memsize)?;
        let trap = t
            .trap()
            .filter(|r| r.kind == TrapKind::OpBoundsViolation)
            .map(|r| (r.pc, r.access));
        let first_zero_fill = a
            .zero_fills
            .first()
            .map(|z| (z.pc, (z.addr, z.addr + z.size)));
        let completed = a.exit_code().is_some();
        let parity = match (trap, first_zero_fill) {
            (Some((pc, access)), Some((zpc, range))) => pc == zpc && access == Some(range),
            _ => false,
        };
        cases.push(ParityCase {
            id: case.id,
            trap,
            first_zero_fill,
            zero_fills: a.zero_fills.len(),
            completed,
            parity,
        });
    }
    Ok(ParityReport {
        all_completed: cases.iter().all(|c| c.completed),
        all_parity: cases.iter().all(|c| c.parity),
        cases,
    })
}
