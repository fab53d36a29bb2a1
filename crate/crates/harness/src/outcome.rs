use monvm_core::machine::{RunResult, Status, TrapKind};
use serde::Serialize;

/// How one execution ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Exit {
        code: i64,
    },
    Trap {
        kind: TrapKind,
        pc: u64,
        access: Option<(u64, u64)>,
    },
    BuildError {
        message: String,
    },
}

impl Outcome {
    pub fn of(result: &RunResult) -> Outcome {
        match result.status {
            Status::Halted(code) => Outcome::Exit { code },
            Status::Trapped(t) => Outcome::Trap {
                kind: t.kind,
                pc: t.pc,
                access: t.access,
            },
            Status::Running => unreachable!("a finished run is not running"),
        }
    }

    pub fn trap_kind(&self) -> Option<TrapKind> {
        match self {
            Outcome::Trap { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Exit { code } => write!(f, "EXIT {code}"),
            Outcome::Trap { kind, pc, access } => {
                write!(f, "TRAP {kind} @pc={pc:#x}")?;
                if let Some((lo, hi)) = access {
                    write!(f, " range=[{lo:#x}, {hi:#x})")?;
                }
                Ok(())
            }
            Outcome::BuildError { message } => write!(f, "BUILD ERROR {message}"),
        }
    }
}
