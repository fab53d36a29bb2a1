//! Corpus runner, overhead benchmarks and self-checks behind the `monvm`
//! command.

pub mod bench;
pub mod checks;
pub mod compile;
pub mod corpus;
pub mod outcome;
pub mod report;
