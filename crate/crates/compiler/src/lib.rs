pub mod backend;
pub mod mir;
