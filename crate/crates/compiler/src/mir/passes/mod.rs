//! Module-to-module transforms. Each pass returns a verified module.

mod bounds;
mod instrument;
mod linearize;
mod optimize;

pub use bounds::pass_bound_allocas;
pub use instrument::{pass_cp_instrument, InstrumentMode};
pub use linearize::pass_store_linearize;
pub use optimize::pass_optimize;

use std::collections::HashMap;

use super::{Def, Function, Op, Value};

/// Follows `gep`, `copy` and `pin` back to the value they were derived from.
pub(crate) fn root_of(func: &Function, defs: &HashMap<Value, Def>, mut v: Value) -> Value {
    loop {
        match func.def_op(defs, v) {
            Some(Op::Gep { base, .. }) => v = *base,
            Some(Op::Copy(x) | Op::Pin(x)) => v = *x,
            _ => return v,
        }
    }
}
