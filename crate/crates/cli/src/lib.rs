//! Presets, experiment harness and exit-code conventions for the `invctl`
//! command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiment;
pub mod presets;

use invctl_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NON_IDENTIFIABLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BAD_INPUT: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::NonIdentifiable { .. } => EXIT_NON_IDENTIFIABLE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_BAD_INPUT,
    }
}
