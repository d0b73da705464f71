//! Command-line front end for the azumaya toolkit.

pub mod commands;
pub mod emit;
pub mod spec;

pub use commands::run;
pub use emit::{branch_csv, branch_svg};
pub use spec::{parse_spec, MapSpecDoc, SpecError};

/// Environment variable holding the default tolerance.
pub const TOL_ENV: &str = "AZUMAYA_TOL";
/// Guards against documents that would exhaust memory.
pub const MAX_RANK: usize = 64;
pub const MAX_GRID: usize = 1 << 20;
