//! Library side of the `mjls-hinf` command-line tool: scenario file schema,
//! command implementations, and CSV output. The binary in `main.rs` is a
//! thin argument-parsing wrapper so integration tests can drive commands
//! directly.

pub mod app;
pub mod output;
pub mod scenario;

/// Process exit codes: 0 success, 1 input error, 2 a legitimate analytic
/// negative (infeasible, diverged, failed validation, no finite critical
/// level).
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_ANALYTIC: i32 = 2;
