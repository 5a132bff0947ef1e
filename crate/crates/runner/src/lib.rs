//! Command line and file formats for the `mars-core` trainer.
//!
//! Output directory layout of `train`:
//!
//! ```text
//! out/
//!   config.resolved.json   every key, defaults applied; rerunning it reproduces the run
//!   metrics.csv            header, then one row per evaluation
//!   checkpoint.json        config, config hash, parameters, optimizer, counters
//!   skeletons/             per-episode edge lists (with --dump-skeletons)
//! ```
//!
//! `pretrain-pool` writes `manifest.json` and one `team-NNN.json` parameter
//! file per team. Exit codes: 0 success, 2 config, 3 usage, 4 numerical,
//! 5 io, 130 interrupted (after writing a checkpoint).

use std::ffi::OsString;

use clap::Parser;

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config_io;
pub mod edge_list;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod pool_io;

pub use error::{RunError, RunResult};

// Training allocates and frees large tape buffers every update; glibc's
// malloc returns them to the kernel each time, which costs more than the math.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Parses `args` (program name first), runs the verb and returns the exit
/// code; diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let msg = e.to_string();
                    let err = RunError::Cli(msg.trim_start_matches("error: ").trim_end().to_string());
                    eprintln!("mars: {err}");
                    err.exit_code()
                }
            };
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("mars: {err}");
            err.exit_code()
        }
    }
}
