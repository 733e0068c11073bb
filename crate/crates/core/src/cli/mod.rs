//! The `bcnn` command line: argument parsing, config files, run manifests
//! and the command implementations.

pub mod args;
pub mod config;
pub mod jobs;
pub mod manifest;
pub mod run;

use clap::Parser;

use crate::error::Error;
pub use args::Cli;
pub use jobs::{resolve, Job};
pub use manifest::{RunManifest, MANIFEST_NAME};
pub use run::{execute, replay};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(error: &Error) -> i32 {
    if error.is_numerical() {
        EXIT_NUMERICAL
    } else if error.is_io() {
        EXIT_IO
    } else {
        EXIT_ARGUMENT
    }
}

/// Parse `argv`, run the command and return the process exit code.
pub fn main_with_args(argv: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGUMENT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        args::CommandArgs::Replay(r) => replay(&r.manifest, r.out.clone()),
        command => resolve(command).and_then(|job| execute(&job)),
    };
    match result {
        Ok(manifest) => {
            log::info!("{} finished; manifest in {}", manifest.command, manifest.job.out().display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
