//! `spirit` binary: logging, argument parsing, and exit-code mapping.
//!
//! Logging verbosity comes from the `SPIRIT_LOG` environment variable
//! (error, warn, info, debug); the default is warn. Usage errors exit 2,
//! unreadable inputs exit 1, violated invariants exit 3.

use clap::Parser;

use spirit_core::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPIRIT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version print to stdout and succeed; everything
            // else is a usage error
            let code = i32::from(err.use_stderr()) * 2;
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(cli::exit_code(&err));
    }
}
