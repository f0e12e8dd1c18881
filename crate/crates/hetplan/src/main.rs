use clap::Parser;

use hetplan::cli::{self, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems (unknown command, bad flags) exit 64; clap's
            // help/version output keeps its zero status.
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(cli::EXIT_USAGE);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    std::process::exit(cli::run(cli));
}
