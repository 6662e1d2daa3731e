use clap::Parser;
use sifid::cli::{self, Cli};

fn main() {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    };
    if let Err(e) = cli::run(parsed) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
