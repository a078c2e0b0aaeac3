use clap::Parser;

use hscp_cli::commands::Outcome;
use hscp_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => {}
        Ok(Outcome::IterationCapHit) => std::process::exit(2),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
