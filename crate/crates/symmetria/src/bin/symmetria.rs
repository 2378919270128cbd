use clap::Parser;
use symmetria::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
