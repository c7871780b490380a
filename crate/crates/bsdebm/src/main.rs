use clap::Parser;

use bsdebm::runner::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
