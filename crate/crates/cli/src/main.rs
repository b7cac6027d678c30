use clap::Parser;
use spinbench_cli::args::Cli;

fn main() {
    if let Err(e) = spinbench_cli::run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
