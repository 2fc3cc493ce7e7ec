use clap::Parser;

fn main() {
    std::process::exit(rdhedge_cli::dispatch(rdhedge_cli::Cli::parse()));
}
