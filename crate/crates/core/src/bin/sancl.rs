use clap::Parser;

fn main() {
    std::process::exit(sancl::cli::run(sancl::cli::Cli::parse()));
}
