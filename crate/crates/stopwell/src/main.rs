use clap::Parser;

fn main() {
    let cli = stopwell::cli::Cli::parse();
    std::process::exit(stopwell::cli::run(cli));
}
