use clap::Parser;

fn main() {
    let cli = promptrevert::cli::Cli::parse();
    std::process::exit(promptrevert::commands::run(cli));
}
