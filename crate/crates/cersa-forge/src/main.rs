use clap::Parser;

fn main() {
    let cli = cersa_forge::cli::Cli::parse();
    std::process::exit(cersa_forge::cli::run(cli));
}
