use clap::Parser;

fn main() {
    let cli = ifdiv_cli::Cli::parse();
    std::process::exit(ifdiv_cli::run(&cli));
}
