use clap::Parser;

fn main() {
    let cli = harmonize::cli::Cli::parse();
    if let Err(e) = harmonize::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
