use clap::Parser;

fn main() {
    let cli = pdpcal::cli::Cli::parse();
    if let Err(e) = pdpcal::cli::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}
