use clap::Parser;
use cloneguard::args::Cli;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("CLONEGUARD_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { cloneguard::EXIT_ERROR } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match cloneguard::run(cli) {
        Ok(outcome) => std::process::exit(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(cloneguard::EXIT_ERROR);
        }
    }
}
