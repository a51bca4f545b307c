use clap::Parser;
use readmit_cli::error::error_diagnostic;
use readmit_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err((stage, e)) = run(&cli) {
        eprintln!("{}", error_diagnostic(&stage, &e));
        std::process::exit(e.exit_code());
    }
}
