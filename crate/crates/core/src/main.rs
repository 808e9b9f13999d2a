use clap::Parser;
use emlabel::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(&cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
