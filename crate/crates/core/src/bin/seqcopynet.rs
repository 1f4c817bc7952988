use clap::Parser;
use seqcopynet::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("seqcopynet: {e}");
            std::process::exit(1);
        }
    }
}
