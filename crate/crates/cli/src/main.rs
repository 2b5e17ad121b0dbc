use clap::Parser;
use netbridge_cli::{error_json, exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            std::process::exit(exit_code(&err));
        }
    }
}
