use clap::Parser;

use prw_cli::{error_json, run, Cli, EXIT_INPUT};

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("JSON values serialize"));
            std::process::exit(outcome.exit_code);
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            std::process::exit(EXIT_INPUT);
        }
    }
}
