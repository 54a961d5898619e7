use std::process::ExitCode;

use rafsim_cli::{parse_args, run_scenario, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = parse_args(std::env::args_os()).and_then(|req| run_scenario(&req));
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Info(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rafsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
