use std::process::ExitCode;

use varprompt::cli::{parse_args, CliError};

fn main() -> ExitCode {
    let cfg = match parse_args(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(CliError::Clap(e)) => e.exit(),
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match varprompt::run(&cfg) {
        Ok(report) => {
            print!("{}", varprompt::summary_text(&cfg, &report.outcome));
            println!("wrote {}", report.csv.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
