use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = adrf::cli::Cli::parse();
    match adrf::run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
