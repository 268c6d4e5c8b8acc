use std::process::ExitCode;

fn main() -> ExitCode {
    match citest::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // input rejection; statistical decisions never reach the exit code
            ExitCode::from(2)
        }
    }
}
