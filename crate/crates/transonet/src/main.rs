use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let result = transonet::cli::dispatch(std::env::args_os());
    if let Some(text) = &result.stdout {
        let _ = writeln!(std::io::stdout(), "{}", text.trim_end());
    }
    if let Some(msg) = &result.message {
        let _ = writeln!(std::io::stderr(), "{}", msg.trim_end());
    }
    ExitCode::from(result.exit_code as u8)
}
