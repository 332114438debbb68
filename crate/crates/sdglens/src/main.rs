use clap::error::ErrorKind;
use clap::Parser;
use sdglens::cli::{run, Cli, EXIT_INPUT_ERROR, EXIT_OK};

fn main() {
    // Usage errors are input errors; exit 2 is reserved for the
    // failure-ratio gate.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT_ERROR,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    std::process::exit(run(cli, &mut stdout.lock(), &mut stderr.lock()));
}
