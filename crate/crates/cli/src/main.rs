use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use pam_cli::{run, Cli, CliError};

fn write(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = run(&cli.command, cli.config.as_ref()).and_then(|out| {
        match &cli.out {
            Some(path) => write(path, &out.main)?,
            None => {
                let mut stdout = std::io::stdout().lock();
                // a closed pipe is not an error worth reporting
                let _ = stdout.write_all(out.main.as_bytes());
            }
        }
        for (path, text) in &out.files {
            write(path, text)?;
        }
        Ok(out.failure)
    });
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("{}", CliError::Invariant(msg));
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
