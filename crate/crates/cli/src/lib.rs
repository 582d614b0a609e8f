//! Command-line front end of the `ifdiv` toolkit. The binary is a thin
//! wrapper around [`run`]; everything else is callable in-process.

pub mod args;
pub mod commands;
pub mod error;
pub mod format;
pub mod repro;

use std::fs;
use std::io::Write;

pub use args::Cli;
pub use commands::{execute, Output};
pub use error::{exit, CliError, CliResult};

/// Writes `output` to `--out` (or stdout) and returns the exit status.
pub fn emit(cli: &Cli, output: &Output) -> CliResult<i32> {
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    let doc = serde_json::to_string_pretty(&output.doc).expect("documents are plain JSON") + "\n";
    match &cli.common.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
            let mut files = vec![(format!("{}.json", output.name), doc)];
            files.extend(output.files.iter().cloned());
            for (name, contents) in files {
                let path = dir.join(&name);
                fs::write(&path, contents).map_err(|e| CliError::io(&path.display().to_string(), e))?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            let text = output.stdout.as_deref().unwrap_or(&doc);
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("stdout", e))?;
        }
    }
    Ok(if output.failed {
        exit::FAILURE
    } else if output.not_converged && cli.common.strict {
        exit::NOT_CONVERGED
    } else {
        exit::SUCCESS
    })
}

pub fn run(cli: &Cli) -> i32 {
    match execute(cli).and_then(|out| emit(cli, &out)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
