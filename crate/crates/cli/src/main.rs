mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;
use rankmargin_core::sampler::SamplerError;

use args::{Cli, Command, RerunArgs};
use manifest::{read_manifest, FileDigest, Run};

const EXIT_DATA: i32 = 1;
const EXIT_SAMPLER: i32 = 2;

fn error_code(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| c.is::<SamplerError>()) {
        EXIT_SAMPLER
    } else {
        EXIT_DATA
    }
}

/// Runs one command and always leaves a manifest behind once the output
/// directory exists.
fn execute(command: &Command) -> i32 {
    if let Command::Rerun(args) = command {
        return match rerun_command(args) {
            Ok(cmd) => execute(&cmd),
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_DATA
            }
        };
    }
    let mut command = command.clone();
    let out = command.out_dir_mut().expect("non-rerun commands have an output directory").clone();
    let mut run = match Run::start(&out) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_DATA;
        }
    };
    let result = match &command {
        Command::Fit(a) => commands::fit(a, &mut run),
        Command::Predict(a) => commands::predict(a, &mut run),
        Command::Simulate(a) => commands::simulate(a, &mut run),
        Command::Summarize(a) => commands::summarize_cmd(a, &mut run),
        Command::Diagnose(a) => commands::diagnose_cmd(a, &mut run),
        Command::Rerun(_) => unreachable!(),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            error_code(&e)
        }
    };
    if code == commands::EXIT_DIAGNOSTICS {
        eprintln!("error: convergence diagnostics failed (pass --allow-bad-diagnostics to accept)");
    }
    if let Err(e) = run.finish(&command, code) {
        eprintln!("error: cannot write manifest: {e:#}");
        return code.max(EXIT_DATA);
    }
    code
}

fn rerun_command(args: &RerunArgs) -> Result<Command> {
    let manifest = read_manifest(&args.manifest)?;
    for input in &manifest.inputs {
        let now = FileDigest::of(std::path::Path::new(&input.path))?;
        if now.sha256 != input.sha256 && !args.ignore_digests {
            bail!("{} changed since the recorded run (sha256 {} now {})", input.path, input.sha256, now.sha256);
        }
    }
    let mut command = manifest.config;
    if matches!(command, Command::Rerun(_)) {
        bail!("manifest records a rerun, not a command");
    }
    if let Some(out) = &args.out {
        *command.out_dir_mut().expect("checked above") = out.clone();
    }
    Ok(command)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_DATA } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    ExitCode::from(execute(&cli.command) as u8)
}
