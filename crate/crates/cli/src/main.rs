mod args;
mod commands;
mod manifest;
mod results;
mod settings;
mod smoke;

use std::process::ExitCode;

use clap::Parser;
use decolite::Error;

use crate::args::{Cli, Command};
use crate::manifest::Recorder;
use crate::settings::Settings;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::State(_) => 1,
        Error::Data(_) | Error::Format(_) | Error::Io { .. } | Error::Input(_) | Error::Dimension(_) => 2,
        Error::Numeric(_) | Error::Divergence { .. } => 3,
    }
}

type Handler = fn(&Settings, &mut Recorder) -> decolite::Result<()>;

fn run(cli: Cli) -> Result<bool, Error> {
    let (name, args, f): (&str, _, Handler) = match cli.command {
        Command::Smoke(a) => {
            let report = smoke::run(&a)?;
            smoke::print(&report);
            return Ok(report.passed == report.total);
        }
        Command::Train(a) => ("train", a, commands::train),
        Command::Ensemble(a) => ("ensemble", a, commands::ensemble),
        Command::Evaluate(a) => ("evaluate", a, commands::evaluate),
        Command::Mcm(a) => ("mcm", a, commands::mcm_report),
        Command::Diversity(a) => ("diversity", a, commands::diversity),
    };
    let settings = Settings::resolve(&args)?;
    let mut rec = Recorder::new(name, &settings.out);
    f(&settings, &mut rec)?;
    rec.finish()?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
