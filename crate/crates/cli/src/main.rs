mod cli;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use gel_service::StartupError;

use crate::cli::{apply_overrides, Cli, Command};
use crate::config::RunConfig;

/// 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<StartupError>() {
            return match e {
                StartupError::Core(c) => c.exit_code() as u8,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<gel_core::Error>() {
            return e.exit_code() as u8;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    match &cli.command {
        Command::Render(a) => commands::render(&cfg, a),
        Command::TrainVce(a) => commands::train_vce_cmd(&cfg, a, false),
        Command::TrainCae(a) => commands::train_vce_cmd(&cfg, a, true),
        Command::ExportEmb(a) => commands::export_emb(&cfg, a),
        Command::Traverse(a) => commands::traverse_cmd(&cfg, a),
        Command::TrainClf(a) => commands::train_clf(&cfg, a),
        Command::Eval(a) => commands::eval_cmd(&cfg, a),
        Command::Sweep(a) => commands::sweep(&cfg, a),
        Command::Serve(a) => commands::serve(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
