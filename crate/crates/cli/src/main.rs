mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode as ProcessExit;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command, GlobalArgs};
use config::RunConfig;
use error::CliError;

fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &global.out_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(jobs) = global.jobs {
        cfg.jobs = jobs;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<commands::Summary, CliError> {
    let cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::Ingest(a) => commands::ingest(cfg, a),
        Command::Index(a) => commands::index(cfg, a),
        Command::Search(a) => commands::search(cfg, a),
        Command::Fuse(a) => commands::fuse_runs(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Validate(a) => commands::validate(cfg, a),
        Command::Repass(a) => commands::repass(cfg, a),
        Command::Answer(a) => commands::answer(cfg, a),
        Command::Qgen(a) => commands::qgen(cfg, a),
    }
}

fn summary_line(command: Value, err: &CliError) -> ProcessExit {
    let line = json!({
        "command": command,
        "status": "error",
        "category": err.category,
        "exit_code": err.exit as u8,
        "message": err.message,
    });
    println!("{line}");
    ProcessExit::from(err.exit as u8)
}

fn main() -> ProcessExit {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ProcessExit::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let message = first.strip_prefix("error: ").unwrap_or(first).to_string();
            return summary_line(Value::Null, &CliError::usage(message));
        }
    };
    let name = cli.command.name();
    match run(&cli) {
        Ok(mut summary) => {
            let mut line = serde_json::Map::new();
            line.insert("command".into(), json!(name));
            line.insert("status".into(), json!("ok"));
            line.append(&mut summary);
            println!("{}", Value::Object(line));
            ProcessExit::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {}", err.message);
            summary_line(json!(name), &err)
        }
    }
}
