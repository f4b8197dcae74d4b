mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

fn parse(mut argv: Vec<OsString>) -> Result<Cli, Failure> {
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_owned()).collect();
    for n in &names {
        cmd = cmd.mut_subcommand(n, |s| s.args_override_self(true));
    }
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    if let Some(path) = config::config_path(&argv) {
        let sub = config::subcommand_of(&argv, &names);
        argv.extend(config::load(&path, sub, &names).map_err(Failure::Core)?);
    }
    let matches = cmd.try_get_matches_from(argv).map_err(Failure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(Failure::Clap)
}

enum Failure {
    Clap(clap::Error),
    Core(percloud::Error),
}

fn dispatch(cli: &Cli) -> percloud::Result<()> {
    if cli.threads == Some(0) {
        return Err(percloud::Error::BadParams("--threads must be at least 1".into()));
    }
    rayon_pool(cli.threads)?;
    let seed = cli.seed;
    match &cli.command {
        Command::Gen(a) => commands::gen(a, seed),
        Command::Serialize(a) => commands::serialize(a),
        Command::Partition(a) => commands::partition_cmd(a),
        Command::Fps(a) => commands::fps_cmd(a),
        Command::Label(a) => commands::label(a),
        Command::Knn(a) => commands::knn(a, seed),
        Command::KnnRecall(a) => commands::knn_recall(a),
        Command::Aggregate(a) => commands::aggregate(a, seed),
        Command::Loss(a) => commands::loss(a),
        Command::Run(a) => commands::run(a, seed, cli.threads),
        Command::Bench(a) => commands::bench(a, seed),
        Command::Gradcheck(a) => commands::gradcheck(a, seed),
    }
}

fn rayon_pool(threads: Option<usize>) -> percloud::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build_global()
        .map_err(|e| percloud::Error::BadParams(format!("thread pool: {e}")))
}

fn exit_for(e: &percloud::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_io() { 2 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match parse(std::env::args_os().collect()) {
        Err(Failure::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 1 } else { 0 })
        }
        Err(Failure::Core(e)) => exit_for(&e),
        Ok(cli) => match dispatch(&cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
    }
}
