mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use commands::Cli;

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ZEGNN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("ZEGNN_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("ZEGNN_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<zegnn::Error>() {
        Some(zegnn::Error::Divergence { .. }) => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

fn run() -> anyhow::Result<()> {
    init_threads()?;
    let cmd = Cli::command();
    let argv = config::merge_config(std::env::args_os().collect(), &cmd)?;
    let matches = cmd.clone().try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = cmd.find_subcommand(name).expect("known subcommand");
    let effective = config::effective_config(sub, sub_matches);
    commands::dispatch(cli, name, effective)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
