mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Context;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let ctx = Context {
        output_root: cli.output_root,
        cache_dir: cli.cache_dir,
    };
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::BuildIndex(a) => commands::build_index(&ctx, a),
        Command::Train(a) => commands::train_cmd(&ctx, a),
        Command::SeedSuite(a) => commands::seed_suite(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Breakdown(a) => commands::breakdown(&ctx, a),
        Command::Contrast(a) => commands::contrast(&ctx, a),
        Command::Ttest(a) => commands::ttest(&ctx, a),
        Command::Casestudy(a) => commands::casestudy(&ctx, a),
        Command::PcaExport(a) => commands::pca(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
