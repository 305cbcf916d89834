//! `pwa`: file-based front end to the retrieval pipeline.
//!
//! Every subcommand reads the same flat configuration. Settings come from
//! built-in defaults, then `--config FILE`, then `--some-key VALUE` flags.

mod commands;
mod config;
mod error;

use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use config::{PipelineConfig, KEYS};
use error::CliResult;

const SUBCOMMANDS: &[(&str, &str)] = &[
    (
        "fit-detectors",
        "select part detectors from database tensors",
    ),
    (
        "aggregate",
        "build raw descriptors from a directory of tensors",
    ),
    ("fit-whitening", "fit PCA whitening on raw descriptors"),
    ("postprocess", "normalize and whiten raw descriptors"),
    ("index", "validate descriptors and write a search index"),
    ("search", "rank the index for every query descriptor"),
    ("eval", "score rankings against ground truth"),
    ("ablate", "sweep detector count or output dimension"),
    (
        "dump-weights",
        "write each detector's weight map as a PGM image",
    ),
];

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut cmd = Command::new("pwa")
        .about("Part-based weighting aggregation image retrieval")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("flat key=value configuration file"),
        );
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(flag(key))
                .value_name("VALUE")
                .global(true)
                .help(*help),
        );
    }
    for (name, about) in SUBCOMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about));
    }
    cmd
}

fn effective_config(matches: &ArgMatches) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = matches.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    for (key, _) in KEYS {
        if let Some(value) = matches.get_one::<String>(key) {
            cfg.set(key, value)?;
        }
    }
    Ok(cfg)
}

fn run(name: &str, matches: &ArgMatches) -> CliResult<()> {
    let cfg = effective_config(matches)?;
    eprint!("{}", cfg.echo("# "));
    match name {
        "fit-detectors" => commands::fit_detectors(&cfg),
        "aggregate" => commands::aggregate(&cfg),
        "fit-whitening" => commands::fit_whitening_cmd(&cfg),
        "postprocess" => commands::postprocess(&cfg),
        "index" => commands::index(&cfg),
        "search" => commands::search(&cfg),
        "eval" => commands::eval(&cfg),
        "ablate" => commands::ablate(&cfg),
        "dump-weights" => commands::dump_weights(&cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pwa {name}: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
