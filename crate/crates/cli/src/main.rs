use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use seqmarl::harness::{
    ablate_prediction, evaluate_checkpoint, export_trajectories, read_episode_log, train, HarnessError, RunConfig,
    CHECKPOINT_FILE, SCHEMA,
};

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Adds `--config` and one flag per configuration key.
fn with_config_flags(cmd: Command) -> Command {
    let cmd = cmd.arg(Arg::new("config").long("config").short('c').value_name("FILE").help("TOML run configuration"));
    SCHEMA.iter().fold(cmd, |cmd, (key, doc)| {
        cmd.arg(Arg::new(*key).long(flag_name(key)).value_name("VALUE").help(*doc).help_heading("Config keys"))
    })
}

fn cli() -> Command {
    Command::new("seqmarl")
        .about("Train, evaluate and ablate sequential multi-agent world-model planners")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config_flags(Command::new("train").about("Collect with the planner and train a team")))
        .subcommand(with_config_flags(
            Command::new("eval")
                .about("Evaluate a checkpoint with the deterministic planner")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE").help("defaults to <out_dir>/checkpoint.bin")),
        ))
        .subcommand(with_config_flags(
            Command::new("ablate-prediction").about("Sequential versus decentralized forecast error on linear_team"),
        ))
        .subcommand(
            Command::new("export-traj")
                .about("Convert an episode log into a long-format CSV table")
                .arg(Arg::new("input").long("input").required(true).value_name("JSONL"))
                .arg(Arg::new("output").long("output").required(true).value_name("CSV")),
        )
        .subcommand(
            Command::new("schema")
                .about("Print every configuration key with its type and default")
                .arg(Arg::new("toml").long("toml").action(ArgAction::SetTrue).help("print the defaults as a TOML file")),
        )
}

fn load_config(m: &ArgMatches) -> Result<RunConfig, HarnessError> {
    let base = match m.get_one::<String>("config") {
        Some(path) => RunConfig::load(&PathBuf::from(path))?,
        None => RunConfig::default(),
    };
    let overrides: Vec<(String, String)> = SCHEMA
        .iter()
        .filter_map(|(key, _)| m.get_one::<String>(key).map(|v| (key.to_string(), v.clone())))
        .collect();
    base.with_overrides(&overrides)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), HarnessError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(m: &ArgMatches) -> Result<(), HarnessError> {
    match m.subcommand() {
        Some(("train", sub)) => {
            let cfg = load_config(sub)?;
            let out = train(&cfg)?;
            let recent = out.successes.iter().rev().take(20).filter(|&&s| s).count();
            println!(
                "trained {} steps over {} episodes ({} updates); last-20 success {recent}/{}",
                out.steps,
                out.episodes,
                out.updates,
                out.successes.len().min(20)
            );
            println!("checkpoint {}", out.checkpoint.display());
            println!("metrics {}", out.metrics.display());
        }
        Some(("eval", sub)) => {
            let cfg = load_config(sub)?;
            let ckpt = sub.get_one::<String>("checkpoint").map_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE), PathBuf::from);
            print_json(&evaluate_checkpoint(&ckpt, &cfg)?)?;
        }
        Some(("ablate-prediction", sub)) => {
            let cfg = load_config(sub)?;
            print_json(&ablate_prediction(&cfg)?)?;
        }
        Some(("export-traj", sub)) => {
            let input = PathBuf::from(sub.get_one::<String>("input").expect("required"));
            let output = PathBuf::from(sub.get_one::<String>("output").expect("required"));
            let rows = export_trajectories(&read_episode_log(&input)?, &output)?;
            println!("wrote {rows} rows to {}", output.display());
        }
        Some(("schema", sub)) => {
            if sub.get_flag("toml") {
                print!("{}", RunConfig::default().to_toml_string());
            } else {
                print!("{}", RunConfig::schema_text());
            }
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(&cli().get_matches()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
