//! Command-line entry point: parse and validate experiment configs, run
//! scenarios, and write result files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use fedsim_core::config::{
    config_from_value, merge_json, preset, resolve_config_value, ExperimentConfig, PRESET_NAMES,
};
use fedsim_core::experiment::{run_training, write_outputs};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "fedsim", about = "Deterministic federated-learning attack simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file and/or a named preset.
    Run {
        /// Config file (JSON). Optional when --preset is given.
        config: Option<PathBuf>,
        /// Named preset to start from (setting1..setting4, mnist_paper).
        #[arg(long)]
        preset: Option<String>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Drop the attacker block and run the benign baseline.
        #[arg(long)]
        no_attack: bool,
        /// Cap the number of worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and report every constraint violation.
    Validate {
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
    },
}

fn load_value(path: &Path) -> Result<Value, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{} is not valid JSON: {e}", path.display()))
}

/// Assemble the effective config value: CLI preset (if any) as the base,
/// then the file's own preset reference, then the file content.
fn assemble(config_path: Option<&Path>, preset_name: Option<&str>) -> Result<Value, String> {
    let file_value = match config_path {
        Some(p) => Some(load_value(p)?),
        None => None,
    };
    let resolved_file = match file_value {
        Some(v) => Some(resolve_config_value(v).map_err(|e| e.to_string())?),
        None => None,
    };
    match (preset_name, resolved_file) {
        (Some(name), maybe_file) => {
            let base_text = preset(name).ok_or_else(|| {
                format!("unknown preset '{name}' (available: {})", PRESET_NAMES.join(", "))
            })?;
            let base: Value = serde_json::from_str(base_text).expect("presets are valid JSON");
            Ok(match maybe_file {
                Some(file) => merge_json(base, file),
                None => base,
            })
        }
        (None, Some(file)) => Ok(file),
        (None, None) => Err("provide a config file or --preset".into()),
    }
}

fn parse_config(value: Value) -> Result<ExperimentConfig, String> {
    config_from_value(value).map_err(|e| e.to_string())
}

fn report_violations(config: &ExperimentConfig) -> usize {
    let violations = config.validate();
    for v in &violations {
        eprintln!("violation: {v}");
    }
    violations.len()
}

fn cmd_run(
    config_path: Option<PathBuf>,
    preset_name: Option<String>,
    seed: Option<u64>,
    no_attack: bool,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> u8 {
    if let Some(n) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return EXIT_RUNTIME;
        }
    }
    let value = match assemble(config_path.as_deref(), preset_name.as_deref()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut config = match parse_config(value) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if no_attack {
        config.attack = None;
    }
    if let Some(dir) = out {
        config.output_dir = Some(dir);
    }
    if report_violations(&config) > 0 {
        eprintln!("error: invalid config; nothing was run");
        return EXIT_CONFIG;
    }
    let out_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results/run"));
    match run_training(&config) {
        Ok(outcome) => match write_outputs(&outcome, &out_dir) {
            Ok(files) => {
                if let Some(last) = outcome.run.logs.last() {
                    println!(
                        "finished {} rounds; final main accuracy {:.4}",
                        outcome.run.logs.len(),
                        last.metrics.main_accuracy
                    );
                    if let Some(b) = last.metrics.backdoor_success {
                        println!("final backdoor success {b:.4}");
                    }
                }
                if let Some(inf) = &outcome.inference {
                    println!(
                        "inference at round {}: inferred-to-true {:.4} (mean original-to-true {:.4})",
                        inf.round, inf.inferred_to_true, inf.mean_original_to_true
                    );
                }
                for f in files {
                    println!("wrote {}", out_dir.join(f).display());
                }
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error writing outputs: {e}");
                EXIT_RUNTIME
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn cmd_validate(config_path: PathBuf, preset_name: Option<String>) -> u8 {
    let value = match assemble(Some(&config_path), preset_name.as_deref()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let config = match parse_config(value) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let count = report_violations(&config);
    if count == 0 {
        println!("ok: no violations");
        EXIT_OK
    } else {
        eprintln!("{count} violation(s)");
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            preset,
            seed,
            no_attack,
            jobs,
            out,
        } => cmd_run(config, preset, seed, no_attack, jobs, out),
        Command::Validate { config, preset } => cmd_validate(config, preset),
    };
    ExitCode::from(code)
}
