use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guidepost::perception::NoiseSpec;
use guidepost::pipeline::{self, format_event, load_config, load_settings, PipelineConfig, PipelineError};
use guidepost::sim::{run_scenario, Outcome, SceneScript};

#[derive(Parser)]
#[command(name = "guidepost", version, about = "Obstacle-approach warnings from flow, depth and detections")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process the configured input and write the event log.
    Run { config: PathBuf },
    /// Time each pipeline stage over the first N frames.
    Bench {
        config: PathBuf,
        #[arg(long, default_value_t = 300)]
        frames: u64,
    },
    /// Run a scene script through the pipeline and score its warnings.
    Simulate {
        script: PathBuf,
        /// Backend noise as `dropout,jitter,depth_sigma`.
        #[arg(long, value_parser = parse_noise)]
        noise: Option<NoiseSpec>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pipeline settings; the input section is ignored.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a config file and exit.
    Validate { config: PathBuf },
}

fn parse_noise(s: &str) -> Result<NoiseSpec, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, _>>()?;
    let [dropout, jitter, depth_sigma] = parts[..] else {
        return Err("expected dropout,jitter,depth_sigma".into());
    };
    let noise = NoiseSpec { dropout, jitter, depth_sigma };
    noise.validate().map_err(|e| e.to_string())?;
    Ok(noise)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let summary = pipeline::run(&cfg)?;
            if cfg.output.events.is_none() {
                for e in &summary.events {
                    println!("{}", format_event(e));
                }
            }
            eprintln!("{} frames, {} warnings", summary.frames, summary.events.len());
        }
        Command::Bench { config, frames } => {
            let cfg = load_config(&config)?;
            print!("{}", pipeline::bench(&cfg, frames)?.to_tsv());
        }
        Command::Simulate { script, noise, seed, config } => {
            let scene = SceneScript::load(&script).map_err(|e| pipeline::ConfigError::Validation {
                param: "script".into(),
                message: e.to_string(),
            })?;
            let mut cfg = match config {
                Some(path) => load_settings(&path)?,
                None => PipelineConfig::default(),
            };
            if let Some(noise) = noise {
                cfg.noise = noise;
            }
            let report = run_scenario(&scene, &cfg, seed)?;
            println!("scenario\t{}", report.name);
            println!("expected\t{}", report.expected_approaches);
            println!("emitted\t{}", report.warnings_emitted);
            println!("correct\t{}", report.correct);
            println!("false_positives\t{}", report.false_positives);
            println!("repeats\t{}", report.repeats);
            for o in &report.log {
                let outcome = match o.outcome {
                    Outcome::Correct(_) => "correct",
                    Outcome::Repeat(_) => "repeat",
                    Outcome::FalsePositive => "false_positive",
                };
                println!("warning\t{}\t{}\t{}\t{}", o.warning.frame_index, o.warning.zone, o.warning.depth_stat, outcome);
            }
            for e in report.missed() {
                println!("missed\t{}\t{}\t{}\t{}", e.sprite, e.zone, e.start, e.end);
            }
        }
        Command::Validate { config } => {
            load_config(&config)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors share the configuration exit status; 2 means unreadable input.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
