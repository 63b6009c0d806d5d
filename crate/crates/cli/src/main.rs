use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use geopriv_cli::commands::{self, IngestArgs};
use geopriv_cli::config::AttackConfig;
use geopriv_cli::{run_pipeline, CliError, RunConfig};
use geopriv_core::ingest::{MAX_SPEED_KMH, MIN_POINTS};
use geopriv_core::lppm::Mechanism;

#[derive(Parser)]
#[command(name = "geopriv", version, about = "Evaluate location-privacy mechanisms on crowdsensed measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct AttackArgs {
    /// relaxed, safecast-tight or radiocells-tight
    #[arg(long, default_value = "relaxed")]
    schedule: String,
    #[arg(long)]
    temporal_filter: bool,
    #[arg(long)]
    work_hours: bool,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Use the square adversary for data rounded to this many decimals.
    #[arg(long)]
    rounding_decimals: Option<u32>,
}

impl AttackArgs {
    fn config(&self) -> AttackConfig {
        AttackConfig {
            schedule: self.schedule.clone(),
            temporal_filter: self.temporal_filter,
            work_hours: self.work_hours,
            top_k: self.top_k,
            ..AttackConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, exclude and filter a dataset into a clean Safecast-schema CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Input is Radiocells-style; users come from phone attributes.
        #[arg(long)]
        radiocells: bool,
        #[arg(long)]
        exclude: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tz_offset_hours: f64,
        #[arg(long, default_value_t = MIN_POINTS)]
        min_points: usize,
        #[arg(long, default_value_t = MAX_SPEED_KMH)]
        max_speed_kmh: f64,
    },
    /// Generate a synthetic cohort.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        seed: u64,
        /// TOML cohort template; a built-in city otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the ground-truth anchors (JSON).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the inference attack on every user of a file.
    Attack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Apply a mechanism preset to every user of a file.
    Protect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Preset name, e.g. geoind-50 or rounding-3.
        #[arg(long)]
        lppm: String,
        #[arg(long)]
        seed: u64,
        /// Training users for the geoind-or prior.
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Privacy gain of a protected file against its original.
    Evaluate {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "protected")]
        label: String,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Run the full evaluation described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Ingest {
            input,
            output,
            radiocells,
            exclude,
            tz_offset_hours,
            min_points,
            max_speed_kmh,
        } => {
            let report = commands::ingest_cmd(&IngestArgs {
                radiocells,
                input: &input,
                output: &output,
                exclude: exclude.as_deref(),
                tz_offset_hours,
                min_points,
                max_speed_kmh,
            })?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Synth {
            users,
            seed,
            template,
            output,
            truth,
        } => {
            let n = commands::synth_cmd(users, seed, template.as_deref(), &output, truth.as_deref())?;
            eprintln!("wrote {n} users to {}", output.display());
        }
        Command::Attack { input, output, attack } => {
            let v = commands::attack_cmd(&input, &attack.config(), attack.rounding_decimals, &output)?;
            eprintln!("{v} vulnerable users");
        }
        Command::Protect {
            input,
            output,
            lppm,
            seed,
            prior,
        } => {
            let m = Mechanism::preset(&lppm).ok_or_else(|| {
                CliError::config(format!(
                    "unknown preset {lppm:?}; known: {}",
                    Mechanism::preset_names().join(", ")
                ))
            })?;
            let hidden = commands::protect_cmd(&input, &m, seed, prior.as_deref(), &output)?;
            eprintln!("{hidden} measurements hidden");
        }
        Command::Evaluate {
            before,
            after,
            output,
            label,
            attack,
        } => {
            let n = commands::evaluate_cmd(&before, &after, &attack.config(), attack.rounding_decimals, &label, &output)?;
            eprintln!("{n} vulnerable users scored");
        }
        Command::Run { config, output_dir } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            let m = run_pipeline(&cfg)?;
            eprintln!(
                "{} users evaluated, {} files written to {}",
                m.tallies.users_evaluated,
                m.outputs.len(),
                cfg.output_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
