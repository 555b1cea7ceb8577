//! `cvsim`: configuration-driven runs of the causal-variety pipeline.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 configuration error, 3 numerical
//! failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use causal_variety::energy::Pairing;
use causal_variety::{DensityModel, Mode};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{execute, Command};
use config::{DensitySource, RunConfig, Sampling, SweepCommand};
use error::CliError;
use output::RunDir;

const SCHEMA: &str = include_str!("../schema/run-config.schema.json");

#[derive(Parser)]
#[command(name = "cvsim", version, about = "Energetic causal set simulations and their coarse-grained limit")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default: <output root>/<command>, where the root is
    /// $CVSIM_OUTPUT_ROOT or the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a layered history and check momentum conservation.
    Generate(GenerateArgs),
    /// Kinetic and potential energy of a history, with per-event surprise.
    Energy(EnergyArgs),
    /// Positions from momenta and stationary momenta from positions.
    Embed(EmbedArgs),
    /// Discrete and continuum variety of a sampled density.
    Variety(VarietyArgs),
    /// Evolve hydrodynamic data on a grid.
    Evolve(EvolveArgs),
    /// Compare the hydrodynamic evolution against the wave-function oracle.
    Compare(CompareArgs),
    /// Generate, embed, coarse-grain and evolve in one run.
    Pipeline(PipelineArgs),
    /// Run one command over a list of values of one config field.
    Sweep(SweepArgs),
    /// Print the JSON schema of the run configuration.
    Schema,
    /// Print the effective configuration after flags are applied.
    ShowConfig,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long = "epl")]
    events_per_layer: Option<usize>,
    #[arg(long)]
    n_pre: Option<usize>,
}

#[derive(Args)]
struct CouplingArgs {
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    g_prime: Option<f64>,
}

#[derive(Args)]
struct EnergyArgs {
    /// Causal set JSON from `generate`; generated from the config if absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    couplings: CouplingArgs,
    #[arg(long, value_enum)]
    pairing: Option<PairingArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Exact,
    SameLayer,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    couplings: CouplingArgs,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    order: Option<u8>,
    #[arg(long)]
    gauge_event: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    /// Standard normal.
    Gaussian,
    /// Uniform on [0, 1).
    Uniform,
    /// 1 + 0.5 cos(2 pi z) on the unit circle.
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Exact,
    Kde,
    Histogram,
}

#[derive(Args)]
struct VarietyArgs {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long = "N")]
    n_events: Option<usize>,
    #[arg(long = "L")]
    l: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, value_enum)]
    density: Option<DensityArg>,
    /// Draw independent samples instead of stratified ones.
    #[arg(long)]
    iid: bool,
    /// Comma-separated sample sizes for a convergence study.
    #[arg(long, value_delimiter = ',')]
    study: Option<Vec<usize>>,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    hbar: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    /// Strength of the finite-N correction in corrected mode.
    #[arg(long)]
    prefactor: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    evolve: EvolveArgs,
    /// Comma-separated event counts for the prefactor scaling study.
    #[arg(long, value_delimiter = ',')]
    scaling_n: Option<Vec<usize>>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    generate: GenerateArgs,
    #[command(flatten)]
    couplings: CouplingArgs,
    /// Include the finite-N correction when g' > 0.
    #[arg(long)]
    correction: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    command: Option<SweepArg>,
    /// JSON pointer of the swept field, e.g. /variety/N.
    #[arg(long)]
    parameter: Option<String>,
    /// JSON array of values.
    #[arg(long)]
    values: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Generate,
    Energy,
    Embed,
    Variety,
    Evolve,
    Compare,
    Pipeline,
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: causal_variety::Error| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_generate(cfg: &mut RunConfig, a: GenerateArgs) {
    set(&mut cfg.generate.d, a.d);
    set(&mut cfg.generate.layers, a.layers);
    set(&mut cfg.generate.events_per_layer, a.events_per_layer);
    set(&mut cfg.generate.n_pre, a.n_pre);
}

fn apply_couplings(cfg: &mut RunConfig, a: CouplingArgs) {
    set(&mut cfg.energy.g, a.g);
    set(&mut cfg.energy.g_prime, a.g_prime);
}

fn apply_evolve(cfg: &mut RunConfig, a: EvolveArgs) {
    let m = &mut cfg.madelung;
    set(&mut m.mode, a.mode);
    set(&mut m.dt, a.dt);
    set(&mut m.steps, a.steps);
    set(&mut m.grid.points, a.grid);
    set(&mut m.snapshot_every, a.snapshot_every);
    set(&mut m.hbar, a.hbar);
    set(&mut m.m, a.m);
    set(&mut m.correction_prefactor, a.prefactor);
}

/// Applies the subcommand's flags and returns what to run.
fn apply(cfg: &mut RunConfig, cmd: Cmd) -> Result<Option<Command>, CliError> {
    let command = match cmd {
        Cmd::Generate(a) => {
            apply_generate(cfg, a);
            Command::Generate
        }
        Cmd::Energy(a) => {
            cfg.energy.input = a.input.or(cfg.energy.input.take());
            apply_couplings(cfg, a.couplings);
            set(
                &mut cfg.energy.pairing,
                a.pairing.map(|p| match p {
                    PairingArg::Exact => Pairing::Exact,
                    PairingArg::SameLayer => Pairing::SameLayer,
                }),
            );
            Command::Energy
        }
        Cmd::Embed(a) => {
            cfg.embed.input = a.input.or(cfg.embed.input.take());
            apply_couplings(cfg, a.couplings);
            set(&mut cfg.embed.order, a.order);
            cfg.embed.gauge_event = a.gauge_event.or(cfg.embed.gauge_event);
            Command::Embed
        }
        Cmd::Variety(a) => {
            let v = &mut cfg.variety;
            set(
                &mut v.model,
                a.model.map(|m| match m {
                    ModelArg::Gaussian => DensityModel::standard_gaussian(),
                    ModelArg::Uniform => DensityModel::Uniform { lo: 0.0, hi: 1.0 },
                    ModelArg::Cosine => DensityModel::Cosine { amplitude: 0.5 },
                }),
            );
            set(&mut v.n_events, a.n_events);
            set(&mut v.l, a.l);
            set(&mut v.d, a.d);
            set(&mut v.grid_points, a.grid_points);
            set(
                &mut v.density,
                a.density.map(|d| match d {
                    DensityArg::Exact => DensitySource::Exact,
                    DensityArg::Kde => DensitySource::Kde { bandwidth: None },
                    DensityArg::Histogram => DensitySource::Histogram,
                }),
            );
            if a.iid {
                v.sampling = Sampling::Iid;
            }
            set(&mut v.study, a.study);
            Command::Variety
        }
        Cmd::Evolve(a) => {
            apply_evolve(cfg, a);
            Command::Evolve
        }
        Cmd::Compare(a) => {
            apply_evolve(cfg, a.evolve);
            set(&mut cfg.madelung.scaling_n, a.scaling_n);
            Command::Compare
        }
        Cmd::Pipeline(a) => {
            apply_generate(cfg, a.generate);
            apply_couplings(cfg, a.couplings);
            if a.correction {
                cfg.pipeline.correction = true;
            }
            Command::Pipeline
        }
        Cmd::Sweep(a) => {
            let s = &mut cfg.sweep;
            set(
                &mut s.command,
                a.command.map(|c| match c {
                    SweepArg::Generate => SweepCommand::Generate,
                    SweepArg::Energy => SweepCommand::Energy,
                    SweepArg::Embed => SweepCommand::Embed,
                    SweepArg::Variety => SweepCommand::Variety,
                    SweepArg::Evolve => SweepCommand::Evolve,
                    SweepArg::Compare => SweepCommand::Compare,
                    SweepArg::Pipeline => SweepCommand::Pipeline,
                }),
            );
            set(&mut s.parameter, a.parameter);
            if let Some(text) = a.values {
                s.values = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("--values must be a JSON array: {e}")))?;
            }
            Command::Sweep
        }
        Cmd::Schema => {
            emit(SCHEMA);
            return Ok(None);
        }
        Cmd::ShowConfig => {
            let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))?;
            emit(&format!("{text}\n"));
            return Ok(None);
        }
    };
    Ok(Some(command))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.out.is_some() {
        cfg.output = cli.out;
    }
    let Some(command) = apply(&mut cfg, cli.command)? else {
        return Ok(());
    };
    let dir = RunDir::default_location(&cfg, command.name());
    let manifest = execute(command, &cfg, dir.clone())?;
    let mut text = format!("{}\n", dir.join(output::MANIFEST).display());
    for (name, value) in &manifest.metrics {
        text.push_str(&format!("{name} = {value:e}\n"));
    }
    emit(&text);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
