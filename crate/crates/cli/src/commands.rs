//! The subcommands. Each reads its section of the config, writes its files
//! into the run directory and records headline metrics.

use std::io::Write;
use std::path::{Path, PathBuf};

use causal_variety::coarse::{
    continuum_variety, convergence_study, cutoffs, discrete_acausal_variety, estimate_density, iid_samples,
    quantile_samples, rank_window_pasts, write_study_csv, Shell, StudyConfig, RANK_WINDOW_KAPPA,
};
use causal_variety::ecs::generate_layered;
use causal_variety::embedding::{
    reconstruct_embedding, split_momentum, stationary_momenta, ReconstructConfig, StationaryConfig,
};
use causal_variety::energy::hamiltonian_with;
use causal_variety::madelung::{
    compare_evolutions, correction_prefactor_for, correction_scaling, evolve_observed, ComparisonReport,
};
use causal_variety::{
    CoarseState, EmbeddingConfig, EnergeticCausalSet, EventId, Grid, HamiltonianParams, HydroState, MadelungParams,
    Mode, VarietyReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitialState, MadelungSection, RunConfig, Sampling, SweepCommand};
use crate::error::{CliError, StageExt};
use crate::output::{RunDir, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Energy,
    Embed,
    Variety,
    Evolve,
    Compare,
    Pipeline,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Energy => "energy",
            Self::Embed => "embed",
            Self::Variety => "variety",
            Self::Evolve => "evolve",
            Self::Compare => "compare",
            Self::Pipeline => "pipeline",
            Self::Sweep => "sweep",
        }
    }
}

impl From<SweepCommand> for Command {
    fn from(c: SweepCommand) -> Self {
        match c {
            SweepCommand::Generate => Self::Generate,
            SweepCommand::Energy => Self::Energy,
            SweepCommand::Embed => Self::Embed,
            SweepCommand::Variety => Self::Variety,
            SweepCommand::Evolve => Self::Evolve,
            SweepCommand::Compare => Self::Compare,
            SweepCommand::Pipeline => Self::Pipeline,
        }
    }
}

/// Runs `command` into `dir` and writes the manifest, also when the command
/// fails part way.
pub fn execute(command: Command, config: &RunConfig, dir: PathBuf) -> Result<RunManifest, CliError> {
    let mut run = RunDir::create(config, command.name(), dir)?;
    let result = match command {
        Command::Generate => generate(config, &mut run),
        Command::Energy => energy(config, &mut run),
        Command::Embed => embed(config, &mut run),
        Command::Variety => variety(config, &mut run),
        Command::Evolve => evolve(config, &mut run),
        Command::Compare => compare(config, &mut run),
        Command::Pipeline => pipeline(config, &mut run),
        Command::Sweep => sweep(config, &mut run),
    };
    match result {
        Ok(()) => run.finish(None),
        Err(e) => {
            run.finish(Some(&e))?;
            Err(e)
        }
    }
}

fn csv_rows<T: Serialize>(rows: &[T]) -> impl FnOnce(&mut Vec<u8>) -> causal_variety::Result<()> + '_ {
    move |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn ecs_json(ecs: &EnergeticCausalSet) -> Result<serde_json::Value, CliError> {
    let text = ecs.to_json().stage("output")?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

/// Reads a causal set written by `generate` (or a bare causal-set document),
/// or generates one from the config when no input is given.
fn load_or_generate(config: &RunConfig, input: Option<&Path>) -> Result<EnergeticCausalSet, CliError> {
    let Some(path) = input else {
        return generate_layered(&config.generate.layered(config.seed)).stage("generate");
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(inner) = doc.get_mut("causal_set") {
        doc = inner.take();
    }
    EnergeticCausalSet::from_json(&doc.to_string()).stage("load")
}

#[derive(Serialize)]
struct ResidualRow {
    event: usize,
    layer: Option<usize>,
    interior: bool,
    residual: f64,
}

fn generate(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let ecs = generate_layered(&config.generate.layered(config.seed)).stage("generate")?;
    let mut rows = Vec::with_capacity(ecs.len());
    for e in ecs.events() {
        let r = ecs.conservation_residual(e).stage("generate")?;
        let norm = r.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        rows.push(ResidualRow { event: e.0, layer: ecs.layer(e), interior: ecs.is_interior(e), residual: norm });
    }
    run.write_json("causal_set.json", "causal_set", &ecs_json(&ecs)?)?;
    run.write_csv("residuals.csv", csv_rows(&rows))?;
    run.metric("events", ecs.len() as f64);
    run.metric("links", ecs.links().len() as f64);
    run.metric("max_interior_residual", ecs.max_interior_residual());
    Ok(())
}

fn hamiltonian_params(config: &RunConfig, n_pre: usize) -> HamiltonianParams {
    let e = &config.energy;
    HamiltonianParams { g: e.g, g_prime: e.g_prime, m: e.m, hbar: e.hbar, n_pre, z_v: e.z_v }
}

#[derive(Serialize)]
struct SurpriseRow {
    event: usize,
    surprise: f64,
}

fn energy(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let ecs = load_or_generate(config, config.energy.input.as_deref())?;
    energy_stage(config, &ecs, run)
}

fn energy_stage(config: &RunConfig, ecs: &EnergeticCausalSet, run: &mut RunDir) -> Result<(), CliError> {
    let params = hamiltonian_params(config, ecs.n_pre());
    let report = hamiltonian_with(ecs, &params, config.energy.pairing).stage("energy")?;
    let rows: Vec<SurpriseRow> =
        report.per_event_surprise.iter().map(|(e, s)| SurpriseRow { event: e.0, surprise: *s }).collect();
    run.write_json("energy.json", "energy", &report)?;
    run.write_csv("surprise.csv", csv_rows(&rows))?;
    run.metric("T", report.t);
    run.metric("U", report.u);
    run.metric("H", report.h);
    Ok(())
}

#[derive(Serialize)]
struct MomentumRow {
    link: usize,
    source: usize,
    target: usize,
    p: String,
}

fn momentum_rows(ecs: &EnergeticCausalSet) -> Vec<MomentumRow> {
    ecs.links()
        .iter()
        .enumerate()
        .map(|(k, l)| MomentumRow {
            link: k,
            source: l.source.0,
            target: l.target.0,
            p: l.momentum.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "),
        })
        .collect()
}

fn embed(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let ecs = load_or_generate(config, config.embed.input.as_deref())?;
    embed_stage(config, &ecs, run).map(|_| ())
}

/// Positions from the history's momenta, then stationary momenta from the
/// positions, with round-trip and transversality diagnostics.
fn embed_stage(config: &RunConfig, ecs: &EnergeticCausalSet, run: &mut RunDir) -> Result<EmbeddingConfig, CliError> {
    let e = &config.embed;
    let g = config.energy.g;
    let rec = reconstruct_embedding(
        ecs,
        &ReconstructConfig { g, kinetic_factor: e.kinetic_factor, tolerance: e.tolerance.unwrap_or(f64::INFINITY) },
    )
    .stage("embed")?;
    let mut z = rec.z;
    if let Some(k) = e.gauge_event {
        if k >= ecs.len() {
            return Err(CliError::Config(format!("gauge event {k} outside the {} events", ecs.len())));
        }
        let origin = z.position(EventId(k)).to_vec();
        for i in 0..z.len() {
            for (v, o) in z.position_mut(EventId(i)).iter_mut().zip(&origin) {
                *v -= o;
            }
        }
    }

    let base = StationaryConfig { g, g_prime: config.energy.g_prime, order: 0, kinetic_factor: e.kinetic_factor };
    let order0 = stationary_momenta(ecs, &z, &base).stage("embed")?;
    let chosen = stationary_momenta(ecs, &z, &StationaryConfig { order: e.order, ..base }).stage("embed")?;

    let back = reconstruct_embedding(
        &order0,
        &ReconstructConfig { g, kinetic_factor: e.kinetic_factor, ..Default::default() },
    )
    .stage("embed")?;
    // comparing link differences removes the per-component translation
    let round_trip = ecs
        .links()
        .iter()
        .map(|l| {
            let (a, b) = (l.source, l.target);
            (0..ecs.dimension())
                .map(|i| {
                    let before = z.position(b)[i] - z.position(a)[i];
                    let after = back.z.position(b)[i] - back.z.position(a)[i];
                    (after - before).abs()
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let mut longitudinal: f64 = 0.0;
    for (p0, p1) in order0.links().iter().zip(chosen.links()) {
        let delta: Vec<f64> = p1.momentum.iter().zip(&p0.momentum).map(|(a, b)| a - b).collect();
        if let Ok(split) = split_momentum(&delta, &p0.momentum) {
            longitudinal = longitudinal.max(split.longitudinal.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }

    let positions = z.clone();
    run.write_csv("embedding.csv", move |buf| positions.write_csv(buf))?;
    let rows = momentum_rows(&chosen);
    run.write_csv("stationary_momenta.csv", csv_rows(&rows))?;
    run.metric("components", rec.components as f64);
    run.metric("projection_residual_max", rec.link_residuals.iter().copied().fold(0.0, f64::max));
    run.metric("round_trip_error", round_trip);
    run.metric("max_longitudinal_correction", longitudinal);
    Ok(z)
}

#[derive(Serialize)]
struct DensityRow {
    index: usize,
    z: f64,
    rho: f64,
}

fn write_density(run: &mut RunDir, name: &str, state: &CoarseState) -> Result<(), CliError> {
    let rows: Vec<DensityRow> = (0..state.grid.len())
        .map(|i| DensityRow { index: i, z: state.grid.coordinate(0, i), rho: state.rho[i] })
        .collect();
    run.write_csv(name, csv_rows(&rows))?;
    Ok(())
}

#[derive(Serialize)]
struct VarietySummary {
    report: VarietyReport,
    #[serde(rename = "R")]
    big_r: f64,
    r: f64,
    window: usize,
    used: usize,
    /// `kappa` times the grid Fisher term.
    prediction: f64,
    kappa: f64,
    bandwidth: Option<f64>,
    clipped_mass: f64,
    /// Samples dropped from the discrete estimate as exact duplicates.
    coincident: usize,
}

/// Continuum terms on `state`, plus the rank-window estimate from the
/// samples when they are one-dimensional.
fn variety_of(
    state: &CoarseState,
    samples: &[f64],
    l: f64,
    period: Option<f64>,
) -> Result<(VarietyReport, VarietySummary), CliError> {
    let cut = cutoffs(state, l).stage("variety")?;
    let mut report = continuum_variety(state, &cut).stage("variety")?;
    let window = (cut.r.round() as usize).max(1);
    // coincident samples have no direction between them; keep one of each
    let mut distinct = samples.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let pasts = rank_window_pasts(&distinct, window, period).stage("variety")?;
    let discrete = discrete_acausal_variety(&pasts, &Shell::Unbounded).stage("variety")?;
    report.discrete = Some(discrete.value);
    let summary = VarietySummary {
        report,
        big_r: cut.big_r,
        r: cut.r,
        window,
        used: discrete.used,
        prediction: RANK_WINDOW_KAPPA * report.fisher_term,
        kappa: RANK_WINDOW_KAPPA,
        bandwidth: None,
        clipped_mass: 0.0,
        coincident: samples.len() - distinct.len(),
    };
    Ok((report, summary))
}

fn record_variety(run: &mut RunDir, report: &VarietyReport, summary: &VarietySummary) -> Result<(), CliError> {
    let r = *report;
    run.write_csv("variety.csv", move |buf| r.write_csv(buf))?;
    run.write_json("variety.json", "variety", summary)?;
    run.metric("discrete", report.discrete.unwrap_or(f64::NAN));
    run.metric("fisher_term", report.fisher_term);
    run.metric("constant_term", report.constant_term);
    run.metric("correction_term", report.correction_term);
    run.metric("prediction", summary.prediction);
    run.metric("r", summary.r);
    run.metric("coincident_samples", summary.coincident as f64);
    Ok(())
}

fn variety(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let v = &config.variety;
    if v.d != 1 {
        return Err(CliError::Config(format!("density models are one-dimensional, d = {} is unsupported", v.d)));
    }
    v.model.validate().map_err(CliError::from_core)?;
    let (lo, hi) = v.model.support();
    let periodic = v.model.is_periodic();
    let grid = Grid::line(lo, hi, v.grid_points, periodic).map_err(CliError::from_core)?;
    let samples = match v.sampling {
        Sampling::Quantile => quantile_samples(&v.model, v.n_events, config.seed),
        Sampling::Iid => iid_samples(&v.model, v.n_events, config.seed),
    }
    .stage("sample")?;
    let (state, bandwidth, clipped) = match v.density.method() {
        None => (v.model.on_grid(&grid, v.n_events).stage("coarse_grain")?, None, 0.0),
        Some(method) => {
            let est = estimate_density(&samples, &grid, method).stage("coarse_grain")?;
            (est.state, est.bandwidth.first().copied(), est.clipped_mass)
        }
    };
    let (report, mut summary) = variety_of(&state, &samples, v.l, periodic.then_some(hi - lo))?;
    summary.bandwidth = bandwidth;
    summary.clipped_mass = clipped;
    write_density(run, "density.csv", &state)?;
    record_variety(run, &report, &summary)?;

    if !v.study.is_empty() {
        let study = convergence_study(&StudyConfig {
            model: v.model.clone(),
            n_list: v.study.clone(),
            l: v.l,
            d: v.d,
            seed: config.seed,
            grid_points: v.grid_points,
        })
        .stage("study")?;
        run.write_csv("convergence.csv", |buf| write_study_csv(&study, buf))?;
        if let Some(fit) = study.fit {
            run.metric("study_slope", fit.slope);
            run.metric("study_r_squared", fit.r_squared);
        }
    }
    Ok(())
}

fn madelung_params(m: &MadelungSection, prefactor: f64) -> MadelungParams {
    MadelungParams { m: m.m, hbar: m.hbar, correction_prefactor: prefactor, potential: None }
}

fn initial_state(m: &MadelungSection, grid: Grid) -> Result<HydroState, CliError> {
    match &m.initial {
        InitialState::Gaussian { center, sigma, momentum } => {
            HydroState::gaussian_packet(grid, *center, *sigma, *momentum).map_err(CliError::from_core)
        }
        InitialState::File { path } => {
            let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
            HydroState::read_csv(file, grid).stage("load")
        }
    }
}

#[derive(Serialize)]
struct EvolveSummary {
    mode: Mode,
    t: f64,
    steps: usize,
    mass_drift: f64,
    energy_drift: f64,
    initial_energy: f64,
    final_energy: f64,
    mean_position: f64,
    variance: f64,
}

fn evolve(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let m = &config.madelung;
    let grid = m.grid.build()?;
    let init = initial_state(m, grid)?;
    let params = madelung_params(m, m.correction_prefactor);

    let mut snapshots: Vec<u8> = Vec::new();
    let mut snapshot_error = None;
    let report = evolve_observed(&init, &params, m.dt, m.steps, m.mode, m.snapshot_every, |s| {
        if let Err(e) = append_snapshot(&mut snapshots, s) {
            snapshot_error.get_or_insert(e);
        }
    })
    .stage("evolve")?;
    if let Some(e) = snapshot_error {
        return Err(CliError::Stage { stage: "output", source: e });
    }

    let last = report.state.clone();
    run.write_csv("final.csv", move |buf| last.write_csv(buf))?;
    if m.snapshot_every > 0 {
        run.write_csv("snapshots.csv", move |buf| {
            buf.extend_from_slice(&snapshots);
            Ok(())
        })?;
    }
    let d = report.state.grid.d();
    let summary = EvolveSummary {
        mode: m.mode,
        t: report.state.t,
        steps: report.steps,
        mass_drift: report.mass_drift,
        energy_drift: report.energy_drift,
        initial_energy: report.initial_energy,
        final_energy: report.final_energy,
        mean_position: report.state.mean_position(0),
        variance: (0..d).map(|a| report.state.variance(a)).sum(),
    };
    run.write_json("evolve.json", "evolve", &summary)?;
    run.metric("mass_drift", summary.mass_drift);
    run.metric("energy_drift", summary.energy_drift);
    run.metric("variance", summary.variance);
    Ok(())
}

/// Snapshot rows `t,index,z0..,rho,S`; the header is written once.
fn append_snapshot(buf: &mut Vec<u8>, s: &HydroState) -> causal_variety::Result<()> {
    let first = buf.is_empty();
    let mut w = csv::Writer::from_writer(buf);
    if first {
        let mut header = vec!["t".to_string(), "index".to_string()];
        header.extend((0..s.grid.d()).map(|a| format!("z{a}")));
        header.extend(["rho".to_string(), "S".to_string()]);
        w.write_record(&header)?;
    }
    for i in 0..s.grid.len() {
        let mut row = vec![format!("{:e}", s.t), i.to_string()];
        row.extend(s.grid.point(i).iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", s.rho[i]));
        row.push(format!("{:e}", s.s[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn record_comparison(run: &mut RunDir, report: &ComparisonReport) -> Result<(), CliError> {
    run.write_json("comparison.json", "comparison", report)?;
    run.metric("l2_density_error", report.l2_density_error);
    run.metric("l2_amplitude_error", report.l2_amplitude_error);
    run.metric("phase_discrepancy", report.phase_discrepancy);
    run.metric("mass_drift", report.mass_drift);
    run.metric("energy_drift", report.energy_drift);
    if let Some(dev) = report.deviation_from_quantum {
        run.metric("deviation_from_quantum", dev);
    }
    Ok(())
}

#[derive(Serialize)]
struct ScalingCsvRow {
    #[serde(rename = "N")]
    n: usize,
    prefactor: f64,
    deviation: f64,
}

fn compare(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let m = &config.madelung;
    let grid = m.grid.build()?;
    let d = grid.d();
    let init = initial_state(m, grid)?;
    let params = madelung_params(m, m.correction_prefactor);
    let report = compare_evolutions(&init, &params, m.dt, m.steps, m.mode).stage("compare")?;
    record_comparison(run, &report)?;

    if !m.scaling_n.is_empty() {
        let prefactors: Vec<f64> = m.scaling_n.iter().map(|&n| correction_prefactor_for(n, m.scaling_r, d)).collect();
        let scaling = correction_scaling(&init, &params, m.dt, m.steps, &prefactors).stage("scaling")?;
        let rows: Vec<ScalingCsvRow> = m
            .scaling_n
            .iter()
            .zip(&scaling.rows)
            .map(|(&n, r)| ScalingCsvRow { n, prefactor: r.prefactor, deviation: r.deviation })
            .collect();
        run.write_csv("scaling.csv", csv_rows(&rows))?;
        run.metric("scaling_slope", scaling.fit.slope);
        run.metric("scaling_r_squared", scaling.fit.r_squared);
        run.metric("zero_prefactor_deviation", scaling.zero_prefactor_deviation);
    }
    Ok(())
}

/// The Madelung mode implied by the couplings: no potential coupling means
/// no quantum potential.
pub fn pipeline_mode(g_prime: f64, correction: bool) -> Mode {
    if g_prime == 0.0 {
        Mode::Classical
    } else if correction {
        Mode::Corrected
    } else {
        Mode::Quantum
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    metric: &'a str,
    value: f64,
}

fn pipeline(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let gen = &config.generate;
    if gen.d != 1 {
        return Err(CliError::Config(format!(
            "the pipeline coarse-grains one-dimensional histories, d = {} is unsupported",
            gen.d
        )));
    }
    if config.madelung.grid.d != 1 {
        return Err(CliError::Config("the pipeline evolves on a one-dimensional grid".into()));
    }
    if gen.events_per_layer < 100 {
        return Err(CliError::Config(format!(
            "the pipeline estimates a density from one layer and needs at least 100 events per layer, got {}",
            gen.events_per_layer
        )));
    }
    let slice = config.pipeline.slice_layer.unwrap_or(gen.layers.saturating_sub(1));
    if slice >= gen.layers {
        return Err(CliError::Config(format!("slice layer {slice} outside the {} layers", gen.layers)));
    }

    let ecs = generate_layered(&gen.layered(config.seed)).stage("generate")?;
    run.write_json("causal_set.json", "causal_set", &ecs_json(&ecs)?)?;
    run.metric("events", ecs.len() as f64);
    run.metric("max_interior_residual", ecs.max_interior_residual());

    energy_stage(config, &ecs, run)?;
    let z = embed_stage(config, &ecs, run)?;

    // a layer is a constant-time slice; its positions sample the density
    let raw: Vec<f64> =
        ecs.events().filter(|&e| ecs.layer(e) == Some(slice)).map(|e| z.position(e)[0]).collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        return Err(CliError::Stage {
            stage: "coarse_grain",
            source: causal_variety::Error::Numeric("slice positions have no spread".into()),
        });
    }
    let samples: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
    let grid = config.madelung.grid.build()?;
    let est = estimate_density(&samples, &grid, Default::default()).stage("coarse_grain")?;
    let (report, mut summary) = variety_of(&est.state, &samples, config.pipeline.l, None)
        .map_err(|e| match e {
            CliError::Stage { source, .. } => CliError::Stage { stage: "coarse_grain", source },
            other => other,
        })?;
    summary.bandwidth = est.bandwidth.first().copied();
    summary.clipped_mass = est.clipped_mass;
    write_density(run, "density.csv", &est.state)?;
    record_variety(run, &report, &summary)?;
    run.metric("slice_std", std);

    let mode = pipeline_mode(config.energy.g_prime, config.pipeline.correction);
    log::info!("evolving in {mode:?} mode");
    let prefactor = if mode == Mode::Corrected {
        correction_prefactor_for(ecs.len(), config.pipeline.r, 1)
    } else {
        0.0
    };
    let m = &config.madelung;
    let init = HydroState::new(grid.clone(), est.state.rho.clone(), vec![0.0; grid.len()]).stage("compare")?;
    let sub = config.pipeline.substeps;
    if sub == 0 {
        return Err(CliError::Config("pipeline substeps must be at least 1".into()));
    }
    let report = compare_evolutions(&init, &madelung_params(m, prefactor), m.dt / sub as f64, m.steps * sub, mode)
        .stage("compare")?;
    record_comparison(run, &report)?;

    let metrics: Vec<(String, f64)> = run.metrics().iter().map(|(k, v)| (k.clone(), *v)).collect();
    let rows: Vec<SummaryRow> = metrics.iter().map(|(k, v)| SummaryRow { metric: k, value: *v }).collect();
    run.write_csv("summary.csv", csv_rows(&rows))?;
    Ok(())
}

fn sweep(config: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let s = &config.sweep;
    if s.values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<RunConfig> =
        s.values.iter().map(|v| config.with_value(&s.parameter, v.clone())).collect::<Result<_, _>>()?;
    let command = Command::from(s.command);
    let results: Vec<Result<RunManifest, CliError>> = configs
        .par_iter()
        .enumerate()
        .map(|(k, c)| execute(command, c, run.dir.join(format!("run_{k:03}"))))
        .collect();

    let mut names: Vec<String> =
        results.iter().flatten().flat_map(|m| m.metrics.keys().cloned()).collect();
    names.sort();
    names.dedup();
    let mut table = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut table);
        let mut header = vec!["run".to_string(), "value".to_string(), "status".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header).map_err(|e| CliError::Stage { stage: "output", source: e.into() })?;
        for (k, (value, result)) in s.values.iter().zip(&results).enumerate() {
            let mut row = vec![format!("run_{k:03}"), value.to_string()];
            match result {
                Ok(m) => {
                    row.push("ok".into());
                    row.extend(names.iter().map(|n| m.metrics.get(n).map_or(String::new(), |v| format!("{v:e}"))));
                }
                Err(e) => {
                    row.push(format!("failed: {e}"));
                    row.extend(names.iter().map(|_| String::new()));
                }
            }
            w.write_record(&row).map_err(|e| CliError::Stage { stage: "output", source: e.into() })?;
        }
        w.flush().map_err(|e| CliError::io(&run.dir, e))?;
    }
    run.write_csv("sweep.csv", move |buf| {
        buf.write_all(&table)?;
        Ok(())
    })?;
    for (k, result) in results.iter().enumerate() {
        if let Ok(m) = result {
            run.adopt_outputs(&format!("run_{k:03}"), m);
        }
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    run.metric("runs", results.len() as f64);
    run.metric("failed", failed as f64);
    match results.into_iter().find_map(Result::err) {
        Some(first) => Err(first),
        None => Ok(()),
    }
}
