use std::io::Write;
use std::path::{Path, PathBuf};

use arrival_core::config::Config;
use arrival_core::grid::{build_tables, load_inputs, write_inputs, write_tables_csv, InputFiles, PixelGrid};
use arrival_core::mcmc::{
    chain_diagnostics, read_trace_csv, run_chain, trace_diagnostics, write_diagnostics_csv, write_tidy_trace_csv,
    write_trace_csv, DiagnosticRow, PosteriorDraws,
};
use arrival_core::model::{Field, Model};
use arrival_core::posterior::{
    excursion_function, landcover_correlation, predict_arrival, write_arrival_csv, write_correlations_csv,
    write_excursions_csv, EffortMode, ExcursionSet, ExcursionSign,
};
use arrival_core::sim::{run_recovery_study, simulate as simulate_data, write_boxplot_csv, write_recovery_csv, RecoveryOptions};
use arrival_core::{Error, Result};
use log::info;

use crate::manifest::{sha256_file, unix_now, RunManifest};

pub const CONFIG_OUT: &str = "config.toml";
pub const DRAWS: &str = "draws.bin";
pub const TRACE: &str = "trace.csv";

/// Settings shared by every subcommand.
pub struct Context {
    pub cfg: Config,
    config_file: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    started: u64,
}

impl Context {
    pub fn new(cfg: Config, config_file: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).map_err(|source| Error::Io { file: out.clone(), source })?;
        Ok(Context { cfg, config_file, seed, out, started: unix_now() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, command: &str) -> Result<RunManifest> {
        let mut m = RunManifest::new(command, std::env::args().skip(1).collect(), self.started);
        m.seed = self.seed;
        if let Some(p) = &self.config_file {
            m.config_file = Some(p.display().to_string());
            m.config_sha256 = Some(sha256_file(p)?);
        }
        Ok(m)
    }

    /// Writes the effective config, which every run records.
    fn write_config(&self, cfg: &Config) -> Result<String> {
        let p = self.path(CONFIG_OUT);
        std::fs::write(&p, cfg.to_toml()).map_err(|source| Error::Io { file: p, source })?;
        Ok(CONFIG_OUT.into())
    }

    fn finish(&self, m: RunManifest, mut outputs: Vec<String>) -> Result<()> {
        outputs.sort();
        outputs.dedup();
        let p = m.finish(&self.out, &outputs)?;
        info!("wrote {} outputs and {}", outputs.len(), p.display());
        Ok(())
    }
}

fn write_toml<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| Error::Io { file: path.to_path_buf(), source })
}

fn input_names(files: &InputFiles) -> Vec<String> {
    files.all().iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect()
}

pub fn ingest(ctx: &Context, input: &Path) -> Result<()> {
    let files = InputFiles::in_dir(input);
    let (grid, routes, inputs) = load_inputs(&files, ctx.cfg.grid.cell_km)?;
    let (tables, report) = build_tables(&grid, &routes, &inputs)?;
    let mut m = ctx.manifest("ingest")?;
    m.input_dir = Some(input.display().to_string());
    for p in files.all() {
        m.add_input(p)?;
    }
    let written = write_inputs(&ctx.out, &inputs)?;
    write_tables_csv(&ctx.path("tables.csv"), &grid, &tables)?;
    write_toml(&ctx.path("ingest_report.toml"), &report)?;
    info!("{} pixels, {} years, {} routes", grid.n_pixels(), grid.n_years(), routes.len());
    let mut outputs = input_names(&written);
    outputs.extend(["tables.csv".into(), "ingest_report.toml".into(), ctx.write_config(&ctx.cfg)?]);
    ctx.finish(m, outputs)
}

#[derive(serde::Serialize)]
struct SimulationReport {
    seed: u64,
    pixels: usize,
    years: usize,
    arrivals_accepted: u64,
    arrivals_rejected: u64,
    ingest: arrival_core::grid::IngestReport,
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let seed = ctx.cfg.chain.seed;
    let sim = simulate_data(&ctx.cfg, seed)?;
    let m = ctx.manifest("simulate")?;
    let written = write_inputs(&ctx.out, &sim.inputs)?;
    write_tables_csv(&ctx.path("tables.csv"), &sim.grid, &sim.tables)?;
    let mut truth = PosteriorDraws::new(sim.grid.n_pixels(), sim.grid.n_years());
    truth.draws.push(sim.truth);
    truth.write(&ctx.path("truth.bin"))?;
    let report = SimulationReport {
        seed,
        pixels: sim.grid.n_pixels(),
        years: sim.grid.n_years(),
        arrivals_accepted: sim.truncation.accepted,
        arrivals_rejected: sim.truncation.rejected,
        ingest: sim.report,
    };
    write_toml(&ctx.path("simulation_report.toml"), &report)?;
    let mut outputs = input_names(&written);
    outputs.extend([
        "tables.csv".into(),
        "truth.bin".into(),
        "simulation_report.toml".into(),
        ctx.write_config(&ctx.cfg)?,
    ]);
    ctx.finish(m, outputs)
}

pub fn recovery(ctx: &Context, replicates: usize, eval_cells: usize) -> Result<()> {
    if replicates == 0 {
        return Err(Error::Validation("--replicates must be at least 1".into()));
    }
    let opts = RecoveryOptions { replicates, seed: ctx.cfg.chain.seed, eval_cells };
    let report = run_recovery_study(&ctx.cfg, &opts)?;
    let m = ctx.manifest("simulate --recovery")?;
    write_recovery_csv(&ctx.path("recovery.csv"), &report)?;
    write_boxplot_csv(&ctx.path("boxplot_data.csv"), &report)?;
    for r in &report.replicates {
        let cov = r.coverage().map_or("n/a".to_string(), |c| format!("{c:.3}"));
        println!("replicate {}: {:?}, coverage {cov}", r.replicate, r.status);
    }
    println!("{} of {} replicates failed", report.n_failed(), report.replicates.len());
    let outputs = vec!["recovery.csv".into(), "boxplot_data.csv".into(), ctx.write_config(&ctx.cfg)?];
    ctx.finish(m, outputs)
}

fn load_model(cfg: &Config, input: &Path) -> Result<(InputFiles, PixelGrid, Model)> {
    let files = InputFiles::in_dir(input);
    let (grid, routes, inputs) = load_inputs(&files, cfg.grid.cell_km)?;
    let (tables, report) = build_tables(&grid, &routes, &inputs)?;
    info!(
        "{} pixels, {} years; {} checklists and {} occurrences accepted",
        grid.n_pixels(),
        grid.n_years(),
        report.checklists_accepted,
        report.occurrences_accepted
    );
    let model = Model::new(&grid, tables, &cfg.model)?;
    Ok((files, grid, model))
}

pub fn fit(ctx: &Context, input: &Path) -> Result<()> {
    let (files, _, model) = load_model(&ctx.cfg, input)?;
    let mut m = ctx.manifest("fit")?;
    m.seed = Some(ctx.cfg.chain.seed);
    m.input_dir = Some(input.display().to_string());
    for p in files.all() {
        m.add_input(p)?;
    }
    let out = run_chain(&model, &ctx.cfg.chain, None)?;
    out.draws.write(&ctx.path(DRAWS))?;
    write_trace_csv(&ctx.path(TRACE), &out)?;
    write_diagnostics_csv(&ctx.path("diagnostics.csv"), &chain_diagnostics(&out))?;
    for b in &out.blocks {
        if let Some(a) = b.acceptance {
            info!("{:>16}: acceptance {a:.3}, step {:.4}", b.name, b.final_step);
        }
    }
    info!("{} draws in {:.1} s", out.draws.len(), out.runtime_secs);
    let outputs = vec![DRAWS.into(), TRACE.into(), "diagnostics.csv".into(), ctx.write_config(&ctx.cfg)?];
    ctx.finish(m, outputs)
}

/// A finished fit: its config, model and draws.
struct FitRun {
    cfg: Config,
    input: PathBuf,
    grid: PixelGrid,
    model: Model,
    draws: PosteriorDraws,
}

fn load_fit(fit_dir: &Path, input: Option<&Path>) -> Result<FitRun> {
    let manifest = RunManifest::read(fit_dir)?;
    let changed = manifest.changed_outputs(fit_dir);
    if !changed.is_empty() {
        return Err(Error::Validation(format!(
            "{} changed since the fit was recorded: {}",
            fit_dir.display(),
            changed.join(", ")
        )));
    }
    let cfg = Config::load(&fit_dir.join(CONFIG_OUT))?;
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => manifest
            .input_dir
            .clone()
            .map(PathBuf::from)
            .ok_or_else(|| Error::Validation(format!("{} records no input directory; pass --input", fit_dir.display())))?,
    };
    let (files, grid, model) = load_model(&cfg, &input)?;
    let recorded: Vec<String> = manifest.changed_inputs();
    for p in files.all() {
        if recorded.contains(&p.display().to_string()) {
            log::warn!("{} differs from the file the fit read", p.display());
        }
    }
    let draws = PosteriorDraws::read(&fit_dir.join(DRAWS))?;
    if draws.n_pixels != model.n_pixels() || draws.n_years != model.n_years() {
        return Err(Error::Validation(format!(
            "draws are for {} pixels and {} years but the inputs have {} and {}",
            draws.n_pixels,
            draws.n_years,
            model.n_pixels(),
            model.n_years()
        )));
    }
    if draws.is_empty() {
        return Err(Error::Validation(format!("{} holds no draws", fit_dir.join(DRAWS).display())));
    }
    Ok(FitRun { cfg, input, grid, model, draws })
}

fn fit_manifest(ctx: &Context, command: &str, fit_dir: &Path, run: &FitRun) -> Result<RunManifest> {
    let mut m = ctx.manifest(command)?;
    m.seed = Some(run.cfg.chain.seed);
    m.input_dir = Some(run.input.display().to_string());
    m.add_input(&fit_dir.join(DRAWS))?;
    m.add_input(&fit_dir.join(CONFIG_OUT))?;
    Ok(m)
}

/// Prediction settings come from `--config` when given, else from the fit.
fn predict_config<'a>(ctx: &'a Context, run: &'a FitRun) -> &'a arrival_core::config::PredictConfig {
    if ctx.config_file.is_some() {
        &ctx.cfg.predict
    } else {
        &run.cfg.predict
    }
}

pub fn predict(ctx: &Context, fit_dir: &Path, input: Option<&Path>, year: i32, mode: &str, nao: Option<f64>) -> Result<()> {
    let mode: EffortMode = mode.parse()?;
    let run = load_fit(fit_dir, input)?;
    let m = fit_manifest(ctx, "predict", fit_dir, &run)?;
    let threshold = predict_config(ctx, &run).mask_threshold;
    let rows = predict_arrival(&run.model, run.grid.years(), &run.draws, year, nao, mode, threshold)?;
    write_arrival_csv(&ctx.path("arrival_pred.csv"), &rows)?;
    let masked = rows.iter().filter(|r| r.masked).count();
    info!("{} pixels predicted for {year} ({mode}), {masked} masked", rows.len());
    ctx.finish(m, vec!["arrival_pred.csv".into()])
}

pub fn excursions(
    ctx: &Context,
    fit_dir: &Path,
    input: Option<&Path>,
    fields: &[String],
    us: &[f64],
    signs: &[String],
) -> Result<()> {
    let run = load_fit(fit_dir, input)?;
    let fields: Vec<Field> = if fields.is_empty() {
        Field::ALL.into_iter().filter(|f| f.is_spatial()).collect()
    } else {
        fields.iter().map(|n| Field::from_name(n)).collect::<Result<_>>()?
    };
    if let Some(f) = fields.iter().find(|f| !f.is_spatial()) {
        return Err(Error::Validation(format!("{} is not a spatial field", f.name())));
    }
    let us = if us.is_empty() { predict_config(ctx, &run).excursion_thresholds.clone() } else { us.to_vec() };
    let signs: Vec<ExcursionSign> = if signs.is_empty() {
        vec![ExcursionSign::Positive, ExcursionSign::Negative]
    } else {
        signs.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let m = fit_manifest(ctx, "excursions", fit_dir, &run)?;
    let mut sets = Vec::new();
    for &f in &fields {
        let samples: Vec<Vec<f64>> = run.draws.draws.iter().map(|d| d.field(f).to_vec()).collect();
        for &u in &us {
            for &sign in &signs {
                let excursion = excursion_function(&samples, u, sign)?;
                sets.push(ExcursionSet { field: f.name().into(), u, sign, excursion });
            }
        }
    }
    write_excursions_csv(&ctx.path("excursions.csv"), &sets)?;
    ctx.finish(m, vec!["excursions.csv".into()])
}

pub fn correlate(ctx: &Context, fit_dir: &Path, input: Option<&Path>) -> Result<()> {
    let run = load_fit(fit_dir, input)?;
    let lc = run
        .model
        .tables()
        .landcover
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("no {} in {}", InputFiles::LANDCOVER, run.input.display())))?;
    let m = fit_manifest(ctx, "correlate", fit_dir, &run)?;
    let n = run.draws.len() as f64;
    let mut rows = Vec::new();
    for f in Field::ALL.into_iter().filter(|f| f.is_spatial()) {
        let mut mean = vec![0.0; run.model.n_pixels()];
        for d in &run.draws.draws {
            for (m, x) in mean.iter_mut().zip(d.field(f)) {
                *m += x / n;
            }
        }
        rows.extend(landcover_correlation(f.name(), &mean, lc)?);
    }
    write_correlations_csv(&ctx.path("landcover_corr.csv"), &rows)?;
    ctx.finish(m, vec!["landcover_corr.csv".into()])
}

pub fn diagnose(ctx: &Context, run_dir: &Path) -> Result<()> {
    let trace_path = run_dir.join(TRACE);
    if !trace_path.is_file() {
        return Err(Error::Validation(format!("missing trace: {}", trace_path.display())));
    }
    let trace = read_trace_csv(&trace_path)?;
    let Some(&first) = trace.iterations.first() else {
        return Err(Error::Validation(format!("{} has no post-burn-in rows", trace_path.display())));
    };
    let mut m = ctx.manifest("diagnose")?;
    m.add_input(&trace_path)?;
    let mut rows = trace_diagnostics(&trace);
    rows.push(DiagnosticRow { metric: "run".into(), name: "burn_in".into(), value: first as f64, note: String::new() });
    rows.push(DiagnosticRow {
        metric: "run".into(),
        name: "post_burn_in_rows".into(),
        value: trace.iterations.len() as f64,
        note: String::new(),
    });
    let mut stdout = std::io::stdout().lock();
    for r in &rows {
        // a closed pipe only truncates the echo; the CSV is the record
        let _ = writeln!(stdout, "{:<11} {:<18} {:>12.4} {}", r.metric, r.name, r.value, r.note);
    }
    write_diagnostics_csv(&ctx.path("diagnose.csv"), &rows)?;
    write_tidy_trace_csv(&ctx.path("trace_tidy.csv"), &trace)?;
    ctx.finish(m, vec!["diagnose.csv".into(), "trace_tidy.csv".into()])
}
