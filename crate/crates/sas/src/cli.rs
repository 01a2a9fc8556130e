//! Subcommands. Each one reads its inputs from files and writes its outputs
//! to files, so any step can be rerun in isolation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sas_core::dataset::{mdp_digest, OfflineDataset};
use sas_core::env::TabularMdp;
use sas_core::model::FittedModel;
use sas_core::sas::SasReport;

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::io::{self, ModelBundle};
use crate::{export, pipeline, svg};

#[derive(Debug, Parser)]
#[command(name = "sas", version, about = "Lyapunov-guided prompt selection on gridworlds")]
pub struct Cli {
    /// Worker threads for the parallel steps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the behavior mix and write a JSONL dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `dataset.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the world model, occupancy, energy and G tables.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a prompt from the layout start and deploy it.
    Align {
        #[arg(long)]
        model: PathBuf,
        /// Run settings; defaults to the configuration stored in the model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `sas.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare backbone, random prompt, max-max and SAS over the eval seeds.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for `ablation.csv` and `metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Occupancy, energy and G tables per cell, with optional SVG heatmaps.
    Landscape {
        #[arg(long)]
        model: PathBuf,
        /// An `align` output whose deployment is drawn on the heatmaps.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical escape frequency against the analytic bound over an (N, M) grid.
    BoundCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated sample counts used for both N and M, e.g. "1,3,5".
        #[arg(long)]
        grid: Option<String>,
    },
    /// Posterior concentration on the true skill as the prompt grows.
    InferSkill {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A JSON output together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Embedded<T> {
    pub config: RunConfig,
    pub result: T,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> AppResult<()> {
    if cli.threads == Some(0) {
        return Err(AppError::Config("--threads must be at least 1".into()));
    }
    pipeline::with_threads(cli.threads, || dispatch(&cli.command))?
}

fn dispatch(cmd: &Command) -> AppResult<()> {
    match cmd {
        Command::GenData { config, out, seed } => gen_data(config, out.as_deref(), *seed),
        Command::Fit { config, data, out } => fit(config, data, out.as_deref()),
        Command::Align { model, config, out, seed } => align(model, config.as_deref(), out.as_deref(), *seed),
        Command::Evaluate { model, data, config, out } => evaluate(model, data, config.as_deref(), out.as_deref()),
        Command::Landscape { model, report, config, out } => {
            landscape(model, report.as_deref(), config.as_deref(), out.as_deref())
        }
        Command::BoundCheck { model, data, config, out, grid } => {
            bound_check(model, data, config.as_deref(), out.as_deref(), grid.as_deref())
        }
        Command::InferSkill { model, config, out } => infer_skill(model, config.as_deref(), out.as_deref()),
    }
}

fn announce(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".config.toml");
    path.with_file_name(name)
}

/// Writes a CSV and its configuration sidecar.
fn write_csv<R: Serialize>(path: &Path, rows: &[R], cfg: &RunConfig) -> AppResult<String> {
    let text = io::csv_string(rows)?;
    io::write_text(path, &text)?;
    io::write_text(&sidecar(path), &cfg.to_toml())?;
    announce(path);
    Ok(text)
}

fn write_embedded<T: Serialize>(path: &Path, cfg: &RunConfig, result: T) -> AppResult<()> {
    io::write_json(path, &Embedded { config: cfg.clone(), result })?;
    announce(path);
    Ok(())
}

fn or_default(out: Option<&Path>, cfg: &RunConfig, name: &str) -> PathBuf {
    out.map_or_else(|| cfg.resolved_output_dir().join(name), Path::to_path_buf)
}

struct Loaded {
    cfg: RunConfig,
    mdp: TabularMdp,
    bundle: ModelBundle,
    model: FittedModel,
}

/// Loads a bundle and the run settings, which must describe the same MDP.
fn load_model(path: &Path, config: Option<&Path>) -> AppResult<Loaded> {
    let bundle = ModelBundle::load(path)?;
    let cfg = match config {
        Some(c) => RunConfig::load(c)?,
        None => {
            bundle.config.validate()?;
            bundle.config.clone()
        }
    };
    let mdp = cfg.mdp()?;
    if mdp_digest(&mdp) != bundle.mdp_digest {
        return Err(AppError::Config(format!("{} was fitted on a different MDP than the configuration describes", path.display())));
    }
    let model = bundle.model()?;
    Ok(Loaded { cfg, mdp, bundle, model })
}

fn load_data(path: &Path, loaded: &Loaded) -> AppResult<OfflineDataset> {
    let (ds, digest) = io::load_dataset(path)?;
    if digest != loaded.bundle.dataset_digest {
        eprintln!("warning: {} is not the dataset the model was fitted on", path.display());
    }
    if ds.meta.mdp_digest != loaded.bundle.mdp_digest {
        return Err(AppError::Runtime(format!("{} was generated on a different MDP than the model", path.display())));
    }
    Ok(ds)
}

fn gen_data(config: &Path, out: Option<&Path>, seed: Option<u64>) -> AppResult<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.dataset.seed = s;
    }
    let mdp = cfg.mdp()?;
    let ds = pipeline::generate_dataset(&cfg, &mdp, None)?;
    let path = or_default(out, &cfg, "dataset.jsonl");
    io::write_text(&path, &io::dataset_to_string(&ds))?;
    io::write_text(&sidecar(&path), &cfg.to_toml())?;
    announce(&path);
    Ok(())
}

fn fit(config: &Path, data: &Path, out: Option<&Path>) -> AppResult<()> {
    let cfg = RunConfig::load(config)?;
    let mdp = cfg.mdp()?;
    let (ds, digest) = io::load_dataset(data)?;
    let digest_mdp = mdp_digest(&mdp);
    if ds.meta.mdp_digest != digest_mdp {
        return Err(AppError::Runtime(format!("{} was generated on a different MDP than the configuration describes", data.display())));
    }
    let path = or_default(out, &cfg, "model.json");
    if let Ok(previous) = ModelBundle::load(&path) {
        if previous.dataset_digest != digest {
            eprintln!(
                "warning: replacing {} (fitted on dataset {}) with a fit on dataset {}",
                path.display(),
                previous.dataset_digest,
                digest
            );
        }
    }
    let model = pipeline::fit(&cfg, &mdp, &ds)?;
    io::write_json(&path, &ModelBundle::new(&cfg, &digest, &digest_mdp, &model))?;
    announce(&path);
    Ok(())
}

fn align(model: &Path, config: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> AppResult<()> {
    let mut l = load_model(model, config)?;
    if let Some(s) = seed {
        l.cfg.sas.seed = s;
    }
    let report = pipeline::align(&l.cfg, &l.mdp, &l.model, None)?;
    write_embedded(&or_default(out, &l.cfg, "sas_report.json"), &l.cfg, report)
}

fn evaluate(model: &Path, data: &Path, config: Option<&Path>, out: Option<&Path>) -> AppResult<()> {
    let l = load_model(model, config)?;
    let ds = load_data(data, &l)?;
    let eval = pipeline::evaluate(&l.cfg, &l.mdp, &ds, &l.model)?;
    let dir = out.map_or_else(|| l.cfg.resolved_output_dir(), Path::to_path_buf);
    write_csv(&dir.join("ablation.csv"), &eval.rows, &l.cfg)?;
    write_embedded(&dir.join("metrics.json"), &l.cfg, eval)
}

fn landscape(model: &Path, report: Option<&Path>, config: Option<&Path>, out: Option<&Path>) -> AppResult<()> {
    let l = load_model(model, config)?;
    let (cfg, mdp, m) = (&l.cfg, &l.mdp, &l.model);
    let dir = out.map_or_else(|| cfg.resolved_output_dir().join("landscape"), Path::to_path_buf);
    let report: SasReport = match report {
        Some(p) => io::read_json::<Embedded<SasReport>>(p)?.result,
        None => pipeline::align(cfg, mdp, m, None)?,
    };
    let (level, _) = pipeline::invariant_level(cfg, mdp, m)?;
    let g = pipeline::g_table(cfg.sas.g_variant, m);
    let regions = export::regions(g, cfg.landscape.low_pct, cfg.landscape.high_pct)?;

    write_csv(&dir.join("occupancy.csv"), &export::occupancy_rows(mdp, m), cfg)?;
    write_csv(&dir.join("g_landscape.csv"), &export::g_rows(mdp, &[&m.g_ldm, &m.g_literal], level), cfg)?;
    let states = write_csv(&dir.join("state_landscape.csv"), &export::state_rows(mdp, m, &regions)?, cfg)?;
    let traj = match &report.deployment {
        Some(d) => Some(write_csv(&dir.join("trajectory.csv"), &export::trajectory_rows(mdp, &d.trajectory), cfg)?),
        None => None,
    };
    if cfg.landscape.svg {
        for (name, field) in [("occupancy.svg", svg::Field::Occupancy), ("g_landscape.svg", svg::Field::G)] {
            let path = dir.join(name);
            io::write_text(&path, &svg::heatmap(&states, traj.as_deref(), field)?)?;
            announce(&path);
        }
    }
    Ok(())
}

fn parse_grid(text: &str) -> AppResult<Vec<usize>> {
    let grid = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|v| *v > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| AppError::Config(format!("--grid expects positive integers separated by commas, got {text:?}")))?;
    if grid.is_empty() {
        return Err(AppError::Config("--grid is empty".into()));
    }
    Ok(grid)
}

fn bound_check(model: &Path, data: &Path, config: Option<&Path>, out: Option<&Path>, grid: Option<&str>) -> AppResult<()> {
    let mut l = load_model(model, config)?;
    if let Some(g) = grid {
        l.cfg.bound.grid = parse_grid(g)?;
    }
    let ds = load_data(data, &l)?;
    let check = pipeline::bound_check(&l.cfg, &l.mdp, &ds, &l.model, &l.cfg.bound.grid)?;
    let path = or_default(out, &l.cfg, "bound.csv");
    write_csv(&path, &check.rows, &l.cfg)?;
    write_embedded(&path.with_extension("json"), &l.cfg, check)
}

fn infer_skill(model: &Path, config: Option<&Path>, out: Option<&Path>) -> AppResult<()> {
    let l = load_model(model, config)?;
    let points = pipeline::concentration(&l.cfg, &l.mdp, &l.model)?;
    write_csv(&or_default(out, &l.cfg, "concentration.csv"), &export::concentration_rows(&points), &l.cfg)?;
    Ok(())
}
