//! Command-line driver: `generate`, `train`, `sindy` and `eval`.
//!
//! Every command prints exactly one JSON summary line on stdout; logs go to
//! stderr. Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure (divergence of a solver, rollout or optimiser).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{self, DynamicsModel, EvalReport, Summary};
use crate::io;
use crate::net::{Activation, MlpModel};
use crate::sindy::{self, SindyModel};
use crate::spectral::{self, BurgersConfig};
use crate::systems::{self, MeanFieldParams, System, TargetKind, Trajectory};
use crate::train::{self, Dataset, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Experiment description shared by all commands. Command-line flags take
/// precedence over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SystemSpec {
    Vdp {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    Yg,
    MeanField(MeanFieldParams),
    Burgers(BurgersConfig),
    /// Externally produced coefficient series in the trajectory format.
    External { path: PathBuf },
}

fn default_mu() -> f64 {
    2.0
}

impl SystemSpec {
    fn closed_form(&self) -> Option<System> {
        match self {
            SystemSpec::Vdp { mu } => Some(System::Vdp { mu: *mu }),
            SystemSpec::Yg => Some(System::Yg),
            SystemSpec::MeanField(p) => Some(System::MeanField(*p)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    pub uniform: Option<UniformSpec>,
    pub trajs: Option<usize>,
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    pub targets: Option<TargetKind>,
    #[serde(default)]
    pub dump_fields: bool,
}

/// Uniform phase-space sampling in place of trajectories.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformSpec {
    pub n: usize,
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(TrainConfig),
    Sindy(SindySpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SindySpec {
    pub order: usize,
    pub threshold: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_max_iter() -> usize {
    10
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub mode: Option<Mode>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub bounds: Option<Vec<[f64; 2]>>,
    pub resolution: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Apriori,
    Aposteriori,
    Grid,
    Spectrum,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Apriori => "apriori",
            Mode::Aposteriori => "aposteriori",
            Mode::Grid => "grid",
            Mode::Spectrum => "spectrum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Targets {
    Fd,
    Analytic,
}

#[derive(Parser, Debug)]
#[command(name = "phaseflow", version, about = "Learn, fit and evaluate phase-space dynamics models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate trajectories or uniformly sampled pairs.
    Generate(GenerateArgs),
    /// Train a feedforward model.
    Train(TrainArgs),
    /// Fit a sparse polynomial model.
    Sindy(SindyArgs),
    /// Evaluate a model and export a report bundle.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Experiment JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// vdp, yg, mean_field or burgers.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Initial state, comma separated. Repeat for several trajectories.
    #[arg(long, allow_hyphen_values = true)]
    x0: Vec<String>,
    /// Draw this many uniform samples instead of integrating.
    #[arg(long)]
    uniform: Option<usize>,
    /// Sampling box as `lo:hi` per component, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    #[arg(long)]
    trajs: Option<usize>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    n_grid: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    kc: Option<usize>,
    #[arg(long)]
    dealias: bool,
    /// Also write full Burgers fields.
    #[arg(long)]
    dump_fields: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Trajectory or pairs CSV; repeatable.
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Layer widths, e.g. `2,8,8,2`.
    #[arg(long)]
    layers: Option<String>,
    /// tanh, elu, swish or penalized_tanh.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    val: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug)]
struct SindyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Regression targets for trajectory files.
    #[arg(long, value_enum)]
    targets: Option<Targets>,
    /// Closed-form system for analytic targets.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Model JSON (network or SINDy).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reference trajectory or pairs CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Closed-form ground truth.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Sample count for stepwise errors in more than two dimensions.
    #[arg(long)]
    samples: Option<usize>,
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            if code != EXIT_OK {
                println!("{}", json!({"status": "error", "code": code, "message": e.kind().to_string()}));
            }
            return code;
        }
    };
    let (name, result) = match cli.command {
        Command::Generate(a) => ("generate", crate::with_thread_limit(|| cmd_generate(a))),
        Command::Train(a) => ("train", crate::with_thread_limit(|| cmd_train(a))),
        Command::Sindy(a) => ("sindy", crate::with_thread_limit(|| cmd_sindy(a))),
        Command::Eval(a) => ("eval", crate::with_thread_limit(|| cmd_eval(a))),
    };
    match result {
        Ok(mut summary) => {
            summary["command"] = json!(name);
            summary["status"] = json!("ok");
            println!("{summary}");
            EXIT_OK
        }
        Err(Failure { error, mut summary }) => {
            let code = exit_code(&error);
            log::error!("{error}");
            summary["command"] = json!(name);
            summary["status"] = json!("error");
            summary["code"] = json!(code);
            summary["message"] = json!(error.to_string());
            println!("{summary}");
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// An error plus whatever summary fields were known when it happened.
struct Failure {
    error: Error,
    summary: Value,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self {
            error,
            summary: json!({}),
        }
    }
}

type CmdResult = std::result::Result<Value, Failure>;

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => io::read_json(p),
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("not a number in list {text:?}: {s:?}")))
        })
        .collect()
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("not a layer width in {text:?}: {s:?}")))
        })
        .collect()
}

/// `lo:hi,lo:hi`.
fn parse_bounds(text: &str) -> Result<Vec<[f64; 2]>> {
    text.split(',')
        .map(|pair| {
            let mut it = pair.split(':');
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => {
                    let lo = a.trim().parse::<f64>();
                    let hi = b.trim().parse::<f64>();
                    match (lo, hi) {
                        (Ok(lo), Ok(hi)) => Ok([lo, hi]),
                        _ => Err(Error::Config(format!("bad interval {pair:?}"))),
                    }
                }
                _ => Err(Error::Config(format!("interval {pair:?} must look like lo:hi"))),
            }
        })
        .collect()
}

fn system_from_flags(name: &str, mu: Option<f64>, existing: Option<&SystemSpec>) -> Result<SystemSpec> {
    Ok(match name {
        "vdp" => SystemSpec::Vdp {
            mu: mu.unwrap_or(match existing {
                Some(SystemSpec::Vdp { mu }) => *mu,
                _ => default_mu(),
            }),
        },
        "yg" => SystemSpec::Yg,
        "mean_field" => match existing {
            Some(SystemSpec::MeanField(p)) => SystemSpec::MeanField(*p),
            _ => SystemSpec::MeanField(MeanFieldParams::default()),
        },
        "burgers" => match existing {
            Some(SystemSpec::Burgers(c)) => SystemSpec::Burgers(c.clone()),
            _ => SystemSpec::Burgers(BurgersConfig::default()),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown system {other:?}; expected vdp, yg, mean_field or burgers"
            )))
        }
    })
}

fn resolve_system(flag: Option<&str>, mu: Option<f64>, cfg: &ExperimentConfig) -> Result<Option<SystemSpec>> {
    match flag {
        Some(name) => system_from_flags(name, mu, cfg.system.as_ref()).map(Some),
        None => Ok(match (&cfg.system, mu) {
            (Some(SystemSpec::Vdp { .. }), Some(mu)) => Some(SystemSpec::Vdp { mu }),
            (s, _) => s.clone(),
        }),
    }
}

fn output_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().and_then(|e| e.to_str()) == Some(ext)
}

/// `data.csv` or `data_000.csv …` produced by `generate` in `dir`.
fn generated_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("data") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no data*.csv files in {}", dir.display())));
    }
    Ok(files)
}

fn data_paths(flag: &[PathBuf], cfg: &ExperimentConfig, common: &Common) -> Result<Vec<PathBuf>> {
    if !flag.is_empty() {
        return Ok(flag.to_vec());
    }
    if !cfg.data.paths.is_empty() {
        return Ok(cfg.data.paths.clone());
    }
    if let Some(SystemSpec::External { path }) = &cfg.system {
        return Ok(vec![path.clone()]);
    }
    if common.config.is_some() {
        return generated_files(&output_dir(common, cfg));
    }
    Err(Error::Config("no input data; pass --data".into()))
}

fn check_exists(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::Config(format!("data file {} does not exist", p.display())));
        }
    }
    Ok(())
}

/// Loads each file as a trajectory or a pairs file and concatenates the pairs.
fn load_dataset(paths: &[PathBuf], targets: TargetKind, system: Option<System>) -> Result<Dataset> {
    check_exists(paths)?;
    let mut parts = Vec::new();
    let mut trajs = Vec::new();
    for p in paths {
        if io::is_trajectory_file(p)? {
            trajs.push(io::read_trajectory(p)?);
        } else {
            parts.push(io::read_pairs(p)?);
        }
    }
    if !trajs.is_empty() {
        match targets {
            TargetKind::FiniteDifference => parts.push(train::assemble_multi_trajectory(&trajs)?),
            TargetKind::Analytic => {
                let sys = system.ok_or_else(|| {
                    Error::Config("analytic targets need a closed-form --system".into())
                })?;
                for t in &trajs {
                    let y = systems::analytic_targets(t, |x| sys.target(x))?;
                    let features = t.states()[..y.targets.len()].to_vec();
                    parts.push(Dataset::new(features, y.targets, t.dim())?);
                }
            }
        }
    }
    Dataset::concat(&parts)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let system = resolve_system(a.system.as_deref(), a.mu, &cfg)?
        .ok_or_else(|| Error::Config("missing --system".into()))?;
    let out = output_dir(&a.common, &cfg);
    let seed = a.common.seed;

    if let SystemSpec::Burgers(base) = &system {
        let mut c = base.clone();
        c.snapshots = a.snapshots.unwrap_or(c.snapshots);
        c.n_modes = a.modes.unwrap_or(c.n_modes);
        c.t_end = a.t_end.unwrap_or(c.t_end);
        c.n_grid = a.n_grid.unwrap_or(c.n_grid);
        c.nu = a.nu.unwrap_or(c.nu);
        c.dt = a.dt.unwrap_or(c.dt);
        c.spectrum.k_c = a.kc.unwrap_or(c.spectrum.k_c);
        c.spectrum.seed = seed.unwrap_or(c.spectrum.seed);
        c.dealias |= a.dealias;
        let n_traj = a.trajs.or(cfg.data.trajs).unwrap_or(1);
        let dump = a.dump_fields || cfg.data.dump_fields;
        log::info!("running {n_traj} Burgers DNS on {} points", c.n_grid);
        let runs = spectral::generate_burgers_ensemble(&c, n_traj, dump)?;
        let mut files = Vec::new();
        for (i, run) in runs.iter().enumerate() {
            let path = out.join(format!("data_{i:03}.csv"));
            io::write_trajectory(&path, &run.reduced)?;
            if let Some(f) = &run.fields {
                io::write_matrix(&out.join(format!("fields_{i:03}.csv")), f, c.n_grid)?;
            }
            files.push(path.display().to_string());
        }
        let fractions: Vec<f64> = runs.iter().map(|r| r.mean_retained_fraction()).collect();
        return Ok(json!({
            "system": "burgers",
            "files": files,
            "snapshots": c.snapshots,
            "modes": c.n_modes,
            "mean_retained_energy": fractions.iter().sum::<f64>() / fractions.len() as f64,
        }));
    }

    if let SystemSpec::External { path } = &system {
        let traj = systems_load(path)?;
        let dest = if has_ext(&out, "csv") { out.clone() } else { out.join("data.csv") };
        io::write_trajectory(&dest, &traj)?;
        return Ok(json!({"system": "external", "files": [dest.display().to_string()], "rows": traj.len(), "dim": traj.dim()}));
    }

    let sys = system.closed_form().expect("closed-form system");
    let uniform = match (a.uniform, &cfg.data.uniform) {
        (Some(n), u) => {
            let bounds = match (&a.bounds, u) {
                (Some(b), _) => parse_bounds(b)?,
                (None, Some(u)) => u.bounds.clone(),
                (None, None) => return Err(Error::Config("--uniform needs --bounds".into()).into()),
            };
            Some((n, bounds, seed.or(u.as_ref().map(|u| u.seed)).unwrap_or(0)))
        }
        (None, Some(u)) => Some((
            u.n,
            a.bounds.as_deref().map(parse_bounds).transpose()?.unwrap_or_else(|| u.bounds.clone()),
            seed.unwrap_or(u.seed),
        )),
        (None, None) => None,
    };
    if let Some((n, bounds, seed)) = uniform {
        let b: Vec<(f64, f64)> = bounds.iter().map(|r| (r[0], r[1])).collect();
        if b.len() != sys.dim() {
            return Err(Error::Config(format!("{} intervals for a {}-dimensional system", b.len(), sys.dim())).into());
        }
        let data = train::sample_uniform_phase_space(&b, n, seed, |x| sys.target(x))?;
        let dest = if has_ext(&out, "csv") { out.clone() } else { out.join("data.csv") };
        io::write_pairs(&dest, &data)?;
        return Ok(json!({"system": sys.tag(), "files": [dest.display().to_string()], "pairs": n}));
    }

    let x0s: Vec<Vec<f64>> = if !a.x0.is_empty() {
        a.x0.iter().map(|s| parse_list(s)).collect::<Result<_>>()?
    } else {
        cfg.data.x0.clone()
    };
    if x0s.is_empty() {
        return Err(Error::Config("missing --x0 (initial state, e.g. --x0 1.0,1.0)".into()).into());
    }
    let dt = a.dt.or(cfg.data.dt).ok_or_else(|| Error::Config("missing --dt".into()))?;
    let steps = a.steps.or(cfg.data.steps).ok_or_else(|| Error::Config("missing --steps".into()))?;
    let mut files = Vec::new();
    for (i, x0) in x0s.iter().enumerate() {
        if x0.len() != sys.dim() {
            return Err(Error::Config(format!(
                "x0 has {} components but {} is {}-dimensional",
                x0.len(),
                sys.tag(),
                sys.dim()
            ))
            .into());
        }
        let dest = if x0s.len() == 1 {
            if has_ext(&out, "csv") {
                out.clone()
            } else {
                out.join("data.csv")
            }
        } else {
            out.join(format!("data_{i:03}.csv"))
        };
        match systems::generate_trajectory(|x| sys.target(x), x0, dt, steps, sys.tag()) {
            Ok(t) => io::write_trajectory(&dest, &t)?,
            Err(Error::Divergence { step, partial }) => {
                if let Some(p) = partial.as_deref().filter(|p| p.len() >= 2) {
                    io::write_trajectory(&dest, p)?;
                }
                return Err(Failure {
                    error: Error::Divergence { step, partial: None },
                    summary: json!({"diverged_at": step, "trajectory": i}),
                });
            }
            Err(e) => return Err(e.into()),
        }
        files.push(dest.display().to_string());
    }
    Ok(json!({"system": sys.tag(), "files": files, "rows": steps + 1}))
}

fn systems_load(path: &Path) -> Result<Trajectory> {
    crate::reduction::load_coefficient_series(path)
}

fn model_paths(out: &Path, default_name: &str) -> (PathBuf, PathBuf) {
    if has_ext(out, "json") {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        (out.to_path_buf(), out.with_file_name(format!("{stem}_curve.csv")))
    } else {
        (out.join(default_name), out.join("curve.csv"))
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let paths = data_paths(&a.data, &cfg, &a.common)?;
    let targets = cfg.data.targets.unwrap_or(TargetKind::FiniteDifference);
    let system = cfg.system.as_ref().and_then(SystemSpec::closed_form);
    let data = load_dataset(&paths, targets, system)?;

    let mut tc = match &cfg.model {
        Some(ModelSpec::Mlp(t)) => t.clone(),
        Some(ModelSpec::Sindy(_)) => {
            return Err(Error::Config("the config describes a SINDy model; use the sindy command".into()).into())
        }
        None => {
            let h = 8;
            TrainConfig::new(&[data.dim, h, h, data.dim], Activation::Swish)
        }
    };
    if let Some(l) = &a.layers {
        tc.layer_sizes = parse_sizes(l)?;
    }
    if let Some(act) = &a.activation {
        tc.activation = Activation::parse(act)?;
    }
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.lambda = a.lambda.unwrap_or(tc.lambda);
    tc.batch_size = a.batch.unwrap_or(tc.batch_size);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.val_fraction = a.val.unwrap_or(tc.val_fraction);
    tc.patience = a.patience.unwrap_or(tc.patience);
    tc.seed = a.common.seed.unwrap_or(tc.seed);
    tc.validate(data.dim)?;

    let out = output_dir(&a.common, &cfg);
    let (model_path, curve_path) = model_paths(&out, "model.json");
    log::info!("training {:?} on {} pairs", tc.layer_sizes, data.len());
    match train::train(&data, &tc) {
        Ok(outcome) => {
            outcome.model.save(&model_path)?;
            write_text(&curve_path, &outcome.curve.to_csv()?)?;
            let last = outcome.best_epoch.saturating_sub(1);
            Ok(json!({
                "model": model_path.display().to_string(),
                "curve": curve_path.display().to_string(),
                "pairs": data.len(),
                "epochs": outcome.curve.epochs(),
                "best_epoch": outcome.best_epoch,
                "train_loss": outcome.curve.train_loss.get(last),
                "val_loss": outcome.curve.val_loss.get(last).filter(|v| v.is_finite()),
                "val_r2": outcome.curve.val_r2.get(last).filter(|v| v.is_finite()),
                "warnings": outcome.warnings,
            }))
        }
        Err(Error::TrainingDiverged { epoch, reason, last_finite }) => {
            let mut summary = json!({"diverged_at_epoch": epoch});
            if let Some(m) = last_finite {
                m.save(&model_path)?;
                summary["partial_model"] = json!(model_path.display().to_string());
            }
            Err(Failure {
                error: Error::TrainingDiverged { epoch, reason, last_finite: None },
                summary,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_sindy(a: SindyArgs) -> CmdResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let spec = match &cfg.model {
        Some(ModelSpec::Sindy(s)) => Some(s.clone()),
        _ => None,
    };
    let order = a.order.or(spec.as_ref().map(|s| s.order)).unwrap_or(3);
    let threshold = a.threshold.or(spec.as_ref().map(|s| s.threshold)).unwrap_or(2e-4);
    let max_iter = a.max_iter.or(spec.as_ref().map(|s| s.max_iter)).unwrap_or(10);
    if order == 0 {
        return Err(Error::Config("--order must be at least 1".into()).into());
    }
    let system = resolve_system(a.system.as_deref(), a.mu, &cfg)?;
    let targets = match a.targets {
        Some(Targets::Fd) => TargetKind::FiniteDifference,
        Some(Targets::Analytic) => TargetKind::Analytic,
        None => cfg.data.targets.unwrap_or(TargetKind::FiniteDifference),
    };
    let paths = data_paths(&a.data, &cfg, &a.common)?;
    let data = load_dataset(&paths, targets, system.as_ref().and_then(SystemSpec::closed_form))?;
    let (model, trace) = sindy::fit(&data.features, &data.targets, data.dim, order, threshold, max_iter)
        .map_err(|e| match e {
            Error::Parameter(m) => Error::Config(m),
            other => other,
        })?;
    let mut warnings = trace.warnings;
    if threshold == 0.0 {
        warnings.push("threshold 0 keeps every library term; the model is dense".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let out = output_dir(&a.common, &cfg);
    let (model_path, _) = model_paths(&out, "sindy.json");
    model.save(&model_path)?;
    let equations = model.equations();
    write_text(&model_path.with_extension("txt"), &(equations.join("\n") + "\n"))?;
    for eq in &equations {
        eprintln!("{eq}");
    }
    Ok(json!({
        "model": model_path.display().to_string(),
        "pairs": data.len(),
        "terms": model.library.len(),
        "nonzero": model.xi.iter().filter(|v| **v != 0.0).count(),
        "equations": equations,
        "warnings": warnings,
    }))
}

/// A network or SINDy model loaded from JSON.
pub fn load_model(path: &Path) -> Result<Box<dyn DynamicsModel>> {
    if !path.is_file() {
        return Err(Error::Config(format!("model file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if value.get("layer_sizes").is_some() {
        Ok(Box::new(MlpModel::load(path)?))
    } else if value.get("terms").is_some() {
        Ok(Box::new(SindyModel::load(path)?))
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "neither a network nor a SINDy model".into(),
        })
    }
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let mode = a
        .mode
        .or(cfg.eval.mode)
        .ok_or_else(|| Error::Config("missing --mode (apriori, aposteriori, grid or spectrum)".into()))?;
    let out = match &a.common.out {
        Some(o) => o.clone(),
        None => output_dir(&a.common, &cfg).join("eval"),
    };
    let model_path = a
        .model
        .clone()
        .or(cfg.eval.model.clone())
        .or_else(|| {
            a.common.config.as_ref().map(|_| {
                let name = match cfg.model {
                    Some(ModelSpec::Sindy(_)) => "sindy.json",
                    _ => "model.json",
                };
                output_dir(&a.common, &cfg).join(name)
            })
        })
        .ok_or_else(|| Error::Config("missing --model".into()))?;
    let model = load_model(&model_path)?;
    let system = resolve_system(a.system.as_deref(), a.mu, &cfg)?;
    let truth = system.as_ref().and_then(SystemSpec::closed_form);
    if let Some(t) = &truth {
        if t.dim() != model.dim() {
            return Err(Error::Config(format!(
                "model is {}-dimensional but {} is {}-dimensional",
                model.dim(),
                t.tag(),
                t.dim()
            ))
            .into());
        }
    }
    let mut data_path = a.data.clone().or(cfg.eval.data.clone());
    if data_path.is_none() && matches!(mode, Mode::Apriori | Mode::Spectrum) && a.common.config.is_some() {
        data_path = data_paths(&[], &cfg, &a.common)?.into_iter().next();
    }
    let reference = data_path
        .as_ref()
        .map(|p| -> Result<Trajectory> {
            check_exists(std::slice::from_ref(p))?;
            io::read_trajectory(p)
        })
        .transpose()?;
    if let Some(r) = &reference {
        if r.dim() != model.dim() {
            return Err(Error::Config(format!(
                "model is {}-dimensional but the data has {} columns",
                model.dim(),
                r.dim()
            ))
            .into());
        }
    }
    let dt = a
        .dt
        .or(reference.as_ref().map(Trajectory::dt))
        .or(cfg.data.dt);

    let mut summary = Summary::new(mode.name());
    let mut report = EvalReport::default();
    let mut failure = None;
    match mode {
        Mode::Apriori => {
            let traj = reference.ok_or_else(|| Error::Config("apriori mode needs --data".into()))?;
            let t = systems::targets_from_trajectory(&traj)?;
            let x = &traj.states()[..t.targets.len()];
            let local = eval::local_errors(model.as_ref(), x, &t.targets)?;
            let preds: Vec<f64> = x
                .chunks_exact(model.dim())
                .map(|r| model.predict(r))
                .collect::<Result<Vec<_>>>()?
                .concat();
            let r2 = eval::r2_score(&t.targets, &preds, model.dim())?;
            let jd = eval::jacobian_diagnostics(model.as_ref(), x, traj.dt())?;
            summary.steps = local.len();
            summary.local_error_mean = Some(local.mean());
            summary.local_error_max = Some(local.max());
            summary.local_error_sv_correlation = Some(eval::pearson(&local.norm, &jd.max_singular_value))
                .filter(|v| v.is_finite());
            summary.max_singular_value_mean = Some(mean(&jd.max_singular_value));
            summary.warnings.extend(r2.warnings.clone());
            summary.r2 = Some(r2);
            summary.warnings.extend(jd.warnings.clone());
            report.local = Some(local);
            report.jacobian = Some(jd);
        }
        Mode::Aposteriori => {
            let (x0, steps, reference) = match reference {
                Some(r) => {
                    let x0 = a.x0.as_deref().map(parse_list).transpose()?.unwrap_or_else(|| r.state(0).to_vec());
                    let steps = a.steps.or(cfg.eval.steps).unwrap_or(r.len() - 1);
                    (x0, steps, Some(r))
                }
                None => {
                    let x0 = match a.x0.as_deref() {
                        Some(s) => parse_list(s)?,
                        None => cfg.eval.x0.clone().ok_or_else(|| Error::Config("missing --x0".into()))?,
                    };
                    let steps = a.steps.or(cfg.eval.steps).ok_or_else(|| Error::Config("missing --steps".into()))?;
                    let sys = truth.ok_or_else(|| Error::Config("aposteriori mode needs --data or --system".into()))?;
                    let dt = dt.ok_or_else(|| Error::Config("missing --dt".into()))?;
                    let r = systems::generate_trajectory(|x| sys.target(x), &x0, dt, steps, sys.tag())?;
                    (x0, steps, Some(r))
                }
            };
            let reference = reference.expect("reference trajectory");
            if x0.len() != model.dim() {
                return Err(Error::Config("x0 does not match the model dimension".into()).into());
            }
            let dt = dt.unwrap_or(reference.dt());
            let predicted = match eval::rollout(model.as_ref(), &x0, dt, steps, "rollout") {
                Ok(p) => p,
                Err(Error::Divergence { step, partial }) => {
                    summary.diverged_at = Some(step);
                    failure = Some(Error::Divergence { step, partial: None });
                    match partial {
                        Some(p) if p.len() >= 2 => *p,
                        _ => {
                            io::write_json(&out.join("summary.json"), &summary)?;
                            return Err(Failure {
                                error: failure.expect("set above"),
                                summary: serde_json::to_value(&summary).map_err(Error::from)?,
                            });
                        }
                    }
                }
                Err(e) => return Err(e.into()),
            };
            let n = predicted.len().min(reference.len());
            let g = eval::global_errors(&reference.slice(0, n)?, &predicted.slice(0, n)?)?;
            let jd = eval::jacobian_diagnostics(model.as_ref(), predicted.states(), dt)?;
            summary.steps = predicted.len() - 1;
            summary.global_error_mean = Some(g.mean());
            summary.global_error_max = Some(g.max());
            summary.max_singular_value_mean = Some(mean(&jd.max_singular_value));
            summary.max_real_eig_mean = Some(mean(&jd.max_real_part()));
            summary.warnings.extend(jd.warnings.clone());
            report.global = Some(g);
            report.predicted = Some(predicted);
            report.jacobian = Some(jd);
        }
        Mode::Grid => {
            let sys = truth.ok_or_else(|| Error::Config("grid mode needs a closed-form --system".into()))?;
            let bounds = match (&a.bounds, &cfg.eval.bounds) {
                (Some(b), _) => parse_bounds(b)?,
                (None, Some(b)) => b.clone(),
                (None, None) => return Err(Error::Config("missing --bounds".into()).into()),
            };
            if bounds.len() != model.dim() {
                return Err(Error::Config(format!("{} intervals for a {}-dimensional model", bounds.len(), model.dim())).into());
            }
            if model.dim() == 2 {
                let res = a.resolution.or(cfg.eval.resolution).unwrap_or(50);
                let grid = eval::stepwise_error_grid(model.as_ref(), &sys, [(bounds[0][0], bounds[0][1]), (bounds[1][0], bounds[1][1])], res)?;
                summary.steps = grid.points.len();
                summary.stepwise_error_mean = Some(grid.mean_error());
                summary.stepwise_error_max = Some(grid.max_error());
                report.grid = Some(grid);
            } else {
                let n = a.samples.or(cfg.eval.samples).unwrap_or(2500);
                let b: Vec<(f64, f64)> = bounds.iter().map(|r| (r[0], r[1])).collect();
                let (xs, errs) = eval::stepwise_error_cloud(model.as_ref(), &sys, &b, n, a.common.seed.unwrap_or(0))?;
                let mut header: Vec<String> = (1..=model.dim()).map(|j| format!("x{j}")).collect();
                header.push("err".into());
                let rows: Vec<Vec<f64>> = xs
                    .chunks(model.dim())
                    .zip(&errs)
                    .map(|(x, e)| [x, &[*e][..]].concat())
                    .collect();
                write_text(&out.join("stepcloud.csv"), &io::csv_string(&header, rows.iter().map(Vec::as_slice))?)?;
                summary.steps = errs.len();
                summary.stepwise_error_mean = Some(mean(&errs));
                summary.stepwise_error_max = Some(errs.iter().copied().fold(0.0, f64::max));
            }
        }
        Mode::Spectrum => {
            let traj = reference.ok_or_else(|| Error::Config("spectrum mode needs --data".into()))?;
            let dt = dt.unwrap_or(traj.dt());
            let jd = eval::jacobian_diagnostics(model.as_ref(), traj.states(), dt)?;
            summary.steps = traj.len();
            summary.max_singular_value_mean = Some(mean(&jd.max_singular_value));
            summary.max_real_eig_mean = Some(mean(&jd.max_real_part()));
            summary.warnings.extend(jd.warnings.clone());
            report.jacobian = Some(jd);
            report.stability_boundary = Some(eval::rk_stability_boundary(5, 720));
        }
    }
    report.write_bundle(&out, &summary)?;
    let mut value = serde_json::to_value(&summary).map_err(Error::from)?;
    value["out"] = json!(out.display().to_string());
    value["model"] = json!(model_path.display().to_string());
    match failure {
        None => Ok(value),
        Some(error) => Err(Failure { error, summary: value }),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("1, -2.5").unwrap(), vec![1.0, -2.5]);
        assert!(parse_list("1,x").is_err());
        assert_eq!(parse_bounds("-3:3,-5:5").unwrap(), vec![[-3.0, 3.0], [-5.0, 5.0]]);
        assert!(parse_bounds("-3,3").is_err());
        assert_eq!(parse_sizes("2,8,8,2").unwrap(), vec![2, 8, 8, 2]);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: ExperimentConfig = serde_json::from_str(
            r#"{"system":{"name":"vdp","mu":2.0},"data":{"dt":0.1,"steps":399,"x0":[[1,1]]},
                "model":{"kind":"mlp","layer_sizes":[2,8,8,2],"activation":{"kind":"swish"}}}"#,
        )
        .unwrap();
        assert!(matches!(ok.system, Some(SystemSpec::Vdp { mu }) if mu == 2.0));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sytem":{}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"data":{"dt":0.1,"bogus":1}}"#).is_err());
        let b: ExperimentConfig =
            serde_json::from_str(r#"{"system":{"name":"burgers","n_grid":512,"t_end":5.0}}"#).unwrap();
        assert!(matches!(b.system, Some(SystemSpec::Burgers(c)) if c.n_grid == 512 && c.nu == 0.01));
    }
}
