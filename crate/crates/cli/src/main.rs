//! `mlds`: simulate mixtures of linear dynamical systems, fit them, score
//! estimates and run (N, T) sweeps.
//!
//! Exit codes: 0 success, 2 invalid arguments or input, 3 degenerate
//! mixture, 4 decomposition failure, 5 I/O or malformed file.

mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlds::eval::{self, Method, SweepConfig};
use mlds::io;
use mlds::lds::{generate_dataset, random_mixture, MixtureSpec, NoiseConfig};
use mlds::pipeline::{ho_kalman, mlds_fit, mlds_fit_refined, FitConfig};
use mlds::tensor::TpmParams;
use mlds::MldsError;

use config::Settings;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
    Lib(MldsError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 5,
            CliError::Lib(e) => match e {
                MldsError::DegenerateMixture { .. } | MldsError::GenerationFailed { .. } => 3,
                MldsError::DecompositionFailure { .. }
                | MldsError::ZeroUpdate
                | MldsError::NonConvergence { .. } => 4,
                MldsError::Io(_) | MldsError::Parse { .. } => 5,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<MldsError> for CliError {
    fn from(e: MldsError) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "mlds",
    version,
    about = "Moment-based estimation for mixtures of linear dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random mixture and sample a labeled dataset from it.
    Simulate(Params),
    /// Estimate mixture weights and Markov parameters from a dataset.
    Fit {
        dataset: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Score an estimate against the true mixture.
    Eval {
        estimate: PathBuf,
        mixture: PathBuf,
        #[command(flatten)]
        params: Params,
    },
    /// Run every method over an (N, T) grid and several seeds.
    Sweep(Params),
}

/// Shared options. Every option can also be given in the `--config` file
/// under the same name without dashes; flags take precedence.
#[derive(Args, Debug, Clone, Default)]
struct Params {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of mixture components.
    #[arg(long = "K")]
    k: Option<String>,
    /// State dimension of each system.
    #[arg(long = "n")]
    n: Option<String>,
    /// Input dimension.
    #[arg(long = "m")]
    m: Option<String>,
    /// Number of Markov parameters to estimate.
    #[arg(long = "L")]
    l: Option<String>,
    /// Number of trajectories (a comma list for sweeps).
    #[arg(long = "N")]
    big_n: Option<String>,
    /// Trajectory length (a comma list for sweeps).
    #[arg(long = "T")]
    big_t: Option<String>,
    #[arg(long = "radius-min")]
    radius_min: Option<String>,
    #[arg(long = "radius-max")]
    radius_max: Option<String>,
    /// Input standard deviation.
    #[arg(long = "sigma-u")]
    sigma_u: Option<String>,
    /// Input disturbance standard deviation.
    #[arg(long = "sigma-w1")]
    sigma_w1: Option<String>,
    /// Output noise standard deviation.
    #[arg(long = "sigma-w2")]
    sigma_w2: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Random restarts per extracted component (default 20·K).
    #[arg(long)]
    restarts: Option<String>,
    /// Power iterations per restart.
    #[arg(long)]
    iters: Option<String>,
    /// Re-estimate the weights from the first moment.
    #[arg(long)]
    refine: bool,
    /// Append state-space realizations of this order.
    #[arg(long = "ho-kalman")]
    ho_kalman: Option<String>,
    /// Output file (fit, eval) or directory (simulate, sweep).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Params {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        s.set("K", self.k.clone());
        s.set("n", self.n.clone());
        s.set("m", self.m.clone());
        s.set("L", self.l.clone());
        s.set("N", self.big_n.clone());
        s.set("T", self.big_t.clone());
        s.set("radius-min", self.radius_min.clone());
        s.set("radius-max", self.radius_max.clone());
        s.set("sigma-u", self.sigma_u.clone());
        s.set("sigma-w1", self.sigma_w1.clone());
        s.set("sigma-w2", self.sigma_w2.clone());
        s.set("seed", self.seed.clone());
        s.set("restarts", self.restarts.clone());
        s.set("iters", self.iters.clone());
        if self.refine {
            s.set("refine", Some("1".into()));
        }
        s.set("ho-kalman", self.ho_kalman.clone());
        s.set("out", self.out.as_ref().map(|p| p.display().to_string()));
        Ok(s)
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn require(cond: bool, msg: impl Into<String>) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

/// Mixture shape and noise, validated.
struct Model {
    k: usize,
    n: usize,
    m: usize,
    l: usize,
    radius_min: f64,
    radius_max: f64,
    noise: NoiseConfig,
    seed: u64,
}

impl Model {
    fn from_settings(s: &Settings) -> CliResult<Self> {
        let model = Model {
            k: s.get("K", 3)?,
            n: s.get("n", 3)?,
            m: s.get("m", 1)?,
            l: s.get("L", 7)?,
            radius_min: s.get("radius-min", 0.6)?,
            radius_max: s.get("radius-max", 0.9)?,
            noise: NoiseConfig {
                sigma_u: s.get("sigma-u", 1.0)?,
                sigma_w1: s.get("sigma-w1", 0.01)?,
                sigma_w2: s.get("sigma-w2", 0.01)?,
            },
            seed: s.get("seed", 0)?,
        };
        require(
            (1..=eval::MAX_MATCH_COMPONENTS).contains(&model.k),
            format!("K must be between 1 and {}", eval::MAX_MATCH_COMPONENTS),
        )?;
        require(model.n >= 1, "n must be at least 1")?;
        require(model.m >= 1, "m must be at least 1")?;
        require(model.l >= 1, "L must be at least 1")?;
        require(model.k <= model.l * model.m, "K must not exceed L·m")?;
        require(
            model.radius_min > 0.0
                && model.radius_min <= model.radius_max
                && model.radius_max < 1.0,
            "radii must satisfy 0 < radius-min <= radius-max < 1",
        )?;
        model.noise.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(model)
    }

    fn spec(&self) -> MixtureSpec {
        MixtureSpec {
            n_components: self.k,
            order: self.n,
            input_dim: self.m,
            radius_min: self.radius_min,
            radius_max: self.radius_max,
            horizon: self.l,
            ..MixtureSpec::default()
        }
    }
}

fn tpm_params(s: &Settings, k: usize) -> CliResult<TpmParams> {
    let defaults = TpmParams::for_components(k);
    let tpm = TpmParams {
        n_restarts: s.get("restarts", defaults.n_restarts)?,
        n_iters: s.get("iters", defaults.n_iters)?,
    };
    require(tpm.n_restarts >= 1, "restarts must be at least 1")?;
    require(tpm.n_iters >= 1, "iters must be at least 1")?;
    Ok(tpm)
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

/// Write through a temporary file in the target directory, then rename.
fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> mlds::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_simulate(params: &Params) -> CliResult<()> {
    let s = params.settings()?;
    let model = Model::from_settings(&s)?;
    let n_traj: usize = s.get("N", 1000)?;
    let t_len: usize = s.get("T", 96)?;
    require(n_traj >= 1, "N must be at least 1")?;
    require(t_len >= 1, "T must be at least 1")?;
    let out_dir = PathBuf::from(s.raw("out").unwrap_or("."));

    let mixture = random_mixture(&model.spec(), SweepConfig::mixture_seed(model.seed))?;
    let data = generate_dataset(
        &mixture,
        n_traj,
        t_len,
        &model.noise,
        SweepConfig::dataset_seed(model.seed, n_traj, t_len),
    )?;
    ensure_dir(&out_dir)?;
    let mixture_path = out_dir.join("mixture.txt");
    let dataset_path = out_dir.join("dataset.txt");
    write_file(&mixture_path, &render(|b| io::write_mixture(b, &mixture))?)?;
    write_file(&dataset_path, &render(|b| io::write_dataset(b, &data))?)?;
    println!("wrote {}", mixture_path.display());
    println!("wrote {}", dataset_path.display());
    let radii: Vec<String> = mixture
        .systems()
        .iter()
        .map(|ss| format!("{:.4}", ss.spectral_radius()))
        .collect();
    println!("spectral radii: {}", radii.join(" "));
    println!("sigma_K(M2) = {:.6e}", mixture.nondegeneracy(model.l));
    Ok(())
}

fn cmd_fit(dataset: &Path, params: &Params) -> CliResult<()> {
    let s = params.settings()?;
    let k: usize = s.get("K", 3)?;
    let l: usize = s.get("L", 7)?;
    let sigma_u: f64 = s.get("sigma-u", 1.0)?;
    let seed: u64 = s.get("seed", 0)?;
    let refine = s.flag("refine")?;
    let hk_order: Option<usize> = s.get_opt("ho-kalman")?;
    let tpm = tpm_params(&s, k)?;
    require(
        (1..=eval::MAX_MATCH_COMPONENTS).contains(&k),
        format!("K must be between 1 and {}", eval::MAX_MATCH_COMPONENTS),
    )?;
    require(l >= 1, "L must be at least 1")?;
    require(
        sigma_u.is_finite() && sigma_u > 0.0,
        "sigma-u must be positive",
    )?;
    if let Some(order) = hk_order {
        require(order >= 1, "ho-kalman order must be at least 1")?;
        if l < 2 * order + 1 {
            return Err(MldsError::InsufficientHorizon { l, n: order }.into());
        }
    }
    let out = PathBuf::from(s.raw("out").unwrap_or("estimate.txt"));

    let data = io::parse_dataset(&read_file(dataset)?)?;
    if data.horizon() < l {
        return Err(MldsError::InsufficientLength {
            t: data.horizon(),
            l,
        }
        .into());
    }
    let mut cfg = FitConfig::new(l, k, sigma_u);
    cfg.tpm = tpm;
    let est = if refine {
        mlds_fit_refined(&data, &cfg, seed)?
    } else {
        mlds_fit(&data, &cfg, seed)?
    };
    if est.low_confidence {
        eprintln!(
            "warning: second moment is close to rank deficient; the estimate may be unreliable"
        );
    }
    if est.refinement_skipped {
        eprintln!(
            "warning: refinement skipped because the estimated components are linearly dependent"
        );
    }

    let mut buf = render(|b| io::write_estimate(b, &est))?;
    if let Some(order) = hk_order {
        let mut systems = Vec::with_capacity(k);
        for (i, g) in est.markov.iter().enumerate() {
            let r = ho_kalman(g, order)?;
            if r.order_mismatch {
                eprintln!(
                    "warning: component {i}: Hankel spectrum suggests an order other than {order} (effective {})",
                    r.effective_order
                );
            }
            if !r.stable {
                eprintln!(
                    "warning: component {i}: realization has spectral radius {:.4}",
                    r.system.spectral_radius()
                );
            }
            systems.push(r.system);
        }
        buf.extend(render(|b| io::write_realizations(b, &systems))?);
    }
    write_file(&out, &buf)?;
    println!("wrote {}", out.display());
    let weights: Vec<String> = est.weights.iter().map(|p| format!("{p:.6}")).collect();
    println!("weights: {}", weights.join(" "));
    Ok(())
}

fn cmd_eval(estimate: &Path, mixture: &Path, params: &Params) -> CliResult<()> {
    let s = params.settings()?;
    let est = io::parse_estimate(&read_file(estimate)?)?.estimate;
    let truth = io::parse_mixture(&read_file(mixture)?)?;
    let l: usize = s.get("L", est.horizon())?;
    require(
        l == est.horizon(),
        format!("L = {l} but the estimate has L = {}", est.horizon()),
    )?;
    require(
        est.n_components() == truth.n_components(),
        format!(
            "estimate has {} components but the mixture has {}",
            est.n_components(),
            truth.n_components()
        ),
    )?;
    let result = eval::match_components(&est, &truth, l)?;
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.6e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let perm: Vec<String> = result.permutation.iter().map(usize::to_string).collect();
    println!("permutation: {}", perm.join(" "));
    println!("component errors: {}", join(&result.component_errors));
    println!("weight errors: {}", join(&result.weight_errors));
    println!("mean error: {:.9e}", result.mean_error);
    println!("mean weight error: {:.9e}", result.mean_weight_error());
    if let Some(out) = s.raw("out") {
        let mut csv = String::from("K,L,mean_error,mean_weight_error\n");
        writeln!(
            csv,
            "{},{},{},{}",
            truth.n_components(),
            l,
            eval::fmt_sig9(result.mean_error),
            eval::fmt_sig9(result.mean_weight_error())
        )
        .expect("writing to a String");
        write_file(Path::new(out), csv.as_bytes())?;
    }
    Ok(())
}

fn sweep_config(s: &Settings) -> CliResult<SweepConfig> {
    let model = Model::from_settings(s)?;
    let ns: Vec<usize> = s.list("N", vec![100, 1000, 10000])?;
    let ts: Vec<usize> = s.list("T", vec![96])?;
    let seeds: Vec<u64> = s.list("seeds", (0..10).collect())?;
    let methods = match s.raw("methods") {
        None => vec![Method::Tensor, Method::Baseline],
        Some(v) => v
            .split(',')
            .map(|m| {
                m.trim()
                    .parse::<Method>()
                    .map_err(|e| invalid(e.to_string()))
            })
            .collect::<CliResult<Vec<_>>>()?,
    };
    let mut tpm = None;
    if s.raw("restarts").is_some() || s.raw("iters").is_some() {
        tpm = Some(tpm_params(s, model.k)?);
    }
    let cfg = SweepConfig {
        ns,
        ts,
        seeds,
        methods,
        mixture: model.spec(),
        horizon: model.l,
        noise: model.noise,
        tpm,
        record_timing: s.flag("timing")?,
    };
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(cfg)
}

fn cmd_sweep(params: &Params) -> CliResult<()> {
    let s = params.settings()?;
    let cfg = sweep_config(&s)?;
    let out_dir = PathBuf::from(s.raw("out").unwrap_or("sweep"));
    ensure_dir(&out_dir)?;

    let records = eval::run_sweep(&cfg)?;
    let summaries = eval::summarize(&records);
    let level_method = if cfg.methods.contains(&Method::Tensor) {
        Method::Tensor
    } else {
        cfg.methods[0]
    };
    let csv_path = out_dir.join("results.csv");
    let series_path = out_dir.join("series.txt");
    let level_path = out_dir.join("level.txt");
    write_file(&csv_path, &render(|b| eval::write_csv(b, &records))?)?;
    write_file(
        &series_path,
        &render(|b| eval::write_series(b, &summaries))?,
    )?;
    write_file(
        &level_path,
        &render(|b| eval::write_level_grid(b, &summaries, level_method))?,
    )?;

    println!(
        "{:>8} {:>6} {:>14} {:>12} {:>12} {:>5}",
        "N", "T", "method", "median", "mean", "fail"
    );
    for c in &summaries {
        println!(
            "{:>8} {:>6} {:>14} {:>12.4e} {:>12.4e} {:>5}",
            c.n,
            c.t,
            c.method.tag(),
            c.median,
            c.mean,
            c.n_failed
        );
    }
    for p in [&csv_path, &series_path, &level_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(p) => cmd_simulate(p),
        Command::Fit { dataset, params } => cmd_fit(dataset, params),
        Command::Eval {
            estimate,
            mixture,
            params,
        } => cmd_eval(estimate, mixture, params),
        Command::Sweep(p) => cmd_sweep(p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
