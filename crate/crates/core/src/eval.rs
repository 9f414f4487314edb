//! Permutation-matched error metrics and (N, T) experiment sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use itertools::Itertools;
use rayon::prelude::*;

use crate::error::{MldsError, Result};
use crate::lds::{
    generate_dataset, random_mixture, MarkovVector, MixtureModel, MixtureSpec, NoiseConfig,
    TrajectoryDataset,
};
use crate::pipeline::{mlds_fit, mlds_fit_refined, ols_markov, FitConfig, MarkovEstimate};
use crate::seed::derive_seed;
use crate::tensor::TpmParams;

/// Largest K for which all K! assignments are enumerated.
pub const MAX_MATCH_COMPONENTS: usize = 8;

/// Best assignment of estimated components to true ones.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `permutation[k]` is the estimated component matched to true component `k`.
    pub permutation: Vec<usize>,
    /// `‖ĝ_{π(k)} − g_k‖₂`.
    pub component_errors: Vec<f64>,
    /// `|p̂_{π(k)} − p_k|`.
    pub weight_errors: Vec<f64>,
    pub mean_error: f64,
}

impl MatchResult {
    pub fn mean_weight_error(&self) -> f64 {
        self.weight_errors.iter().sum::<f64>() / self.weight_errors.len() as f64
    }
}

/// Match against explicit true weights and Markov vectors.
///
/// The cost is the summed component error; weights are reported but do not
/// influence the assignment. Ties go to the lexicographically first permutation.
pub fn match_markov(
    est_weights: &[f64],
    est_markov: &[MarkovVector],
    true_weights: &[f64],
    true_markov: &[MarkovVector],
) -> Result<MatchResult> {
    let k = true_markov.len();
    if k > MAX_MATCH_COMPONENTS {
        return Err(MldsError::TooManyComponents {
            k,
            max: MAX_MATCH_COMPONENTS,
        });
    }
    if k == 0 {
        return Err(MldsError::InvalidParameter("no components to match".into()));
    }
    crate::error::check_dim("estimated components", k, est_markov.len())?;
    crate::error::check_dim("estimated weights", k, est_weights.len())?;
    crate::error::check_dim("true weights", k, true_weights.len())?;
    for (g_hat, g) in est_markov.iter().zip(true_markov) {
        crate::error::check_dim(
            "Markov vector length",
            g.values().len(),
            g_hat.values().len(),
        )?;
    }

    // dist[j][k] = ‖ĝ_j − g_k‖
    let dist: Vec<Vec<f64>> = est_markov
        .iter()
        .map(|gh| true_markov.iter().map(|g| gh.distance(g)).collect())
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let cost: f64 = perm.iter().enumerate().map(|(t, &j)| dist[j][t]).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let component_errors: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(t, &j)| dist[j][t])
        .collect();
    let weight_errors = permutation
        .iter()
        .enumerate()
        .map(|(t, &j)| (est_weights[j] - true_weights[t]).abs())
        .collect();
    let mean_error = component_errors.iter().sum::<f64>() / k as f64;
    Ok(MatchResult {
        permutation,
        component_errors,
        weight_errors,
        mean_error,
    })
}

/// Match an estimate against the first `L` Markov parameters of `truth`.
pub fn match_components(
    est: &MarkovEstimate,
    truth: &MixtureModel,
    horizon: usize,
) -> Result<MatchResult> {
    if est.n_components() != truth.n_components() {
        return Err(MldsError::DimensionMismatch {
            context: "number of components",
            expected: truth.n_components(),
            found: est.n_components(),
        });
    }
    if truth.n_components() > MAX_MATCH_COMPONENTS {
        return Err(MldsError::TooManyComponents {
            k: truth.n_components(),
            max: MAX_MATCH_COMPONENTS,
        });
    }
    crate::error::check_dim("estimate horizon", horizon, est.horizon())?;
    crate::error::check_dim("input dimension", truth.input_dim(), est.input_dim())?;
    match_markov(
        &est.weights,
        &est.markov,
        truth.weights(),
        &truth.markov_vectors(horizon),
    )
}

/// Mean over trajectories of the per-trajectory least-squares error against
/// the trajectory's own component.
pub fn baseline_error(
    data: &TrajectoryDataset,
    truth: &MixtureModel,
    horizon: usize,
) -> Result<f64> {
    if !data.is_labeled() {
        return Err(MldsError::MissingLabels);
    }
    crate::error::check_dim("input dimension", truth.input_dim(), data.input_dim())?;
    if data.n_trajectories() == 0 {
        return Err(MldsError::InvalidParameter("empty dataset".into()));
    }
    let g = truth.markov_vectors(horizon);
    let errors = data
        .trajectories()
        .par_iter()
        .map(|tr| {
            let k = tr.label.ok_or(MldsError::MissingLabels)?;
            let truth_g = g.get(k).ok_or_else(|| {
                MldsError::InvalidParameter(format!(
                    "label {k} out of range for {} components",
                    g.len()
                ))
            })?;
            let est = ols_markov(tr, data.input_dim(), horizon)?;
            Ok(est.markov.distance(truth_g))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Estimator evaluated in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Tensor,
    TensorRefine,
    Baseline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Tensor, Method::TensorRefine, Method::Baseline];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Tensor => "tensor",
            Method::TensorRefine => "tensor+refine",
            Method::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = MldsError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| MldsError::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Outcome of one (N, T, seed, method) run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Degenerate,
    DecompositionFailure,
    Error,
}

impl RunStatus {
    pub fn tag(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Degenerate => "degenerate",
            RunStatus::DecompositionFailure => "decomposition_failure",
            RunStatus::Error => "error",
        }
    }

    fn from_error(e: &MldsError) -> Self {
        match e {
            MldsError::DegenerateMixture { .. } => RunStatus::Degenerate,
            MldsError::DecompositionFailure { .. } | MldsError::ZeroUpdate => {
                RunStatus::DecompositionFailure
            }
            _ => RunStatus::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub method: Method,
    /// Mean component error; NaN unless `status` is `Ok`.
    pub error: f64,
    /// Mean weight error; NaN for the baseline, which estimates no weights.
    pub weight_error: f64,
    /// Zero when timing is disabled.
    pub wall_ms: f64,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub ts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Mixture shape; its `horizon` is overridden by `horizon` below.
    pub mixture: MixtureSpec,
    pub horizon: usize,
    pub noise: NoiseConfig,
    /// `None` uses [`TpmParams::for_components`].
    pub tpm: Option<TpmParams>,
    /// Measure wall time. Off keeps the CSV byte-identical across runs.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ns: vec![100, 1000],
            ts: vec![96],
            seeds: (0..10).collect(),
            methods: vec![Method::Tensor, Method::Baseline],
            mixture: MixtureSpec::default(),
            horizon: 7,
            noise: NoiseConfig::default(),
            tpm: None,
            record_timing: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(MldsError::InvalidParameter(msg.into()));
        if self.ns.is_empty()
            || self.ts.is_empty()
            || self.seeds.is_empty()
            || self.methods.is_empty()
        {
            return bad("sweep grid, seeds and methods must be non-empty");
        }
        if self.horizon == 0 {
            return bad("L must be positive");
        }
        if self.ns.iter().any(|&n| n < 2) {
            return bad("every N must be at least 2");
        }
        if self.ts.iter().any(|&t| t < self.horizon) {
            return Err(MldsError::InsufficientLength {
                t: *self.ts.iter().min().unwrap(),
                l: self.horizon,
            });
        }
        if self.mixture.n_components == 0 || self.mixture.n_components > MAX_MATCH_COMPONENTS {
            return bad("K must be between 1 and 8");
        }
        if self.mixture.n_components > self.horizon * self.mixture.input_dim {
            return bad("K must not exceed L·m");
        }
        self.noise.validate()
    }

    fn fit_config(&self) -> FitConfig {
        let mut cfg = FitConfig::new(self.horizon, self.mixture.n_components, self.noise.sigma_u);
        if let Some(tpm) = self.tpm {
            cfg.tpm = tpm;
        }
        cfg
    }

    /// Mixture for a seed; shared by every (N, T) cell with that seed.
    pub fn mixture_for(&self, seed: u64) -> Result<MixtureModel> {
        let spec = MixtureSpec {
            horizon: self.horizon,
            ..self.mixture.clone()
        };
        random_mixture(&spec, SweepConfig::mixture_seed(seed))
    }

    pub fn mixture_seed(seed: u64) -> u64 {
        derive_seed(seed, &[0])
    }

    pub fn dataset_seed(seed: u64, n: usize, t: usize) -> u64 {
        derive_seed(seed, &[1, n as u64, t as u64])
    }

    pub fn fit_seed(seed: u64, n: usize, t: usize) -> u64 {
        derive_seed(seed, &[2, n as u64, t as u64])
    }
}

fn run_cell(cfg: &SweepConfig, n: usize, t: usize, seed: u64) -> Vec<SweepRecord> {
    let k = cfg.mixture.n_components;
    let record = |method, outcome: std::result::Result<(f64, f64), RunStatus>, wall_ms: f64| {
        let (error, weight_error, status) = match outcome {
            Ok((e, w)) => (e, w, RunStatus::Ok),
            Err(status) => (f64::NAN, f64::NAN, status),
        };
        SweepRecord {
            n,
            t,
            k,
            l: cfg.horizon,
            seed,
            method,
            error,
            weight_error,
            wall_ms: if cfg.record_timing { wall_ms } else { 0.0 },
            status,
        }
    };

    let setup = cfg.mixture_for(seed).and_then(|model| {
        let data = generate_dataset(
            &model,
            n,
            t,
            &cfg.noise,
            SweepConfig::dataset_seed(seed, n, t),
        )?;
        Ok((model, data))
    });
    let (model, data) = match setup {
        Ok(v) => v,
        Err(e) => {
            let status = RunStatus::from_error(&e);
            return cfg
                .methods
                .iter()
                .map(|&m| record(m, Err(status), 0.0))
                .collect();
        }
    };

    let fit_cfg = cfg.fit_config();
    let fit_seed = SweepConfig::fit_seed(seed, n, t);
    cfg.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = match method {
                Method::Tensor | Method::TensorRefine => {
                    let est = if method == Method::Tensor {
                        mlds_fit(&data, &fit_cfg, fit_seed)
                    } else {
                        mlds_fit_refined(&data, &fit_cfg, fit_seed)
                    };
                    est.and_then(|est| match_components(&est, &model, cfg.horizon))
                        .map(|m| (m.mean_error, m.mean_weight_error()))
                }
                Method::Baseline => {
                    baseline_error(&data, &model, cfg.horizon).map(|e| (e, f64::NAN))
                }
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            record(
                method,
                outcome.map_err(|e| RunStatus::from_error(&e)),
                wall_ms,
            )
        })
        .collect()
}

/// Run every method on every (N, T, seed) cell. Cells run in parallel; records
/// are ordered by (N, T, seed, method). Failed runs are recorded, not raised.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize, u64)> = cfg
        .ns
        .iter()
        .cartesian_product(&cfg.ts)
        .cartesian_product(&cfg.seeds)
        .map(|((&n, &t), &s)| (n, t, s))
        .collect();
    let mut records: Vec<SweepRecord> = cells
        .par_iter()
        .flat_map_iter(|&(n, t, s)| run_cell(cfg, n, t, s))
        .collect();
    records.sort_by_key(|r| (r.n, r.t, r.seed, r.method));
    Ok(records)
}

pub const CSV_HEADER: &str = "N,T,K,L,seed,method,error,weight_error,wall_ms,status";

/// Nine significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.8e}")
    }
}

pub fn write_csv<W: Write>(out: &mut W, records: &[SweepRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.t,
            r.k,
            r.l,
            r.seed,
            r.method,
            fmt_sig9(r.error),
            fmt_sig9(r.weight_error),
            fmt_sig9(r.wall_ms),
            r.status.tag()
        )?;
    }
    Ok(())
}

/// Aggregate over seeds for one (N, T, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub t: usize,
    pub method: Method,
    /// NaN when no run succeeded.
    pub median: f64,
    pub mean: f64,
    /// Standard error of the mean; NaN with fewer than two successes.
    pub stderr: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Per-cell statistics; failed runs are counted but excluded from the
/// statistics. Sorted by (N, T, method).
pub fn summarize(records: &[SweepRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, usize, Method), (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let entry = groups.entry((r.n, r.t, r.method)).or_default();
        if r.status == RunStatus::Ok {
            entry.0.push(r.error);
        } else {
            entry.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((n, t, method), (errors, n_failed))| {
            let c = errors.len() as f64;
            let mean = if errors.is_empty() {
                f64::NAN
            } else {
                errors.iter().sum::<f64>() / c
            };
            let stderr = if errors.len() < 2 {
                f64::NAN
            } else {
                let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (c - 1.0);
                (var / c).sqrt()
            };
            CellSummary {
                n,
                t,
                method,
                median: median(&errors),
                mean,
                stderr,
                n_ok: errors.len(),
                n_failed,
            }
        })
        .collect()
}

/// Error-vs-N series: one block per T, blocks separated by a blank line.
pub fn write_series<W: Write>(out: &mut W, summaries: &[CellSummary]) -> Result<()> {
    writeln!(out, "# error vs N; one block per T")?;
    let mut by_t: BTreeMap<usize, Vec<&CellSummary>> = BTreeMap::new();
    for s in summaries {
        by_t.entry(s.t).or_default().push(s);
    }
    for (i, (t, mut rows)) in by_t.into_iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        rows.sort_by_key(|s| (s.method, s.n));
        writeln!(out, "# T={t}")?;
        writeln!(out, "N method median mean stderr ok failed")?;
        for s in rows {
            writeln!(
                out,
                "{} {} {} {} {} {} {}",
                s.n,
                s.method,
                fmt_sig9(s.median),
                fmt_sig9(s.mean),
                fmt_sig9(s.stderr),
                s.n_ok,
                s.n_failed
            )?;
        }
    }
    Ok(())
}

/// `N T error` grid of per-cell medians for one method.
pub fn write_level_grid<W: Write>(
    out: &mut W,
    summaries: &[CellSummary],
    method: Method,
) -> Result<()> {
    writeln!(out, "# median error, method={method}")?;
    writeln!(out, "N T error")?;
    for s in summaries.iter().filter(|s| s.method == method) {
        writeln!(out, "{} {} {}", s.n, s.t, fmt_sig9(s.median))?;
    }
    Ok(())
}
