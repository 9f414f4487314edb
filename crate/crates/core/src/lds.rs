//! Stable single-output LTI systems, their Markov parameters, and trajectory
//! simulation for mixtures of such systems.

use nalgebra::{DMatrix, DVector, Schur};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, MldsError, Result};
use crate::seed::{child_rng, rng_from_seed};

/// `x_{t+1} = A x_t + B (u_t + w¹_t)`, `y_t = C x_t + w²_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl StateSpace {
    /// Validates shapes and strict stability.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let ss = StateSpace::unchecked_stability(a, b, c)?;
        let radius = spectral_radius(&ss.a);
        if radius.is_nan() || radius >= 1.0 {
            return Err(MldsError::Unstable { radius });
        }
        Ok(ss)
    }

    /// Shape checks only. Realizations fitted to noisy Markov parameters can
    /// come out marginally unstable and are still worth reporting.
    pub fn unchecked_stability(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(MldsError::InvalidParameter(
                "system order must be positive".into(),
            ));
        }
        check_dim("state matrix columns", n, a.ncols())?;
        check_dim("input matrix rows", n, b.nrows())?;
        if b.ncols() == 0 {
            return Err(MldsError::InvalidParameter(
                "input dimension must be positive".into(),
            ));
        }
        check_dim("output matrix rows", 1, c.nrows())?;
        check_dim("output matrix columns", n, c.ncols())?;
        if a.iter()
            .chain(b.iter())
            .chain(c.iter())
            .any(|x| !x.is_finite())
        {
            return Err(MldsError::InvalidParameter(
                "system matrices must be finite".into(),
            ));
        }
        Ok(StateSpace { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Similarity transform `(S A S⁻¹, S B, C S⁻¹)`.
    pub fn transformed(&self, s: &DMatrix<f64>) -> Result<StateSpace> {
        check_dim("similarity transform", self.order(), s.nrows())?;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| MldsError::InvalidParameter("singular similarity transform".into()))?;
        StateSpace::new(s * &self.a * &s_inv, s * &self.b, &self.c * &s_inv)
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    // The unbounded Schur iteration can stall on defective matrices such as
    // shift registers, so cap it and fall back to Gelfand's formula.
    match Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => gelfand_radius(a),
    }
}

/// `‖A^k‖^{1/k}` at `k = 2^20`, via rescaled repeated squaring.
fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    let mut p = a.clone();
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..20 {
        let norm = p.norm();
        if norm == 0.0 {
            return 0.0;
        }
        p /= norm;
        log_scale += norm.ln() / k;
        p = &p * &p;
        k *= 2.0;
    }
    let norm = p.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (log_scale + norm.ln() / k).exp()
}

/// Truncated impulse response `[g(1)', …, g(L)']'` with `g(t) = C A^{t-1} B`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovVector {
    horizon: usize,
    input_dim: usize,
    values: DVector<f64>,
}

impl MarkovVector {
    pub fn new(horizon: usize, input_dim: usize, values: DVector<f64>) -> Result<Self> {
        if horizon == 0 || input_dim == 0 {
            return Err(MldsError::InvalidParameter(
                "horizon and input dimension must be positive".into(),
            ));
        }
        check_dim("Markov vector length", horizon * input_dim, values.len())?;
        Ok(MarkovVector {
            horizon,
            input_dim,
            values,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Block `g(t)` for `t` in `1..=L`.
    pub fn block(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.horizon, "Markov index {t} out of range");
        let m = self.input_dim;
        &self.values.as_slice()[(t - 1) * m..t * m]
    }

    pub fn distance(&self, other: &MarkovVector) -> f64 {
        (&self.values - &other.values).norm()
    }
}

pub fn impulse_response(ss: &StateSpace, horizon: usize) -> MarkovVector {
    assert!(horizon >= 1, "horizon must be positive");
    let m = ss.input_dim();
    let mut values = DVector::zeros(horizon * m);
    let mut ab = ss.b.clone(); // A^{t-1} B
    for t in 0..horizon {
        let g = &ss.c * &ab;
        for j in 0..m {
            values[t * m + j] = g[(0, j)];
        }
        ab = &ss.a * ab;
    }
    MarkovVector {
        horizon,
        input_dim: m,
        values,
    }
}

const MAX_ENERGY_TERMS: usize = 1_000_000;

/// `1 + Σ_t ‖g(t)‖²`, summed until a geometric bound on the remaining tail
/// drops below `tail_tol`.
///
/// The tail bound is `‖C‖² · ‖A^t B‖_F² / (1 − r)` where `r` is the largest
/// one-step decay ratio of `‖A^t B‖_F²` over the last `n + 1` steps.
pub fn system_energy(ss: &StateSpace, tail_tol: f64) -> Result<f64> {
    let n = ss.order();
    let c_sq = ss.c.norm_squared();
    let mut total = 1.0;
    let mut ab = ss.b.clone();
    let mut prev_state = ab.norm_squared();
    let mut ratios: Vec<f64> = Vec::with_capacity(n + 1);
    for t in 1..=MAX_ENERGY_TERMS {
        total += (&ss.c * &ab).norm_squared();
        ab = &ss.a * ab;
        let state = ab.norm_squared();
        if c_sq * state == 0.0 {
            return Ok(total);
        }
        if ratios.len() == n + 1 {
            ratios.remove(0);
        }
        ratios.push(if prev_state > 0.0 {
            state / prev_state
        } else {
            f64::INFINITY
        });
        prev_state = state;
        let r = ratios.iter().copied().fold(0.0, f64::max);
        if t > n && r < 1.0 && c_sq * state / (1.0 - r) < tail_tol {
            return Ok(total);
        }
    }
    Err(MldsError::NonConvergence {
        terms: MAX_ENERGY_TERMS,
    })
}

/// Draw `A` with i.i.d. standard normal entries rescaled to spectral radius
/// `target_radius`, and `B`, `C` i.i.d. standard normal.
pub fn random_stable_system(
    n: usize,
    m: usize,
    target_radius: f64,
    rng_seed: u64,
) -> Result<StateSpace> {
    if n == 0 || m == 0 {
        return Err(MldsError::InvalidParameter(
            "order and input dimension must be positive".into(),
        ));
    }
    if !(target_radius > 0.0 && target_radius < 1.0) {
        return Err(MldsError::InvalidParameter(format!(
            "target radius {target_radius} outside (0, 1)"
        )));
    }
    const ATTEMPTS: usize = 10;
    let mut rng = rng_from_seed(rng_seed);
    for _ in 0..ATTEMPTS {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = DMatrix::from_fn(1, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&a);
        if rho < 1e-12 {
            continue;
        }
        let a = a.map(|x| x / rho * target_radius);
        return StateSpace::new(a, b, c);
    }
    Err(MldsError::GenerationFailed { attempts: ATTEMPTS })
}

/// Standard deviations of input, process noise and measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma_u: f64,
    pub sigma_w1: f64,
    pub sigma_w2: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_u: 1.0,
            sigma_w1: 0.01,
            sigma_w2: 0.01,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_u > 0.0
            && self.sigma_w1 >= 0.0
            && self.sigma_w2 >= 0.0
            && [self.sigma_u, self.sigma_w1, self.sigma_w2]
                .iter()
                .all(|s| s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MldsError::InvalidParameter(format!(
                "noise levels must be finite with sigma_u > 0 and sigma_w >= 0, got {self:?}"
            )))
        }
    }

    /// Noise config with `sigma_u = 0`, used only for degenerate tests.
    /// Unit inputs, no disturbances.
    pub fn noiseless() -> Self {
        NoiseConfig {
            sigma_u: 1.0,
            sigma_w1: 0.0,
            sigma_w2: 0.0,
        }
    }

    pub fn silent() -> Self {
        NoiseConfig {
            sigma_u: 0.0,
            sigma_w1: 0.0,
            sigma_w2: 0.0,
        }
    }
}

/// One rollout: `inputs` holds `u_0 … u_{T-1}` row-major (`T·m` values),
/// `outputs` holds `y_1 … y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub label: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.len() / self.outputs.len().max(1)
    }

    /// `u_t` for `t` in `0..T`.
    pub fn input(&self, t: usize) -> &[f64] {
        let m = self.input_dim();
        &self.inputs[t * m..(t + 1) * m]
    }

    /// `y_t` for `t` in `1..=T`.
    pub fn output(&self, t: usize) -> f64 {
        self.outputs[t - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    horizon: usize,
    input_dim: usize,
    trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(horizon: usize, input_dim: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        if horizon == 0 || input_dim == 0 || trajectories.is_empty() {
            return Err(MldsError::InvalidParameter(
                "dataset needs N, T, m >= 1".into(),
            ));
        }
        for tr in &trajectories {
            check_dim("trajectory outputs", horizon, tr.outputs.len())?;
            check_dim("trajectory inputs", horizon * input_dim, tr.inputs.len())?;
        }
        Ok(TrajectoryDataset {
            horizon,
            input_dim,
            trajectories,
        })
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }
    /// Trajectory length `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }
    pub fn is_labeled(&self) -> bool {
        self.trajectories.iter().all(|t| t.label.is_some())
    }
}

/// Noiseless response `y_1 … y_T` of a zero-initial-state system to `inputs`.
pub fn respond(ss: &StateSpace, inputs: &[f64]) -> Vec<f64> {
    let m = ss.input_dim();
    let t_len = inputs.len() / m;
    let zeros = vec![0.0; inputs.len()];
    simulate(ss, inputs, &zeros, &vec![0.0; t_len])
}

fn simulate(ss: &StateSpace, inputs: &[f64], w1: &[f64], w2: &[f64]) -> Vec<f64> {
    let m = ss.input_dim();
    let mut x = DVector::zeros(ss.order());
    let mut drive = DVector::zeros(m);
    let mut out = Vec::with_capacity(w2.len());
    for t in 0..w2.len() {
        for j in 0..m {
            drive[j] = inputs[t * m + j] + w1[t * m + j];
        }
        x = &ss.a * &x + &ss.b * &drive;
        out.push((&ss.c * &x)[(0, 0)] + w2[t]);
    }
    out
}

/// Roll out `T` steps from `x_0 = 0` with Gaussian inputs and noise.
pub fn rollout(ss: &StateSpace, horizon: usize, noise: &NoiseConfig, rng_seed: u64) -> Trajectory {
    let m = ss.input_dim();
    let mut rng = rng_from_seed(rng_seed);
    let mut inputs = Vec::with_capacity(horizon * m);
    let mut w1 = Vec::with_capacity(horizon * m);
    let mut w2 = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        for _ in 0..m {
            inputs.push(noise.sigma_u * rng.sample::<f64, _>(StandardNormal));
        }
        for _ in 0..m {
            w1.push(noise.sigma_w1 * rng.sample::<f64, _>(StandardNormal));
        }
        w2.push(noise.sigma_w2 * rng.sample::<f64, _>(StandardNormal));
    }
    let outputs = simulate(ss, &inputs, &w1, &w2);
    Trajectory {
        inputs,
        outputs,
        label: None,
    }
}

/// Weighted mixture of stable systems sharing order and input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    systems: Vec<StateSpace>,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, systems: Vec<StateSpace>) -> Result<Self> {
        if weights.is_empty() {
            return Err(MldsError::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        check_dim("mixture weights", systems.len(), weights.len())?;
        if weights.iter().any(|p| p.is_nan() || *p <= 0.0) {
            return Err(MldsError::InvalidParameter(
                "mixture weights must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MldsError::InvalidParameter(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let (n, m) = (systems[0].order(), systems[0].input_dim());
        for s in &systems {
            check_dim("component order", n, s.order())?;
            check_dim("component input dimension", m, s.input_dim())?;
        }
        Ok(MixtureModel { weights, systems })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn systems(&self) -> &[StateSpace] {
        &self.systems
    }
    pub fn order(&self) -> usize {
        self.systems[0].order()
    }
    pub fn input_dim(&self) -> usize {
        self.systems[0].input_dim()
    }

    pub fn markov_vectors(&self, horizon: usize) -> Vec<MarkovVector> {
        self.systems
            .iter()
            .map(|s| impulse_response(s, horizon))
            .collect()
    }

    /// `Σ_k p_k g_k ⊗ g_k` for the truncated impulse responses.
    pub fn second_moment(&self, horizon: usize) -> DMatrix<f64> {
        let d = horizon * self.input_dim();
        let mut m2 = DMatrix::zeros(d, d);
        for (p, g) in self.weights.iter().zip(self.markov_vectors(horizon)) {
            m2 += g.values() * g.values().transpose() * *p;
        }
        m2
    }

    /// K-th largest singular value of the second moment (0 when K > d).
    pub fn nondegeneracy(&self, horizon: usize) -> f64 {
        let mut sv: Vec<f64> = self
            .second_moment(horizon)
            .singular_values()
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv.get(self.n_components() - 1).copied().unwrap_or(0.0)
    }
}

/// Parameters for drawing a random mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n_components: usize,
    pub order: usize,
    pub input_dim: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// `None` means uniform weights.
    pub weights: Option<Vec<f64>>,
    /// Horizon at which non-degeneracy is checked.
    pub horizon: usize,
    pub min_sigma: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            n_components: 3,
            order: 3,
            input_dim: 1,
            radius_min: 0.6,
            radius_max: 0.9,
            weights: None,
            horizon: 7,
            min_sigma: 1e-8,
        }
    }
}

const MIXTURE_ATTEMPTS: usize = 20;

/// Draw a mixture with spectral radii uniform in `[radius_min, radius_max]`,
/// redrawing (up to 20 times) while the second moment is degenerate.
pub fn random_mixture(spec: &MixtureSpec, rng_seed: u64) -> Result<MixtureModel> {
    let k = spec.n_components;
    if k == 0 {
        return Err(MldsError::InvalidParameter("K must be positive".into()));
    }
    if !(spec.radius_min > 0.0 && spec.radius_min <= spec.radius_max && spec.radius_max < 1.0) {
        return Err(MldsError::InvalidParameter(format!(
            "radius range [{}, {}] must satisfy 0 < min <= max < 1",
            spec.radius_min, spec.radius_max
        )));
    }
    let weights = spec
        .weights
        .clone()
        .unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let mut last_sigma = 0.0;
    for attempt in 0..MIXTURE_ATTEMPTS {
        let mut rng = child_rng(rng_seed, &[attempt as u64]);
        let mut systems = Vec::with_capacity(k);
        for _ in 0..k {
            let radius = if spec.radius_max > spec.radius_min {
                rng.random_range(spec.radius_min..=spec.radius_max)
            } else {
                spec.radius_min
            };
            let seed = rng.random::<u64>();
            systems.push(random_stable_system(
                spec.order,
                spec.input_dim,
                radius,
                seed,
            )?);
        }
        let model = MixtureModel::new(weights.clone(), systems)?;
        last_sigma = model.nondegeneracy(spec.horizon);
        if last_sigma >= spec.min_sigma {
            return Ok(model);
        }
    }
    Err(MldsError::DegenerateMixture {
        sigma_k: last_sigma,
    })
}

/// I.i.d. categorical component draws.
pub fn sample_mixture(model: &MixtureModel, n: usize, rng_seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(rng_seed);
    let dist = WeightedIndex::new(model.weights()).expect("mixture weights validated");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// `N` labeled rollouts; trajectory `i` uses a seed derived from `(rng_seed, i)`.
pub fn generate_dataset(
    model: &MixtureModel,
    n: usize,
    horizon: usize,
    noise: &NoiseConfig,
    rng_seed: u64,
) -> Result<TrajectoryDataset> {
    if n == 0 || horizon == 0 {
        return Err(MldsError::InvalidParameter(
            "N and T must be positive".into(),
        ));
    }
    noise.validate()?;
    let labels = sample_mixture(model, n, crate::seed::derive_seed(rng_seed, &[u64::MAX]));
    let trajectories = labels
        .par_iter()
        .enumerate()
        .map(|(i, &k)| {
            let seed = crate::seed::derive_seed(rng_seed, &[i as u64]);
            let mut tr = rollout(&model.systems[k], horizon, noise, seed);
            tr.label = Some(k);
            tr
        })
        .collect();
    TrajectoryDataset::new(horizon, model.input_dim(), trajectories)
}
