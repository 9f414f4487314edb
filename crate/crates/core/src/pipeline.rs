//! From trajectories to Markov parameters.
//!
//! Each trajectory contributes one regression sample per time in
//! `J = {L, 2L, …, ⌊T/L⌋·L}`: the covariate stacks the `L` preceding inputs
//! (newest first) scaled by `1/σ_u`, the response is `y_t`. Consecutive
//! samples from one trajectory then use disjoint inputs. The mixture of
//! regressions fitted on those samples has coefficients `σ_u · g^(L)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{MldsError, Result};
use crate::lds::{MarkovVector, StateSpace, Trajectory, TrajectoryDataset};
use crate::mlr::{self, MixtureEstimate, RegressionDataset};
use crate::tensor::TpmParams;

/// Covariate `[u_{t-1}', …, u_{t-L}']'` for every `t ∈ J`.
pub fn stack_inputs(
    inputs: &[f64],
    input_dim: usize,
    horizon: usize,
) -> Result<Vec<(usize, DVector<f64>)>> {
    if input_dim == 0 || horizon == 0 {
        return Err(MldsError::InvalidParameter(
            "input dimension and horizon must be positive".into(),
        ));
    }
    let t_len = inputs.len() / input_dim;
    if t_len < horizon {
        return Err(MldsError::InsufficientLength {
            t: t_len,
            l: horizon,
        });
    }
    let m = input_dim;
    Ok((1..=t_len / horizon)
        .map(|q| {
            let t = q * horizon;
            let mut x = DVector::zeros(horizon * m);
            for lag in 1..=horizon {
                let src = (t - lag) * m;
                x.rows_mut((lag - 1) * m, m)
                    .copy_from_slice(&inputs[src..src + m]);
            }
            (t, x)
        })
        .collect())
}

/// The regression problem built from a trajectory dataset, with the
/// `(trajectory, time)` origin of each sample.
#[derive(Debug, Clone)]
pub struct StackedRegression {
    pub regression: RegressionDataset,
    pub provenance: Vec<(usize, usize)>,
}

/// Which trajectories feed the second and third moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPartition {
    pub second: Vec<usize>,
    pub third: Vec<usize>,
}

impl TrajectoryPartition {
    /// First `⌈N/2⌉` trajectories for the second moment, the rest for the third.
    pub fn halves(n: usize) -> Self {
        let half = n.div_ceil(2);
        TrajectoryPartition {
            second: (0..half).collect(),
            third: (half..n).collect(),
        }
    }
}

/// Stack every trajectory and scale covariates by `1/σ_u`. Samples are
/// partitioned by trajectory membership.
pub fn stack_dataset(
    data: &TrajectoryDataset,
    horizon: usize,
    sigma_u: f64,
    partition: &TrajectoryPartition,
) -> Result<StackedRegression> {
    if sigma_u.is_nan() || sigma_u <= 0.0 {
        return Err(MldsError::InvalidParameter(
            "sigma_u must be positive".into(),
        ));
    }
    let n = data.n_trajectories();
    let mut role = vec![None; n];
    let tagged = partition
        .second
        .iter()
        .map(|&i| (i, 2u8))
        .chain(partition.third.iter().map(|&i| (i, 3u8)));
    for (i, tag) in tagged {
        if i >= n || role[i].is_some() {
            return Err(MldsError::InvalidParameter(format!(
                "trajectory {i} is out of range or assigned twice"
            )));
        }
        role[i] = Some(tag);
    }
    if role.iter().any(Option::is_none) {
        return Err(MldsError::InvalidParameter(
            "trajectory partition does not cover the dataset".into(),
        ));
    }

    let m = data.input_dim();
    let per_traj: Vec<Vec<(usize, DVector<f64>)>> = data
        .trajectories()
        .par_iter()
        .map(|tr| stack_inputs(&tr.inputs, m, horizon))
        .collect::<Result<_>>()?;
    let samples_per = data.horizon() / horizon;
    let total = n * samples_per;
    let d = horizon * m;
    let mut covariates = DMatrix::zeros(total, d);
    let mut responses = DVector::zeros(total);
    let mut provenance = Vec::with_capacity(total);
    let (mut second, mut third) = (Vec::new(), Vec::new());
    for (i, (tr, stacked)) in data.trajectories().iter().zip(per_traj).enumerate() {
        for (t, x) in stacked {
            let row = provenance.len();
            covariates
                .row_mut(row)
                .copy_from(&(x / sigma_u).transpose());
            responses[row] = tr.output(t);
            provenance.push((i, t));
            match role[i] {
                Some(2) => second.push(row),
                _ => third.push(row),
            }
        }
    }
    let regression = RegressionDataset::with_partition(covariates, responses, second, third)?;
    Ok(StackedRegression {
        regression,
        provenance,
    })
}

/// Options for [`mlds_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of Markov parameters `L`.
    pub horizon: usize,
    pub n_components: usize,
    pub sigma_u: f64,
    /// `None` splits trajectories into halves.
    pub partition: Option<TrajectoryPartition>,
    pub tpm: TpmParams,
}

impl FitConfig {
    pub fn new(horizon: usize, n_components: usize, sigma_u: f64) -> Self {
        FitConfig {
            horizon,
            n_components,
            sigma_u,
            partition: None,
            tpm: TpmParams::for_components(n_components),
        }
    }
}

/// Estimated mixture weights and truncated impulse responses.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovEstimate {
    pub weights: Vec<f64>,
    pub markov: Vec<MarkovVector>,
    pub low_confidence: bool,
    pub refinement_skipped: bool,
}

impl MarkovEstimate {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn horizon(&self) -> usize {
        self.markov.first().map_or(0, MarkovVector::horizon)
    }

    pub fn input_dim(&self) -> usize {
        self.markov.first().map_or(0, MarkovVector::input_dim)
    }

    fn from_regression(
        est: MixtureEstimate,
        horizon: usize,
        m: usize,
        sigma_u: f64,
    ) -> Result<Self> {
        let markov = est
            .coefficients
            .into_iter()
            .map(|b| MarkovVector::new(horizon, m, b / sigma_u))
            .collect::<Result<_>>()?;
        Ok(MarkovEstimate {
            weights: est.weights,
            markov,
            low_confidence: est.low_confidence,
            refinement_skipped: est.refinement_skipped,
        })
    }
}

fn validate_fit(data: &TrajectoryDataset, cfg: &FitConfig) -> Result<TrajectoryPartition> {
    if cfg.horizon == 0 || cfg.n_components == 0 {
        return Err(MldsError::InvalidParameter(
            "L and K must be positive".into(),
        ));
    }
    if data.horizon() < cfg.horizon {
        return Err(MldsError::InsufficientLength {
            t: data.horizon(),
            l: cfg.horizon,
        });
    }
    let d = cfg.horizon * data.input_dim();
    if cfg.n_components > d {
        return Err(MldsError::InvalidParameter(format!(
            "K = {} exceeds L·m = {d}",
            cfg.n_components
        )));
    }
    if data.n_trajectories() < 2 && cfg.partition.is_none() {
        return Err(MldsError::InvalidParameter(
            "at least two trajectories are needed to split the moments".into(),
        ));
    }
    Ok(cfg
        .partition
        .clone()
        .unwrap_or_else(|| TrajectoryPartition::halves(data.n_trajectories())))
}

fn fit_stacked(
    data: &TrajectoryDataset,
    cfg: &FitConfig,
    rng_seed: u64,
    refine: bool,
) -> Result<MarkovEstimate> {
    let partition = validate_fit(data, cfg)?;
    let stacked = stack_dataset(data, cfg.horizon, cfg.sigma_u, &partition)?;
    let mut est = mlr::mlr_fit(&stacked.regression, cfg.n_components, cfg.tpm, rng_seed)?;
    if refine {
        est = mlr::refine_first_moment(&est, &stacked.regression);
    }
    MarkovEstimate::from_regression(est, cfg.horizon, data.input_dim(), cfg.sigma_u)
}

/// Estimate the mixture weights and first `L` Markov parameters.
pub fn mlds_fit(
    data: &TrajectoryDataset,
    cfg: &FitConfig,
    rng_seed: u64,
) -> Result<MarkovEstimate> {
    fit_stacked(data, cfg, rng_seed, false)
}

/// [`mlds_fit`] followed by first-moment weight refinement over all stacked
/// samples.
pub fn mlds_fit_refined(
    data: &TrajectoryDataset,
    cfg: &FitConfig,
    rng_seed: u64,
) -> Result<MarkovEstimate> {
    fit_stacked(data, cfg, rng_seed, true)
}

/// Per-trajectory least-squares Markov parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsEstimate {
    pub markov: MarkovVector,
    /// Fewer usable rows than unknowns; the minimum-norm solution was used.
    pub rank_deficient: bool,
}

/// Regress `y_t` on `[u_{t-1}', …, u_{t-L}']'` over every `t ∈ [L, T]`.
pub fn ols_markov(traj: &Trajectory, input_dim: usize, horizon: usize) -> Result<OlsEstimate> {
    let t_len = traj.len();
    if horizon == 0 || input_dim == 0 {
        return Err(MldsError::InvalidParameter(
            "L and m must be positive".into(),
        ));
    }
    if t_len < horizon {
        return Err(MldsError::InsufficientLength {
            t: t_len,
            l: horizon,
        });
    }
    let m = input_dim;
    let d = horizon * m;
    let rows = t_len - horizon + 1;
    let mut x = DMatrix::zeros(rows, d);
    let mut y = DVector::zeros(rows);
    for (r, t) in (horizon..=t_len).enumerate() {
        for lag in 1..=horizon {
            for j in 0..m {
                x[(r, (lag - 1) * m + j)] = traj.inputs[(t - lag) * m + j];
            }
        }
        y[r] = traj.output(t);
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-12).max(f64::MIN_POSITIVE);
    let g = if smax > 0.0 {
        svd.solve(&y, eps)
            .map_err(|e| MldsError::InvalidParameter(e.to_string()))?
    } else {
        DVector::zeros(d)
    };
    Ok(OlsEstimate {
        markov: MarkovVector::new(horizon, m, g)?,
        rank_deficient: rows < d,
    })
}

/// State-space realization from Markov parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub system: StateSpace,
    pub hankel_singular_values: Vec<f64>,
    /// Numerical rank actually realized; the remaining states are
    /// disconnected (zero rows of `B`, zero columns of `C`).
    pub effective_order: usize,
    pub order_mismatch: bool,
    /// Spectral radius of the realized `A` is below one.
    pub stable: bool,
}

/// Balanced Ho-Kalman realization of order `n`.
///
/// Layout: with `r = ⌊(L−1)/2⌋` block rows and `c = L−1−r` block columns,
/// `H_{ij} = g(i+j+1)` and `H⁺_{ij} = g(i+j+2)` (zero-based `i`, `j`), so the
/// two Hankel matrices use `g(1..L)`. From `H ≈ U Σ V'` at rank `n`,
/// `O = U Σ^{1/2}`, `Q = Σ^{1/2} V'`, `C` is the first row of `O`, `B` the
/// first `m` columns of `Q` and `A = O⁺ H⁺ Q⁺`.
pub fn ho_kalman(g: &MarkovVector, n: usize) -> Result<Realization> {
    let l = g.horizon();
    if n == 0 {
        return Err(MldsError::InvalidParameter("order must be positive".into()));
    }
    if l < 2 * n + 1 {
        return Err(MldsError::InsufficientHorizon { l, n });
    }
    let m = g.input_dim();
    let rows = (l - 1) / 2;
    let cols = l - 1 - rows;
    let hankel = |shift: usize| {
        DMatrix::from_fn(rows, cols * m, |i, jc| {
            let (j, k) = (jc / m, jc % m);
            g.block(i + j + 1 + shift)[k]
        })
    };
    let h = hankel(0);
    let h_shift = hankel(1);
    let svd = h.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V'");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let top = sv.first().copied().unwrap_or(0.0);
    let rank_tol = top * 1e-9;
    let effective = sv.iter().take(n).filter(|s| **s > rank_tol).count();
    let mismatch = effective < n || sv.get(n).is_some_and(|next| *next > 0.1 * sv[n - 1]);

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut c = DMatrix::zeros(1, n);
    if effective > 0 {
        let r = effective;
        let mut obs = DMatrix::zeros(rows, r);
        let mut ctrl = DMatrix::zeros(r, cols * m);
        let mut obs_pinv = DMatrix::zeros(r, rows);
        let mut ctrl_pinv = DMatrix::zeros(cols * m, r);
        for (col, &idx) in order.iter().take(r).enumerate() {
            let s = sv[col].sqrt();
            obs.set_column(col, &(u.column(idx) * s));
            ctrl.set_row(col, &(vt.row(idx) * s));
            obs_pinv.set_row(col, &(u.column(idx).transpose() / s));
            ctrl_pinv.set_column(col, &(vt.row(idx).transpose() / s));
        }
        let a_min = &obs_pinv * &h_shift * &ctrl_pinv;
        a.view_mut((0, 0), (r, r)).copy_from(&a_min);
        b.view_mut((0, 0), (r, m)).copy_from(&ctrl.columns(0, m));
        c.view_mut((0, 0), (1, r)).copy_from(&obs.rows(0, 1));
    }
    let system = StateSpace::unchecked_stability(a, b, c)?;
    Ok(Realization {
        stable: system.spectral_radius() < 1.0,
        system,
        hankel_singular_values: sv,
        effective_order: effective,
        order_mismatch: mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::{
        generate_dataset, impulse_response, random_stable_system, respond, MixtureModel,
        NoiseConfig,
    };
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn inputs_of(values: &[f64]) -> Vec<f64> {
        values.to_vec()
    }

    #[test]
    fn stack_smallest_case() {
        let s = stack_inputs(&inputs_of(&[10.0, 11.0]), 1, 2).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, 2);
        assert_eq!(s[0].1.as_slice(), &[11.0, 10.0]);
    }

    #[test]
    fn stack_discards_remainder() {
        let s = stack_inputs(&inputs_of(&[0.0, 1.0, 2.0, 3.0, 4.0]), 1, 2).unwrap();
        let times: Vec<usize> = s.iter().map(|(t, _)| *t).collect();
        assert_eq!(times, vec![2, 4]);
        assert_eq!(s[0].1.as_slice(), &[1.0, 0.0]);
        assert_eq!(s[1].1.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn stack_too_short() {
        assert!(matches!(
            stack_inputs(&[1.0, 2.0], 1, 3),
            Err(MldsError::InsufficientLength { t: 2, l: 3 })
        ));
    }

    #[test]
    fn stack_index_arithmetic() {
        let mut rng = rng_from_seed(1);
        let m = 2;
        let u: Vec<f64> = (0..20 * m).map(|_| rng.sample(StandardNormal)).collect();
        let s = stack_inputs(&u, m, 4).unwrap();
        assert_eq!(s.len(), 5);
        for (q, (t, x)) in s.iter().enumerate() {
            assert_eq!(*t, 4 * (q + 1));
            for lag in 1..=4 {
                for j in 0..m {
                    assert_eq!(x[(lag - 1) * m + j], u[(t - lag) * m + j]);
                }
            }
        }
    }

    fn fir_system(gain: f64) -> StateSpace {
        StateSpace::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, gain),
        )
        .unwrap()
    }

    #[test]
    fn single_fir_component_is_recovered() {
        let ss = fir_system(1.3);
        let model = MixtureModel::new(vec![1.0], vec![ss.clone()]).unwrap();
        let noise = NoiseConfig {
            sigma_u: 1.0,
            sigma_w1: 0.0,
            sigma_w2: 0.0,
        };
        // The third-moment weight has relative standard deviation ≈ 12.5/√N₃
        // for one Gaussian component, so 0.05 needs N₃ in the 10⁶ range.
        let data = generate_dataset(&model, 20_000, 300, &noise, 4).unwrap();
        let est = mlds_fit(&data, &FitConfig::new(3, 1, 1.0), 1).unwrap();
        let truth = impulse_response(&ss, 3);
        assert!(est.markov[0].distance(&truth) < 0.05, "{:?}", est.markov[0]);
    }

    #[test]
    fn fit_rejects_short_trajectories() {
        let model = MixtureModel::new(vec![1.0], vec![fir_system(1.0)]).unwrap();
        let data = generate_dataset(&model, 4, 5, &NoiseConfig::default(), 1).unwrap();
        assert!(matches!(
            mlds_fit(&data, &FitConfig::new(6, 1, 1.0), 0),
            Err(MldsError::InsufficientLength { .. })
        ));
        assert!(mlds_fit(&data, &FitConfig::new(2, 3, 1.0), 0).is_err());
    }

    #[test]
    fn provenance_is_a_bijection_with_disjoint_inputs() {
        let model = MixtureModel::new(vec![1.0], vec![fir_system(1.0)]).unwrap();
        let data = generate_dataset(&model, 7, 23, &NoiseConfig::default(), 3).unwrap();
        let l = 4;
        let stacked = stack_dataset(&data, l, 1.0, &TrajectoryPartition::halves(7)).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for &(i, t) in &stacked.provenance {
            assert!(t % l == 0 && t >= l && t <= 23);
            assert!(seen.insert((i, t)));
        }
        assert_eq!(seen.len(), 7 * (23 / l));
        // raw input windows [t-L, t) never overlap within a trajectory
        for i in 0..7 {
            let mut used = std::collections::BTreeSet::new();
            for &(_, t) in stacked.provenance.iter().filter(|(j, _)| *j == i) {
                for s in t - l..t {
                    assert!(used.insert(s));
                }
            }
        }
        // partition follows trajectory membership
        for &row in stacked.regression.second_moment_indices() {
            assert!(stacked.provenance[row].0 < 4);
        }
        for &row in stacked.regression.third_moment_indices() {
            assert!(stacked.provenance[row].0 >= 4);
        }
    }

    #[test]
    fn ols_exact_on_noiseless_fir() {
        let mut rng = rng_from_seed(3);
        let g_true = [0.5, -1.0, 0.25];
        let inputs: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        // y_t = Σ_j g(j) u_{t-j}
        let outputs: Vec<f64> = (1..=200)
            .map(|t: usize| (1..=3.min(t)).map(|j| g_true[j - 1] * inputs[t - j]).sum())
            .collect();
        let tr = Trajectory {
            inputs,
            outputs,
            label: None,
        };
        let est = ols_markov(&tr, 1, 3).unwrap();
        for (a, b) in est.markov.values().iter().zip(g_true) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(!est.rank_deficient);
    }

    #[test]
    fn ols_zero_output_and_underdetermined() {
        let tr = Trajectory {
            inputs: (0..10).map(|i| i as f64).collect(),
            outputs: vec![0.0; 10],
            label: None,
        };
        let est = ols_markov(&tr, 1, 3).unwrap();
        assert!(est.markov.values().iter().all(|v| *v == 0.0));
        let short = ols_markov(&tr, 1, 6).unwrap();
        assert!(short.rank_deficient);
    }

    #[test]
    fn ols_noisy_random_systems() {
        let noise = NoiseConfig::default();
        let mut total = 0.0;
        for seed in 0..10 {
            let ss = random_stable_system(3, 1, 0.6 + 0.03 * seed as f64, seed).unwrap();
            let tr = crate::lds::rollout(&ss, 960, &noise, seed + 100);
            let est = ols_markov(&tr, 1, 7).unwrap();
            total += est.markov.distance(&impulse_response(&ss, 7));
        }
        assert!(total / 10.0 < 0.1, "{}", total / 10.0);
    }

    fn reproduces(real: &Realization, g: &MarkovVector, tol: f64) -> bool {
        impulse_response(&real.system, g.horizon()).distance(g) < tol
    }

    #[test]
    fn ho_kalman_scalar_geometric() {
        let g = MarkovVector::new(5, 1, DVector::from_vec(vec![1.0, 0.5, 0.25, 0.125, 0.0625]))
            .unwrap();
        let real = ho_kalman(&g, 1).unwrap();
        assert!((real.system.a()[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((real.system.b()[(0, 0)] * real.system.c()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(reproduces(&real, &g, 1e-10));
        assert!(!real.order_mismatch);
    }

    #[test]
    fn ho_kalman_round_trip_order_three() {
        for seed in 0..20 {
            let ss = random_stable_system(3, 1, 0.75, seed).unwrap();
            let g = impulse_response(&ss, 7);
            let real = ho_kalman(&g, 3).unwrap();
            assert!(reproduces(&real, &g, 1e-8), "seed {seed}");
        }
    }

    #[test]
    fn ho_kalman_multi_input() {
        let ss = random_stable_system(2, 2, 0.8, 4).unwrap();
        let g = impulse_response(&ss, 5);
        assert!(reproduces(&ho_kalman(&g, 2).unwrap(), &g, 1e-8));
    }

    #[test]
    fn ho_kalman_overparameterized() {
        let ss = random_stable_system(1, 1, 0.7, 9).unwrap();
        let g = impulse_response(&ss, 7);
        let real = ho_kalman(&g, 3).unwrap();
        assert!(real.order_mismatch);
        assert_eq!(real.effective_order, 1);
        assert_eq!(real.system.order(), 3);
        assert!(reproduces(&real, &g, 1e-10));
    }

    #[test]
    fn ho_kalman_rejects_short_horizon() {
        let g = MarkovVector::new(4, 1, DVector::from_element(4, 1.0)).unwrap();
        assert!(matches!(
            ho_kalman(&g, 2),
            Err(MldsError::InsufficientHorizon { l: 4, n: 2 })
        ));
    }

    #[test]
    fn ho_kalman_is_representation_independent() {
        let ss = random_stable_system(3, 1, 0.8, 31).unwrap();
        let mut outs = Vec::new();
        for seed in [1u64, 2] {
            let mut rng = rng_from_seed(seed);
            let s = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal))
                + DMatrix::identity(3, 3) * 3.0;
            let other = ss.transformed(&s).unwrap();
            assert_ne!(other.a(), ss.a());
            let real = ho_kalman(&impulse_response(&other, 7), 3).unwrap();
            outs.push(impulse_response(&real.system, 7));
        }
        assert!(outs[0].distance(&outs[1]) < 1e-8);
        assert!(outs[0].distance(&impulse_response(&ss, 7)) < 1e-8);
    }

    #[test]
    fn scaling_round_trip() {
        // Noiseless data, inputs scaled by c together with sigma_u.
        let systems: Vec<StateSpace> = (0..2)
            .map(|s| random_stable_system(2, 1, 0.5, 40 + s).unwrap())
            .collect();
        let model = MixtureModel::new(vec![0.5, 0.5], systems).unwrap();
        let base = NoiseConfig {
            sigma_u: 1.0,
            sigma_w1: 0.0,
            sigma_w2: 0.0,
        };
        let data = generate_dataset(&model, 300, 40, &base, 7).unwrap();
        let c = 2.5;
        let scaled: Vec<Trajectory> = data
            .trajectories()
            .iter()
            .map(|tr| {
                let inputs: Vec<f64> = tr.inputs.iter().map(|u| u * c).collect();
                let k = tr.label.unwrap();
                let outputs = respond(&model.systems()[k], &inputs);
                Trajectory {
                    inputs,
                    outputs,
                    label: tr.label,
                }
            })
            .collect();
        let scaled = TrajectoryDataset::new(40, 1, scaled).unwrap();
        let a = mlds_fit(&data, &FitConfig::new(4, 2, 1.0), 3).unwrap();
        let b = mlds_fit(&scaled, &FitConfig::new(4, 2, c), 3).unwrap();
        for (x, y) in a.markov.iter().zip(&b.markov) {
            assert!(x.distance(y) < 1e-10);
        }
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ho_kalman_reproduces_random_systems(seed in 0u64..100_000, n in 1usize..=3) {
            let ss = random_stable_system(n, 1, 0.7, seed).unwrap();
            let g = impulse_response(&ss, 2 * n + 1);
            let real = ho_kalman(&g, n).unwrap();
            prop_assert!(reproduces(&real, &g, 1e-8));
        }
    }
}
