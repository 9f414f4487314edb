//! Mixture of linear regressions by whitened third-moment decomposition.
//!
//! For isotropic Gaussian covariates and `y = ⟨β_k, x⟩ + noise`,
//!
//! ```text
//! M2 = E[ y² (x⊗x − I) ] / 2           = Σ p_k β_k⊗β_k
//! M3 = E[ y³ (x^⊗3 − ℰ(x)) ] / 6       = Σ p_k β_k^⊗3
//! ```
//!
//! with `ℰ(x) = Σ_j x⊗e_j⊗e_j + e_j⊗x⊗e_j + e_j⊗e_j⊗x`. A whitening matrix
//! `W` with `W'M2W = I` makes `{√p_k W'β_k}` orthonormal, so `M3(W,W,W)`
//! is an orthogonal tensor with weights `1/√p_k` that the robust tensor
//! power method can decompose exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, MldsError, Result};
use crate::tensor::{robust_tpm, SymTensor3, TpmParams};

/// Default floor on the K-th eigenvalue of the second moment.
pub const DEGENERACY_THRESHOLD: f64 = 1e-10;

/// Floor applied to non-positive decomposition weights before dewhitening.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Covariate/response pairs with the split used for the two moments.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    covariates: DMatrix<f64>,
    responses: DVector<f64>,
    second: Vec<usize>,
    third: Vec<usize>,
}

impl RegressionDataset {
    /// Rows of `covariates` are samples. The first `⌈N/2⌉` samples feed the
    /// second moment and the rest the third.
    pub fn new(covariates: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        let n = covariates.nrows();
        let half = n.div_ceil(2);
        Self::with_partition(
            covariates,
            responses,
            (0..half).collect(),
            (half..n).collect(),
        )
    }

    pub fn with_partition(
        covariates: DMatrix<f64>,
        responses: DVector<f64>,
        second: Vec<usize>,
        third: Vec<usize>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        check_dim("responses", n, responses.len())?;
        if covariates.ncols() == 0 {
            return Err(MldsError::InvalidParameter(
                "covariate dimension must be positive".into(),
            ));
        }
        if second.is_empty() || third.is_empty() {
            return Err(MldsError::InvalidParameter(
                "both moment partitions must be nonempty".into(),
            ));
        }
        let mut seen = vec![false; n];
        for &i in second.iter().chain(&third) {
            if i >= n || seen[i] {
                return Err(MldsError::InvalidParameter(format!(
                    "partition index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(MldsError::InvalidParameter(
                "partition does not cover every sample".into(),
            ));
        }
        Ok(RegressionDataset {
            covariates,
            responses,
            second,
            third,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }
    pub fn len(&self) -> usize {
        self.covariates.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.covariates.nrows() == 0
    }
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }
    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }
    pub fn second_moment_indices(&self) -> &[usize] {
        &self.second
    }
    pub fn third_moment_indices(&self) -> &[usize] {
        &self.third
    }
}

/// Estimated weights and regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEstimate {
    pub weights: Vec<f64>,
    pub coefficients: Vec<DVector<f64>>,
    /// Set when a decomposition weight had to be floored.
    pub low_confidence: bool,
    /// Set when first-moment refinement was requested but the coefficient
    /// set was rank deficient, so the weights were left as they were.
    pub refinement_skipped: bool,
}

impl MixtureEstimate {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone)]
pub struct WhiteningMatrix {
    /// `d × K`, `W = U Σ^{-1/2}`.
    pub w: DMatrix<f64>,
    /// `d × K` pseudo-inverse of `W'`, `U Σ^{1/2}`.
    pub pinv_wt: DMatrix<f64>,
    /// The K retained eigenvalues, descending.
    pub singular_values: Vec<f64>,
}

/// `(1/2N₂) Σ y² (x⊗x − I)` over the second-moment partition.
pub fn estimate_m2(data: &RegressionDataset) -> DMatrix<f64> {
    let d = data.dim();
    let idx = &data.second;
    let mut scaled = DMatrix::zeros(idx.len(), d);
    let mut y2_sum = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        let y = data.responses[i];
        y2_sum += y * y;
        for c in 0..d {
            scaled[(r, c)] = y * data.covariates[(i, c)];
        }
    }
    let mut m2 = scaled.tr_mul(&scaled);
    for c in 0..d {
        m2[(c, c)] -= y2_sum;
    }
    m2 /= 2.0 * idx.len() as f64;
    (&m2 + m2.transpose()) * 0.5
}

/// Rank-K whitening from the leading eigenpairs of a symmetric matrix.
pub fn whitening_from_m2(m2: &DMatrix<f64>, k: usize) -> Result<WhiteningMatrix> {
    whitening_with_threshold(m2, k, DEGENERACY_THRESHOLD)
}

pub fn whitening_with_threshold(
    m2: &DMatrix<f64>,
    k: usize,
    threshold: f64,
) -> Result<WhiteningMatrix> {
    let d = m2.nrows();
    check_dim("second moment columns", d, m2.ncols())?;
    if k == 0 || k > d {
        return Err(MldsError::InvalidParameter(format!(
            "K = {k} must lie in 1..={d}"
        )));
    }
    let sym = (m2 + m2.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = &order[..k];
    let sigma_k = eig.eigenvalues[top[k - 1]];
    if sigma_k.is_nan() || sigma_k <= threshold {
        return Err(MldsError::DegenerateMixture { sigma_k });
    }
    let mut w = DMatrix::zeros(d, k);
    let mut pinv_wt = DMatrix::zeros(d, k);
    let mut values = Vec::with_capacity(k);
    for (col, &j) in top.iter().enumerate() {
        let s = eig.eigenvalues[j];
        let u = eig.eigenvectors.column(j);
        w.set_column(col, &(u / s.sqrt()));
        pinv_wt.set_column(col, &(u * s.sqrt()));
        values.push(s);
    }
    Ok(WhiteningMatrix {
        w,
        pinv_wt,
        singular_values: values,
    })
}

/// `(1/6N₃) Σ y³ [(W'x)^⊗3 − ℰ(x)(W,W,W)]` over the third-moment partition.
///
/// With `z = W'x` and `G = W'W`, `ℰ(x)(W,W,W)_{abc} = z_a G_bc + z_b G_ac + z_c G_ab`.
pub fn estimate_whitened_m3(
    data: &RegressionDataset,
    whitening: &WhiteningMatrix,
) -> Result<SymTensor3> {
    let w = &whitening.w;
    check_dim("whitening rows", data.dim(), w.nrows())?;
    let k = w.ncols();
    let g = w.tr_mul(w);
    let triples: Vec<(usize, usize, usize)> = (0..k)
        .flat_map(|a| (a..k).flat_map(move |b| (b..k).map(move |c| (a, b, c))))
        .collect();
    let mut acc = vec![0.0; triples.len()];
    let mut z = DVector::<f64>::zeros(k);
    for &i in &data.third {
        let y = data.responses[i];
        let y3 = y * y * y;
        if y3 == 0.0 {
            continue;
        }
        let x = data.covariates.row(i);
        for a in 0..k {
            z[a] = x
                .iter()
                .zip(w.column(a).iter())
                .map(|(xi, wi)| xi * wi)
                .sum();
        }
        for (slot, &(a, b, c)) in acc.iter_mut().zip(&triples) {
            let cube = z[a] * z[b] * z[c];
            let corr = z[a] * g[(b, c)] + z[b] * g[(a, c)] + z[c] * g[(a, b)];
            *slot += y3 * (cube - corr);
        }
    }
    let scale = 1.0 / (6.0 * data.third.len() as f64);
    let mut values = acc.into_iter();
    Ok(SymTensor3::from_sorted_fn(k, |_, _, _| {
        values.next().expect("one value per sorted triple") * scale
    }))
}

/// Decompose a whitened third moment and map the factors back:
/// `p̂ = 1/λ²`, `β̂ = λ (W')⁺ v`.
pub fn dewhiten_decomposition(
    m3_whitened: &SymTensor3,
    whitening: &WhiteningMatrix,
    params: TpmParams,
    rng_seed: u64,
) -> Result<MixtureEstimate> {
    let k = whitening.w.ncols();
    let factors = robust_tpm(m3_whitened, k, params, rng_seed)?;
    let mut low_confidence = false;
    let mut weights = Vec::with_capacity(k);
    let mut coefficients = Vec::with_capacity(k);
    for f in factors {
        let f = f.canonicalized();
        let mut scale = f.weight;
        if scale.is_nan() || scale <= 0.0 {
            scale = WEIGHT_FLOOR;
            low_confidence = true;
        }
        weights.push(1.0 / (scale * scale));
        coefficients.push(&whitening.pinv_wt * &f.vector * scale);
    }
    Ok(MixtureEstimate {
        weights,
        coefficients,
        low_confidence,
        refinement_skipped: false,
    })
}

/// Recover a mixture from given (for example, exact population) moments
/// `M2` and `M3` in the original coordinates.
pub fn recover_from_moments(
    m2: &DMatrix<f64>,
    m3: &SymTensor3,
    k: usize,
    params: TpmParams,
    rng_seed: u64,
) -> Result<MixtureEstimate> {
    let whitening = whitening_from_m2(m2, k)?;
    let m3w = m3.apply_matrix3(&whitening.w)?;
    dewhiten_decomposition(&m3w, &whitening, params, rng_seed)
}

/// End-to-end moment estimator: second moment, whitening, whitened third
/// moment, tensor power method, dewhitening.
pub fn mlr_fit(
    data: &RegressionDataset,
    k: usize,
    params: TpmParams,
    rng_seed: u64,
) -> Result<MixtureEstimate> {
    let m2 = estimate_m2(data);
    let whitening = whitening_from_m2(&m2, k)?;
    let m3w = estimate_whitened_m3(data, &whitening)?;
    dewhiten_decomposition(&m3w, &whitening, params, rng_seed)
}

/// `(1/N) Σ x_i y_i` over every sample.
pub fn first_moment(data: &RegressionDataset) -> DVector<f64> {
    data.covariates.tr_mul(&data.responses) / data.len() as f64
}

/// Re-fit the weights against the first moment with the coefficients held
/// fixed: minimize `‖Σ p_k β̂_k − M̂₁‖²` subject to `Σ p_k = 1`, then floor at
/// `1e-6` and renormalize.
pub fn refine_first_moment(est: &MixtureEstimate, data: &RegressionDataset) -> MixtureEstimate {
    refine_weights(est, &first_moment(data))
}

/// [`refine_first_moment`] against a precomputed first moment.
pub fn refine_weights(est: &MixtureEstimate, m1: &DVector<f64>) -> MixtureEstimate {
    let k = est.n_components();
    let d = m1.len();
    if k == 0 || est.coefficients.iter().any(|b| b.len() != d) {
        return MixtureEstimate {
            refinement_skipped: true,
            ..est.clone()
        };
    }
    let b = DMatrix::from_columns(&est.coefficients);
    let sv = b.singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), s| {
        (hi.max(*s), lo.min(*s))
    });
    if k > d || smax.is_nan() || smax <= 0.0 || smin <= 1e-10 * smax {
        return MixtureEstimate {
            refinement_skipped: true,
            ..est.clone()
        };
    }
    // KKT system [B'B 1; 1' 0] [p; μ] = [B'M1; 1].
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    kkt.view_mut((0, 0), (k, k)).copy_from(&b.tr_mul(&b));
    let mut rhs = DVector::zeros(k + 1);
    rhs.rows_mut(0, k).copy_from(&b.tr_mul(m1));
    for i in 0..k {
        kkt[(i, k)] = 1.0;
        kkt[(k, i)] = 1.0;
    }
    rhs[k] = 1.0;
    let Some(sol) = kkt.lu().solve(&rhs) else {
        return MixtureEstimate {
            refinement_skipped: true,
            ..est.clone()
        };
    };
    let floored: Vec<f64> = (0..k).map(|i| sol[i].max(WEIGHT_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    MixtureEstimate {
        weights: floored.iter().map(|p| p / total).collect(),
        coefficients: est.coefficients.clone(),
        low_confidence: est.low_confidence,
        refinement_skipped: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::tensor::outer3;
    use itertools::Itertools;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn population_moments(p: &[f64], betas: &[DVector<f64>]) -> (DMatrix<f64>, SymTensor3) {
        let d = betas[0].len();
        let mut m2 = DMatrix::zeros(d, d);
        let mut m3 = SymTensor3::zeros(d);
        for (pk, b) in p.iter().zip(betas) {
            m2 += b * b.transpose() * *pk;
            m3.add_scaled(*pk, &outer3(b)).unwrap();
        }
        (m2, m3)
    }

    fn best_match(est: &MixtureEstimate, p: &[f64], betas: &[DVector<f64>]) -> f64 {
        (0..p.len())
            .permutations(p.len())
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(t, &e)| {
                        (est.weights[e] - p[t])
                            .abs()
                            .max((&est.coefficients[e] - &betas[t]).norm())
                    })
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Noiseless MLR samples `y = ⟨β_k, x⟩` with `x ~ N(0, I)`.
    fn sample_mlr(n: usize, p: &[f64], betas: &[DVector<f64>], seed: u64) -> RegressionDataset {
        let mut rng = rng_from_seed(seed);
        let d = betas[0].len();
        let x = gaussian_matrix(n, d, &mut rng);
        let y = DVector::from_fn(n, |i, _| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = 0;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                k = j;
                if u < acc {
                    break;
                }
            }
            x.row(i).transpose().dot(&betas[k])
        });
        RegressionDataset::new(x, y).unwrap()
    }

    #[test]
    fn partition_validation() {
        let x = DMatrix::zeros(4, 2);
        let y = DVector::zeros(4);
        assert!(
            RegressionDataset::with_partition(x.clone(), y.clone(), vec![0, 1], vec![2]).is_err()
        );
        assert!(
            RegressionDataset::with_partition(x.clone(), y.clone(), vec![0, 1], vec![1, 2, 3])
                .is_err()
        );
        assert!(
            RegressionDataset::with_partition(x.clone(), y.clone(), vec![], vec![0, 1, 2, 3])
                .is_err()
        );
        let ok = RegressionDataset::new(x, y).unwrap();
        assert_eq!(ok.second_moment_indices(), &[0, 1]);
        assert_eq!(ok.third_moment_indices(), &[2, 3]);
    }

    #[test]
    fn m2_single_sample() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let data = RegressionDataset::with_partition(x, y, vec![0], vec![1]).unwrap();
        let m2 = estimate_m2(&data);
        assert_eq!(m2, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -0.5]));
    }

    #[test]
    fn m2_zero_response() {
        let mut rng = rng_from_seed(1);
        let data =
            RegressionDataset::new(gaussian_matrix(10, 3, &mut rng), DVector::zeros(10)).unwrap();
        assert!(estimate_m2(&data).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn m2_monte_carlo_unbiased() {
        let beta = DVector::from_vec(vec![1.0, 0.0]);
        let data = sample_mlr(2_000_000, &[1.0], std::slice::from_ref(&beta), 4);
        let m2 = estimate_m2(&data);
        let err = (m2 - &beta * beta.transpose()).norm(); // Frobenius ≥ operator
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn whitening_examples() {
        let w = whitening_from_m2(&DMatrix::identity(3, 3), 3).unwrap();
        let check = w.w.transpose() * w.w.clone();
        assert!((check - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);

        let w = whitening_from_m2(&DMatrix::from_element(1, 1, 4.0), 1).unwrap();
        assert!((w.w[(0, 0)].abs() - 0.5).abs() < 1e-15);
        assert!((w.pinv_wt[(0, 0)] * w.w[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn whitening_orthonormalizes_components() {
        let mut rng = rng_from_seed(12);
        let betas: Vec<DVector<f64>> = (0..3)
            .map(|_| gaussian_matrix(7, 1, &mut rng).column(0).into_owned())
            .collect();
        let p = [0.5, 0.3, 0.2];
        let (m2, _) = population_moments(&p, &betas);
        let w = whitening_from_m2(&m2, 3).unwrap();
        let gram = DMatrix::from_fn(3, 3, |i, j| {
            let a = w.w.transpose() * &betas[i] * p[i].sqrt();
            let b = w.w.transpose() * &betas[j] * p[j].sqrt();
            a.dot(&b)
        });
        assert!((gram - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
        let ident = w.w.transpose() * &m2 * &w.w;
        assert!((ident - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);
        // pinv_wt spans the same space as W and inverts W'
        let inv = w.w.transpose() * &w.pinv_wt;
        assert!((inv - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn whitening_rejects_degenerate() {
        let b = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let m2 = &b * b.transpose();
        assert!(matches!(
            whitening_from_m2(&m2, 2),
            Err(MldsError::DegenerateMixture { .. })
        ));
        assert!(whitening_from_m2(&m2, 4).is_err());
    }

    #[test]
    fn m3_zero_response() {
        let mut rng = rng_from_seed(3);
        let data =
            RegressionDataset::new(gaussian_matrix(10, 3, &mut rng), DVector::zeros(10)).unwrap();
        let w = whitening_from_m2(&DMatrix::identity(3, 3), 2).unwrap();
        let t = estimate_whitened_m3(&data, &w).unwrap();
        assert!(t.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn m3_hand_expansion() {
        // d = K = 2, W = I, x = e1, y³ = 6, N₃ = 1
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 6f64.cbrt()]);
        let data = RegressionDataset::with_partition(x, y, vec![0], vec![1]).unwrap();
        let w = WhiteningMatrix {
            w: DMatrix::identity(2, 2),
            pinv_wt: DMatrix::identity(2, 2),
            singular_values: vec![1.0, 1.0],
        };
        let t = estimate_whitened_m3(&data, &w).unwrap();
        let tol = 1e-12;
        assert!((t.get(0, 0, 0) + 2.0).abs() < tol);
        for (i, j, k) in [(0, 1, 1), (1, 0, 1), (1, 1, 0)] {
            assert!((t.get(i, j, k) + 1.0).abs() < tol);
        }
        for (i, j, k) in [(0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)] {
            assert!(t.get(i, j, k).abs() < tol);
        }
    }

    #[test]
    fn m3_monte_carlo_unbiased() {
        let beta = DVector::from_vec(vec![1.0, 0.5, 0.0]);
        let p = [1.0];
        // 10⁶ samples in the third-moment half
        let data = sample_mlr(2_000_000, &p, std::slice::from_ref(&beta), 8);
        let (m2, m3) = population_moments(&p, &[beta]);
        let w = whitening_from_m2(&m2, 1).unwrap();
        let est = estimate_whitened_m3(&data, &w).unwrap();
        let mut diff = est.clone();
        diff.add_scaled(-1.0, &m3.apply_matrix3(&w.w).unwrap())
            .unwrap();
        let err = diff.op_norm_estimate(20, 100, 1);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn exact_moments_recover_mixture() {
        let betas = vec![
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        ];
        let p = [0.7, 0.3];
        let (m2, m3) = population_moments(&p, &betas);
        let est = recover_from_moments(&m2, &m3, 2, TpmParams::for_components(2), 5).unwrap();
        assert!(best_match(&est, &p, &betas) < 1e-6);
        assert!(!est.low_confidence);
    }

    #[test]
    fn exact_moments_dewhitening_consistency() {
        let mut rng = rng_from_seed(77);
        let betas: Vec<DVector<f64>> = (0..3)
            .map(|_| gaussian_matrix(6, 1, &mut rng).column(0).into_owned())
            .collect();
        let p = [0.2, 0.35, 0.45];
        let (m2, m3) = population_moments(&p, &betas);
        let w = whitening_from_m2(&m2, 3).unwrap();
        let m3w = m3.apply_matrix3(&w.w).unwrap();
        let factors = robust_tpm(&m3w, 3, TpmParams::for_components(3), 2).unwrap();
        for f in factors {
            let f = f.canonicalized();
            // λ = 1/√p_k for the matching component
            let k = p
                .iter()
                .position(|pk| (f.weight - 1.0 / pk.sqrt()).abs() < 1e-8)
                .expect("weight matches some 1/sqrt(p_k)");
            let beta = &w.pinv_wt * &f.vector * f.weight;
            assert!((beta - &betas[k]).norm() < 1e-8);
        }
    }

    #[test]
    fn single_component_monte_carlo() {
        let beta = DVector::from_vec(vec![0.8, -0.4, 0.3]);
        let data = sample_mlr(100_000, &[1.0], std::slice::from_ref(&beta), 21);
        let est = mlr_fit(&data, 1, TpmParams::for_components(1), 3).unwrap();
        assert!((&est.coefficients[0] - &beta).norm() < 0.05);
        assert!((est.weights[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn duplicated_component_is_degenerate() {
        let beta = DVector::from_vec(vec![1.0, 0.5, -0.2]);
        let data = sample_mlr(20_000, &[0.5, 0.5], &[beta.clone(), beta], 2);
        assert!(matches!(
            mlr_fit(&data, 2, TpmParams::for_components(2), 1),
            Err(MldsError::DegenerateMixture { .. })
        ));
    }

    fn estimate(weights: Vec<f64>, coefficients: Vec<DVector<f64>>) -> MixtureEstimate {
        MixtureEstimate {
            weights,
            coefficients,
            low_confidence: false,
            refinement_skipped: false,
        }
    }

    #[test]
    fn refinement_fixed_point_and_separable() {
        let b1 = DVector::from_vec(vec![1.0, 0.0]);
        let b2 = DVector::from_vec(vec![0.0, 1.0]);
        let est = estimate(vec![0.7, 0.3], vec![b1.clone(), b2.clone()]);
        let m1 = &b1 * 0.7 + &b2 * 0.3;
        let out = refine_weights(&est, &m1);
        assert!((out.weights[0] - 0.7).abs() < 1e-10);
        assert!((out.weights[1] - 0.3).abs() < 1e-10);

        let start = estimate(vec![0.5, 0.5], vec![b1, b2]);
        let out = refine_weights(&start, &DVector::from_vec(vec![0.7, 0.3]));
        assert!((out.weights[0] - 0.7).abs() < 1e-12);
        assert!((out.weights[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn refinement_satisfies_kkt() {
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let betas: Vec<DVector<f64>> = (0..3)
                .map(|_| gaussian_matrix(6, 1, &mut rng).column(0).into_owned())
                .collect();
            let m1 = gaussian_matrix(6, 1, &mut rng).column(0).into_owned() * 0.3;
            let est = estimate(vec![0.3, 0.3, 0.4], betas.clone());
            let out = refine_weights(&est, &m1);
            let total: f64 = out.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let b = DMatrix::from_columns(&betas);
            let resid = (&b * DVector::from_vec(out.weights.clone()) - &m1).norm();
            let unconstrained = b.clone().svd(true, true).solve(&m1, 1e-12).unwrap();
            let free_resid = (&b * unconstrained - &m1).norm();
            assert!(free_resid <= resid + 1e-9);
            // Among weights summing to one, the refined ones are optimal when
            // no floor is active: the gradient is parallel to the all-ones vector.
            if out.weights.iter().all(|p| *p > 1e-3) {
                let grad = b.transpose() * (&b * DVector::from_vec(out.weights.clone()) - &m1);
                let mean = grad.mean();
                assert!(grad.iter().all(|g| (g - mean).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn refinement_skips_rank_deficient() {
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let est = estimate(vec![0.4, 0.7], vec![b.clone(), b * 2.0]);
        let out = refine_weights(&est, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(out.refinement_skipped);
        assert_eq!(out.weights, est.weights);
    }
}
