//! Dense symmetric third-order tensors and the robust tensor power method.
//!
//! A [`SymTensor3`] stores all `d³` entries in row-major `(i, j, k)` order.
//! Every constructor either fills an entry and all of its permutation images
//! from one computed value, or validates symmetry explicitly, so the
//! permutation invariance holds bit-for-bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, MldsError, Result};
use crate::seed::child_rng;

/// Relative tolerance for the symmetry check in [`SymTensor3::from_entries`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    dim: usize,
    data: Vec<f64>,
}

/// One extracted rank-1 term `weight · vector^⊗3`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFactor {
    pub weight: f64,
    pub vector: DVector<f64>,
}

impl TensorFactor {
    /// Flip the factor so its weight is non-negative.
    ///
    /// For an odd-order tensor `λ v^⊗3 = (−λ)(−v)^⊗3`, so the flip leaves the
    /// represented term unchanged.
    pub fn canonicalized(&self) -> TensorFactor {
        if self.weight < 0.0 {
            TensorFactor {
                weight: -self.weight,
                vector: -&self.vector,
            }
        } else {
            self.clone()
        }
    }
}

/// Hyperparameters of [`robust_tpm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpmParams {
    pub n_restarts: usize,
    pub n_iters: usize,
}

impl TpmParams {
    /// `n_iters = 100`, `n_restarts = 20·K`.
    pub fn for_components(k: usize) -> Self {
        TpmParams {
            n_restarts: 20 * k.max(1),
            n_iters: 100,
        }
    }
}

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "tensor dimension must be positive");
        SymTensor3 {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// Build a tensor by evaluating `f` on sorted index triples `i ≤ j ≤ k`
    /// and copying the value to every permutation.
    pub fn from_sorted_fn<F>(dim: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                for k in j..dim {
                    t.set_sym(i, j, k, f(i, j, k));
                }
            }
        }
        t
    }

    /// Wrap a raw `d³` array, rejecting it unless it is symmetric to within
    /// [`SYMMETRY_TOL`] relative to its largest entry.
    pub fn from_entries(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(MldsError::InvalidParameter(
                "tensor dimension must be positive".into(),
            ));
        }
        check_dim("tensor entries", dim * dim * dim, data.len())?;
        let t = SymTensor3 { dim, data };
        let violation = t.symmetry_violation();
        if violation >= SYMMETRY_TOL {
            return Err(MldsError::Asymmetric { violation });
        }
        Ok(t)
    }

    /// Largest deviation between an entry and any of its permutation images,
    /// relative to `max(1, max |entry|)`.
    pub fn symmetry_violation(&self) -> f64 {
        let scale = self.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = self.get(i, j, k);
                    for (a, b, c) in [(i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                        worst = worst.max((v - self.get(a, b, c)).abs());
                    }
                }
            }
        }
        worst / scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim + j) * self.dim + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    fn set_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        for (a, b, c) in [
            (i, j, k),
            (i, k, j),
            (j, i, k),
            (j, k, i),
            (k, i, j),
            (k, j, i),
        ] {
            let p = self.idx(a, b, c);
            self.data[p] = v;
        }
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymTensor3) -> Result<()> {
        check_dim("tensor sum", self.dim, other.dim)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> SymTensor3 {
        SymTensor3 {
            dim: self.dim,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// Remove the rank-1 term `weight · v^⊗3` in place.
    pub fn deflate(&mut self, weight: f64, v: &DVector<f64>) -> Result<()> {
        check_dim("deflation vector", self.dim, v.len())?;
        let d = self.dim;
        for i in 0..d {
            for j in i..d {
                for k in j..d {
                    let p = self.idx(i, j, k);
                    let new = self.data[p] - weight * v[i] * v[j] * v[k];
                    self.set_sym(i, j, k, new);
                }
            }
        }
        Ok(())
    }

    /// `Σ_{ijk} M_ijk a_i b_j c_k`.
    pub fn contract(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<f64> {
        check_dim("contraction vector a", self.dim, a.len())?;
        check_dim("contraction vector b", self.dim, b.len())?;
        check_dim("contraction vector c", self.dim, c.len())?;
        let d = self.dim;
        let mut total = 0.0;
        for i in 0..d {
            let mut inner = 0.0;
            for j in 0..d {
                let row = &self.data[self.idx(i, j, 0)..self.idx(i, j, 0) + d];
                let s: f64 = row.iter().zip(c.iter()).map(|(m, ck)| m * ck).sum();
                inner += b[j] * s;
            }
            total += a[i] * inner;
        }
        Ok(total)
    }

    /// `M(I, u, u)`: component `i` is `Σ_{jk} M_ijk u_j u_k`.
    pub fn contract_pair(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("contraction vector", self.dim, u.len())?;
        let d = self.dim;
        let mut out = DVector::zeros(d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                let start = self.idx(i, j, 0);
                let s: f64 = self.data[start..start + d]
                    .iter()
                    .zip(u.iter())
                    .map(|(m, uk)| m * uk)
                    .sum();
                acc += u[j] * s;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `M(u, u, u)`.
    pub fn cubic_form(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(self.contract_pair(u)?.dot(u))
    }

    /// `M(V, V, V)` for a `d × K` matrix `V`.
    pub fn apply_matrix3(&self, v: &DMatrix<f64>) -> Result<SymTensor3> {
        check_dim("multilinear map rows", self.dim, v.nrows())?;
        let d = self.dim;
        let kk = v.ncols();
        if kk == 0 {
            return Err(MldsError::InvalidParameter(
                "multilinear map needs at least one column".into(),
            ));
        }
        // Contract one mode at a time: d³K + d²K² + dK³.
        let mut t1 = vec![0.0; kk * d * d]; // [a][j][k]
        for a in 0..kk {
            for i in 0..d {
                let w = v[(i, a)];
                if w == 0.0 {
                    continue;
                }
                for jk in 0..d * d {
                    t1[a * d * d + jk] += w * self.data[i * d * d + jk];
                }
            }
        }
        let mut t2 = vec![0.0; kk * kk * d]; // [a][b][k]
        for a in 0..kk {
            for b in 0..kk {
                for j in 0..d {
                    let w = v[(j, b)];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        t2[(a * kk + b) * d + k] += w * t1[(a * d + j) * d + k];
                    }
                }
            }
        }
        Ok(SymTensor3::from_sorted_fn(kk, |a, b, c| {
            (0..d).map(|k| v[(k, c)] * t2[(a * kk + b) * d + k]).sum()
        }))
    }

    /// One normalized power step `M(I,u,u) / ‖M(I,u,u)‖`.
    pub fn power_update(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.contract_pair(u)?;
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(MldsError::ZeroUpdate);
        }
        Ok(v / norm)
    }

    /// Frobenius norm of the full array.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Lower bound on `sup_{‖a‖=1} |M(a,a,a)|` from power iteration with
    /// random restarts.
    pub fn op_norm_estimate(&self, restarts: usize, iters: usize, rng_seed: u64) -> f64 {
        let mut best = 0.0f64;
        for l in 0..restarts.max(1) {
            let mut rng = child_rng(rng_seed, &[l as u64]);
            let mut u = random_unit(self.dim, &mut rng);
            for _ in 0..iters.max(1) {
                match self.power_update(&u) {
                    Ok(next) => u = next,
                    Err(_) => break,
                }
            }
            let val = self.cubic_form(&u).map(f64::abs).unwrap_or(0.0);
            best = best.max(val);
        }
        best
    }
}

/// Rank-1 symmetric tensor `v ⊗ v ⊗ v`.
pub fn outer3(v: &DVector<f64>) -> SymTensor3 {
    SymTensor3::from_sorted_fn(v.len(), |i, j, k| v[i] * v[j] * v[k])
}

/// Uniform draw from the unit sphere in `R^d`.
pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn iterate(m: &SymTensor3, mut u: DVector<f64>, iters: usize) -> Result<DVector<f64>> {
    for _ in 0..iters {
        u = m.power_update(&u)?;
    }
    Ok(u)
}

/// Robust tensor power method with random restarts and deflation.
///
/// Each of the `k` rounds runs `n_iters` power updates from `n_restarts`
/// uniform starts, keeps the start with the largest `M(β,β,β)` (lowest index
/// on ties), refines it with another `n_iters` updates, records
/// `(M(β,β,β), β)` and deflates. Weights are returned with their sign; see
/// [`TensorFactor::canonicalized`].
pub fn robust_tpm(
    m: &SymTensor3,
    k: usize,
    params: TpmParams,
    rng_seed: u64,
) -> Result<Vec<TensorFactor>> {
    check_dim("decomposition rank", m.dim(), k)?;
    if params.n_restarts == 0 || params.n_iters == 0 {
        return Err(MldsError::InvalidParameter(
            "restarts and iterations must be positive".into(),
        ));
    }
    let mut residual = m.clone();
    let mut factors = Vec::with_capacity(k);
    for round in 0..k {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for l in 0..params.n_restarts {
            let mut rng = child_rng(rng_seed, &[round as u64, l as u64]);
            let start = random_unit(k, &mut rng);
            let Ok(u) = iterate(&residual, start, params.n_iters) else {
                continue;
            };
            let score = residual.cubic_form(&u)?;
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, u));
            }
        }
        let (_, start) = best.ok_or(MldsError::DecompositionFailure { round })?;
        let beta = iterate(&residual, start, params.n_iters)
            .map_err(|_| MldsError::DecompositionFailure { round })?;
        let weight = residual.cubic_form(&beta)?;
        residual.deflate(weight, &beta)?;
        factors.push(TensorFactor {
            weight,
            vector: beta,
        });
    }
    Ok(factors)
}
