//! Gaussian noise calibrated to a belief over the secret space.
//!
//! For a mechanism `M` restricted to the `m` candidate secrets and a belief
//! `P`, the output covariance under `P` has eigenpairs `(lambda_i, u_i)`. The
//! calibrated noise is `N(0, U diag(v) U^T)` with
//! `v_i = sqrt(lambda_i) * sum_j sqrt(lambda_j) / (2B)`, which keeps
//! `I_{S~P}(S; M(S) + Z) <= B`. The eigenpairs come from an SVD of the
//! weighted, centred `m x d` output matrix; the covariance itself is never
//! formed, and likelihoods reuse the same basis instead of inverting it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::error::{data, invalid, Result};
use crate::rng::rng_from_seed;

/// Eigenvalues at or below `RANK_FLOOR_REL * max(lambda)` are treated as zero.
pub const RANK_FLOOR_REL: f64 = 1e-12;
/// Absolute eigenvalue floor.
pub const RANK_FLOOR_ABS: f64 = 1e-15;
/// Absolute tolerance for a mismatch along a zero-variance direction.
pub const ZERO_DIR_TOL: f64 = 1e-9;
/// Relative part of the zero-variance tolerance, scaled by the norm of the
/// residual being projected (floating error of the projection grows with it).
pub const ZERO_DIR_REL_TOL: f64 = 1e-12;

/// Tolerance for deciding that a residual of norm `norm` has a nonzero
/// component along a zero-variance direction.
pub fn zero_direction_tolerance(norm: f64) -> f64 {
    ZERO_DIR_TOL.max(ZERO_DIR_REL_TOL * norm)
}

/// Deterministic outputs of one query for every candidate secret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismMatrix {
    query_id: String,
    m: usize,
    d: usize,
    /// Row-major `m x d`; row `j` is `M(S_j)`.
    outputs: Vec<f64>,
}

impl MechanismMatrix {
    pub fn new(query_id: impl Into<String>, m: usize, d: usize, outputs: Vec<f64>) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(data("mechanism matrix needs m >= 1 and d >= 1"));
        }
        if outputs.len() != m * d {
            return Err(data(format!("expected {} outputs, got {}", m * d, outputs.len())));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(data("mechanism outputs must be finite"));
        }
        Ok(Self { query_id: query_id.into(), m, d, outputs })
    }

    pub fn from_rows(query_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(data("mechanism rows have different lengths"));
        }
        Self::new(query_id, m, d, rows.concat())
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn secrets(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.outputs[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.outputs.chunks(self.d)
    }

    /// Whether every secret produces the same output.
    pub fn is_stable(&self) -> bool {
        let first = self.row(0);
        self.rows().all(|r| r == first)
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// A calibrated Gaussian: orthonormal basis, per-direction variances and the
/// eigenvalues they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `basis[i]` is the `i`-th unit eigenvector (a column of `U`).
    pub basis: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub budget_b: f64,
}

impl NoiseSpec {
    /// Zero noise in the standard basis.
    pub fn zero(d: usize, budget_b: f64) -> Self {
        let basis = (0..d).map(|i| (0..d).map(|k| if k == i { 1.0 } else { 0.0 }).collect()).collect();
        Self { basis, variances: vec![0.0; d], eigenvalues: vec![0.0; d], budget_b }
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn is_zero(&self) -> bool {
        self.variances.iter().all(|&v| v == 0.0)
    }

    /// Number of directions that receive noise.
    pub fn noisy_rank(&self) -> usize {
        self.variances.iter().filter(|&&v| v > 0.0).count()
    }

    /// Coordinates of `v` in the basis.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|u| dot(u, v)).collect()
    }

    /// Draws `U (z * sqrt(v))` for standard normal `z`. Zero-variance
    /// directions contribute exactly nothing.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        self.sample_with(&mut rng_from_seed(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (u, &var) in self.basis.iter().zip(&self.variances) {
            let z: f64 = rng.sample(StandardNormal);
            if var > 0.0 {
                let scale = z * var.sqrt();
                for (o, &c) in out.iter_mut().zip(u) {
                    *o += c * scale;
                }
            }
        }
        out
    }

    /// Explicit covariance `U diag(v) U^T` (tests and audits only).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut c = vec![vec![0.0; d]; d];
        for (u, &var) in self.basis.iter().zip(&self.variances) {
            for a in 0..d {
                for b in 0..d {
                    c[a][b] += var * u[a] * u[b];
                }
            }
        }
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Calibrates noise for `mech` under `belief` with per-step budget `b` (nats).
pub fn calibrate(mech: &MechanismMatrix, belief: &BeliefState, b: f64) -> Result<NoiseSpec> {
    if belief.len() != mech.secrets() {
        return Err(data(format!("belief over {} secrets but mechanism has {} rows", belief.len(), mech.secrets())));
    }
    calibrate_with_probabilities(mech, &belief.probabilities(), b)
}

/// As [`calibrate`], with explicit probabilities (must sum to one).
pub fn calibrate_with_probabilities(mech: &MechanismMatrix, probs: &[f64], b: f64) -> Result<NoiseSpec> {
    if !(b.is_finite() && b > 0.0) {
        return Err(invalid(format!("budget must be positive and finite, got {b}")));
    }
    let (m, d) = (mech.secrets(), mech.dim());
    if probs.len() != m {
        return Err(data(format!("{} probabilities for {m} secrets", probs.len())));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(data("probabilities must be finite and nonnegative"));
    }

    let mut mean = vec![0.0; d];
    for (row, &p) in mech.rows().zip(probs) {
        if p > 0.0 {
            for (acc, &x) in mean.iter_mut().zip(row) {
                *acc += p * x;
            }
        }
    }

    // Weighted, centred rows; zero padded to at least d rows so the SVD
    // returns a complete d x d right basis.
    let rows = m.max(d);
    let mut a = DMatrix::<f64>::zeros(rows, d);
    let mut any_spread = false;
    for (j, (row, &p)) in mech.rows().zip(probs).enumerate() {
        if p > 0.0 {
            let w = p.sqrt();
            for k in 0..d {
                let v = w * (row[k] - mean[k]);
                if v != 0.0 {
                    any_spread = true;
                }
                a[(j, k)] = v;
            }
        }
    }
    if !any_spread {
        return Ok(NoiseSpec::zero(d, b));
    }

    let (sv, right) = right_singular_pairs(a)?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

    let lambda_max = sv[order[0]] * sv[order[0]];
    let floor = (RANK_FLOOR_REL * lambda_max).max(RANK_FLOOR_ABS);

    let mut basis = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    let mut roots = Vec::with_capacity(d);
    for &i in &order {
        basis.push(right[i].clone());
        let lambda = sv[i] * sv[i];
        if lambda > floor {
            eigenvalues.push(lambda);
            roots.push(sv[i]);
        } else {
            eigenvalues.push(0.0);
            roots.push(0.0);
        }
    }
    let root_sum: f64 = roots.iter().sum();
    let variances = roots.iter().map(|&r| if r > 0.0 { r * root_sum / (2.0 * b) } else { 0.0 }).collect();
    Ok(NoiseSpec { basis, variances, eigenvalues, budget_b: b })
}

/// Singular values and right singular vectors of `a` (rows x d, rows >= d).
/// The SVD result is checked against the Frobenius norm, which must equal
/// the sum of squared singular values; if it is off, the decomposition is
/// recomputed from the symmetric eigenproblem of `a^T a`. Either way each
/// singular value is then re-read as `|a v|`, which is accurate to second
/// order in the error of `v`.
fn right_singular_pairs(a: DMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = a.ncols();
    let frob2 = a.norm_squared();
    let refine = |right: Vec<Vec<f64>>| {
        let sv = right.iter().map(|v: &Vec<f64>| (&a * DVector::from_column_slice(v)).norm()).collect();
        (sv, right)
    };
    if let Some(svd) = a.clone().try_svd(false, true, 5.0 * f64::EPSILON, 0) {
        if let Some(v_t) = svd.v_t {
            let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
            if svd.singular_values.len() == d && (total - frob2).abs() <= 1e-10 * frob2 {
                return Ok(refine((0..d).map(|i| v_t.row(i).iter().copied().collect()).collect()));
            }
        }
    }
    log::debug!("SVD failed its consistency check; using the eigendecomposition of the Gram matrix");
    let eig = SymmetricEigen::try_new(a.transpose() * &a, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| data("eigendecomposition did not converge"))?;
    Ok(refine((0..d).map(|i| eig.eigenvectors.column(i).iter().copied().collect()).collect()))
}

/// Per-secret Gaussian log-likelihoods of `response`, up to a shared
/// constant. A secret whose output disagrees with the response along a
/// zero-variance direction gets `-inf`.
pub fn log_likelihoods(spec: &NoiseSpec, mech: &MechanismMatrix, response: &[f64]) -> Result<Vec<f64>> {
    let d = mech.dim();
    if spec.dim() != d || response.len() != d {
        return Err(data(format!(
            "dimension mismatch: spec {}, mechanism {d}, response {}",
            spec.dim(),
            response.len()
        )));
    }
    let r_coords = spec.project(response);
    let mut diff = vec![0.0; d];
    Ok(mech
        .rows()
        .map(|row| {
            for k in 0..d {
                diff[k] = response[k] - row[k];
            }
            let tol = zero_direction_tolerance(dot(&diff, &diff).sqrt());
            let mut acc = 0.0;
            for ((u, &var), &rc) in spec.basis.iter().zip(&spec.variances).zip(&r_coords) {
                let proj = rc - dot(u, row);
                if var > 0.0 {
                    acc -= 0.5 * proj * proj / var;
                } else if proj.abs() > tol {
                    return f64::NEG_INFINITY;
                }
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_check(spec: &NoiseSpec) {
        let d = spec.dim();
        for i in 0..d {
            for j in 0..d {
                let g = dot(&spec.basis[i], &spec.basis[j]);
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-10, "gram[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn rank_one_two_point_mixture() {
        // two distinct rows with masses p and 1 - p: lambda = p (1 - p) |delta|^2
        let a = vec![0.051919852425509117, 0.7826506618388653, 0.01958524880625978];
        let b = vec![0.9522748106203816, 0.5634187510558051, 0.9798546690576249];
        let rows = vec![a.clone(), b.clone(), b.clone(), b.clone(), a.clone(), b.clone()];
        let probs = [
            0.1528720985133244,
            0.12068782689436536,
            0.26461385873628207,
            0.25671826353374405,
            0.07244701050184978,
            0.13266094182043442,
        ];
        let mech = MechanismMatrix::from_rows("r1", &rows).unwrap();
        let spec = calibrate_with_probabilities(&mech, &probs, 0.25).unwrap();
        let p = probs[0] + probs[4];
        let delta2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let want = p * (1.0 - p) * delta2;
        assert!((spec.eigenvalues[0] - want).abs() < 1e-12 * want, "{} vs {want}", spec.eigenvalues[0]);
        assert_eq!(&spec.eigenvalues[1..], &[0.0, 0.0]);
        assert!((spec.variances[0] - want / 0.5).abs() < 1e-12 * want);
    }

    #[test]
    fn stable_query_gets_zero_noise() {
        let mech = MechanismMatrix::from_rows("q", &vec![vec![0.0, 1.0, 0.0]; 8]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(8), 0.01).unwrap();
        assert!(spec.is_zero());
        assert!(spec.eigenvalues.iter().all(|&l| l == 0.0));
        assert_eq!(spec.sample(3), vec![0.0; 3]);
        identity_check(&spec);
    }

    #[test]
    fn binary_scalar_example() {
        let mech = MechanismMatrix::from_rows("q", &[vec![0.0], vec![1.0]]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(2), 0.125).unwrap();
        assert!((spec.eigenvalues[0] - 0.25).abs() < 1e-15);
        assert!((spec.variances[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_four_secret_example() {
        // Oracle: explicit 2x2 covariance 0.1875 [[1,-1],[-1,1]], eigenpairs
        // (0.375, (1,-1)/sqrt2) and (0, (1,1)/sqrt2).
        let e0 = vec![1.0, 0.0];
        let e1 = vec![0.0, 1.0];
        let mech = MechanismMatrix::from_rows("q", &[e0.clone(), e0.clone(), e0, e1]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(4), 2f64.powi(-4)).unwrap();
        assert!((spec.eigenvalues[0] - 0.375).abs() < 1e-14);
        assert_eq!(spec.eigenvalues[1], 0.0);
        assert!((spec.variances[0] - 3.0).abs() < 1e-12);
        assert_eq!(spec.variances[1], 0.0);
        let u = &spec.basis[0];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((u[0].abs() - s).abs() < 1e-12 && (u[0] + u[1]).abs() < 1e-12);
        identity_check(&spec);
    }

    #[test]
    fn fewer_secrets_than_outputs_still_gets_full_basis() {
        let mech = MechanismMatrix::from_rows("q", &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(2), 0.1).unwrap();
        assert_eq!(spec.basis.len(), 4);
        assert_eq!(spec.noisy_rank(), 1);
        identity_check(&spec);
    }

    #[test]
    fn invalid_inputs() {
        let mech = MechanismMatrix::from_rows("q", &[vec![0.0], vec![1.0]]).unwrap();
        assert!(calibrate(&mech, &BeliefState::uniform(2), 0.0).is_err());
        assert!(calibrate(&mech, &BeliefState::uniform(2), -1.0).is_err());
        assert!(calibrate(&mech, &BeliefState::uniform(3), 0.1).is_err());
        assert!(MechanismMatrix::from_rows("q", &[vec![f64::NAN]]).is_err());
        assert!(MechanismMatrix::from_rows("q", &[vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn symmetric_response_has_equal_likelihoods() {
        let mech = MechanismMatrix::from_rows("q", &[vec![0.0], vec![1.0]]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(2), 0.125).unwrap();
        let ll = log_likelihoods(&spec, &mech, &[0.5]).unwrap();
        assert!((ll[0] - ll[1]).abs() < 1e-15);
    }

    #[test]
    fn likelihood_gap_is_half_nat() {
        let mech = MechanismMatrix::from_rows("q", &[vec![0.0], vec![1.0]]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(2), 0.125).unwrap();
        let ll = log_likelihoods(&spec, &mech, &[1.0]).unwrap();
        assert!((ll[1] - ll[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_mismatch_is_excluded() {
        let e0 = vec![1.0, 0.0, 0.0];
        let e1 = vec![0.0, 1.0, 0.0];
        let e2 = vec![0.0, 0.0, 1.0];
        // Under this belief only secrets 0 and 1 carry mass; secret 2 differs
        // along a direction with no noise.
        let mech = MechanismMatrix::from_rows("q", &[e0.clone(), e1, e2]).unwrap();
        let belief = BeliefState::from_probabilities(&[0.5, 0.5, 0.0]).unwrap();
        let spec = calibrate(&mech, &belief, 0.1).unwrap();
        assert_eq!(spec.noisy_rank(), 1);
        let ll = log_likelihoods(&spec, &mech, &e0).unwrap();
        assert!(ll[0].is_finite() && ll[1].is_finite());
        assert_eq!(ll[2], f64::NEG_INFINITY);
        assert!(log_likelihoods(&spec, &mech, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn scalar_sampling_variance() {
        let mech = MechanismMatrix::from_rows("q", &[vec![0.0], vec![1.0]]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(2), 0.125).unwrap();
        let mut rng = rng_from_seed(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| spec.sample_with(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((0.98..=1.02).contains(&var), "{var}");
    }

    #[test]
    fn sampled_covariance_matches_rank_one_spec() {
        let e0 = vec![1.0, 0.0];
        let e1 = vec![0.0, 1.0];
        let mech = MechanismMatrix::from_rows("q", &[e0.clone(), e0.clone(), e0, e1]).unwrap();
        let spec = calibrate(&mech, &BeliefState::uniform(4), 2f64.powi(-4)).unwrap();
        let mut rng = rng_from_seed(9);
        let n = 100_000;
        let mut c = [[0.0f64; 2]; 2];
        for _ in 0..n {
            let x = spec.sample_with(&mut rng);
            for a in 0..2 {
                for b in 0..2 {
                    c[a][b] += x[a] * x[b] / n as f64;
                }
            }
        }
        let expected = [[1.5, -1.5], [-1.5, 1.5]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((c[a][b] - expected[a][b]).abs() < 0.1, "{c:?}");
            }
        }
    }

    #[test]
    fn scaling_outputs_scales_eigenvalues_and_variances_quadratically() {
        let rows = vec![vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.7, 0.1], vec![1.1, 1.9]];
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| 3.0 * v).collect()).collect();
        let belief = BeliefState::from_probabilities(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = calibrate(&MechanismMatrix::from_rows("a", &rows).unwrap(), &belief, 0.05).unwrap();
        let b = calibrate(&MechanismMatrix::from_rows("b", &scaled).unwrap(), &belief, 0.05).unwrap();
        for i in 0..2 {
            assert!((b.eigenvalues[i] - 9.0 * a.eigenvalues[i]).abs() < 1e-10 * b.eigenvalues[i]);
            assert!((b.variances[i] - 9.0 * a.variances[i]).abs() < 1e-10 * b.variances[i]);
        }
    }
}
