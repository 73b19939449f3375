//! Numerical mutual information of a Gaussian-noised finite mechanism.
//!
//! `I(S; M(S) + Z)` for `S ~ P` over finitely many secrets is a Gaussian
//! mixture entropy difference. In whitened coordinates of the noisy
//! subspace,
//!
//! `I = sum_s P(s) E_z[-log sum_s' P(s') exp(-|d|^2/2 - <d, z>)]`,
//! `d = mu_s - mu_s'`, `z ~ N(0, I)`,
//!
//! evaluated with a tensor Gauss-Hermite rule. Directions without noise
//! reveal which group of identical projections the secret lies in; that
//! contributes the group entropy exactly.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::belief::BeliefState;
use crate::error::{data, Error, Result};
use crate::noise::{dot, zero_direction_tolerance, MechanismMatrix, NoiseSpec};

/// Largest noisy rank the tensor rule handles.
pub const MAX_QUADRATURE_RANK: usize = 3;

const NODES_1D: usize = 160;
const NODES_2D: usize = 64;
const NODES_3D: usize = 28;

/// Gauss-Hermite rule for weight `exp(-x^2)` via Golub-Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and weights for expectations under the standard normal.
fn normal_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R1: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R2: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R3: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let cell = match n {
        NODES_1D => &R1,
        NODES_2D => &R2,
        NODES_3D => &R3,
        _ => unreachable!("unsupported rule size"),
    };
    cell.get_or_init(|| {
        let (x, w) = gauss_hermite(n);
        let s = std::f64::consts::PI.sqrt();
        (x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(), w.iter().map(|v| v / s).collect())
    })
}

/// Estimates `I(S; M(S) + Z)` in nats for `S` distributed by `belief` and
/// `Z ~ N(0, spec)`.
pub fn verify_mi_bound(mech: &MechanismMatrix, belief: &BeliefState, spec: &NoiseSpec) -> Result<f64> {
    mutual_information(mech, &belief.probabilities(), spec)
}

pub fn mutual_information(mech: &MechanismMatrix, probs: &[f64], spec: &NoiseSpec) -> Result<f64> {
    let d = mech.dim();
    if spec.dim() != d || probs.len() != mech.secrets() {
        return Err(data("dimension mismatch between mechanism, belief and noise"));
    }
    let rank = spec.noisy_rank();
    if rank > MAX_QUADRATURE_RANK {
        return Err(Error::Unsupported(format!("noise rank {rank} exceeds quadrature limit {MAX_QUADRATURE_RANK}")));
    }
    let noisy: Vec<usize> = (0..d).filter(|&i| spec.variances[i] > 0.0).collect();
    let silent: Vec<usize> = (0..d).filter(|&i| spec.variances[i] == 0.0).collect();

    // Group positive-mass secrets by their exact output along the silent
    // directions.
    let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for (s, row) in mech.rows().enumerate() {
        if probs[s] <= 0.0 {
            continue;
        }
        let key: Vec<f64> = silent.iter().map(|&i| dot(&spec.basis[i], row)).collect();
        let tol = zero_direction_tolerance(dot(row, row).sqrt());
        match groups.iter_mut().find(|(k, _)| k.iter().zip(&key).all(|(a, b)| (a - b).abs() <= tol)) {
            Some((_, members)) => members.push(s),
            None => groups.push((key, vec![s])),
        }
    }

    let total: f64 = probs.iter().filter(|p| **p > 0.0).sum();
    let mut mi = 0.0;
    for (_, members) in &groups {
        let pg: f64 = members.iter().map(|&s| probs[s]).sum::<f64>() / total;
        if pg > 0.0 {
            mi -= pg * pg.ln();
        }
        if members.len() < 2 || noisy.is_empty() {
            continue;
        }
        let weights: Vec<f64> = members.iter().map(|&s| probs[s] / total / pg).collect();
        let means: Vec<Vec<f64>> = members
            .iter()
            .map(|&s| noisy.iter().map(|&i| dot(&spec.basis[i], mech.row(s)) / spec.variances[i].sqrt()).collect())
            .collect();
        mi += pg * whitened_mixture_mi(&weights, &means);
    }
    Ok(mi.max(0.0))
}

/// MI between a discrete label with `weights` and `mu_label + N(0, I)`.
pub fn whitened_mixture_mi(weights: &[f64], means: &[Vec<f64>]) -> f64 {
    let r = means[0].len();
    let n = match r {
        1 => NODES_1D,
        2 => NODES_2D,
        3 => NODES_3D,
        _ => unreachable!("rank checked by caller"),
    };
    let (nodes, node_w) = normal_rule(n);
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let k = weights.len();
    let mut deltas = vec![0.0; k * r];
    let mut half_sq = vec![0.0; k];
    let mut terms = vec![0.0; k];
    let mut z = vec![0.0; r];
    let mut idx = vec![0usize; r];

    let mut mi = 0.0;
    for (s, mu_s) in means.iter().enumerate() {
        for (t, mu_t) in means.iter().enumerate() {
            let mut sq = 0.0;
            for a in 0..r {
                let dd = mu_s[a] - mu_t[a];
                deltas[t * r + a] = dd;
                sq += dd * dd;
            }
            half_sq[t] = 0.5 * sq;
        }
        let mut expectation = 0.0;
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let mut wz = 1.0;
            for a in 0..r {
                z[a] = nodes[idx[a]];
                wz *= node_w[idx[a]];
            }
            let mut max = f64::NEG_INFINITY;
            for t in 0..k {
                let lin: f64 = (0..r).map(|a| deltas[t * r + a] * z[a]).sum();
                terms[t] = log_w[t] - half_sq[t] - lin;
                max = max.max(terms[t]);
            }
            let lse = max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            expectation -= wz * lse;
            // odometer over the tensor grid
            let mut a = 0;
            loop {
                if a == r {
                    break;
                }
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == r {
                break;
            }
        }
        mi += weights[s] * expectation;
    }
    mi
}
