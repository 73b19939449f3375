use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed full-batch gradient steps.
pub const STEPS: usize = 200;
/// Fixed learning rate.
pub const LEARNING_RATE: f64 = 0.1;
/// Fixed L2 penalty on the weights (not the bias).
pub const L2: f64 = 1e-3;

/// Multinomial logistic regression trained by full-batch gradient descent
/// from zero initialisation. No randomness is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `weights[k]` holds class `k`'s coefficients followed by its bias.
    pub weights: Vec<Vec<f64>>,
}

impl LogisticModel {
    pub fn fit(features: &[&[f64]], labels: &[usize], classes: usize) -> Result<Self> {
        let n = features.len();
        let dim = features.first().map(|f| f.len()).ok_or_else(|| Error::Training("empty training set".into()))?;
        let mut w = vec![vec![0.0; dim + 1]; classes];
        let mut grad = vec![vec![0.0; dim + 1]; classes];
        let mut probs = vec![0.0; classes];
        for _ in 0..STEPS {
            for g in grad.iter_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            for (x, &y) in features.iter().zip(labels) {
                for (k, p) in probs.iter_mut().enumerate() {
                    *p = logit(&w[k], x);
                }
                softmax_in_place(&mut probs);
                for k in 0..classes {
                    let e = probs[k] - if k == y { 1.0 } else { 0.0 };
                    for (g, &xi) in grad[k].iter_mut().zip(x.iter()) {
                        *g += e * xi;
                    }
                    grad[k][dim] += e;
                }
            }
            for k in 0..classes {
                for i in 0..=dim {
                    let reg = if i < dim { L2 * w[k][i] } else { 0.0 };
                    w[k][i] -= LEARNING_RATE * (grad[k][i] / n as f64 + reg);
                }
            }
        }
        if w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training("logistic weights diverged".into()));
        }
        Ok(Self { weights: w })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| logit(w, x)).collect()
    }
}

fn logit(w: &[f64], x: &[f64]) -> f64 {
    let dim = x.len();
    w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim]
}

/// Temperature-1 softmax; `-inf` scores get probability zero.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|p| *p = u);
        return;
    }
    let mut z = 0.0;
    for p in v.iter_mut() {
        *p = (*p - max).exp();
        z += *p;
    }
    v.iter_mut().for_each(|p| *p /= z);
}
