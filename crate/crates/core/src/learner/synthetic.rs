use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derived_rng, domain};
use crate::universe::Universe;

/// Gaussian blobs around fixed class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub classes: usize,
    pub feature_dim: usize,
    /// Distance between neighbouring class means.
    pub separation: f64,
    /// Per-coordinate standard deviation.
    #[serde(default = "one")]
    pub spread: f64,
    /// Offset added to every mean along the all-ones direction (unit
    /// length), a simple covariate shift.
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

impl BlobConfig {
    pub fn new(classes: usize, feature_dim: usize, separation: f64) -> Self {
        Self { classes, feature_dim, separation, spread: 1.0, shift: 0.0 }
    }

    pub fn shifted(&self, shift: f64, spread: f64) -> Self {
        Self { shift, spread, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.feature_dim == 0 {
            return Err(invalid("blobs need at least two classes and one feature"));
        }
        if !(self.separation >= 0.0 && self.spread >= 0.0) || !self.shift.is_finite() {
            return Err(invalid("separation and spread must be nonnegative"));
        }
        Ok(())
    }

    /// Class means with pairwise (or neighbouring) distance `separation`:
    /// simplex vertices when there is room, otherwise points on a circle
    /// (two features) or a line (one feature).
    pub fn means(&self) -> Vec<Vec<f64>> {
        let (d, dx, s) = (self.classes, self.feature_dim, self.separation);
        let mut means: Vec<Vec<f64>> = if dx >= d {
            (0..d).map(|k| (0..dx).map(|i| if i == k { s / std::f64::consts::SQRT_2 } else { 0.0 }).collect()).collect()
        } else if dx >= 2 {
            let r = s / (2.0 * (std::f64::consts::PI / d as f64).sin());
            (0..d)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / d as f64;
                    let mut v = vec![0.0; dx];
                    v[0] = r * a.cos();
                    v[1] = r * a.sin();
                    v
                })
                .collect()
        } else {
            (0..d).map(|k| vec![s * k as f64]).collect()
        };
        let step = self.shift / (dx as f64).sqrt();
        for m in &mut means {
            m.iter_mut().for_each(|v| *v += step);
        }
        means
    }

    /// `n` labelled points, labels `i mod classes`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        self.validate()?;
        let means = self.means();
        let mut rng = derived_rng(seed, domain::DATA, 0);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % self.classes;
            let x = means[y]
                .iter()
                .map(|&mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + self.spread * z
                })
                .collect();
            features.push(x);
            labels.push(y);
        }
        Ok((features, labels))
    }

    pub fn universe(&self, n: usize, seed: u64) -> Result<Universe> {
        if n < 2 * self.classes {
            return Err(invalid(format!("need n >= 2 * classes, got n={n}")));
        }
        let (f, l) = self.sample(n, seed)?;
        Universe::new(f, l, self.classes)
    }
}

/// Synthetic universe of Gaussian blobs with unit covariance.
pub fn make_synthetic_universe(
    n: usize,
    classes: usize,
    feature_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Universe> {
    BlobConfig::new(classes, feature_dim, separation).universe(n, seed)
}
