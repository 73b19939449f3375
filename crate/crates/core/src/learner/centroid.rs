use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class feature means. A class absent from the training subset has no
/// centroid and scores `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub centroids: Vec<Option<Vec<f64>>>,
}

impl CentroidModel {
    pub fn fit(features: &[&[f64]], labels: &[usize], classes: usize) -> Result<Self> {
        let dim = features.first().map(|f| f.len()).ok_or_else(|| Error::Training("empty training set".into()))?;
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (x, &y) in features.iter().zip(labels) {
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
            .collect();
        Ok(Self { centroids })
    }

    /// Negative Euclidean distance to each centroid.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.centroids
            .iter()
            .map(|c| match c {
                Some(c) => -c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                None => f64::NEG_INFINITY,
            })
            .collect()
    }
}
