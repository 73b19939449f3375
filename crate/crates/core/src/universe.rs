//! The record universe: labelled feature vectors from which the secret
//! training subsets are drawn.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{data, invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

impl Universe {
    /// Builds a universe, checking that every record has the same feature
    /// dimension and a label below `classes`.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {classes}")));
        }
        if features.len() != labels.len() {
            return Err(data(format!("{} feature rows but {} labels", features.len(), labels.len())));
        }
        if features.is_empty() {
            return Err(data("universe has no records"));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(data("feature dimension must be at least 1"));
        }
        for (i, (x, &y)) in features.iter().zip(&labels).enumerate() {
            if x.len() != dim {
                return Err(data(format!("record {i} has {} features, expected {dim}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(data(format!("record {i} has a non-finite feature")));
            }
            if y >= classes {
                return Err(data(format!("record {i} has label {y} >= {classes}")));
            }
        }
        Ok(Self { features, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn record(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i], self.labels[i])
    }

    /// Content hash over dimensions, feature bit patterns and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.feature_dim() as u64).to_le_bytes());
        h.update((self.classes as u64).to_le_bytes());
        for (x, &y) in self.features.iter().zip(&self.labels) {
            for v in x {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Reads a CSV with a header row, numeric feature columns and a final
    /// integer label column. The class count is `max(label) + 1` unless
    /// `classes` is given.
    pub fn from_csv_reader<R: Read>(reader: R, classes: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let width = rdr.headers().map_err(|e| data(format!("csv header: {e}")))?.len();
        if width < 2 {
            return Err(data("csv needs at least one feature column and a label column"));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| data(format!("csv row {}: {e}", row + 1)))?;
            if rec.len() != width {
                return Err(data(format!("csv row {} has {} columns, expected {width}", row + 1, rec.len())));
            }
            let x = rec
                .iter()
                .take(width - 1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| data(format!("csv row {}: {e}", row + 1)))?;
            let y =
                rec[width - 1].trim().parse::<usize>().map_err(|e| data(format!("csv row {} label: {e}", row + 1)))?;
            features.push(x);
            labels.push(y);
        }
        let max_label = labels.iter().copied().max().unwrap_or(0);
        let classes = classes.unwrap_or((max_label + 1).max(2));
        Self::new(features, labels, classes)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(f), classes)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_labelled_csv(writer, &self.features, &self.labels)
    }
}

/// Writes `x0,...,x{d-1},label` rows with a header.
pub fn write_labelled_csv<W: Write>(writer: W, features: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    write_labelled_csv_with_dim(writer, features.first().map_or(0, Vec::len), features, labels)
}

/// As [`write_labelled_csv`] with an explicit feature count, so an empty
/// set still gets a full header.
pub fn write_labelled_csv_with_dim<W: Write>(
    writer: W,
    dim: usize,
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| data(e.to_string()))?;
    for (x, y) in features.iter().zip(labels) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        w.write_record(&row).map_err(|e| data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an unlabelled feature CSV (header required, all columns numeric).
pub fn read_feature_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data(format!("csv row {}: {e}", row + 1)))?;
        let x = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| data(format!("csv row {}: {e}", row + 1)))?;
        out.push(x);
    }
    Ok(out)
}
