//! Append-only public record of releases.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::noise::{MechanismMatrix, NoiseSpec};

/// One release: the query's mechanism, the published calibration and the
/// noisy response, plus the ledger state after it.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub step: u64,
    pub mech: Arc<MechanismMatrix>,
    pub spec: NoiseSpec,
    pub response: Vec<f64>,
    pub label: usize,
    pub b_t: f64,
    pub cum_b_nats: f64,
    pub mia_bound: f64,
}

impl TranscriptEntry {
    pub fn query_id(&self) -> &str {
        self.mech.query_id()
    }

    pub fn audit_record(&self) -> AuditRecord<'_> {
        AuditRecord {
            step: self.step,
            query_id: self.query_id(),
            b_t: self.b_t,
            eigvals: &self.spec.eigenvalues,
            variances: &self.spec.variances,
            response: &self.response,
            label: self.label,
            cum_b: self.cum_b_nats,
            mia_bound: self.mia_bound,
        }
    }
}

/// JSON-lines audit form of an entry. MI quantities are in nats.
#[derive(Debug, Serialize)]
pub struct AuditRecord<'a> {
    pub step: u64,
    pub query_id: &'a str,
    pub b_t: f64,
    pub eigvals: &'a [f64],
    pub variances: &'a [f64],
    pub response: &'a [f64],
    pub label: usize,
    #[serde(rename = "cum_B")]
    pub cum_b: f64,
    pub mia_bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn last(&self) -> Option<&TranscriptEntry> {
        self.entries.last()
    }

    pub(crate) fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    /// Writes one JSON object per entry.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, &e.audit_record())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
