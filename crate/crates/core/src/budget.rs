//! Mutual-information units and the linear budget ledger.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Unit in which an MI quantity is expressed at an external interface.
/// Internally every budget is in nats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiUnit {
    #[default]
    Nats,
    Bits,
}

impl MiUnit {
    pub fn to_nats(self, v: f64) -> f64 {
        match self {
            MiUnit::Nats => v,
            MiUnit::Bits => v * std::f64::consts::LN_2,
        }
    }

    pub fn from_nats(self, v: f64) -> f64 {
        match self {
            MiUnit::Nats => v,
            MiUnit::Bits => v / std::f64::consts::LN_2,
        }
    }
}

impl fmt::Display for MiUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiUnit::Nats => "nats",
            MiUnit::Bits => "bits",
        })
    }
}

impl FromStr for MiUnit {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nats" | "nat" => Ok(MiUnit::Nats),
            "bits" | "bit" => Ok(MiUnit::Bits),
            other => Err(invalid(format!("unknown MI unit {other:?}"))),
        }
    }
}

pub fn nats_to_bits(v: f64) -> f64 {
    MiUnit::Bits.from_nats(v)
}

/// Cumulative MI ledger: `B_T = sum_t b_t`, compensated summation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAccountant {
    cumulative: f64,
    compensation: f64,
    steps: u64,
    halt_threshold: Option<f64>,
    exhausted: bool,
}

impl Default for BudgetAccountant {
    fn default() -> Self {
        Self::new(None)
    }
}

impl BudgetAccountant {
    /// `halt_threshold` is in nats.
    pub fn new(halt_threshold: Option<f64>) -> Self {
        Self { cumulative: 0.0, compensation: 0.0, steps: 0, halt_threshold, exhausted: false }
    }

    pub fn cumulative_nats(&self) -> f64 {
        self.cumulative
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn halt_threshold(&self) -> Option<f64> {
        self.halt_threshold
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    /// Whether spending `b_t` more would take the total past the threshold.
    pub fn would_exceed(&self, b_t: f64) -> bool {
        self.halt_threshold.is_some_and(|h| self.peek(b_t) > h)
    }

    fn peek(&self, b_t: f64) -> f64 {
        let y = b_t - self.compensation;
        self.cumulative + y
    }

    /// Adds one step's budget; flags exhaustion once the total exceeds the
    /// halt threshold.
    pub fn accumulate(&mut self, b_t: f64) -> Result<()> {
        if !(b_t.is_finite() && b_t > 0.0) {
            return Err(invalid(format!("per-step budget must be positive and finite, got {b_t}")));
        }
        let y = b_t - self.compensation;
        let t = self.cumulative + y;
        self.compensation = (t - self.cumulative) - y;
        self.cumulative = t;
        self.steps += 1;
        if self.halt_threshold.is_some_and(|h| self.cumulative > h) {
            self.exhausted = true;
        }
        Ok(())
    }

    pub fn mark_exhausted(&mut self) {
        self.exhausted = true;
    }
}
