//! Converting MI budgets into membership-inference guarantees.
//!
//! A total MI budget `B` (nats) bounds any adversary's posterior advantage:
//! `q log(q / (1 - d0)) + (1 - q) log((1 - q) / d0) <= B`, where `q` is the
//! success rate and `1 - d0` the best prior success rate. The bound on `q`
//! is the largest root of that inequality. Budgets compose linearly under
//! posterior-aware calibration, so `B = sum_t b_t`.

use serde::{Deserialize, Serialize};

use crate::budget::nats_to_bits;
use crate::error::{invalid, Result};

/// Upper bisection bracket for the success rate.
pub const SUCCESS_UPPER_BRACKET: f64 = 1.0 - 1e-15;
/// Absolute tolerance on the solved success rate.
pub const SOLVER_TOL: f64 = 1e-12;
/// Default DP delta used for equivalence columns.
pub const DEFAULT_DP_DELTA: f64 = 1e-5;

/// KL divergence between Bernoulli(`q`) and Bernoulli(`prior_success`), in nats.
pub fn posterior_advantage(q: f64, prior_success: f64) -> f64 {
    let xlogy = |x: f64, ratio: f64| if x == 0.0 { 0.0 } else { x * ratio.ln() };
    xlogy(q, q / prior_success) + xlogy(1.0 - q, (1.0 - q) / (1.0 - prior_success))
}

/// Largest success rate `1 - delta_A` compatible with MI budget `b_total`
/// (nats) and prior failure `delta0`. Returns 1.0 in the vacuous regime.
pub fn mia_bound_from_mi(b_total: f64, delta0: f64) -> Result<f64> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(invalid(format!("prior failure must lie in (0,1), got {delta0}")));
    }
    if b_total.is_nan() || b_total < 0.0 {
        return Err(invalid(format!("MI budget must be nonnegative, got {b_total}")));
    }
    let prior = 1.0 - delta0;
    if posterior_advantage(SUCCESS_UPPER_BRACKET, prior) <= b_total {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (prior, SUCCESS_UPPER_BRACKET);
    while hi - lo > SOLVER_TOL {
        let mid = 0.5 * (lo + hi);
        if posterior_advantage(mid, prior) <= b_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Balanced-prior MIA bound, for infallible callers.
pub fn balanced_mia_bound(b_total: f64) -> f64 {
    mia_bound_from_mi(b_total.max(0.0), 0.5).expect("0.5 is a valid prior")
}

/// MIA success bound implied by `(eps, delta)`-DP: `1 - (1 - delta) / (1 + e^eps)`.
pub fn dp_mia_bound(eps: f64, delta: f64) -> f64 {
    1.0 - (1.0 - delta) / (1.0 + eps.exp())
}

/// Inverse of [`dp_mia_bound`] in `eps`.
pub fn dp_epsilon_for_bound(bound: f64, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(invalid(format!("delta must lie in [0,1), got {delta}")));
    }
    let floor = dp_mia_bound(0.0, delta);
    if !(bound > floor && bound < 1.0) {
        return Err(invalid(format!("MIA bound {bound} is not achievable at delta {delta}; must lie in ({floor}, 1)")));
    }
    // (1 - delta)/(1 - bound) - 1 = (bound - delta)/(1 - bound)
    Ok((bound - delta).ln() - (1.0 - bound).ln())
}

/// DP-equivalent epsilon for reporting: 0 at or below the `eps = 0` bound,
/// infinite for a vacuous bound.
pub fn dp_epsilon_equivalent(bound: f64, delta: f64) -> f64 {
    if bound >= 1.0 {
        f64::INFINITY
    } else if bound <= dp_mia_bound(0.0, delta) {
        0.0
    } else {
        dp_epsilon_for_bound(bound, delta).unwrap_or(f64::INFINITY)
    }
}

/// Largest `T` with `mia_bound(T b) <= dp_mia_bound(eps, delta)`.
pub fn max_queries_for_epsilon(b: f64, eps: f64, delta: f64) -> Result<u64> {
    if !(b.is_finite() && b > 0.0) {
        return Err(invalid(format!("per-step budget must be positive, got {b}")));
    }
    let target = dp_mia_bound(eps, delta);
    let ok = |t: u64| balanced_mia_bound(t as f64 * b) <= target;
    if !ok(1) {
        return Ok(0);
    }
    let (mut lo, mut hi) = (1u64, 2u64);
    while ok(hi) {
        lo = hi;
        if hi >= 1 << 62 {
            return Ok(hi);
        }
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One cell of a guarantee table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeRow {
    pub per_step_nats: f64,
    pub steps: u64,
    pub total_mi_nats: f64,
    pub total_mi_bits: f64,
    pub prior_failure: f64,
    pub mia_bound: f64,
    pub dp_delta: f64,
    pub dp_epsilon_equiv: f64,
}

impl GuaranteeRow {
    /// Guarantee after `steps` releases at `per_step_nats` each.
    pub fn uniform(per_step_nats: f64, steps: u64, dp_delta: f64) -> Self {
        Self::build(per_step_nats, per_step_nats * steps as f64, steps, dp_delta)
    }

    /// Guarantee for an arbitrary budget schedule (summed before solving).
    pub fn for_schedule(schedule: &[f64], dp_delta: f64) -> Self {
        let per = schedule.first().copied().unwrap_or(0.0);
        Self::build(per, kahan_sum(schedule), schedule.len() as u64, dp_delta)
    }

    fn build(per_step_nats: f64, total: f64, steps: u64, dp_delta: f64) -> Self {
        let bound = balanced_mia_bound(total);
        Self {
            per_step_nats,
            steps,
            total_mi_nats: total,
            total_mi_bits: nats_to_bits(total),
            prior_failure: 0.5,
            mia_bound: bound,
            dp_delta,
            dp_epsilon_equiv: dp_epsilon_equivalent(bound, dp_delta),
        }
    }
}

fn kahan_sum(v: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in v {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Footer entry: largest horizon matching a DP target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonLimit {
    pub per_step_nats: f64,
    pub dp_epsilon: f64,
    pub dp_delta: f64,
    pub max_steps: u64,
}

/// Per-step budgets of the reference grid: `2^-4, 2^-8, ..., 2^-32`.
pub fn reference_budgets() -> Vec<f64> {
    (1..=8).map(|k| 2f64.powi(-4 * k)).collect()
}

/// Horizons of the reference grid: `1, 10, ..., 10^6`.
pub fn reference_horizons() -> Vec<u64> {
    (0..=6).map(|k| 10u64.pow(k)).collect()
}

/// Full guarantee grid plus horizon limits for each DP target.
pub fn guarantee_table(
    budgets: &[f64],
    horizons: &[u64],
    dp_targets: &[f64],
    dp_delta: f64,
) -> Result<(Vec<GuaranteeRow>, Vec<HorizonLimit>)> {
    let mut rows = Vec::with_capacity(budgets.len() * horizons.len());
    for &t in horizons {
        for &b in budgets {
            if b.is_nan() || b <= 0.0 {
                return Err(invalid(format!("budget must be positive, got {b}")));
            }
            rows.push(GuaranteeRow::uniform(b, t, dp_delta));
        }
    }
    let mut limits = Vec::new();
    for &eps in dp_targets {
        for &b in budgets {
            limits.push(HorizonLimit {
                per_step_nats: b,
                dp_epsilon: eps,
                dp_delta,
                max_steps: max_queries_for_epsilon(b, eps, dp_delta)?,
            });
        }
    }
    Ok((rows, limits))
}

/// Static (prior-calibrated) composition bound with a worst-case channel
/// cap `b_prime`: `B_1 = b`, `B_t = B_{t-1} + min(b' sqrt(2 B_{t-1}) + b, b')`.
pub fn static_composition_bound(b: f64, b_prime: f64, steps: u64) -> Result<f64> {
    static_recurrence(b, b_prime, steps, true)
}

/// The same recurrence in the regime where the cap is dropped
/// (`b' >> b`): `B_t = B_{t-1} + b + b' sqrt(2 B_{t-1})`. This is the form
/// whose square root grows as an arithmetic progression.
pub fn static_composition_bound_uncapped(b: f64, b_prime: f64, steps: u64) -> Result<f64> {
    static_recurrence(b, b_prime, steps, false)
}

/// All partial values `B_1..=B_T`.
pub fn static_composition_path(b: f64, b_prime: f64, steps: u64, capped: bool) -> Result<Vec<f64>> {
    check_static(b, b_prime, steps)?;
    let mut out = Vec::with_capacity(steps as usize);
    let (mut total, mut comp) = (b, 0.0f64);
    out.push(total);
    for _ in 1..steps {
        let growth = b_prime * (2.0 * total).sqrt() + b;
        let inc = if capped { growth.min(b_prime) } else { growth };
        let y = inc - comp;
        let t = total + y;
        comp = (t - total) - y;
        total = t;
        out.push(total);
    }
    Ok(out)
}

fn static_recurrence(b: f64, b_prime: f64, steps: u64, capped: bool) -> Result<f64> {
    Ok(*static_composition_path(b, b_prime, steps, capped)?.last().expect("steps >= 1"))
}

fn check_static(b: f64, b_prime: f64, steps: u64) -> Result<()> {
    if !(b > 0.0 && b_prime > 0.0) {
        return Err(invalid("static composition budgets must be positive"));
    }
    if steps == 0 {
        return Err(invalid("static composition needs T >= 1"));
    }
    Ok(())
}
