//! Guarantee-table reproduction and frozen high-precision oracle values.

use pacpriv_core::accounting::*;
use proptest::prelude::*;

const BODY: [(u64, [&str; 8]); 7] = [
    (1, ["67.5", "54.4", "51.1", "50.3", "50.07", "50.02", "50.00", "50.00"]),
    (10, ["98.7", "63.9", "53.5", "50.9", "50.22", "50.05", "50.01", "50.00"]),
    (100, ["100", "91.0", "61.0", "52.8", "50.69", "50.17", "50.04", "50.01"]),
    (1_000, ["100", "100", "83.4", "58.7", "52.18", "50.55", "50.14", "50.03"]),
    (10_000, ["100", "100", "100", "76.9", "56.89", "51.73", "50.43", "50.11"]),
    (100_000, ["100", "100", "100", "100", "71.48", "55.45", "51.36", "50.34"]),
    (1_000_000, ["100", "100", "100", "100", "100", "67.09", "54.31", "51.08"]),
];

fn unit_of(cell: &str) -> f64 {
    match cell.split_once('.') {
        Some((_, frac)) => 10f64.powi(-(frac.len() as i32)),
        None => 1.0,
    }
}

#[test]
fn body_cells_match_printed_values() {
    let budgets = reference_budgets();
    for (t, row) in BODY {
        for (b, cell) in budgets.iter().zip(row) {
            let got = 100.0 * balanced_mia_bound(*b * t as f64);
            let want: f64 = cell.parse().unwrap();
            assert!((got - want).abs() <= unit_of(cell), "T={t} b={b}: {got} vs {cell}");
        }
    }
}

#[test]
fn horizon_rows_match_printed_values() {
    let eps1 = [1.0, 28.0, 454.0, 7e3, 116e3, 2e6, 30e6, 477e6];
    let unit1 = [1.0, 1.0, 1.0, 1e3, 1e3, 1e6, 1e6, 1e6];
    let eps8 = [11.0, 176.0, 3e3, 45e3, 724e3, 12e6, 185e6, 3e9];
    let unit8 = [1.0, 1.0, 1e3, 1e3, 1e3, 1e6, 1e6, 1e9];
    for (k, b) in reference_budgets().into_iter().enumerate() {
        let t1 = max_queries_for_epsilon(b, 1.0, 1e-5).unwrap() as f64;
        let t8 = max_queries_for_epsilon(b, 8.0, 1e-5).unwrap() as f64;
        assert!((t1 - eps1[k]).abs() <= unit1[k], "eps 1, b=2^-{}: {t1}", 4 * (k + 1));
        assert!((t8 - eps8[k]).abs() <= unit8[k], "eps 8, b=2^-{}: {t8}", 4 * (k + 1));
    }
}

/// Values computed with 50-digit arithmetic by an independent script.
#[test]
fn frozen_oracle_values() {
    let exact_t1 = [67.491, 54.417, 51.105, 50.276, 50.069, 50.017, 50.004, 50.001];
    for (b, want) in reference_budgets().into_iter().zip(exact_t1) {
        assert!((100.0 * balanced_mia_bound(b) - want).abs() < 6e-4, "b={b}");
    }
    let limits1 = [1u64, 28, 454, 7271, 116_336, 1_861_377, 29_782_044, 476_512_710];
    let limits8 = [11u64, 176, 2826, 45_228, 723_652, 11_578_443, 185_255_092, 2_964_081_484];
    for (k, b) in reference_budgets().into_iter().enumerate() {
        assert_eq!(max_queries_for_epsilon(b, 1.0, 1e-5).unwrap(), limits1[k]);
        assert_eq!(max_queries_for_epsilon(b, 8.0, 1e-5).unwrap(), limits8[k]);
    }
    assert!((100.0 * balanced_mia_bound(0.25) - 83.7893).abs() < 1e-4);
    assert!((100.0 * balanced_mia_bound(2f64.powi(-10)) - 52.2093).abs() < 1e-4);
    assert!((100.0 * dp_mia_bound(1.0, 1e-5) - 73.1061).abs() < 1e-4);
    assert!((100.0 * dp_mia_bound(0.1, 1e-5) - 52.4984).abs() < 1e-4);
    let b6 = balanced_mia_bound(1e6 * 2f64.powi(-32));
    assert!((dp_epsilon_for_bound(b6, 1e-5).unwrap() - 0.04314).abs() < 1e-5);
    let b3 = balanced_mia_bound(210_000.0 * 2f64.powi(-32));
    assert!((100.0 * b3 - 50.4944).abs() < 1e-4);
    assert!((dp_epsilon_for_bound(b3, 1e-5).unwrap() - 0.019758).abs() < 1e-6);
}

#[test]
fn single_cell_and_singleton_grid() {
    let (rows, _) = guarantee_table(&[2f64.powi(-12)], &[1000], &[], 1e-5).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((100.0 * rows[0].mia_bound - 83.4).abs() <= 0.1);
    let (rows, limits) = guarantee_table(&reference_budgets(), &reference_horizons(), &[1.0, 8.0], 1e-5).unwrap();
    assert_eq!(rows.len(), 56);
    assert_eq!(limits.len(), 16);
}

#[test]
fn table_is_fast() {
    let start = std::time::Instant::now();
    let _ = guarantee_table(&reference_budgets(), &reference_horizons(), &[1.0, 8.0], 1e-5).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

proptest! {
    #[test]
    fn bound_is_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(balanced_mia_bound(lo) <= balanced_mia_bound(hi));
    }

    #[test]
    fn bound_brackets(b in 0.0f64..0.69, d0 in 0.05f64..0.95) {
        let q = mia_bound_from_mi(b, d0).unwrap();
        prop_assert!(q >= 1.0 - d0 && q <= 1.0);
        if q < 1.0 {
            prop_assert!(posterior_advantage(q, 1.0 - d0) <= b + 1e-9);
        }
    }

    #[test]
    fn epsilon_round_trips(eps in 0.001f64..10.0) {
        let back = dp_epsilon_for_bound(dp_mia_bound(eps, 1e-5), 1e-5).unwrap();
        prop_assert!((back - eps).abs() <= 1e-10);
    }

    #[test]
    fn static_at_least_linear(b in 1e-4f64..0.1, factor in 1.0f64..100.0, t in 2u64..300) {
        let s = static_composition_bound(b, b * factor, t).unwrap();
        prop_assert!(s >= t as f64 * b * (1.0 - 1e-12));
    }

    #[test]
    fn horizon_is_maximal(k in 1i32..20, eps in 0.1f64..8.0) {
        let b = 2f64.powi(-k);
        let t = max_queries_for_epsilon(b, eps, 1e-5).unwrap();
        let target = dp_mia_bound(eps, 1e-5);
        if t > 0 {
            prop_assert!(balanced_mia_bound(t as f64 * b) <= target);
        }
        prop_assert!(balanced_mia_bound((t + 1) as f64 * b) > target);
    }
}
