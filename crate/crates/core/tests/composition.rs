//! Posterior-aware composition on randomised games.

use std::sync::Arc;

use pacpriv_core::adversary::AdversaryState;
use pacpriv_core::curator::{CalibrationTarget, Curator, MI_AUDIT_SLACK};
use pacpriv_core::{Error, MechanismMatrix, SecretSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mech<R: Rng>(rng: &mut R, m: usize, d: usize, id: usize) -> MechanismMatrix {
    let rows: Vec<Vec<f64>> = if rng.random_bool(0.7) {
        // hard labels concentrated on a couple of classes
        let major = rng.random_range(0..d);
        (0..m)
            .map(|_| {
                let k = if rng.random_bool(0.7) { major } else { rng.random_range(0..d) };
                (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
            })
            .collect()
    } else {
        (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    MechanismMatrix::from_rows(format!("q{id}"), &rows).unwrap()
}

#[test]
fn incremental_belief_matches_bayes_recomputation() {
    for game in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(game);
        let m = 2 * rng.random_range(1..=8);
        let d = rng.random_range(1..=4);
        let space = Arc::new(SecretSpace::construct_for_records(10, m, game).unwrap());
        let mut curator = Curator::with_sampled_secret(space.clone(), game, game + 100, None).unwrap();
        let mut adversary = AdversaryState::new(space);
        for q in 0..100 {
            let b = 2f64.powi(-rng.random_range(1..10));
            curator.answer_query(random_mech(&mut rng, m, d, q), b).unwrap();
            adversary.observe_entry(curator.transcript().last().unwrap()).unwrap();
            assert!(adversary.belief().max_abs_deviation(curator.belief()) <= 1e-12);
        }
        assert!(curator.belief_oracle_check() <= 1e-9, "game {game}");
        assert!(curator.belief().probability(curator.secret_index()) > 0.0);
    }
}

/// Audits every step of one game before answering it; returns the number
/// of checkable steps and the number that overspent.
fn audit_game(seed: u64, target: CalibrationTarget) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, d) = (8, 3);
    let space = Arc::new(SecretSpace::construct_for_records(10, m, seed).unwrap());
    let mut curator = Curator::with_sampled_secret(space, seed, seed, None).unwrap().with_calibration_target(target);
    let (mut checked, mut over) = (0, 0);
    for q in 0..40 {
        let mech = random_mech(&mut rng, m, d, q);
        let b = 0.05;
        match curator.conditional_mi_audit(&mech, b) {
            Ok(mi) => {
                checked += 1;
                if mi > b * (1.0 + MI_AUDIT_SLACK) {
                    over += 1;
                }
            }
            Err(Error::Unsupported(_)) => {}
            Err(e) => panic!("{e}"),
        }
        curator.answer_query(mech, b).unwrap();
    }
    (checked, over)
}

#[test]
fn posterior_calibration_never_overspends_and_stale_prior_does() {
    let mut stale_over = 0;
    for seed in 0..10 {
        let (checked, over) = audit_game(seed, CalibrationTarget::Posterior);
        assert!(checked > 0);
        assert_eq!(over, 0, "posterior-aware game {seed} overspent");
        stale_over += audit_game(seed, CalibrationTarget::StalePrior).1;
    }
    assert!(stale_over > 0, "stale-prior calibration never overspent");
}
