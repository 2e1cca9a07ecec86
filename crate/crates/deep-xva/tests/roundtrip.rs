//! Persistence and portfolio-linearity checks that need real (small-scale)
//! trainings.

use deep_xva::bsde::{self, SolverConfig};
use deep_xva::market::{derive_seed, simulate_exact, MarketModel, TimeGrid};
use deep_xva::serialize::{load_trained, save_trained};
use deep_xva::xva::{aggregate_portfolio, train_claim, EuropeanClaim, XvaRates};
use tempfile::tempdir;

#[test]
fn saved_solution_evaluates_bit_identically() {
    let model = MarketModel::single_asset(100.0, 0.02, 0.25).unwrap();
    let rates = XvaRates::risk_free(0.02);
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let claim = EuropeanClaim::forward(100.0, 1.0);
    let config = SolverConfig::new(16, 120, vec![8, 8], 5);
    let tc = train_claim(&claim, &rates, &model, &grid, &config).unwrap();

    let dir = tempdir().unwrap();
    let path = dir.path().join("claim.dxva");
    save_trained(&path, &tc.trained).unwrap();
    let loaded = load_trained(&path).unwrap();
    assert_eq!(loaded.xi.to_bits(), tc.trained.xi.to_bits());

    let paths = simulate_exact(&model, &grid, 64, derive_seed(5, 0xAB)).unwrap();
    let a = bsde::evaluate(&tc.trained, &tc.problem, &paths, None).unwrap();
    let b = bsde::evaluate(&loaded, &tc.problem, &paths, None).unwrap();
    assert_eq!(a, b, "evaluation must be bit-identical after a round trip");
}

/// Training a payoff and its negation separately and aggregating them
/// cancels to within the two legs' own solver errors.
#[test]
fn claim_plus_negation_nets_to_zero() {
    let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
    let rates = XvaRates::risk_free(0.0);
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let long = EuropeanClaim::forward(100.0, 1.0);
    let short = long.negated();
    let config_a = SolverConfig::new(64, 1200, vec![12, 12], 11);
    let config_b = SolverConfig::new(64, 1200, vec![12, 12], 12);
    let leg_a = train_claim(&long, &rates, &model, &grid, &config_a).unwrap();
    let leg_b = train_claim(&short, &rates, &model, &grid, &config_b).unwrap();

    let paths = simulate_exact(&model, &grid, 512, derive_seed(9, 0xCD)).unwrap();
    let vp_a = bsde::evaluate(&leg_a.trained, &leg_a.problem, &paths, None).unwrap();
    let vp_b = bsde::evaluate(&leg_b.trained, &leg_b.problem, &paths, None).unwrap();

    let rms = |xs: &mut dyn Iterator<Item = f64>| -> f64 {
        let (mut acc, mut n) = (0.0, 0usize);
        for x in xs {
            acc += x * x;
            n += 1;
        }
        (acc / n as f64).sqrt()
    };
    // per-leg error against the exact pathwise forward value S_n - K
    let err_a = rms(&mut (0..512).flat_map(|p| {
        (0..=10).map(move |n| (p, n))
    }).map(|(p, n)| vp_a.values()[[p, n]] - (paths.states()[[p, n, 0]] - 100.0)));
    let err_b = rms(&mut (0..512).flat_map(|p| {
        (0..=10).map(move |n| (p, n))
    }).map(|(p, n)| vp_b.values()[[p, n]] + (paths.states()[[p, n, 0]] - 100.0)));

    let portfolio = aggregate_portfolio(&[vp_a, vp_b]).unwrap();
    let port_rms = rms(&mut portfolio.values().iter().copied());
    assert!(
        port_rms <= 2.0 * (err_a + err_b),
        "portfolio rms {port_rms} vs leg errors {err_a} + {err_b}"
    );
    // and the legs actually train: each leg error is small on the 100 scale
    assert!(err_a < 1.5, "leg error {err_a}");
    assert!(err_b < 1.5, "leg error {err_b}");
}
