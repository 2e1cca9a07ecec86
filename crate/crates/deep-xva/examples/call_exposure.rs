//! Desk-scale end-to-end run: train the clean-value equation of a European
//! call, then estimate its discounted expected exposure profile on fresh
//! outer paths. Runs in a few seconds.
//!
//! ```sh
//! cargo run --release -p deep-xva --example call_exposure
//! ```

use deep_xva::bsde::{self, SolverConfig};
use deep_xva::market::{derive_seed, simulate_exact, MarketModel, TimeGrid};
use deep_xva::xva::{exposure_profile, train_claim, EuropeanClaim, XvaRates};

fn main() -> deep_xva::Result<()> {
    let model = MarketModel::single_asset(100.0, 0.01, 0.25)?;
    let rates = XvaRates::risk_free(0.01);
    let grid = TimeGrid::new(1.0, 50)?;
    let claim = EuropeanClaim::call(100.0, 1.0);

    let seed = 1;
    let config = SolverConfig::new(64, 2000, vec![21, 21], seed);
    let trained = train_claim(&claim, &rates, &model, &grid, &config)?;
    println!(
        "trained call: value at 0 = {:.4}, terminal validation loss = {:.3e}",
        trained.trained.xi, trained.trained.diagnostics.best_validation_loss
    );

    let paths = simulate_exact(&model, &grid, 2048, derive_seed(seed, 0xE0E0))?;
    let values = bsde::evaluate(&trained.trained, &trained.problem, &paths, None)?;
    let profile = exposure_profile(&values, &rates)?;
    println!("t      DEPE     DENE");
    for n in (0..=grid.steps()).step_by(10) {
        println!(
            "{:4.2}  {:7.4}  {:7.4}",
            profile.nodes[n], profile.depe[n], profile.dene[n]
        );
    }
    Ok(())
}
