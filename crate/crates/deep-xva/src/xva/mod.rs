//! Financial layer binding the generic BSDE solver to the valuation
//! adjustment framework: clean-value claims, portfolio aggregation,
//! collateral, the CVA/DVA outer quadrature, the recursive xVA equation,
//! exposure profiles and pathwise sensitivities.

mod adjustments;
mod exposure;
mod rates;
mod sensitivities;

pub use adjustments::{
    a_posteriori_bound, adjustment_mc, combined_adjustment_mc, cva_dva_integrand, solve_xva,
    xva_driver, xva_problem, AdjustmentKind, XvaConfig, XvaDriver, XvaSolution,
};
pub use exposure::{exposure_profile, ExposureProfile};
pub use rates::{collateral, CollateralSpec, TimeFn, XvaRates};
pub use sensitivities::{pathwise_deltas, pathwise_gamma};

use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::bsde::{
    self, BsdeProblem, ControlInput, Driver, SolverConfig, StepState, TrainedBsde, ValuePaths,
};
use crate::error::{Error, Result};
use crate::market::{MarketModel, PathBatch, TimeGrid};

/// A European-style claim: terminal payoff on the d asset prices.
#[derive(Clone)]
pub struct EuropeanClaim {
    pub payoff: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub maturity: f64,
    pub label: String,
}

impl std::fmt::Debug for EuropeanClaim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EuropeanClaim")
            .field("maturity", &self.maturity)
            .field("label", &self.label)
            .finish()
    }
}

impl EuropeanClaim {
    /// Forward on the asset sum: g(S) = sum_i S_i - d K.
    pub fn forward(strike: f64, maturity: f64) -> Self {
        EuropeanClaim {
            payoff: Arc::new(move |s: &[f64]| {
                s.iter().sum::<f64>() - s.len() as f64 * strike
            }),
            maturity,
            label: format!("forward K={strike}"),
        }
    }

    /// European call on a single asset: g(S) = (S_1 - K)^+.
    pub fn call(strike: f64, maturity: f64) -> Self {
        EuropeanClaim {
            payoff: Arc::new(move |s: &[f64]| (s[0] - strike).max(0.0)),
            maturity,
            label: format!("call K={strike}"),
        }
    }

    /// Basket call: g(S) = (sum_i S_i - d K)^+.
    pub fn basket_call(strike: f64, maturity: f64) -> Self {
        EuropeanClaim {
            payoff: Arc::new(move |s: &[f64]| {
                (s.iter().sum::<f64>() - s.len() as f64 * strike).max(0.0)
            }),
            maturity,
            label: format!("basket call K={strike}"),
        }
    }

    /// Negated payoff (short position), used for portfolio-linearity checks.
    pub fn negated(&self) -> Self {
        let payoff = self.payoff.clone();
        EuropeanClaim {
            payoff: Arc::new(move |s: &[f64]| -(payoff)(s)),
            maturity: self.maturity,
            label: format!("-({})", self.label),
        }
    }
}

/// Clean-value driver h(t, x, y, z) = -r(t) y.
pub struct CleanValueDriver {
    rate: TimeFn,
}

impl Driver for CleanValueDriver {
    fn value(&self, t: f64, _state: &StepState, y: f64, _z: &[f64]) -> f64 {
        -self.rate.at(t) * y
    }

    fn dy(&self, t: f64, _state: &StepState, _y: f64, _z: &[f64]) -> f64 {
        -self.rate.at(t)
    }
}

/// Backward equation for one claim's clean value: driver -r y, terminal
/// g_m, control fed by the asset state.
pub fn clean_claim_problem(claim: &EuropeanClaim, rates: &XvaRates, dim: usize) -> BsdeProblem {
    let payoff = claim.payoff.clone();
    BsdeProblem {
        driver: Box::new(CleanValueDriver {
            rate: rates.r.clone(),
        }),
        terminal: Box::new(move |x: &[f64]| (payoff)(x)),
        control_dim: dim,
        input: ControlInput::AssetState,
        requires_aux: false,
    }
}

/// A claim together with its trained clean-value solution.
pub struct TrainedClaim {
    pub claim: EuropeanClaim,
    pub problem: BsdeProblem,
    pub trained: TrainedBsde,
}

/// Trains the clean-value equation of one claim (Algorithm-1 step).
pub fn train_claim(
    claim: &EuropeanClaim,
    rates: &XvaRates,
    model: &MarketModel,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<TrainedClaim> {
    if (claim.maturity - grid.horizon()).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "claim maturity {} must equal the grid horizon {}",
            claim.maturity,
            grid.horizon()
        )));
    }
    let problem = clean_claim_problem(claim, rates, model.dim());
    let trained = bsde::train(&problem, model, grid, config)?;
    Ok(TrainedClaim {
        claim: claim.clone(),
        problem,
        trained,
    })
}

/// Nodewise, pathwise sum of per-claim value paths (and of their controls).
pub fn aggregate_portfolio(claims: &[ValuePaths]) -> Result<ValuePaths> {
    let first = claims
        .first()
        .ok_or_else(|| Error::InvalidState("cannot aggregate an empty portfolio".into()))?;
    let mut values: Array2<f64> = first.values().clone();
    let mut controls: Array3<f64> = first.controls().clone();
    for vp in &claims[1..] {
        if vp.grid() != first.grid()
            || vp.values().dim() != values.dim()
            || vp.controls().dim() != controls.dim()
        {
            return Err(Error::invalid(
                "portfolio legs must share grid and path batch",
            ));
        }
        values += vp.values();
        controls += vp.controls();
    }
    ValuePaths::from_parts(first.grid().clone(), values, controls)
}

/// Evaluates every trained claim on the same outer path batch and sums them
/// into the clean portfolio value paths.
pub fn portfolio_value_paths(claims: &[TrainedClaim], paths: &PathBatch) -> Result<ValuePaths> {
    if claims.is_empty() {
        return Err(Error::InvalidState("no trained claims in portfolio".into()));
    }
    let legs: Vec<ValuePaths> = claims
        .iter()
        .map(|c| bsde::evaluate(&c.trained, &c.problem, paths, None))
        .collect::<Result<_>>()?;
    aggregate_portfolio(&legs)
}
