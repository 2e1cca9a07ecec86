//! Valuation adjustments: the non-recursive outer Monte Carlo quadrature
//! for CVA/DVA, the recursive xVA equation, and the a posteriori error
//! bound diagnostic.

use ndarray::Array2;

use crate::bsde::{
    self, BsdeProblem, ControlInput, Driver, SolverConfig, StepState, TrainedBsde,
};
use crate::error::{Error, Result};
use crate::market::{simulate, Scheme, TimeGrid};
use crate::xva::rates::{collateral, neg_part, pos_part, CollateralSpec, XvaRates};
use crate::xva::{portfolio_value_paths, TrainedClaim};

/// Which non-recursive adjustment the unified integrand computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustmentKind {
    Cva,
    Dva,
}

/// Integrand of the unified CVA/DVA formula, discounted to time 0 at the
/// default-adjusted rate:
///
/// ```text
/// CVA: (1 - R^C) e^{-int r~} (v - c)^- lambda^C(t)
/// DVA: (1 - R^B) e^{-int r~} (v - c)^+ lambda^B(t)
/// ```
pub fn cva_dva_integrand(
    rates: &XvaRates,
    kind: AdjustmentKind,
    t: f64,
    v_hat: f64,
    c: f64,
) -> f64 {
    let disc = rates.tilde_discount(t);
    match kind {
        AdjustmentKind::Cva => {
            (1.0 - rates.recovery_cpty) * disc * neg_part(v_hat - c) * rates.lambda_cpty.at(t)
        }
        AdjustmentKind::Dva => {
            (1.0 - rates.recovery_bank) * disc * pos_part(v_hat - c) * rates.lambda_bank.at(t)
        }
    }
}

/// Non-recursive adjustment by outer Monte Carlo: simulates `outer_paths`
/// fresh paths, evaluates the clean portfolio along them, applies the
/// collateral rule, and integrates the unified integrand with the rectangle
/// rule (eta_N = 0, eta_n = dt). Returns the sample mean and its standard
/// error.
#[allow(clippy::too_many_arguments)]
pub fn adjustment_mc(
    claims: &[TrainedClaim],
    model: &crate::market::MarketModel,
    rates: &XvaRates,
    coll: &CollateralSpec,
    kind: AdjustmentKind,
    grid: &TimeGrid,
    outer_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<(f64, f64)> {
    let paths = simulate_outer(claims, model, grid, outer_paths, seed, scheme)?;
    let per_path = rectangle_quadrature(&paths, grid, coll, |t, v, c| {
        cva_dva_integrand(rates, kind, t, v, c)
    });
    Ok(mean_and_se(&per_path))
}

/// Combined adjustment -CVA + DVA on one shared outer simulation, with the
/// standard error of the per-path *difference* (the two legs are strongly
/// correlated since they integrate the same paths).
#[allow(clippy::too_many_arguments)]
pub fn combined_adjustment_mc(
    claims: &[TrainedClaim],
    model: &crate::market::MarketModel,
    rates: &XvaRates,
    coll: &CollateralSpec,
    grid: &TimeGrid,
    outer_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<(f64, f64)> {
    let paths = simulate_outer(claims, model, grid, outer_paths, seed, scheme)?;
    let per_path = rectangle_quadrature(&paths, grid, coll, |t, v, c| {
        cva_dva_integrand(rates, AdjustmentKind::Dva, t, v, c)
            - cva_dva_integrand(rates, AdjustmentKind::Cva, t, v, c)
    });
    Ok(mean_and_se(&per_path))
}

fn simulate_outer(
    claims: &[TrainedClaim],
    model: &crate::market::MarketModel,
    grid: &TimeGrid,
    outer_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<crate::bsde::ValuePaths> {
    if outer_paths < 2 {
        return Err(Error::invalid("outer Monte Carlo needs at least 2 paths"));
    }
    let paths = simulate(model, grid, outer_paths, seed, scheme)?;
    portfolio_value_paths(claims, &paths)
}

/// Rectangle rule (eta_N = 0, eta_n = dt) applied pathwise to a random
/// field of the collateralized clean value.
fn rectangle_quadrature(
    portfolio: &crate::bsde::ValuePaths,
    grid: &TimeGrid,
    coll: &CollateralSpec,
    phi: impl Fn(f64, f64, f64) -> f64,
) -> Vec<f64> {
    let dt = grid.dt();
    (0..portfolio.count())
        .map(|p| {
            let mut acc = 0.0;
            for n in 0..grid.steps() {
                let t = grid.node(n);
                let v = portfolio.values()[[p, n]];
                let c = collateral(coll, v);
                acc += phi(t, v, c) * dt;
            }
            acc
        })
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pre-default xVA driver
///
/// ```text
/// f(t, v, x) = -(1-R^C)(v-c)^- lam^C + (1-R^B)(v-c)^+ lam^B
///              + (r^{f,l}-r)(v-x-c)^+ - (r^{f,b}-r)(v-x-c)^-
///              + (r^{c,l}-r)c^+ - (r^{c,b}-r)c^-
///              - (r + lam^C + lam^B) x
/// ```
///
/// with c the collateral posted against the clean value v.
pub fn xva_driver(rates: &XvaRates, t: f64, v_hat: f64, c: f64, x: f64) -> f64 {
    let r = rates.r.at(t);
    let exposure = v_hat - c;
    let funding_gap = v_hat - x - c;
    -(1.0 - rates.recovery_cpty) * neg_part(exposure) * rates.lambda_cpty.at(t)
        + (1.0 - rates.recovery_bank) * pos_part(exposure) * rates.lambda_bank.at(t)
        + (rates.r_fund_lend.at(t) - r) * pos_part(funding_gap)
        - (rates.r_fund_borrow.at(t) - r) * neg_part(funding_gap)
        + (rates.r_coll_lend.at(t) - r) * pos_part(c)
        - (rates.r_coll_borrow.at(t) - r) * neg_part(c)
        - rates.tilde_rate_at(t) * x
}

/// `Driver` adapter: reads the clean portfolio value from the auxiliary
/// state and applies the collateral rule before calling [`xva_driver`].
pub struct XvaDriver {
    pub rates: XvaRates,
    pub collateral: CollateralSpec,
}

impl Driver for XvaDriver {
    fn value(&self, t: f64, state: &StepState, y: f64, _z: &[f64]) -> f64 {
        let v = state.aux.expect("xva driver requires the portfolio value");
        let c = collateral(&self.collateral, v);
        xva_driver(&self.rates, t, v, c, y)
    }

    fn dy(&self, t: f64, state: &StepState, y: f64, _z: &[f64]) -> f64 {
        let v = state.aux.expect("xva driver requires the portfolio value");
        let c = collateral(&self.collateral, v);
        let r = self.rates.r.at(t);
        let funding_gap = v - y - c;
        let mut d = -self.rates.tilde_rate_at(t);
        if funding_gap > 0.0 {
            d -= self.rates.r_fund_lend.at(t) - r;
        } else if funding_gap < 0.0 {
            d -= self.rates.r_fund_borrow.at(t) - r;
        }
        d
    }
}

/// Configuration of the recursive solve: outer path generation plus the
/// solver settings for the adjustment networks.
#[derive(Debug, Clone)]
pub struct XvaConfig {
    pub solver: SolverConfig,
    /// Outer Monte Carlo paths P the equation trains on.
    pub outer_paths: usize,
    /// Seed for the outer paths, distinct from every training seed.
    pub outer_seed: u64,
    pub scheme: Scheme,
    /// What the adjustment networks see: the scalar clean portfolio value
    /// (default) or the full asset state.
    pub input: ControlInput,
}

impl XvaConfig {
    pub fn new(solver: SolverConfig, outer_paths: usize, outer_seed: u64) -> Self {
        XvaConfig {
            solver,
            outer_paths,
            outer_seed,
            scheme: Scheme::Exact,
            input: ControlInput::Auxiliary,
        }
    }
}

/// Trained recursive solution: the initial value gamma* is the time-0
/// aggregate adjustment.
#[derive(Debug, Clone)]
pub struct XvaSolution {
    pub trained: TrainedBsde,
    pub adjustment: f64,
    pub input: ControlInput,
    pub rates: XvaRates,
    pub collateral: CollateralSpec,
}

/// Recursive xVA solve: simulates the clean portfolio along P outer paths
/// (from the trained claims), then trains the pre-default xVA equation with
/// terminal condition zero on those paths.
pub fn solve_xva(
    claims: &[TrainedClaim],
    model: &crate::market::MarketModel,
    rates: &XvaRates,
    coll: &CollateralSpec,
    grid: &TimeGrid,
    config: &XvaConfig,
) -> Result<XvaSolution> {
    rates.validate()?;
    let paths = simulate(model, grid, config.outer_paths, config.outer_seed, config.scheme)?;
    let portfolio = portfolio_value_paths(claims, &paths)?;
    let problem = xva_problem(rates, coll, model.dim(), config.input);
    let aux: Array2<f64> = portfolio.values().clone();
    let trained = bsde::train_on_paths(&problem, &paths, Some(&aux), &config.solver)?;
    let adjustment = trained.xi;
    Ok(XvaSolution {
        trained,
        adjustment,
        input: config.input,
        rates: rates.clone(),
        collateral: coll.clone(),
    })
}

/// The xVA backward equation as a [`BsdeProblem`]: driver `f`, terminal
/// value zero, auxiliary state required.
pub fn xva_problem(
    rates: &XvaRates,
    coll: &CollateralSpec,
    dim: usize,
    input: ControlInput,
) -> BsdeProblem {
    BsdeProblem {
        driver: Box::new(XvaDriver {
            rates: rates.clone(),
            collateral: coll.clone(),
        }),
        terminal: Box::new(|_| 0.0),
        control_dim: dim,
        input,
        requires_aux: true,
    }
}

/// Right-hand side of the non-recursive a posteriori error estimate:
/// `C (dt + sum_m loss_m)^{1/2}`.
pub fn a_posteriori_bound(terminal_losses: &[f64], dt: f64, c: f64) -> Result<f64> {
    if terminal_losses.iter().any(|l| *l < 0.0) {
        return Err(Error::invalid("terminal losses must be nonnegative"));
    }
    if dt < 0.0 {
        return Err(Error::invalid("dt must be nonnegative"));
    }
    Ok(c * (dt + terminal_losses.iter().sum::<f64>()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketModel;
    use crate::xva::tests::constant_value_claim;
    use approx::assert_relative_eq;

    fn basket_rates() -> XvaRates {
        // lambda^C = 0.10, lambda^B = 0.01, R^C = 0.3, R^B = 0.4, r = 0.01
        XvaRates::constants(0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.10, 0.4, 0.3).unwrap()
    }

    #[test]
    fn integrand_vanishes_when_fully_collateralized() {
        let rates = basket_rates();
        for kind in [AdjustmentKind::Cva, AdjustmentKind::Dva] {
            assert_eq!(cva_dva_integrand(&rates, kind, 0.5, 12.0, 12.0), 0.0);
        }
    }

    #[test]
    fn full_collateralization_kills_both_integrands() {
        // thresholds at zero make C(v) = v pointwise
        let spec = crate::xva::CollateralSpec::with_thresholds(0.0, 0.0).unwrap();
        let rates = basket_rates();
        for v in [-250.0, -1.0, 0.0, 3.0, 900.0] {
            let c = crate::xva::collateral(&spec, v);
            assert_eq!(c, v);
            assert_eq!(cva_dva_integrand(&rates, AdjustmentKind::Cva, 0.4, v, c), 0.0);
            assert_eq!(cva_dva_integrand(&rates, AdjustmentKind::Dva, 0.4, v, c), 0.0);
        }
    }

    #[test]
    fn cva_integrand_zero_on_positive_exposure() {
        let rates = basket_rates();
        assert_eq!(
            cva_dva_integrand(&rates, AdjustmentKind::Cva, 0.5, 10.0, 0.0),
            0.0
        );
    }

    #[test]
    fn dva_integrand_hand_value() {
        let rates = basket_rates();
        let v = cva_dva_integrand(&rates, AdjustmentKind::Dva, 1.0, 157.99, 0.0);
        // 0.6 e^{-0.12} 157.99 0.01
        assert_relative_eq!(v, 0.8407473587816623, epsilon = 1e-12);
    }

    #[test]
    fn integrands_are_nonnegative() {
        let rates = basket_rates();
        for v in [-200.0, -1.0, 0.0, 3.0, 500.0] {
            for c in [-20.0, 0.0, 20.0] {
                assert!(cva_dva_integrand(&rates, AdjustmentKind::Cva, 0.3, v, c) >= 0.0);
                assert!(cva_dva_integrand(&rates, AdjustmentKind::Dva, 0.3, v, c) >= 0.0);
            }
        }
    }

    #[test]
    fn xva_driver_trivial_zero() {
        let rates = XvaRates::risk_free(0.02);
        assert_eq!(xva_driver(&rates, 0.1, 5.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn xva_driver_basket_hand_value() {
        let rates = basket_rates();
        let f = xva_driver(&rates, 0.0, 157.99, 0.0, 0.0);
        assert_relative_eq!(f, 0.94794, epsilon = 1e-10);
    }

    #[test]
    fn xva_driver_funding_hand_value() {
        // no default risk, r^f = 0.04, r = 0.02, c = 0
        let rates = XvaRates::constants(0.02, 0.04, 0.04, 0.02, 0.02, 0.0, 0.0, 0.4, 0.4).unwrap();
        let f = xva_driver(&rates, 0.0, 1.9801, 0.0, 0.0);
        assert_relative_eq!(f, 0.039602, epsilon = 1e-12);
        // and with x > 0 the funding term sees v - x while -r x accrues
        let f2 = xva_driver(&rates, 0.0, 1.9801, 0.0, 0.1);
        assert_relative_eq!(f2, 0.02 * (1.9801 - 0.1) - 0.02 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn intensity_free_adjustment_is_exactly_zero() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
        let claim = constant_value_claim(&grid, 1, 50.0);
        let rates = XvaRates::risk_free(0.01);
        let (est, se) = adjustment_mc(
            std::slice::from_ref(&claim),
            &model,
            &rates,
            &CollateralSpec::none(),
            AdjustmentKind::Dva,
            &grid,
            64,
            9,
            Scheme::Exact,
        )
        .unwrap();
        assert_eq!(est, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn constant_exposure_dva_matches_closed_form_with_rectangle_error() {
        // V = v > 0 constant, C = 0:
        // DVA = (1-R^B) lam^B v (1 - e^{-r~T}) / r~, quadrature error O(dt).
        let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
        let rates = basket_rates();
        let v = 100.0;
        let r_tilde = 0.12;
        let exact = 0.6 * 0.01 * v * (1.0 - (-r_tilde_f() * 1.0f64).exp()) / r_tilde;

        fn r_tilde_f() -> f64 {
            0.12
        }

        let mut errors = Vec::new();
        for steps in [20, 40, 80] {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let claim = constant_value_claim(&grid, 1, v);
            let (est, se) = adjustment_mc(
                std::slice::from_ref(&claim),
                &model,
                &rates,
                &CollateralSpec::none(),
                AdjustmentKind::Dva,
                &grid,
                32,
                5,
                Scheme::Exact,
            )
            .unwrap();
            assert!(se < 1e-12, "constant exposure has zero sampling error, got {se}");
            errors.push((est - exact).abs());
        }
        // halving dt should halve the rectangle-rule error
        assert!(errors[0] > 0.0);
        let r1 = errors[0] / errors[1];
        let r2 = errors[1] / errors[2];
        assert!((1.7..2.3).contains(&r1), "ratio {r1}");
        assert!((1.7..2.3).contains(&r2), "ratio {r2}");
        assert!(errors[0] < 0.01);
    }

    /// With zero networks and a deterministic exposure, the trained
    /// recursion is the explicit Euler scheme of x' = -f(t, v, x).
    #[test]
    fn xva_recursion_matches_scalar_ode() {
        let rates = XvaRates::constants(0.02, 0.04, 0.04, 0.02, 0.02, 0.0, 0.0, 0.4, 0.4).unwrap();
        let coll = CollateralSpec::none();
        let v = 1.9801;
        let steps = 200;
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let problem = xva_problem(&rates, &coll, 1, ControlInput::Auxiliary);
        let state_aux = |x_val: f64, t: f64| {
            let s = [100.0];
            let st = StepState {
                assets: &s,
                aux: Some(v),
            };
            problem.driver.value(t, &st, x_val, &[0.0])
        };
        // explicit Euler from gamma chosen to hit ~0 at T for the exact ODE
        let s = 0.02; // funding spread
        let r = 0.02;
        let gamma = s * v / (s + r) * (1.0 - (-(s + r) * 1.0f64).exp());
        let dt = grid.dt();
        let mut x = gamma;
        for n in 0..steps {
            x -= state_aux(x, grid.node(n)) * dt;
        }
        // exact solution has x(T) = 0; Euler should land within O(dt)
        assert!(x.abs() < 5.0 * dt, "terminal {x} at dt {dt}");
    }

    #[test]
    fn a_posteriori_examples() {
        assert_eq!(a_posteriori_bound(&[0.0, 0.0], 0.0, 3.0).unwrap(), 0.0);
        assert_relative_eq!(
            a_posteriori_bound(&[0.0003, 0.0001], 0.01, 1.0).unwrap(),
            0.1019803902718557,
            epsilon = 1e-12
        );
        // monotone in dt and losses
        let b1 = a_posteriori_bound(&[0.1], 0.01, 2.0).unwrap();
        let b2 = a_posteriori_bound(&[0.1], 0.02, 2.0).unwrap();
        let b3 = a_posteriori_bound(&[0.2], 0.01, 2.0).unwrap();
        assert!(b2 > b1);
        assert!(b3 > b1);
        assert!(a_posteriori_bound(&[-0.1], 0.01, 1.0).is_err());
    }
}
