//! Closed-form and brute-force references used to validate the solver:
//! Black-Scholes pricing, exact forward exposure profiles, FVA by
//! discounting, plain Monte Carlo pricing and finite-difference
//! differentiation.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{path_rng, MarketModel};

/// A reference value with its sampling uncertainty (zero for closed forms).
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePrice {
    pub value: f64,
    pub std_error: f64,
    /// 95% confidence interval.
    pub ci: (f64, f64),
}

impl OraclePrice {
    fn exact(value: f64) -> Self {
        OraclePrice {
            value,
            std_error: 0.0,
            ci: (value, value),
        }
    }
}

/// Standard normal CDF via Cody's rational Chebyshev approximation of erfc.
/// Absolute error is below 1e-14 over the whole real line, comfortably inside
/// the 1e-12 budget the oracles assume.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Complementary error function (Cody 1969, as in the CALERF routine).
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        return 1.0 - erf_small(x);
    } else if y <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        scaled_exp(y, (num + C[7]) / (den + D[7]))
    } else {
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        const INV_SQRT_PI: f64 = 5.6418958354775628695e-1;
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let r = z * (num + P[4]) / (den + Q[4]);
        scaled_exp(y, (INV_SQRT_PI - r) / y)
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// erf on |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let z = x * x;
    let mut num = A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + A[i]) * z;
        den = (den + B[i]) * z;
    }
    x * (num + A[3]) / (den + B[3])
}

/// exp(-y^2) * factor computed with the split-argument trick that keeps the
/// relative error of the exponential small for large y.
fn scaled_exp(y: f64, factor: f64) -> f64 {
    let z = (y * 16.0).floor() / 16.0;
    let del = (y - z) * (y + z);
    (-z * z).exp() * (-del).exp() * factor
}

/// Black-Scholes price of a European call.
///
/// Degenerate cases (zero maturity or volatility) return the deterministic
/// value `(s - K e^{-r tau})^+`.
pub fn bs_call(s: f64, strike: f64, rate: f64, vol: f64, tau: f64) -> Result<OraclePrice> {
    if s <= 0.0 || strike <= 0.0 {
        return Err(Error::invalid("spot and strike must be positive"));
    }
    if tau < 0.0 || vol < 0.0 {
        return Err(Error::invalid("maturity and volatility must be nonnegative"));
    }
    if tau == 0.0 || vol == 0.0 {
        let v = (s - strike * (-rate * tau).exp()).max(0.0);
        return Ok(OraclePrice::exact(v));
    }
    let sq = vol * tau.sqrt();
    let d1 = ((s / strike).ln() + (rate + 0.5 * vol * vol) * tau) / sq;
    let d2 = d1 - sq;
    let v = s * norm_cdf(d1) - strike * (-rate * tau).exp() * norm_cdf(d2);
    Ok(OraclePrice::exact(v))
}

/// Black-Scholes call delta, the hedge-ratio reference for the pathwise
/// sensitivities.
pub fn bs_call_delta(s: f64, strike: f64, rate: f64, vol: f64, tau: f64) -> Result<f64> {
    if s <= 0.0 || strike <= 0.0 {
        return Err(Error::invalid("spot and strike must be positive"));
    }
    if tau <= 0.0 || vol <= 0.0 {
        return Ok(if s >= strike * (-rate * tau).exp() { 1.0 } else { 0.0 });
    }
    let sq = vol * tau.sqrt();
    let d1 = ((s / strike).ln() + (rate + 0.5 * vol * vol) * tau) / sq;
    Ok(norm_cdf(d1))
}

/// Exact discounted expected positive/negative exposure of an equity forward
/// at observation time `s`, seen from time 0.
pub fn forward_exposures(
    s0: f64,
    strike: f64,
    rate: f64,
    vol: f64,
    horizon: f64,
    s: f64,
) -> Result<(f64, f64)> {
    if s0 <= 0.0 || strike <= 0.0 {
        return Err(Error::invalid("spot and strike must be positive"));
    }
    if s <= 0.0 || s > horizon {
        return Err(Error::invalid(format!(
            "observation time {s} must lie in (0, {horizon}]"
        )));
    }
    let sq = vol * s.sqrt();
    let d1 = ((s0 / strike).ln() + 0.5 * vol * vol * s) / sq;
    let d2 = d1 - sq;
    let kd = strike * (-rate * horizon).exp();
    let depe = s0 * norm_cdf(d1) - kd * norm_cdf(d2);
    let dene = s0 * norm_cdf(-d1) - kd * norm_cdf(-d2);
    Ok((depe, dene))
}

/// Clean value, all-in value discounted at the unsecured funding rate, and
/// their difference (the FVA) for an equity forward struck at `strike`.
///
/// The locked-in cashflow is discounted at `r_fund` while the asset keeps
/// accruing at `rate`, so the all-in value is
/// `s0 e^{(r - r^f) T} - K e^{-r^f T}`.
pub fn fva_by_discounting(
    s0: f64,
    strike: f64,
    rate: f64,
    r_fund: f64,
    horizon: f64,
) -> (f64, f64, f64) {
    let clean = s0 - strike * (-rate * horizon).exp();
    let all_in = s0 * ((rate - r_fund) * horizon).exp() - strike * (-r_fund * horizon).exp();
    (clean, all_in, clean - all_in)
}

/// Plain Monte Carlo price of `payoff(S_T)` with exact one-step lognormal
/// terminal sampling (no time grid, hence no discretization error).
pub fn mc_price<F>(
    model: &MarketModel,
    payoff: F,
    discount_rate: f64,
    horizon: f64,
    n: usize,
    seed: u64,
) -> Result<OraclePrice>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::invalid("monte carlo needs at least 2 samples"));
    }
    let d = model.dim();
    let chol = model.correlation_factor();
    let identity_corr = chol == &Array2::eye(d);
    let sqrt_t = horizon.sqrt();
    let disc = (-discount_rate * horizon).exp();
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut z = vec![0.0_f64; d];
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let mut s = vec![0.0_f64; d];
            for i in 0..d {
                let w = if identity_corr {
                    z[i]
                } else {
                    (0..=i).map(|k| chol[[i, k]] * z[k]).sum()
                };
                let (r, v) = (model.rates()[i], model.vols()[i]);
                s[i] = model.initial_prices()[i]
                    * ((r - 0.5 * v * v) * horizon + v * sqrt_t * w).exp();
            }
            payoff(&s) * disc
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Ok(OraclePrice {
        value: mean,
        std_error: se,
        ci: (mean - 1.96 * se, mean + 1.96 * se),
    })
}

/// Central-difference Jacobian of a vector function, columnwise in the
/// perturbed coordinate.
pub fn finite_diff_jacobian<F>(f: &F, x: &[f64], h: f64) -> Array2<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let fx = f(x);
    let (m, n) = (fx.len(), x.len());
    let mut jac = Array2::zeros((m, n));
    let mut probe = x.to_vec();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = f(&probe);
        probe[j] = orig - h;
        let down = f(&probe);
        probe[j] = orig;
        for i in 0..m {
            jac[[i, j]] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}
