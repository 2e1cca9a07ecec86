//! Rate/intensity/recovery inputs of the xVA framework and the collateral
//! rule.

use crate::error::{Error, Result};

/// Deterministic function of time: a constant or a left-continuous step
/// function. Stochastic rates are out of scope.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFn {
    Const(f64),
    /// Piecewise constant: value `values[i]` on `[times[i], times[i+1])`,
    /// with `times[0] = 0`.
    Step { times: Vec<f64>, values: Vec<f64> },
}

impl TimeFn {
    pub fn constant(v: f64) -> Self {
        TimeFn::Const(v)
    }

    pub fn step(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("step function needs matching nonempty knots"));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid("step function must start at t = 0"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("step function knots must increase"));
        }
        Ok(TimeFn::Step { times, values })
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(v) => *v,
            TimeFn::Step { times, values } => {
                let idx = times.partition_point(|knot| *knot <= t);
                values[idx.saturating_sub(1)]
            }
        }
    }

    /// Integral over [0, t].
    pub fn integral_to(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(v) => v * t,
            TimeFn::Step { times, values } => {
                let mut acc = 0.0;
                for i in 0..times.len() {
                    let lo = times[i];
                    if lo >= t {
                        break;
                    }
                    let hi = if i + 1 < times.len() { times[i + 1].min(t) } else { t };
                    acc += values[i] * (hi - lo);
                }
                acc
            }
        }
    }
}

/// All rate, intensity and recovery inputs: the ideal collateral rate r,
/// unsecured funding lending/borrowing rates, collateral lending/borrowing
/// rates, default intensities and recoveries of the bank (B) and the
/// counterparty (C).
#[derive(Debug, Clone, PartialEq)]
pub struct XvaRates {
    pub r: TimeFn,
    pub r_fund_lend: TimeFn,
    pub r_fund_borrow: TimeFn,
    pub r_coll_lend: TimeFn,
    pub r_coll_borrow: TimeFn,
    pub lambda_bank: TimeFn,
    pub lambda_cpty: TimeFn,
    pub recovery_bank: f64,
    pub recovery_cpty: f64,
}

impl XvaRates {
    #[allow(clippy::too_many_arguments)]
    pub fn constants(
        r: f64,
        r_fund_lend: f64,
        r_fund_borrow: f64,
        r_coll_lend: f64,
        r_coll_borrow: f64,
        lambda_bank: f64,
        lambda_cpty: f64,
        recovery_bank: f64,
        recovery_cpty: f64,
    ) -> Result<Self> {
        let rates = XvaRates {
            r: TimeFn::constant(r),
            r_fund_lend: TimeFn::constant(r_fund_lend),
            r_fund_borrow: TimeFn::constant(r_fund_borrow),
            r_coll_lend: TimeFn::constant(r_coll_lend),
            r_coll_borrow: TimeFn::constant(r_coll_borrow),
            lambda_bank: TimeFn::constant(lambda_bank),
            lambda_cpty: TimeFn::constant(lambda_cpty),
            recovery_bank,
            recovery_cpty,
        };
        rates.validate()?;
        Ok(rates)
    }

    /// Single risk-free rate, no default risk, no spreads.
    pub fn risk_free(r: f64) -> Self {
        Self::constants(r, r, r, r, r, 0.0, 0.0, 0.4, 0.4).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lambda) in [("bank", &self.lambda_bank), ("counterparty", &self.lambda_cpty)] {
            let bad = match lambda {
                TimeFn::Const(v) => *v < 0.0,
                TimeFn::Step { values, .. } => values.iter().any(|v| *v < 0.0),
            };
            if bad {
                return Err(Error::invalid(format!("{name} intensity must be nonnegative")));
            }
        }
        for (name, rec) in [
            ("bank", self.recovery_bank),
            ("counterparty", self.recovery_cpty),
        ] {
            if !(0.0..=1.0).contains(&rec) {
                return Err(Error::invalid(format!(
                    "{name} recovery must lie in [0, 1], got {rec}"
                )));
            }
        }
        Ok(())
    }

    /// Default-adjusted short rate r~ = r + lambda_B + lambda_C.
    pub fn tilde_rate_at(&self, t: f64) -> f64 {
        self.r.at(t) + self.lambda_bank.at(t) + self.lambda_cpty.at(t)
    }

    /// exp(-int_0^t r~).
    pub fn tilde_discount(&self, t: f64) -> f64 {
        (-(self.r.integral_to(t)
            + self.lambda_bank.integral_to(t)
            + self.lambda_cpty.integral_to(t)))
        .exp()
    }

    /// exp(-int_0^t r).
    pub fn discount(&self, t: f64) -> f64 {
        (-self.r.integral_to(t)).exp()
    }
}

/// Variation-margin rule with posting and receiving thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct CollateralSpec {
    pub enabled: bool,
    pub threshold_receive: f64,
    pub threshold_post: f64,
}

impl CollateralSpec {
    pub fn none() -> Self {
        CollateralSpec {
            enabled: false,
            threshold_receive: 0.0,
            threshold_post: 0.0,
        }
    }

    pub fn with_thresholds(threshold_receive: f64, threshold_post: f64) -> Result<Self> {
        if threshold_receive < 0.0 || threshold_post < 0.0 {
            return Err(Error::invalid("collateral thresholds must be nonnegative"));
        }
        Ok(CollateralSpec {
            enabled: true,
            threshold_receive,
            threshold_post,
        })
    }
}

/// Collateral balance C(v) = (v - H_r)^+ - (v + H_p)^-; zero when disabled.
pub fn collateral(spec: &CollateralSpec, v_hat: f64) -> f64 {
    if !spec.enabled {
        return 0.0;
    }
    pos_part(v_hat - spec.threshold_receive) - neg_part(v_hat + spec.threshold_post)
}

#[inline]
pub(crate) fn pos_part(x: f64) -> f64 {
    x.max(0.0)
}

/// Negative part, returned as a nonnegative number.
#[inline]
pub(crate) fn neg_part(x: f64) -> f64 {
    (-x).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn collateral_inside_thresholds_is_zero() {
        let spec = CollateralSpec::with_thresholds(5.0, 5.0).unwrap();
        assert_eq!(collateral(&spec, 0.0), 0.0);
        assert_eq!(collateral(&spec, 4.9), 0.0);
        assert_eq!(collateral(&spec, -4.9), 0.0);
    }

    #[test]
    fn collateral_paper_values() {
        let spec = CollateralSpec::with_thresholds(5.0, 5.0).unwrap();
        assert_eq!(collateral(&spec, 10.0), 5.0);
        assert_eq!(collateral(&spec, -10.0), -5.0);
    }

    #[test]
    fn collateral_disabled_is_identically_zero() {
        let spec = CollateralSpec::none();
        assert_eq!(collateral(&spec, 1e6), 0.0);
        assert_eq!(collateral(&spec, -1e6), 0.0);
    }

    proptest! {
        /// |v - C(v)| <= |v|, and once the threshold is active the
        /// post-collateral exposure is capped at it.
        #[test]
        fn collateral_shrinks_exposure(v in -1e3..1e3f64, hr in 0.0..50.0f64, hp in 0.0..50.0f64) {
            let spec = CollateralSpec::with_thresholds(hr, hp).unwrap();
            let c = collateral(&spec, v);
            let post = v - c;
            prop_assert!(post.abs() <= v.abs() + 1e-12);
            if v > hr {
                prop_assert!((post - hr).abs() < 1e-12);
            }
            if v < -hp {
                prop_assert!((post + hp).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn timefn_step_evaluation_and_integral() {
        let f = TimeFn::step(vec![0.0, 1.0, 2.0], vec![0.02, 0.03, 0.01]).unwrap();
        assert_eq!(f.at(0.0), 0.02);
        assert_eq!(f.at(0.99), 0.02);
        assert_eq!(f.at(1.0), 0.03);
        assert_eq!(f.at(5.0), 0.01);
        assert_relative_eq!(f.integral_to(0.5), 0.01, epsilon = 1e-15);
        assert_relative_eq!(f.integral_to(1.5), 0.02 + 0.015, epsilon = 1e-15);
        assert_relative_eq!(f.integral_to(3.0), 0.02 + 0.03 + 0.01, epsilon = 1e-15);
    }

    #[test]
    fn timefn_step_rejects_bad_knots() {
        assert!(TimeFn::step(vec![0.5], vec![1.0]).is_err());
        assert!(TimeFn::step(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(TimeFn::step(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn tilde_rate_is_sum_of_rate_and_intensities() {
        let rates = XvaRates::constants(0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.10, 0.4, 0.3).unwrap();
        assert_relative_eq!(rates.tilde_rate_at(0.3), 0.12, epsilon = 1e-15);
        assert_relative_eq!(rates.tilde_discount(1.0), (-0.12f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn rates_validate_bounds() {
        assert!(XvaRates::constants(0.0, 0.0, 0.0, 0.0, 0.0, -0.1, 0.0, 0.4, 0.4).is_err());
        assert!(XvaRates::constants(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.4, 0.4).is_err());
    }
}
