//! Calibrated market constants and reward weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment constants. Defaults are the calibrated monthly values for the
/// Italian market (30-year horizon).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    /// Episode length in months.
    pub horizon: usize,
    pub eta_d: f64,
    pub lambda_d: f64,
    pub rho_d: f64,
    pub sigma_d: f64,
    pub eta_s: f64,
    pub lambda_s: f64,
    pub rho_s: f64,
    pub sigma_s: f64,
    /// Storage capacity.
    pub i_max: f64,
    /// Monthly storage cost per unit of inventory.
    pub tau: f64,
    /// Monthly interest rate on the bank account.
    pub r: f64,
    /// Lower price bound `L`.
    pub action_lo: f64,
    /// Upper price bound `U`.
    pub action_hi: f64,
    pub gamma: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            horizon: 360,
            eta_d: 0.20,
            lambda_d: 0.975,
            rho_d: 0.98,
            sigma_d: 0.01,
            eta_s: 0.30,
            lambda_s: 0.95,
            rho_s: 0.75,
            sigma_s: 0.04,
            i_max: 3.0,
            tau: 0.005,
            r: 0.0025,
            action_lo: 0.01,
            action_hi: 100.0,
            gamma: 0.99,
        }
    }
}

fn check(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        check(self.horizon >= 1, "market.horizon", "must be at least 1")?;
        for (name, v) in [("market.lambda_d", self.lambda_d), ("market.lambda_s", self.lambda_s)] {
            check((0.0..1.0).contains(&v), name, "must lie in [0, 1)")?;
        }
        for (name, v) in [("market.rho_d", self.rho_d), ("market.rho_s", self.rho_s)] {
            check((0.0..1.0).contains(&v), name, "must lie in [0, 1)")?;
        }
        for (name, v) in [("market.sigma_d", self.sigma_d), ("market.sigma_s", self.sigma_s)] {
            check(v >= 0.0 && v.is_finite(), name, "must be finite and non-negative")?;
        }
        for (name, v) in [
            ("market.eta_d", self.eta_d),
            ("market.eta_s", self.eta_s),
            ("market.tau", self.tau),
            ("market.r", self.r),
        ] {
            check(v.is_finite(), name, "must be finite")?;
        }
        check(
            self.i_max > 0.0 && self.i_max.is_finite(),
            "market.i_max",
            "must be positive",
        )?;
        check(self.action_lo > 0.0, "market.action_lo", "must be positive")?;
        check(
            self.action_hi > self.action_lo && self.action_hi.is_finite(),
            "market.action_hi",
            "must be finite and greater than action_lo",
        )?;
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "market.gamma",
            "must lie in (0, 1]",
        )?;
        Ok(())
    }

    /// Bounds of the log-price action, `[ln L, ln U]`.
    pub fn log_action_bounds(&self) -> (f64, f64) {
        (self.action_lo.ln(), self.action_hi.ln())
    }
}

/// Penalty coefficients of the per-step reward and the refill rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Weight on squared log-price changes.
    pub theta_v: f64,
    /// Weight on market failures.
    pub theta_m: f64,
    /// Weight on missing the annual refill threshold.
    pub theta_n: f64,
    /// Required inventory as a fraction of capacity.
    pub refill_fraction: f64,
    /// Calendar month (1 = January) at whose beginning inventory is checked.
    pub refill_month: u32,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            theta_v: 20.0,
            theta_m: 1000.0,
            theta_n: 750.0,
            refill_fraction: 0.83,
            refill_month: 11,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("reward.theta_v", self.theta_v),
            ("reward.theta_m", self.theta_m),
            ("reward.theta_n", self.theta_n),
        ] {
            check(v >= 0.0 && v.is_finite(), name, "must be finite and non-negative")?;
        }
        check(
            (0.0..=1.0).contains(&self.refill_fraction),
            "reward.refill_fraction",
            "must lie in [0, 1]",
        )?;
        check(
            (1..=12).contains(&self.refill_month),
            "reward.refill_month",
            "must lie in 1..=12",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        MarketParams::default().validate().unwrap();
        RewardWeights::default().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let p = MarketParams {
            lambda_d: 1.0,
            ..Default::default()
        };
        match p.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "market.lambda_d"),
            other => panic!("unexpected {other:?}"),
        }
        let p = MarketParams {
            action_hi: 0.001,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config { field, .. }) if field == "market.action_hi"));
        let w = RewardWeights {
            refill_month: 13,
            ..Default::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config { field, .. }) if field == "reward.refill_month"));
    }

    #[test]
    fn symmetric_default_action_bounds() {
        let (lo, hi) = MarketParams::default().log_action_bounds();
        assert!((lo + hi).abs() < 1e-12);
        assert!((hi - 100f64.ln()).abs() < 1e-15);
    }
}
