//! Monthly gas-market environment driven by a posted log price.
//!
//! Each step runs, in order: action clipping, sticky price-signal update,
//! seasonal demand, AR(1) shocks, demand and supply, storage transition,
//! refill check, bank account and reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseState;
use crate::params::{MarketParams, RewardWeights};
use crate::seasonality::{harmonic_basis, SeasonalCoefficients};

/// Number of components in an [`Observation`].
pub const OBS_DIM: usize = 9;

/// Calendar month (1 = January) of month index `t`.
pub fn calendar_month(t: usize) -> u32 {
    (t % 12) as u32 + 1
}

/// Starting values of the dynamic state. `inventory = None` means half of
/// the storage capacity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    pub inventory: Option<f64>,
    pub bank: f64,
    pub p_d: f64,
    pub p_s: f64,
    pub u_d: f64,
    pub u_s: f64,
    pub last_log_price: f64,
}

/// Everything needed to build an environment apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub market: MarketParams,
    pub reward: RewardWeights,
    pub seasonal: SeasonalCoefficients,
    pub initial: InitialConditions,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            market: MarketParams::default(),
            reward: RewardWeights::default(),
            seasonal: SeasonalCoefficients::reference(),
            initial: InitialConditions::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.reward.validate()?;
        self.seasonal.validate()?;
        if let Some(i) = self.initial.inventory {
            if !(0.0..=self.market.i_max).contains(&i) {
                return Err(Error::config("initial.inventory", "must lie in [0, i_max]"));
            }
        }
        let init = &self.initial;
        for (name, v) in [
            ("initial.bank", init.bank),
            ("initial.p_d", init.p_d),
            ("initial.p_s", init.p_s),
            ("initial.u_d", init.u_d),
            ("initial.u_s", init.u_s),
            ("initial.last_log_price", init.last_log_price),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    /// Number of months already simulated.
    pub t: usize,
    pub p_d: f64,
    pub p_s: f64,
    pub u_d: f64,
    pub u_s: f64,
    pub inventory: f64,
    pub bank: f64,
    pub last_log_price: f64,
    pub noise: NoiseState,
}

/// What the pricing policy sees before setting the next price.
///
/// The calendar features (`seasonal`, `cos_phase`, `sin_phase`) refer to the
/// month about to be priced; the remaining fields are the latest state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub seasonal: f64,
    pub cos_phase: f64,
    pub sin_phase: f64,
    pub u_d: f64,
    pub u_s: f64,
    pub p_d: f64,
    pub p_s: f64,
    pub log_inventory: f64,
    pub last_log_price: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.seasonal,
            self.cos_phase,
            self.sin_phase,
            self.u_d,
            self.u_s,
            self.p_d,
            self.p_s,
            self.log_inventory,
            self.last_log_price,
        ]
    }

    pub fn from_array(x: [f64; OBS_DIM]) -> Self {
        Self {
            seasonal: x[0],
            cos_phase: x[1],
            sin_phase: x[2],
            u_d: x[3],
            u_s: x[4],
            p_d: x[5],
            p_s: x[6],
            log_inventory: x[7],
            last_log_price: x[8],
        }
    }
}

/// Decomposition of the per-step reward:
/// `reward = delta_g - volatility - clearing - threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardParts {
    pub delta_g: f64,
    pub volatility: f64,
    pub clearing: f64,
    pub threshold: f64,
}

impl RewardParts {
    pub fn total(&self) -> f64 {
        self.delta_g - self.volatility - self.clearing - self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub parts: RewardParts,
    /// Month index of the step just taken.
    pub t: usize,
    pub month: u32,
    /// Clipped log price actually posted.
    pub log_price: f64,
    pub price: f64,
    pub p_d: f64,
    pub p_s: f64,
    pub demand: f64,
    pub supply: f64,
    pub excess_demand: f64,
    /// Closing inventory of the month.
    pub inventory: f64,
    pub bank: f64,
    pub failure: bool,
    pub failure_severity: f64,
    /// Whether this step is the refill check.
    pub threshold_checked: bool,
    pub threshold_miss: bool,
    pub threshold_gap: f64,
    pub done: bool,
}

/// Sticky exponential-moving-average update of the demand and supply log
/// price signals.
pub fn update_price_signals(p_d_prev: f64, p_s_prev: f64, price: f64, params: &MarketParams) -> Result<(f64, f64)> {
    if !(price > 0.0 && price.is_finite()) {
        return Err(Error::Domain(format!("price must be positive and finite, got {price}")));
    }
    let p_d = (params.lambda_d * p_d_prev.exp() + (1.0 - params.lambda_d) * price).ln();
    let p_s = (params.lambda_s * p_s_prev.exp() + (1.0 - params.lambda_s) * price).ln();
    Ok((p_d, p_s))
}

/// One AR(1) step, `rho * u_prev + sigma * eps`.
pub fn update_shock(u_prev: f64, rho: f64, sigma: f64, eps: f64) -> f64 {
    rho * u_prev + sigma * eps
}

/// Log-demand, log-supply and excess demand `e^d - e^s`.
pub fn compute_demand_supply(
    seasonal: f64,
    p_d: f64,
    p_s: f64,
    u_d: f64,
    u_s: f64,
    params: &MarketParams,
) -> (f64, f64, f64) {
    let d = seasonal - params.eta_d * p_d + u_d;
    let s = params.eta_s * p_s + u_s;
    (d, s, d.exp() - s.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub inventory: f64,
    pub failure: bool,
    pub severity: f64,
}

/// Storage absorbs excess demand within `[0, i_max]`. Demand beyond the
/// stock is unmet, supply beyond free capacity is wasted; either is a
/// market failure with the uncovered quantity as severity.
pub fn inventory_transition(inventory: f64, excess_demand: f64, i_max: f64) -> Transition {
    let free = i_max - inventory;
    if excess_demand > inventory {
        Transition {
            inventory: 0.0,
            failure: true,
            severity: excess_demand - inventory,
        }
    } else if excess_demand < -free {
        Transition {
            inventory: i_max,
            failure: true,
            severity: excess_demand.abs() - free,
        }
    } else {
        Transition {
            inventory: (inventory - excess_demand).clamp(0.0, i_max),
            failure: false,
            severity: 0.0,
        }
    }
}

/// Refill rule: checked on the closing inventory of the month preceding
/// `refill_month`, i.e. the stock held at the beginning of `refill_month`.
/// Returns `(checked, miss, gap)`.
pub fn threshold_check(t: usize, closing_inventory: f64, weights: &RewardWeights, i_max: f64) -> (bool, bool, f64) {
    let checked = calendar_month(t + 1) == weights.refill_month;
    if !checked {
        return (false, false, 0.0);
    }
    let required = weights.refill_fraction * i_max;
    let gap = (required - closing_inventory).max(0.0);
    (true, gap > 0.0, gap)
}

/// Bank account after one month: interest, storage cost, gas traded at
/// `price`, and liquidation of the remaining stock at the mean signal price
/// on the terminal step.
#[allow(clippy::too_many_arguments)]
pub fn update_bank(
    g_prev: f64,
    inventory_prev: f64,
    inventory_next: f64,
    price: f64,
    terminal: bool,
    params: &MarketParams,
    p_d: f64,
    p_s: f64,
) -> f64 {
    let mut g = (1.0 + params.r) * g_prev - params.tau * inventory_prev - price * (inventory_next - inventory_prev);
    if terminal {
        let liquidation_price = 0.5 * (p_d.exp() + p_s.exp());
        g += inventory_next * liquidation_price;
    }
    g
}

#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    delta_g: f64,
    log_price: f64,
    last_log_price: f64,
    failure: bool,
    failure_severity: f64,
    threshold_miss: bool,
    threshold_gap: f64,
    weights: &RewardWeights,
) -> (f64, RewardParts) {
    let dp = log_price - last_log_price;
    let parts = RewardParts {
        delta_g,
        volatility: weights.theta_v * dp * dp,
        clearing: if failure {
            weights.theta_m * (1.0 + failure_severity)
        } else {
            0.0
        },
        threshold: if threshold_miss {
            weights.theta_n * (1.0 + threshold_gap)
        } else {
            0.0
        },
    };
    (parts.total(), parts)
}

/// A single simulated market. Strictly sequential; independent instances
/// may run on different threads.
#[derive(Debug, Clone)]
pub struct MarketEnv {
    config: EnvConfig,
    state: MarketState,
    log_lo: f64,
    log_hi: f64,
}

impl MarketEnv {
    pub fn reset(config: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        config.validate()?;
        let init = config.initial;
        let state = MarketState {
            t: 0,
            p_d: init.p_d,
            p_s: init.p_s,
            u_d: init.u_d,
            u_s: init.u_s,
            inventory: init.inventory.unwrap_or(0.5 * config.market.i_max),
            bank: init.bank,
            last_log_price: init.last_log_price,
            noise: NoiseState::new(seed),
        };
        let env = Self::from_state(config, state)?;
        let obs = env.observation();
        Ok((env, obs))
    }

    /// Rebuild an environment mid-episode, e.g. when resuming training.
    pub fn from_state(config: EnvConfig, state: MarketState) -> Result<Self> {
        config.validate()?;
        if state.t > config.market.horizon {
            return Err(Error::config("state.t", "beyond the horizon"));
        }
        let (log_lo, log_hi) = config.market.log_action_bounds();
        Ok(Self {
            config,
            state,
            log_lo,
            log_hi,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.config.market.horizon
    }

    pub fn action_bounds(&self) -> (f64, f64) {
        (self.log_lo, self.log_hi)
    }

    pub fn observation(&self) -> Observation {
        let s = &self.state;
        let (cos_phase, sin_phase) = harmonic_basis(1, s.t);
        Observation {
            seasonal: self.config.seasonal.value(s.t),
            cos_phase,
            sin_phase,
            u_d: s.u_d,
            u_s: s.u_s,
            p_d: s.p_d,
            p_s: s.p_s,
            log_inventory: (0.5 + s.inventory).ln(),
            last_log_price: s.last_log_price,
        }
    }

    /// Post log price `action` for the current month and advance one month.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Protocol("step called after the episode finished".into()));
        }
        if action.is_nan() {
            return Err(Error::Domain("action is NaN".into()));
        }
        let params = self.config.market;
        let weights = self.config.reward;
        let prev = self.state;
        let t = prev.t;

        let log_price = action.clamp(self.log_lo, self.log_hi);
        let price = log_price.exp();
        let (p_d, p_s) = update_price_signals(prev.p_d, prev.p_s, price, &params)?;
        let seasonal = self.config.seasonal.value(t);
        let mut noise = prev.noise;
        let (eps_d, eps_s) = noise.next_pair();
        let u_d = update_shock(prev.u_d, params.rho_d, params.sigma_d, eps_d);
        let u_s = update_shock(prev.u_s, params.rho_s, params.sigma_s, eps_s);
        let (d, s, excess) = compute_demand_supply(seasonal, p_d, p_s, u_d, u_s, &params);
        let tr = inventory_transition(prev.inventory, excess, params.i_max);
        let (checked, miss, gap) = threshold_check(t, tr.inventory, &weights, params.i_max);
        let terminal = t + 1 == params.horizon;
        let bank = update_bank(
            prev.bank,
            prev.inventory,
            tr.inventory,
            price,
            terminal,
            &params,
            p_d,
            p_s,
        );
        let (reward, parts) = compute_reward(
            bank - prev.bank,
            log_price,
            prev.last_log_price,
            tr.failure,
            tr.severity,
            miss,
            gap,
            &weights,
        );
        if !(reward.is_finite() && bank.is_finite()) {
            return Err(Error::Numeric(format!("non-finite reward or bank at month {t}")));
        }

        self.state = MarketState {
            t: t + 1,
            p_d,
            p_s,
            u_d,
            u_s,
            inventory: tr.inventory,
            bank,
            last_log_price: log_price,
            noise,
        };
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            parts,
            t,
            month: calendar_month(t),
            log_price,
            price,
            p_d,
            p_s,
            demand: d.exp(),
            supply: s.exp(),
            excess_demand: excess,
            inventory: tr.inventory,
            bank,
            failure: tr.failure,
            failure_severity: tr.severity,
            threshold_checked: checked,
            threshold_miss: miss,
            threshold_gap: gap,
            done: terminal,
        })
    }
}
