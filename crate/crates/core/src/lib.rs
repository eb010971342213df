//! Simulator of a national natural-gas market in which a monopolistic
//! storage operator sets the monthly price, together with a Soft
//! Actor-Critic trainer and the statistics used to study the resulting
//! price dynamics.

pub mod analysis;
pub mod codec;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod noise;
pub mod params;
pub mod plot;
pub mod replay;
pub mod sac;
pub mod seasonality;
pub mod trace;

pub use env::{EnvConfig, InitialConditions, MarketEnv, MarketState, Observation, RewardParts, StepOutcome};
pub use error::{Error, ErrorCategory, Result};
pub use params::{MarketParams, RewardWeights};
pub use seasonality::SeasonalCoefficients;
pub use trace::EpisodeTrace;
