//! Experiment configuration files.
//!
//! A config is a TOML document with optional sections `market`, `reward`,
//! `agent`, `run` and `initial`, plus two top-level keys:
//!
//! ```toml
//! seasonal_file = "seasonal.toml"   # relative to this file
//! output_dir = "runs"
//!
//! [reward]
//! theta_n = 1000.0
//!
//! [run]
//! seed = 7
//! ```
//!
//! Unknown keys are rejected and omitted keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, InitialConditions};
use crate::error::{Error, Result};
use crate::harness::{RunSettings, RunSpec};
use crate::params::{MarketParams, RewardWeights};
use crate::sac::AgentConfig;
use crate::seasonality::SeasonalCoefficients;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seasonal_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub market: MarketParams,
    pub reward: RewardWeights,
    pub agent: AgentConfig,
    pub run: RunSettings,
    pub initial: InitialConditions,
}

fn parse_error(e: toml::de::Error) -> Error {
    let field = e.message().split('`').nth(1).unwrap_or_default().to_string();
    Error::Config {
        field,
        message: e.to_string().trim().to_string(),
    }
}

/// Interpret the right-hand side of `--set`: a TOML literal if it parses as
/// one, otherwise a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `section.key=value` assignments to a parsed document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "expected section.key=value"))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::config(path, "empty key in override path"));
        }
        let mut table = &mut *doc;
        for k in &keys[..keys.len() - 1] {
            let entry = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::config(path, format!("`{k}` is not a section")))?;
        }
        table.insert(keys[keys.len() - 1].to_string(), override_value(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(parse_error)?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: Self = doc.try_into().map_err(parse_error)?;
        Ok(cfg)
    }

    /// Read a config file. A relative `seasonal_file` is resolved against
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Some(f) = &cfg.seasonal_file {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.seasonal_file = Some(base.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn seasonal(&self) -> Result<SeasonalCoefficients> {
        match &self.seasonal_file {
            Some(p) => SeasonalCoefficients::load(p),
            None => Ok(SeasonalCoefficients::reference()),
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let env = EnvConfig {
            market: self.market,
            reward: self.reward,
            seasonal: self.seasonal()?,
            initial: self.initial,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let spec = RunSpec {
            env: self.env_config()?,
            agent: self.agent.clone(),
            run: self.run.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg.market, MarketParams::default());
        assert_eq!(cfg.reward, RewardWeights::default());
        assert_eq!(cfg.agent, AgentConfig::default());
        let spec = cfg.run_spec().unwrap();
        assert_eq!(spec.env.seasonal, SeasonalCoefficients::reference());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        match ExperimentConfig::from_toml_str("[market]\nsigma_x = 1.0\n", &[]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sigma_x"),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::from_toml_str("[nonsense]\n", &[]).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "[reward]\ntheta_n = 0.0\n";
        let sets = vec!["reward.theta_n=1000".to_string(), "run.tag=regulated".to_string()];
        let cfg = ExperimentConfig::from_toml_str(text, &sets).unwrap();
        assert_eq!(cfg.reward.theta_n, 1000.0);
        assert_eq!(cfg.run.tag, "regulated");
        let cfg = ExperimentConfig::from_toml_str("", &["agent.hidden=[32, 32]".into()]).unwrap();
        assert_eq!(cfg.agent.hidden, vec![32, 32]);
        assert!(ExperimentConfig::from_toml_str("", &["market.sigma_s".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["market.sigma_s=abc".into()]).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let cfg = ExperimentConfig::from_toml_str("[market]\nlambda_d = 1.5\n", &[]).unwrap();
        match cfg.run_spec() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "market.lambda_d"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::from_toml_str("[run]\nseed = 3\n", &[]).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seasonal_file_is_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        let coeffs = SeasonalCoefficients::zeros(&[1, 2]).unwrap();
        coeffs.save(&dir.path().join("flat.toml")).unwrap();
        std::fs::write(dir.path().join("exp.toml"), "seasonal_file = \"flat.toml\"\n").unwrap();
        let cfg = ExperimentConfig::load(&dir.path().join("exp.toml"), &[]).unwrap();
        assert_eq!(cfg.seasonal().unwrap(), coeffs);
        assert!(matches!(
            ExperimentConfig::load(&dir.path().join("missing.toml"), &[]),
            Err(Error::Io { .. })
        ));
    }
}
