//! Calibration, device-profile and known-divergence files.
//!
//! Calibration and profiles are TOML tables of `key = number`. Defaults for
//! both ship with the crate and are available by name.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use snlforge_core::perf::{Calibration, DesignPoint, DeviceProfile, Framework, Resources};
use snlforge_core::FixedFormat;
use thiserror::Error;

pub const DEFAULT_CALIBRATION: &str = include_str!("../data/calibration.toml");
pub const ZCU102_PROFILE: &str = include_str!("../data/zcu102.toml");
pub const DEFAULT_DIVERGENCES: &str = include_str!("../data/divergences.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Key { key: String, message: String },
    #[error(transparent)]
    Core(#[from] snlforge_core::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn number(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        _ => Err(ConfigError::Key {
            key: key.to_string(),
            message: "expected a number".to_string(),
        }),
    }
}

/// Overrides on top of the built-in defaults; unknown keys are errors.
pub fn parse_calibration(text: &str) -> Result<Calibration> {
    let table: toml::Table = toml::from_str(text)?;
    let mut calib = Calibration::default();
    for (key, value) in &table {
        calib.set(key, number(key, value)?)?;
    }
    Ok(calib)
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Calibration> {
    parse_calibration(&read(path.as_ref())?)
}

/// A profile has `name` and `lut`, `ff`, `dsp`, and `bram18` or `bram36`.
pub fn parse_profile(text: &str) -> Result<DeviceProfile> {
    let table: toml::Table = toml::from_str(text)?;
    let mut name = None;
    let mut capacity = Resources::default();
    for (key, value) in &table {
        let count = || -> Result<u64> {
            let v = number(key, value)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(ConfigError::Key {
                    key: key.clone(),
                    message: "expected a non-negative whole number".to_string(),
                });
            }
            Ok(v as u64)
        };
        match key.as_str() {
            "name" => {
                name = Some(value.as_str().map(str::to_string).ok_or_else(|| ConfigError::Key {
                    key: key.clone(),
                    message: "expected a string".to_string(),
                })?)
            }
            "lut" => capacity.lut = count()?,
            "ff" => capacity.ff = count()?,
            "dsp" => capacity.dsp = count()?,
            "bram18" => capacity.bram = count()?,
            "bram36" => capacity.bram = 2 * count()?,
            _ => {
                return Err(ConfigError::Key {
                    key: key.clone(),
                    message: "unknown profile key".to_string(),
                })
            }
        }
    }
    let profile = DeviceProfile {
        name: name.unwrap_or_else(|| "custom".to_string()),
        capacity,
    };
    profile.validate()?;
    Ok(profile)
}

/// A shipped profile by name (`zcu102`) or a profile file path.
pub fn profile(name_or_path: &str) -> Result<DeviceProfile> {
    match name_or_path {
        "zcu102" => parse_profile(ZCU102_PROFILE),
        path => parse_profile(&read(Path::new(path))?),
    }
}

/// Design points with a reported failure the estimator does not model.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Divergence {
    pub model: String,
    pub precision: String,
    /// `snl` or `baked`.
    pub framework: String,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub reuse_factor: Option<u32>,
    pub note: String,
}

impl Divergence {
    pub fn matches(&self, model: &str, dp: &DesignPoint) -> bool {
        let precision_matches = self.precision.parse::<FixedFormat>().is_ok_and(|p| p == dp.precision);
        let framework_matches = match dp.framework {
            Framework::Snl => self.framework == "snl",
            Framework::Baked { strategy, reuse_factor } => {
                self.framework == "baked"
                    && self.strategy.as_deref().map_or(true, |s| s == strategy.name())
                    && self.reuse_factor.map_or(true, |r| r == reuse_factor)
            }
        };
        self.model.eq_ignore_ascii_case(model) && precision_matches && framework_matches
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct Divergences {
    #[serde(default)]
    pub divergence: Vec<Divergence>,
}

impl Divergences {
    pub fn parse(text: &str) -> Result<Self> {
        let d: Divergences = toml::from_str(text)?;
        for entry in &d.divergence {
            entry.precision.parse::<FixedFormat>().map_err(|e| ConfigError::Key {
                key: "precision".to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(d)
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_DIVERGENCES).expect("shipped divergences parse")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(path.as_ref())?)
    }

    pub fn find(&self, model: &str, dp: &DesignPoint) -> Option<&Divergence> {
        self.divergence.iter().find(|d| d.matches(model, dp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_calibration_is_the_default() {
        assert_eq!(parse_calibration(DEFAULT_CALIBRATION).unwrap(), Calibration::default());
    }

    #[test]
    fn shipped_profile() {
        let p = profile("zcu102").unwrap();
        assert_eq!(p, DeviceProfile::zcu102());
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(parse_calibration("bogus = 1"), Err(ConfigError::Core(_))));
        assert!(matches!(
            parse_calibration("mult_latency = \"x\""),
            Err(ConfigError::Key { .. })
        ));
        assert_eq!(parse_calibration("mult_latency = 7").unwrap().mult_latency, 7);
    }

    #[test]
    fn divergence_matching() {
        let d = Divergences::shipped();
        let f83: FixedFormat = "8:3".parse().unwrap();
        assert!(d.find("vww", &DesignPoint::snl(f83)).is_some());
        assert!(d.find("kws", &DesignPoint::snl(f83)).is_none());
        assert!(d.find("vww", &DesignPoint::snl("16:6".parse().unwrap())).is_none());
    }
}
