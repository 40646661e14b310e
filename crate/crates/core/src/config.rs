//! Flat key-value parameter files.
//!
//! ```toml
//! scr = 2.0
//! kp_i1 = 3.17
//! ki_i1 = 2500
//! ```
//!
//! Every key must be one of [`PARAM_NAMES`] or `setpoint_limit`. Missing
//! keys keep their defaults.

use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::model::{Plant, Setpoint, PARAM_NAMES};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantConfig {
    pub plant: Plant,
    pub setpoint_limit: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { plant: Plant::default(), setpoint_limit: Setpoint::DEFAULT_LIMIT }
    }
}

pub(crate) fn number(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::Config(format!("`{key}` must be a number, got {}", other.type_str()))),
    }
}

pub fn parse_plant(text: &str) -> Result<PlantConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut cfg = PlantConfig::default();
    for (key, value) in &table {
        let v = number(key, value)?;
        if key == "setpoint_limit" {
            if !(v > 0.0) {
                return Err(Error::Config("setpoint_limit must be positive".into()));
            }
            cfg.setpoint_limit = v;
        } else if PARAM_NAMES.contains(&key.as_str()) {
            cfg.plant.set(key, v)?;
        } else {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
    }
    cfg.plant.validate()?;
    for name in cfg.plant.setpoint.out_of_range(cfg.setpoint_limit) {
        warn!("{name} exceeds the setpoint sanity bound {}", cfg.setpoint_limit);
    }
    Ok(cfg)
}

pub fn load_plant(path: impl AsRef<Path>) -> Result<PlantConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_plant(&text)
}

/// Writes every parameter, one `key = value` line each, at full precision.
pub fn plant_to_toml(plant: &Plant) -> String {
    let mut out = String::new();
    for name in PARAM_NAMES {
        let v = plant.get(name).expect("listed name");
        out.push_str(&format!("{name} = {v:.16e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = parse_plant("scr = 2\nkp_i3 = 1.0\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("kp_i3"), "{err}");
    }

    #[test]
    fn integers_and_floats_accepted() {
        let cfg = parse_plant("scr = 2\nkp_i1 = 3.17\n").unwrap();
        assert_eq!(cfg.plant.params.scr, 2.0);
        assert_eq!(cfg.plant.gfl.kp_i1, 3.17);
        assert_eq!(cfg.plant.params.x_over_r, 5.0);
    }

    #[test]
    fn non_numeric_rejected() {
        assert!(parse_plant("scr = \"weak\"\n").is_err());
        assert!(parse_plant("scr = -1\n").is_err());
    }

    #[test]
    fn large_setpoint_is_only_a_warning() {
        let cfg = parse_plant("p_ref = 50\n").unwrap();
        assert_eq!(cfg.plant.setpoint.p_ref, 50.0);
    }

    #[test]
    fn dump_round_trips() {
        let plant = Plant::default().with("kp_q", 0.123_456_789_012_345_67).unwrap();
        let back = parse_plant(&plant_to_toml(&plant)).unwrap();
        assert_eq!(back.plant, plant);
    }
}
