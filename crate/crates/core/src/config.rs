//! The resolved run configuration: one JSON document with a section per
//! component. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dro::DroConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::gea::GeaConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Drop users and items with fewer interactions than this before
    /// building the graph. 0 keeps everything.
    pub min_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub dro: DroConfig,
    pub gea: GeaConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.dro.validate()?;
        self.gea.validate()?;
        self.train.validate()?;
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Serde adapter for reals that may be infinite: infinity is written as the
/// string `"inf"`; numbers and the strings `"inf"`/`"infinity"` are read.
pub mod extended_f64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_infinite() && *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    struct ExtVisitor;

    impl<'de> Visitor<'de> for ExtVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            super::parse_extended(v).ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ExtVisitor)
    }
}

/// Parses a real, accepting `inf`, `infinity` and `+inf` in any case.
pub fn parse_extended(text: &str) -> Option<f64> {
    let t = text.trim();
    match t.to_ascii_lowercase().trim_start_matches('+') {
        "inf" | "infinity" => Some(f64::INFINITY),
        _ => t.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.to_json();
        assert!(text.contains("\"inf\""));
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"dro": {"alpha": 0.3}, "gea": {"enabled": true, "gamma": 0.4}}"#)
            .unwrap();
        assert_eq!(cfg.dro.alpha, 0.3);
        assert_eq!(cfg.gea.gamma, 0.4);
        assert_eq!(cfg.model.dim, 32);
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.eval.k, 20);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dro": {"eta": 0.1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"dro": {"alpha": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"gea": {"gamma": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).is_err());
    }

    #[test]
    fn extended_parsing() {
        assert_eq!(parse_extended("inf"), Some(f64::INFINITY));
        assert_eq!(parse_extended("Infinity"), Some(f64::INFINITY));
        assert_eq!(parse_extended("1e9"), Some(1e9));
        assert_eq!(parse_extended("x"), None);
    }
}
