//! Risk-factor identifiers.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A risk factor: one pillar of one yield curve, e.g. `AAA.3Y`.
///
/// The string form `<curve>.<pillar>` is used in CSV headers and JSON
/// documents; the last `.` separates curve from pillar.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactorId {
    pub curve: String,
    pub pillar: String,
}

impl FactorId {
    pub fn new(curve: impl Into<String>, pillar: impl Into<String>) -> Self {
        FactorId {
            curve: curve.into(),
            pillar: pillar.into(),
        }
    }
}

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.curve, self.pillar)
    }
}

impl FromStr for FactorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (curve, pillar) = s
            .rsplit_once('.')
            .ok_or_else(|| Error::validation(format!("factor label `{s}` is not <curve>.<pillar>")))?;
        if curve.is_empty() || pillar.is_empty() {
            return Err(Error::validation(format!(
                "factor label `{s}` has an empty curve or pillar part"
            )));
        }
        Ok(FactorId::new(curve, pillar))
    }
}

impl Serialize for FactorId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FactorId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(|e| D::Error::custom(format!("{e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse_round_trip() {
        let f = FactorId::new("AAA", "6M");
        assert_eq!(f.to_string(), "AAA.6M");
        assert_eq!("AAA.6M".parse::<FactorId>().unwrap(), f);
    }

    #[test]
    fn parse_uses_last_dot() {
        let f: FactorId = "EUR.GOV.10Y".parse().unwrap();
        assert_eq!(f.curve, "EUR.GOV");
        assert_eq!(f.pillar, "10Y");
    }

    #[test]
    fn parse_rejects_missing_separator() {
        assert!("AAA6M".parse::<FactorId>().is_err());
        assert!(".6M".parse::<FactorId>().is_err());
        assert!("AAA.".parse::<FactorId>().is_err());
    }

    #[test]
    fn serde_uses_string_form() {
        let f = FactorId::new("ALL", "5Y");
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, "\"ALL.5Y\"");
        let back: FactorId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }
}
