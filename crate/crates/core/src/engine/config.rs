use std::fmt;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::alarms::{DEFAULT_COMPRESSION, DEFAULT_WARNING};
use crate::scalar::{deserialize_opt_decimal, Scalar};

/// Dose sizes and protocol intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct DosingConfig<M> {
    pub adrenaline_dose_mg: M,
    pub adrenaline_interval: Duration,
    pub amiodarone_first_dose_mg: M,
    pub amiodarone_repeat_dose_mg: M,
    pub compression_duration: Duration,
    pub warning_threshold: Duration,
    /// Defibrillations required before adrenaline is offered on the VF/VT path.
    pub vfvt_adrenaline_min_defibs: u32,
}

impl<M: Scalar> Default for DosingConfig<M> {
    fn default() -> Self {
        Self {
            adrenaline_dose_mg: M::one(),
            adrenaline_interval: Duration::from_secs(240),
            amiodarone_first_dose_mg: M::from_u32(300).expect("300 fits every scalar"),
            amiodarone_repeat_dose_mg: M::from_u32(150).expect("150 fits every scalar"),
            compression_duration: DEFAULT_COMPRESSION,
            warning_threshold: DEFAULT_WARNING,
            vfvt_adrenaline_min_defibs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid dosing config: {}", .fields.join(", "))]
pub struct ConfigError {
    /// Offending field names.
    pub fields: Vec<&'static str>,
}

impl<M: Scalar> DosingConfig<M> {
    /// Checks positivity, `warning_threshold < compression_duration`, and that
    /// every interval is a whole number of seconds (the session file stores
    /// seconds).
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut fields = Vec::new();
        let zero = M::zero();
        if self.adrenaline_dose_mg <= zero {
            fields.push("adrenaline_dose_mg");
        }
        if self.amiodarone_first_dose_mg <= zero {
            fields.push("amiodarone_first_dose_mg");
        }
        if self.amiodarone_repeat_dose_mg <= zero {
            fields.push("amiodarone_repeat_dose_mg");
        }
        let whole_positive = |d: Duration| !d.is_zero() && d.subsec_nanos() == 0;
        if !whole_positive(self.adrenaline_interval) {
            fields.push("adrenaline_interval");
        }
        if !whole_positive(self.compression_duration) {
            fields.push("compression_duration");
        }
        if !whole_positive(self.warning_threshold)
            || self.warning_threshold >= self.compression_duration
        {
            fields.push("warning_threshold");
        }
        if self.vfvt_adrenaline_min_defibs == 0 {
            fields.push("vfvt_adrenaline_min_defibs");
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { fields })
        }
    }
}

/// Partial config; absent fields keep the base value. Durations are whole
/// seconds, doses are decimal milligrams.
#[derive(Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "M: Scalar"))]
pub struct ConfigOverrides<M> {
    #[serde(default, deserialize_with = "deserialize_opt_decimal")]
    pub adrenaline_dose_mg: Option<M>,
    #[serde(default)]
    pub adrenaline_interval: Option<u64>,
    #[serde(default, deserialize_with = "deserialize_opt_decimal")]
    pub amiodarone_first_dose_mg: Option<M>,
    #[serde(default, deserialize_with = "deserialize_opt_decimal")]
    pub amiodarone_repeat_dose_mg: Option<M>,
    #[serde(default)]
    pub compression_duration: Option<u64>,
    #[serde(default)]
    pub warning_threshold: Option<u64>,
    #[serde(default)]
    pub vfvt_adrenaline_min_defibs: Option<u32>,
}

impl<M> Default for ConfigOverrides<M> {
    fn default() -> Self {
        Self {
            adrenaline_dose_mg: None,
            adrenaline_interval: None,
            amiodarone_first_dose_mg: None,
            amiodarone_repeat_dose_mg: None,
            compression_duration: None,
            warning_threshold: None,
            vfvt_adrenaline_min_defibs: None,
        }
    }
}

impl<M: fmt::Debug> fmt::Debug for ConfigOverrides<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfigOverrides")
            .field("adrenaline_dose_mg", &self.adrenaline_dose_mg)
            .field("adrenaline_interval", &self.adrenaline_interval)
            .field("amiodarone_first_dose_mg", &self.amiodarone_first_dose_mg)
            .field("amiodarone_repeat_dose_mg", &self.amiodarone_repeat_dose_mg)
            .field("compression_duration", &self.compression_duration)
            .field("warning_threshold", &self.warning_threshold)
            .field(
                "vfvt_adrenaline_min_defibs",
                &self.vfvt_adrenaline_min_defibs,
            )
            .finish()
    }
}

impl<M: Scalar> ConfigOverrides<M> {
    /// Layers the overrides on `base` and validates the result.
    pub fn apply_to(&self, base: &DosingConfig<M>) -> Result<DosingConfig<M>, ConfigError> {
        let secs = |v: Option<u64>, d: Duration| v.map(Duration::from_secs).unwrap_or(d);
        let config = DosingConfig {
            adrenaline_dose_mg: self
                .adrenaline_dose_mg
                .clone()
                .unwrap_or_else(|| base.adrenaline_dose_mg.clone()),
            adrenaline_interval: secs(self.adrenaline_interval, base.adrenaline_interval),
            amiodarone_first_dose_mg: self
                .amiodarone_first_dose_mg
                .clone()
                .unwrap_or_else(|| base.amiodarone_first_dose_mg.clone()),
            amiodarone_repeat_dose_mg: self
                .amiodarone_repeat_dose_mg
                .clone()
                .unwrap_or_else(|| base.amiodarone_repeat_dose_mg.clone()),
            compression_duration: secs(self.compression_duration, base.compression_duration),
            warning_threshold: secs(self.warning_threshold, base.warning_threshold),
            vfvt_adrenaline_min_defibs: self
                .vfvt_adrenaline_min_defibs
                .unwrap_or(base.vfvt_adrenaline_min_defibs),
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Exact = Ratio<i64>;

    #[test]
    fn defaults_are_valid() {
        let config = DosingConfig::<Exact>::default();
        assert!(config.validate().is_ok());
        assert_eq!(config.adrenaline_dose_mg, Exact::from_integer(1));
        assert_eq!(config.adrenaline_interval, Duration::from_secs(240));
        assert_eq!(config.amiodarone_first_dose_mg, Exact::from_integer(300));
        assert_eq!(config.amiodarone_repeat_dose_mg, Exact::from_integer(150));
        assert!(DosingConfig::<f64>::default().validate().is_ok());
    }

    #[test]
    fn zero_interval_is_listed() {
        let overrides = ConfigOverrides::<Exact> {
            adrenaline_interval: Some(0),
            adrenaline_dose_mg: Some(Exact::from_integer(0)),
            ..Default::default()
        };
        let err = overrides.apply_to(&DosingConfig::default()).unwrap_err();
        assert_eq!(
            err.fields,
            vec!["adrenaline_dose_mg", "adrenaline_interval"]
        );
    }

    #[test]
    fn warning_must_be_shorter_than_compression() {
        let overrides = ConfigOverrides::<Exact> {
            warning_threshold: Some(120),
            ..Default::default()
        };
        let err = overrides.apply_to(&DosingConfig::default()).unwrap_err();
        assert_eq!(err.fields, vec!["warning_threshold"]);
    }

    #[test]
    fn overrides_parse_from_json() {
        let json: ConfigOverrides<Exact> =
            serde_json::from_str(r#"{"adrenaline_dose_mg": 0.5, "adrenaline_interval": 180}"#)
                .unwrap();
        assert_eq!(json.adrenaline_dose_mg, Some(Exact::new(1, 2)));
        assert_eq!(json.adrenaline_interval, Some(180));

        let from_str: ConfigOverrides<Exact> =
            serde_json::from_str(r#"{"amiodarone_first_dose_mg": "300"}"#).unwrap();
        assert_eq!(
            from_str.amiodarone_first_dose_mg,
            Some(Exact::from_integer(300))
        );

        assert!(serde_json::from_str::<ConfigOverrides<Exact>>(r#"{"bogus": 1}"#).is_err());
    }
}
