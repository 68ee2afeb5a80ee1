//! Run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::StyleMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    #[default]
    Lbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Noise,
    #[default]
    Content,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "lbfgs" => Ok(OptimizerKind::Lbfgs),
            _ => Err(Error::field("optimizer", "must be `adam` or `lbfgs`")),
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(InitMode::Noise),
            "content" => Ok(InitMode::Content),
            _ => Err(Error::field("init", "must be `noise` or `content`")),
        }
    }
}

pub const DEFAULT_NUM_ITERATIONS: usize = 500;
pub const DEFAULT_SAVE_EVERY: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_TV_STRENGTH: f64 = 1e-6;
pub const DEFAULT_CONTENT_WEIGHT: f64 = 100.0;
pub const DEFAULT_STYLE_WEIGHT: f64 = 100.0;
pub const DEFAULT_IMAGE_SIZE: usize = 256;

pub fn default_content_taps() -> Vec<String> {
    vec!["relu2_2".to_string()]
}

pub fn default_style_taps() -> Vec<String> {
    ["relu1_1", "relu1_2", "relu2_1", "relu2_2"]
        .map(String::from)
        .to_vec()
}

/// Every knob of a single stylization run.
///
/// `learning_rate` only affects Adam. Pixel steps are taken in 8-bit
/// intensity units (one unit = 1/255 of the `[0, 1]` range), so rates such as
/// `2e1` move a pixel by about twenty gray levels per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub num_iterations: usize,
    pub save_every: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub tv_strength: f64,
    pub content_weight: f64,
    pub style_weight: f64,
    pub content_taps: Vec<String>,
    pub style_taps: Vec<String>,
    pub style_target: StyleMode,
    pub init: InitMode,
    pub seed: u64,
    /// Longest side, in pixels, that inputs are resized to.
    pub image_size: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            num_iterations: DEFAULT_NUM_ITERATIONS,
            save_every: DEFAULT_SAVE_EVERY,
            optimizer: OptimizerKind::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            tv_strength: DEFAULT_TV_STRENGTH,
            content_weight: DEFAULT_CONTENT_WEIGHT,
            style_weight: DEFAULT_STYLE_WEIGHT,
            content_taps: default_content_taps(),
            style_taps: default_style_taps(),
            style_target: StyleMode::default(),
            init: InitMode::default(),
            seed: 0,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.save_every < 1 {
            return Err(Error::field("save_every", "must be ≥ 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::field("learning_rate", "must be a finite value > 0"));
        }
        for (field, v) in [
            ("tv_strength", self.tv_strength),
            ("content_weight", self.content_weight),
            ("style_weight", self.style_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::field(field, "must be a finite value ≥ 0"));
            }
        }
        if self.content_taps.is_empty() {
            return Err(Error::field("content_taps", "must name at least one layer"));
        }
        if self.image_size < 8 {
            return Err(Error::field("image_size", "must be ≥ 8"));
        }
        Ok(())
    }

    /// Content weight relative to a style weight of 100, the `X:100` notation.
    pub fn ratio_label(&self) -> String {
        let scaled = if self.style_weight > 0.0 {
            self.content_weight / self.style_weight * 100.0
        } else {
            f64::INFINITY
        };
        format!("{}:100", format_number(scaled))
    }
}

/// Compact rendering used for labels and file names: integers without a
/// fraction, other values in `1e-6` style exponent notation.
pub fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e6 && v.abs() >= 1.0 || v == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

/// Partial configuration as submitted by clients. Integers are signed so that
/// negative values reach validation and get a field-specific message.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub num_iterations: Option<i64>,
    pub save_every: Option<i64>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub tv_strength: Option<f64>,
    pub content_weight: Option<f64>,
    pub style_weight: Option<f64>,
    pub content_taps: Option<Vec<String>>,
    pub style_taps: Option<Vec<String>>,
    pub style_target: Option<StyleMode>,
    pub init: Option<InitMode>,
    pub seed: Option<i64>,
    pub image_size: Option<i64>,
}

fn non_negative(field: &'static str, v: i64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::field(field, format!("must be ≥ 0, got {v}")))
}

impl ConfigOverrides {
    /// Applies the overrides on top of `base` and validates the result.
    pub fn apply(&self, base: &TransferConfig) -> Result<TransferConfig> {
        let mut c = base.clone();
        if let Some(v) = self.num_iterations {
            c.num_iterations = non_negative("num_iterations", v)?;
        }
        if let Some(v) = self.save_every {
            if v < 1 {
                return Err(Error::field("save_every", format!("must be ≥ 1, got {v}")));
            }
            c.save_every = v as usize;
        }
        if let Some(v) = self.seed {
            c.seed = u64::try_from(v)
                .map_err(|_| Error::field("seed", format!("must be ≥ 0, got {v}")))?;
        }
        if let Some(v) = self.image_size {
            c.image_size = non_negative("image_size", v)?;
        }
        if let Some(v) = self.optimizer {
            c.optimizer = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.tv_strength {
            c.tv_strength = v;
        }
        if let Some(v) = self.content_weight {
            c.content_weight = v;
        }
        if let Some(v) = self.style_weight {
            c.style_weight = v;
        }
        if let Some(v) = &self.content_taps {
            c.content_taps = v.clone();
        }
        if let Some(v) = &self.style_taps {
            c.style_taps = v.clone();
        }
        if let Some(v) = self.style_target {
            c.style_target = v;
        }
        if let Some(v) = self.init {
            c.init = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TransferConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_iterations, 500);
        assert_eq!(c.save_every, 50);
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.tv_strength, 1e-6);
        assert_eq!((c.content_weight, c.style_weight), (100.0, 100.0));
        assert_eq!(c.ratio_label(), "100:100");
    }

    #[test]
    fn negative_iterations_name_the_field() {
        let o = ConfigOverrides {
            num_iterations: Some(-1),
            ..Default::default()
        };
        let err = o.apply(&TransferConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidField {
                field: "num_iterations",
                ..
            }
        ));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let base = TransferConfig::default();
        let bad = [
            TransferConfig {
                save_every: 0,
                ..base.clone()
            },
            TransferConfig {
                learning_rate: 0.0,
                ..base.clone()
            },
            TransferConfig {
                tv_strength: -1.0,
                ..base.clone()
            },
            TransferConfig {
                style_weight: f64::NAN,
                ..base.clone()
            },
            TransferConfig {
                content_taps: vec![],
                ..base.clone()
            },
            TransferConfig {
                image_size: 4,
                ..base.clone()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn overrides_from_json() {
        let o: ConfigOverrides = serde_json::from_str(
            r#"{"num_iterations": 300, "optimizer": "adam", "style_target": "spatial_average"}"#,
        )
        .unwrap();
        let c = o.apply(&TransferConfig::default()).unwrap();
        assert_eq!(c.num_iterations, 300);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.style_target, StyleMode::SpatialAverage);
        assert!(serde_json::from_str::<ConfigOverrides>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(100.0), "100");
        assert_eq!(format_number(1e-6), "1e-6");
        assert_eq!(format_number(20.0), "20");
        assert_eq!(format_number(0.5), "5e-1");
        assert_eq!(format_number(0.0), "0");
    }
}
