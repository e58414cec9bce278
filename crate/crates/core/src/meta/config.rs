use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;

/// Experimental arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// No training-time augmentation.
    None,
    /// Fixed class-agnostic policy.
    Heuristic,
    /// Learned class-agnostic policy (one table shared by both classes).
    Learned,
    /// Learned foreground and background policies.
    ClassSpecific,
    /// Class-specific training-time policy learned jointly with the test-time policy.
    Joint,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::None, Mode::Heuristic, Mode::Learned, Mode::ClassSpecific, Mode::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Heuristic => "heuristic",
            Mode::Learned => "learned",
            Mode::ClassSpecific => "class-specific",
            Mode::Joint => "joint",
        }
    }

    pub fn augments(self) -> bool {
        self != Mode::None
    }

    pub fn learns_tra(self) -> bool {
        matches!(self, Mode::Learned | Mode::ClassSpecific | Mode::Joint)
    }

    pub fn learns_tea(self) -> bool {
        self == Mode::Joint
    }

    /// Whether foreground and background share one policy table.
    pub fn tied(self) -> bool {
        matches!(self, Mode::None | Mode::Heuristic | Mode::Learned)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected one of none, heuristic, learned, class-specific, joint")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyInit {
    Uniform,
    Heuristic,
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: u64,
    /// Segmenter learning rate, also the virtual-step size.
    pub alpha: f64,
    pub momentum: f64,
    /// Optional bound on the training gradient norm.
    pub grad_clip: Option<f64>,
    /// Training-time policy learning rate.
    pub beta: f64,
    /// Test-time policy learning rate.
    pub gamma: f64,
    /// Training batch size.
    pub n: usize,
    /// Validation batch size.
    pub m: usize,
    /// Test-time ops drawn per policy step.
    pub tea_samples: usize,
    /// Ops kept at inference.
    pub top_z: usize,
    /// Policy updates happen on iterations that are multiples of this.
    pub cadence: u64,
    pub patch: usize,
    pub fg_fraction: f64,
    pub train_loss: LossKind,
    pub val_loss: LossKind,
    pub tea_loss: LossKind,
    pub tra_init: PolicyInit,
    /// Probability of the "off" bin under the heuristic training-time policy.
    pub tra_off_prob: f64,
    pub tea_init: PolicyInit,
    /// Logit of non-heuristic ops under the heuristic test-time policy.
    pub tea_other_logit: f64,
    /// Adds the destructive ops to both pools.
    pub destructive: bool,
    /// Restricts the test-time pool to these op names, in this order.
    pub tea_pool: Option<Vec<String>>,
    pub width: usize,
    pub hidden_layers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::ClassSpecific,
            seed: 0,
            iterations: 600,
            alpha: 0.01,
            momentum: 0.9,
            grad_clip: Some(5.0),
            beta: 1000.0,
            gamma: 3.0,
            n: 10,
            m: 10,
            tea_samples: 8,
            top_z: 4,
            cadence: 10,
            patch: 48,
            fg_fraction: 0.5,
            train_loss: LossKind::CeDice,
            val_loss: LossKind::SoftDice,
            tea_loss: LossKind::SoftDice,
            tra_init: PolicyInit::Heuristic,
            tra_off_prob: 0.7,
            tea_init: PolicyInit::Heuristic,
            tea_other_logit: -3.0,
            destructive: false,
            tea_pool: None,
            width: 16,
            hidden_layers: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        let counts = [
            ("n", self.n),
            ("m", self.m),
            ("patch", self.patch),
            ("width", self.width),
            ("top_z", self.top_z),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.tea_samples < 2 {
            return Err(Error::Config(format!("tea_samples must be at least 2, got {}", self.tea_samples)));
        }
        if self.cadence == 0 {
            return Err(Error::Config("cadence must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fg_fraction) {
            return Err(Error::Config(format!("fg_fraction must lie in [0, 1], got {}", self.fg_fraction)));
        }
        if !(self.tra_off_prob > 0.0 && self.tra_off_prob < 1.0) {
            return Err(Error::Config(format!("tra_off_prob must lie in (0, 1), got {}", self.tra_off_prob)));
        }
        if self.tea_pool.as_ref().is_some_and(|p| p.is_empty()) {
            return Err(Error::Config("tea_pool must name at least one op".into()));
        }
        if !self.tea_other_logit.is_finite() {
            return Err(Error::Config("tea_other_logit must be finite".into()));
        }
        Ok(())
    }

    pub fn is_policy_iteration(&self, iteration: u64) -> bool {
        iteration.is_multiple_of(self.cadence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"alpha": 0.1, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn invalid_values_name_the_field() {
        for (json, field) in [
            (r#"{"cadence": 0}"#, "cadence"),
            (r#"{"beta": -1.0}"#, "beta"),
            (r#"{"tea_samples": 1}"#, "tea_samples"),
            (r#"{"fg_fraction": 2.0}"#, "fg_fraction"),
        ] {
            let c: RunConfig = serde_json::from_str(json).unwrap();
            let msg = c.validate().unwrap_err().to_string();
            assert!(msg.contains(field), "{msg}");
        }
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }
}
