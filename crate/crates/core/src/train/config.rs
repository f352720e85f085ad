use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::architecture::{BagNetConfig, Variant};
use crate::data::WhitenScope;
use crate::error::{Error, Result};
use crate::optim::AdamHyper;
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }
}

/// Everything that determines a training run.
///
/// Optimizer hyperparameters are flattened, so a JSON config uses top-level
/// `eta`, `eps`, `lambda`, `beta1` and `beta2` keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    /// Overrides the variant's kernel placement when set.
    pub kernel3_pattern: Option<Vec<Vec<bool>>>,
    pub preset: Preset,
    pub epochs: usize,
    pub accum_steps: usize,
    pub batch_size: usize,
    pub crop: [usize; 3],
    #[serde(flatten)]
    pub hyper: AdamHyper,
    /// Average (true) or sum accumulated micro-batch gradients.
    pub average_accumulated: bool,
    /// Apply L2 to norm scales/shifts and biases as well.
    pub decay_all_params: bool,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Single manifest split by `split` ratios, unless explicit
    /// validation/test manifests are given.
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub split: [f64; 2],
    pub whiten_scope: WhitenScope,
    /// Regress standardized age targets; predictions are mapped back to years.
    pub standardize_targets: bool,
}

impl TrainConfig {
    /// Training protocol at full scale.
    pub fn paper(task: Task, variant: Variant) -> Self {
        Self {
            task,
            variant,
            kernel3_pattern: None,
            preset: Preset::Paper,
            epochs: 500,
            accum_steps: 16,
            batch_size: 1,
            crop: [128, 160, 160],
            hyper: AdamHyper::default(),
            average_accumulated: true,
            decay_all_params: false,
            seed: 0,
            checkpoint_dir: None,
            manifest: None,
            val_manifest: None,
            test_manifest: None,
            split: [0.7, 0.1],
            whiten_scope: WhitenScope::AllVoxels,
            standardize_targets: true,
        }
    }

    /// Reduced-width network on 32^3 crops with a short schedule.
    pub fn desk(task: Task, variant: Variant) -> Self {
        Self {
            preset: Preset::Desk,
            epochs: 30,
            accum_steps: 4,
            crop: [32, 32, 32],
            ..Self::paper(task, variant)
        }
    }

    pub fn preset(preset: Preset, task: Task, variant: Variant) -> Self {
        match preset {
            Preset::Paper => Self::paper(task, variant),
            Preset::Desk => Self::desk(task, variant),
        }
    }

    /// Parses a JSON object; missing keys take the values of the preset it
    /// names (desk by default).
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("training config must be a JSON object"))?;
        let field = |key: &str| obj.get(key).and_then(|v| v.as_str());
        let preset = field("preset").map(Preset::from_str).transpose()?.unwrap_or(Preset::Desk);
        let task = field("task").map(Task::from_str).transpose()?.unwrap_or(Task::Age);
        let variant = field("variant").map(Variant::from_str).transpose()?.unwrap_or(Variant::Rf9);
        let mut merged = serde_json::to_value(Self::preset(preset, task, variant))?;
        let target = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in obj {
            if !target.contains_key(k) {
                return Err(Error::config(format!("unknown config key `{k}`")));
            }
            target.insert(k.clone(), v.clone());
        }
        let config: Self = serde_json::from_value(merged)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> Result<BagNetConfig> {
        let mut config = match self.preset {
            Preset::Paper => BagNetConfig::paper(self.variant),
            Preset::Desk => BagNetConfig::desk(self.variant),
        };
        if let Some(pattern) = &self.kernel3_pattern {
            config.kernel3_pattern = pattern.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.accum_steps == 0 || self.batch_size == 0 {
            return Err(Error::config(format!(
                "epochs, accum_steps and batch_size must be >= 1 (got {}, {}, {})",
                self.epochs, self.accum_steps, self.batch_size
            )));
        }
        if self.crop.iter().any(|&c| c == 0) {
            return Err(Error::config(format!("crop extents must be >= 1, got {:?}", self.crop)));
        }
        let [rt, rv] = self.split;
        if !(rt > 0.0 && rv > 0.0 && rt + rv < 1.0) {
            return Err(Error::config(format!("split ratios ({rt}, {rv}) must be positive with sum < 1")));
        }
        self.hyper.validate()?;
        self.model_config().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_values() {
        let c = TrainConfig::paper(Task::Sex, Variant::Rf33);
        assert_eq!(c.epochs, 500);
        assert_eq!(c.accum_steps, 16);
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.crop, [128, 160, 160]);
        assert_eq!(c.hyper.eta, 1e-3);
        assert_eq!(c.hyper.eps, 1e-5);
        assert_eq!(c.hyper.lambda, 1e-4);
        assert_eq!(c.split, [0.7, 0.1]);
    }

    #[test]
    fn json_overlays_preset() {
        let c = TrainConfig::from_json(r#"{"preset": "paper", "task": "sex", "eta": 0.01, "epochs": 3}"#).unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!(c.task, Task::Sex);
        assert_eq!(c.hyper.eta, 0.01);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.crop, [128, 160, 160]);
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn json_rejects_bad_input() {
        assert!(matches!(TrainConfig::from_json(r#"{"epoch": 3}"#), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_json(r#"{"epochs": 0}"#), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_json(r#"{"task": "iq"}"#), Err(Error::Config(_))));
        assert!(TrainConfig::from_json("[1]").is_err());
    }

    #[test]
    fn pattern_override_is_validated() {
        let mut c = TrainConfig::desk(Task::Age, Variant::Rf9);
        c.kernel3_pattern = Some(vec![vec![true]; 4]);
        assert_eq!(c.model_config().unwrap().kernel3_pattern, vec![vec![true]; 4]);
        c.kernel3_pattern = Some(vec![vec![true]; 3]);
        assert!(c.validate().is_err());
    }
}
