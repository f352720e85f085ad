use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::DEFAULT_NORM_EPS;

/// Named receptive-field variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rf9,
    Rf17,
    Rf33,
    Rf177,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rf9, Variant::Rf17, Variant::Rf33, Variant::Rf177];

    /// Number of leading stages whose first block carries a 3x3x3 middle conv;
    /// `None` means every block of every stage.
    fn leading_stages(self) -> Option<usize> {
        match self {
            Variant::Rf9 => Some(2),
            Variant::Rf17 => Some(3),
            Variant::Rf33 => Some(4),
            Variant::Rf177 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rf9 => "rf9",
            Variant::Rf17 => "rf17",
            Variant::Rf33 => "rf33",
            Variant::Rf177 => "rf177",
        }
    }

    /// Kernel placement for the given stage depths.
    pub fn pattern(self, stage_depths: &[usize]) -> Vec<Vec<bool>> {
        stage_depths
            .iter()
            .enumerate()
            .map(|(stage, &depth)| {
                (0..depth)
                    .map(|block| match self.leading_stages() {
                        None => true,
                        Some(m) => block == 0 && stage < m,
                    })
                    .collect()
            })
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf9" | "9" => Ok(Variant::Rf9),
            "rf17" | "17" => Ok(Variant::Rf17),
            "rf33" | "33" => Ok(Variant::Rf33),
            "rf177" | "177" => Ok(Variant::Rf177),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (expected rf9, rf17, rf33 or rf177)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Instance,
}

fn default_stem_kernel() -> usize {
    3
}

fn default_norm_eps() -> f64 {
    DEFAULT_NORM_EPS
}

/// Architecture description of a 3D bottleneck network.
///
/// The stem is a 1x1x1 conv followed by a `stem_kernel` conv (stride 1), each
/// followed by instance norm and ReLU. Stage `i` holds `stage_depths[i]`
/// bottleneck blocks of base width `stage_widths[i]` and output width
/// `stage_widths[i] * expansion`; its first block downsamples by
/// `stage_strides[i]` in the middle conv. `kernel3_pattern[i][j]` selects a
/// 3x3x3 (true) or 1x1x1 (false) middle conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagNetConfig {
    pub stage_depths: Vec<usize>,
    pub stage_widths: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub kernel3_pattern: Vec<Vec<bool>>,
    pub stem_width: usize,
    #[serde(default = "default_stem_kernel")]
    pub stem_kernel: usize,
    pub expansion: usize,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

impl BagNetConfig {
    /// Full-size configuration: ResNet-50 depths at half width.
    pub fn paper(variant: Variant) -> Self {
        let depths = vec![3, 4, 6, 3];
        Self {
            kernel3_pattern: variant.pattern(&depths),
            stage_depths: depths,
            stage_widths: vec![32, 64, 128, 256],
            stage_strides: vec![2, 2, 2, 1],
            stem_width: 32,
            stem_kernel: 3,
            expansion: 4,
            norm: NormKind::Instance,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }

    /// Small configuration for CPU experiments: one block per stage.
    pub fn desk(variant: Variant) -> Self {
        let depths = vec![1, 1, 1, 1];
        Self {
            kernel3_pattern: variant.pattern(&depths),
            stage_depths: depths,
            stage_widths: vec![8, 16, 32, 64],
            stage_strides: vec![2, 2, 2, 1],
            stem_width: 8,
            stem_kernel: 3,
            expansion: 4,
            norm: NormKind::Instance,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }

    /// Stem only, no stages.
    pub fn stem_only(stem_width: usize) -> Self {
        Self {
            stage_depths: vec![],
            stage_widths: vec![],
            stage_strides: vec![],
            kernel3_pattern: vec![],
            stem_width,
            stem_kernel: 3,
            expansion: 4,
            norm: NormKind::Instance,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>, stem_width: usize) -> Self {
        self.stage_widths = widths;
        self.stem_width = stem_width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_depths.len();
        if self.stage_widths.len() != n || self.stage_strides.len() != n {
            return Err(Error::config(format!(
                "stage lists disagree: {} depths, {} widths, {} strides",
                n,
                self.stage_widths.len(),
                self.stage_strides.len()
            )));
        }
        if self.kernel3_pattern.len() != n {
            return Err(Error::config(format!(
                "kernel3_pattern has {} stages, stage_depths has {n}",
                self.kernel3_pattern.len()
            )));
        }
        for (i, (row, &depth)) in self.kernel3_pattern.iter().zip(&self.stage_depths).enumerate() {
            if row.len() != depth {
                return Err(Error::config(format!(
                    "stage {}: kernel3_pattern has {} blocks, depth is {depth}",
                    i + 1,
                    row.len()
                )));
            }
            if depth == 0 {
                return Err(Error::config(format!("stage {} has zero blocks", i + 1)));
            }
        }
        if self.stage_widths.contains(&0) || self.stage_strides.contains(&0) {
            return Err(Error::config("stage widths and strides must be >= 1"));
        }
        if self.stem_width == 0 || self.expansion == 0 {
            return Err(Error::config("stem_width and expansion must be >= 1"));
        }
        if self.stem_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "stem_kernel {} must be odd",
                self.stem_kernel
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("norm_eps must be > 0"));
        }
        Ok(())
    }

    /// Channels entering the head.
    pub fn feature_dim(&self) -> usize {
        self.stage_widths
            .last()
            .map_or(self.stem_width, |w| w * self.expansion)
    }

    /// Product of all stage strides.
    pub fn total_stride(&self) -> usize {
        self.stage_strides.iter().product()
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn hash_u64(&self) -> u64 {
        u64::from_str_radix(&self.hash_hex(), 16).expect("hex digest")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_patterns() {
        let d = [3, 4, 6, 3];
        let rf9 = Variant::Rf9.pattern(&d);
        assert_eq!(rf9[0], vec![true, false, false]);
        assert_eq!(rf9[1], vec![true, false, false, false]);
        assert!(rf9[2].iter().all(|&b| !b));
        let rf177 = Variant::Rf177.pattern(&d);
        assert!(rf177.iter().flatten().all(|&b| b));
    }

    #[test]
    fn validate_catches_inconsistent_pattern() {
        let mut c = BagNetConfig::desk(Variant::Rf9);
        c.kernel3_pattern[1].push(true);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = BagNetConfig::desk(Variant::Rf9);
        c.kernel3_pattern.pop();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(BagNetConfig::paper(Variant::Rf177).validate().is_ok());
    }

    #[test]
    fn json_roundtrip_and_defaults() {
        let c = BagNetConfig::paper(Variant::Rf33);
        let json = serde_json::to_string(&c).unwrap();
        let back: BagNetConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let minimal = r#"{"stage_depths":[1],"stage_widths":[4],"stage_strides":[2],
            "kernel3_pattern":[[true]],"stem_width":4,"expansion":4}"#;
        let c: BagNetConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(c.stem_kernel, 3);
        assert_eq!(c.norm_eps, 1e-5);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("RF17".parse::<Variant>().unwrap(), Variant::Rf17);
        assert!("rf5".parse::<Variant>().is_err());
    }
}
