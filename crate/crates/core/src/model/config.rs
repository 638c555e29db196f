use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Direction in which routing logits are normalized into couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormAxis {
    /// Each primary capsule distributes unit mass over the class capsules.
    #[default]
    OverParents,
    /// Each class capsule receives unit mass from the primary capsules.
    OverChildren,
}

impl NormAxis {
    /// Softmax axis in a `[batch, primary, class]` logit tensor.
    pub fn softmax_axis(self) -> usize {
        match self {
            NormAxis::OverParents => 2,
            NormAxis::OverChildren => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormAxis::OverParents => "over_parents",
            NormAxis::OverChildren => "over_children",
        }
    }
}

impl fmt::Display for NormAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "over_parents" => Ok(NormAxis::OverParents),
            "over_children" => Ok(NormAxis::OverChildren),
            other => Err(ConfigError::Invalid { key: "norm_axis".into(), detail: format!("unknown axis {other:?}") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config key {key}: {detail}")]
    Invalid { key: String, detail: String },
    #[error("config line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("config key {0} missing")]
    Missing(String),
    #[error("unknown config key {0}")]
    Unknown(String),
}

/// Architecture of the capsule network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    /// Component capsules: blocks of primary capsules sharing a feature type.
    pub primary_blocks: usize,
    pub primary_dim: usize,
    pub classes: usize,
    pub class_dim: usize,
    pub routing_iters: usize,
    pub norm_axis: NormAxis,
    pub decoder_hidden: Vec<usize>,
    /// Capsule layers between primary and class capsules. Only 0 is supported.
    pub intermediate_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_height: 28,
            input_width: 28,
            conv1_channels: 256,
            conv1_kernel: 9,
            conv1_stride: 1,
            primary_kernel: 9,
            primary_stride: 2,
            primary_blocks: 32,
            primary_dim: 8,
            classes: 10,
            class_dim: 2,
            routing_iters: 3,
            norm_axis: NormAxis::OverParents,
            decoder_hidden: vec![512, 1024],
            intermediate_layers: 0,
        }
    }
}

impl ModelConfig {
    /// An 8×8-input network with 8 primary capsules of dimension 4 and three
    /// classes, small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            input_height: 8,
            input_width: 8,
            conv1_channels: 2,
            conv1_kernel: 3,
            conv1_stride: 1,
            primary_kernel: 3,
            primary_stride: 2,
            primary_blocks: 2,
            primary_dim: 4,
            classes: 3,
            class_dim: 2,
            routing_iters: 3,
            norm_axis: NormAxis::OverParents,
            decoder_hidden: vec![6, 8],
            intermediate_layers: 0,
        }
    }

    pub fn conv1_out(&self) -> (usize, usize) {
        ((self.input_height - self.conv1_kernel) / self.conv1_stride + 1, (self.input_width - self.conv1_kernel) / self.conv1_stride + 1)
    }

    /// Spatial grid of the primary capsule layer.
    pub fn grid(&self) -> (usize, usize) {
        let (h, w) = self.conv1_out();
        ((h - self.primary_kernel) / self.primary_stride + 1, (w - self.primary_kernel) / self.primary_stride + 1)
    }

    pub fn primary_channels(&self) -> usize {
        self.primary_blocks * self.primary_dim
    }

    /// Total primary capsules (N1).
    pub fn num_primary(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw * self.primary_blocks
    }

    pub fn pixels(&self) -> usize {
        self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, detail: &str| Err(ConfigError::Invalid { key: key.into(), detail: detail.into() });
        let positive = [
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("conv1_channels", self.conv1_channels),
            ("conv1_kernel", self.conv1_kernel),
            ("conv1_stride", self.conv1_stride),
            ("primary_kernel", self.primary_kernel),
            ("primary_stride", self.primary_stride),
            ("primary_blocks", self.primary_blocks),
            ("primary_dim", self.primary_dim),
            ("classes", self.classes),
            ("class_dim", self.class_dim),
            ("routing_iters", self.routing_iters),
        ];
        for (key, value) in positive {
            if value == 0 {
                return invalid(key, "must be positive");
            }
        }
        if self.class_dim < 2 {
            return invalid("class_dim", "must be at least 2");
        }
        if self.decoder_hidden.contains(&0) {
            return invalid("decoder_hidden", "widths must be positive");
        }
        if self.intermediate_layers != 0 {
            return invalid("intermediate_layers", "only 0 intermediate capsule layers are supported");
        }
        if self.conv1_kernel > self.input_height || self.conv1_kernel > self.input_width {
            return invalid("conv1_kernel", "larger than the input");
        }
        let (h, w) = self.conv1_out();
        if self.primary_kernel > h || self.primary_kernel > w {
            return invalid("primary_kernel", "larger than the first feature map");
        }
        Ok(())
    }

    /// Canonical `key=value` lines in fixed order.
    pub fn to_canonical(&self) -> String {
        let hidden: Vec<String> = self.decoder_hidden.iter().map(|w| w.to_string()).collect();
        let mut out = String::new();
        for (key, value) in [
            ("input_height", self.input_height.to_string()),
            ("input_width", self.input_width.to_string()),
            ("conv1_channels", self.conv1_channels.to_string()),
            ("conv1_kernel", self.conv1_kernel.to_string()),
            ("conv1_stride", self.conv1_stride.to_string()),
            ("primary_kernel", self.primary_kernel.to_string()),
            ("primary_stride", self.primary_stride.to_string()),
            ("primary_blocks", self.primary_blocks.to_string()),
            ("primary_dim", self.primary_dim.to_string()),
            ("classes", self.classes.to_string()),
            ("class_dim", self.class_dim.to_string()),
            ("routing_iters", self.routing_iters.to_string()),
            ("norm_axis", self.norm_axis.to_string()),
            ("decoder_hidden", hidden.join(",")),
            ("intermediate_layers", self.intermediate_layers.to_string()),
        ] {
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`ModelConfig::to_canonical`]. Every key is required.
    pub fn from_canonical(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let get = |key: &str| -> Result<&str, ConfigError> {
            pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| ConfigError::Missing(key.into()))
        };
        let num = |key: &str| -> Result<usize, ConfigError> {
            let v = get(key)?;
            v.parse().map_err(|_| ConfigError::Invalid { key: key.into(), detail: format!("not an integer: {v:?}") })
        };
        let hidden = get("decoder_hidden")?;
        let decoder_hidden = if hidden.is_empty() {
            Vec::new()
        } else {
            hidden
                .split(',')
                .map(|w| {
                    w.parse().map_err(|_| ConfigError::Invalid { key: "decoder_hidden".into(), detail: format!("not an integer: {w:?}") })
                })
                .collect::<Result<_, _>>()?
        };
        let cfg = ModelConfig {
            input_height: num("input_height")?,
            input_width: num("input_width")?,
            conv1_channels: num("conv1_channels")?,
            conv1_kernel: num("conv1_kernel")?,
            conv1_stride: num("conv1_stride")?,
            primary_kernel: num("primary_kernel")?,
            primary_stride: num("primary_stride")?,
            primary_blocks: num("primary_blocks")?,
            primary_dim: num("primary_dim")?,
            classes: num("classes")?,
            class_dim: num("class_dim")?,
            routing_iters: num("routing_iters")?,
            norm_axis: get("norm_axis")?.parse()?,
            decoder_hidden,
            intermediate_layers: num("intermediate_layers")?,
        };
        const KNOWN: [&str; 15] = [
            "input_height",
            "input_width",
            "conv1_channels",
            "conv1_kernel",
            "conv1_stride",
            "primary_kernel",
            "primary_stride",
            "primary_blocks",
            "primary_dim",
            "classes",
            "class_dim",
            "routing_iters",
            "norm_axis",
            "decoder_hidden",
            "intermediate_layers",
        ];
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !KNOWN.contains(&k.as_str())) {
            return Err(ConfigError::Unknown(k.clone()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key=value` lines, skipping blanks.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| ConfigError::Syntax { line: n + 1, text: line.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_table_architecture() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.conv1_out(), (20, 20));
        assert_eq!(cfg.grid(), (6, 6));
        assert_eq!(cfg.num_primary(), 1152);
        assert_eq!(cfg.primary_channels(), 256);
        assert_eq!(cfg.classes * cfg.class_dim, 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn tiny_has_eight_primary_capsules() {
        let cfg = ModelConfig::tiny();
        assert_eq!(cfg.num_primary(), 8);
        cfg.validate().unwrap();
    }

    #[test]
    fn canonical_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.norm_axis = NormAxis::OverChildren;
        cfg.routing_iters = 5;
        assert_eq!(ModelConfig::from_canonical(&cfg.to_canonical()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ModelConfig::default();
        cfg.class_dim = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.intermediate_layers = 1;
        assert!(cfg.validate().is_err());
        let text = ModelConfig::default().to_canonical().replace("norm_axis=over_parents", "norm_axis=sideways");
        assert!(ModelConfig::from_canonical(&text).is_err());
        let text = format!("{}bogus=1\n", ModelConfig::default().to_canonical());
        assert!(matches!(ModelConfig::from_canonical(&text), Err(ConfigError::Unknown(_))));
    }
}
