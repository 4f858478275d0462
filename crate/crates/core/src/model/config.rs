use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::layers::{ConformerBlock, ConformerLayerConfig, Linear, PosEncoding};
use crate::reduction::{DownsampleX2, FrontendX4, ReductionPolicy};
use crate::{Error, Result};

/// 256 subword units plus the blank.
pub const DEFAULT_VOCAB: usize = 257;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_FRONTEND_CHANNELS: usize = 64;
pub const DEFAULT_DOWNSAMPLE_DIM: usize = 512;
pub const DEFAULT_SEED: u64 = 42;
/// Blank plus nine labels.
pub const TOY_VOCAB: usize = 10;

/// Full architectural hyperparameters of an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub policy: ReductionPolicy,
    pub layer: ConformerLayerConfig,
    pub vocab_size: usize,
    pub intermediate_ctc: bool,
    pub lambda: f64,
    /// Filters of both conv2d layers in the x4 frontend.
    pub frontend_channels: usize,
    /// Inner width of every Downsampling x2 block.
    pub downsample_dim: usize,
    pub seed: u64,
}

/// Named configurations of every published model plus a toy model.
pub const PRESETS: &[&str] = &[
    "conformer-s",
    "conv-conformer-v1",
    "conv-conformer-v2",
    "uconv-d8-f4",
    "uconv-d16-f4",
    "uconv-d16-f8-v1",
    "uconv-d16-f8-v2",
    "uconv-d32-f8",
    "conformer-l",
    "uconv-l-d16-f8-v1",
    "toy",
];

impl EncoderConfig {
    /// Conformer-S sized encoder with the given policy.
    pub fn small(policy: ReductionPolicy) -> Self {
        Self {
            policy,
            layer: ConformerLayerConfig::small(),
            vocab_size: DEFAULT_VOCAB,
            intermediate_ctc: false,
            lambda: DEFAULT_LAMBDA,
            frontend_channels: DEFAULT_FRONTEND_CHANNELS,
            downsample_dim: DEFAULT_DOWNSAMPLE_DIM,
            seed: DEFAULT_SEED,
        }
    }

    /// Conformer-L sized encoder: 512-dim attention, 2048 FFN, kernel 31,
    /// 512 frontend filters.
    pub fn large(policy: ReductionPolicy) -> Self {
        Self {
            layer: ConformerLayerConfig {
                attn_dim: 512,
                ffn_dim: 2048,
                conv_kernel: 31,
                ..ConformerLayerConfig::small()
            },
            frontend_channels: 512,
            ..Self::small(policy)
        }
    }

    /// d=64, 4 heads, FFN 128, one layer per level of x4-x8-x16-x8.
    pub fn toy(vocab_size: usize) -> Self {
        let policy = ReductionPolicy::new(alloc::vec![4, 8, 16, 8], alloc::vec![1, 1, 1, 1]).expect("valid");
        Self {
            layer: ConformerLayerConfig {
                attn_dim: 64,
                heads: 4,
                ffn_dim: 128,
                conv_kernel: 5,
                dropout: 0.0,
                pos_enc: PosEncoding::Relative,
            },
            vocab_size,
            frontend_channels: 8,
            downsample_dim: 128,
            ..Self::small(policy)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let p = |levels: &str, layers: &str| ReductionPolicy::parse(levels, Some(layers));
        Ok(match name {
            "conformer-s" => Self::small(p("x4", "12")?),
            "conv-conformer-v1" => Self::small(p("x4-x8", "2-10")?),
            "conv-conformer-v2" => Self::small(p("x4-x8", "4-8")?),
            "uconv-d8-f4" => Self::small(p("x4-x8-x4", "2-8-2")?),
            "uconv-d16-f4" => Self::small(p("x4-x8-x16-x8-x4", "2-2-4-2-2")?),
            "uconv-d16-f8-v1" => Self::small(p("x4-x8-x16-x8", "3-3-3-3")?),
            "uconv-d16-f8-v2" => Self::small(p("x4-x8-x16-x8", "2-4-5-1")?),
            "uconv-d32-f8" => Self::small(p("x4-x8-x16-x32-x16-x8", "2-2-2-2-2-2")?),
            "conformer-l" => Self::large(p("x4", "12")?),
            "uconv-l-d16-f8-v1" => Self::large(p("x4-x8-x16-x8", "3-3-3-3")?),
            "toy" => Self::toy(TOY_VOCAB),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size {} must be at least 2",
                self.vocab_size
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.frontend_channels == 0 || self.downsample_dim == 0 {
            return Err(Error::Config(
                "frontend_channels and downsample_dim must be positive".into(),
            ));
        }
        if self.policy.total_layers() == 0 {
            return Err(Error::Config("policy has no Conformer layers".into()));
        }
        Ok(())
    }

    /// Scalar parameter count from the sublayer formulas alone.
    pub fn closed_form_params(&self) -> usize {
        let d = self.layer.attn_dim;
        FrontendX4::param_count(self.frontend_channels, d)
            + self.policy.total_layers() * ConformerBlock::param_count(&self.layer)
            + self.policy.num_downsamples() * DownsampleX2::param_count(d, self.downsample_dim)
            + Linear::param_count(d, self.vocab_size, true)
    }

    /// `key=value` lines; parsing them reproduces this config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let l = &self.layer;
        let pos = match l.pos_enc {
            PosEncoding::Relative => "rel",
            PosEncoding::Absolute => "abs",
        };
        let _ = writeln!(s, "policy={}", self.policy.levels_text());
        let _ = writeln!(s, "layers={}", self.policy.layers_text());
        let _ = writeln!(s, "attn_dim={}", l.attn_dim);
        let _ = writeln!(s, "heads={}", l.heads);
        let _ = writeln!(s, "ffn_dim={}", l.ffn_dim);
        let _ = writeln!(s, "conv_kernel={}", l.conv_kernel);
        let _ = writeln!(s, "dropout={:?}", l.dropout);
        let _ = writeln!(s, "pos_enc={pos}");
        let _ = writeln!(s, "vocab_size={}", self.vocab_size);
        let _ = writeln!(s, "intermediate_ctc={}", self.intermediate_ctc);
        let _ = writeln!(s, "lambda={:?}", self.lambda);
        let _ = writeln!(s, "frontend_channels={}", self.frontend_channels);
        let _ = writeln!(s, "downsample_dim={}", self.downsample_dim);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Parses `key=value` lines. `#` starts a comment. A `preset` line, if
    /// present, must come first and supplies defaults for every other key;
    /// otherwise the Conformer-S sizes are the defaults and `policy` is
    /// required. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: format!("expected key=value, got '{line}'"),
            })?;
            let key = key.trim();
            if entries.iter().any(|(_, k, _)| *k == key) {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("duplicate key '{key}'"),
                });
            }
            entries.push((i + 1, key, value.trim()));
        }

        let mut cfg = match entries.iter().position(|(_, k, _)| *k == "preset") {
            Some(0) => {
                let (line, _, name) = entries[0];
                Self::preset(name).map_err(|e| Error::Parse {
                    line,
                    reason: e.to_string(),
                })?
            }
            Some(i) => {
                return Err(Error::Parse {
                    line: entries[i].0,
                    reason: "preset must be the first key".into(),
                })
            }
            None => {
                let policy_line = entries.iter().find(|(_, k, _)| *k == "policy");
                if policy_line.is_none() {
                    return Err(Error::Parse {
                        line: text.lines().count().max(1),
                        reason: "missing required key 'policy'".into(),
                    });
                }
                Self::small(ReductionPolicy::parse("x4", Some("12"))?)
            }
        };

        let mut levels: Option<(usize, &str)> = None;
        let mut layers: Option<(usize, &str)> = None;
        for &(line, key, value) in &entries {
            let bad = |what: &str| Error::Parse {
                line,
                reason: format!("invalid {what} '{value}' for key '{key}'"),
            };
            let int = || value.parse::<usize>().map_err(|_| bad("integer"));
            let float = || value.parse::<f64>().map_err(|_| bad("number"));
            match key {
                "preset" => {}
                "policy" => levels = Some((line, value)),
                "layers" => layers = Some((line, value)),
                "attn_dim" => cfg.layer.attn_dim = int()?,
                "heads" => cfg.layer.heads = int()?,
                "ffn_dim" => cfg.layer.ffn_dim = int()?,
                "conv_kernel" => cfg.layer.conv_kernel = int()?,
                "dropout" => cfg.layer.dropout = float()?,
                "pos_enc" => {
                    cfg.layer.pos_enc = match value {
                        "rel" | "relative" => PosEncoding::Relative,
                        "abs" | "absolute" => PosEncoding::Absolute,
                        _ => return Err(bad("positional encoding")),
                    }
                }
                "vocab_size" => cfg.vocab_size = int()?,
                "intermediate_ctc" => {
                    cfg.intermediate_ctc = match value {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        _ => return Err(bad("boolean")),
                    }
                }
                "lambda" => cfg.lambda = float()?,
                "frontend_channels" => cfg.frontend_channels = int()?,
                "downsample_dim" => cfg.downsample_dim = int()?,
                "seed" => cfg.seed = value.parse::<u64>().map_err(|_| bad("integer"))?,
                _ => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("unknown key '{key}'"),
                    })
                }
            }
        }

        if levels.is_some() || layers.is_some() {
            let line = levels.or(layers).map(|(l, _)| l).unwrap_or(0);
            let levels_text = match levels {
                Some((_, v)) => String::from(v),
                None => cfg.policy.levels_text(),
            };
            let explicit_layers = layers.map(|(_, v)| v);
            let kept_layers = cfg.policy.layers_text();
            let layer_text = match (levels, explicit_layers) {
                (_, Some(v)) => Some(v),
                (None, None) => Some(kept_layers.as_str()),
                (Some(_), None) => None,
            };
            cfg.policy = ReductionPolicy::parse(&levels_text, layer_text).map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for &name in PRESETS {
            let cfg = EncoderConfig::preset(name).unwrap();
            let again = EncoderConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
    }

    #[test]
    fn preset_with_overrides() {
        let cfg = EncoderConfig::parse("preset=uconv-d16-f8-v1\nintermediate_ctc=true\nvocab_size=31\n").unwrap();
        assert!(cfg.intermediate_ctc);
        assert_eq!(cfg.vocab_size, 31);
        assert_eq!(cfg.policy.levels(), &[4, 8, 16, 8]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = EncoderConfig::parse("policy=x4-x8\nheads=eight\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = EncoderConfig::parse("# comment\npolicy=x4-x16\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = EncoderConfig::parse("policy=x4\nbogus=1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(EncoderConfig::parse("heads=8\n").is_err());
    }

    #[test]
    fn shorthand_policy_uses_default_split() {
        let cfg = EncoderConfig::parse("policy=D16-F8\n").unwrap();
        assert_eq!(cfg.policy.layers(), &[3, 3, 3, 3]);
    }

    #[test]
    fn closed_form_counts() {
        let count = |n: &str| EncoderConfig::preset(n).unwrap().closed_form_params();
        assert_eq!(count("conformer-s"), 21_879_441);
        assert_eq!(count("conv-conformer-v2"), 23_240_617);
        assert_eq!(count("uconv-d16-f8-v1"), 24_601_793);
        assert_eq!(count("uconv-d32-f8"), 25_962_969);
        assert_eq!(count("conformer-l"), 83_624_705);
        assert_eq!(count("uconv-l-d16-f8-v1"), 87_297_793);
    }
}
