//! Model hyperparameters and the flat `key = value` config format.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::audio::StftConfig;
use crate::error::{Error, Result};
use crate::loss::MagnitudeMode;
use crate::transformer::{AttentionKind, Dense1dKind, FfwKind};

/// Feature block used in the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dense2dKind {
    /// Split dense block.
    Split,
    /// A single conv (plus LN and PReLU in the encoder).
    Conv,
}

impl FromStr for Dense2dKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdb" => Ok(Self::Split),
            "conv" => Ok(Self::Conv),
            _ => Err(Error::Config(format!("unknown 2D block kind {s:?} (sdb|conv)"))),
        }
    }
}

impl Dense2dKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Split => "sdb",
            Self::Conv => "conv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mics: usize,
    pub channels: usize,
    pub groups: usize,
    pub sub_channels: usize,
    pub unfold_kernel: usize,
    pub unfold_stride: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub heads: usize,
    pub ffw_kernel: usize,
    pub win: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub attention: AttentionKind,
    pub ffw: FfwKind,
    pub dense1d: Dense1dKind,
    pub dense2d: Dense2dKind,
    pub dropout: f64,
    pub loss_mode: MagnitudeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::base()
    }
}

pub const KEYS: &[&str] = &[
    "mics",
    "channels",
    "groups",
    "sub_channels",
    "unfold_kernel",
    "unfold_stride",
    "blocks",
    "kernel",
    "heads",
    "ffw_kernel",
    "win",
    "hop",
    "sample_rate",
    "attention",
    "ffw",
    "dense1d",
    "dense2d",
    "dropout",
    "loss_mode",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    /// Four microphones, six blocks.
    pub fn base() -> Self {
        Self {
            mics: 4,
            channels: 256,
            groups: 4,
            sub_channels: 64,
            unfold_kernel: 4,
            unfold_stride: 1,
            blocks: 6,
            kernel: 3,
            heads: 4,
            ffw_kernel: 5,
            win: 512,
            hop: 256,
            sample_rate: 16_000,
            attention: AttentionKind::ConvEfficient,
            ffw: FfwKind::DualPath,
            dense1d: Dense1dKind::Split,
            dense2d: Dense2dKind::Split,
            dropout: 0.0,
            loss_mode: MagnitudeMode::SummedAbs,
        }
    }

    /// Base with twelve blocks.
    pub fn large() -> Self {
        Self {
            blocks: 12,
            ..Self::base()
        }
    }

    /// Small enough for finite-difference checks and toy training.
    pub fn tiny() -> Self {
        Self {
            mics: 2,
            channels: 16,
            groups: 4,
            sub_channels: 4,
            unfold_kernel: 4,
            blocks: 2,
            win: 64,
            hop: 32,
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Self::base()),
            "large" => Ok(Self::large()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (base|large|tiny)"))),
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            win: self.win,
            hop: self.hop,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mics" => self.mics = parse_num(key, v)?,
            "channels" => self.channels = parse_num(key, v)?,
            "groups" => self.groups = parse_num(key, v)?,
            "sub_channels" => self.sub_channels = parse_num(key, v)?,
            "unfold_kernel" => self.unfold_kernel = parse_num(key, v)?,
            "unfold_stride" => self.unfold_stride = parse_num(key, v)?,
            "blocks" => self.blocks = parse_num(key, v)?,
            "kernel" => self.kernel = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "ffw_kernel" => self.ffw_kernel = parse_num(key, v)?,
            "win" => self.win = parse_num(key, v)?,
            "hop" => self.hop = parse_num(key, v)?,
            "sample_rate" => self.sample_rate = parse_num(key, v)?,
            "attention" => self.attention = v.parse()?,
            "ffw" => self.ffw = v.parse()?,
            "dense1d" => self.dense1d = v.parse()?,
            "dense2d" => self.dense2d = v.parse()?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "loss_mode" => self.loss_mode = v.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", no + 1)));
            };
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Parses a config over the base defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::base();
        cfg.merge_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mics" => self.mics.to_string(),
            "channels" => self.channels.to_string(),
            "groups" => self.groups.to_string(),
            "sub_channels" => self.sub_channels.to_string(),
            "unfold_kernel" => self.unfold_kernel.to_string(),
            "unfold_stride" => self.unfold_stride.to_string(),
            "blocks" => self.blocks.to_string(),
            "kernel" => self.kernel.to_string(),
            "heads" => self.heads.to_string(),
            "ffw_kernel" => self.ffw_kernel.to_string(),
            "win" => self.win.to_string(),
            "hop" => self.hop.to_string(),
            "sample_rate" => self.sample_rate.to_string(),
            "attention" => self.attention.as_str().to_string(),
            "ffw" => self.ffw.as_str().to_string(),
            "dense1d" => self.dense1d.as_str().to_string(),
            "dense2d" => self.dense2d.as_str().to_string(),
            "dropout" => self.dropout.to_string(),
            "loss_mode" => self.loss_mode.as_str().to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("mics", self.mics),
            ("channels", self.channels),
            ("groups", self.groups),
            ("sub_channels", self.sub_channels),
            ("unfold_kernel", self.unfold_kernel),
            ("heads", self.heads),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{k} must be positive"));
        }
        if self.channels != self.groups * self.sub_channels {
            return fail(format!(
                "channels {} != groups {} × sub_channels {}",
                self.channels, self.groups, self.sub_channels
            ));
        }
        if self.unfold_stride != 1 {
            return fail(format!("unfold_stride must be 1, got {}", self.unfold_stride));
        }
        match self.dense1d {
            Dense1dKind::Split if self.unfold_kernel != self.groups => {
                return fail(format!(
                    "unfold_kernel {} must equal groups {} for split dense blocks",
                    self.unfold_kernel, self.groups
                ))
            }
            Dense1dKind::Dense | Dense1dKind::Grouped if self.unfold_kernel != 1 => {
                return fail(format!(
                    "unfold_kernel must be 1 with dense1d = {}, got {}",
                    self.dense1d.as_str(),
                    self.unfold_kernel
                ))
            }
            _ => {}
        }
        if self.kernel.is_multiple_of(2) || self.ffw_kernel.is_multiple_of(2) {
            return fail("kernel and ffw_kernel must be odd".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        StftConfig::new(self.win, self.hop)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_errors() {
        let cfg = ModelConfig::tiny();
        assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(ModelConfig::parse("bogus = 1").is_err());
        assert!(ModelConfig::parse("channels = 100").is_err());
        let c = ModelConfig::parse("# comment\nblocks = 12 # trailing\n").unwrap();
        assert_eq!(c, ModelConfig::large());
    }
}
