//! Run configuration: flat UTF-8 `key = value` lines, `#` comments.
//!
//! Every key has a default; unknown keys and malformed values are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Segmentation target, in token-bank row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    Arm,
    Gripper,
    Robot,
}

impl TargetClass {
    pub const ALL: [TargetClass; 3] = [TargetClass::Arm, TargetClass::Gripper, TargetClass::Robot];

    /// Row in the class-token bank.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetClass::Arm => "arm",
            TargetClass::Gripper => "gripper",
            TargetClass::Robot => "robot",
        }
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arm" | "robot-arm" => Ok(TargetClass::Arm),
            "gripper" | "robot-gripper" => Ok(TargetClass::Gripper),
            "robot" | "whole-robot" => Ok(TargetClass::Robot),
            other => Err(Error::Config(format!("unknown target class `{other}`"))),
        }
    }
}

fn parse_targets(s: &str) -> Result<Vec<TargetClass>> {
    let targets = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if targets.is_empty() {
        return Err(Error::Config(
            "train_targets must name at least one class".into(),
        ));
    }
    Ok(targets)
}

macro_rules! config {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $( $(#[$doc])* pub $name: $ty, )*
            pub train_targets: Vec<TargetClass>,
        }

        impl Default for Config {
            fn default() -> Self {
                Self {
                    $( $name: $default, )*
                    train_targets: vec![TargetClass::Robot],
                }
            }
        }

        impl Config {
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.parse::<$ty>().map_err(|e| {
                            Error::Config(format!("`{key}`: cannot parse `{value}`: {e}"))
                        })?;
                    } )*
                    "train_targets" => self.train_targets = parse_targets(value)?,
                    other => return Err(Error::Config(format!("unknown key `{other}`"))),
                }
                Ok(())
            }

            /// Serializes every key, one per line, in declaration order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( out.push_str(&format!("{} = {}\n", stringify!($name), self.$name)); )*
                let targets: Vec<&str> = self.train_targets.iter().map(|t| t.name()).collect();
                out.push_str(&format!("train_targets = {}\n", targets.join(",")));
                out
            }
        }
    };
}

config! {
    /// Feature channels `C` (also the decoder token width).
    channels: usize = 32,
    /// Candidate masks `K` per decoder call.
    candidates: usize = 3,
    /// Memory bank capacity `N`, including the pinned conditioning entry.
    memory_size: usize = 4,
    decoder_blocks: usize = 2,
    /// Channels of the stride-4 mask features.
    mask_channels: usize = 8,
    /// Macro regions `R` per memory frame.
    regions: usize = 4,
    /// Micro clusters `S` per region.
    subclusters: usize = 4,
    kmeans_iters: usize = 10,
    w_cyc: f64 = 1.0,
    w_sem: f64 = 0.1,
    w_patch: f64 = 0.5,
    w_struct: f64 = 0.5,
    w_occ: f64 = 0.1,
    w_iou: f64 = 0.1,
    focal_weight: f64 = 20.0,
    dice_weight: f64 = 1.0,
    focal_gamma: f64 = 2.0,
    focal_alpha: f64 = 0.25,
    /// Patch-similarity threshold for pseudo labels.
    tau: f64 = 0.7,
    canny_sigma: f64 = 1.4,
    canny_low: f64 = 0.1,
    canny_high: f64 = 0.3,
    oi_threshold: f64 = 0.9,
    oi_max_rounds: usize = 3,
    oi_clicks_per_round: usize = 3,
    lr_encoder: f64 = 5e-3,
    lr_rest: f64 = 1e-3,
    weight_decay: f64 = 0.0,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    steps: usize = 300,
    batch_size: usize = 2,
    /// Upper bound on the sampled cycle length `t`.
    cycle_max: usize = 3,
    /// Fraction of cycles whose first frame gets a simulated click or box.
    prompt_rate: f64 = 0.0,
    seed: u64 = 0,
}

impl Config {
    /// A narrow network for the self-check and fast tests.
    pub fn tiny() -> Self {
        Config {
            channels: 8,
            mask_channels: 4,
            candidates: 2,
            decoder_blocks: 1,
            regions: 2,
            subclusters: 2,
            ..Config::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("candidates", self.candidates),
            ("memory_size", self.memory_size),
            ("mask_channels", self.mask_channels),
            ("regions", self.regions),
            ("subclusters", self.subclusters),
            ("batch_size", self.batch_size),
            ("cycle_max", self.cycle_max),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be at least 1")));
        }
        if !self.channels.is_multiple_of(4) {
            return Err(Error::Config(
                "`channels` must be a multiple of 4 (2-D sinusoidal encoding)".into(),
            ));
        }
        let weights = [
            self.w_cyc,
            self.w_sem,
            self.w_patch,
            self.w_struct,
            self.w_occ,
            self.w_iou,
        ];
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.canny_low > 0.0 && self.canny_low < self.canny_high && self.canny_high <= 1.0) {
            return Err(Error::Config(
                "Canny thresholds need 0 < low < high <= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.prompt_rate) {
            return Err(Error::Config("`prompt_rate` must lie in [0, 1]".into()));
        }
        if self.canny_sigma.is_nan() || self.canny_sigma <= 0.0 {
            return Err(Error::Config("`canny_sigma` must be positive".into()));
        }
        Ok(())
    }
}
