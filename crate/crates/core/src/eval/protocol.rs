use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{contract, Error, Result};
use crate::eval::clicks::{corrective_clicks, simulate_bbox, simulate_clicks};
use crate::eval::metrics::iou;
use crate::imaging::BinaryMask;
use crate::model::Prompt;
use crate::tracker::{FrameData, Prediction, Tracker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SettingKind {
    /// No user input; class and object tokens only.
    #[serde(rename = "AU")]
    Automatic,
    #[serde(rename = "1C")]
    OneClick,
    #[serde(rename = "3C")]
    ThreeClicks,
    #[serde(rename = "BB")]
    BoundingBox,
    /// Three clicks, then corrective clicks whenever a frame's IoU drops.
    #[serde(rename = "OI")]
    Online,
}

impl SettingKind {
    pub const ALL: [SettingKind; 5] = [
        SettingKind::Automatic,
        SettingKind::OneClick,
        SettingKind::ThreeClicks,
        SettingKind::BoundingBox,
        SettingKind::Online,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SettingKind::Automatic => "AU",
            SettingKind::OneClick => "1C",
            SettingKind::ThreeClicks => "3C",
            SettingKind::BoundingBox => "BB",
            SettingKind::Online => "OI",
        }
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SettingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SettingKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown evaluation setting `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSetting {
    pub kind: SettingKind,
    pub oi_threshold: f64,
    pub oi_max_rounds: usize,
    pub oi_clicks_per_round: usize,
}

impl EvalSetting {
    pub fn new(kind: SettingKind, cfg: &Config) -> Self {
        Self {
            kind,
            oi_threshold: cfg.oi_threshold,
            oi_max_rounds: cfg.oi_max_rounds,
            oi_clicks_per_round: cfg.oi_clicks_per_round,
        }
    }
}

/// Masks produced under one setting plus the interaction spent.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingRun {
    /// One mask per frame at original resolution.
    pub masks: Vec<BinaryMask>,
    /// Corrective rounds consumed (online setting only).
    pub rounds: usize,
    /// Clicks added in each round.
    pub clicks_per_round: Vec<usize>,
}

fn hard(p: &Prediction, frame: &FrameData) -> Result<BinaryMask> {
    p.binary(frame.height, frame.width)
}

/// First-frame prediction under the setting's prompts.
fn first_frame(
    tracker: &mut dyn Tracker,
    frame: &FrameData,
    gt: Option<&BinaryMask>,
    kind: SettingKind,
) -> Result<Prediction> {
    if kind == SettingKind::Automatic {
        return tracker.predict(frame, &[]);
    }
    let gt = gt.ok_or_else(|| Error::Config(format!("setting {kind} needs a first-frame mask")))?;
    match kind {
        SettingKind::OneClick => {
            let prompts: Vec<Prompt> = simulate_clicks(gt, None, 1)?
                .into_iter()
                .map(Prompt::from)
                .collect();
            tracker.predict(frame, &prompts)
        }
        SettingKind::BoundingBox => {
            let (x0, y0, x1, y1) = simulate_bbox(gt)?;
            tracker.predict(frame, &[Prompt::Box { x0, y0, x1, y1 }])
        }
        SettingKind::ThreeClicks | SettingKind::Online => {
            let mut prompts: Vec<Prompt> = simulate_clicks(gt, None, 1)?
                .into_iter()
                .map(Prompt::from)
                .collect();
            let mut pred = tracker.predict(frame, &prompts)?;
            for _ in 1..3 {
                let Some(c) = corrective_clicks(gt, &hard(&pred, frame)?, 1)?.pop() else {
                    break;
                };
                prompts.push(c.into());
                pred = tracker.predict(frame, &prompts)?;
            }
            Ok(pred)
        }
        SettingKind::Automatic => unreachable!(),
    }
}

/// Segments a whole video under `setting`.
///
/// Frame 0 receives the setting's prompts and every prediction is memorized
/// as it is made. In the online setting, a later frame whose IoU falls below
/// the threshold opens a correction round (while rounds remain): corrective
/// clicks are added one at a time until the IoU recovers or the per-round
/// budget is spent, and the corrected prediction is what gets memorized.
pub fn run_setting(
    tracker: &mut dyn Tracker,
    frames: &[FrameData],
    gts: &[Option<BinaryMask>],
    setting: &EvalSetting,
) -> Result<SettingRun> {
    if frames.is_empty() {
        return Err(contract("run_setting", "no frames"));
    }
    if gts.len() != frames.len() {
        return Err(contract(
            "run_setting",
            format!("{} masks for {} frames", gts.len(), frames.len()),
        ));
    }
    let online = setting.kind == SettingKind::Online;
    if online && gts.iter().any(Option::is_none) {
        return Err(Error::Config(
            "the online setting needs a mask on every frame".into(),
        ));
    }
    tracker.reset_memory();
    let pred = first_frame(tracker, &frames[0], gts[0].as_ref(), setting.kind)?;
    tracker.memorize(&frames[0], &pred.prob)?;
    let mut masks = vec![hard(&pred, &frames[0])?];
    let mut rounds = 0;
    let mut clicks_per_round = Vec::new();
    for (frame, gt) in frames.iter().zip(gts).skip(1) {
        let mut pred = tracker.predict(frame, &[])?;
        let mut mask = hard(&pred, frame)?;
        if let (true, Some(gt)) = (online, gt) {
            if rounds < setting.oi_max_rounds && iou(&mask, gt)? < setting.oi_threshold {
                rounds += 1;
                let mut prompts = Vec::new();
                for _ in 0..setting.oi_clicks_per_round {
                    let Some(c) = corrective_clicks(gt, &mask, 1)?.pop() else {
                        break;
                    };
                    prompts.push(Prompt::from(c));
                    pred = tracker.predict(frame, &prompts)?;
                    mask = hard(&pred, frame)?;
                    if iou(&mask, gt)? >= setting.oi_threshold {
                        break;
                    }
                }
                clicks_per_round.push(prompts.len());
            }
        }
        tracker.memorize(frame, &pred.prob)?;
        masks.push(mask);
    }
    Ok(SettingRun {
        masks,
        rounds,
        clicks_per_round,
    })
}
