//! Metrics, prompt simulation, evaluation settings and reports.

mod clicks;
mod metrics;
mod protocol;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use robomask_tensor::Graph;
use serde::{Deserialize, Serialize};

pub use clicks::{components, corrective_clicks, simulate_bbox, simulate_clicks, Click};
pub use metrics::{boundary_f, boundary_tolerance, iou, jaccard, jf_video, VideoMetrics};
pub use protocol::{run_setting, EvalSetting, SettingKind, SettingRun};

use crate::config::TargetClass;
use crate::dataset::VideoClip;
use crate::error::{contract, io_err, Result};
use crate::model::Model;
use crate::tracker::{FrameData, Session};

/// Scores of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video: String,
    pub category: String,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub rounds: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub videos: usize,
}

fn means<'a>(scores: impl Iterator<Item = &'a VideoScore>) -> Means {
    let mut m = Means::default();
    for s in scores {
        m.j += s.j;
        m.f += s.f;
        m.jf += s.jf;
        m.videos += 1;
    }
    if m.videos > 0 {
        let n = m.videos as f64;
        m.j /= n;
        m.f /= n;
        m.jf /= n;
    }
    m
}

/// Per-video, per-category and overall scores for one setting and target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub setting: SettingKind,
    pub target: TargetClass,
    pub videos: Vec<VideoScore>,
    pub categories: BTreeMap<String, Means>,
    pub overall: Means,
}

/// Unweighted means per category and over all videos.
pub fn aggregate(
    setting: SettingKind,
    target: TargetClass,
    videos: Vec<VideoScore>,
) -> MetricsReport {
    let mut categories = BTreeMap::new();
    let names: std::collections::BTreeSet<&str> =
        videos.iter().map(|v| v.category.as_str()).collect();
    for name in names {
        categories.insert(
            name.to_string(),
            means(videos.iter().filter(|v| v.category == name)),
        );
    }
    let overall = means(videos.iter());
    MetricsReport {
        setting,
        target,
        videos,
        categories,
        overall,
    }
}

impl MetricsReport {
    /// One row per video.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,target,category,video,J,F,JF,rounds\n");
        for v in &self.videos {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{:.4},{}",
                self.setting, self.target, v.category, v.video, v.j, v.f, v.jf, v.rounds
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<setting>_<target>.csv` and `.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let stem = format!(
            "{}_{}",
            self.setting.label().to_ascii_lowercase(),
            self.target
        );
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(io_err(&csv))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(io_err(&json))?;
        Ok(())
    }
}

/// Evaluates `model` on every video that has per-frame masks for `target`.
pub fn evaluate(
    model: &Model,
    videos: &[VideoClip],
    setting: &EvalSetting,
    target: TargetClass,
) -> Result<MetricsReport> {
    let mut scores = Vec::new();
    for clip in videos {
        let gts: Vec<_> = (0..clip.frames.len())
            .map(|i| clip.mask(target, i).cloned())
            .collect();
        if gts.iter().any(Option::is_none) {
            log::warn!("skipping `{}`: missing {target} masks", clip.name);
            continue;
        }
        let frames: Vec<FrameData> = clip
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| FrameData::new(i, f))
            .collect();
        let g = Graph::new();
        let bound = model.params.bind(&g, false);
        let mut session = Session::new(&g, &bound, &model.config, target)?;
        let run = run_setting(&mut session, &frames, &gts, setting)?;
        let truth: Vec<_> = gts.into_iter().flatten().collect();
        let m = jf_video(&run.masks, &truth)?;
        scores.push(VideoScore {
            video: clip.name.clone(),
            category: clip.category.clone(),
            j: m.j,
            f: m.f,
            jf: m.jf,
            rounds: run.rounds,
        });
    }
    if scores.is_empty() && !videos.is_empty() {
        return Err(contract(
            "evaluate",
            format!("no video has per-frame {target} masks"),
        ));
    }
    Ok(aggregate(setting.kind, target, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(video: &str, category: &str, j: f64, f: f64) -> VideoScore {
        VideoScore {
            video: video.into(),
            category: category.into(),
            j,
            f,
            jf: (j + f) / 2.0,
            rounds: 0,
        }
    }

    #[test]
    fn single_video_report() {
        let r = aggregate(
            SettingKind::Automatic,
            TargetClass::Robot,
            vec![score("a", "x", 80.0, 60.0)],
        );
        assert_eq!(r.overall.jf, 70.0);
        assert_eq!(r.categories["x"].videos, 1);
    }

    #[test]
    fn categories_and_overall_are_unweighted_means() {
        let videos = vec![
            score("a", "arm", 80.0, 80.0),
            score("b", "arm", 60.0, 60.0),
            score("c", "arm", 70.0, 70.0),
            score("d", "hand", 60.0, 60.0),
            score("e", "hand", 60.0, 60.0),
        ];
        let r = aggregate(SettingKind::OneClick, TargetClass::Gripper, videos);
        assert_eq!(r.categories["arm"].jf, 70.0);
        assert_eq!(r.categories["hand"].jf, 60.0);
        assert_eq!(r.overall.jf, 66.0);
        assert_eq!(r.overall.videos, 5);
    }

    #[test]
    fn report_files() {
        let r = aggregate(
            SettingKind::ThreeClicks,
            TargetClass::Arm,
            vec![score("v1", "c", 50.0, 25.0)],
        );
        let csv = r.to_csv();
        assert_eq!(
            csv,
            "setting,target,category,video,J,F,JF,rounds\n3C,arm,c,v1,50.0000,25.0000,37.5000,0\n"
        );
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        assert!(dir.path().join("3c_arm.csv").is_file());
        assert!(dir.path().join("3c_arm.json").is_file());
    }
}
