use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use robomask_tensor::Graph;

use robomask::dataset::{frame_file_name, DatasetIndex, VideoEntry};
use robomask::eval::{evaluate, run_setting, EvalSetting, SettingKind};
use robomask::imaging::save_mask;
use robomask::model::Model;
use robomask::synth::{write_synth_dataset, SynthSpec};
use robomask::tracker::{FrameData, Session};
use robomask::training::{
    train, PatchFeatureProvider, PatchStatistics, PrecomputedFeatures, PreparedClip,
};
use robomask::{selfcheck, Config, TargetClass};

#[derive(Parser)]
#[command(
    name = "robomask",
    version,
    about = "Robot video segmentation: training, evaluation and inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the `train` split using first-frame masks only.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Precomputed patch descriptors (one file per clip, named `<video>.rspf`).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Per-step loss log (tab-separated).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the `test` split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "au")]
        setting: SettingKind,
        #[arg(long, default_value = "robot")]
        target: TargetClass,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Segment one video directory automatically and write its masks.
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long, default_value = "robot")]
        target: TargetClass,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and oracle suites.
    Selfcheck,
    /// Write a procedural dataset of articulated robots.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        train_clips: usize,
        #[arg(long, default_value_t = 2)]
        test_clips: usize,
        #[arg(long, default_value_t = 6)]
        frames: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            data,
            out,
            features,
            log,
        } => {
            let cfg = load_config(config.as_deref())?;
            let index = DatasetIndex::scan(&data)?;
            let entries: Vec<&VideoEntry> = index.split("train").collect();
            if entries.is_empty() {
                bail!("no videos under {}/train", data.display());
            }
            let mut prepared = Vec::with_capacity(entries.len());
            for entry in entries {
                let clip = entry.load()?.first_frame_only();
                let provider: Box<dyn PatchFeatureProvider> = match &features {
                    Some(dir) => Box::new(PrecomputedFeatures::load(
                        &dir.join(format!("{}.rspf", clip.name)),
                    )?),
                    None => Box::new(PatchStatistics),
                };
                prepared.push(
                    PreparedClip::new(&clip, &cfg.train_targets, provider.as_ref(), cfg.tau)
                        .with_context(|| format!("preparing `{}`", clip.name))?,
                );
            }
            log::info!(
                "training on {} clips for {} steps",
                prepared.len(),
                cfg.steps
            );
            let mut model = Model::new(cfg)?;
            let mut sink = log
                .as_ref()
                .map(|p| {
                    File::create(p)
                        .with_context(|| format!("creating {}", p.display()))
                        .map(BufWriter::new)
                })
                .transpose()?;
            let reports = train(
                &mut model,
                &prepared,
                sink.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(last) = reports.last() {
                log::info!("final step: {}", last.log_line());
            }
            model.save(&out)?;
            log::info!("wrote {}", out.display());
        }
        Command::Eval {
            config,
            ckpt,
            setting,
            target,
            report,
            data,
            split,
        } => {
            let cfg = load_config(config.as_deref())?;
            let model = Model::load(cfg.clone(), &ckpt)?;
            let index = DatasetIndex::scan(&data)?;
            let clips = index.load_split(&split)?;
            if clips.is_empty() {
                bail!("no videos under {}/{split}", data.display());
            }
            let result = evaluate(&model, &clips, &EvalSetting::new(setting, &cfg), target)?;
            result.write(&report)?;
            println!(
                "{setting} {target}: J {:.2}  F {:.2}  J&F {:.2}  ({} videos)",
                result.overall.j, result.overall.f, result.overall.jf, result.overall.videos
            );
        }
        Command::Infer {
            config,
            ckpt,
            video,
            target,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let model = Model::load(cfg.clone(), &ckpt)?;
            let clip = VideoEntry::from_dir(&video, "", "")?.load()?;
            let frames: Vec<FrameData> = clip
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| FrameData::new(i, f))
                .collect();
            let g = Graph::new();
            let bound = model.params.bind(&g, false);
            let mut session = Session::new(&g, &bound, &model.config, target)?;
            let none = vec![None; frames.len()];
            let run = run_setting(
                &mut session,
                &frames,
                &none,
                &EvalSetting::new(SettingKind::Automatic, &cfg),
            )?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, m) in run.masks.iter().enumerate() {
                save_mask(m, &out.join(frame_file_name(i)))?;
            }
            log::info!("wrote {} masks to {}", run.masks.len(), out.display());
        }
        Command::Selfcheck => {
            let report = selfcheck::run()?;
            print!("{}", report.to_text());
            if !report.all_passed() {
                bail!("self-check failed");
            }
        }
        Command::Synth {
            out,
            seed,
            train_clips,
            test_clips,
            frames,
        } => {
            let spec = SynthSpec {
                seed,
                train_clips,
                test_clips,
                frames,
                ..SynthSpec::default()
            };
            write_synth_dataset(&spec, &out)?;
            log::info!(
                "wrote {} + {} clips to {}",
                train_clips,
                test_clips,
                out.display()
            );
        }
    }
    Ok(())
}
