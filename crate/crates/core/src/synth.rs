//! Procedural robot clips: an articulated two-link arm with a two-finger
//! gripper moving over a smooth textured background.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TargetClass;
use crate::dataset::VideoClip;
use crate::error::Result;
use crate::imaging::{BinaryMask, Image};

/// Generation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            frames: 6,
            train_clips: 8,
            test_clips: 2,
            seed: 7,
        }
    }
}

/// Two embodiments that differ in proportions and paint.
const CATEGORIES: [&str; 2] = ["slim", "stout"];

#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: [f64; 2],
    b: [f64; 2],
    r: f64,
}

impl Capsule {
    fn contains(&self, p: [f64; 2]) -> bool {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.a[0]) * d[0] + (p[1] - self.a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        };
        let q = [self.a[0] + t * d[0] - p[0], self.a[1] + t * d[1] - p[1]];
        q[0] * q[0] + q[1] * q[1] <= self.r * self.r
    }
}

/// Per-clip constants of the arm and its motion.
#[derive(Clone, Debug)]
struct Rig {
    base: [f64; 2],
    drift: f64,
    links: [f64; 2],
    radius: f64,
    angle0: [f64; 2],
    swing: [f64; 2],
    phase: [f64; 2],
    speed: f64,
    arm_rgb: [f64; 3],
    grip_rgb: [f64; 3],
}

impl Rig {
    fn random(rng: &mut ChaCha8Rng, stout: bool, h: f64, w: f64) -> Self {
        let scale = h.min(w) / 96.0;
        let (links, radius) = if stout {
            ([26.0 * scale, 20.0 * scale], 10.0 * scale)
        } else {
            ([32.0 * scale, 24.0 * scale], 8.0 * scale)
        };
        let warm = rng.gen_range(0.0..0.15);
        Self {
            base: [rng.gen_range(0.35..0.65) * w, h - 6.0 * scale],
            drift: rng.gen_range(-2.0..2.0) * scale,
            links,
            radius,
            angle0: [
                rng.gen_range(-0.5..0.5) - PI / 2.0,
                rng.gen_range(-0.9..0.9),
            ],
            swing: [rng.gen_range(0.2..0.45), rng.gen_range(0.3..0.6)],
            phase: [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)],
            speed: rng.gen_range(0.35..0.6),
            arm_rgb: if stout {
                [0.85 + warm, 0.35, 0.12]
            } else {
                [0.9, 0.5 + warm, 0.15]
            },
            grip_rgb: [0.95, 0.85, 0.3],
        }
    }

    /// Arm and gripper capsules at time `t`.
    fn pose(&self, t: usize) -> (Vec<Capsule>, Vec<Capsule>) {
        let s = t as f64 * self.speed;
        let base = [self.base[0] + self.drift * t as f64, self.base[1]];
        let a1 = self.angle0[0] + self.swing[0] * (s + self.phase[0]).sin();
        let a2 = a1 + self.angle0[1] + self.swing[1] * (s + self.phase[1]).sin();
        let step = |p: [f64; 2], a: f64, l: f64| [p[0] + l * a.cos(), p[1] + l * a.sin()];
        let elbow = step(base, a1, self.links[0]);
        let wrist = step(elbow, a2, self.links[1]);
        let r = self.radius;
        let pedestal = Capsule {
            a: [base[0] - 2.0 * r, base[1]],
            b: [base[0] + 2.0 * r, base[1]],
            r: r * 1.1,
        };
        let arm = vec![
            pedestal,
            Capsule {
                a: base,
                b: elbow,
                r,
            },
            Capsule {
                a: elbow,
                b: wrist,
                r: r * 0.85,
            },
        ];
        // Palm perpendicular to the last link, fingers parallel to it.
        let open = 0.5 + 0.3 * (s * 1.3).sin();
        let n = [-(a2.sin()), a2.cos()];
        let half = r * (1.2 + open);
        let p0 = [wrist[0] + n[0] * half, wrist[1] + n[1] * half];
        let p1 = [wrist[0] - n[0] * half, wrist[1] - n[1] * half];
        let reach = 2.2 * r;
        let tip = |p: [f64; 2]| step(p, a2, reach);
        let fr = r * 0.55;
        let gripper = vec![
            Capsule {
                a: p0,
                b: p1,
                r: fr,
            },
            Capsule {
                a: p0,
                b: tip(p0),
                r: fr,
            },
            Capsule {
                a: p1,
                b: tip(p1),
                r: fr,
            },
        ];
        (arm, gripper)
    }
}

/// Smooth two-tone background with a few random sinusoidal components.
fn background(rng: &mut ChaCha8Rng) -> impl Fn(usize, usize, usize) -> f64 {
    let waves: Vec<([f64; 2], f64, [f64; 3])> = (0..4)
        .map(|_| {
            let k = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = [
                rng.gen_range(0.0..0.06),
                rng.gen_range(0.04..0.12),
                rng.gen_range(0.04..0.12),
            ];
            (k, phase, amp)
        })
        .collect();
    let tint = [
        rng.gen_range(0.1..0.25),
        rng.gen_range(0.35..0.55),
        rng.gen_range(0.35..0.6),
    ];
    move |c, y, x| {
        let mut v = tint[c];
        for (k, phase, amp) in &waves {
            v += amp[c] * (k[0] * x as f64 + k[1] * y as f64 + phase).sin();
        }
        v.clamp(0.0, 1.0)
    }
}

/// One clip with full per-frame masks for all three classes.
pub fn synth_clip(spec: &SynthSpec, name: &str, category_index: usize, seed: u64) -> VideoClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let stout = category_index % 2 == 1;
    let rig = Rig::random(&mut rng, stout, h as f64, w as f64);
    let bg = background(&mut rng);
    let shimmer: f64 = rng.gen_range(0.0..2.0 * PI);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks: BTreeMap<TargetClass, Vec<Option<BinaryMask>>> = BTreeMap::new();
    for t in 0..spec.frames {
        let (arm, gripper) = rig.pose(t);
        let inside = |caps: &[Capsule], y: usize, x: usize| {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            caps.iter().any(|c| c.contains(p))
        };
        let arm_mask = BinaryMask::from_fn(h, w, |y, x| inside(&arm, y, x));
        let grip_mask =
            BinaryMask::from_fn(h, w, |y, x| !arm_mask.get(y, x) && inside(&gripper, y, x));
        let robot = arm_mask.union(&grip_mask).expect("same shape");
        let light = 0.04 * (t as f64 * 0.7 + shimmer).sin();
        let frame = Image::from_fn(h, w, 3, |c, y, x| {
            let shade = 0.08 * ((x + 2 * y) as f64 * 0.15).sin();
            let v = if grip_mask.get(y, x) {
                rig.grip_rgb[c] + shade
            } else if arm_mask.get(y, x) {
                rig.arm_rgb[c] + shade
            } else {
                bg(c, y, x)
            };
            (v + light).clamp(0.0, 1.0)
        });
        frames.push(frame);
        masks
            .entry(TargetClass::Arm)
            .or_default()
            .push(Some(arm_mask));
        masks
            .entry(TargetClass::Gripper)
            .or_default()
            .push(Some(grip_mask));
        masks
            .entry(TargetClass::Robot)
            .or_default()
            .push(Some(robot));
    }
    VideoClip {
        name: name.to_string(),
        category: CATEGORIES[category_index % CATEGORIES.len()].to_string(),
        frames,
        masks,
    }
}

/// Training clips (first-frame masks only) and test clips (all masks).
pub fn synth_dataset(spec: &SynthSpec) -> (Vec<VideoClip>, Vec<VideoClip>) {
    let clip = |split: &str, i: usize| {
        let seed = spec
            .seed
            .wrapping_mul(1_000_003)
            .wrapping_add(i as u64 + if split == "test" { 10_000 } else { 0 });
        synth_clip(spec, &format!("{split}{i:03}"), i, seed)
    };
    let train = (0..spec.train_clips)
        .map(|i| clip("train", i).first_frame_only())
        .collect();
    let test = (0..spec.test_clips).map(|i| clip("test", i)).collect();
    (train, test)
}

/// Writes [`synth_dataset`] in the standard on-disk layout.
pub fn write_synth_dataset(spec: &SynthSpec, root: &Path) -> Result<()> {
    let (train, test) = synth_dataset(spec);
    for (split, clips) in [("train", train), ("test", test)] {
        for c in clips {
            c.write(&root.join(split).join(&c.category).join(&c.name))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_deterministic_and_well_formed() {
        let spec = SynthSpec::default();
        let a = synth_clip(&spec, "a", 0, 3);
        let b = synth_clip(&spec, "a", 0, 3);
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), spec.frames);
        for i in 0..spec.frames {
            let robot = a.mask(TargetClass::Robot, i).unwrap();
            let arm = a.mask(TargetClass::Arm, i).unwrap();
            let grip = a.mask(TargetClass::Gripper, i).unwrap();
            assert_eq!(robot, &arm.union(grip).unwrap());
            assert!(arm.data().iter().zip(grip.data()).all(|(a, g)| !(a & g)));
            let frac = robot.count() as f64 / (spec.height * spec.width) as f64;
            assert!((0.03..0.4).contains(&frac), "robot covers {frac}");
            assert!(grip.count() > 0);
        }
    }

    #[test]
    fn the_robot_moves() {
        let c = synth_clip(&SynthSpec::default(), "a", 1, 11);
        let m0 = c.mask(TargetClass::Robot, 0).unwrap();
        let m5 = c.mask(TargetClass::Robot, 5).unwrap();
        assert_ne!(m0, m5);
    }

    #[test]
    fn dataset_split_annotation() {
        let (train, test) = synth_dataset(&SynthSpec::default());
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train
            .iter()
            .all(|c| c.mask(TargetClass::Robot, 0).is_some()
                && c.mask(TargetClass::Robot, 1).is_none()));
        assert!(test
            .iter()
            .all(|c| (0..6).all(|i| c.mask(TargetClass::Robot, i).is_some())));
    }
}
