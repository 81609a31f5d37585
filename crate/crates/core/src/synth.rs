//! Synthetic identities moving over uniform or cluttered backgrounds, with
//! known ground truth for the clutter, pooling-range and scrambling
//! experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Pair, PairLabel, PairSet, Split};
use crate::hwcore::cosine;
use crate::imagecore::{blur_plane, Image};
use crate::temporal::FrameSequence;

/// Mixes a base seed with a stream tag and an index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_IDENTITY: u64 = 1;
const STREAM_TRAIN_BG: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_TEST_BG: u64 = 4;

fn standardized_noise(w: usize, h: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let raw: Vec<f32> = (0..w * h).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let smooth = blur_plane(&raw, w, h, sigma);
    let n = smooth.len() as f64;
    let mean = smooth.iter().map(|v| *v as f64).sum::<f64>() / n;
    let sd = (smooth.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    smooth.iter().map(|v| ((*v as f64 - mean) / sd) as f32).collect()
}

/// One synthetic identity: a smooth blob pattern inside a soft disk.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentitySpec {
    pub id: usize,
    pub size: usize,
    pub pattern: Vec<f32>,
    pub alpha: Vec<f32>,
}

impl IdentitySpec {
    /// Deterministic in `(seed, id, attempt)`.
    fn generate(id: usize, size: usize, seed: u64, attempt: u64) -> Self {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_IDENTITY, ((id as u64) << 16) | attempt));
        let n = standardized_noise(size, size, 1.5, &mut rng);
        let pattern = n
            .iter()
            .map(|v| (1.0 / (1.0 + (-((*v as f64) - 0.3) / 0.15).exp())) as f32)
            .collect();
        let c = (size as f64 - 1.0) / 2.0;
        let alpha = (0..size * size)
            .map(|i| {
                let (x, y) = ((i % size) as f64 - c, (i / size) as f64 - c);
                ((size as f64 / 2.0 - (x * x + y * y).sqrt()) / 1.5).clamp(0.0, 1.0) as f32
            })
            .collect();
        Self {
            id,
            size,
            pattern,
            alpha,
        }
    }

    fn sample(&self, plane: &[f32], u: f64, v: f64) -> f64 {
        // Bilinear with zero outside the pattern.
        let s = self.size as isize;
        let (x0, y0) = (u.floor(), v.floor());
        let (fx, fy) = (u - x0, v - y0);
        let at = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= s || y >= s {
                0.0
            } else {
                plane[(y * s + x) as usize] as f64
            }
        };
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// `count` identities with pairwise pattern cosine below 0.99.
pub fn gen_identities(count: usize, size: usize, seed: u64) -> Result<Vec<IdentitySpec>> {
    if count == 0 || size < 4 {
        return Err(Error::invalid("need at least one identity of size >= 4"));
    }
    let mut out: Vec<IdentitySpec> = Vec::with_capacity(count);
    for id in 0..count {
        let mut accepted = None;
        for attempt in 0..100 {
            let cand = IdentitySpec::generate(id, size, seed, attempt);
            if out.iter().all(|o| cosine(&o.pattern, &cand.pattern) < 0.99) {
                accepted = Some(cand);
                break;
            }
        }
        out.push(accepted.ok_or_else(|| {
            Error::SamplingExhausted(format!("identity {id} collides after 100 attempts"))
        })?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Translate,
    Rotate,
    Scale,
    Mixed,
}

/// How the trajectory parameter `t in [0, 1]` evolves over frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trajectory {
    /// One sweep from 0 to 1 over the whole video.
    Linear,
    /// Back and forth, reaching the far end every `half_period` frames.
    PingPong { half_period: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Horizontal offset from the canvas centre, pixels.
    pub translate: (f64, f64),
    pub rotate_deg: (f64, f64),
    pub scale: (f64, f64),
    pub trajectory: Trajectory,
}

impl TransformSpec {
    /// Translation and rotation swept together.
    pub fn mixed(translate: (f64, f64), rotate_deg: (f64, f64), trajectory: Trajectory) -> Self {
        Self {
            kind: TransformKind::Mixed,
            translate,
            rotate_deg,
            scale: (1.0, 1.0),
            trajectory,
        }
    }

    fn lerp((a, b): (f64, f64), t: f64) -> f64 {
        a + (b - a) * t
    }

    /// `(dx, angle in degrees, scale)` at trajectory parameter `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let use_t = matches!(self.kind, TransformKind::Translate | TransformKind::Mixed);
        let use_r = matches!(self.kind, TransformKind::Rotate | TransformKind::Mixed);
        let use_s = matches!(self.kind, TransformKind::Scale | TransformKind::Mixed);
        (
            if use_t { Self::lerp(self.translate, t) } else { 0.0 },
            if use_r { Self::lerp(self.rotate_deg, t) } else { 0.0 },
            if use_s { Self::lerp(self.scale, t) } else { 1.0 },
        )
    }

    /// Parameter of frame `i` of `n`.
    pub fn frame_param(&self, i: usize, n: usize) -> f64 {
        match self.trajectory {
            Trajectory::Linear => {
                if n <= 1 {
                    0.0
                } else {
                    i as f64 / (n - 1) as f64
                }
            }
            Trajectory::PingPong { half_period } => {
                let hp = half_period.max(1);
                let phase = i % (2 * hp);
                if phase <= hp {
                    phase as f64 / hp as f64
                } else {
                    2.0 - phase as f64 / hp as f64
                }
            }
        }
    }

    /// Errors unless the pattern stays inside a `w x h` canvas everywhere.
    pub fn check_fits(&self, size: usize, w: usize, h: usize) -> Result<()> {
        let smax = self.scale.0.max(self.scale.1);
        if !(self.scale.0 > 0.0 && self.scale.1 > 0.0) {
            return Err(Error::invalid("scale range must be positive"));
        }
        let r = size as f64 / 2.0 * smax;
        let dx = self.translate.0.abs().max(self.translate.1.abs());
        if dx + r > w as f64 / 2.0 || r > h as f64 / 2.0 {
            return Err(Error::invalid(format!(
                "pattern of radius {r:.1} moving {dx:.1} px escapes the {w}x{h} canvas"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ClutterSpec {
    /// Constant background.
    Uniform { value: f32 },
    /// Smoothed-noise texture `clip(0.5 + contrast * z)`. Training videos keep
    /// one texture for all their frames; every test image gets a fresh one.
    Clutter { sigma: f64, contrast: f32 },
}

impl ClutterSpec {
    pub fn uniform() -> Self {
        ClutterSpec::Uniform { value: 0.5 }
    }

    pub fn clutter() -> Self {
        ClutterSpec::Clutter {
            sigma: 2.0,
            contrast: 0.2,
        }
    }

    /// A background canvas drawn with `seed`.
    pub fn background(&self, w: usize, h: usize, seed: u64) -> Vec<f32> {
        match *self {
            ClutterSpec::Uniform { value } => vec![value; w * h],
            ClutterSpec::Clutter { sigma, contrast } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                standardized_noise(w, h, sigma, &mut rng)
                    .into_iter()
                    .map(|z| (0.5 + contrast * z).clamp(0.0, 1.0))
                    .collect()
            }
        }
    }
}

/// Composites `identity` at transform `(dx, angle, scale)` over `bg`.
pub fn render(
    identity: &IdentitySpec,
    (dx, angle_deg, scale): (f64, f64, f64),
    bg: &[f32],
    w: usize,
    h: usize,
) -> Result<Image> {
    if bg.len() != w * h {
        return Err(Error::DimensionMismatch {
            expected: w * h,
            got: bg.len(),
        });
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0 + dx;
    let cy = (h as f64 - 1.0) / 2.0;
    let pc = (identity.size as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (ox, oy) = (x as f64 - cx, y as f64 - cy);
            let u = (c * ox + s * oy) / scale + pc;
            let v = (-s * ox + c * oy) / scale + pc;
            let a = identity.sample(&identity.alpha, u, v);
            let p = identity.sample(&identity.pattern, u, v);
            let b = bg[y * w + x] as f64;
            data.push((a * p + (1.0 - a) * b).clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(w, h, 1, data)
}

/// The identity pasted at the left of a uniform canvas, then shifted
/// cyclically right by `shift` pixels (wrapping around).
pub fn render_cyclic_shift(identity: &IdentitySpec, w: usize, h: usize, shift: usize) -> Result<Image> {
    let s = identity.size;
    if s > w || s > h {
        return Err(Error::invalid("pattern larger than canvas"));
    }
    let mut base = vec![0.5f32; w * h];
    let y0 = (h - s) / 2;
    for y in 0..s {
        for x in 0..s {
            let a = identity.alpha[y * s + x];
            let p = identity.pattern[y * s + x];
            base[(y0 + y) * w + x] = a * p + (1.0 - a) * 0.5;
        }
    }
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            base[y * w + (x + w - shift % w) % w]
        })
        .collect();
    Image::new(w, h, 1, data)
}

/// Rendering parameters shared by videos and test images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub canvas_width: usize,
    pub canvas_height: usize,
    pub transform: TransformSpec,
    pub clutter: ClutterSpec,
}

/// Frames of one identity following the trajectory, `round(fps * seconds)`
/// of them, over one background drawn from `seed`.
pub fn render_video(
    identity: &IdentitySpec,
    scene: &SceneSpec,
    fps: f64,
    seconds: f64,
    seed: u64,
) -> Result<FrameSequence> {
    let (w, h) = (scene.canvas_width, scene.canvas_height);
    scene.transform.check_fits(identity.size, w, h)?;
    if !(fps > 0.0 && seconds > 0.0) {
        return Err(Error::invalid("fps and duration must be positive"));
    }
    let n = (fps * seconds).round() as usize;
    if n == 0 {
        return Err(Error::invalid("video would have no frames"));
    }
    let bg = scene.clutter.background(w, h, seed);
    let frames = (0..n)
        .map(|i| {
            let t = scene.transform.frame_param(i, n);
            render(identity, scene.transform.at(t), &bg, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::from_images(format!("id{:04}", identity.id), fps, frames)
}

/// Every generation parameter of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train_ids: usize,
    pub n_test_ids: usize,
    pub identity_size: usize,
    pub scene: SceneSpec,
    pub fps: f64,
    pub seconds: f64,
    /// Pairs in each of the threshold-fitting and test splits.
    pub pairs_per_split: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// 20 training and 10 held-out identities on a 96x48 canvas, translation
    /// and rotation swept once over a 60-frame video at 1 fps.
    pub fn clutter_experiment(clutter: ClutterSpec, seed: u64) -> Self {
        Self {
            n_train_ids: 20,
            n_test_ids: 10,
            identity_size: 16,
            scene: SceneSpec {
                canvas_width: 96,
                canvas_height: 48,
                transform: TransformSpec::mixed((-30.0, 30.0), (-60.0, 60.0), Trajectory::Linear),
                clutter,
            },
            fps: 1.0,
            seconds: 60.0,
            pairs_per_split: 200,
            seed,
        }
    }

    /// Same scene on a uniform background, with the trajectory going back and
    /// forth every 20 frames so short windows see only part of the
    /// transformation range.
    pub fn pooling_experiment(seed: u64) -> Self {
        let mut c = Self::clutter_experiment(ClutterSpec::uniform(), seed);
        c.scene.transform.trajectory = Trajectory::PingPong { half_period: 20 };
        c.pairs_per_split = 300;
        c
    }
}

/// A test image and its identity.
#[derive(Clone, Debug)]
pub struct TestItem {
    pub name: String,
    pub identity: usize,
    pub image: Image,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub identities: Vec<IdentitySpec>,
    /// One video per training identity, in identity order.
    pub train_videos: Vec<FrameSequence>,
    pub train_ids: Vec<usize>,
    pub test_items: Vec<TestItem>,
    /// Pairs for fitting the decision threshold.
    pub train_pairs: PairSet,
    /// Pairs for measuring accuracy.
    pub test_pairs: PairSet,
}

/// Training videos for the first `n_train_ids` identities and balanced
/// SAME/DIFFERENT pairs over the held-out identities, every test image on a
/// fresh background. With at least four held-out identities the threshold
/// pairs and the test pairs use disjoint halves of them.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.n_train_ids == 0 || cfg.n_test_ids < 2 {
        return Err(Error::invalid("need >= 1 training and >= 2 held-out identities"));
    }
    if cfg.pairs_per_split < 2 {
        return Err(Error::invalid("need at least two pairs per split"));
    }
    let (w, h) = (cfg.scene.canvas_width, cfg.scene.canvas_height);
    cfg.scene.transform.check_fits(cfg.identity_size, w, h)?;
    let identities = gen_identities(cfg.n_train_ids + cfg.n_test_ids, cfg.identity_size, cfg.seed)?;
    let train_ids: Vec<usize> = (0..cfg.n_train_ids).collect();
    let train_videos = train_ids
        .par_iter()
        .map(|&k| {
            render_video(
                &identities[k],
                &cfg.scene,
                cfg.fps,
                cfg.seconds,
                derive_seed(cfg.seed, STREAM_TRAIN_BG, k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let held: Vec<usize> = (cfg.n_train_ids..cfg.n_train_ids + cfg.n_test_ids).collect();
    let (fit_ids, test_ids) = if held.len() >= 4 {
        let half = held.len() / 2;
        (held[..half].to_vec(), held[half..].to_vec())
    } else {
        (held.clone(), held.clone())
    };

    // Draw pair structure sequentially, render images in parallel.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_PAIRS, 0));
    let mut specs: Vec<(usize, f64)> = Vec::new();
    let mut splits: Vec<Vec<Pair>> = Vec::new();
    for group in [&fit_ids, &test_ids] {
        let mut pairs = Vec::with_capacity(cfg.pairs_per_split);
        for p in 0..cfg.pairs_per_split {
            let same = p % 2 == 0;
            let a = group[rng.random_range(0..group.len())];
            let b = if same {
                a
            } else {
                let others: Vec<usize> = group.iter().copied().filter(|i| *i != a).collect();
                others[rng.random_range(0..others.len())]
            };
            let mut names = Vec::with_capacity(2);
            for k in [a, b] {
                let t: f64 = rng.random();
                names.push(format!("test_{:05}", specs.len()));
                specs.push((k, t));
            }
            pairs.push(Pair {
                item_a: names[0].clone(),
                item_b: names[1].clone(),
                label: if same { PairLabel::Same } else { PairLabel::Diff },
            });
        }
        splits.push(pairs);
    }
    let test_items = specs
        .par_iter()
        .enumerate()
        .map(|(i, (k, t))| {
            let bg = cfg
                .scene
                .clutter
                .background(w, h, derive_seed(cfg.seed, STREAM_TEST_BG, i as u64));
            Ok(TestItem {
                name: format!("test_{i:05}"),
                identity: *k,
                image: render(&identities[*k], cfg.scene.transform.at(*t), &bg, w, h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test_pairs = PairSet::new(splits.pop().expect("two splits"), Split::Test)?;
    let train_pairs = PairSet::new(splits.pop().expect("two splits"), Split::Train)?;
    Ok(SynthDataset {
        config: cfg.clone(),
        identities,
        train_videos,
        train_ids,
        test_items,
        train_pairs,
        test_pairs,
    })
}
