//! Temporal association: complex cells pool over temporally adjacent frames.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::hwcore::{signature, HwModule, PoolingDescriptor, Provenance, Signature, TemplateBook};
use crate::imagecore::Image;

/// Where a frame's pixels live.
#[derive(Clone, Debug)]
pub enum FrameSource {
    Memory(Arc<Image>),
    File(PathBuf),
}

impl FrameSource {
    pub fn load(&self) -> Result<Image> {
        match self {
            FrameSource::Memory(img) => Ok((**img).clone()),
            FrameSource::File(path) => Image::load(path),
        }
    }
}

/// Frames of one video at a constant rate, indices consecutive.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    video_id: String,
    fps: f64,
    first_index: usize,
    frames: Vec<FrameSource>,
}

impl FrameSequence {
    /// `frames` are `(index, source)` pairs; indices must be consecutive.
    pub fn new(
        video_id: impl Into<String>,
        fps: f64,
        frames: Vec<(usize, FrameSource)>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("video {video_id}: fps must be positive")));
        }
        let first_index = frames.first().map(|f| f.0).unwrap_or(0);
        for (k, (idx, _)) in frames.iter().enumerate() {
            if *idx != first_index + k {
                return Err(Error::invalid(format!(
                    "video {video_id}: frame indices must be consecutive, found {idx} at position {k}"
                )));
            }
        }
        Ok(Self {
            video_id,
            fps,
            first_index,
            frames: frames.into_iter().map(|f| f.1).collect(),
        })
    }

    pub fn from_images(video_id: impl Into<String>, fps: f64, images: Vec<Image>) -> Result<Self> {
        let frames = images
            .into_iter()
            .enumerate()
            .map(|(i, img)| (i, FrameSource::Memory(Arc::new(img))))
            .collect();
        Self::new(video_id, fps, frames)
    }

    pub fn from_paths(video_id: impl Into<String>, fps: f64, paths: Vec<PathBuf>) -> Result<Self> {
        let frames = paths
            .into_iter()
            .enumerate()
            .map(|(i, p)| (i, FrameSource::File(p)))
            .collect();
        Self::new(video_id, fps, frames)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_index(&self) -> usize {
        self.first_index
    }

    /// Frame with index `index` (not position).
    pub fn frame(&self, index: usize) -> Result<Image> {
        self.source(index)?.load()
    }

    pub fn source(&self, index: usize) -> Result<&FrameSource> {
        index
            .checked_sub(self.first_index)
            .and_then(|p| self.frames.get(p))
            .ok_or_else(|| {
                Error::invalid(format!("video {} has no frame {index}", self.video_id))
            })
    }

    fn window_frames(&self, window_seconds: f64) -> Result<usize> {
        if !(window_seconds.is_finite() && window_seconds >= 0.0) {
            return Err(Error::invalid("window length must be a non-negative number of seconds"));
        }
        if window_seconds == 0.0 {
            return Ok(1);
        }
        let w = (window_seconds * self.fps).round() as usize;
        if w == 0 {
            return Err(Error::invalid(format!(
                "{window_seconds} s at {} fps is shorter than one frame",
                self.fps
            )));
        }
        Ok(w)
    }
}

/// One slot of a complex cell's pooling domain.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameSlot {
    pub video_id: String,
    pub frame: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    EvenNonoverlap,
    FixedM,
}

/// Assignment of one video's frames to complex cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexCellPlan {
    pub video_id: String,
    pub placement: Placement,
    pub window_seconds: f64,
    pub m: Option<usize>,
    pub cells: Vec<Vec<FrameSlot>>,
}

impl ComplexCellPlan {
    pub fn slot_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }
}

fn slots(seq: &FrameSequence, range: std::ops::Range<usize>) -> Vec<FrameSlot> {
    range
        .map(|p| FrameSlot {
            video_id: seq.video_id.clone(),
            frame: seq.first_index + p,
        })
        .collect()
}

/// Consecutive disjoint blocks of `round(window_seconds * fps)` frames after
/// truncating to `truncate_seconds`; the remainder is dropped. A zero window
/// means one cell per frame.
pub fn plan_even_nonoverlap(
    seq: &FrameSequence,
    window_seconds: f64,
    truncate_seconds: Option<f64>,
) -> Result<ComplexCellPlan> {
    let w = seq.window_frames(window_seconds)?;
    let mut n = seq.len();
    if let Some(t) = truncate_seconds {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::invalid("truncation must be a non-negative number of seconds"));
        }
        n = n.min((t * seq.fps).round() as usize);
    }
    if n == 0 {
        return Err(Error::invalid(format!(
            "video {} has no frames after truncation",
            seq.video_id
        )));
    }
    let cells = (0..n / w).map(|c| slots(seq, c * w..(c + 1) * w)).collect();
    Ok(ComplexCellPlan {
        video_id: seq.video_id.clone(),
        placement: Placement::EvenNonoverlap,
        window_seconds,
        m: None,
        cells,
    })
}

/// Exactly `m` cells of `w` consecutive frames with starts spread evenly:
/// `start_j = round(j (F - w) / (m - 1))`. Short videos give `m` copies of
/// the whole video.
pub fn plan_fixed_m(seq: &FrameSequence, window_seconds: f64, m: usize) -> Result<ComplexCellPlan> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    let w = seq.window_frames(window_seconds)?;
    let f = seq.len();
    if f == 0 {
        return Err(Error::invalid(format!("video {} is empty", seq.video_id)));
    }
    let cells = (0..m)
        .map(|j| {
            if f <= w {
                return slots(seq, 0..f);
            }
            let start = if m == 1 {
                0
            } else {
                (j as f64 * (f - w) as f64 / (m - 1) as f64).round() as usize
            };
            slots(seq, start..start + w)
        })
        .collect();
    Ok(ComplexCellPlan {
        video_id: seq.video_id.clone(),
        placement: Placement::FixedM,
        window_seconds,
        m: Some(m),
        cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrambleScope {
    /// Slots of all plans are pooled and permuted together.
    Global,
    /// Each plan's slots are permuted among its own cells.
    PerVideo,
}

/// Re-deals the slots of `plans` through `permutation` (one index per slot,
/// in plan order then cell order) into the same cell shapes.
pub fn scramble_with_permutation(
    plans: &[ComplexCellPlan],
    permutation: &[usize],
) -> Result<Vec<ComplexCellPlan>> {
    let all: Vec<&FrameSlot> = plans.iter().flat_map(|p| p.cells.iter().flatten()).collect();
    check_dims(all.len(), permutation.len())?;
    let mut seen = vec![false; all.len()];
    for &i in permutation {
        if i >= all.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid("scramble order is not a permutation"));
        }
    }
    let mut source = permutation.iter().map(|&i| all[i].clone());
    Ok(plans
        .iter()
        .map(|p| ComplexCellPlan {
            cells: p
                .cells
                .iter()
                .map(|c| source.by_ref().take(c.len()).collect())
                .collect(),
            ..p.clone()
        })
        .collect())
}

/// Randomly permutes frame slots across cells, preserving cell count and
/// sizes but destroying temporal contiguity.
pub fn scramble_assignment<R: Rng>(
    plans: &[ComplexCellPlan],
    scope: ScrambleScope,
    rng: &mut R,
) -> Result<Vec<ComplexCellPlan>> {
    if plans.is_empty() {
        return Err(Error::invalid("nothing to scramble"));
    }
    let mut perm = Vec::new();
    match scope {
        ScrambleScope::Global => {
            let n: usize = plans.iter().map(ComplexCellPlan::slot_count).sum();
            perm.extend(0..n);
            perm.shuffle(rng);
        }
        ScrambleScope::PerVideo => {
            let mut offset = 0;
            for p in plans {
                let n = p.slot_count();
                let mut local: Vec<usize> = (offset..offset + n).collect();
                local.shuffle(rng);
                perm.extend(local);
                offset += n;
            }
        }
    }
    scramble_with_permutation(plans, &perm)
}

/// Anything that maps an image to a layer-2 vector.
pub trait Layer2Encoder: Sync {
    fn encode(&self, img: &Image) -> Result<Vec<f32>>;
}

/// Layer 2 replaced by raw grayscale pixels.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelEncoder;

impl Layer2Encoder for PixelEncoder {
    fn encode(&self, img: &Image) -> Result<Vec<f32>> {
        Ok(img.to_grayscale().into_data())
    }
}

/// Grayscale pixels minus their mean, so cosines become correlations.
#[derive(Clone, Copy, Debug, Default)]
pub struct CenteredPixelEncoder;

impl Layer2Encoder for CenteredPixelEncoder {
    fn encode(&self, img: &Image) -> Result<Vec<f32>> {
        let mut v = img.to_grayscale().into_data();
        let mean = v.iter().map(|x| *x as f64).sum::<f64>() / v.len().max(1) as f64;
        v.iter_mut().for_each(|x| *x = (*x as f64 - mean) as f32);
        Ok(v)
    }
}

/// Layer-2 vectors of video frames keyed by slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameEncodings {
    map: BTreeMap<FrameSlot, Vec<f32>>,
}

impl FrameEncodings {
    pub fn get(&self, slot: &FrameSlot) -> Result<&[f32]> {
        self.map.get(slot).map(Vec::as_slice).ok_or_else(|| {
            Error::invalid(format!(
                "frame {} of video {} was not encoded",
                slot.frame, slot.video_id
            ))
        })
    }

    pub fn insert(&mut self, slot: FrameSlot, encoding: Vec<f32>) {
        self.map.insert(slot, encoding);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FrameSlot, &Vec<f32>)> {
        self.map.iter()
    }
}

/// Encodes every frame referenced by `plans` (each frame once), in parallel.
pub fn encode_frames(
    videos: &[FrameSequence],
    plans: &[ComplexCellPlan],
    encoder: &dyn Layer2Encoder,
) -> Result<FrameEncodings> {
    let by_id: BTreeMap<&str, &FrameSequence> =
        videos.iter().map(|v| (v.video_id(), v)).collect();
    let needed: BTreeSet<&FrameSlot> = plans.iter().flat_map(|p| p.cells.iter().flatten()).collect();
    let needed: Vec<&FrameSlot> = needed.into_iter().collect();
    let encoded = needed
        .par_iter()
        .map(|slot| {
            let seq = by_id.get(slot.video_id.as_str()).ok_or_else(|| {
                Error::invalid(format!("plan references unknown video {}", slot.video_id))
            })?;
            encoder.encode(&seq.frame(slot.frame)?)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = encoded.first() {
        for e in &encoded {
            check_dims(first.len(), e.len())?;
        }
    }
    Ok(FrameEncodings {
        map: needed.into_iter().cloned().zip(encoded).collect(),
    })
}

/// Third-layer complex cells: one template book of stored layer-2 frame
/// encodings per cell, plus the pooling function.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer3Model {
    cells: Vec<TemplateBook>,
    pooling: PoolingDescriptor,
}

impl Layer3Model {
    pub fn new(cells: Vec<TemplateBook>, pooling: PoolingDescriptor) -> Result<Self> {
        pooling.validate()?;
        let dim = cells
            .first()
            .map(TemplateBook::dim)
            .ok_or_else(|| Error::invalid("layer-3 model has no cells"))?;
        for c in &cells {
            check_dims(dim, c.dim())?;
        }
        Ok(Self { cells, pooling })
    }

    /// Builds cells from already-encoded frames. Cells are ordered as the
    /// plans list them.
    pub fn from_encodings(
        encodings: &FrameEncodings,
        plans: &[ComplexCellPlan],
        pooling: PoolingDescriptor,
    ) -> Result<Self> {
        let mut cells = Vec::new();
        for cell in plans.iter().flat_map(|p| &p.cells) {
            if cell.is_empty() {
                return Err(Error::invalid("complex cell with an empty pooling domain"));
            }
            let templates = cell
                .iter()
                .map(|s| encodings.get(s).map(<[f32]>::to_vec))
                .collect::<Result<Vec<_>>>()?;
            let provenance = cell
                .iter()
                .map(|s| Provenance::Frame {
                    video_id: s.video_id.clone(),
                    frame_index: s.frame,
                })
                .collect();
            cells.push(TemplateBook::new(cells.len(), templates, provenance)?);
        }
        Self::new(cells, pooling)
    }

    pub fn cells(&self) -> &[TemplateBook] {
        &self.cells
    }

    pub fn pooling(&self) -> PoolingDescriptor {
        self.pooling
    }

    pub fn with_pooling(&self, pooling: PoolingDescriptor) -> Result<Self> {
        Self::new(self.cells.clone(), pooling)
    }

    pub fn dim(&self) -> usize {
        self.cells[0].dim()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Encodes every planned frame through `encoder` and stores the results as
/// layer-3 templates.
pub fn learn_layer3(
    videos: &[FrameSequence],
    plans: &[ComplexCellPlan],
    encoder: &dyn Layer2Encoder,
    pooling: PoolingDescriptor,
) -> Result<Layer3Model> {
    let enc = encode_frames(videos, plans, encoder)?;
    Layer3Model::from_encodings(&enc, plans, pooling)
}

/// Per cell: cosines of `l2vec` with the stored templates, pooled.
pub fn encode_layer3(l2vec: &[f32], model: &Layer3Model) -> Result<Signature> {
    check_dims(model.dim(), l2vec.len())?;
    let modules: Vec<HwModule> = model
        .cells
        .iter()
        .map(|b| HwModule {
            book: b.clone(),
            pooling: model.pooling,
        })
        .collect();
    signature(l2vec, &modules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn video(id: &str, n: usize, fps: f64) -> FrameSequence {
        let frames = (0..n)
            .map(|i| Image::from_fn(3, 2, |x, y| ((x + 2 * y + i) % 7) as f32 / 7.0 + 0.01).unwrap())
            .collect();
        FrameSequence::from_images(id, fps, frames).unwrap()
    }

    fn frames_of(plan: &ComplexCellPlan) -> Vec<Vec<usize>> {
        plan.cells
            .iter()
            .map(|c| c.iter().map(|s| s.frame).collect())
            .collect()
    }

    #[test]
    fn sequence_validation() {
        let img = Arc::new(Image::constant(2, 2, 0.5).unwrap());
        let gap = vec![
            (0, FrameSource::Memory(img.clone())),
            (2, FrameSource::Memory(img.clone())),
        ];
        assert!(FrameSequence::new("a", 1.0, gap).is_err());
        assert!(FrameSequence::new("a", 0.0, vec![]).is_err());
        let s = FrameSequence::new("a", 1.0, vec![(5, FrameSource::Memory(img))]).unwrap();
        assert!(s.frame(5).is_ok() && s.frame(4).is_err());
    }

    #[test]
    fn even_nonoverlap_examples() {
        let p = plan_even_nonoverlap(&video("a", 60, 1.0), 10.0, None).unwrap();
        assert_eq!(p.cells.len(), 6);
        assert!(p.cells.iter().all(|c| c.len() == 10));

        let p = plan_even_nonoverlap(&video("a", 7, 1.0), 2.0, None).unwrap();
        assert_eq!(frames_of(&p), vec![vec![0, 1], vec![2, 3], vec![4, 5]]);

        let p = plan_even_nonoverlap(&video("a", 5, 1.0), 0.0, None).unwrap();
        assert_eq!(p.cells.len(), 5);

        let p = plan_even_nonoverlap(&video("a", 90, 1.0), 60.0, Some(60.0)).unwrap();
        assert_eq!(frames_of(&p), vec![(0..60).collect::<Vec<_>>()]);
        assert!(plan_even_nonoverlap(&video("a", 5, 1.0), 1.0, Some(0.0)).is_err());
        assert!(plan_even_nonoverlap(&video("a", 5, 1.0), 0.2, None).is_err());
    }

    #[test]
    fn fixed_m_examples() {
        let p = plan_fixed_m(&video("a", 10, 1.0), 4.0, 3).unwrap();
        assert_eq!(
            frames_of(&p),
            vec![vec![0, 1, 2, 3], vec![3, 4, 5, 6], vec![6, 7, 8, 9]]
        );
        let p = plan_fixed_m(&video("a", 3, 1.0), 5.0, 2).unwrap();
        assert_eq!(frames_of(&p), vec![vec![0, 1, 2], vec![0, 1, 2]]);
        let p = plan_fixed_m(&video("a", 10, 1.0), 4.0, 1).unwrap();
        assert_eq!(frames_of(&p), vec![vec![0, 1, 2, 3]]);
        assert!(plan_fixed_m(&video("a", 10, 1.0), 4.0, 0).is_err());
    }

    #[test]
    fn scramble_preserves_shapes() {
        let plans: Vec<_> = (0..3)
            .map(|v| plan_even_nonoverlap(&video(&v.to_string(), 20, 1.0), 5.0, None).unwrap())
            .collect();
        let identity: Vec<usize> = (0..60).collect();
        assert_eq!(scramble_with_permutation(&plans, &identity).unwrap(), plans);
        for seed in 0..20 {
            for scope in [ScrambleScope::Global, ScrambleScope::PerVideo] {
                let s = scramble_assignment(&plans, scope, &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap();
                let mut a: Vec<_> = plans.iter().flat_map(|p| p.cells.iter().flatten()).collect();
                let mut b: Vec<_> = s.iter().flat_map(|p| p.cells.iter().flatten()).collect();
                a.sort();
                b.sort();
                assert_eq!(a, b);
                for (p, q) in plans.iter().zip(&s) {
                    assert_eq!(p.cell_sizes(), q.cell_sizes());
                    if scope == ScrambleScope::PerVideo {
                        assert!(q.cells.iter().flatten().all(|x| x.video_id == p.video_id));
                    }
                }
            }
        }
        assert!(scramble_with_permutation(&plans, &[0; 60]).is_err());
    }

    #[test]
    fn scramble_single_video_fraction_matches_expectation() {
        // V videos of F frames, cells of s slots: a cell is single-video with
        // probability V C(F,s) / C(VF,s).
        let (v, f, s) = (3usize, 6usize, 2usize);
        let plans: Vec<_> = (0..v)
            .map(|i| plan_even_nonoverlap(&video(&i.to_string(), f, 1.0), s as f64, None).unwrap())
            .collect();
        let choose = |n: usize, k: usize| -> f64 {
            (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
        };
        let expected = v as f64 * choose(f, s) / choose(v * f, s);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trials = 10_000;
        let mut hits = 0usize;
        let mut total = 0usize;
        for _ in 0..trials {
            let sc = scramble_assignment(&plans, ScrambleScope::Global, &mut rng).unwrap();
            for cell in sc.iter().flat_map(|p| &p.cells) {
                total += 1;
                if cell.iter().all(|x| x.video_id == cell[0].video_id) {
                    hits += 1;
                }
            }
        }
        let frac = hits as f64 / total as f64;
        assert!((frac - expected).abs() < 0.01, "{frac} vs {expected}");
    }

    #[test]
    fn layer3_examples() {
        let seq = video("a", 4, 1.0);
        let plan = plan_even_nonoverlap(&seq, 2.0, None).unwrap();
        let model = learn_layer3(
            std::slice::from_ref(&seq),
            std::slice::from_ref(&plan),
            &PixelEncoder,
            PoolingDescriptor::Mean,
        )
        .unwrap();
        assert_eq!(model.len(), 2);
        assert!(model.cells().iter().all(|c| c.len() == 2));

        let single = plan_even_nonoverlap(&seq, 0.0, None).unwrap();
        let model = learn_layer3(
            std::slice::from_ref(&seq),
            std::slice::from_ref(&single),
            &PixelEncoder,
            PoolingDescriptor::Mean,
        )
        .unwrap();
        assert_eq!(model.len(), 4);
        let x = PixelEncoder.encode(&seq.frame(2).unwrap()).unwrap();
        let sig = encode_layer3(&x, &model).unwrap();
        assert!((sig.0[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer3_mean_of_symmetric_cosines() {
        let book = TemplateBook::new(
            0,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![
                Provenance::Other { label: "a".into() },
                Provenance::Other { label: "b".into() },
            ],
        )
        .unwrap();
        let mean = Layer3Model::new(vec![book], PoolingDescriptor::Mean).unwrap();
        let v = encode_layer3(&[1.0, 1.0], &mean).unwrap();
        assert!((v.0[0] - 0.70711).abs() < 1e-5);
        let max = mean.with_pooling(PoolingDescriptor::Max).unwrap();
        assert!(encode_layer3(&[0.3, 0.9], &max).unwrap().0[0] >= encode_layer3(&[0.3, 0.9], &mean).unwrap().0[0]);
        assert!(encode_layer3(&[1.0], &mean).is_err());
    }

    #[test]
    fn longer_windows_never_lengthen_signature() {
        let seq = video("a", 30, 2.0);
        let mut last = usize::MAX;
        for w in [0.0, 0.5, 1.0, 2.5, 5.0, 15.0] {
            let n = plan_even_nonoverlap(&seq, w, None).unwrap().cells.len();
            assert!(n <= last);
            last = n;
        }
    }
}
