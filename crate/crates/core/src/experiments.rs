//! Experiment runners over synthetic datasets: clutter vs uniform
//! backgrounds, pooling-range sweep, scrambled-frame control and the
//! gating two-population test.
//!
//! Layer-3 encodings of many test items against many plans share one
//! [`ResponseTable`] of item-vs-frame cosines, so a sweep costs one pass of
//! dot products plus cheap pooling per plan. Signatures from the table are
//! bit-identical to [`encode_layer3`](crate::temporal::encode_layer3).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::eval::{fit_threshold, gate_score, pair_score, roc_auc, verify, PairSet, VerifyReport};
use crate::hwcore::{cosine_with_norms, pool, PoolingDescriptor, Signature};
use crate::linalg::{dot, norm_sq};
use crate::synth::{derive_seed, gen_dataset, ClutterSpec, SynthConfig, SynthDataset};
use crate::imagecore::Image;
use crate::temporal::{
    encode_frames, plan_even_nonoverlap, scramble_assignment, ComplexCellPlan, FrameEncodings,
    FrameSequence, FrameSlot, Layer2Encoder, ScrambleScope,
};

/// Cosines of every item against every encoded frame.
#[derive(Clone, Debug)]
pub struct ResponseTable {
    columns: BTreeMap<FrameSlot, usize>,
    rows: Vec<Vec<f64>>,
}

impl ResponseTable {
    pub fn build(items: &[Vec<f32>], frames: &FrameEncodings) -> Result<Self> {
        let slots: Vec<(&FrameSlot, &Vec<f32>)> = frames.iter().collect();
        let dim = slots
            .first()
            .map(|s| s.1.len())
            .ok_or_else(|| Error::invalid("no encoded frames"))?;
        for it in items {
            check_dims(dim, it.len())?;
        }
        let frame_norms: Vec<f64> = slots.iter().map(|(_, v)| norm_sq(v).sqrt()).collect();
        let rows = items
            .par_iter()
            .map(|x| {
                let nx = norm_sq(x).sqrt();
                slots
                    .iter()
                    .zip(&frame_norms)
                    .map(|((_, t), nt)| cosine_with_norms(dot(x, t), nx, *nt))
                    .collect()
            })
            .collect();
        Ok(Self {
            columns: slots.iter().enumerate().map(|(i, (s, _))| ((*s).clone(), i)).collect(),
            rows,
        })
    }

    pub fn items(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.rows[item]
    }

    /// Layer-3 signature of every item under `plans`.
    pub fn signatures(
        &self,
        plans: &[ComplexCellPlan],
        pooling: PoolingDescriptor,
    ) -> Result<Vec<Signature>> {
        pooling.validate()?;
        let cells: Vec<Vec<usize>> = plans
            .iter()
            .flat_map(|p| &p.cells)
            .map(|c| {
                if c.is_empty() {
                    return Err(Error::invalid("complex cell with an empty pooling domain"));
                }
                c.iter()
                    .map(|s| {
                        self.columns.get(s).copied().ok_or_else(|| {
                            Error::invalid(format!(
                                "frame {} of video {} is not in the table",
                                s.frame, s.video_id
                            ))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        self.rows
            .par_iter()
            .map(|row| {
                let mut buf = Vec::new();
                cells
                    .iter()
                    .map(|c| {
                        buf.clear();
                        buf.extend(c.iter().map(|&i| row[i]));
                        pool(&buf, pooling)
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Signature)
            })
            .collect()
    }
}

/// Threshold fitted on the training pairs, applied to the test pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub train_accuracy: f64,
    pub report: VerifyReport,
}

impl PairOutcome {
    pub fn accuracy(&self) -> f64 {
        self.report.accuracy
    }
}

/// Scores pairs from signatures looked up by item name.
pub fn score_pairs(pairs: &PairSet, sigs: &BTreeMap<String, Signature>) -> Result<Vec<f64>> {
    let get = |name: &str| {
        sigs.get(name)
            .ok_or_else(|| Error::invalid(format!("no signature for item {name}")))
    };
    pairs
        .pairs
        .iter()
        .map(|p| pair_score(get(&p.item_a)?, get(&p.item_b)?))
        .collect()
}

/// Fits on `train`, evaluates on `test`. `folds` splits the test pairs into
/// that many contiguous folds for mean/sd reporting.
pub fn evaluate_pairs(
    train: &PairSet,
    test: &PairSet,
    sigs: &BTreeMap<String, Signature>,
    folds: Option<usize>,
) -> Result<PairOutcome> {
    let (model, train_accuracy) = fit_threshold(&score_pairs(train, sigs)?, &train.labels())?;
    let scores = score_pairs(test, sigs)?;
    let fold_ids: Option<Vec<usize>> = match folds {
        Some(0) => return Err(Error::invalid("fold count must be positive")),
        Some(k) => Some((0..scores.len()).map(|i| i * k / scores.len()).collect()),
        None => None,
    };
    let report = verify(&scores, &test.labels(), &model, fold_ids.as_deref())?;
    Ok(PairOutcome {
        train_accuracy,
        report,
    })
}

fn named(ds: &SynthDataset, sigs: Vec<Signature>) -> BTreeMap<String, Signature> {
    ds.test_items.iter().map(|t| t.name.clone()).zip(sigs).collect()
}

/// Encoded training videos and test items with their pairs, ready for plan
/// sweeps.
pub struct TemporalTrial {
    pub videos: Vec<FrameSequence>,
    pub item_names: Vec<String>,
    pub train_pairs: PairSet,
    pub test_pairs: PairSet,
    pub base_plans: Vec<ComplexCellPlan>,
    pub table: ResponseTable,
}

impl TemporalTrial {
    /// Encodes the first `truncate_seconds` of every video and every item.
    pub fn prepare(
        videos: Vec<FrameSequence>,
        items: &[(String, Image)],
        train_pairs: PairSet,
        test_pairs: PairSet,
        encoder: &dyn Layer2Encoder,
        truncate_seconds: Option<f64>,
    ) -> Result<Self> {
        let base_plans = videos
            .iter()
            .map(|v| plan_even_nonoverlap(v, 0.0, truncate_seconds))
            .collect::<Result<Vec<_>>>()?;
        let frames = encode_frames(&videos, &base_plans, encoder)?;
        let encoded = items
            .par_iter()
            .map(|(_, img)| encoder.encode(img))
            .collect::<Result<Vec<_>>>()?;
        let table = ResponseTable::build(&encoded, &frames)?;
        Ok(Self {
            videos,
            item_names: items.iter().map(|i| i.0.clone()).collect(),
            train_pairs,
            test_pairs,
            base_plans,
            table,
        })
    }

    pub fn from_dataset(
        ds: SynthDataset,
        encoder: &dyn Layer2Encoder,
        truncate_seconds: Option<f64>,
    ) -> Result<Self> {
        let items: Vec<(String, Image)> =
            ds.test_items.into_iter().map(|t| (t.name, t.image)).collect();
        Self::prepare(ds.train_videos, &items, ds.train_pairs, ds.test_pairs, encoder, truncate_seconds)
    }

    /// Non-overlapping windows of `window_seconds` over every video.
    pub fn plans(&self, window_seconds: f64, truncate_seconds: Option<f64>) -> Result<Vec<ComplexCellPlan>> {
        self.videos
            .iter()
            .map(|v| plan_even_nonoverlap(v, window_seconds, truncate_seconds))
            .collect()
    }

    pub fn evaluate(&self, plans: &[ComplexCellPlan], pooling: PoolingDescriptor) -> Result<PairOutcome> {
        let sigs = self.table.signatures(plans, pooling)?;
        let named = self.item_names.iter().cloned().zip(sigs).collect();
        evaluate_pairs(&self.train_pairs, &self.test_pairs, &named, None)
    }
}

/// Accuracy of the raw encoder output used directly as the signature.
pub fn baseline_accuracy(ds: &SynthDataset, encoder: &dyn Layer2Encoder) -> Result<PairOutcome> {
    let sigs = ds
        .test_items
        .par_iter()
        .map(|t| {
            let v = encoder.encode(&t.image)?;
            Ok(Signature(v.into_iter().map(f64::from).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(&ds.train_pairs, &ds.test_pairs, &named(ds, sigs), None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterTrial {
    pub seed: u64,
    pub clutter: bool,
    pub baseline: f64,
    pub pooled: f64,
}

/// One template book per training identity holding its whole video, MAX
/// pooled; compared against the unpooled encoder output.
pub fn clutter_trial(cfg: &SynthConfig, encoder: &dyn Layer2Encoder) -> Result<ClutterTrial> {
    let ds = gen_dataset(cfg)?;
    let baseline = baseline_accuracy(&ds, encoder)?.accuracy();
    let trial = TemporalTrial::from_dataset(ds, encoder, None)?;
    let plans = trial
        .videos
        .iter()
        .map(|v| plan_even_nonoverlap(v, v.len() as f64 / v.fps(), None))
        .collect::<Result<Vec<_>>>()?;
    let pooled = trial.evaluate(&plans, PoolingDescriptor::Max)?.accuracy();
    Ok(ClutterTrial {
        seed: cfg.seed,
        clutter: matches!(cfg.scene.clutter, ClutterSpec::Clutter { .. }),
        baseline,
        pooled,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// 0 means no pooling (one cell per frame).
    pub window_seconds: f64,
    pub cells: usize,
    pub accuracy: f64,
}

/// Accuracy for each pooling window over the first `truncate_seconds` of
/// every video.
pub fn pooling_sweep(
    trial: &TemporalTrial,
    windows: &[f64],
    truncate_seconds: Option<f64>,
    pooling: PoolingDescriptor,
) -> Result<Vec<SweepRow>> {
    windows
        .iter()
        .map(|&w| {
            let plans = trial.plans(w, truncate_seconds)?;
            let cells = plans.iter().map(|p| p.cells.len()).sum();
            Ok(SweepRow {
                window_seconds: w,
                cells,
                accuracy: trial.evaluate(&plans, pooling)?.accuracy(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrambleRow {
    pub no_pooling: f64,
    pub pooling: f64,
    pub scrambled: f64,
}

/// Intact windows vs the same cell shapes filled with randomly reassigned
/// frames, vs no pooling.
pub fn scramble_control(
    trial: &TemporalTrial,
    window_seconds: f64,
    truncate_seconds: Option<f64>,
    pooling: PoolingDescriptor,
    scope: ScrambleScope,
    scramble_seed: u64,
) -> Result<ScrambleRow> {
    let none = trial.plans(0.0, truncate_seconds)?;
    let intact = trial.plans(window_seconds, truncate_seconds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scramble_seed);
    let scrambled = scramble_assignment(&intact, scope, &mut rng)?;
    Ok(ScrambleRow {
        no_pooling: trial.evaluate(&none, pooling)?.accuracy(),
        pooling: trial.evaluate(&intact, pooling)?.accuracy(),
        scrambled: trial.evaluate(&scrambled, pooling)?.accuracy(),
    })
}

/// Gate scores of frames showing a known class (positives) against frames of
/// background only (negatives).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateExperiment {
    pub positive: Vec<bool>,
    /// `scores[i][j]` is the gate score of frame `j` at `ps[i]`.
    pub ps: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
    pub aucs: Vec<f64>,
}

/// Layer-2 responses are cosines against every training-video frame; each
/// test frame either shows a held-out identity over clutter or clutter alone.
pub fn gate_experiment(
    cfg: &SynthConfig,
    encoder: &dyn Layer2Encoder,
    per_class: usize,
    ps: &[f64],
) -> Result<GateExperiment> {
    if per_class == 0 || ps.is_empty() {
        return Err(Error::invalid("need frames of both classes and at least one p"));
    }
    let ds = gen_dataset(cfg)?;
    let (w, h) = (cfg.scene.canvas_width, cfg.scene.canvas_height);
    let mut items = Vec::with_capacity(2 * per_class);
    let mut positive = Vec::with_capacity(2 * per_class);
    for (k, t) in ds.test_items.iter().take(per_class).enumerate() {
        items.push(encoder.encode(&t.image)?);
        positive.push(true);
        let bg = cfg.scene.clutter.background(w, h, derive_seed(cfg.seed, 5, k as u64));
        items.push(encoder.encode(&Image::new(w, h, 1, bg)?)?);
        positive.push(false);
    }
    if items.len() < 2 * per_class {
        return Err(Error::invalid(format!(
            "dataset has only {} test images, {per_class} requested",
            ds.test_items.len()
        )));
    }
    let plans = ds
        .train_videos
        .iter()
        .map(|v| plan_even_nonoverlap(v, 0.0, None))
        .collect::<Result<Vec<_>>>()?;
    let frames = encode_frames(&ds.train_videos, &plans, encoder)?;
    let table = ResponseTable::build(&items, &frames)?;
    let l2: Vec<Vec<f32>> = (0..table.items())
        .map(|i| table.row(i).iter().map(|v| *v as f32).collect())
        .collect();
    let mut scores = Vec::with_capacity(ps.len());
    let mut aucs = Vec::with_capacity(ps.len());
    for &p in ps {
        let s = l2.iter().map(|v| gate_score(v, p)).collect::<Result<Vec<_>>>()?;
        aucs.push(roc_auc(&s, &positive)?.1);
        scores.push(s);
    }
    Ok(GateExperiment {
        positive,
        ps: ps.to_vec(),
        scores,
        aucs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{encode_layer3, Layer3Model, PixelEncoder};

    fn tiny(seed: u64) -> SynthConfig {
        let mut c = SynthConfig::pooling_experiment(seed);
        c.n_train_ids = 4;
        c.n_test_ids = 4;
        c.seconds = 20.0;
        c.pairs_per_split = 10;
        c
    }

    #[test]
    fn table_signatures_equal_layer3_encoder() {
        let trial = TemporalTrial::from_dataset(gen_dataset(&tiny(1)).unwrap(), &PixelEncoder, None).unwrap();
        let frames = encode_frames(&trial.videos, &trial.base_plans, &PixelEncoder).unwrap();
        for (w, pooling) in [(0.0, PoolingDescriptor::Mean), (5.0, PoolingDescriptor::Max), (4.0, PoolingDescriptor::Lp { p: 3.0 })] {
            let plans = trial.plans(w, None).unwrap();
            let model = Layer3Model::from_encodings(&frames, &plans, pooling).unwrap();
            let fast = trial.table.signatures(&plans, pooling).unwrap();
            let ds = gen_dataset(&tiny(1)).unwrap();
            for (i, t) in ds.test_items.iter().enumerate().step_by(7) {
                let slow = encode_layer3(&PixelEncoder.encode(&t.image).unwrap(), &model).unwrap();
                assert_eq!(fast[i], slow);
            }
        }
    }

    #[test]
    fn fold_report_and_missing_items() {
        let ds = gen_dataset(&tiny(2)).unwrap();
        let out = baseline_accuracy(&ds, &PixelEncoder).unwrap();
        assert!((0.0..=1.0).contains(&out.accuracy()));
        let sigs: BTreeMap<String, Signature> = BTreeMap::new();
        assert!(score_pairs(&ds.test_pairs, &sigs).is_err());
    }

    #[test]
    fn sweep_has_one_row_per_window_and_is_deterministic() {
        let trial = TemporalTrial::from_dataset(gen_dataset(&tiny(3)).unwrap(), &PixelEncoder, Some(20.0)).unwrap();
        let rows = pooling_sweep(&trial, &[0.0, 2.0, 10.0], Some(20.0), PoolingDescriptor::Mean).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.cells).collect::<Vec<_>>(), vec![80, 40, 8]);
        let again = pooling_sweep(&trial, &[0.0, 2.0, 10.0], Some(20.0), PoolingDescriptor::Mean).unwrap();
        assert_eq!(rows, again);
        let s1 = scramble_control(&trial, 10.0, Some(20.0), PoolingDescriptor::Mean, ScrambleScope::Global, 4).unwrap();
        let s2 = scramble_control(&trial, 10.0, Some(20.0), PoolingDescriptor::Mean, ScrambleScope::Global, 4).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.pooling, rows[2].accuracy);
    }

    #[test]
    fn gate_auc_reproducible() {
        let a = gate_experiment(&tiny(5), &PixelEncoder, 8, &[1.0, 4.0]).unwrap();
        let b = gate_experiment(&tiny(5), &PixelEncoder, 8, &[1.0, 4.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.positive.iter().filter(|p| **p).count(), 8);
        assert!(a.aucs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
