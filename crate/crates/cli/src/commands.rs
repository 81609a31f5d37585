use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hwtemporal::bundle::{Layer2Model, ModelBundle, FACE_PYRAMID_RATIOS};
use hwtemporal::dataset::{load_image_list, load_images, write_dataset, ImageEntry, VideoManifest};
use hwtemporal::eval::{
    fit_fusion, fuse, gate_score, pair_feature, roc_auc, svm_predict, svm_train, LinearModel,
    PairSet, Split, SvmConfig,
};
use hwtemporal::experiments::{evaluate_pairs, pooling_sweep, scramble_control, score_pairs, TemporalTrial};
use hwtemporal::features::{fit_low_level, LowLevelConfig, LowLevelKind};
use hwtemporal::hwcore::{build_layer2_bank, fit_template_pca, prepare_patches, PatchConfig, PoolingDescriptor, Signature};
use hwtemporal::imagecore::Image;
use hwtemporal::io::{read_json, write_json};
use hwtemporal::synth::{gen_dataset, ClutterSpec, SynthConfig};
use hwtemporal::temporal::{
    encode_layer3, learn_layer3, plan_even_nonoverlap, plan_fixed_m, scramble_assignment, FrameSequence,
    Layer2Encoder, PixelEncoder, ScrambleScope,
};
use hwtemporal::Error;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tables::{parse_list, read_labels, read_signatures, write_csv, write_signatures};
use crate::Usage;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

// ---------------------------------------------------------------- synth

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Preset {
    Uniform,
    Clutter,
    Pooling,
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub preset: Preset,
    pub config: Option<PathBuf>,
    pub train_ids: Option<usize>,
    pub test_ids: Option<usize>,
    pub pairs: Option<usize>,
    pub seconds: Option<f64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<SynthConfig>(p)?,
        None => match a.preset {
            Preset::Uniform => SynthConfig::clutter_experiment(ClutterSpec::uniform(), a.seed),
            Preset::Clutter => SynthConfig::clutter_experiment(ClutterSpec::clutter(), a.seed),
            Preset::Pooling => SynthConfig::pooling_experiment(a.seed),
        },
    };
    cfg.seed = a.seed;
    if let Some(v) = a.train_ids {
        cfg.n_train_ids = v;
    }
    if let Some(v) = a.test_ids {
        cfg.n_test_ids = v;
    }
    if let Some(v) = a.pairs {
        cfg.pairs_per_split = v;
    }
    if let Some(v) = a.seconds {
        cfg.seconds = v;
    }
    let ds = gen_dataset(&cfg)?;
    write_dataset(&ds, &a.out)?;
    eprintln!(
        "wrote {} videos, {} images, {}+{} pairs to {}",
        ds.train_videos.len(),
        ds.test_items.len(),
        ds.train_pairs.len(),
        ds.test_pairs.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- build-l2

/// Everything needed to build a layer-2 model. Defaults describe the face
/// model; scaled-down runs edit the counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer2BuildConfig {
    pub low_level: LowLevelConfig,
    pub patches: PatchConfig,
    /// Source images cut into template patches.
    pub base_count: usize,
    pub pyramid_ratios: Vec<f64>,
    pub input_height: Option<usize>,
    /// Rank of the template PCA approximation; `None` keeps exact templates.
    pub reduced_k: Option<usize>,
    /// Images handed to the low-level fit (eigen-patch and two-stage kinds).
    pub low_level_images: usize,
}

impl Default for Layer2BuildConfig {
    fn default() -> Self {
        Self {
            low_level: LowLevelConfig::new(LowLevelKind::Gabor),
            patches: PatchConfig::face(),
            base_count: 5500,
            pyramid_ratios: FACE_PYRAMID_RATIOS.to_vec(),
            input_height: None,
            reduced_k: None,
            low_level_images: 500,
        }
    }
}

fn image_pool(images: Option<&Path>, videos: Option<&Path>) -> Result<Vec<PathBuf>> {
    match (images, videos) {
        (Some(p), None) => Ok(load_image_list(p)?.into_iter().map(|e| e.path).collect()),
        (None, Some(p)) => Ok(VideoManifest::load(p)?.entries.into_iter().flat_map(|e| e.frames).collect()),
        _ => Err(usage("give exactly one of --images or --videos")),
    }
}

fn pick(pool: &[PathBuf], n: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<Image>> {
    if n > pool.len() {
        bail!(Error::InvalidArgument(format!(
            "{what} needs {n} source images, only {} available",
            pool.len()
        )));
    }
    let mut idx = sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.par_iter().map(|i| Ok(Image::load(&pool[*i])?)).collect()
}

pub struct BuildL2Args {
    pub images: Option<PathBuf>,
    pub videos: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn default_l2_config() -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&Layer2BuildConfig::default())?);
    Ok(())
}

pub fn build_l2(a: BuildL2Args) -> Result<()> {
    let cfg: Layer2BuildConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => Layer2BuildConfig::default(),
    };
    cfg.low_level.validate()?;
    let pool = image_pool(a.images.as_deref(), a.videos.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let ll_images = match cfg.low_level.kind {
        LowLevelKind::Pca | LowLevelKind::Hmax2 => {
            pick(&pool, cfg.low_level_images.min(pool.len()), &mut rng, "low-level fitting")?
        }
        _ => Vec::new(),
    };
    let low_level = fit_low_level(&cfg.low_level, &ll_images, &mut rng)?;
    let bases = pick(&pool, cfg.base_count, &mut rng, "layer-2 templates")?;
    let bases = match cfg.input_height {
        Some(h) => bases.iter().map(|i| i.resize_to_height(h)).collect::<hwtemporal::Result<Vec<_>>>()?,
        None => bases,
    };
    let patches = prepare_patches(&bases, &cfg.patches, &mut rng)?;
    let bank = build_layer2_bank(&patches, |i| low_level.extract(i))?;
    let basis = cfg.reduced_k.map(|k| fit_template_pca(&bank, k)).transpose()?;
    let bundle = ModelBundle {
        layer2: Layer2Model {
            low_level_config: cfg.low_level.clone(),
            low_level,
            pyramid_ratios: cfg.pyramid_ratios.clone(),
            input_height: cfg.input_height,
            bank,
            basis,
        },
        layer3: None,
        build_info: serde_json::json!({
            "command": "build-l2",
            "seed": a.seed,
            "source": a.images.as_ref().or(a.videos.as_ref()),
            "config": cfg,
        }),
    };
    bundle.save(&a.out)?;
    eprintln!(
        "layer 2: {} bases x {} variants, templates {:?}",
        bundle.layer2.bank.base_count(),
        bundle.layer2.bank.variants_per_base(),
        bundle.layer2.bank.template_shape()
    );
    Ok(())
}

// ---------------------------------------------------------------- build-l3

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum PlacementArg {
    Even,
    Fixed,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ScopeArg {
    Global,
    PerVideo,
}

impl From<ScopeArg> for ScrambleScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Global => ScrambleScope::Global,
            ScopeArg::PerVideo => ScrambleScope::PerVideo,
        }
    }
}

pub struct BuildL3Args {
    pub bundle: PathBuf,
    pub videos: PathBuf,
    pub out: PathBuf,
    pub window: f64,
    pub placement: PlacementArg,
    pub m: Option<usize>,
    pub truncate: Option<f64>,
    pub pooling: PoolingDescriptor,
    pub scramble: Option<ScopeArg>,
    pub seed: Option<u64>,
}

pub fn build_l3(a: BuildL3Args) -> Result<()> {
    let mut bundle = ModelBundle::load(&a.bundle)?;
    let videos = VideoManifest::load(&a.videos)?.sequences()?;
    let mut plans = videos
        .iter()
        .map(|v| match a.placement {
            PlacementArg::Even => plan_even_nonoverlap(v, a.window, a.truncate),
            PlacementArg::Fixed => {
                let m = a.m.ok_or_else(|| Error::InvalidArgument("fixed placement needs --m".into()))?;
                plan_fixed_m(v, a.window, m)
            }
        })
        .collect::<hwtemporal::Result<Vec<_>>>()?;
    if let Some(scope) = a.scramble {
        let seed = a.seed.ok_or_else(|| usage("--scramble needs --seed"))?;
        plans = scramble_assignment(&plans, scope.into(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    }
    let l3 = learn_layer3(&videos, &plans, &bundle.layer2, a.pooling)?;
    eprintln!("layer 3: {} complex cells of dimension {}", l3.len(), l3.dim());
    bundle.layer3 = Some(l3);
    bundle.build_info = serde_json::json!({
        "command": "build-l3",
        "layer2": bundle.build_info,
        "videos": a.videos,
        "window_seconds": a.window,
        "placement": format!("{:?}", a.placement),
        "m": a.m,
        "truncate_seconds": a.truncate,
        "pooling": a.pooling.to_string(),
        "scramble": a.scramble.map(|s| format!("{s:?}")),
        "seed": a.seed,
    });
    bundle.save(&a.out)?;
    Ok(())
}

// ---------------------------------------------------------------- signature

pub struct SignatureArgs {
    pub bundle: PathBuf,
    pub images: PathBuf,
    pub out: PathBuf,
    pub layer: Option<u8>,
}

fn encode_all(entries: &[ImageEntry], enc: &(dyn Fn(&Image) -> Result<Signature> + Sync)) -> Result<Vec<(String, Signature)>> {
    entries
        .par_iter()
        .map(|e| {
            let img = Image::load(&e.path)?;
            Ok((e.name.clone(), enc(&img).with_context(|| format!("encoding {}", e.name))?))
        })
        .collect()
}

fn layer3_checked(bundle: &ModelBundle) -> Result<&hwtemporal::temporal::Layer3Model> {
    let l3 = bundle
        .layer3
        .as_ref()
        .ok_or_else(|| Error::ModelMismatch("bundle has no layer 3; run build-l3".into()))?;
    if l3.dim() != bundle.layer2.bank.base_count() {
        bail!(Error::ModelMismatch(format!(
            "layer-3 templates have dimension {}, layer 2 produces {}",
            l3.dim(),
            bundle.layer2.bank.base_count()
        )));
    }
    Ok(l3)
}

pub fn signature(a: SignatureArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.bundle)?;
    let entries = load_image_list(&a.images)?;
    let layer = a.layer.unwrap_or(if bundle.layer3.is_some() { 3 } else { 2 });
    let sigs = match layer {
        2 => encode_all(&entries, &|img| {
            Ok(Signature(bundle.layer2.encode(img)?.into_iter().map(f64::from).collect()))
        })?,
        3 => {
            let l3 = layer3_checked(&bundle)?;
            encode_all(&entries, &|img| Ok(encode_layer3(&bundle.layer2.encode(img)?, l3)?))?
        }
        n => return Err(usage(format!("--layer must be 2 or 3, got {n}"))),
    };
    write_signatures(&a.out, &sigs)
}

// ---------------------------------------------------------------- verify

#[derive(Serialize)]
struct VerifyJson {
    threshold: f64,
    train_accuracy: f64,
    accuracy: f64,
    test_pairs: usize,
    folds: Option<FoldJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fusion_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fusion_train_error: Option<f64>,
    decisions: Vec<bool>,
}

#[derive(Serialize)]
struct FoldJson {
    per_fold: Vec<f64>,
    mean: f64,
    sd: f64,
    summary: String,
}

pub struct VerifyArgs {
    pub signatures: PathBuf,
    pub train_pairs: PathBuf,
    pub test_pairs: PathBuf,
    pub out: PathBuf,
    pub folds: Option<usize>,
    pub roc: Option<PathBuf>,
}

fn verify_report(
    sigs: &BTreeMap<String, Signature>,
    train: &PairSet,
    test: &PairSet,
    folds: Option<usize>,
    roc: Option<&Path>,
) -> Result<VerifyJson> {
    let out = evaluate_pairs(train, test, sigs, folds)?;
    let auc = match roc {
        Some(path) => {
            let (curve, auc) = roc_auc(&score_pairs(test, sigs)?, &test.labels())?;
            write_csv(path, &["fpr".into(), "tpr".into(), "threshold".into()], |w| {
                for p in &curve.points {
                    w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
                }
                Ok(())
            })?;
            Some(auc)
        }
        None => None,
    };
    Ok(VerifyJson {
        threshold: out.report.threshold,
        train_accuracy: out.train_accuracy,
        accuracy: out.report.accuracy,
        test_pairs: test.len(),
        folds: out.report.folds.as_ref().map(|f| FoldJson {
            per_fold: f.per_fold.clone(),
            mean: f.mean,
            sd: f.sd,
            summary: f.to_string(),
        }),
        auc,
        fusion_weights: None,
        fusion_train_error: None,
        decisions: out.report.decisions,
    })
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let sigs = read_signatures(&a.signatures)?;
    let train = PairSet::load(&a.train_pairs, Split::Train)?;
    let test = PairSet::load(&a.test_pairs, Split::Test)?;
    let report = verify_report(&sigs, &train, &test, a.folds, a.roc.as_deref())?;
    eprintln!("test accuracy {:.4} (train {:.4})", report.accuracy, report.train_accuracy);
    write_json(&a.out, &report)?;
    Ok(())
}

// ---------------------------------------------------------------- fuse

pub struct FuseArgs {
    pub signatures: Vec<PathBuf>,
    pub train_pairs: PathBuf,
    pub test_pairs: PathBuf,
    pub out: PathBuf,
    pub folds: Option<usize>,
}

pub fn fuse_cmd(a: FuseArgs) -> Result<()> {
    if a.signatures.len() < 2 {
        return Err(usage("fuse needs --signatures at least twice"));
    }
    let tables = a.signatures.iter().map(|p| read_signatures(p)).collect::<Result<Vec<_>>>()?;
    let names: Vec<&String> = tables[0].keys().collect();
    for (t, p) in tables.iter().zip(&a.signatures).skip(1) {
        if t.keys().collect::<Vec<_>>() != names {
            bail!(Error::InvalidArgument(format!("{} lists different items", p.display())));
        }
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let train = PairSet::load(&a.train_pairs, Split::Train)?;
    let test = PairSet::load(&a.test_pairs, Split::Test)?;
    let idx = |n: &str| {
        index
            .get(n)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no signature for item {n}")))
    };
    let pairs = train
        .pairs
        .iter()
        .map(|p| Ok((idx(&p.item_a)?, idx(&p.item_b)?, p.label.is_same())))
        .collect::<hwtemporal::Result<Vec<_>>>()?;
    let pipelines: Vec<Vec<Signature>> = tables.iter().map(|t| t.values().cloned().collect()).collect();
    let (weights, err) = fit_fusion(&pairs, &pipelines)?;
    let fused = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let parts: Vec<&Signature> = pipelines.iter().map(|p| &p[i]).collect();
            Ok(((*n).clone(), fuse(&parts, &weights)?))
        })
        .collect::<hwtemporal::Result<BTreeMap<_, _>>>()?;
    let mut report = verify_report(&fused, &train, &test, a.folds, None)?;
    report.fusion_weights = Some(weights.weights.clone());
    report.fusion_train_error = Some(err);
    eprintln!("weights {:?}, test accuracy {:.4}", weights.weights, report.accuracy);
    write_json(&a.out, &report)?;
    Ok(())
}

// ---------------------------------------------------------------- sweeps

pub enum Encoder {
    Pixel,
    Bundle(Box<Layer2Model>),
}

impl Encoder {
    pub fn open(bundle: Option<&Path>, pixel: bool) -> Result<Self> {
        match (bundle, pixel) {
            (Some(p), false) => Ok(Encoder::Bundle(Box::new(ModelBundle::load(p)?.layer2))),
            (None, true) => Ok(Encoder::Pixel),
            _ => Err(usage("give exactly one of --bundle or --pixel")),
        }
    }

    fn as_dyn(&self) -> &dyn Layer2Encoder {
        match self {
            Encoder::Pixel => &PixelEncoder,
            Encoder::Bundle(m) => m.as_ref(),
        }
    }
}

/// Inputs of a temporal experiment; `dataset` fills any missing path from a
/// synthetic dataset directory.
pub struct TrialInputs {
    pub dataset: Option<PathBuf>,
    pub videos: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub train_pairs: Option<PathBuf>,
    pub test_pairs: Option<PathBuf>,
}

impl TrialInputs {
    fn path(&self, given: &Option<PathBuf>, file: &str, flag: &str) -> Result<PathBuf> {
        given
            .clone()
            .or_else(|| self.dataset.as_ref().map(|d| d.join(file)))
            .ok_or_else(|| usage(format!("missing {flag} (or --dataset)")))
    }

    fn load(&self, encoder: &dyn Layer2Encoder, truncate: Option<f64>) -> Result<TemporalTrial> {
        let videos: Vec<FrameSequence> =
            VideoManifest::load(self.path(&self.videos, "videos.json", "--videos")?)?.sequences()?;
        let entries = load_image_list(self.path(&self.images, "images.csv", "--images")?)?;
        let images = load_images(&entries)?;
        let items: Vec<(String, Image)> = images.into_iter().collect();
        let train = PairSet::load(self.path(&self.train_pairs, "pairs_train.csv", "--train-pairs")?, Split::Train)?;
        let test = PairSet::load(self.path(&self.test_pairs, "pairs_test.csv", "--test-pairs")?, Split::Test)?;
        Ok(TemporalTrial::prepare(videos, &items, train, test, encoder, truncate)?)
    }
}

pub struct SweepArgs {
    pub inputs: TrialInputs,
    pub encoder: Encoder,
    pub windows: String,
    pub truncate: Option<f64>,
    pub pooling: PoolingDescriptor,
    pub out: PathBuf,
}

fn window_label(w: f64) -> String {
    if w == 0.0 {
        "none".into()
    } else {
        format!("{w}s")
    }
}

pub fn sweep_pooling(a: SweepArgs) -> Result<()> {
    let windows = parse_list(&a.windows).map_err(|e| usage(e.to_string()))?;
    let trial = a.inputs.load(a.encoder.as_dyn(), a.truncate)?;
    let rows = pooling_sweep(&trial, &windows, a.truncate, a.pooling)?;
    let header = ["window", "window_seconds", "cells", "accuracy"].map(String::from);
    write_csv(&a.out, &header, |w| {
        for r in &rows {
            eprintln!("{:>6}: {:.4}", window_label(r.window_seconds), r.accuracy);
            w.write_record([
                window_label(r.window_seconds),
                r.window_seconds.to_string(),
                r.cells.to_string(),
                r.accuracy.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub struct ScrambleArgs {
    pub inputs: TrialInputs,
    pub encoder: Encoder,
    pub window: f64,
    pub truncate: Option<f64>,
    pub pooling: PoolingDescriptor,
    pub scope: ScopeArg,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn scramble(a: ScrambleArgs) -> Result<()> {
    let trial = a.inputs.load(a.encoder.as_dyn(), a.truncate)?;
    let r = scramble_control(&trial, a.window, a.truncate, a.pooling, a.scope.into(), a.seed)?;
    let header = ["condition", "window_seconds", "accuracy"].map(String::from);
    write_csv(&a.out, &header, |w| {
        for (name, win, acc) in [
            ("pooling", a.window, r.pooling),
            ("no_pooling", 0.0, r.no_pooling),
            ("scrambled_pooling", a.window, r.scrambled),
        ] {
            eprintln!("{name:>18}: {acc:.4}");
            w.write_record([name.to_string(), win.to_string(), acc.to_string()])?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- gate

pub struct GateArgs {
    pub bundle: PathBuf,
    pub positives: PathBuf,
    pub negatives: PathBuf,
    pub ps: String,
    pub out: PathBuf,
    pub auc_out: PathBuf,
}

pub fn gate(a: GateArgs) -> Result<()> {
    let ps = parse_list(&a.ps).map_err(|e| usage(e.to_string()))?;
    let bundle = ModelBundle::load(&a.bundle)?;
    let mut entries = Vec::new();
    for (path, label) in [(&a.positives, true), (&a.negatives, false)] {
        entries.extend(load_image_list(path)?.into_iter().map(|e| (e, label)));
    }
    let l2: Vec<Vec<f32>> = entries
        .par_iter()
        .map(|(e, _)| Ok(bundle.layer2.encode(&Image::load(&e.path)?)?))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = entries.iter().map(|e| e.1).collect();
    let scores: Vec<Vec<f64>> = ps
        .iter()
        .map(|p| l2.iter().map(|v| gate_score(v, *p)).collect::<hwtemporal::Result<Vec<_>>>())
        .collect::<hwtemporal::Result<_>>()?;
    let mut header = vec!["name".to_string(), "positive".to_string()];
    header.extend(ps.iter().map(|p| format!("p{p}")));
    write_csv(&a.out, &header, |w| {
        for (i, (e, l)) in entries.iter().enumerate() {
            let mut rec = vec![e.name.clone(), l.to_string()];
            rec.extend(scores.iter().map(|s| s[i].to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_csv(&a.auc_out, &["p".into(), "auc".into()], |w| {
        for (p, s) in ps.iter().zip(&scores) {
            let auc = roc_auc(s, &labels)?.1;
            eprintln!("p = {p:>5}: AUC {auc:.4}");
            w.write_record([p.to_string(), auc.to_string()])?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- classify

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    /// Class names for labels -1 and +1; pair mode uses `diff` and `same`.
    pub classes: [String; 2],
    pub pair_mode: bool,
    pub model: LinearModel,
    pub config: SvmConfig,
    pub seed: u64,
    pub training_examples: usize,
    pub training_accuracy: f64,
    pub objective_history: Vec<f64>,
}

pub struct ClassifyTrainArgs {
    pub signatures: PathBuf,
    pub labels: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub per_class: Option<usize>,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub out: PathBuf,
}

fn examples(
    sigs: &BTreeMap<String, Signature>,
    labels: Option<&Path>,
    pairs: Option<&Path>,
    classes: Option<&[String; 2]>,
) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<i8>, [String; 2])> {
    let get = |n: &str| {
        sigs.get(n)
            .ok_or_else(|| Error::InvalidArgument(format!("no signature for item {n}")))
    };
    match (labels, pairs) {
        (Some(p), None) => {
            let rows = read_labels(p)?;
            let classes = match classes {
                Some(c) => c.clone(),
                None => {
                    let set: std::collections::BTreeSet<&String> = rows.iter().map(|r| &r.1).collect();
                    if set.len() != 2 {
                        bail!(Error::InvalidArgument(format!(
                            "{} must contain exactly two classes, found {}",
                            p.display(),
                            set.len()
                        )));
                    }
                    let mut it = set.into_iter();
                    [it.next().unwrap().clone(), it.next().unwrap().clone()]
                }
            };
            let mut names = Vec::new();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (n, l) in rows {
                let y = if l == classes[1] {
                    1
                } else if l == classes[0] {
                    -1
                } else {
                    bail!(Error::InvalidArgument(format!("unknown class {l:?} for {n}")));
                };
                xs.push(get(&n)?.0.clone());
                ys.push(y);
                names.push(n);
            }
            Ok((names, xs, ys, classes))
        }
        (None, Some(p)) => {
            let set = PairSet::load(p, Split::Train)?;
            let mut names = Vec::new();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for pr in &set.pairs {
                xs.push(pair_feature(get(&pr.item_a)?, get(&pr.item_b)?)?);
                ys.push(if pr.label.is_same() { 1 } else { -1 });
                names.push(format!("{}|{}", pr.item_a, pr.item_b));
            }
            Ok((names, xs, ys, ["diff".into(), "same".into()]))
        }
        _ => Err(usage("give exactly one of --labels or --pairs")),
    }
}

pub fn classify_train(a: ClassifyTrainArgs) -> Result<()> {
    let sigs = read_signatures(&a.signatures)?;
    let (_, mut xs, mut ys, classes) = examples(&sigs, a.labels.as_deref(), a.pairs.as_deref(), None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    if let Some(k) = a.per_class {
        // Keep a seeded subset of k examples per class.
        let mut keep = Vec::new();
        for class in [-1i8, 1] {
            let idx: Vec<usize> = (0..ys.len()).filter(|i| ys[*i] == class).collect();
            if idx.len() < k {
                bail!(Error::InvalidArgument(format!(
                    "only {} examples of class {class}, {k} requested",
                    idx.len()
                )));
            }
            keep.extend(sample(&mut rng, idx.len(), k).into_iter().map(|j| idx[j]));
        }
        keep.sort_unstable();
        xs = keep.iter().map(|i| xs[*i].clone()).collect();
        ys = keep.iter().map(|i| ys[*i]).collect();
    }
    let config = SvmConfig {
        lambda: a.lambda,
        epochs: a.epochs,
    };
    let (model, history) = svm_train(&xs, &ys, &config, &mut rng)?;
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| svm_predict(&model, x).map(|p| p.0 == **y).unwrap_or(false))
        .count();
    let file = ClassifierFile {
        classes,
        pair_mode: a.pairs.is_some(),
        model,
        config,
        seed: a.seed,
        training_examples: xs.len(),
        training_accuracy: correct as f64 / xs.len() as f64,
        objective_history: history,
    };
    eprintln!("trained on {} examples, training accuracy {:.4}", xs.len(), file.training_accuracy);
    write_json(&a.out, &file)?;
    Ok(())
}

pub struct ClassifyPredictArgs {
    pub model: PathBuf,
    pub signatures: PathBuf,
    pub labels: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn classify_predict(a: ClassifyPredictArgs) -> Result<()> {
    let file: ClassifierFile = read_json(&a.model)?;
    if file.pair_mode != a.pairs.is_some() {
        bail!(Error::ModelMismatch(format!(
            "model was trained in {} mode",
            if file.pair_mode { "pair" } else { "item" }
        )));
    }
    let sigs = read_signatures(&a.signatures)?;
    let dim = sigs.values().next().map(Signature::len).unwrap_or(0);
    if dim != file.model.weights.len() {
        bail!(Error::ModelMismatch(format!(
            "classifier expects {} features, signatures have {dim}",
            file.model.weights.len()
        )));
    }
    let (names, xs, ys, _) = examples(&sigs, a.labels.as_deref(), a.pairs.as_deref(), Some(&file.classes))?;
    let mut correct = 0usize;
    write_csv(&a.out, &["item", "truth", "predicted", "margin"].map(String::from), |w| {
        for ((n, x), y) in names.iter().zip(&xs).zip(&ys) {
            let (p, m) = svm_predict(&file.model, x)?;
            correct += usize::from(p == *y);
            let cls = |v: i8| file.classes[usize::from(v > 0)].clone();
            w.write_record([n.clone(), cls(*y), cls(p), m.to_string()])?;
        }
        Ok(())
    })?;
    eprintln!("accuracy {:.4} on {} examples", correct as f64 / xs.len() as f64, xs.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_build_config_is_the_face_model() {
        let cfg = Layer2BuildConfig::default();
        assert_eq!(cfg.base_count, 5500);
        assert_eq!(cfg.patches.variants_per_base(), 10);
        assert_eq!(cfg.pyramid_ratios.len(), 20);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Layer2BuildConfig>(&json).unwrap(), cfg);
    }
}
