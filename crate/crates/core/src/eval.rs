//! Verification by thresholded cosine, fusion of pipelines, a linear SVM,
//! exact ROC/AUC and the L-p gating score.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::hwcore::{cosine_f64, pool, PoolingDescriptor, Signature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Same,
    Diff,
}

impl PairLabel {
    pub fn is_same(self) -> bool {
        self == PairLabel::Same
    }
}

impl std::str::FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "same" => Ok(PairLabel::Same),
            "diff" => Ok(PairLabel::Diff),
            other => Err(Error::invalid(format!("pair label '{other}' is not same|diff"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    #[serde(rename = "itemA")]
    pub item_a: String,
    #[serde(rename = "itemB")]
    pub item_b: String,
    pub label: PairLabel,
}

/// Labelled pairs of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub split: Split,
}

impl PairSet {
    pub fn new(pairs: Vec<Pair>, split: Split) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("pair set is empty"));
        }
        Ok(Self { pairs, split })
    }

    /// Reads `itemA,itemB,label` rows (with header).
    pub fn load(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let pairs = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<Pair>, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(pairs, split).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for p in &self.pairs {
            wtr.serialize(p).map_err(|e| Error::format(path, e.to_string()))?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
        crate::io::write_atomic(path, &bytes)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.label.is_same()).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Cosine of two signatures.
pub fn pair_score(a: &Signature, b: &Signature) -> Result<f64> {
    cosine_f64(&a.0, &b.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub decision_threshold: f64,
}

impl ThresholdModel {
    pub fn decide(&self, score: f64) -> bool {
        score > self.decision_threshold
    }
}

/// Fraction of pairs where `score > threshold` agrees with the label.
pub fn accuracy(scores: &[f64], same: &[bool], threshold: f64) -> Result<f64> {
    check_dims(scores.len(), same.len())?;
    if scores.is_empty() {
        return Err(Error::invalid("no scores"));
    }
    let ok = scores
        .iter()
        .zip(same)
        .filter(|(s, l)| (**s > threshold) == **l)
        .count();
    Ok(ok as f64 / scores.len() as f64)
}

fn require_both(same: &[bool]) -> Result<()> {
    if same.iter().all(|l| *l) || same.iter().all(|l| !*l) {
        return Err(Error::Degenerate("need both SAME and DIFFERENT examples".into()));
    }
    Ok(())
}

/// Threshold maximizing training accuracy of `score > t => SAME`.
///
/// Candidate cuts lie between adjacent distinct scores, below the lowest and
/// above the highest (bounded by -1 and 1 where scores allow). Among the
/// maximizing cuts the widest interval wins, ties going to the lowest; the
/// returned threshold is that interval's midpoint.
pub fn fit_threshold(scores: &[f64], same: &[bool]) -> Result<(ThresholdModel, f64)> {
    check_dims(scores.len(), same.len())?;
    require_both(same)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(same.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();
    let total_same = same.iter().filter(|l| **l).count();

    // Cut below group g: everything from g upward is called SAME.
    let (min, max) = (order[0].0, order[n - 1].0);
    let lo = if min > -1.0 { -1.0 } else { min - 1.0 };
    let hi = if max < 1.0 { 1.0 } else { max + 1.0 };
    let mut best: Option<(usize, f64, f64)> = None; // (correct, width, midpoint)
    let mut consider = |correct: usize, a: f64, b: f64| {
        let width = b - a;
        let mid = a + width / 2.0;
        let better = match best {
            None => true,
            Some((c, w, _)) => correct > c || (correct == c && width > w),
        };
        if better {
            best = Some((correct, width, mid));
        }
    };

    // Below all scores: everything SAME.
    let mut diff_below = 0usize;
    let mut same_below = 0usize;
    consider(total_same, lo, min);
    let mut i = 0;
    while i < n {
        let v = order[i].0;
        let mut j = i;
        while j < n && order[j].0 == v {
            if order[j].1 {
                same_below += 1;
            } else {
                diff_below += 1;
            }
            j += 1;
        }
        let upper = if j < n { order[j].0 } else { hi };
        let correct = diff_below + (total_same - same_below);
        consider(correct, v, upper);
        i = j;
    }
    let (correct, _, mid) = best.expect("at least one candidate cut");
    Ok((
        ThresholdModel {
            decision_threshold: mid,
        },
        correct as f64 / n as f64,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single fold.
    pub sd: f64,
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> FoldStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n.max(1.0);
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    FoldStats {
        per_fold: values.to_vec(),
        mean,
        sd,
    }
}

impl std::fmt::Display for FoldStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.sd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub decisions: Vec<bool>,
    pub folds: Option<FoldStats>,
}

/// Applies `model` to scored pairs. `folds` assigns each pair a fold id.
pub fn verify(
    scores: &[f64],
    same: &[bool],
    model: &ThresholdModel,
    folds: Option<&[usize]>,
) -> Result<VerifyReport> {
    let acc = accuracy(scores, same, model.decision_threshold)?;
    let decisions = scores.iter().map(|s| model.decide(*s)).collect::<Vec<_>>();
    let folds = folds
        .map(|f| {
            check_dims(scores.len(), f.len())?;
            let ids: std::collections::BTreeSet<usize> = f.iter().copied().collect();
            let per: Vec<f64> = ids
                .iter()
                .map(|id| {
                    let (mut ok, mut n) = (0usize, 0usize);
                    for k in 0..scores.len() {
                        if f[k] == *id {
                            n += 1;
                            ok += usize::from(decisions[k] == same[k]);
                        }
                    }
                    ok as f64 / n as f64
                })
                .collect();
            Ok(mean_sd(&per))
        })
        .transpose()?;
    Ok(VerifyReport {
        threshold: model.decision_threshold,
        accuracy: acc,
        decisions,
        folds,
    })
}

/// Non-negative weights, one per pipeline, summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub weights: Vec<f64>,
}

impl FusionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("fusion weights must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("fusion weights sum to {sum}")));
        }
        Ok(Self { weights })
    }
}

/// Grid resolution of the fusion search.
pub const FUSION_STEP: f64 = 0.05;

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < crate::hwcore::NORM_EPS {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Concatenation of `w_i * sig_i / |sig_i|`.
pub fn fuse(signatures: &[&Signature], weights: &FusionWeights) -> Result<Signature> {
    check_dims(weights.weights.len(), signatures.len())?;
    Ok(Signature(
        signatures
            .iter()
            .zip(&weights.weights)
            .flat_map(|(s, w)| unit(&s.0).into_iter().map(move |v| v * w))
            .collect(),
    ))
}

/// All points of the simplex grid with `parts` steps, lexicographic order.
fn simplex_grid(dims: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(dims: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dims == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(dims - 1, left - v, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dims, parts, &mut Vec::new(), &mut out);
    out
}

/// Grid search over the weight simplex (step 0.05) minimizing the training
/// error of fused signatures under a fitted threshold. `pipelines[p][i]` is
/// the signature of item `i` in pipeline `p`; `pairs` index items. Ties go to
/// the lexicographically smallest weight vector.
pub fn fit_fusion(
    pairs: &[(usize, usize, bool)],
    pipelines: &[Vec<Signature>],
) -> Result<(FusionWeights, f64)> {
    if pipelines.len() < 2 {
        return Err(Error::invalid("fusion needs at least two pipelines"));
    }
    let items = pipelines[0].len();
    for p in pipelines {
        if p.len() != items {
            return Err(Error::invalid("pipelines list different item counts"));
        }
    }
    if pairs.iter().any(|(a, b, _)| *a >= items || *b >= items) {
        return Err(Error::invalid("pair references a missing item"));
    }
    let same: Vec<bool> = pairs.iter().map(|p| p.2).collect();
    require_both(&same)?;

    // Per pair and pipeline: block cosine and whether each side is non-zero.
    let units: Vec<Vec<Vec<f64>>> = pipelines
        .iter()
        .map(|p| p.iter().map(|s| unit(&s.0)).collect())
        .collect();
    let blocks: Vec<Vec<(f64, f64, f64)>> = pairs
        .iter()
        .map(|(a, b, _)| {
            units
                .iter()
                .map(|u| {
                    let d: f64 = u[*a].iter().zip(&u[*b]).map(|(x, y)| x * y).sum();
                    let na = if u[*a].iter().any(|v| *v != 0.0) { 1.0 } else { 0.0 };
                    let nb = if u[*b].iter().any(|v| *v != 0.0) { 1.0 } else { 0.0 };
                    (d, na, nb)
                })
                .collect()
        })
        .collect();

    let parts = (1.0 / FUSION_STEP).round() as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for point in simplex_grid(pipelines.len(), parts) {
        let w: Vec<f64> = point.iter().map(|v| *v as f64 / parts as f64).collect();
        let w2: Vec<f64> = w.iter().map(|v| v * v).collect();
        let scores: Vec<f64> = blocks
            .iter()
            .map(|bl| {
                let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
                for ((c, a, b), q) in bl.iter().zip(&w2) {
                    d += q * c;
                    na += q * a;
                    nb += q * b;
                }
                if na <= 0.0 || nb <= 0.0 {
                    0.0
                } else {
                    (d / (na * nb).sqrt()).clamp(-1.0, 1.0)
                }
            })
            .collect();
        let (_, acc) = fit_threshold(&scores, &same)?;
        let err = 1.0 - acc;
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, w));
        }
    }
    let (err, w) = best.expect("grid is non-empty");
    // Grid points are exact multiples of 1/parts; renormalize rounding.
    let sum: f64 = w.iter().sum();
    Ok((
        FusionWeights::new(w.iter().map(|v| v / sum).collect())?,
        err,
    ))
}

/// Linear classifier `sign(w . x + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 100,
        }
    }
}

/// `lambda/2 (|w|^2 + b^2) + mean hinge loss`.
pub fn svm_objective(model: &LinearModel, features: &[Vec<f64>], labels: &[i8]) -> f64 {
    let reg = 0.5
        * model.lambda
        * (model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias);
    let hinge: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, y)| (1.0 - *y as f64 * margin(model, x)).max(0.0))
        .sum();
    reg + hinge / features.len() as f64
}

fn margin(model: &LinearModel, x: &[f64]) -> f64 {
    model.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.bias
}

/// Stochastic subgradient descent on the regularized hinge loss with step
/// `1 / (lambda t)`, one seeded shuffle per epoch. The bias is treated as a
/// weight on a constant feature. Returns the final iterate and the
/// full-batch objective after every epoch.
pub fn svm_train<R: Rng>(
    features: &[Vec<f64>],
    labels: &[i8],
    cfg: &SvmConfig,
    rng: &mut R,
) -> Result<(LinearModel, Vec<f64>)> {
    check_dims(features.len(), labels.len())?;
    if features.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if labels.iter().any(|l| *l != 1 && *l != -1) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if labels.iter().all(|l| *l == 1) || labels.iter().all(|l| *l == -1) {
        return Err(Error::Degenerate("SVM needs both classes".into()));
    }
    if !(cfg.lambda.is_finite() && cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::invalid("SVM needs lambda > 0 and at least one epoch"));
    }
    let dim = features[0].len();
    for f in features {
        check_dims(dim, f.len())?;
    }
    let mut model = LinearModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        lambda: cfg.lambda,
    };
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let y = labels[i] as f64;
            let violated = y * margin(&model, &features[i]) < 1.0;
            let shrink = 1.0 - eta * cfg.lambda;
            model.weights.iter_mut().for_each(|w| *w *= shrink);
            model.bias *= shrink;
            if violated {
                for (w, x) in model.weights.iter_mut().zip(&features[i]) {
                    *w += eta * y * x;
                }
                model.bias += eta * y;
            }
        }
        history.push(svm_objective(&model, features, labels));
    }
    Ok((model, history))
}

/// Predicted label (+1 when the margin is non-negative) and the margin.
pub fn svm_predict(model: &LinearModel, x: &[f64]) -> Result<(i8, f64)> {
    check_dims(model.weights.len(), x.len())?;
    let m = margin(model, x);
    Ok((if m >= 0.0 { 1 } else { -1 }, m))
}

/// Element-wise `|a - b|`, the pair feature fed to the SVM.
pub fn pair_feature(a: &Signature, b: &Signature) -> Result<Vec<f64>> {
    check_dims(a.len(), b.len())?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points for `score >= threshold => positive`, one per distinct score
/// from the highest down, preceded by the `(0, 0)` point at `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Exact ROC and `AUC = P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<(RocCurve, f64)> {
    check_dims(scores.len(), positive.len())?;
    require_both(positive)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    let p = positive.iter().filter(|l| **l).count() as u128;
    let n = positive.len() as u128 - p;
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(positive.iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // Twice the count of correctly ordered pairs (ties count once).
    let mut twice_wins: u128 = 0;
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let v = order[i].0;
        let (mut gp, mut gn) = (0u128, 0u128);
        while i < order.len() && order[i].0 == v {
            if order[i].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        // Positives in this group beat every negative below it.
        twice_wins += gp * (n - fp - gn) * 2 + gp * gn;
        tp += gp;
        fp += gn;
        points.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: v,
        });
    }
    Ok((RocCurve { points }, twice_wins as f64 / (2 * p * n) as f64))
}

/// L-p pooling of the layer-2 responses clamped at zero.
pub fn gate_score(l2vec: &[f32], p: f64) -> Result<f64> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::invalid(format!("gate needs finite p >= 1, got {p}")));
    }
    if l2vec.is_empty() {
        return Ok(0.0);
    }
    let clamped: Vec<f64> = l2vec.iter().map(|v| (*v as f64).max(0.0)).collect();
    pool(&clamped, PoolingDescriptor::Lp { p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_score_examples() {
        let a = Signature(vec![0.2, 0.4, 0.1]);
        assert!((pair_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = Signature(a.0.iter().map(|v| 2.0 * v).collect());
        assert!((pair_score(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let o = Signature(vec![0.0, 0.0, 1.0]);
        assert_eq!(pair_score(&Signature(vec![1.0, 0.0, 0.0]), &o).unwrap(), 0.0);
        assert!(pair_score(&a, &Signature(vec![1.0])).is_err());
    }

    #[test]
    fn threshold_examples() {
        let (m, acc) =
            fit_threshold(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert!((m.decision_threshold - 0.55).abs() < 1e-12);
        assert_eq!(acc, 1.0);

        let (_, acc) = fit_threshold(&[0.5; 5], &[true, true, false, false, false]).unwrap();
        assert!((acc - 0.6).abs() < 1e-12);
        assert!(fit_threshold(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn verify_examples() {
        let scores = [0.9, 0.1, 0.8, 0.2];
        let same = [true, false, true, false];
        let r = verify(&scores, &same, &ThresholdModel { decision_threshold: 0.5 }, None).unwrap();
        assert_eq!(r.accuracy, 1.0);
        let r = verify(&scores, &same, &ThresholdModel { decision_threshold: 2.0 }, Some(&[0, 0, 1, 1]))
            .unwrap();
        assert!(r.decisions.iter().all(|d| !d));
        let f = r.folds.unwrap();
        assert_eq!(f.per_fold, vec![0.5, 0.5]);
        assert_eq!(f.sd, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let same: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let r = verify(&scores, &same, &ThresholdModel { decision_threshold: 0.5 }, None).unwrap();
        assert!((r.accuracy - 0.5).abs() <= 0.05);
    }

    #[test]
    fn fold_format() {
        let s = mean_sd(&[0.7, 0.8]);
        assert!((s.mean - 0.75).abs() < 1e-12);
        assert_eq!(format!("{s}"), "75.00±7.07");
    }

    #[test]
    fn fuse_examples() {
        let a = Signature(vec![3.0, 4.0]);
        let b = Signature(vec![1.0, 0.0, 0.0]);
        let w = FusionWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(fuse(&[&a, &b], &w).unwrap().0, vec![0.6, 0.8, 0.0, 0.0, 0.0]);
        assert!(fuse(&[&a], &w).is_err());
        assert!(FusionWeights::new(vec![0.5, 0.6]).is_err());

        // Fused cosine = sum w_i^2 cos_i / sum w_i^2 for non-zero blocks.
        let a2 = Signature(vec![1.0, 1.0]);
        let b2 = Signature(vec![0.0, 1.0, 1.0]);
        let w = FusionWeights::new(vec![0.3, 0.7]).unwrap();
        let fa = fuse(&[&a, &b], &w).unwrap();
        let fb = fuse(&[&a2, &b2], &w).unwrap();
        let c1 = pair_score(&a, &a2).unwrap();
        let c2 = pair_score(&b, &b2).unwrap();
        let expect = (0.09 * c1 + 0.49 * c2) / (0.09 + 0.49);
        assert!((pair_score(&fa, &fb).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn simplex_grid_is_lexicographic() {
        let g = simplex_grid(3, 2);
        assert_eq!(g.first().unwrap(), &vec![0, 0, 2]);
        assert_eq!(g.len(), 6);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(simplex_grid(2, 20).len(), 21);
    }

    #[test]
    fn fusion_prefers_informative_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items = 80;
        let ids: Vec<usize> = (0..items).map(|i| i / 2).collect();
        let protos: Vec<Vec<f64>> = (0..items / 2)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let good: Vec<Signature> = ids
            .iter()
            .map(|k| Signature(protos[*k].iter().map(|v| v + rng.random_range(-0.1..0.1)).collect()))
            .collect();
        let noise: Vec<Signature> = (0..items)
            .map(|_| Signature((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let pairs: Vec<(usize, usize, bool)> = (0..items / 2)
            .map(|k| {
                if k % 2 == 0 {
                    (2 * k, 2 * k + 1, true)
                } else {
                    (2 * k, (2 * k + 3) % items, false)
                }
            })
            .collect();
        let (w, _) = fit_fusion(&pairs, &[noise.clone(), good.clone()]).unwrap();
        assert!(w.weights[1] >= 0.5);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let (w, _) = fit_fusion(&pairs, &[good.clone(), good]).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0]);
    }

    #[test]
    fn svm_separable_and_regularized() {
        let features: Vec<Vec<f64>> = vec![
            vec![2.0, 2.0],
            vec![1.5, 2.5],
            vec![3.0, 1.0],
            vec![-2.0, -1.0],
            vec![-1.0, -2.5],
            vec![-3.0, -0.5],
        ];
        let labels = vec![1, 1, 1, -1, -1, -1];
        let (m, hist) = svm_train(
            &features,
            &labels,
            &SvmConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for (x, y) in features.iter().zip(&labels) {
            assert_eq!(svm_predict(&m, x).unwrap().0, *y);
        }
        assert!(hist[99] <= hist[4]);
        assert!(hist[49] <= hist[4]);

        let big = SvmConfig {
            lambda: 1e6,
            epochs: 20,
        };
        let (m, _) = svm_train(&features, &labels, &big, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.weights.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-3);
        assert!(svm_train(&features, &[1; 6], &big, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn roc_examples() {
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let (_, auc) = roc_auc(&[0.9, 0.4, 0.6, 0.2], &[true, false, false, true]).unwrap();
        assert_eq!(auc, 0.5);
        let (curve, auc) = roc_auc(&[0.3; 4], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points.last().unwrap().tpr, 1.0);
        assert!(roc_auc(&[0.1], &[true]).is_err());
    }

    #[test]
    fn gate_examples() {
        assert_eq!(gate_score(&[0.0; 5], 3.0).unwrap(), 0.0);
        assert_eq!(gate_score(&[0.5, 0.5], 1.0).unwrap(), 1.0);
        assert_eq!(gate_score(&[0.5, -0.5, 0.25], 1.0).unwrap(), 0.75);
        assert!(gate_score(&[0.5], 0.5).is_err());
    }

    #[test]
    fn pairs_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let set = PairSet::new(
            vec![
                Pair {
                    item_a: "a.png".into(),
                    item_b: "b.png".into(),
                    label: PairLabel::Same,
                },
                Pair {
                    item_a: "a.png".into(),
                    item_b: "c.png".into(),
                    label: PairLabel::Diff,
                },
            ],
            Split::Train,
        )
        .unwrap();
        set.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("itemA,itemB,label\na.png,b.png,same\n"));
        assert_eq!(PairSet::load(&path, Split::Train).unwrap(), set);
        std::fs::write(&path, "itemA,itemB,label\na,b,maybe\n").unwrap();
        assert!(matches!(PairSet::load(&path, Split::Test), Err(Error::Format { .. })));
    }

    proptest::proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-3.0f64..3.0, 4..60),
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i % 3 == 0).collect();
            let (_, a) = roc_auc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| s.exp() * 2.0 + 1.0).collect();
            let (_, b) = roc_auc(&t, &labels).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
