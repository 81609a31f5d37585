//! Hubel-Wiesel modules: simple cells compute normalized dot products with
//! stored templates, complex cells pool those responses.
//!
//! Besides the generic signature, this module holds the layer-2 machinery of
//! the hierarchy: large class-specific templates are slid over every level of
//! a feature pyramid and pooled over scale, position and in-plane variant
//! ([`encode_layer2`]), optionally in a PCA-reduced template space
//! ([`encode_layer2_reduced`]).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::imagecore::{FeatureMap, Image, Pyramid};
use crate::linalg::{self, dot, norm_sq};

/// Norms below this are treated as zero and give a zero response.
pub const NORM_EPS: f64 = 1e-12;

/// `x . t / (|x| |t|)`, or 0 when either norm is below [`NORM_EPS`].
pub fn normalized_dot(x: &[f32], t: &[f32]) -> Result<f64> {
    check_dims(x.len(), t.len())?;
    Ok(cosine(x, t))
}

#[inline]
pub(crate) fn cosine(x: &[f32], t: &[f32]) -> f64 {
    let nx = norm_sq(x).sqrt();
    let nt = norm_sq(t).sqrt();
    cosine_with_norms(dot(x, t), nx, nt)
}

#[inline]
pub(crate) fn cosine_with_norms(d: f64, nx: f64, nt: f64) -> f64 {
    if nx < NORM_EPS || nt < NORM_EPS {
        return 0.0;
    }
    (d / (nx * nt)).clamp(-1.0, 1.0)
}

/// Cosine between two `f64` vectors with the same zero-norm guard.
pub fn cosine_f64(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(cosine_with_norms(d, na, nb))
}

/// The complex-cell pooling function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PoolingDescriptor {
    Max,
    Mean,
    Lp { p: f64 },
}

impl PoolingDescriptor {
    pub fn lp(p: f64) -> Result<Self> {
        let d = PoolingDescriptor::Lp { p };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PoolingDescriptor::Lp { p } if !(p.is_finite() && *p >= 1.0) => Err(Error::invalid(
                format!("L-p pooling needs a finite p >= 1, got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for PoolingDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolingDescriptor::Max => write!(f, "max"),
            PoolingDescriptor::Mean => write!(f, "mean"),
            PoolingDescriptor::Lp { p } => write!(f, "lp:{p}"),
        }
    }
}

impl std::str::FromStr for PoolingDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolingDescriptor::Max),
            "mean" => Ok(PoolingDescriptor::Mean),
            other => {
                let p = other
                    .strip_prefix("lp:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::invalid(format!("unknown pooling '{other}' (max, mean, lp:<p>)"))
                    })?;
                PoolingDescriptor::lp(p)
            }
        }
    }
}

/// Pools simple-cell responses into one complex-cell output.
pub fn pool(values: &[f64], desc: PoolingDescriptor) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot pool an empty set of responses"));
    }
    desc.validate()?;
    match desc {
        PoolingDescriptor::Max => Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        PoolingDescriptor::Mean => Ok(values.iter().sum::<f64>() / values.len() as f64),
        PoolingDescriptor::Lp { p } => {
            if let Some(v) = values.iter().find(|v| **v < 0.0) {
                return Err(Error::invalid(format!(
                    "L-p pooling takes non-negative responses, got {v}"
                )));
            }
            if p == 1.0 {
                return Ok(values.iter().sum());
            }
            // Scale by the maximum so large p does not overflow.
            let max = values.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                return Ok(0.0);
            }
            let sum: f64 = values.iter().map(|v| (v / max).powf(p)).sum();
            Ok(max * sum.powf(1.0 / p))
        }
    }
}

/// Where a stored template came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    Patch {
        patch_id: usize,
        rotation_deg: f64,
        flipped: bool,
    },
    Frame {
        video_id: String,
        frame_index: usize,
    },
    Other {
        label: String,
    },
}

/// The stored templates feeding one complex cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBook {
    module_id: usize,
    templates: Vec<Vec<f32>>,
    norms: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl TemplateBook {
    pub fn new(
        module_id: usize,
        templates: Vec<Vec<f32>>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let dim = templates
            .first()
            .map(|t| t.len())
            .ok_or_else(|| Error::invalid(format!("template book {module_id} is empty")))?;
        if dim == 0 {
            return Err(Error::invalid("templates must be non-empty vectors"));
        }
        for t in &templates {
            check_dims(dim, t.len())?;
        }
        check_dims(templates.len(), provenance.len())?;
        let norms: Vec<f64> = templates.iter().map(|t| norm_sq(t).sqrt()).collect();
        if let Some(i) = norms.iter().position(|n| *n <= 0.0 || !n.is_finite()) {
            return Err(Error::invalid(format!(
                "template {i} of book {module_id} has zero norm"
            )));
        }
        Ok(Self {
            module_id,
            templates,
            norms,
            provenance,
        })
    }

    pub fn module_id(&self) -> usize {
        self.module_id
    }

    pub fn dim(&self) -> usize {
        self.templates[0].len()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[Vec<f32>] {
        &self.templates
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Simple-cell responses of `x` against every template.
    pub fn responses(&self, x: &[f32]) -> Result<Vec<f64>> {
        check_dims(self.dim(), x.len())?;
        let nx = norm_sq(x).sqrt();
        Ok(self
            .templates
            .iter()
            .zip(&self.norms)
            .map(|(t, nt)| cosine_with_norms(dot(x, t), nx, *nt))
            .collect())
    }

    /// Pooled response of `x`: one signature element.
    pub fn pooled(&self, x: &[f32], pooling: PoolingDescriptor) -> Result<f64> {
        pool(&self.responses(x)?, pooling)
    }
}

/// One complex cell: a template book and its pooling function.
#[derive(Clone, Debug, PartialEq)]
pub struct HwModule {
    pub book: TemplateBook,
    pub pooling: PoolingDescriptor,
}

/// The vector of complex-cell outputs for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature(pub Vec<f64>);

impl Signature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `mu_k(x) = P_k({<x, t> : t in T_k})` for every module `k`.
pub fn signature(x: &[f32], modules: &[HwModule]) -> Result<Signature> {
    modules
        .iter()
        .map(|m| m.book.pooled(x, m.pooling))
        .collect::<Result<Vec<_>>>()
        .map(Signature)
}

/// Output extent of a valid sliding window, if the template fits.
pub(crate) fn valid_extent(map: &FeatureMap, th: usize, tw: usize) -> Option<(usize, usize)> {
    (map.height() >= th && map.width() >= tw)
        .then(|| (map.height() - th + 1, map.width() - tw + 1))
}

#[inline]
pub(crate) fn window_dot(map: &FeatureMap, y: usize, x: usize, th: usize, tw: usize, t: &[f32]) -> f64 {
    let z = map.depth();
    let row = tw * z;
    let data = map.data();
    let mut acc = 0.0;
    for r in 0..th {
        let start = ((y + r) * map.width() + x) * z;
        acc += dot(&data[start..start + row], &t[r * row..(r + 1) * row]);
    }
    acc
}

/// Norms of every valid `th x tw` window, row-major over output positions.
pub(crate) fn window_norms(map: &FeatureMap, th: usize, tw: usize) -> Vec<f64> {
    let Some((oh, ow)) = valid_extent(map, th, tw) else {
        return Vec::new();
    };
    let z = map.depth();
    let row = tw * z;
    let data = map.data();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for r in 0..th {
                let start = ((y + r) * map.width() + x) * z;
                acc += norm_sq(&data[start..start + row]);
            }
            out.push(acc.sqrt());
        }
    }
    out
}

/// Slides `template` over `level` and records the normalized dot product at
/// every valid offset. Output depth is 1.
pub fn ndp_convolve(level: &FeatureMap, template: &FeatureMap) -> Result<FeatureMap> {
    let (th, tw, tz) = template.shape();
    check_dims(tz, level.depth())?;
    let (oh, ow) = valid_extent(level, th, tw).ok_or_else(|| {
        Error::TooSmall(format!(
            "{}x{} level cannot hold a {th}x{tw} template",
            level.height(),
            level.width()
        ))
    })?;
    let t = template.data();
    let tn = norm_sq(t).sqrt();
    let norms = window_norms(level, th, tw);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let d = window_dot(level, y, x, th, tw, t);
            out.push(cosine_with_norms(d, norms[y * ow + x], tn) as f32);
        }
    }
    FeatureMap::new(oh, ow, 1, out)
}

/// Orthonormal axes plus centre for approximating template dot products in
/// a `k`-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    mean: Vec<f32>,
    eigenvectors: Vec<Vec<f32>>,
    eigenvalues: Vec<f32>,
}

impl ReducedBasis {
    /// Validates shapes and orthonormality (Gram matrix within 1e-5 of identity).
    pub fn new(mean: Vec<f32>, eigenvectors: Vec<Vec<f32>>, eigenvalues: Vec<f32>) -> Result<Self> {
        if eigenvectors.is_empty() {
            return Err(Error::invalid("reduced basis needs at least one axis"));
        }
        for v in &eigenvectors {
            check_dims(mean.len(), v.len())?;
        }
        check_dims(eigenvectors.len(), eigenvalues.len())?;
        for (i, a) in eigenvectors.iter().enumerate() {
            for (j, b) in eigenvectors.iter().enumerate().skip(i) {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot(a, b) - expect).abs() > 1e-5 {
                    return Err(Error::invalid(format!(
                        "basis vectors {i} and {j} are not orthonormal"
                    )));
                }
            }
        }
        Ok(Self {
            mean,
            eigenvectors,
            eigenvalues,
        })
    }

    /// The standard basis of `dim` dimensions with zero mean.
    pub fn identity(dim: usize) -> Self {
        let eigenvectors = (0..dim)
            .map(|i| {
                let mut e = vec![0f32; dim];
                e[i] = 1.0;
                e
            })
            .collect();
        Self {
            mean: vec![0.0; dim],
            eigenvectors,
            eigenvalues: vec![1.0; dim],
        }
    }

    pub fn k(&self) -> usize {
        self.eigenvectors.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn eigenvectors(&self) -> &[Vec<f32>] {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    /// Coefficients of `v - mean` along each axis.
    pub fn project(&self, v: &[f32]) -> Result<Vec<f32>> {
        check_dims(self.dim(), v.len())?;
        let centered: Vec<f32> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .eigenvectors
            .iter()
            .map(|e| dot(&centered, e) as f32)
            .collect())
    }

    /// `mean + sum_i coeffs[i] * axis_i`.
    pub fn reconstruct(&self, coeffs: &[f32]) -> Result<Vec<f32>> {
        check_dims(self.k(), coeffs.len())?;
        let mut out: Vec<f64> = self.mean.iter().map(|m| *m as f64).collect();
        for (c, e) in coeffs.iter().zip(&self.eigenvectors) {
            for (o, v) in out.iter_mut().zip(e) {
                *o += *c as f64 * *v as f64;
            }
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

/// PCA of a set of row vectors, returned as a [`ReducedBasis`].
pub fn fit_basis(rows: &[&[f32]], k: usize) -> Result<ReducedBasis> {
    let pca = linalg::fit_pca(rows, k)?;
    ReducedBasis::new(
        pca.mean.iter().map(|v| *v as f32).collect(),
        pca.components
            .iter()
            .map(|c| c.iter().map(|v| *v as f32).collect())
            .collect(),
        pca.eigenvalues.iter().map(|v| *v as f32).collect(),
    )
}

/// Layer-2 templates: `base_count` groups of `variants_per_base` windows
/// of shape `(h, w, z)`, stored contiguously group by group.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer2Bank {
    base_count: usize,
    variants_per_base: usize,
    template_shape: (usize, usize, usize),
    templates: Vec<f32>,
    norms: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl Layer2Bank {
    pub fn new(
        base_count: usize,
        variants_per_base: usize,
        template_shape: (usize, usize, usize),
        templates: Vec<f32>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let (h, w, z) = template_shape;
        if base_count == 0 || variants_per_base == 0 || h == 0 || w == 0 || z == 0 {
            return Err(Error::invalid("layer-2 bank dimensions must be positive"));
        }
        let dim = h * w * z;
        let count = base_count * variants_per_base;
        check_dims(count * dim, templates.len())?;
        check_dims(count, provenance.len())?;
        if templates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer-2 templates contain non-finite values"));
        }
        let norms = templates.chunks_exact(dim).map(|t| norm_sq(t).sqrt()).collect();
        Ok(Self {
            base_count,
            variants_per_base,
            template_shape,
            templates,
            norms,
            provenance,
        })
    }

    /// Builds a bank from per-template feature maps, grouped by base.
    pub fn from_maps(
        maps: &[FeatureMap],
        variants_per_base: usize,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("no templates for layer-2 bank"))?;
        let shape = first.shape();
        if variants_per_base == 0 || maps.len() % variants_per_base != 0 {
            return Err(Error::invalid(format!(
                "{} templates do not split into groups of {variants_per_base}",
                maps.len()
            )));
        }
        let mut data = Vec::with_capacity(maps.len() * first.data().len());
        for m in maps {
            if m.shape() != shape {
                return Err(Error::invalid(format!(
                    "template shape {:?} differs from {:?}",
                    m.shape(),
                    shape
                )));
            }
            data.extend_from_slice(m.data());
        }
        Self::new(
            maps.len() / variants_per_base,
            variants_per_base,
            shape,
            data,
            provenance,
        )
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn variants_per_base(&self) -> usize {
        self.variants_per_base
    }

    pub fn template_shape(&self) -> (usize, usize, usize) {
        self.template_shape
    }

    pub fn template_dim(&self) -> usize {
        let (h, w, z) = self.template_shape;
        h * w * z
    }

    pub fn template_count(&self) -> usize {
        self.base_count * self.variants_per_base
    }

    pub fn raw_templates(&self) -> &[f32] {
        &self.templates
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn template(&self, index: usize) -> &[f32] {
        let dim = self.template_dim();
        &self.templates[index * dim..(index + 1) * dim]
    }

    pub fn template_map(&self, index: usize) -> FeatureMap {
        let (h, w, z) = self.template_shape;
        FeatureMap::new(h, w, z, self.template(index).to_vec()).expect("bank shapes validated")
    }

    fn group(&self, base: usize) -> std::ops::Range<usize> {
        base * self.variants_per_base..(base + 1) * self.variants_per_base
    }

    fn usable_levels<'a>(&self, pyr: &'a Pyramid<FeatureMap>) -> Result<Vec<&'a FeatureMap>> {
        let (th, tw, tz) = self.template_shape;
        for level in pyr.levels() {
            check_dims(tz, level.map.depth())?;
        }
        let usable: Vec<_> = pyr
            .levels()
            .iter()
            .map(|l| &l.map)
            .filter(|m| valid_extent(m, th, tw).is_some())
            .collect();
        if usable.is_empty() {
            return Err(Error::TooSmall(format!(
                "no pyramid level can hold a {th}x{tw} template"
            )));
        }
        Ok(usable)
    }
}

/// Layer-2 encoding: for each base patch, the maximum normalized dot product
/// over every pyramid level, every valid offset and every variant.
pub fn encode_layer2(pyr: &Pyramid<FeatureMap>, bank: &Layer2Bank) -> Result<Vec<f32>> {
    let levels = bank.usable_levels(pyr)?;
    let (th, tw, _) = bank.template_shape;
    let norms: Vec<Vec<f64>> = levels.iter().map(|m| window_norms(m, th, tw)).collect();

    let out = (0..bank.base_count)
        .into_par_iter()
        .map(|base| {
            let mut best = f64::NEG_INFINITY;
            for ti in bank.group(base) {
                let t = bank.template(ti);
                let tn = bank.norms[ti];
                for (map, wn) in levels.iter().zip(&norms) {
                    let (_, ow) = valid_extent(map, th, tw).expect("filtered");
                    for (pos, n) in wn.iter().enumerate() {
                        let r = if tn < NORM_EPS || *n < NORM_EPS {
                            0.0
                        } else {
                            cosine_with_norms(window_dot(map, pos / ow, pos % ow, th, tw, t), *n, tn)
                        };
                        if r > best {
                            best = r;
                        }
                    }
                }
            }
            best as f32
        })
        .collect();
    Ok(out)
}

/// Layer-2 encoding with dot products taken in the `k`-dimensional space of
/// `basis`.
///
/// Windows and templates are replaced by their reconstructions
/// `mean + B B^T (v - mean)`; the cosine of two reconstructions is computed
/// exactly from their `k` coefficients and the projection of the mean, so a
/// full-rank basis reproduces [`encode_layer2`] up to rounding.
pub fn encode_layer2_reduced(
    pyr: &Pyramid<FeatureMap>,
    bank: &Layer2Bank,
    basis: &ReducedBasis,
) -> Result<Vec<f32>> {
    if basis.dim() != bank.template_dim() {
        return Err(Error::ModelMismatch(format!(
            "basis of dimension {} does not match templates of dimension {}",
            basis.dim(),
            bank.template_dim()
        )));
    }
    let levels = bank.usable_levels(pyr)?;
    let (th, tw, _) = bank.template_shape;
    let k = basis.k();

    let mean_sq = norm_sq(basis.mean());
    let mean_proj: Vec<f64> = basis
        .eigenvectors()
        .iter()
        .map(|e| dot(basis.mean(), e))
        .collect();

    // Template coefficients and reconstructed squared norms.
    let coeffs: Vec<(Vec<f64>, f64)> = (0..bank.template_count())
        .into_par_iter()
        .map(|i| {
            let t = bank.template(i);
            let b: Vec<f64> = basis
                .eigenvectors()
                .iter()
                .zip(&mean_proj)
                .map(|(e, c)| dot(t, e) - c)
                .collect();
            let cb: f64 = b.iter().zip(&mean_proj).map(|(x, y)| x * y).sum();
            let bb: f64 = b.iter().map(|x| x * x).sum();
            (b, mean_sq + 2.0 * cb + bb)
        })
        .collect();

    // Window coefficients per level: (coefficients, c.a, |reconstruction|^2, true norm).
    struct Windows {
        coeffs: Vec<f64>,
        ca: Vec<f64>,
        recon_sq: Vec<f64>,
        norms: Vec<f64>,
    }
    let windows: Vec<Windows> = levels
        .iter()
        .map(|map| {
            let (oh, ow) = valid_extent(map, th, tw).expect("filtered");
            let norms = window_norms(map, th, tw);
            let rows: Vec<(Vec<f64>, f64, f64)> = (0..oh * ow)
                .into_par_iter()
                .map(|pos| {
                    let (y, x) = (pos / ow, pos % ow);
                    let a: Vec<f64> = basis
                        .eigenvectors()
                        .iter()
                        .zip(&mean_proj)
                        .map(|(e, c)| window_dot(map, y, x, th, tw, e) - c)
                        .collect();
                    let ca: f64 = a.iter().zip(&mean_proj).map(|(x, y)| x * y).sum();
                    let aa: f64 = a.iter().map(|x| x * x).sum();
                    (a, ca, mean_sq + 2.0 * ca + aa)
                })
                .collect();
            let mut w = Windows {
                coeffs: Vec::with_capacity(rows.len() * k),
                ca: Vec::with_capacity(rows.len()),
                recon_sq: Vec::with_capacity(rows.len()),
                norms,
            };
            for (a, ca, r) in rows {
                w.coeffs.extend(a);
                w.ca.push(ca);
                w.recon_sq.push(r);
            }
            w
        })
        .collect();

    let out = (0..bank.base_count)
        .into_par_iter()
        .map(|base| {
            let mut best = f64::NEG_INFINITY;
            for ti in bank.group(base) {
                let (b, t_sq) = &coeffs[ti];
                let cb: f64 = b.iter().zip(&mean_proj).map(|(x, y)| x * y).sum();
                let tn = t_sq.max(0.0).sqrt();
                for w in &windows {
                    for (pos, a) in w.coeffs.chunks_exact(k).enumerate() {
                        let r = if bank.norms[ti] < NORM_EPS || w.norms[pos] < NORM_EPS {
                            0.0
                        } else {
                            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                            let d = mean_sq + w.ca[pos] + cb + ab;
                            cosine_with_norms(d, w.recon_sq[pos].max(0.0).sqrt(), tn)
                        };
                        if r > best {
                            best = r;
                        }
                    }
                }
            }
            best as f32
        })
        .collect();
    Ok(out)
}

/// PCA of the bank's template matrix (one row per template).
pub fn fit_template_pca(bank: &Layer2Bank, k: usize) -> Result<ReducedBasis> {
    let limit = bank.template_count().min(bank.template_dim());
    if k == 0 || k > limit {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={limit} for {} templates of dimension {}",
            bank.template_count(),
            bank.template_dim()
        )));
    }
    let rows: Vec<&[f32]> = (0..bank.template_count()).map(|i| bank.template(i)).collect();
    fit_basis(&rows, k)
}

/// How large image patches are cut and varied before becoming templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub crop_width: usize,
    pub crop_height: usize,
    /// In-plane rotations in degrees, applied in this order.
    pub rotations_deg: Vec<f64>,
    /// Also emit the horizontal mirror of every rotation.
    pub flip: bool,
    /// Random (seeded) crop position instead of the image centre.
    pub random_crop: bool,
}

impl PatchConfig {
    /// Central 104x80 crop, five rotations, each also mirrored.
    pub fn face() -> Self {
        Self {
            crop_width: 80,
            crop_height: 104,
            rotations_deg: vec![-18.0, -9.0, 0.0, 9.0, 18.0],
            flip: true,
            random_crop: false,
        }
    }

    /// Random 104x104 crop, five rotations, no mirror.
    pub fn animal() -> Self {
        Self {
            crop_width: 104,
            crop_height: 104,
            rotations_deg: vec![-18.0, -9.0, 0.0, 9.0, 18.0],
            flip: false,
            random_crop: true,
        }
    }

    pub fn variants_per_base(&self) -> usize {
        self.rotations_deg.len() * if self.flip { 2 } else { 1 }
    }
}

/// Large image patches grouped by source image.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Vec<Image>,
    pub provenance: Vec<Provenance>,
    pub base_count: usize,
    pub variants_per_base: usize,
}

/// Cuts one crop per image and expands it into its variants: every rotation
/// in order, then (if enabled) the mirror of every rotation in the same order.
pub fn prepare_patches<R: Rng>(
    images: &[Image],
    cfg: &PatchConfig,
    rng: &mut R,
) -> Result<PatchSet> {
    if images.is_empty() {
        return Err(Error::invalid("no source images for patch preparation"));
    }
    if cfg.rotations_deg.is_empty() || cfg.crop_width == 0 || cfg.crop_height == 0 {
        return Err(Error::invalid("patch config needs a crop size and rotations"));
    }
    let variants = cfg.variants_per_base();
    let mut patches = Vec::with_capacity(images.len() * variants);
    let mut provenance = Vec::with_capacity(images.len() * variants);
    for (id, img) in images.iter().enumerate() {
        if img.width() < cfg.crop_width || img.height() < cfg.crop_height {
            return Err(Error::TooSmall(format!(
                "image {id} is {}x{}, smaller than the {}x{} patch",
                img.width(),
                img.height(),
                cfg.crop_width,
                cfg.crop_height
            )));
        }
        let crop = if cfg.random_crop {
            let x0 = rng.random_range(0..=img.width() - cfg.crop_width);
            let y0 = rng.random_range(0..=img.height() - cfg.crop_height);
            img.crop(x0, y0, cfg.crop_width, cfg.crop_height)?
        } else {
            img.crop_center(cfg.crop_width, cfg.crop_height)?
        };
        let rotated: Vec<Image> = cfg.rotations_deg.iter().map(|a| crop.rotate(*a)).collect();
        for (angle, r) in cfg.rotations_deg.iter().zip(&rotated) {
            patches.push(r.clone());
            provenance.push(Provenance::Patch {
                patch_id: id,
                rotation_deg: *angle,
                flipped: false,
            });
        }
        if cfg.flip {
            for (angle, r) in cfg.rotations_deg.iter().zip(&rotated) {
                patches.push(r.flip_horizontal());
                provenance.push(Provenance::Patch {
                    patch_id: id,
                    rotation_deg: *angle,
                    flipped: true,
                });
            }
        }
    }
    Ok(PatchSet {
        patches,
        provenance,
        base_count: images.len(),
        variants_per_base: variants,
    })
}

/// Face-model patches: central 104x80 crop, 5 rotations x {as is, mirrored}.
pub fn prepare_face_patches(images: &[Image]) -> Result<PatchSet> {
    // The face layout never draws from the generator.
    let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    prepare_patches(images, &PatchConfig::face(), &mut unused)
}

/// Animal-model patches: seeded random 104x104 crop, 5 rotations.
pub fn prepare_animal_patches<R: Rng>(images: &[Image], rng: &mut R) -> Result<PatchSet> {
    prepare_patches(images, &PatchConfig::animal(), rng)
}

/// Applies the low-level feature function to every patch and groups the
/// results into a [`Layer2Bank`].
pub fn build_layer2_bank(
    patches: &PatchSet,
    low_level: impl Fn(&Image) -> Result<FeatureMap> + Sync,
) -> Result<Layer2Bank> {
    let maps = patches
        .patches
        .par_iter()
        .map(&low_level)
        .collect::<Result<Vec<_>>>()?;
    Layer2Bank::from_maps(&maps, patches.variants_per_base, patches.provenance.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{Pyramid, PyramidLevel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fm(h: usize, w: usize, z: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, z, data).unwrap()
    }

    fn single(map: FeatureMap) -> Pyramid<FeatureMap> {
        Pyramid::from_levels(vec![PyramidLevel { ratio: 1.0, map }]).unwrap()
    }

    fn naive_ndp(level: &FeatureMap, t: &FeatureMap) -> Vec<f64> {
        let (th, tw, _) = t.shape();
        let mut out = Vec::new();
        for y in 0..=level.height() - th {
            for x in 0..=level.width() - tw {
                let w = level.window(y, x, th, tw);
                let d: f64 = w.iter().zip(t.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
                let na = w.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let nb = t.data().iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                out.push(if na < 1e-12 || nb < 1e-12 { 0.0 } else { d / (na * nb) });
            }
        }
        out
    }

    #[test]
    fn normalized_dot_examples() {
        let v = [0.3f32, -1.2, 4.0];
        assert!((normalized_dot(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalized_dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((normalized_dot(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.70711).abs() < 1e-5);
        assert_eq!(normalized_dot(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            normalized_dot(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pooling_examples() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(pool(&v, PoolingDescriptor::Max).unwrap(), 3.0);
        assert_eq!(pool(&v, PoolingDescriptor::Mean).unwrap(), 2.0);
        assert!((pool(&v, PoolingDescriptor::Lp { p: 1.0 }).unwrap() - 6.0).abs() < 1e-12);
        assert!((pool(&v, PoolingDescriptor::Lp { p: 2.0 }).unwrap() - 3.7417).abs() < 1e-4);
        assert!(pool(&[], PoolingDescriptor::Max).is_err());
        assert!(pool(&[-1.0, 2.0], PoolingDescriptor::Lp { p: 2.0 }).is_err());
        assert!(pool(&v, PoolingDescriptor::Lp { p: 0.5 }).is_err());
        assert!(PoolingDescriptor::lp(f64::INFINITY).is_err());
    }

    #[test]
    fn pooling_parses() {
        assert_eq!("max".parse::<PoolingDescriptor>().unwrap(), PoolingDescriptor::Max);
        assert_eq!(
            "lp:4".parse::<PoolingDescriptor>().unwrap(),
            PoolingDescriptor::Lp { p: 4.0 }
        );
        assert!("lp:0.2".parse::<PoolingDescriptor>().is_err());
        assert!("median".parse::<PoolingDescriptor>().is_err());
    }

    fn book(id: usize, ts: Vec<Vec<f32>>) -> TemplateBook {
        let prov = (0..ts.len())
            .map(|i| Provenance::Other {
                label: i.to_string(),
            })
            .collect();
        TemplateBook::new(id, ts, prov).unwrap()
    }

    #[test]
    fn signature_examples() {
        let x = vec![0.2f32, 0.5, 0.9];
        let m = HwModule {
            book: book(0, vec![x.clone()]),
            pooling: PoolingDescriptor::Max,
        };
        assert!((signature(&x, &[m]).unwrap().0[0] - 1.0).abs() < 1e-12);

        let e1 = vec![1.0f32, 0.0];
        let e2 = vec![0.0f32, 1.0];
        let mods = vec![
            HwModule {
                book: book(0, vec![e1.clone()]),
                pooling: PoolingDescriptor::Max,
            },
            HwModule {
                book: book(1, vec![e2]),
                pooling: PoolingDescriptor::Max,
            },
        ];
        assert_eq!(signature(&e1, &mods).unwrap().0, vec![1.0, 0.0]);
        assert!(signature(&[1.0, 2.0, 3.0], &mods).is_err());
    }

    #[test]
    fn signature_cyclic_orbit() {
        // Orbit of [1,2,3] under cyclic shifts; the pooled set is the same
        // permutation-closed set of cosines for every shifted input.
        let orbit = vec![vec![1.0f32, 2.0, 3.0], vec![2.0, 3.0, 1.0], vec![3.0, 1.0, 2.0]];
        let m = vec![HwModule {
            book: book(0, orbit),
            pooling: PoolingDescriptor::Max,
        }];
        let a = signature(&[1.0, 2.0, 3.0], &m).unwrap();
        let b = signature(&[2.0, 3.0, 1.0], &m).unwrap();
        assert_eq!(a, b);
        assert!((a.0[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn template_book_validation() {
        assert!(TemplateBook::new(0, vec![], vec![]).is_err());
        let prov = vec![
            Provenance::Other { label: "a".into() },
            Provenance::Other { label: "b".into() },
        ];
        assert!(TemplateBook::new(0, vec![vec![1.0], vec![1.0, 2.0]], prov.clone()).is_err());
        assert!(TemplateBook::new(0, vec![vec![1.0], vec![0.0]], prov).is_err());
    }

    #[test]
    fn ndp_convolve_examples() {
        let level = fm(1, 3, 1, vec![1.0, 0.0, -1.0]);
        let t = fm(1, 2, 1, vec![1.0, 0.0]);
        let out = ndp_convolve(&level, &t).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);

        let level = fm(
            4,
            5,
            2,
            (0..40).map(|i| ((i * 37 % 11) as f32 - 5.0) / 5.0).collect(),
        );
        let t = FeatureMap::new(2, 3, 2, level.window(1, 2, 2, 3)).unwrap();
        let out = ndp_convolve(&level, &t).unwrap();
        assert!((out.get(1, 2, 0) - 1.0).abs() < 1e-6);

        assert!(ndp_convolve(&fm(1, 1, 1, vec![1.0]), &t).is_err());
        assert!(ndp_convolve(&fm(4, 4, 1, vec![1.0; 16]), &t).is_err());
    }

    #[test]
    fn ndp_convolve_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let level = fm(16, 16, 4, (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect());
        let t = fm(5, 5, 4, (0..100).map(|_| rng.random_range(-1.0..1.0)).collect());
        let out = ndp_convolve(&level, &t).unwrap();
        for (a, b) in out.data().iter().zip(naive_ndp(&level, &t)) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_layer2_hand_case() {
        // Windows [2,0] and [0,0]; variants [1,0] and [0,1].
        let bank = Layer2Bank::new(
            1,
            2,
            (1, 2, 1),
            vec![1.0, 0.0, 0.0, 1.0],
            vec![Provenance::Other { label: "a".into() }, Provenance::Other { label: "b".into() }],
        )
        .unwrap();
        let pyr = single(fm(1, 3, 1, vec![2.0, 0.0, 0.0]));
        assert_eq!(encode_layer2(&pyr, &bank).unwrap(), vec![1.0]);
    }

    #[test]
    fn encode_layer2_errors_and_level_skipping() {
        let bank = Layer2Bank::new(
            1,
            1,
            (2, 2, 1),
            vec![1.0, 0.0, 0.0, 1.0],
            vec![Provenance::Other { label: "a".into() }],
        )
        .unwrap();
        let tiny = single(fm(1, 1, 1, vec![1.0]));
        assert!(matches!(encode_layer2(&tiny, &bank), Err(Error::TooSmall(_))));
        let wrong_depth = single(fm(3, 3, 2, vec![1.0; 18]));
        assert!(encode_layer2(&wrong_depth, &bank).is_err());

        let two = Pyramid::from_levels(vec![
            PyramidLevel {
                ratio: 0.5,
                map: fm(1, 1, 1, vec![1.0]),
            },
            PyramidLevel {
                ratio: 1.0,
                map: fm(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]),
            },
        ])
        .unwrap();
        assert!((encode_layer2(&two, &bank).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reduced_full_rank_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = (2, 2, 3);
        let n = 30;
        let templates: Vec<f32> = (0..n * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prov = (0..n).map(|i| Provenance::Other { label: i.to_string() }).collect();
        let bank = Layer2Bank::new(10, 3, shape, templates, prov).unwrap();
        let basis = fit_template_pca(&bank, 12).unwrap();
        let pyr = single(fm(6, 7, 3, (0..126).map(|_| rng.random_range(-1.0..1.0)).collect()));
        let exact = encode_layer2(&pyr, &bank).unwrap();
        let reduced = encode_layer2_reduced(&pyr, &bank, &basis).unwrap();
        for (a, b) in exact.iter().zip(&reduced) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            assert!((-1.0..=1.0).contains(b));
        }
        let wrong = ReducedBasis::identity(5);
        assert!(matches!(
            encode_layer2_reduced(&pyr, &bank, &wrong),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn template_pca_spans_rank_one_set() {
        let base = [1.0f32, 2.0, -1.0, 0.5];
        let templates: Vec<f32> = (1..=6).flat_map(|s| base.map(|v| v * s as f32)).collect();
        let prov = (0..6).map(|i| Provenance::Other { label: i.to_string() }).collect();
        let bank = Layer2Bank::new(6, 1, (1, 4, 1), templates, prov).unwrap();
        let basis = fit_template_pca(&bank, 1).unwrap();
        for i in 0..6 {
            let t = bank.template(i);
            let r = basis.reconstruct(&basis.project(t).unwrap()).unwrap();
            for (a, b) in t.iter().zip(&r) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        assert!(fit_template_pca(&bank, 0).is_err());
        assert!(fit_template_pca(&bank, 5).is_err());
    }

    #[test]
    fn face_patch_layout() {
        let imgs: Vec<Image> = (0..3)
            .map(|s| {
                Image::from_fn(100, 120, |x, y| ((x * 13 + y * 7 + s * 5) % 17) as f32 / 17.0)
                    .unwrap()
            })
            .collect();
        let set = prepare_face_patches(&imgs).unwrap();
        assert_eq!(set.patches.len(), 30);
        assert_eq!(set.variants_per_base, 10);
        let crop = imgs[0].crop_center(80, 104).unwrap();
        assert_eq!(set.patches[2], crop);
        assert_eq!(set.patches[7], crop.flip_horizontal());
        assert_eq!(set.patches[7].flip_horizontal(), crop);
        assert!(matches!(
            set.provenance[7],
            Provenance::Patch { patch_id: 0, flipped: true, .. }
        ));
        let small = Image::constant(79, 200, 0.5).unwrap();
        assert!(prepare_face_patches(&[small]).is_err());
    }

    #[test]
    fn animal_patches_are_seeded() {
        let imgs: Vec<Image> = (0..2)
            .map(|s| {
                Image::from_fn(150, 130, |x, y| ((x * 3 + y * 11 + s) % 23) as f32 / 23.0)
                    .unwrap()
            })
            .collect();
        let a = prepare_animal_patches(&imgs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = prepare_animal_patches(&imgs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.patches.len(), 10);
        assert!(a.patches.iter().all(|p| p.width() == 104 && p.height() == 104));
        assert_eq!(a.patches, b.patches);
    }

    proptest::proptest! {
        #[test]
        fn normalized_dot_properties(
            x in proptest::collection::vec(-10.0f32..10.0, 1..20),
            scale_a in 0.1f32..5.0, scale_b in -5.0f32..-0.1,
        ) {
            let t: Vec<f32> = x.iter().rev().map(|v| v * 0.7 + 0.1).collect();
            let c = normalized_dot(&x, &t).unwrap();
            proptest::prop_assert!((-1.0..=1.0).contains(&c));
            proptest::prop_assert!((c - normalized_dot(&t, &x).unwrap()).abs() < 1e-12);
            let xs: Vec<f32> = x.iter().map(|v| v * scale_a).collect();
            let ts: Vec<f32> = t.iter().map(|v| v * scale_b).collect();
            proptest::prop_assert!((normalized_dot(&xs, &ts).unwrap() + c).abs() < 1e-5);
        }

        #[test]
        fn lp_tends_to_max(values in proptest::collection::vec(0.01f64..1.0, 1..10_000)) {
            // MAX <= LP <= n^(1/p) MAX; the 5% band holds while n^(1/64) <= 1.05.
            let max = pool(&values, PoolingDescriptor::Max).unwrap();
            let lp = pool(&values, PoolingDescriptor::Lp { p: 64.0 }).unwrap();
            let bound = (values.len() as f64).powf(1.0 / 64.0);
            proptest::prop_assert!(lp >= max * (1.0 - 1e-12));
            proptest::prop_assert!(lp <= max * bound * (1.0 + 1e-12));
            if values.len() <= 22 {
                proptest::prop_assert!((lp - max).abs() <= 0.05 * max + 1e-12);
            }
        }

        #[test]
        fn extra_levels_never_lower_layer2(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prov = (0..4).map(|i| Provenance::Other { label: i.to_string() }).collect();
            let bank = Layer2Bank::new(
                2, 2, (2, 2, 1),
                (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(), prov,
            ).unwrap();
            let small = fm(3, 3, 1, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
            let big = fm(4, 5, 1, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect());
            let one = single(big.clone());
            let both = Pyramid::from_levels(vec![
                PyramidLevel { ratio: 0.7, map: small },
                PyramidLevel { ratio: 1.0, map: big },
            ]).unwrap();
            let a = encode_layer2(&one, &bank).unwrap();
            let b = encode_layer2(&both, &bank).unwrap();
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!(y >= x);
            }
        }
    }
}
