//! Low-level feature functions: Gabor bank, HOG, eigen-patch PCA and the
//! two-stage color feature, each followed by its pooling step.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::hwcore::{cosine_with_norms, valid_extent, window_dot, window_norms, ReducedBasis};
use crate::imagecore::{FeatureMap, Image};
use crate::linalg::{self, norm_sq};

/// Tolerance for the zero-mean and unit-norm filter flags.
pub const FILTER_TOLERANCE: f64 = 1e-6;
/// Epsilon added to the HOG cell norm.
pub const HOG_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Gabor,
    Eigenpatch,
}

/// Kernels of one shared `h x w x c` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    kind: FilterKind,
    shape: (usize, usize, usize),
    filters: Vec<Vec<f32>>,
    zero_mean: bool,
    unit_norm: bool,
    eigenvalues: Vec<f64>,
}

impl FilterBank {
    /// Validates shape and, when flagged, zero mean and unit norm.
    pub fn new(
        kind: FilterKind,
        shape: (usize, usize, usize),
        filters: Vec<Vec<f32>>,
        zero_mean: bool,
        unit_norm: bool,
    ) -> Result<Self> {
        let (h, w, c) = shape;
        if filters.is_empty() || h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid("filter bank needs filters of positive size"));
        }
        for (i, f) in filters.iter().enumerate() {
            check_dims(h * w * c, f.len())?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("filter {i} has non-finite values")));
            }
            let mean = f.iter().map(|v| *v as f64).sum::<f64>() / f.len() as f64;
            if zero_mean && mean.abs() > FILTER_TOLERANCE {
                return Err(Error::invalid(format!("filter {i} has mean {mean}")));
            }
            let norm = norm_sq(f).sqrt();
            if unit_norm && (norm - 1.0).abs() > FILTER_TOLERANCE {
                return Err(Error::invalid(format!("filter {i} has norm {norm}")));
            }
        }
        Ok(Self {
            kind,
            shape,
            filters,
            zero_mean,
            unit_norm,
            eigenvalues: Vec::new(),
        })
    }

    /// Attaches per-filter variances, as stored by PCA fitting.
    pub fn with_eigenvalues(mut self, eigenvalues: Vec<f64>) -> Self {
        self.eigenvalues = eigenvalues;
        self
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn filters(&self) -> &[Vec<f32>] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn is_zero_mean(&self) -> bool {
        self.zero_mean
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    /// Variance along each filter, for banks fit by PCA; empty otherwise.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub orientations: usize,
    pub phases: usize,
    pub kernel_size: usize,
    pub wavelength: f64,
    pub sigma: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            orientations: 8,
            phases: 2,
            kernel_size: 7,
            wavelength: 4.0,
            sigma: 2.5,
        }
    }
}

impl GaborParams {
    pub fn filter_count(&self) -> usize {
        self.orientations * self.phases
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HogParams {
    pub cell_size: usize,
    pub bins: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            bins: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaParams {
    pub patch_size: usize,
    pub filter_count: usize,
    pub training_patches: usize,
}

impl Default for PcaParams {
    fn default() -> Self {
        Self {
            patch_size: 8,
            filter_count: 48,
            training_patches: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hmax2Params {
    pub gabor: GaborParams,
    pub pca: PcaParams,
    /// Stage-1 depth; must equal 3 x (Gabor filters + PCA filters).
    pub thickness: usize,
    pub template_count: usize,
    pub template_size: usize,
    pub reduced_depth: usize,
}

impl Default for Hmax2Params {
    fn default() -> Self {
        Self {
            gabor: GaborParams::default(),
            pca: PcaParams::default(),
            thickness: 192,
            template_count: 4000,
            template_size: 5,
            reduced_depth: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowLevelKind {
    Gabor,
    Hog,
    Pca,
    Hmax2,
}

/// Which low-level function to use and the parameters of every kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowLevelConfig {
    pub kind: LowLevelKind,
    #[serde(default)]
    pub gabor: GaborParams,
    #[serde(default)]
    pub hog: HogParams,
    #[serde(default)]
    pub pca: PcaParams,
    #[serde(default)]
    pub hmax2: Hmax2Params,
}

impl LowLevelConfig {
    pub fn new(kind: LowLevelKind) -> Self {
        Self {
            kind,
            gabor: GaborParams::default(),
            hog: HogParams::default(),
            pca: PcaParams::default(),
            hmax2: Hmax2Params::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = |p: &GaborParams| {
            if p.orientations == 0 || p.phases == 0 || p.kernel_size == 0 {
                return Err(Error::invalid("Gabor counts must be at least 1"));
            }
            if !(p.wavelength > 0.0 && p.sigma > 0.0) {
                return Err(Error::invalid("Gabor wavelength and sigma must be positive"));
            }
            Ok(())
        };
        let pc = |p: &PcaParams| {
            if p.patch_size == 0 || p.filter_count == 0 || p.training_patches == 0 {
                return Err(Error::invalid("PCA counts must be at least 1"));
            }
            if p.filter_count > p.patch_size * p.patch_size {
                return Err(Error::invalid("more PCA filters than patch dimensions"));
            }
            Ok(())
        };
        g(&self.gabor)?;
        pc(&self.pca)?;
        if self.hog.cell_size < 2 || self.hog.bins == 0 {
            return Err(Error::invalid("HOG needs cell size >= 2 and at least one bin"));
        }
        let h = &self.hmax2;
        g(&h.gabor)?;
        pc(&h.pca)?;
        if h.template_count == 0 || h.template_size == 0 || h.reduced_depth == 0 {
            return Err(Error::invalid("two-stage counts must be at least 1"));
        }
        let depth = 3 * (h.gabor.filter_count() + h.pca.filter_count);
        if depth != h.thickness {
            return Err(Error::invalid(format!(
                "stage-1 thickness {} does not match 3 x ({} + {}) = {depth}",
                h.thickness,
                h.gabor.filter_count(),
                h.pca.filter_count
            )));
        }
        if h.reduced_depth > h.template_count {
            return Err(Error::invalid("reduced depth exceeds template count"));
        }
        Ok(())
    }
}

fn normalize_filter(mut f: Vec<f64>, zero_mean: bool) -> Option<Vec<f32>> {
    if zero_mean {
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        f.iter_mut().for_each(|v| *v -= mean);
    }
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 1e-12).then(|| f.iter().map(|v| (v / norm) as f32).collect())
}

/// Zero-mean, unit-norm Gabor kernels, orientation-major then phase
/// (`theta = o pi / orientations`, `phase = p pi / 2`).
pub fn gabor_bank(p: &GaborParams) -> Result<FilterBank> {
    if p.orientations == 0 || p.phases == 0 || p.kernel_size == 0 {
        return Err(Error::invalid("Gabor counts must be at least 1"));
    }
    let g = p.kernel_size;
    let c = (g as f64 - 1.0) / 2.0;
    let mut filters = Vec::with_capacity(p.filter_count());
    for o in 0..p.orientations {
        let theta = o as f64 * PI / p.orientations as f64;
        let (s, co) = theta.sin_cos();
        for ph in 0..p.phases {
            let phase = ph as f64 * PI / 2.0;
            let mut f = Vec::with_capacity(g * g);
            for y in 0..g {
                for x in 0..g {
                    let (dx, dy) = (x as f64 - c, y as f64 - c);
                    let u = dx * co + dy * s;
                    let env = (-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma)).exp();
                    f.push(env * (2.0 * PI * u / p.wavelength + phase).cos());
                }
            }
            let f = normalize_filter(f, true).ok_or_else(|| {
                Error::invalid(format!("Gabor filter at orientation {o}, phase {ph} vanishes"))
            })?;
            filters.push(f);
        }
    }
    FilterBank::new(FilterKind::Gabor, (g, g, 1), filters, true, true)
}

fn require_gray(img: &Image, what: &str) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::invalid(format!("{what} takes a grayscale image")));
    }
    Ok(())
}

/// Valid-region correlation of `img` with every filter; depth = filter count.
pub fn convolve_valid(img: &Image, bank: &FilterBank) -> Result<FeatureMap> {
    let (fh, fw, fc) = bank.shape();
    check_dims(fc, img.channels())?;
    if img.height() < fh || img.width() < fw {
        return Err(Error::TooSmall(format!(
            "{}x{} image is smaller than the {fh}x{fw} kernel",
            img.width(),
            img.height()
        )));
    }
    let map = FeatureMap::from_image(img);
    let (oh, ow) = valid_extent(&map, fh, fw).expect("size checked");
    let k = bank.len();
    let rows: Vec<Vec<f32>> = (0..oh)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(ow * k);
            for x in 0..ow {
                for f in bank.filters() {
                    row.push(window_dot(&map, y, x, fh, fw, f) as f32);
                }
            }
            row
        })
        .collect();
    FeatureMap::new(oh, ow, k, rows.concat())
}

/// Per-channel max over disjoint 2x2 blocks; odd trailing row/column dropped.
pub fn maxpool_2x2(fm: &FeatureMap) -> Result<FeatureMap> {
    let (h, w, z) = fm.shape();
    if h < 2 || w < 2 {
        return Err(Error::TooSmall(format!("{h}x{w} map cannot be 2x2 pooled")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow * z);
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..z {
                let m = fm
                    .get(2 * y, 2 * x, c)
                    .max(fm.get(2 * y, 2 * x + 1, c))
                    .max(fm.get(2 * y + 1, 2 * x, c))
                    .max(fm.get(2 * y + 1, 2 * x + 1, c));
                out.push(m);
            }
        }
    }
    FeatureMap::new(oh, ow, z, out)
}

/// Gabor bank responses followed by 2x2 max pooling.
pub fn gabor_features(img: &Image, p: &GaborParams) -> Result<FeatureMap> {
    require_gray(img, "Gabor filtering")?;
    gabor_features_with(img, &gabor_bank(p)?)
}

fn gabor_features_with(img: &Image, bank: &FilterBank) -> Result<FeatureMap> {
    maxpool_2x2(&convolve_valid(img, bank)?)
}

/// Histograms of unsigned gradient orientation per `cell x cell` block,
/// soft-binned between the two nearest bin centres and L2-normalized.
pub fn hog_features(img: &Image, p: &HogParams) -> Result<FeatureMap> {
    require_gray(img, "HOG")?;
    if p.cell_size < 2 || p.bins == 0 {
        return Err(Error::invalid("HOG needs cell size >= 2 and at least one bin"));
    }
    let (w, h) = (img.width(), img.height());
    if w < p.cell_size || h < p.cell_size {
        return Err(Error::TooSmall(format!(
            "{w}x{h} image is smaller than one {} px cell",
            p.cell_size
        )));
    }
    let (ch, cw) = (h / p.cell_size, w / p.cell_size);
    let px = |x: isize, y: isize| {
        img.get(
            x.clamp(0, w as isize - 1) as usize,
            y.clamp(0, h as isize - 1) as usize,
            0,
        ) as f64
    };
    let bin_width = PI / p.bins as f64;
    let mut hist = vec![0f64; ch * cw * p.bins];
    for y in 0..ch * p.cell_size {
        for x in 0..cw * p.cell_size {
            let (xi, yi) = (x as isize, y as isize);
            let gx = px(xi + 1, yi) - px(xi - 1, yi);
            let gy = px(xi, yi + 1) - px(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(PI);
            let pos = theta / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(p.bins as isize) as usize;
            let b1 = (b0 + 1) % p.bins;
            let base = ((y / p.cell_size) * cw + x / p.cell_size) * p.bins;
            hist[base + b0] += mag * (1.0 - frac);
            hist[base + b1] += mag * frac;
        }
    }
    let data = hist
        .chunks_exact(p.bins)
        .flat_map(|cell| {
            let n = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
            cell.iter().map(move |v| (v / (n + HOG_EPSILON)) as f32).collect::<Vec<_>>()
        })
        .collect();
    FeatureMap::new(ch, cw, p.bins, data)
}

/// Top-`k` principal axes of flattened patches of shape `(h, w, c)`, each
/// a unit-norm filter. Eigenvalues are kept on the bank.
pub fn pca_fit_filters(
    patches: &[&[f32]],
    shape: (usize, usize, usize),
    k: usize,
) -> Result<FilterBank> {
    let dim = shape.0 * shape.1 * shape.2;
    for p in patches {
        check_dims(dim, p.len())?;
    }
    let pca = linalg::fit_pca(patches, k)?;
    let filters = pca
        .components
        .iter()
        .map(|c| c.iter().map(|v| *v as f32).collect())
        .collect();
    Ok(FilterBank::new(FilterKind::Eigenpatch, shape, filters, false, true)?
        .with_eigenvalues(pca.eigenvalues))
}

/// Samples `patch_size^2` grayscale patches at random positions, removes each
/// patch's mean and fits zero-mean eigen-patch filters.
pub fn fit_eigenpatch_bank<R: Rng>(
    images: &[Image],
    p: &PcaParams,
    rng: &mut R,
) -> Result<FilterBank> {
    let s = p.patch_size;
    let usable: Vec<Image> = images
        .iter()
        .map(Image::to_grayscale)
        .filter(|i| i.width() >= s && i.height() >= s)
        .collect();
    if usable.is_empty() {
        return Err(Error::TooSmall(format!(
            "no training image holds an {s}x{s} patch"
        )));
    }
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(p.training_patches);
    for _ in 0..p.training_patches {
        let img = &usable[rng.random_range(0..usable.len())];
        let x0 = rng.random_range(0..=img.width() - s);
        let y0 = rng.random_range(0..=img.height() - s);
        let mut patch = Vec::with_capacity(s * s);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                patch.push(img.get(x, y, 0));
            }
        }
        let mean = patch.iter().map(|v| *v as f64).sum::<f64>() / patch.len() as f64;
        rows.push(patch.iter().map(|v| (*v as f64 - mean) as f32).collect());
    }
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let fitted = pca_fit_filters(&refs, (s, s, 1), p.filter_count)?;
    let filters = fitted
        .filters()
        .iter()
        .map(|f| {
            normalize_filter(f.iter().map(|v| *v as f64).collect(), true)
                .ok_or_else(|| Error::Degenerate("eigen-patch lies along the DC direction".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(
        FilterBank::new(FilterKind::Eigenpatch, (s, s, 1), filters, true, true)?
            .with_eigenvalues(fitted.eigenvalues().to_vec()),
    )
}

/// `|valid convolution with eigen-patches|` followed by 2x2 max pooling.
pub fn pca_features(img: &Image, bank: &FilterBank) -> Result<FeatureMap> {
    require_gray(img, "PCA features")?;
    let mut fm = convolve_valid(img, bank)?;
    fm.data_mut().iter_mut().for_each(|v| *v = v.abs());
    maxpool_2x2(&fm)
}

/// Stage-1 filters of the two-stage color feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Hmax2Stage1 {
    pub gabor: FilterBank,
    pub pca: FilterBank,
}

impl Hmax2Stage1 {
    pub fn new(gabor: FilterBank, pca: FilterBank) -> Result<Self> {
        if gabor.shape().2 != 1 || pca.shape().2 != 1 {
            return Err(Error::invalid("stage-1 filters act on one channel"));
        }
        Ok(Self { gabor, pca })
    }

    pub fn thickness(&self) -> usize {
        3 * (self.gabor.len() + self.pca.len())
    }

    /// Per color channel: Gabor block then PCA block, cropped top-left to the
    /// smallest common size and concatenated along depth.
    pub fn apply(&self, img: &Image) -> Result<FeatureMap> {
        if img.channels() != 3 {
            return Err(Error::invalid("two-stage features take a color image"));
        }
        let mut maps = Vec::with_capacity(6);
        for c in 0..3 {
            let plane = img.channel(c)?;
            maps.push(gabor_features_with(&plane, &self.gabor)?);
            maps.push(pca_features(&plane, &self.pca)?);
        }
        let h = maps.iter().map(|m| m.height()).min().unwrap_or(0);
        let w = maps.iter().map(|m| m.width()).min().unwrap_or(0);
        let cropped = maps
            .iter()
            .map(|m| m.crop(h, w))
            .collect::<Result<Vec<_>>>()?;
        FeatureMap::concat_depth(&cropped)
    }
}

/// Stage-2 templates: `count` windows of `size x size x depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediateTemplates {
    size: usize,
    depth: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl IntermediateTemplates {
    pub fn new(size: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        let dim = size * depth;
        if dim == 0 || data.is_empty() || data.len() % (dim * size) != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form {size}x{size}x{depth} templates",
                data.len()
            )));
        }
        let norms: Vec<f64> = data.chunks_exact(size * dim).map(|t| norm_sq(t).sqrt()).collect();
        if norms.iter().any(|n| *n <= 0.0) {
            return Err(Error::invalid("intermediate templates must have non-zero norm"));
        }
        Ok(Self {
            size,
            depth,
            data,
            norms,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn count(&self) -> usize {
        self.norms.len()
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn template(&self, i: usize) -> &[f32] {
        let d = self.size * self.size * self.depth;
        &self.data[i * d..(i + 1) * d]
    }
}

/// Draws `count` non-zero stage-1 windows from random images and positions.
pub fn sample_intermediate_templates<R: Rng>(
    images: &[Image],
    stage1: &Hmax2Stage1,
    size: usize,
    count: usize,
    rng: &mut R,
) -> Result<IntermediateTemplates> {
    if count == 0 || size == 0 {
        return Err(Error::invalid("template count and size must be at least 1"));
    }
    if images.is_empty() {
        return Err(Error::invalid("no images to sample templates from"));
    }
    let maps: Vec<FeatureMap> = images
        .par_iter()
        .map(|i| stage1.apply(i))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|m| m.height() >= size && m.width() >= size)
        .collect();
    if maps.is_empty() {
        return Err(Error::TooSmall(format!(
            "no stage-1 map holds a {size}x{size} window"
        )));
    }
    let budget = 10 * count + 100;
    let mut data = Vec::new();
    let mut found = 0;
    for _ in 0..budget {
        if found == count {
            break;
        }
        let m = &maps[rng.random_range(0..maps.len())];
        let y = rng.random_range(0..=m.height() - size);
        let x = rng.random_range(0..=m.width() - size);
        let w = m.window(y, x, size, size);
        if norm_sq(&w) > 0.0 {
            data.extend(w);
            found += 1;
        }
    }
    if found < count {
        return Err(Error::SamplingExhausted(format!(
            "found {found} of {count} non-zero windows in {budget} draws"
        )));
    }
    IntermediateTemplates::new(size, stage1.thickness(), data)
}

/// Normalized-dot-product responses against every intermediate template at
/// every valid offset; depth = template count, values in [-1, 1].
pub fn hmax2_stage2(stage1_map: &FeatureMap, templates: &IntermediateTemplates) -> Result<FeatureMap> {
    let s = templates.size();
    if stage1_map.depth() != templates.depth() {
        return Err(Error::ModelMismatch(format!(
            "templates of depth {} do not fit a stage-1 map of depth {}",
            templates.depth(),
            stage1_map.depth()
        )));
    }
    let (oh, ow) = valid_extent(stage1_map, s, s).ok_or_else(|| {
        Error::TooSmall(format!(
            "{}x{} stage-1 map cannot hold a {s}x{s} template",
            stage1_map.height(),
            stage1_map.width()
        ))
    })?;
    let norms = window_norms(stage1_map, s, s);
    let n = templates.count();
    let data: Vec<f32> = (0..oh * ow)
        .into_par_iter()
        .flat_map_iter(|pos| {
            let (y, x) = (pos / ow, pos % ow);
            let wn = norms[pos];
            (0..n).map(move |j| {
                let d = window_dot(stage1_map, y, x, s, s, templates.template(j));
                cosine_with_norms(d, wn, templates.norms[j]) as f32
            })
        })
        .collect();
    FeatureMap::new(oh, ow, n, data)
}

/// Projects every cell's depth vector onto `basis`.
pub fn project_depth(fm: &FeatureMap, basis: &ReducedBasis) -> Result<FeatureMap> {
    if basis.dim() != fm.depth() {
        return Err(Error::ModelMismatch(format!(
            "basis of dimension {} does not match depth {}",
            basis.dim(),
            fm.depth()
        )));
    }
    let data: Vec<f32> = fm
        .data()
        .par_chunks_exact(fm.depth())
        .map(|v| basis.project(v))
        .collect::<Result<Vec<_>>>()?
        .concat();
    FeatureMap::new(fm.height(), fm.width(), basis.k(), data)
}

/// Stage 1, stage-2 normalized-dot-product convolution, 2x2 max pooling and
/// projection onto `basis` over the template dimension.
pub fn hmax2_features(
    img: &Image,
    stage1: &Hmax2Stage1,
    templates: &IntermediateTemplates,
    basis: Option<&ReducedBasis>,
) -> Result<FeatureMap> {
    let basis = basis.ok_or_else(|| Error::invalid("two-stage features need a reduced basis"))?;
    let pooled = maxpool_2x2(&hmax2_stage2(&stage1.apply(img)?, templates)?)?;
    project_depth(&pooled, basis)
}

/// Fits the template-dimension basis on pooled stage-2 vectors of `images`,
/// using at most `max_rows` evenly strided cells.
pub fn fit_hmax2_basis(
    images: &[Image],
    stage1: &Hmax2Stage1,
    templates: &IntermediateTemplates,
    k: usize,
    max_rows: usize,
) -> Result<ReducedBasis> {
    let maps = images
        .par_iter()
        .map(|i| maxpool_2x2(&hmax2_stage2(&stage1.apply(i)?, templates)?))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f32]> = maps
        .iter()
        .flat_map(|m| m.data().chunks_exact(m.depth()))
        .collect();
    let stride = rows.len().div_ceil(max_rows.max(1)).max(1);
    let picked: Vec<&[f32]> = rows.into_iter().step_by(stride).collect();
    crate::hwcore::fit_basis(&picked, k)
}

/// A fitted low-level function L(), ready to apply to images.
#[derive(Clone, Debug, PartialEq)]
pub enum LowLevel {
    Gabor(FilterBank),
    Hog(HogParams),
    Pca(FilterBank),
    Hmax2 {
        stage1: Hmax2Stage1,
        templates: IntermediateTemplates,
        basis: ReducedBasis,
    },
}

impl LowLevel {
    pub fn kind(&self) -> LowLevelKind {
        match self {
            LowLevel::Gabor(_) => LowLevelKind::Gabor,
            LowLevel::Hog(_) => LowLevelKind::Hog,
            LowLevel::Pca(_) => LowLevelKind::Pca,
            LowLevel::Hmax2 { .. } => LowLevelKind::Hmax2,
        }
    }

    /// Applies L(). Gray kinds convert color input to grayscale; the
    /// two-stage kind replicates grayscale input to three channels.
    pub fn extract(&self, img: &Image) -> Result<FeatureMap> {
        match self {
            LowLevel::Gabor(bank) => gabor_features_with(&img.to_grayscale(), bank),
            LowLevel::Hog(p) => hog_features(&img.to_grayscale(), p),
            LowLevel::Pca(bank) => pca_features(&img.to_grayscale(), bank),
            LowLevel::Hmax2 {
                stage1,
                templates,
                basis,
            } => {
                let rgb = if img.channels() == 3 {
                    img.clone()
                } else {
                    gray_to_rgb(img)?
                };
                hmax2_features(&rgb, stage1, templates, Some(basis))
            }
        }
    }
}

fn gray_to_rgb(img: &Image) -> Result<Image> {
    let data = img.data().iter().flat_map(|v| [*v, *v, *v]).collect();
    Image::new(img.width(), img.height(), 3, data)
}

/// Fits L() from `cfg`. PCA and two-stage kinds draw training data from
/// `images` using `rng`.
pub fn fit_low_level<R: Rng>(
    cfg: &LowLevelConfig,
    images: &[Image],
    rng: &mut R,
) -> Result<LowLevel> {
    cfg.validate()?;
    match cfg.kind {
        LowLevelKind::Gabor => Ok(LowLevel::Gabor(gabor_bank(&cfg.gabor)?)),
        LowLevelKind::Hog => Ok(LowLevel::Hog(cfg.hog.clone())),
        LowLevelKind::Pca => Ok(LowLevel::Pca(fit_eigenpatch_bank(images, &cfg.pca, rng)?)),
        LowLevelKind::Hmax2 => {
            let h = &cfg.hmax2;
            let stage1 = Hmax2Stage1::new(
                gabor_bank(&h.gabor)?,
                fit_eigenpatch_bank(images, &h.pca, rng)?,
            )?;
            let rgb = images
                .iter()
                .map(|i| if i.channels() == 3 { Ok(i.clone()) } else { gray_to_rgb(i) })
                .collect::<Result<Vec<_>>>()?;
            let templates =
                sample_intermediate_templates(&rgb, &stage1, h.template_size, h.template_count, rng)?;
            let basis = fit_hmax2_basis(&rgb, &stage1, &templates, h.reduced_depth, 20_000)?;
            Ok(LowLevel::Hmax2 {
                stage1,
                templates,
                basis,
            })
        }
    }
}
