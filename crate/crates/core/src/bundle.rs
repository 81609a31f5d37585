//! Model persistence: the `HWT1` tensor format and the model bundle
//! directory (a JSON manifest plus one tensor file per array).
//!
//! Tensor layout: ASCII magic `HWT1`, `u32` rank, `rank` x `u32` dims, then
//! the row-major `f32` payload; all little-endian.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    FilterBank, FilterKind, Hmax2Stage1, IntermediateTemplates, LowLevel, LowLevelConfig,
    LowLevelKind,
};
use crate::hwcore::{
    encode_layer2, encode_layer2_reduced, Layer2Bank, PoolingDescriptor, Provenance, ReducedBasis,
    TemplateBook,
};
use crate::imagecore::{build_pyramid, FeatureMap, Pyramid, PyramidLevel};
use crate::imagecore::Image;
use crate::io::{read_json, write_atomic, write_json};
use crate::temporal::{Layer2Encoder, Layer3Model};

pub const TENSOR_MAGIC: &[u8; 4] = b"HWT1";
pub const BUNDLE_FORMAT: &str = "hwt-bundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Pyramid ratios of the face model, smallest first.
pub const FACE_PYRAMID_RATIOS: [f64; 20] = [
    0.26, 0.28, 0.32, 0.36, 0.40, 0.44, 0.48, 0.52, 0.56, 0.60, 0.64, 0.68, 0.72, 0.76, 0.80,
    0.84, 0.88, 0.92, 0.96, 1.00,
];

/// A dense `f32` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses `bytes`; `origin` labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format(origin, r.to_string());
        if bytes.len() < 8 || &bytes[..4] != TENSOR_MAGIC {
            return Err(bad("missing HWT1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let rank = u32_at(4) as usize;
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err(bad("truncated dimensions"));
        }
        let dims: Vec<usize> = (0..rank).map(|i| u32_at(8 + 4 * i) as usize).collect();
        let n = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| bad("dimension product overflows"))?;
        if bytes.len() != header + 4 * n {
            return Err(bad(&format!(
                "payload is {} bytes, dims {:?} need {}",
                bytes.len() - header,
                dims,
                4 * n
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Layer-2 stage of a model: L(), pyramid, template bank and optional
/// reduced basis. Usable directly as the frame encoder for layer 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer2Model {
    pub low_level_config: LowLevelConfig,
    pub low_level: LowLevel,
    pub pyramid_ratios: Vec<f64>,
    /// Inputs are resized to this height first, keeping aspect.
    pub input_height: Option<usize>,
    pub bank: Layer2Bank,
    pub basis: Option<ReducedBasis>,
}

impl Layer2Model {
    /// Feature pyramid of `img`; levels too small for L() are skipped.
    pub fn feature_pyramid(&self, img: &Image) -> Result<Pyramid<FeatureMap>> {
        let img = match self.input_height {
            Some(h) if h != img.height() => img.resize_to_height(h)?,
            _ => img.clone(),
        };
        let pyr = build_pyramid(&img, &self.pyramid_ratios)?;
        let mut levels = Vec::with_capacity(pyr.len());
        for level in pyr.levels() {
            match self.low_level.extract(&level.map) {
                Ok(map) => levels.push(PyramidLevel {
                    ratio: level.ratio,
                    map,
                }),
                Err(Error::TooSmall(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if levels.is_empty() {
            return Err(Error::TooSmall(format!(
                "{}x{} input is too small for every pyramid level",
                img.width(),
                img.height()
            )));
        }
        Pyramid::from_levels(levels)
    }
}

impl Layer2Encoder for Layer2Model {
    fn encode(&self, img: &Image) -> Result<Vec<f32>> {
        let pyr = self.feature_pyramid(img)?;
        match &self.basis {
            Some(b) => encode_layer2_reduced(&pyr, &self.bank, b),
            None => encode_layer2(&pyr, &self.bank),
        }
    }
}

/// A persisted model: layer 2, optionally layer 3, and free-form build info
/// (seeds, inputs, counts).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub layer2: Layer2Model,
    pub layer3: Option<Layer3Model>,
    pub build_info: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBankMeta {
    pub kind: FilterKind,
    pub zero_mean: bool,
    pub unit_norm: bool,
    pub eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer2Meta {
    pub base_count: usize,
    pub variants_per_base: usize,
    pub template_shape: (usize, usize, usize),
    pub pooling: PoolingDescriptor,
    pub reduced_k: Option<usize>,
    pub provenance: Vec<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer3Meta {
    pub pooling: PoolingDescriptor,
    pub cell_sizes: Vec<usize>,
    pub provenance: Vec<Vec<Provenance>>,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: String,
    pub low_level: LowLevelConfig,
    pub pyramid_ratios: Vec<f64>,
    pub input_height: Option<usize>,
    pub filter_banks: BTreeMap<String, FilterBankMeta>,
    pub layer2: Layer2Meta,
    pub layer3: Option<Layer3Meta>,
    pub tensors: BTreeMap<String, TensorEntry>,
    pub build_info: serde_json::Value,
}

struct Writer {
    tensors: BTreeMap<String, (TensorEntry, Tensor)>,
    banks: BTreeMap<String, FilterBankMeta>,
}

impl Writer {
    fn put(&mut self, name: &str, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let t = Tensor::new(dims.clone(), data)?;
        let entry = TensorEntry {
            file: format!("{name}.hwt"),
            shape: dims,
        };
        self.tensors.insert(name.to_string(), (entry, t));
        Ok(())
    }

    fn put_bank(&mut self, name: &str, bank: &FilterBank) -> Result<()> {
        let (h, w, c) = bank.shape();
        self.put(name, vec![bank.len(), h, w, c], bank.filters().concat())?;
        self.banks.insert(
            name.to_string(),
            FilterBankMeta {
                kind: bank.kind(),
                zero_mean: bank.is_zero_mean(),
                unit_norm: bank.is_unit_norm(),
                eigenvalues: bank.eigenvalues().to_vec(),
            },
        );
        Ok(())
    }

    fn put_basis(&mut self, prefix: &str, b: &ReducedBasis) -> Result<()> {
        self.put(&format!("{prefix}.mean"), vec![b.dim()], b.mean().to_vec())?;
        self.put(&format!("{prefix}.vectors"), vec![b.k(), b.dim()], b.eigenvectors().concat())?;
        self.put(&format!("{prefix}.values"), vec![b.k()], b.eigenvalues().to_vec())
    }
}

struct Reader<'a> {
    dir: &'a Path,
    manifest: &'a BundleManifest,
}

impl Reader<'_> {
    fn get(&self, name: &str) -> Result<Tensor> {
        let entry = self.manifest.tensors.get(name).ok_or_else(|| {
            Error::format(self.dir.join(MANIFEST_FILE), format!("tensor {name} not declared"))
        })?;
        let path = self.dir.join(&entry.file);
        let t = Tensor::load(&path)?;
        if t.dims != entry.shape {
            return Err(Error::ModelMismatch(format!(
                "tensor {name} has shape {:?}, manifest declares {:?}",
                t.dims, entry.shape
            )));
        }
        Ok(t)
    }

    fn get_shaped(&self, name: &str, rank: usize) -> Result<Tensor> {
        let t = self.get(name)?;
        if t.dims.len() != rank {
            return Err(Error::ModelMismatch(format!(
                "tensor {name} has rank {}, expected {rank}",
                t.dims.len()
            )));
        }
        Ok(t)
    }

    fn rows(t: Tensor) -> Vec<Vec<f32>> {
        let n = t.dims[0];
        if n == 0 {
            return Vec::new();
        }
        let d = t.data.len() / n;
        t.data.chunks_exact(d.max(1)).map(<[f32]>::to_vec).collect()
    }

    fn bank(&self, name: &str) -> Result<FilterBank> {
        let meta = self.manifest.filter_banks.get(name).ok_or_else(|| {
            Error::format(self.dir.join(MANIFEST_FILE), format!("filter bank {name} not declared"))
        })?;
        let t = self.get_shaped(name, 4)?;
        let shape = (t.dims[1], t.dims[2], t.dims[3]);
        let bank = FilterBank::new(meta.kind, shape, Self::rows(t), meta.zero_mean, meta.unit_norm)
            .map_err(|e| Error::ModelMismatch(format!("filter bank {name}: {e}")))?;
        Ok(bank.with_eigenvalues(meta.eigenvalues.clone()))
    }

    fn basis(&self, prefix: &str) -> Result<ReducedBasis> {
        let mean = self.get_shaped(&format!("{prefix}.mean"), 1)?;
        let vectors = self.get_shaped(&format!("{prefix}.vectors"), 2)?;
        let values = self.get_shaped(&format!("{prefix}.values"), 1)?;
        if vectors.dims[1] != mean.dims[0] || vectors.dims[0] != values.dims[0] {
            return Err(Error::ModelMismatch(format!("basis {prefix} has inconsistent shapes")));
        }
        ReducedBasis::new(mean.data, Self::rows(vectors), values.data)
            .map_err(|e| Error::ModelMismatch(format!("basis {prefix}: {e}")))
    }
}

impl ModelBundle {
    /// Writes every tensor, then the manifest, each atomically.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let l2 = &self.layer2;
        let mut w = Writer {
            tensors: BTreeMap::new(),
            banks: BTreeMap::new(),
        };
        match &l2.low_level {
            LowLevel::Gabor(b) => w.put_bank("low.gabor", b)?,
            LowLevel::Hog(_) => {}
            LowLevel::Pca(b) => w.put_bank("low.pca", b)?,
            LowLevel::Hmax2 {
                stage1,
                templates,
                basis,
            } => {
                w.put_bank("low.hmax2.gabor", &stage1.gabor)?;
                w.put_bank("low.hmax2.pca", &stage1.pca)?;
                let s = templates.size();
                w.put(
                    "low.hmax2.templates",
                    vec![templates.count(), s, s, templates.depth()],
                    templates.raw().to_vec(),
                )?;
                w.put_basis("low.hmax2.basis", basis)?;
            }
        }
        let (h, wd, z) = l2.bank.template_shape();
        w.put(
            "l2.templates",
            vec![l2.bank.template_count(), h, wd, z],
            l2.bank.raw_templates().to_vec(),
        )?;
        if let Some(b) = &l2.basis {
            w.put_basis("l2.basis", b)?;
        }
        let layer3 = match &self.layer3 {
            Some(m) => {
                let data: Vec<f32> = m.cells().iter().flat_map(|c| c.templates().concat()).collect();
                let total: usize = m.cells().iter().map(TemplateBook::len).sum();
                w.put("l3.templates", vec![total, m.dim()], data)?;
                Some(Layer3Meta {
                    pooling: m.pooling(),
                    cell_sizes: m.cells().iter().map(TemplateBook::len).collect(),
                    provenance: m.cells().iter().map(|c| c.provenance().to_vec()).collect(),
                })
            }
            None => None,
        };
        let manifest = BundleManifest {
            format_version: BUNDLE_FORMAT.to_string(),
            low_level: l2.low_level_config.clone(),
            pyramid_ratios: l2.pyramid_ratios.clone(),
            input_height: l2.input_height,
            filter_banks: w.banks,
            layer2: Layer2Meta {
                base_count: l2.bank.base_count(),
                variants_per_base: l2.bank.variants_per_base(),
                template_shape: l2.bank.template_shape(),
                pooling: PoolingDescriptor::Max,
                reduced_k: l2.basis.as_ref().map(ReducedBasis::k),
                provenance: l2.bank.provenance().to_vec(),
            },
            layer3,
            tensors: w.tensors.iter().map(|(k, (e, _))| (k.clone(), e.clone())).collect(),
            build_info: self.build_info.clone(),
        };
        for (entry, t) in w.tensors.values() {
            t.save(dir.join(&entry.file))?;
        }
        write_json(dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn read_manifest(dir: impl AsRef<Path>) -> Result<BundleManifest> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let m: BundleManifest = read_json(&path)?;
        if m.format_version != BUNDLE_FORMAT {
            return Err(Error::ModelMismatch(format!(
                "bundle format {:?}, this build reads {BUNDLE_FORMAT:?}",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Loads and checks every declared tensor against the manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Self::read_manifest(dir)?;
        let r = Reader {
            dir,
            manifest: &manifest,
        };
        let cfg = &manifest.low_level;
        let low_level = match cfg.kind {
            LowLevelKind::Gabor => LowLevel::Gabor(r.bank("low.gabor")?),
            LowLevelKind::Hog => LowLevel::Hog(cfg.hog.clone()),
            LowLevelKind::Pca => LowLevel::Pca(r.bank("low.pca")?),
            LowLevelKind::Hmax2 => {
                let stage1 = Hmax2Stage1::new(r.bank("low.hmax2.gabor")?, r.bank("low.hmax2.pca")?)
                    .map_err(|e| Error::ModelMismatch(e.to_string()))?;
                let t = r.get_shaped("low.hmax2.templates", 4)?;
                if t.dims[1] != t.dims[2] {
                    return Err(Error::ModelMismatch("intermediate templates must be square".into()));
                }
                let templates = IntermediateTemplates::new(t.dims[1], t.dims[3], t.data)
                    .map_err(|e| Error::ModelMismatch(e.to_string()))?;
                LowLevel::Hmax2 {
                    stage1,
                    templates,
                    basis: r.basis("low.hmax2.basis")?,
                }
            }
        };
        let meta = &manifest.layer2;
        let t = r.get_shaped("l2.templates", 4)?;
        let shape = (t.dims[1], t.dims[2], t.dims[3]);
        if shape != meta.template_shape || t.dims[0] != meta.base_count * meta.variants_per_base {
            return Err(Error::ModelMismatch(format!(
                "layer-2 tensor {:?} disagrees with {} x {} templates of shape {:?}",
                t.dims, meta.base_count, meta.variants_per_base, meta.template_shape
            )));
        }
        let bank = Layer2Bank::new(
            meta.base_count,
            meta.variants_per_base,
            shape,
            t.data,
            meta.provenance.clone(),
        )
        .map_err(|e| Error::ModelMismatch(e.to_string()))?;
        let basis = match meta.reduced_k {
            Some(k) => {
                let b = r.basis("l2.basis")?;
                if b.k() != k || b.dim() != bank.template_dim() {
                    return Err(Error::ModelMismatch(format!(
                        "layer-2 basis is {}x{}, manifest expects k = {k} over {}",
                        b.k(),
                        b.dim(),
                        bank.template_dim()
                    )));
                }
                Some(b)
            }
            None => None,
        };
        let layer3 = match &manifest.layer3 {
            Some(m3) => {
                let t = r.get_shaped("l3.templates", 2)?;
                let total: usize = m3.cell_sizes.iter().sum();
                if t.dims[0] != total || m3.provenance.len() != m3.cell_sizes.len() {
                    return Err(Error::ModelMismatch(format!(
                        "layer-3 tensor has {} rows, cells declare {total}",
                        t.dims[0]
                    )));
                }
                let mut rows = Reader::rows(t).into_iter();
                let cells = m3
                    .cell_sizes
                    .iter()
                    .zip(&m3.provenance)
                    .enumerate()
                    .map(|(i, (n, prov))| {
                        TemplateBook::new(i, rows.by_ref().take(*n).collect(), prov.clone())
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::ModelMismatch(e.to_string()))?;
                Some(Layer3Model::new(cells, m3.pooling).map_err(|e| Error::ModelMismatch(e.to_string()))?)
            }
            None => None,
        };
        Ok(Self {
            layer2: Layer2Model {
                low_level_config: manifest.low_level.clone(),
                low_level,
                pyramid_ratios: manifest.pyramid_ratios.clone(),
                input_height: manifest.input_height,
                bank,
                basis,
            },
            layer3,
            build_info: manifest.build_info.clone(),
        })
    }
}

/// Paths of every file a bundle directory should contain.
pub fn bundle_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let m = ModelBundle::read_manifest(dir)?;
    let mut out = vec![dir.join(MANIFEST_FILE)];
    out.extend(m.tensors.values().map(|e| dir.join(&e.file)));
    Ok(out)
}
