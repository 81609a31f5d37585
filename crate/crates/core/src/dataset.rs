//! On-disk layouts: video manifests, image lists and synthetic datasets.
//!
//! A dataset directory holds
//! `manifest.json` (generation parameters), `videos.json` (a [`VideoManifest`]),
//! `frames/<video>/<index>.png`, `images/<name>.png`, `images.csv`
//! (`name,path,identity`), `pairs_train.csv` and `pairs_test.csv`.
//! Relative paths inside manifests resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{PairSet, Split};
use crate::imagecore::Image;
use crate::io::{read_json, write_atomic, write_json};
use crate::synth::{gen_dataset, SynthConfig, SynthDataset};
use crate::temporal::FrameSequence;

pub const SYNTH_FORMAT: &str = "hwt-synth/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub fps: f64,
    pub frames: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub entries: Vec<VideoEntry>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl VideoManifest {
    /// Loads and validates: fps positive, ids unique, every frame present.
    /// Returned paths are resolved.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: VideoManifest = read_json(path)?;
        let base = base_dir(path);
        let mut seen = std::collections::BTreeSet::new();
        for e in &mut m.entries {
            if !(e.fps.is_finite() && e.fps > 0.0) {
                return Err(Error::format(path, format!("video {}: fps must be positive", e.video_id)));
            }
            if !seen.insert(e.video_id.clone()) {
                return Err(Error::format(path, format!("duplicate video id {}", e.video_id)));
            }
            if e.frames.is_empty() {
                return Err(Error::format(path, format!("video {} has no frames", e.video_id)));
            }
            for f in &mut e.frames {
                *f = resolve(&base, f);
                if !f.is_file() {
                    return Err(Error::format(path, format!("missing frame {}", f.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// File-backed sequences, frames loaded lazily.
    pub fn sequences(&self) -> Result<Vec<FrameSequence>> {
        self.entries
            .iter()
            .map(|e| FrameSequence::from_paths(e.video_id.clone(), e.fps, e.frames.clone()))
            .collect()
    }
}

/// One row of an image list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub identity: Option<usize>,
}

/// Reads an image list CSV (`name,path[,identity]`), resolving paths.
pub fn load_image_list(path: impl AsRef<Path>) -> Result<Vec<ImageEntry>> {
    let path = path.as_ref();
    let base = base_dir(path);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    let mut names = std::collections::BTreeSet::new();
    for row in rdr.deserialize() {
        let mut e: ImageEntry = row.map_err(|e| Error::format(path, e.to_string()))?;
        if !names.insert(e.name.clone()) {
            return Err(Error::format(path, format!("duplicate image name {}", e.name)));
        }
        e.path = resolve(&base, &e.path);
        out.push(e);
    }
    if out.is_empty() {
        return Err(Error::format(path, "image list is empty"));
    }
    Ok(out)
}

pub fn save_image_list(path: impl AsRef<Path>, entries: &[ImageEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Loads every image of a list, keyed by name.
pub fn load_images(entries: &[ImageEntry]) -> Result<BTreeMap<String, Image>> {
    entries
        .par_iter()
        .map(|e| Ok((e.name.clone(), Image::load(&e.path)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub format: String,
    pub config: SynthConfig,
    pub train_ids: Vec<usize>,
}

/// Writes `ds` under `dir` as 16-bit PNGs plus manifests.
pub fn write_dataset(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut videos = VideoManifest::default();
    for v in &ds.train_videos {
        let rel = PathBuf::from("frames").join(v.video_id());
        let abs = dir.join(&rel);
        std::fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        let idx: Vec<usize> = (v.first_index()..v.first_index() + v.len()).collect();
        idx.par_iter()
            .map(|i| v.frame(*i)?.save_png16(abs.join(format!("{i:05}.png"))))
            .collect::<Result<Vec<_>>>()?;
        videos.entries.push(VideoEntry {
            video_id: v.video_id().to_string(),
            fps: v.fps(),
            frames: idx.iter().map(|i| rel.join(format!("{i:05}.png"))).collect(),
        });
    }
    videos.save(dir.join("videos.json"))?;
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    ds.test_items
        .par_iter()
        .map(|t| t.image.save_png16(images_dir.join(format!("{}.png", t.name))))
        .collect::<Result<Vec<_>>>()?;
    let list: Vec<ImageEntry> = ds
        .test_items
        .iter()
        .map(|t| ImageEntry {
            name: t.name.clone(),
            path: PathBuf::from("images").join(format!("{}.png", t.name)),
            identity: Some(t.identity),
        })
        .collect();
    save_image_list(dir.join("images.csv"), &list)?;
    ds.train_pairs.save(dir.join("pairs_train.csv"))?;
    ds.test_pairs.save(dir.join("pairs_test.csv"))?;
    write_json(
        dir.join("manifest.json"),
        &SynthManifest {
            format: SYNTH_FORMAT.into(),
            config: ds.config.clone(),
            train_ids: ds.train_ids.clone(),
        },
    )
}

/// Regenerates a dataset in memory from its generation manifest.
pub fn regenerate(manifest_path: impl AsRef<Path>) -> Result<SynthDataset> {
    let path = manifest_path.as_ref();
    let m: SynthManifest = read_json(path)?;
    if m.format != SYNTH_FORMAT {
        return Err(Error::format(path, format!("unsupported format {:?}", m.format)));
    }
    gen_dataset(&m.config)
}

/// Pairs of a dataset directory.
pub fn load_pairs(dir: impl AsRef<Path>) -> Result<(PairSet, PairSet)> {
    let dir = dir.as_ref();
    Ok((
        PairSet::load(dir.join("pairs_train.csv"), Split::Train)?,
        PairSet::load(dir.join("pairs_test.csv"), Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ClutterSpec;

    fn small() -> SynthConfig {
        let mut c = SynthConfig::clutter_experiment(ClutterSpec::clutter(), 3);
        c.n_train_ids = 2;
        c.n_test_ids = 4;
        c.seconds = 3.0;
        c.pairs_per_split = 4;
        c
    }

    #[test]
    fn write_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(&small()).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let vm = VideoManifest::load(dir.path().join("videos.json")).unwrap();
        assert_eq!(vm.entries.len(), 2);
        assert_eq!(vm.entries[0].frames.len(), 3);
        let seqs = vm.sequences().unwrap();
        let a = seqs[1].frame(2).unwrap();
        let b = ds.train_videos[1].frame(2).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1.0 / 65535.0));
        let list = load_image_list(dir.path().join("images.csv")).unwrap();
        assert_eq!(list.len(), ds.test_items.len());
        assert_eq!(list[0].identity, Some(ds.test_items[0].identity));
        let (tr, te) = load_pairs(dir.path()).unwrap();
        assert_eq!(tr, ds.train_pairs);
        assert_eq!(te, ds.test_pairs);
        let again = regenerate(dir.path().join("manifest.json")).unwrap();
        for (x, y) in again.test_items.iter().zip(&ds.test_items) {
            assert_eq!(x.image.data(), y.image.data());
        }
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        let mut m = VideoManifest {
            entries: vec![VideoEntry {
                video_id: "a".into(),
                fps: 1.0,
                frames: vec!["missing.png".into()],
            }],
        };
        m.save(&p).unwrap();
        assert!(matches!(VideoManifest::load(&p), Err(Error::Format { .. })));
        Image::constant(4, 4, 0.5).unwrap().save_png16(dir.path().join("ok.png")).unwrap();
        m.entries[0].frames = vec!["ok.png".into()];
        m.entries[0].fps = 0.0;
        m.save(&p).unwrap();
        assert!(VideoManifest::load(&p).is_err());
        m.entries[0].fps = 2.0;
        m.save(&p).unwrap();
        assert_eq!(VideoManifest::load(&p).unwrap().entries[0].frames[0], dir.path().join("ok.png"));
    }
}
