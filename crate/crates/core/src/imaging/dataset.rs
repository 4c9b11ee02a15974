//! Co-registered image pairs, seeded train/test splits and the on-disk manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_source_image, GrayImage, SourceImage};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub a: GrayImage,
    pub b: SourceImage,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, a: GrayImage, b: impl Into<SourceImage>) -> Result<Self> {
        let id = id.into();
        let b = b.into();
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!(
                "pair {id}: {:?} vs {:?} (pairs must be co-registered)",
                a.dims(),
                b.dims()
            )));
        }
        Ok(Self { id, a, b })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<ImagePair>,
    pub modality_tags: (String, String),
    /// `None` until the dataset has been split.
    pub split: Option<Split>,
}

impl PairedDataset {
    pub fn new(pairs: Vec<ImagePair>, modality_a: &str, modality_b: &str) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if p.a.dims() != p.b.dims() {
                return Err(Error::Shape(format!("pair {} is not co-registered", p.id)));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate pair id {}", p.id)));
            }
        }
        Ok(Self {
            pairs,
            modality_tags: (modality_a.to_string(), modality_b.to_string()),
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every single-modality plane in the dataset, tagged `<pair id>/<modality>`.
    /// Color members contribute their Y channel.
    pub fn pooled_images(&self) -> Vec<(String, GrayImage)> {
        let (ta, tb) = &self.modality_tags;
        self.pairs
            .iter()
            .flat_map(|p| {
                [
                    (format!("{}/{ta}", p.id), p.a.clone()),
                    (format!("{}/{tb}", p.id), p.b.luma()),
                ]
            })
            .collect()
    }

    fn subset(&self, indices: &[usize], split: Split) -> Self {
        Self {
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
            modality_tags: self.modality_tags.clone(),
            split: Some(split),
        }
    }
}

/// Seeded partition of `0..count` into (train, test); each side keeps ascending order.
pub fn split_indices(count: usize, holdout_count: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if holdout_count == 0 || holdout_count >= count {
        return Err(Error::Config(format!(
            "holdout count must satisfy 0 < holdout < {count}, got {holdout_count}"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..holdout_count].to_vec();
    let mut train = order[holdout_count..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split_dataset(
    ds: &PairedDataset,
    holdout_count: usize,
    seed: u64,
) -> Result<(PairedDataset, PairedDataset)> {
    let (train, test) = split_indices(ds.len(), holdout_count, seed)?;
    Ok((ds.subset(&train, Split::Train), ds.subset(&test, Split::Test)))
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "tif", "tiff", "bmp", "pgm", "ppm"];

fn index_modality(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Pairs `<root>/<modality_a>/<id>.<ext>` with `<root>/<modality_b>/<id>.<ext>`.
/// Ids present in only one modality are skipped with a warning. Output is sorted by id.
pub fn pair_directory(root: &Path, modality_a: &str, modality_b: &str) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let a = index_modality(&root.join(modality_a))?;
    let mut b = index_modality(&root.join(modality_b))?;
    let mut pairs = Vec::new();
    for (id, pa) in a {
        match b.remove(&id) {
            Some(pb) => pairs.push((id, pa, pb)),
            None => log::warn!("{id}: no {modality_b} counterpart, skipped"),
        }
    }
    for id in b.keys() {
        log::warn!("{id}: no {modality_a} counterpart, skipped");
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub split: Split,
}

/// The persisted train/test assignment; later stages read splits from here.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modality_a: String,
    pub modality_b: String,
    pub seed: u64,
    pub holdout_count: usize,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn from_directory(
        root: &Path,
        modality_a: &str,
        modality_b: &str,
        holdout_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let pairs = pair_directory(root, modality_a, modality_b)?;
        let (_, test) = split_indices(pairs.len(), holdout_count, seed)?;
        let test: HashSet<usize> = test.into_iter().collect();
        let records = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (id, path_a, path_b))| ManifestRecord {
                id,
                path_a,
                path_b,
                split: if test.contains(&i) {
                    Split::Test
                } else {
                    Split::Train
                },
            })
            .collect();
        Ok(Self {
            modality_a: modality_a.to_string(),
            modality_b: modality_b.to_string(),
            seed,
            holdout_count,
            records,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(sha256_hex(&bytes))
    }

    /// Loads the images of one split. Relative paths resolve against `base`.
    pub fn load_split(&self, split: Split, base: &Path) -> Result<PairedDataset> {
        let mut pairs = Vec::new();
        for rec in self.records.iter().filter(|r| r.split == split) {
            let a = match load_source_image(&base.join(&rec.path_a))? {
                SourceImage::Gray(g) => g,
                SourceImage::Color(_) => {
                    return Err(Error::InvalidInput(format!(
                        "{}: the first modality must be grayscale",
                        rec.path_a.display()
                    )))
                }
            };
            let b = load_source_image(&base.join(&rec.path_b))?;
            pairs.push(ImagePair::new(rec.id.clone(), a, b)?);
        }
        let mut ds = PairedDataset::new(pairs, &self.modality_a, &self.modality_b)?;
        ds.split = Some(split);
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_gray_png;

    fn toy_dataset(n: usize) -> PairedDataset {
        let pairs = (0..n)
            .map(|i| {
                let v = i as f32 / n as f32;
                ImagePair::new(
                    format!("{i:03}"),
                    GrayImage::filled(4, 4, v).unwrap(),
                    GrayImage::filled(4, 4, 1.0 - v).unwrap(),
                )
                .unwrap()
            })
            .collect();
        PairedDataset::new(pairs, "MRI", "CT").unwrap()
    }

    #[test]
    fn published_split_sizes() {
        for (n, k) in [(184, 30), (357, 50)] {
            let (train, test) = split_indices(n, k, 7).unwrap();
            assert_eq!((train.len(), test.len()), (n - k, k));
        }
    }

    #[test]
    fn split_is_seeded_disjoint_and_complete() {
        let ds = toy_dataset(20);
        let (tr1, te1) = split_dataset(&ds, 5, 42).unwrap();
        let (tr2, te2) = split_dataset(&ds, 5, 42).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.split, Some(Split::Train));
        assert_eq!(te1.split, Some(Split::Test));
        let train_ids: HashSet<_> = tr1.pairs.iter().map(|p| p.id.clone()).collect();
        let test_ids: HashSet<_> = te1.pairs.iter().map(|p| p.id.clone()).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        assert_eq!(train_ids.len() + test_ids.len(), 20);
        let (_, te3) = split_dataset(&ds, 5, 43).unwrap();
        assert_ne!(te1, te3);
    }

    #[test]
    fn holdout_out_of_range() {
        let ds = toy_dataset(4);
        assert!(matches!(split_dataset(&ds, 0, 1), Err(Error::Config(_))));
        assert!(matches!(split_dataset(&ds, 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn pair_dimension_mismatch_rejected() {
        let r = ImagePair::new(
            "x",
            GrayImage::filled(4, 4, 0.0).unwrap(),
            GrayImage::filled(4, 5, 0.0).unwrap(),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn manifest_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for m in ["MRI", "CT"] {
            std::fs::create_dir(dir.path().join(m)).unwrap();
        }
        for i in 0..6 {
            let g = GrayImage::filled(16, 16, i as f32 / 10.0).unwrap();
            save_gray_png(&g, &dir.path().join("MRI").join(format!("{i}.png"))).unwrap();
            if i != 5 {
                save_gray_png(&g, &dir.path().join("CT").join(format!("{i}.png"))).unwrap();
            }
        }
        let m = DatasetManifest::from_directory(dir.path(), "MRI", "CT", 2, 3).unwrap();
        assert_eq!(m.records.len(), 5);
        assert_eq!(m.records.iter().filter(|r| r.split == Split::Test).count(), 2);
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash().unwrap(), m.hash().unwrap());
        let test = back.load_split(Split::Test, Path::new("")).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test.pooled_images().len(), 4);
    }
}
