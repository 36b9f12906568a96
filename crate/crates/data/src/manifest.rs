//! `<root>/<dataset>/{images,masks}/*.{png,jpg}` pairing by file stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{io_err, Error, Result};

pub const CACHE_FILE: &str = "manifest.json";
const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub image_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub split: Split,
    pub pairs: Vec<Pair>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Deterministic split into (first, second) with `fraction` of the pairs
    /// in `second`, chosen by a seeded shuffle. Each part keeps stem order.
    pub fn holdout(&self, fraction: f64, seed: u64) -> (DatasetManifest, DatasetManifest) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let take = (self.pairs.len() as f64 * fraction).floor() as usize;
        let mut held: Vec<usize> = idx[..take].to_vec();
        held.sort_unstable();
        let pick = |keep: bool| DatasetManifest {
            pairs: (0..self.pairs.len())
                .filter(|i| held.binary_search(i).is_ok() != keep)
                .map(|i| self.pairs[i].clone())
                .collect(),
            ..self.clone()
        };
        (pick(true), pick(false))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }
}

/// Image files in `dir` keyed by stem. A missing directory counts as empty.
fn list_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if out.insert(stem.clone(), path).is_some() {
            return Err(Error::DuplicateStem { stem, dir: dir.to_path_buf() });
        }
    }
    Ok(out)
}

/// Scans `<root>/<name>/images` and `<root>/<name>/masks` and pairs files by
/// stem, sorted by stem. Unmatched files are errors naming the stem.
pub fn load_manifest(root: &Path, name: &str) -> Result<DatasetManifest> {
    let base = root.join(name);
    if !base.is_dir() {
        return Err(Error::MissingDir(base));
    }
    let (image_dir, mask_dir) = (base.join("images"), base.join("masks"));
    let images = list_by_stem(&image_dir)?;
    let mut masks = list_by_stem(&mask_dir)?;
    let mut pairs = Vec::with_capacity(images.len());
    for (stem, image) in images {
        let mask = masks.remove(&stem).ok_or_else(|| Error::MissingMask { stem: stem.clone() })?;
        pairs.push(Pair { stem, image, mask });
    }
    if let Some(stem) = masks.into_keys().next() {
        return Err(Error::MissingImage { stem });
    }
    if pairs.is_empty() {
        log::warn!("dataset '{name}' at {} has no images", base.display());
    }
    Ok(DatasetManifest { name: name.to_string(), image_dir, mask_dir, split: Split::Test, pairs })
}

fn modified(path: &Path) -> Option<std::time::SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// Like [`load_manifest`] but reuses `<root>/<name>/manifest.json` when it is
/// newer than both directories and every listed file still exists.
pub fn load_manifest_cached(root: &Path, name: &str) -> Result<DatasetManifest> {
    let base = root.join(name);
    let cache = base.join(CACHE_FILE);
    if let (Some(at), Ok(m)) = (modified(&cache), DatasetManifest::read_json(&cache)) {
        let fresh = [&m.image_dir, &m.mask_dir].iter().all(|d| modified(d).is_none_or(|t| t <= at))
            && m.pairs.iter().all(|p| p.image.exists() && p.mask.exists());
        if fresh && m.name == name {
            return Ok(m);
        }
    }
    let m = load_manifest(root, name)?;
    if let Err(e) = m.write_json(&cache) {
        log::warn!("could not write manifest cache: {e}");
    }
    Ok(m)
}
