//! Portable 2D slice datasets: a JSON manifest plus paired PNG files per
//! split, deterministic partitioning, and the synthetic-corpus writer.
//!
//! Layout: `<root>/meta.json`, `<root>/<split>/<id>_img.png`,
//! `<root>/<split>/<id>_lbl.png` with six-digit zero-padded ids.

mod synth;

pub use synth::{synthesize_dataset, SynthOptions};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anatomy::{
    generate_phantom, io, Class, GrayImage, LabelMap, PhantomProfile, PhantomSpec,
};
use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST: &str = "meta.json";
/// Stored slices must be divisible by this (2^K for the default generator depth).
pub const SIZE_MULTIPLE: usize = 16;
pub const INTENSITY_ENCODING: &str = "16-bit grayscale PNG; code v means intensity v/32767.5 - 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Phantom,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub height: usize,
    pub width: usize,
    /// Sample count per split.
    pub splits: BTreeMap<String, usize>,
    pub intensity_encoding: String,
    pub seed: u64,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn new(name: &str, height: usize, width: usize, seed: u64, provenance: Provenance) -> Self {
        Self {
            name: name.to_string(),
            class_names: Class::ALL.iter().map(|c| c.name().to_string()).collect(),
            height,
            width,
            splits: BTreeMap::new(),
            intensity_encoding: INTENSITY_ENCODING.to_string(),
            seed,
            provenance,
        }
    }

    pub fn total(&self) -> usize {
        self.splits.values().sum()
    }
}

pub fn check_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % SIZE_MULTIPLE != 0 || width % SIZE_MULTIPLE != 0 {
        return Err(Error::invalid(format!(
            "slice size {height}x{width} must be positive and divisible by {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}

pub fn pair_paths(root: &Path, split: &str, id: usize) -> (PathBuf, PathBuf) {
    let dir = root.join(split);
    (dir.join(format!("{id:06}_img.png")), dir.join(format!("{id:06}_lbl.png")))
}

pub fn write_pair(root: &Path, split: &str, id: usize, img: &GrayImage, map: &LabelMap) -> Result<()> {
    let (ip, lp) = pair_paths(root, split, id);
    io::write_image_png(&ip, img)?;
    io::write_label_png(&lp, map)
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes every split and then the manifest, which is the commit point.
pub fn write_dataset(
    root: &Path,
    name: &str,
    seed: u64,
    provenance: Provenance,
    splits: &[(&str, &[GrayImage], &[LabelMap])],
) -> Result<DatasetManifest> {
    let first = splits
        .iter()
        .find_map(|(_, imgs, _)| imgs.first())
        .ok_or_else(|| Error::invalid("dataset has no samples"))?;
    let (h, w) = (first.height(), first.width());
    check_size(h, w)?;
    let mut manifest = DatasetManifest::new(name, h, w, seed, provenance);
    for (split, imgs, maps) in splits {
        if imgs.len() != maps.len() {
            return Err(Error::invalid(format!("split {split}: image and map counts differ")));
        }
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, (img, map)) in imgs.iter().zip(maps.iter()).enumerate() {
            let sizes = [(img.height(), img.width()), (map.height(), map.width())];
            if sizes.iter().any(|&s| s != (h, w)) {
                return Err(Error::invalid(format!("split {split} sample {i} is not {h}x{w}")));
            }
            write_pair(root, split, i, img, map)?;
        }
        manifest.splits.insert(split.to_string(), imgs.len());
    }
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Validated handle on a dataset directory; pairs are decoded on request.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

/// Reads the manifest and checks every pair: files present and no extras,
/// sizes equal to the manifest, label ids in range.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mpath = root.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::file(&mpath, format!("cannot read manifest: {e}")))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::file(&mpath, format!("bad manifest: {e}")))?;
    check_size(manifest.height, manifest.width).map_err(|e| Error::file(&mpath, e.to_string()))?;
    let ds = Dataset {
        root: root.to_path_buf(),
        manifest,
    };
    for (split, &n) in &ds.manifest.splits {
        let dir = root.join(split);
        let entries = fs::read_dir(&dir).map_err(|e| Error::file(&dir, format!("missing split directory: {e}")))?;
        let mut present = 0usize;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.ends_with("_img.png") || name.ends_with("_lbl.png") {
                present += 1;
            }
        }
        if present != 2 * n {
            return Err(Error::file(
                &dir,
                format!("manifest lists {n} pairs but {present} pair files are present"),
            ));
        }
        for id in 0..n {
            ds.read(split, id)?;
        }
    }
    Ok(ds)
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self, split: &str) -> usize {
        self.manifest.splits.get(split).copied().unwrap_or(0)
    }

    pub fn split_names(&self) -> Vec<String> {
        self.manifest.splits.keys().cloned().collect()
    }

    pub fn read(&self, split: &str, id: usize) -> Result<(GrayImage, LabelMap)> {
        if id >= self.len(split) {
            return Err(Error::invalid(format!("{split}/{id:06} is not in the manifest")));
        }
        let (ip, lp) = pair_paths(&self.root, split, id);
        let img = io::read_image_png(&ip)?;
        let map = io::read_label_png(&lp)?;
        let want = (self.manifest.height, self.manifest.width);
        if (img.height(), img.width()) != want {
            return Err(Error::file(&ip, format!("size {}x{} differs from manifest {want:?}", img.height(), img.width())));
        }
        if (map.height(), map.width()) != want {
            return Err(Error::file(&lp, format!("size {}x{} differs from manifest {want:?}", map.height(), map.width())));
        }
        Ok((img, map))
    }

    pub fn read_split(&self, split: &str) -> Result<(Vec<GrayImage>, Vec<LabelMap>)> {
        if !self.manifest.splits.contains_key(split) {
            return Err(Error::invalid(format!(
                "dataset {} has no split {split:?} (has {:?})",
                self.manifest.name,
                self.split_names()
            )));
        }
        (0..self.len(split)).map(|i| self.read(split, i)).collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
    }
}

/// Deterministic partition of `0..n` by `ratios`, sized by largest remainder.
pub fn split_indices(n: usize, ratios: &[(&str, f64)], seed: u64) -> Result<Vec<(String, Vec<usize>)>> {
    if ratios.is_empty() || ratios.iter().any(|(_, r)| !(*r >= 0.0)) {
        return Err(Error::invalid("split ratios must be non-negative and non-empty"));
    }
    let sum: f64 = ratios.iter().map(|(_, r)| r).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
    }
    let exact: Vec<f64> = ratios.iter().map(|(_, r)| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..ratios.len()).collect();
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let left = n - sizes.iter().sum::<usize>();
    for &i in by_remainder.iter().take(left) {
        sizes[i] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(seed, "split"));
    let mut out = Vec::with_capacity(ratios.len());
    let mut start = 0;
    for ((name, _), size) in ratios.iter().zip(sizes) {
        let mut ids = order[start..start + size].to_vec();
        ids.sort_unstable();
        out.push((name.to_string(), ids));
        start += size;
    }
    Ok(out)
}

/// Partitions one split of a loaded dataset.
pub fn split(ds: &Dataset, source: &str, ratios: &[(&str, f64)], seed: u64) -> Result<Vec<(String, Vec<usize>)>> {
    if !ds.manifest.splits.contains_key(source) {
        return Err(Error::invalid(format!("no split named {source:?}")));
    }
    split_indices(ds.len(source), ratios, seed)
}

/// Phantom `index` of a corpus depends only on `(seed, index)`.
pub fn phantom_sample(seed: u64, index: usize, size: usize, profile: PhantomProfile) -> Result<(GrayImage, LabelMap)> {
    let mut r = rng::indexed_stream(seed, "phantom", index as u64);
    let spec = PhantomSpec::random(&mut r, size, size, profile);
    generate_phantom(&spec, &mut r, size, size)
}

pub fn phantom_corpus(
    seed: u64,
    range: std::ops::Range<usize>,
    size: usize,
    profile: PhantomProfile,
) -> Result<(Vec<GrayImage>, Vec<LabelMap>)> {
    range
        .map(|i| phantom_sample(seed, i, size, profile))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ratio_one_is_identity() {
        let s = split_indices(17, &[("all", 1.0)], 3).unwrap();
        assert_eq!(s[0].1, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn seventy_thirty_is_a_partition() {
        let a = split_indices(100, &[("train", 0.7), ("test", 0.3)], 5).unwrap();
        assert_eq!(a, split_indices(100, &[("train", 0.7), ("test", 0.3)], 5).unwrap());
        let (tr, te): (HashSet<_>, HashSet<_>) = (a[0].1.iter().copied().collect(), a[1].1.iter().copied().collect());
        assert_eq!((tr.len(), te.len()), (70, 30));
        assert!(tr.is_disjoint(&te));
        assert_eq!(tr.union(&te).count(), 100);
        assert_ne!(a, split_indices(100, &[("train", 0.7), ("test", 0.3)], 6).unwrap());
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(split_indices(10, &[("a", 0.5), ("b", 0.4)], 0).is_err());
        assert!(split_indices(10, &[("a", -0.5), ("b", 1.5)], 0).is_err());
    }

    #[test]
    fn size_divisibility() {
        assert!(check_size(64, 64).is_ok());
        assert!(check_size(63, 64).is_err());
        assert!(check_size(0, 16).is_err());
    }

    #[test]
    fn phantom_samples_depend_only_on_index() {
        let (a, _) = phantom_corpus(4, 0..5, 32, PhantomProfile::A).unwrap();
        let (b, _) = phantom_corpus(4, 3..4, 32, PhantomProfile::A).unwrap();
        assert_eq!(a[3], b[0]);
    }
}
