use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_size, write_manifest, write_pair, DatasetManifest, Provenance, MANIFEST};
use crate::error::{Error, Result};
use crate::rng;
use crate::spadegan::SpadeGan;
use crate::vae::{sample_shapes, ShapeVae};

const PROGRESS: &str = "synth_progress.json";
const SPLIT: &str = "train";
/// Generator batch; fixed so an image never depends on its neighbours' count.
const GEN_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    pub chunk_size: usize,
    /// Rejected shapes allowed per accepted shape within one chunk.
    pub max_reject_ratio: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            chunk_size: 1000,
            max_reject_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    n: usize,
    seed: u64,
    chunk_size: usize,
    done: Vec<usize>,
}

/// Writes `n` (shape, image) pairs under `out/train`. Work is split into
/// chunks seeded from `(seed, chunk index)`; finished chunks are recorded so
/// an interrupted run resumes where it stopped and yields the same bytes.
pub fn synthesize_dataset(
    vae: &ShapeVae,
    gan: &SpadeGan,
    n: usize,
    seed: u64,
    out: &Path,
    opts: &SynthOptions,
) -> Result<DatasetManifest> {
    if n == 0 || opts.chunk_size == 0 || !(opts.max_reject_ratio >= 0.0) {
        return Err(Error::invalid("n and chunk_size must be positive, max_reject_ratio non-negative"));
    }
    let (h, w) = (gan.arch().height, gan.arch().width);
    check_size(h, w)?;
    if (vae.arch().height, vae.arch().width) != (h, w) {
        return Err(Error::invalid("VAE and GAN resolutions differ"));
    }
    let mut manifest = DatasetManifest::new("synthetic", h, w, seed, Provenance::Synthetic);
    manifest.splits.insert(SPLIT.to_string(), n);

    let mpath = out.join(MANIFEST);
    if mpath.exists() {
        let existing: DatasetManifest = serde_json::from_str(&fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
        if existing == manifest {
            return Ok(existing);
        }
        return Err(Error::file(&mpath, "output already holds a different dataset"));
    }
    let dir = out.join(SPLIT);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ppath = out.join(PROGRESS);
    let mut progress = Progress {
        n,
        seed,
        chunk_size: opts.chunk_size,
        done: Vec::new(),
    };
    if ppath.exists() {
        let prev: Progress = serde_json::from_str(&fs::read_to_string(&ppath).map_err(|e| Error::io(&ppath, e))?)?;
        if (prev.n, prev.seed, prev.chunk_size) != (n, seed, opts.chunk_size) {
            return Err(Error::file(&ppath, "partial corpus was started with different settings"));
        }
        progress = prev;
    }

    let chunks = n.div_ceil(opts.chunk_size);
    for c in 0..chunks {
        if progress.done.contains(&c) {
            continue;
        }
        let start = c * opts.chunk_size;
        let len = opts.chunk_size.min(n - start);
        let max_rejects = (len as f64 * opts.max_reject_ratio).ceil() as usize;
        let shapes = sample_shapes(len, vae, &mut rng::indexed_stream(seed, "synth/shapes", c as u64), max_rejects)?;
        let mut style_rng = rng::indexed_stream(seed, "synth/style", c as u64);
        let d = gan.arch().style_dim;
        for (g, maps) in shapes.maps.chunks(GEN_GROUP).enumerate() {
            let styles: Vec<Vec<f32>> = maps.iter().map(|_| rng::standard_normal_vec(&mut style_rng, d)).collect();
            let images = gan.generate_batch(maps, &styles)?;
            for (k, (img, map)) in images.iter().zip(maps).enumerate() {
                write_pair(out, SPLIT, start + g * GEN_GROUP + k, img, map)?;
            }
        }
        log::info!(
            "synth chunk {}/{chunks}: {len} pairs, shape rejection rate {:.3}",
            c + 1,
            shapes.rejection_rate()
        );
        progress.done.push(c);
        fs::write(&ppath, serde_json::to_string(&progress)?).map_err(|e| Error::io(&ppath, e))?;
    }
    write_manifest(out, &manifest)?;
    fs::remove_file(&ppath).map_err(|e| Error::io(&ppath, e))?;
    Ok(manifest)
}
