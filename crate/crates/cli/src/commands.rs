use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use cardiogen::anatomy::{io, GrayImage, LabelMap};
use cardiogen::checkpoint::Checkpoint;
use cardiogen::datasets::{
    check_size, load_dataset, phantom_corpus, split_indices, synthesize_dataset, write_dataset, Dataset, Provenance,
    MANIFEST,
};
use cardiogen::segmentation::{
    self, evaluate_predictions_with, evaluate_with, finetune, train_seg, DiceReport, FinetuneTag, Pairs, Segmenter,
};
use cardiogen::spadegan::{self, train_gan, SpadeGan};
use cardiogen::vae::{self, train_vae, ShapeVae};
use cardiogen::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::eval::{render_table, Cell, EvalMatrix, Grid, Hole, TRUTH};

pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MONTAGE_FILE: &str = "montage.png";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TABLE: &str = "eval.txt";
const MONTAGE_SIDE: usize = 5;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// A checkpoint file, or a training output directory holding one.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    let file = if path.is_dir() { path.join(MODEL_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::file(&file, "no such checkpoint"));
    }
    Ok(file)
}

fn load_checkpoint(path: &Path) -> Result<(PathBuf, Checkpoint)> {
    let file = resolve_checkpoint(path)?;
    let ckpt = Checkpoint::load(&file).map_err(|e| Error::file(&file, e.to_string()))?;
    Ok((file, ckpt))
}

fn load_data(path: &Path) -> Result<Dataset> {
    if !path.join(MANIFEST).is_file() {
        return Err(Error::file(path, "not a dataset directory (no manifest)"));
    }
    load_dataset(path)
}

fn train_pairs(ds: &Dataset, cfg: &RunConfig) -> Result<(Vec<GrayImage>, Vec<LabelMap>)> {
    let (imgs, maps) = ds.read_split(&cfg.data.train_split)?;
    if imgs.is_empty() {
        return Err(Error::invalid(format!("split {:?} is empty", cfg.data.train_split)));
    }
    Ok((imgs, maps))
}

pub struct PhantomArgs {
    pub n: Option<usize>,
    pub test_n: Option<usize>,
    pub size: Option<usize>,
    pub profile: Option<cardiogen::anatomy::PhantomProfile>,
}

pub fn phantoms(mut cfg: RunConfig, args: PhantomArgs, out: &Path) -> Result<()> {
    let p = &mut cfg.phantoms;
    p.n = args.n.unwrap_or(p.n);
    p.test_n = args.test_n.unwrap_or(p.test_n);
    p.size = args.size.unwrap_or(p.size);
    p.profile = args.profile.unwrap_or(p.profile);
    check_size(p.size, p.size)?;
    if p.n == 0 {
        return Err(Error::invalid("--n must be positive"));
    }
    if out.join(MANIFEST).exists() {
        return Err(Error::file(out, "output already holds a dataset"));
    }
    let p = cfg.phantoms.clone();
    let (ti, tm) = phantom_corpus(cfg.seed, 0..p.n, p.size, p.profile)?;
    let (si, sm) = phantom_corpus(cfg.seed, p.n..p.n + p.test_n, p.size, p.profile)?;
    let mut splits: Vec<(&str, &[GrayImage], &[LabelMap])> = vec![("train", &ti, &tm)];
    if p.test_n > 0 {
        splits.push(("test", &si, &sm));
    }
    let name = format!("phantom-{}", serde_json::to_value(p.profile)?.as_str().unwrap_or("?"));
    write_dataset(out, &name, cfg.seed, Provenance::Phantom, &splits)?;
    cfg.echo(out)?;
    log::info!("wrote {} train and {} test phantoms to {}", p.n, p.test_n, out.display());
    Ok(())
}

pub fn train_vae_cmd(mut cfg: RunConfig, data: &Path, out: &Path, epochs: Option<usize>) -> Result<()> {
    let ds = load_data(data)?;
    cfg.paths.data = Some(data.to_path_buf());
    cfg.vae.epochs = epochs.unwrap_or(cfg.vae.epochs);
    cfg.vae.arch.height = ds.manifest().height;
    cfg.vae.arch.width = ds.manifest().width;
    cfg.vae.validate()?;
    let (_, maps) = train_pairs(&ds, &cfg)?;
    create_dir(out)?;
    cfg.echo(out)?;
    let (_, history) = train_vae(&maps, &cfg.vae, cfg.seed, Some(&out.join(MODEL_FILE)))?;
    write(&out.join(HISTORY_FILE), vae::history_csv(&history))
}

pub fn train_gan_cmd(mut cfg: RunConfig, data: &Path, out: &Path, epochs: Option<usize>) -> Result<()> {
    let ds = load_data(data)?;
    cfg.paths.data = Some(data.to_path_buf());
    cfg.gan.epochs = epochs.unwrap_or(cfg.gan.epochs);
    cfg.gan.arch.height = ds.manifest().height;
    cfg.gan.arch.width = ds.manifest().width;
    cfg.gan.validate()?;
    let (imgs, maps) = train_pairs(&ds, &cfg)?;
    create_dir(out)?;
    cfg.echo(out)?;
    let (_, history) = train_gan(&imgs, &maps, &cfg.gan, cfg.seed, Some(&out.join(MODEL_FILE)))?;
    write(&out.join(HISTORY_FILE), spadegan::history_csv(&history, false))?;
    write(&out.join(TIMING_FILE), spadegan::history_csv(&history, true))
}

/// Training split cut into (train, validation) by `data.val_fraction`.
fn seg_split(ds: &Dataset, cfg: &RunConfig) -> Result<[(Vec<GrayImage>, Vec<LabelMap>); 2]> {
    let (imgs, maps) = train_pairs(ds, cfg)?;
    let f = cfg.data.val_fraction;
    if !(0.0..1.0).contains(&f) {
        return Err(Error::invalid("data.val_fraction must lie in [0, 1)"));
    }
    let parts = split_indices(imgs.len(), &[("train", 1.0 - f), ("val", f)], cfg.seed)?;
    let pick = |ids: &[usize]| -> (Vec<GrayImage>, Vec<LabelMap>) {
        ids.iter().map(|&i| (imgs[i].clone(), maps[i].clone())).unzip()
    };
    Ok([pick(&parts[0].1), pick(&parts[1].1)])
}

pub fn train_seg_cmd(
    mut cfg: RunConfig,
    data: &Path,
    out: &Path,
    epochs: Option<usize>,
    augment: Option<bool>,
) -> Result<()> {
    let ds = load_data(data)?;
    cfg.paths.data = Some(data.to_path_buf());
    cfg.seg.epochs = epochs.unwrap_or(cfg.seg.epochs);
    cfg.seg.augment.enabled = augment.unwrap_or(cfg.seg.augment.enabled);
    cfg.seg.arch.height = ds.manifest().height;
    cfg.seg.arch.width = ds.manifest().width;
    cfg.seg.validate()?;
    let [(ti, tm), (vi, vm)] = seg_split(&ds, &cfg)?;
    create_dir(out)?;
    cfg.echo(out)?;
    let (model, history) = train_seg(Pairs::new(&ti, &tm)?, Pairs::new(&vi, &vm)?, &cfg.seg, cfg.seed, None)?;
    let meta = json!({
        "seed": cfg.seed,
        "data": ds.manifest().name,
        "config": serde_json::to_value(&cfg.seg)?,
        "finetune": FinetuneTag::default(),
    });
    model.to_checkpoint(meta)?.save(&out.join(MODEL_FILE))?;
    write(&out.join(HISTORY_FILE), segmentation::history_csv(&history))
}

pub fn finetune_cmd(
    mut cfg: RunConfig,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    epochs: Option<usize>,
) -> Result<()> {
    let ds = load_data(data)?;
    let (file, ckpt) = load_checkpoint(checkpoint)?;
    let base = Segmenter::from_checkpoint(&ckpt, DType::F32)?;
    cfg.paths.data = Some(data.to_path_buf());
    cfg.paths.checkpoint = Some(file);
    cfg.finetune.epochs = epochs.unwrap_or(cfg.finetune.epochs);
    cfg.seg.arch = base.arch().clone();
    if (ds.manifest().height, ds.manifest().width) != (cfg.seg.arch.height, cfg.seg.arch.width) {
        return Err(Error::invalid("fine-tune data and checkpoint differ in resolution"));
    }
    cfg.seg.validate()?;
    let [(ti, tm), (vi, vm)] = seg_split(&ds, &cfg)?;
    create_dir(out)?;
    cfg.echo(out)?;
    let (model, history) = finetune(
        &base,
        Pairs::new(&ti, &tm)?,
        Pairs::new(&vi, &vm)?,
        &cfg.seg,
        &cfg.finetune,
        cfg.seed,
        None,
    )?;
    let meta = json!({
        "seed": cfg.seed,
        "data": ckpt.meta.get("data").cloned().unwrap_or_default(),
        "config": serde_json::to_value(&cfg.seg)?,
        "finetune": FinetuneTag {
            dataset: Some(ds.manifest().name.clone()),
            epochs: cfg.finetune.epochs,
        },
        "base_seed": ckpt.meta.get("seed").cloned().unwrap_or_default(),
    });
    model.to_checkpoint(meta)?.save(&out.join(MODEL_FILE))?;
    write(&out.join(HISTORY_FILE), segmentation::history_csv(&history))
}

pub fn synth_cmd(mut cfg: RunConfig, vae_path: &Path, gan_path: &Path, n: Option<usize>, out: &Path) -> Result<()> {
    let (vfile, vckpt) = load_checkpoint(vae_path)?;
    let (gfile, gckpt) = load_checkpoint(gan_path)?;
    let vae = ShapeVae::from_checkpoint(&vckpt, DType::F32)?;
    let gan = SpadeGan::from_checkpoint(&gckpt, DType::F32)?;
    cfg.paths.vae = Some(vfile);
    cfg.paths.gan = Some(gfile);
    cfg.synth.n = n.unwrap_or(cfg.synth.n);
    synthesize_dataset(&vae, &gan, cfg.synth.n, cfg.seed, out, &cfg.synth.options())?;
    cfg.echo(out)?;
    let ds = load_dataset(out)?;
    let shown = ds.len("train").min(MONTAGE_SIDE * MONTAGE_SIDE);
    let pairs = (0..shown).map(|i| ds.read("train", i)).collect::<Result<Vec<_>>>()?;
    let (w, h, pixels) = montage(&pairs, ds.manifest().height, ds.manifest().width);
    io::write_gray8(&out.join(MONTAGE_FILE), w, h, &pixels)
}

/// 5×5 tiles, each a label map (class id × 85) above its generated image.
pub fn montage(pairs: &[(GrayImage, LabelMap)], h: usize, w: usize) -> (usize, usize, Vec<u8>) {
    let (tw, th) = (w, 2 * h);
    let (width, height) = (MONTAGE_SIDE * tw, MONTAGE_SIDE * th);
    let mut px = vec![0u8; width * height];
    for (k, (img, map)) in pairs.iter().take(MONTAGE_SIDE * MONTAGE_SIDE).enumerate() {
        let (r0, c0) = ((k / MONTAGE_SIDE) * th, (k % MONTAGE_SIDE) * tw);
        for r in 0..h {
            for c in 0..w {
                px[(r0 + r) * width + c0 + c] = map.get(r, c) * 85;
                let v = ((img.get(r, c) + 1.0) * 127.5).round().clamp(0.0, 255.0);
                px[(r0 + h + r) * width + c0 + c] = v as u8;
            }
        }
    }
    (width, height, px)
}

pub struct EvalArgs<'a> {
    pub checkpoints: &'a [(String, PathBuf)],
    pub testsets: &'a [(String, PathBuf)],
    pub grid: Option<&'a Path>,
    pub split: Option<String>,
}

enum Model {
    Truth,
    Net(Box<Segmenter>, PathBuf, Option<u64>, FinetuneTag),
}

/// Fills every requested cell it can. The matrix is written even when cells
/// are missing; the error then lists them.
pub fn eval_cmd(mut cfg: RunConfig, args: EvalArgs<'_>, out: &Path) -> Result<EvalMatrix> {
    cfg.eval.test_split = args.split.unwrap_or(cfg.eval.test_split);
    let names = |v: &[(String, PathBuf)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let grid = match args.grid {
        Some(p) => Grid::load(p)?,
        None => Grid::per_checkpoint(&names(args.checkpoints), &names(args.testsets)),
    };
    grid.validate()?;
    let ckpts: BTreeMap<&str, &Path> = args.checkpoints.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect();
    let sets: BTreeMap<&str, &Path> = args.testsets.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect();

    let mut models: BTreeMap<String, std::result::Result<Model, String>> = BTreeMap::new();
    let mut data: BTreeMap<String, std::result::Result<(Vec<GrayImage>, Vec<LabelMap>), String>> = BTreeMap::new();
    let columns = EvalMatrix::columns_of(&grid);
    let mut m = EvalMatrix {
        regimes: grid.regimes.clone(),
        columns: columns.clone(),
        cells: Vec::new(),
        holes: Vec::new(),
    };
    for regime in &grid.regimes {
        for (j, col) in columns.iter().enumerate() {
            let hole = |reason: String| Hole {
                regime: regime.clone(),
                column: j,
                reason,
            };
            let Some(name) = grid.checkpoint_for(regime, &col.finetune) else {
                m.holes.push(hole("no checkpoint assigned".into()));
                continue;
            };
            let model = models.entry(name.to_string()).or_insert_with(|| load_model(name, &ckpts));
            let model = match model {
                Ok(x) => x,
                Err(e) => {
                    m.holes.push(hole(e.clone()));
                    continue;
                }
            };
            let Some(&set_path) = sets.get(col.testset.as_str()) else {
                m.holes.push(hole(format!("test set `{}` not given", col.testset)));
                continue;
            };
            let split = cfg.eval.test_split.clone();
            let pairs = data.entry(col.testset.clone()).or_insert_with(|| {
                load_data(set_path).and_then(|ds| ds.read_split(&split)).map_err(|e| e.to_string())
            });
            let (imgs, truths) = match pairs {
                Ok(x) => x,
                Err(e) => {
                    m.holes.push(hole(e.clone()));
                    continue;
                }
            };
            let scored: Result<(DiceReport, Option<PathBuf>, Option<u64>, FinetuneTag)> = match model {
                Model::Truth => evaluate_predictions_with(truths, truths, cfg.eval.empty_rule)
                    .map(|r| (r, None, None, FinetuneTag::default())),
                Model::Net(net, path, seed, ft) => evaluate_with(net, imgs, truths, cfg.eval.empty_rule)
                    .map(|r| (r, Some(path.clone()), *seed, ft.clone())),
            };
            match scored {
                Ok((mut report, checkpoint_path, seed, finetune)) => {
                    report.regime = Some(regime.clone());
                    report.test_split = Some(format!("{}/{}", col.testset, split));
                    report.seed = seed;
                    report.finetune = finetune;
                    m.cells.push(Cell {
                        regime: regime.clone(),
                        column: j,
                        checkpoint: name.to_string(),
                        ground_truth: checkpoint_path.is_none(),
                        checkpoint_path,
                        seed,
                        testset_path: set_path.to_path_buf(),
                        report,
                    });
                }
                Err(e) => m.holes.push(hole(e.to_string())),
            }
        }
    }

    create_dir(out)?;
    cfg.echo(out)?;
    let text = serde_json::to_string_pretty(&m)?;
    write(&out.join(EVAL_JSON), &text)?;
    // The table is rendered from the serialized matrix, never from live state.
    let parsed: EvalMatrix = serde_json::from_str(&text)?;
    let table = render_table(&parsed);
    write(&out.join(EVAL_TABLE), &table)?;
    eprint!("{table}");
    if !m.holes.is_empty() {
        return Err(Error::invalid(format!(
            "{} of {} cells could not be filled (see {})",
            m.holes.len(),
            m.holes.len() + m.cells.len(),
            out.join(EVAL_TABLE).display()
        )));
    }
    Ok(m)
}

fn load_model(name: &str, ckpts: &BTreeMap<&str, &Path>) -> std::result::Result<Model, String> {
    let path = match ckpts.get(name) {
        Some(p) => *p,
        None if name == TRUTH => return Ok(Model::Truth),
        None => return Err(format!("checkpoint `{name}` not given")),
    };
    if path == Path::new(TRUTH) {
        return Ok(Model::Truth);
    }
    let run = || -> Result<Model> {
        let (file, ckpt) = load_checkpoint(path)?;
        let net = Segmenter::from_checkpoint(&ckpt, DType::F32)?;
        let seed = ckpt.meta.get("seed").and_then(|v| v.as_u64());
        let ft = ckpt.meta_field::<FinetuneTag>("finetune").unwrap_or_default();
        Ok(Model::Net(Box::new(net), file, seed, ft))
    };
    run().map_err(|e| e.to_string())
}
