use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cardiogen::anatomy::{check_validity, io, PhantomProfile};
use cardiogen::datasets::{
    load_dataset, pair_paths, phantom_corpus, synthesize_dataset, write_dataset, Provenance, SynthOptions,
};
use cardiogen::spadegan::{train_gan, GanArch, GanTrainConfig};
use cardiogen::vae::{train_vae, VaeArch, VaeTrainConfig};

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn three_pairs_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, maps) = phantom_corpus(1, 0..3, 64, PhantomProfile::A).unwrap();
    let m = write_dataset(dir.path(), "tiny", 1, Provenance::Phantom, &[("train", &imgs, &maps)]).unwrap();
    assert_eq!(m.total(), 3);
    let ds = load_dataset(dir.path()).unwrap();
    let (i2, m2) = ds.read_split("train").unwrap();
    assert_eq!(m2, maps);
    let bits = |v: &[cardiogen::anatomy::GrayImage]| -> Vec<u32> {
        v.iter().flat_map(|i| i.as_slice().iter().map(|x| x.to_bits())).collect()
    };
    assert_eq!(bits(&i2), bits(&imgs));
}

#[test]
fn illegal_class_id_is_reported_with_its_file() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, maps) = phantom_corpus(2, 0..3, 32, PhantomProfile::B).unwrap();
    write_dataset(dir.path(), "tiny", 2, Provenance::Phantom, &[("train", &imgs, &maps)]).unwrap();
    let (_, lbl) = pair_paths(dir.path(), "train", 1);
    let mut data = maps[1].as_slice().to_vec();
    data[40] = 7;
    io::write_gray8(&lbl, 32, 32, &data).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("000001_lbl.png"), "{err}");
}

#[test]
fn manifest_count_must_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, maps) = phantom_corpus(3, 0..3, 32, PhantomProfile::A).unwrap();
    write_dataset(dir.path(), "tiny", 3, Provenance::Phantom, &[("train", &imgs, &maps)]).unwrap();
    let (img, _) = pair_paths(dir.path(), "train", 2);
    fs::remove_file(img).unwrap();
    assert!(load_dataset(dir.path()).is_err());
    assert!(load_dataset(&dir.path().join("nope")).unwrap_err().is_validation());
}

#[test]
fn storage_budget_extrapolated_from_a_thousand_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, maps) = phantom_corpus(4, 0..1000, 128, PhantomProfile::A).unwrap();
    write_dataset(dir.path(), "prefix", 4, Provenance::Phantom, &[("train", &imgs, &maps)]).unwrap();
    let bytes: usize = tree_bytes(dir.path()).values().map(Vec::len).sum();
    let projected_gb = bytes as f64 * 100.0 / 1e9;
    println!("1000 pairs at 128x128: {bytes} bytes; 100k projected {projected_gb:.2} GB");
    assert!(projected_gb <= 6.5, "{projected_gb} GB");
}

#[test]
fn synthesis_is_valid_deterministic_and_resumable() {
    let (imgs, maps) = phantom_corpus(5, 0..64, 32, PhantomProfile::A).unwrap();
    let vcfg = VaeTrainConfig {
        epochs: 40,
        batch_size: 8,
        lr: 2e-3,
        arch: VaeArch {
            height: 32,
            width: 32,
            latent_dim: 8,
            base_channels: 8,
            depth: 3,
        },
        ..Default::default()
    };
    let (vae, _) = train_vae(&maps, &vcfg, 1, None).unwrap();
    let gcfg = GanTrainConfig {
        epochs: 1,
        batch_size: 8,
        arch: GanArch {
            height: 32,
            width: 32,
            style_dim: 8,
            gen_channels: vec![16, 8],
            spade_hidden: 8,
            spade_kernel: 3,
            style_channels: vec![4, 8],
            disc_channels: 4,
            disc_scales: 2,
        },
        ..Default::default()
    };
    let (gan, _) = train_gan(&imgs[..16], &maps[..16], &gcfg, 1, None).unwrap();
    let opts = SynthOptions {
        chunk_size: 4,
        max_reject_ratio: 50.0,
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synthesize_dataset(&vae, &gan, 10, 9, a.path(), &opts).unwrap();
    assert_eq!(m.provenance, Provenance::Synthetic);
    let ds = load_dataset(a.path()).unwrap();
    let (_, smaps) = ds.read_split("train").unwrap();
    assert_eq!(smaps.len(), 10);
    assert!(smaps.iter().all(|m| check_validity(m).valid));

    synthesize_dataset(&vae, &gan, 10, 9, b.path(), &opts).unwrap();
    let reference = tree_bytes(a.path());
    assert_eq!(reference, tree_bytes(b.path()));

    // Simulate an interruption after the first chunk: drop the manifest and
    // later chunks, mark chunk 0 done, and resume.
    let c = tempfile::tempdir().unwrap();
    fs::create_dir_all(c.path().join("train")).unwrap();
    for id in 0..4 {
        for p in <[_; 2]>::from(pair_paths(a.path(), "train", id)) {
            fs::copy(&p, c.path().join("train").join(p.file_name().unwrap())).unwrap();
        }
    }
    fs::write(c.path().join("synth_progress.json"), r#"{"n":10,"seed":9,"chunk_size":4,"done":[0]}"#).unwrap();
    synthesize_dataset(&vae, &gan, 10, 9, c.path(), &opts).unwrap();
    assert_eq!(reference, tree_bytes(c.path()));
}
