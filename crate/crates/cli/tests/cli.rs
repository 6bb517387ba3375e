use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cardiogen");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).arg("--workers").arg("0").output().unwrap()
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
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

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small networks so each smoke run takes seconds.
const TINY: &str = r#"
[data]
val_fraction = 0.2

[vae]
batch_size = 4
[vae.arch]
latent_dim = 8
base_channels = 4
depth = 3

[gan]
batch_size = 4
[gan.arch]
style_dim = 8
gen_channels = [16, 8]
spade_hidden = 8
style_channels = [4, 8]
disc_channels = 4

[seg]
batch_size = 4
[seg.arch]
channels = [4, 8, 16]
bottlenecks = 1

[synth]
chunk_size = 8
max_reject_ratio = 1000.0
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(f.path("tiny.toml"), TINY).unwrap();
        ok(&["phantoms", "--n", "10", "--test-n", "6", "--size", "32", "--seed", "1", "--out", s(&f.path("data"))]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cfg(&self) -> String {
        s(&self.path("tiny.toml")).to_string()
    }
}

#[test]
fn phantoms_load_and_repeat_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["phantoms", "--n", "10", "--size", "64", "--seed", "4", "--out", s(&a)]);
    ok(&["phantoms", "--n", "10", "--size", "64", "--seed", "4", "--out", s(&b)]);
    assert_eq!(tree(&a), tree(&b));
    let ds = cardiogen::datasets::load_dataset(&a).unwrap();
    assert_eq!(ds.len("train"), 10);
    assert!(a.join("config.toml").exists());
    ok(&["phantoms", "--n", "10", "--size", "64", "--seed", "5", "--out", s(&dir.path().join("c"))]);
    assert_ne!(tree(&a), tree(&dir.path().join("c")));
}

#[test]
fn bad_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&["phantoms", "--n", "10", "--size", "63", "--out", s(&out)]), 2);
    assert!(!out.exists());
    assert_eq!(code(&["train-seg", "--data", s(&dir.path().join("missing")), "--out", s(&out)]), 2);
    assert!(!out.exists(), "no partial outputs for a missing dataset");
    fs::write(dir.path().join("bad.toml"), "[seg]\nepochz = 3\n").unwrap();
    let bad = dir.path().join("bad.toml");
    assert_eq!(code(&["phantoms", "--config", s(&bad), "--out", s(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn trainers_write_checkpoint_history_and_config() {
    let f = Fixture::new();
    let data = f.path("data");
    for cmd in ["train-vae", "train-gan", "train-seg"] {
        let out = f.path(cmd);
        ok(&[cmd, "--data", s(&data), "--config", &f.cfg(), "--epochs", "2", "--seed", "7", "--out", s(&out)]);
        for file in ["model.ckpt", "history.csv", "config.toml"] {
            assert!(out.join(file).exists(), "{cmd} did not write {file}");
        }
        assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 3, "{cmd}");
    }
    let ft = f.path("ft");
    ok(&[
        "finetune",
        "--data",
        s(&data),
        "--checkpoint",
        s(&f.path("train-seg")),
        "--config",
        &f.cfg(),
        "--epochs",
        "2",
        "--out",
        s(&ft),
    ]);
    assert!(ft.join("model.ckpt").exists());
}

#[test]
fn seeded_training_repeats_byte_for_byte() {
    let f = Fixture::new();
    let data = f.path("data");
    for cmd in ["train-seg", "train-gan"] {
        let (a, b) = (f.path(&format!("{cmd}-a")), f.path(&format!("{cmd}-b")));
        for out in [&a, &b] {
            ok(&[cmd, "--data", s(&data), "--config", &f.cfg(), "--epochs", "2", "--seed", "7", "--out", s(out)]);
        }
        for file in ["history.csv", "model.ckpt", "config.toml"] {
            assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{cmd} {file}");
        }
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let f = Fixture::new();
    let (a, b) = (f.path("a"), f.path("b"));
    ok(&["train-seg", "--data", s(&f.path("data")), "--config", &f.cfg(), "--epochs", "1", "--seed", "3", "--out", s(&a)]);
    ok(&["train-seg", "--data", s(&f.path("data")), "--config", s(&a.join("config.toml")), "--out", s(&b)]);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn synth_writes_valid_corpus_montage_and_repeats() {
    let f = Fixture::new();
    // The shape prior needs more maps and a higher rate than the smoke runs
    // before its samples pass the validity filter.
    let shapes = f.path("shapes");
    ok(&["phantoms", "--n", "64", "--test-n", "0", "--size", "32", "--seed", "5", "--out", s(&shapes)]);
    let vae_cfg = f.path("vae.toml");
    fs::write(&vae_cfg, "[vae]\nbatch_size = 8\nlr = 2e-3\n[vae.arch]\nlatent_dim = 8\nbase_channels = 8\ndepth = 3\n").unwrap();
    ok(&["train-vae", "--data", s(&shapes), "--config", s(&vae_cfg), "--epochs", "40", "--seed", "1", "--out", s(&f.path("vae"))]);
    ok(&["train-gan", "--data", s(&f.path("data")), "--config", &f.cfg(), "--epochs", "1", "--out", s(&f.path("gan"))]);
    let synth = |out: &Path| {
        ok(&[
            "synth",
            "--vae",
            s(&f.path("vae")),
            "--gan",
            s(&f.path("gan/model.ckpt")),
            "--n",
            "25",
            "--seed",
            "2",
            "--config",
            &f.cfg(),
            "--out",
            s(out),
        ])
    };
    let (a, b) = (f.path("s1"), f.path("s2"));
    synth(&a);
    synth(&b);
    assert_eq!(tree(&a), tree(&b));
    let ds = cardiogen::datasets::load_dataset(&a).unwrap();
    let (_, maps) = ds.read_split("train").unwrap();
    assert_eq!(maps.len(), 25);
    assert!(maps.iter().all(|m| cardiogen::anatomy::check_validity(m).valid));
    let montage = fs::read(a.join("montage.png")).unwrap();
    let dec = png::Decoder::new(std::io::Cursor::new(montage)).read_info().unwrap();
    assert_eq!((dec.info().width, dec.info().height), (5 * 32, 5 * 64));
}

#[test]
fn eval_matrix_json_and_table_agree() {
    let f = Fixture::new();
    let data = f.path("data");
    ok(&["train-seg", "--data", s(&data), "--config", &f.cfg(), "--epochs", "1", "--out", s(&f.path("seg"))]);
    let out = f.path("eval");
    ok(&[
        "eval",
        "--checkpoints",
        &format!("net={},gt=truth", s(&f.path("seg"))),
        "--testsets",
        &format!("A={}", s(&data)),
        "--out",
        s(&out),
    ]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    let cells = m["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    let gt = cells.iter().find(|c| c["regime"] == "gt").unwrap();
    assert_eq!(gt["report"]["mean"], 1.0);
    for k in ["RV", "MYO", "LV"] {
        assert_eq!(gt["report"]["per_class"][k], 1.0);
    }
    let net = cells.iter().find(|c| c["regime"] == "net").unwrap();
    let mean = net["report"]["mean"].as_f64().unwrap();
    let table = fs::read_to_string(out.join("eval.txt")).unwrap();
    assert!(table.contains(&format!("**{mean:.3}**")), "{table}");
    assert_eq!(net["seed"], 0);

    // Re-scoring the recorded checkpoint directly gives the same cell.
    let ds = cardiogen::datasets::load_dataset(&data).unwrap();
    let (imgs, truths) = ds.read_split("test").unwrap();
    let ck = cardiogen::checkpoint::Checkpoint::load(Path::new(net["checkpoint_path"].as_str().unwrap())).unwrap();
    let seg = cardiogen::segmentation::Segmenter::from_checkpoint(&ck, candle_core::DType::F32).unwrap();
    assert_eq!(cardiogen::segmentation::evaluate(&seg, &imgs, &truths).unwrap().mean, mean);
}

#[test]
fn eval_marks_holes_and_still_writes_the_matrix() {
    let f = Fixture::new();
    let grid = f.path("grid.toml");
    fs::write(
        &grid,
        "regimes = [\"gt\", \"other\"]\ntestsets = [\"A\", \"B\"]\n[[cell]]\nregime = \"gt\"\ncheckpoint = \"gt\"\n",
    )
    .unwrap();
    let out = f.path("eval");
    let c = code(&[
        "eval",
        "--checkpoints",
        "gt=truth",
        "--testsets",
        &format!("A={},B={}", s(&f.path("data")), s(&f.path("nowhere"))),
        "--grid",
        s(&grid),
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 2);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(m["cells"].as_array().unwrap().len(), 1);
    assert_eq!(m["holes"].as_array().unwrap().len(), 3);
    assert!(fs::read_to_string(out.join("eval.txt")).unwrap().contains("(hole)"));
}
