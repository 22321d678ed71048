//! The command-line verbs on a configuration small enough to train in
//! seconds.

use std::fs;
use std::path::Path;

use symdec::cli::main_with;
use symdec::gridmath::csym;

const TINY: &str = r#"
seed = 3

[scene]
height = 32
width = 32
radius = [5.0, 10.0]
shapes = [1, 1]

[data]
train = 4
val = 2
test = 2

[model]
text_dim = 8

[model.encoder]
image_size = 32
patch_size = 8
dim = 8
layers = 1
heads = 1
mlp_ratio = 2

[model.decoder]
n = 4
dim = 4
layers = 1
heads = 1
mlp_ratio = 2
channels = [4, 2, 1]

[prompts]
m = 3
k = 2

[train]
batch_size = 2
epochs = 2

[eval]
consistency_samples = 1
"#;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let cfg = dir.join("tiny.toml");
    if !cfg.exists() {
        fs::write(&cfg, TINY).unwrap();
    }
    let mut all = vec!["symdec".to_string(), "--config".into(), cfg.display().to_string()];
    all.extend(args.iter().map(|a| a.to_string()));
    main_with(all)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(dir.path(), &["gen-data", "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run(dir.path(), &["gen-data", "--out", b.to_str().unwrap()]), 0);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 8);
    assert_eq!(ta, tb);
}

#[test]
fn train_resume_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();
    assert_eq!(run(dir.path(), &["gen-data", "--out", &p("data")]), 0);

    // straight through: 2 epochs of 2 steps
    assert_eq!(run(dir.path(), &["train", "--data", &p("data"), "--checkpoint", &p("full"), "--out", &p("full_out")]), 0);
    // interrupted after 3 steps, then resumed
    assert_eq!(run(dir.path(), &["train", "--data", &p("data"), "--checkpoint", &p("part"), "--out", &p("part_out"), "--max-steps", "3"]), 0);
    assert_eq!(run(dir.path(), &["train", "--data", &p("data"), "--checkpoint", &p("part"), "--out", &p("part_out"), "--resume"]), 0);
    let params = |d: &str| {
        let mut files: Vec<_> = tree(&dir.path().join(d)).into_iter().filter(|(n, _)| n.ends_with(".csym")).collect();
        files.sort();
        files
    };
    assert!(!params("full").is_empty());
    assert_eq!(params("full"), params("part"), "resumed run diverged");
    // step records agree except for wall-clock time
    let log = |d: &str| -> Vec<serde_json::Value> {
        fs::read_to_string(p(&format!("{d}/train_log.jsonl")))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall");
                v
            })
            .collect()
    };
    assert_eq!(log("full").len(), 4);
    assert_eq!(log("full"), log("part"));

    let image = p("data/val/images/0000.png");
    assert_eq!(run(dir.path(), &["predict", "--checkpoint", &p("full"), "--image", &image, "--out", &p("pred")]), 0);
    let heat = csym::read(p("pred/0000.csym")).unwrap();
    assert_eq!(heat.shape(), &[32, 32]);
    let pgm = fs::read(p("pred/0000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));

    let f1 = |split: &str| -> f64 {
        let out = p(&format!("eval_{split}"));
        assert_eq!(run(dir.path(), &["eval", "--checkpoint", &p("full"), "--data", &p("data"), "--split", split, "--out", &out]), 0);
        let report: serde_json::Value = serde_json::from_slice(&fs::read(format!("{out}/report.json")).unwrap()).unwrap();
        report["f1"].as_f64().unwrap()
    };
    let (train, val) = (f1("train"), f1("val"));
    assert!((0.0..=1.0).contains(&train) && (0.0..=1.0).contains(&val));
}

#[test]
fn equiv_check_and_prompts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["equiv-check", "--f64"]), 0);
    assert_eq!(run(dir.path(), &["equiv-check", "--inject-positional-encoding"]), 3);
    let out = dir.path().join("prompts.txt");
    assert_eq!(run(dir.path(), &["prompts", "--out", out.to_str().unwrap()]), 0);
    assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 3);
}
