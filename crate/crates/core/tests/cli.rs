use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "word_dim=8",
    "--set", "feature_dim=16",
    "--set", "semantic_dim=12",
    "--set", "symbols=6",
    "--set", "samples_per_class=6",
    "--set", "test_per_class=3",
    "--set", "stage1_epochs=3",
    "--set", "stage2_epochs=3",
    "--set", "episodes=3",
    "--set", "walks_per_node=10",
    "--set", "lr=0.001",
];

fn semcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semcom")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let all: Vec<&str> = args.iter().copied().chain(SMALL.iter().copied()).collect();
    let out = semcom(&all);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-synthetic → build-kg → train 1 → train 2 → eval → exports.
fn quickstart(dir: &Path) {
    let w = dir.join("world");
    run_ok(&["gen-synthetic", "--out", p(&w), "--seed", "3"]);
    let skb = dir.join("skb.json");
    run_ok(&[
        "build-kg", "--triples", p(&w.join("triples.tsv")), "--vectors", p(&w.join("vectors.txt")),
        "--labels", p(&w.join("labels.tsv")), "--out", p(&skb), "--seed", "3",
    ]);
    let s1 = dir.join("stage1.ckpt");
    let s2 = dir.join("stage2.ckpt");
    let train = w.join("train.bin");
    let labels = w.join("labels.tsv");
    run_ok(&[
        "train", "--stage", "1", "--skb", p(&skb), "--train", p(&train), "--labels", p(&labels), "--out", p(&s1),
        "--seed", "3",
    ]);
    run_ok(&[
        "train", "--stage", "2", "--checkpoint", p(&s1), "--train", p(&train), "--labels", p(&labels), "--out",
        p(&s2), "--seed", "3",
    ]);
    run_ok(&[
        "eval", "--checkpoint", p(&s2), "--test", p(&w.join("test.bin")), "--labels", p(&labels), "--out-dir",
        p(&dir.join("eval")), "--seed", "3",
    ]);
    run_ok(&["export-pca", "--checkpoint", p(&s2), "--out", p(&dir.join("pca.csv")), "--seed", "3"]);
    run_ok(&[
        "export-similarity", "--checkpoint", p(&s2), "--test", p(&w.join("test.bin")), "--labels", p(&labels),
        "--out", p(&dir.join("similarity.csv")), "--seed", "3",
    ]);
}

#[test]
fn quickstart_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    quickstart(a.path());
    quickstart(b.path());
    for f in [
        "world/train.bin",
        "world/test.bin",
        "world/triples.tsv",
        "world/vectors.txt",
        "skb.json",
        "stage1.ckpt",
        "stage2.ckpt",
        "stage2.ckpt.loss.csv",
        "eval/report.csv",
        "eval/per_category.csv",
        "eval/ablation.csv",
        "pca.csv",
        "similarity.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    // every command left a manifest
    for m in [
        "world/manifest.gen-synthetic.json",
        "skb.json.manifest.json",
        "stage1.ckpt.manifest.json",
        "stage2.ckpt.manifest.json",
        "eval/manifest.eval.json",
        "pca.csv.manifest.json",
        "similarity.csv.manifest.json",
    ] {
        assert!(a.path().join(m).exists(), "{m}");
    }

    let report = std::fs::read_to_string(a.path().join("eval/report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("snr_db,metric,mean,std"));
    assert_eq!(lines.count(), 6 * 4);
    let pca = std::fs::read_to_string(a.path().join("pca.csv")).unwrap();
    assert_eq!(pca.lines().next(), Some("label,split,pc1,pc2"));
    assert_eq!(pca.lines().count(), 1 + 32);
    let sim = std::fs::read_to_string(a.path().join("similarity.csv")).unwrap();
    assert!(sim.starts_with("sample_id,true_label,predicted_label,label_1,score_1,confidence_1,"));
    assert_eq!(sim.lines().count(), 1 + 32 * 3);

    // the manifest digests match the files they describe
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("stage2.ckpt.manifest.json")).unwrap()).unwrap();
    let out = &m["outputs"][0];
    let digest = semcom::manifest::sha256_file(Path::new(out["path"].as_str().unwrap())).unwrap();
    assert_eq!(out["sha256"].as_str().unwrap(), digest);
    assert_eq!(m["config"]["seed"], "3");

    // single-SNR shortcut
    let w = a.path().join("world");
    let single = a.path().join("single");
    run_ok(&[
        "eval", "--checkpoint", p(&a.path().join("stage2.ckpt")), "--test", p(&w.join("test.bin")), "--labels",
        p(&w.join("labels.tsv")), "--out-dir", p(&single), "--snr-db", "-5",
    ]);
    let r = std::fs::read_to_string(single.join("report.csv")).unwrap();
    assert_eq!(r.lines().count(), 1 + 4);
    assert!(r.lines().nth(1).unwrap().starts_with("-5,seen,"));

    // a checkpoint applied to features of the wrong width
    let bad = a.path().join("bad.bin");
    semcom::dataset::FeatureDataset::new(ndarray::Array2::zeros((2, 5)), vec![0, 1])
        .unwrap()
        .write_to(std::fs::File::create(&bad).unwrap())
        .unwrap();
    let out = semcom(&[
        "eval", "--checkpoint", p(&a.path().join("stage2.ckpt")), "--test", p(&bad), "--labels",
        p(&w.join("labels.tsv")), "--out-dir", p(&single),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));

    // evaluation refuses a checkpoint that never ran stage two
    let out = semcom(&[
        "eval", "--checkpoint", p(&a.path().join("stage1.ckpt")), "--test", p(&w.join("test.bin")), "--labels",
        p(&w.join("labels.tsv")), "--out-dir", p(&single),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn build_kg_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let triples = dir.path().join("t.tsv");
    std::fs::write(
        &triples,
        "cat\tIsA\tanimal\ndog\tIsA\tanimal\nzebra\tIsA\tanimal\nzebra\tHasA\tstripes\n",
    )
    .unwrap();
    let vectors = dir.path().join("v.txt");
    std::fs::write(&vectors, "cat 1 0\ndog 0 1\nanimal 1 1\nzebra 0.5 0.5\n").unwrap();
    let out = dir.path().join("skb.json");
    let args = [
        "build-kg", "--triples", p(&triples), "--vectors", p(&vectors), "--seen", "cat,dog", "--unseen", "zebra",
        "--out", p(&out), "--set", "word_dim=2",
    ];
    let o = semcom(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    // seen: cat, dog, animal and zebra (two hops via animal); three edges
    assert!(text.contains("seen graph: 4 nodes, 3 edges, 2 categories"), "{text}");
    // unseen: zebra, animal, stripes, cat, dog; four edges; stripes has no vector
    assert!(text.contains("unseen graph: 5 nodes, 4 edges, 1 categories"), "{text}");
    assert!(text.contains("1 missing"), "{text}");
    let first = std::fs::read(&out).unwrap();
    assert!(semcom(&args).status.success());
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = dir.path().join("x.json");
    // missing input file
    let o = semcom(&[
        "build-kg", "--triples", p(&missing), "--vectors", p(&missing), "--seen", "a", "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    // stage two without a stage-one checkpoint
    let o = semcom(&["train", "--stage", "2", "--train", "t.bin", "--labels", "l.tsv", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));
    // unknown config key is named
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "lr = 0.001\nlearning_rat = 3\n").unwrap();
    let o = semcom(&["gen-synthetic", "--out", p(dir.path()), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
    // unknown subcommand
    assert_eq!(semcom(&["fly"]).status.code(), Some(2));
    assert_eq!(semcom(&["--help"]).status.code(), Some(0));
    assert_eq!(semcom(&["keys"]).status.code(), Some(0));
}
