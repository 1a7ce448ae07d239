use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
train_utterances = 16
test_utterances = 6
gas_hidden = 4
gas_epochs = 1
hidden_dim = 8
gate_hidden = 8
phase1_epochs = 1
phase2_epochs = 1
outer_iterations = 1
query_words = 2
examples_per_word = 1
";

fn segaw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segaw"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run segaw")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = segaw(dir, args);
    assert!(
        out.status.success(),
        "segaw {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// synth → train-gas → train → segment → embed → search, writing into `dir`.
fn pipeline(dir: &Path) {
    fs::write(dir.join("tiny.cfg"), TINY).unwrap();
    let c = ["--seed", "7", "--config", "tiny.cfg"];
    let with = |cmd: &str, rest: &[&str]| -> Vec<String> {
        let mut v = vec![cmd.to_string()];
        v.extend(c.iter().map(|s| s.to_string()));
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    };
    let run = |args: Vec<String>| {
        let a: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        ok(dir, &a)
    };
    run(with("synth", &["--out", "corpus"]));
    run(with(
        "train-gas",
        &["--features", "corpus/features", "--manifest", "corpus/train.manifest", "--out", "gas.sgck"],
    ));
    run(with(
        "train",
        &[
            "--features",
            "corpus/features",
            "--manifest",
            "corpus/train.manifest",
            "--gas",
            "gas.sgck",
            "--out",
            "model.sgck",
            "--log",
            "train.log",
        ],
    ));
    let model = ["--checkpoint", "model.sgck", "--gas", "gas.sgck"];
    let inputs = ["--features", "corpus/features", "--manifest", "corpus/test.manifest"];
    run(with("segment", &[&inputs[..], &model[..], &["--out", "seg.tsv"]].concat()));
    run(with("embed", &[&inputs[..], &model[..], &["--out", "index.sgix"]].concat()));
    run(with(
        "search",
        &[&model[..], &["--index", "index.sgix", "--query", "corpus/features/train-0000.sgaw", "--out", "hits.tsv"]].concat(),
    ));
}

#[test]
fn full_pipeline_is_deterministic_and_well_formed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "corpus/train.manifest",
        "corpus/test.manifest",
        "corpus/features/test-0003.sgaw",
        "gas.sgck",
        "model.sgck",
        "seg.tsv",
        "index.sgix",
        "hits.tsv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
    let dir = a.path();

    let log = fs::read_to_string(dir.join("train.log")).unwrap();
    assert!(log.contains("iteration=1 phase=1 loss="), "{log}");
    assert!(log.contains("phase=2 mean_r="), "{log}");

    // segment: frames and seconds agree and partition the utterance
    let manifest = fs::read_to_string(dir.join("corpus/test.manifest")).unwrap();
    let seg = fs::read_to_string(dir.join("seg.tsv")).unwrap();
    assert_eq!(seg.lines().count(), 6);
    for (s, m) in seg.lines().zip(manifest.lines()) {
        let cols: Vec<&str> = s.split('\t').collect();
        let mcols: Vec<&str> = m.split('\t').collect();
        assert_eq!(cols[0], mcols[0]);
        let ends: Vec<usize> = cols[1].split(',').map(|x| x.parse().unwrap()).collect();
        let secs: Vec<f64> = cols[2].split(',').map(|x| x.parse().unwrap()).collect();
        assert!(ends.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ends.last(), mcols[1].split(',').last().map(|x| x.parse::<usize>().unwrap()).as_ref());
        for (e, s) in ends.iter().zip(&secs) {
            assert!((*e as f64 * 0.01 - s).abs() < 1e-9);
        }
    }

    let hits = fs::read_to_string(dir.join("hits.tsv")).unwrap();
    let rows: Vec<(String, f64, usize)> = hits
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            assert_eq!(c.len(), 3);
            (c[0].to_string(), c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 6);
    for w in rows.windows(2) {
        assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0), "{hits}");
    }

    let seg_report = ok(
        dir,
        &["eval-seg", "--seed", "7", "--hyp", "seg.tsv", "--ref", "corpus/test.manifest"],
    );
    for k in ["precision = ", "recall = ", "f1 = ", "segments_per_frame = "] {
        assert!(seg_report.contains(k), "{seg_report}");
    }
    let perfect = ok(
        dir,
        &["eval-seg", "--seed", "7", "--hyp", "corpus/test.manifest", "--ref", "corpus/test.manifest"],
    );
    assert!(perfect.contains("f1 = 1.000000"), "{perfect}");

    let std_report = ok(
        dir,
        &[
            "eval-std",
            "--seed",
            "7",
            "--config",
            "tiny.cfg",
            "--checkpoint",
            "model.sgck",
            "--gas",
            "gas.sgck",
            "--index",
            "index.sgix",
            "--features",
            "corpus/features",
            "--train-manifest",
            "corpus/train.manifest",
            "--test-manifest",
            "corpus/test.manifest",
            "--dtw",
        ],
    );
    for k in ["map = ", "map_random = ", "map_dtw = ", "queries = 2"] {
        assert!(std_report.contains(k), "{std_report}");
    }
}

#[test]
fn config_errors_and_required_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "lamda = 3\n").unwrap();
    let out = segaw(dir.path(), &["synth", "--seed", "1", "--config", "bad.cfg", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
    let out = segaw(dir.path(), &["synth", "--seed", "1", "--set", "noise=loud", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    let out = segaw(dir.path(), &["synth", "--out", "c"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn synth_is_reproducible_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "train_utterances=5", "--set", "test_utterances=2"];
    for (seed, out) in [("7", "a"), ("7", "b"), ("8", "c")] {
        ok(dir.path(), &[&["synth", "--seed", seed, "--out", out][..], &small[..]].concat());
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("train.manifest")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let feat = fs::read(dir.path().join("a/features/train-0000.sgaw")).unwrap();
    assert_eq!(&feat[..4], b"SGAW");
    let t = u32::from_le_bytes(feat[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(feat[12..16].try_into().unwrap()) as usize;
    assert_eq!(feat.len(), 16 + 4 * t * d);
}

#[test]
fn index_from_another_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.cfg"), format!("{TINY}use_gas = false\n")).unwrap();
    let base = ["--config", "tiny.cfg"];
    ok(p, &[&["synth", "--seed", "1", "--out", "c"][..], &base[..]].concat());
    for (seed, out) in [("1", "m1.sgck"), ("2", "m2.sgck")] {
        ok(
            p,
            &[
                &["train", "--seed", seed, "--features", "c/features", "--manifest", "c/train.manifest", "--out", out][..],
                &base[..],
            ]
            .concat(),
        );
    }
    ok(
        p,
        &["embed", "--seed", "1", "--checkpoint", "m1.sgck", "--features", "c/features", "--manifest", "c/test.manifest", "--out", "i.sgix"],
    );
    let out = segaw(
        p,
        &["search", "--seed", "1", "--checkpoint", "m2.sgck", "--index", "i.sgix", "--query", "c/features/test-0000.sgaw"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--seed", "3"]);
    assert!(out.contains("passed = true"), "{out}");
    assert!(out.contains("segmentation_gate.max_rel_error = "), "{out}");
}

#[test]
fn truncated_feature_file_names_offset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--seed", "1", "--set", "train_utterances=2", "--set", "test_utterances=1", "--out", "c"]);
    let f = p.join("c/features/train-0000.sgaw");
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
    let out = segaw(p, &["train-gas", "--seed", "1", "--features", "c/features", "--out", "g.sgck"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("at byte 16"), "{err}");
}
