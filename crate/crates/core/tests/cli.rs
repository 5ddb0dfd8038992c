use std::path::Path;
use std::process::{Command, Output};

use graphkd::checkpoint::Checkpoint;
use graphkd::eval::ComparisonReport;
use graphkd::synth::{GroundTruth, SynthConfig};

fn graphkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphkd")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = graphkd(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    graphkd(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen-synth", "--out", p(&a), "--seed", "7", "--samples", "120"]);
    ok(&["gen-synth", "--out", p(&b), "--seed", "7", "--samples", "120"]);
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, fb);
}

#[test]
fn gen_synth_defaults_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gen-synth", "--out", p(tmp.path())]);
    let truth: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth.config, SynthConfig::default());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&["train-teacher"]), 1);
    assert_eq!(code(&["train-teacher", "--graphs", "g", "--out", "o", "--bogus"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gradcheck", "--threads", "0"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn data_errors_exit_2_and_numeric_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let report = tmp.path().join("r.json");
    assert_eq!(code(&["eval", "--model", p(&junk), "--graphs", p(&junk), "--report", p(&report)]), 2);
    assert!(!report.exists());
    assert_eq!(code(&["train-teacher", "--graphs", "/nonexistent/g", "--out", p(&junk)]), 2);
    assert_eq!(code(&["gradcheck"]), 0);
    assert_eq!(code(&["gradcheck", "--tolerance", "0"]), 3);
}

#[test]
fn full_pipeline_produces_a_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |name: &str| tmp.path().join(name);
    let d = t("data");
    ok(&["gen-synth", "--out", p(&d), "--samples", "160", "--seed", "2"]);
    // Text embeddings recomputed by `embed` agree with the generated ones.
    ok(&["embed", "--manifest", p(&d.join("manifest.jsonl")), "--seed", "2", "--out", p(&t("text.gemb"))]);
    assert_eq!(std::fs::read(t("text.gemb")).unwrap(), std::fs::read(d.join("text.gemb")).unwrap());
    let stores = format!("{},{}", p(&d.join("visual.gemb")), p(&t("text.gemb")));
    ok(&[
        "build-graphs",
        "--manifest",
        p(&d.join("manifest.jsonl")),
        "--embeddings",
        &stores,
        "--triplets",
        p(&d.join("triplets.tsv")),
        "--triplet-embeddings",
        p(&d.join("triplets.gemb")),
        "--out",
        p(&t("g.graphs")),
    ]);
    let graphs = p(&t("g.graphs")).to_string();
    ok(&["train-teacher", "--graphs", &graphs, "--epochs", "2", "--seed", "1", "--out", p(&t("t.ckpt"))]);
    ok(&["distill", "--graphs", &graphs, "--kd-weight", "0", "--epochs", "2", "--out", p(&t("base.ckpt"))]);
    let distill = |out: &str| {
        ok(&[
            "distill",
            "--graphs",
            &graphs,
            "--teacher",
            p(&t("t.ckpt")),
            "--epochs",
            "2",
            "--soft-label-cache",
            p(&t("soft.gslb")),
            "--out",
            p(&t(out)),
        ])
    };
    distill("kd.ckpt");
    assert!(t("soft.gslb").exists());
    // Second run reads the cache and must train the same student; only the
    // echoed output path differs.
    distill("kd2.ckpt");
    let first = Checkpoint::read(t("kd.ckpt")).unwrap();
    let second = Checkpoint::read(t("kd2.ckpt")).unwrap();
    assert_eq!(first.tensors, second.tensors);
    assert_ne!(first.config, second.config);

    ok(&["eval", "--model", p(&t("base.ckpt")), "--graphs", &graphs, "--report", p(&t("base.json"))]);
    ok(&["eval", "--model", p(&t("kd.ckpt")), "--graphs", &graphs, "--report", p(&t("kd.json"))]);
    ok(&["eval", "--model", p(&t("t.ckpt")), "--graphs", &graphs, "--report", p(&t("teacher.json"))]);
    let out = ok(&[
        "compare",
        "--baseline",
        p(&t("base.json")),
        "--treated",
        p(&t("kd.json")),
        "--baseline",
        p(&t("base.json")),
        "--treated",
        p(&t("teacher.json")),
        "--out",
        p(&t("cmp.json")),
    ]);
    let report = ComparisonReport::from_json(&std::fs::read_to_string(t("cmp.json")).unwrap()).unwrap();
    assert_eq!(report.pairs.len(), 2);
    assert_eq!(report.groups, ["g0", "g1", "g2"]);
    assert_eq!(report.config["command"]["compare"]["out"], p(&t("cmp.json")));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("delta"), "{table}");

    assert_eq!(code(&["compare", "--baseline", p(&t("base.json")), "--out", p(&t("x.json"))]), 1);
    assert_eq!(
        code(&["distill", "--graphs", &graphs, "--epochs", "1", "--out", p(&t("no-teacher.ckpt"))]),
        1
    );
}
