//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always show up in
//! `cargo test` output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use graphkd::checkpoint::Checkpoint;
use graphkd::distill::{kd_loss, teacher_soft_labels, train_student, DistillConfig, SoftLabelCache};
use graphkd::embedding::EmbeddingStore;
use graphkd::eval::{evaluate_model, Model};
use graphkd::fixtures::{student_gradcheck, teacher_gradcheck};
use graphkd::graph::{build_graphs, normalize_adjacency, GraphConfig, Subgraph};
use graphkd::manifest::Split;
use graphkd::metrics::{accuracy, micro_f1};
use graphkd::student::StudentKind;
use graphkd::synth::{generate_synthetic, SynthConfig};
use graphkd::teacher::{train_teacher, Teacher, TeacherConfig};
use graphkd::tensor::Tensor;
use graphkd::triplets::{triplet_id, Triplet, TripletStore};
use graphkd::Error;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(n: usize, name: &str, check: fn() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} [{name}]: {tag} ({detail}; {secs:.1}s)");
    outcome.is_ok()
}

fn main() {
    let results = [
        run(1, "gradient correctness", gradients),
        run(2, "adjacency normalization oracle", adjacency),
        run(3, "retrieval exactness", retrieval),
        run(4, "distillation losses", losses),
        run(5, "directional reproduction", directional),
        run(6, "CLI determinism", determinism),
        run(7, "metric identity", metrics),
        run(8, "format round-trips", formats),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1. eps = 1e-5, max relative error <= 1e-4, under a minute.
fn gradients() -> Check {
    let start = Instant::now();
    let checks = [
        ("teacher", teacher_gradcheck(1, 1e-5)),
        ("mlp", student_gradcheck(StudentKind::Mlp, 1, 1e-5)),
        ("transformer", student_gradcheck(StudentKind::Transformer, 1, 1e-5)),
    ];
    let mut parts = Vec::new();
    for (name, report) in checks {
        let report = report.map_err(|e| format!("{name}: {e}"))?;
        ensure(report.max_rel_error <= 1e-4, || {
            format!("{name} max relative error {:.3e} > 1e-4", report.max_rel_error)
        })?;
        parts.push(format!("{name} {:.1e}", report.max_rel_error));
    }
    ensure(start.elapsed() < Duration::from_secs(60), || "took over a minute".into())?;
    Ok(format!("max relative errors: {}", parts.join(", ")))
}

/// Textbook normalization: degree of A + I, then each entry scaled by both
/// endpoint degrees.
fn adjacency_oracle(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let di: f64 = 1.0 + a[i].iter().sum::<f64>();
            let dj: f64 = 1.0 + a[j].iter().sum::<f64>();
            let aij = if i == j { 1.0 } else { a[i][j] };
            out[i][j] = aij / (di * dj).sqrt();
        }
    }
    out
}

// 2. Every symmetric hollow matrix of size <= 4 over {0, 0.5, 1}, 1e-12.
fn adjacency() -> Check {
    let values = [0.0, 0.5, 1.0];
    let mut cases = 0;
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for code in 0..3usize.pow(pairs.len() as u32) {
            let mut a = vec![vec![0.0; n]; n];
            let mut c = code;
            for &(i, j) in &pairs {
                a[i][j] = values[c % 3];
                a[j][i] = values[c % 3];
                c /= 3;
            }
            let got = normalize_adjacency(&Tensor::from_rows(&a).unwrap()).map_err(|e| e.to_string())?;
            let want = adjacency_oracle(&a);
            for i in 0..n {
                for j in 0..n {
                    ensure((got.get(i, j) - want[i][j]).abs() <= 1e-12, || {
                        format!("{a:?} entry ({i},{j}): {} vs {}", got.get(i, j), want[i][j])
                    })?;
                    ensure((got.get(i, j) - got.get(j, i)).abs() <= 1e-12, || format!("{a:?} not symmetric"))?;
                }
            }
            cases += 1;
        }
    }
    let worked = |a: [[f64; 2]; 2], want: [[f64; 2]; 2]| -> Result<(), String> {
        let got = normalize_adjacency(&Tensor::from_rows(&a).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                ensure((got.get(i, j) - want[i][j]).abs() <= 1e-12, || format!("worked case {a:?} gave {got:?}"))?;
            }
        }
        Ok(())
    };
    worked([[0.0, 1.0], [1.0, 0.0]], [[0.5, 0.5], [0.5, 0.5]])?;
    worked([[0.0, 0.5], [0.5, 0.0]], [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]])?;
    Ok(format!("{cases} matrices and 2 worked cases within 1e-12"))
}

// 3. 1,000 random stores, dims 8-64, sizes 1-200, k 1-5, exact match.
fn retrieval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ties = 0;
    for case in 0..1000 {
        let dim = rng.random_range(8..=64);
        let size = rng.random_range(1..=200);
        let k = rng.random_range(1..=5);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(size);
        for _ in 0..size {
            // Duplicates and scaled copies force exact similarity ties.
            if !vectors.is_empty() && rng.random::<f64>() < 0.2 {
                let src = vectors[rng.random_range(0..vectors.len())].clone();
                let scale = [1.0, 2.0, 0.5][rng.random_range(0..3)];
                vectors.push(src.iter().map(|v| v * scale).collect());
                ties += 1;
            } else {
                vectors.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
            }
        }
        let query: Vec<f64> = if rng.random::<bool>() {
            vectors[rng.random_range(0..size)].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let mut emb = EmbeddingStore::new(dim);
        let mut triplets = Vec::with_capacity(size);
        for (i, v) in vectors.iter().enumerate() {
            emb.insert(triplet_id(i), v).unwrap();
            triplets.push(Triplet::new(format!("h{i}"), "r", "t"));
        }
        let store = TripletStore::new(triplets, emb).unwrap();
        let got: Vec<usize> = store.top_k(&query, k).unwrap().iter().map(|h| h.index).collect();

        // Oracle: similarity of every entry (as stored), full stable sort.
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut all: Vec<(usize, f64)> = (0..size)
            .map(|i| {
                let e = store.embedding(i);
                let d: f64 = e.iter().zip(&query).map(|(a, b)| a * b).sum();
                (i, d / (norm(e) * norm(&query)))
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let want: Vec<usize> = all.iter().take(k).map(|(i, _)| *i).collect();
        ensure(got == want, || format!("case {case}: got {got:?}, oracle {want:?}"))?;
    }
    Ok(format!("1000 stores exact, {ties} tie-forcing entries"))
}

fn random_distribution(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c)
        .map(|_| if rng.random::<f64>() < 0.15 { 0.0 } else { rng.random::<f64>() })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let mut p = vec![0.0; c];
        p[0] = 1.0;
        return p;
    }
    raw.iter().map(|v| v / total).collect()
}

fn small_graphs() -> Vec<Subgraph> {
    let config = SynthConfig {
        samples: 40,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&config).unwrap();
    build_graphs(&data.dataset, &data.content_store().unwrap(), &data.triplets, &GraphConfig::default()).unwrap()
}

// 4. KD loss properties and soft-label normalization.
fn losses() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_loss = f64::INFINITY;
    for _ in 0..10_000 {
        let c = rng.random_range(2..=8);
        let p = random_distribution(&mut rng, c);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t = [1.0, 2.0, 4.0][rng.random_range(0..3)];
        let l = kd_loss(&p, &logits, t).map_err(|e| e.to_string())?;
        ensure(l >= 0.0, || format!("kd_loss {l} < 0 for {p:?} / {logits:?}"))?;
        min_loss = min_loss.min(l);
    }
    let mut worst_self = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..=8);
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let logits: Vec<f64> = p.iter().map(|v| v.ln() + 3.0).collect();
        worst_self = worst_self.max(kd_loss(&p, &logits, 1.0).unwrap());
    }
    ensure(worst_self <= 1e-12, || format!("kd_loss(p, ln p) = {worst_self:e}"))?;
    let ln2 = kd_loss(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
    ensure((ln2 - 2f64.ln()).abs() <= 1e-6, || format!("KL((1,0)||(0.5,0.5)) = {ln2}"))?;

    let graphs = small_graphs();
    let mut worst_sum = 0.0f64;
    for n_t in 1..=3u64 {
        let teachers: Vec<Teacher> = (0..n_t)
            .map(|s| {
                let mut cfg = TeacherConfig::new(graphs[0].dim(), 4);
                cfg.seed = 10 + s;
                Teacher::init(cfg).unwrap().0
            })
            .collect();
        for g in &graphs {
            for t in [1.0, 2.0] {
                let p = teacher_soft_labels(&teachers, g, t).unwrap();
                worst_sum = worst_sum.max((p.data().iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst_sum <= 1e-9, || format!("soft-label row sum off by {worst_sum:e}"))?;
    Ok(format!(
        "min kd_loss {min_loss:.2e} over 10000 pairs, self-loss <= {worst_self:.1e}, ln2 error {:.1e}, row sums within {worst_sum:.1e}",
        (ln2 - 2f64.ln()).abs()
    ))
}

struct SeedScores {
    teacher: f64,
    mlp: [f64; 2],
    transformer: [f64; 2],
}

fn seed_run(seed: u64) -> SeedScores {
    let config = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&config).unwrap();
    let graphs =
        build_graphs(&data.dataset, &data.content_store().unwrap(), &data.triplets, &GraphConfig::default()).unwrap();
    let train: Vec<&Subgraph> = graphs.iter().filter(|g| g.split == Split::Train).collect();
    let val: Vec<&Subgraph> = graphs.iter().filter(|g| g.split == Split::Val).collect();
    let mut tc = TeacherConfig::new(config.dim, config.classes);
    tc.seed = seed;
    let (teacher, _) = train_teacher(&train, &val, tc).unwrap();
    let score = |m: Model| evaluate_model(&m, &graphs, Split::Test).unwrap().micro_f1;
    let student = |kind: StudentKind, lambda: f64| {
        let mut dc = DistillConfig::new(kind);
        dc.seed = seed;
        dc.kd_weight = lambda;
        let (s, _) = train_student(&train, &val, std::slice::from_ref(&teacher), &dc).unwrap();
        score(Model::Student(s))
    };
    SeedScores {
        teacher: score(Model::Teacher(teacher.clone())),
        mlp: [student(StudentKind::Mlp, 0.0), student(StudentKind::Mlp, 1.0)],
        transformer: [student(StudentKind::Transformer, 0.0), student(StudentKind::Transformer, 1.0)],
    }
}

// 5. Default synthetic data, 5 seeds: teacher >= baseline + 10 points,
// distilled students >= baseline + 3 points, under 10 minutes.
fn directional() -> Check {
    let start = Instant::now();
    let runs: Vec<SeedScores> = (0..5u64).into_par_iter().map(seed_run).collect();
    let mean = |f: &dyn Fn(&SeedScores) -> f64| 100.0 * runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let teacher = mean(&|r| r.teacher);
    let (mlp0, mlp1) = (mean(&|r| r.mlp[0]), mean(&|r| r.mlp[1]));
    let (tr0, tr1) = (mean(&|r| r.transformer[0]), mean(&|r| r.transformer[1]));
    let elapsed = start.elapsed();
    let detail = format!(
        "teacher {teacher:.2}, mlp {mlp0:.2} -> {mlp1:.2} ({:+.2}), transformer {tr0:.2} -> {tr1:.2} ({:+.2}); \
         need teacher gap >= 10 (got {:+.2}) and KD gains >= 3",
        mlp1 - mlp0,
        tr1 - tr0,
        teacher - mlp0
    );
    let ok = teacher - mlp0 >= 10.0
        && mlp1 - mlp0 >= 3.0
        && tr1 - tr0 >= 3.0
        && elapsed <= Duration::from_secs(600);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_graphkd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

// 6. Every subcommand twice with identical flags: byte-identical outputs.
fn determinism() -> Check {
    let steps: &[&[&str]] = &[
        &["gen-synth", "--out", "d", "--samples", "200", "--seed", "5"],
        &["embed", "--manifest", "d/manifest.jsonl", "--seed", "5", "--out", "text.gemb"],
        &[
            "build-graphs",
            "--manifest",
            "d/manifest.jsonl",
            "--embeddings",
            "d/visual.gemb,text.gemb",
            "--triplets",
            "d/triplets.tsv",
            "--triplet-embeddings",
            "d/triplets.gemb",
            "--out",
            "g.graphs",
        ],
        &["train-teacher", "--graphs", "g.graphs", "--epochs", "2", "--seed", "5", "--out", "t.ckpt"],
        &[
            "distill",
            "--graphs",
            "g.graphs",
            "--teacher",
            "t.ckpt",
            "--student",
            "transformer",
            "--epochs",
            "2",
            "--seed",
            "5",
            "--soft-label-cache",
            "soft.gslb",
            "--out",
            "s.ckpt",
        ],
        &["distill", "--graphs", "g.graphs", "--kd-weight", "0", "--epochs", "2", "--seed", "5", "--out", "b.ckpt"],
        &["eval", "--model", "s.ckpt", "--graphs", "g.graphs", "--report", "s.json"],
        &["eval", "--model", "b.ckpt", "--graphs", "g.graphs", "--split", "val", "--report", "b.json"],
        &["compare", "--baseline", "b.json", "--treated", "s.json", "--out", "cmp.json"],
        &["gradcheck", "--seed", "5"],
    ];
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    for step in steps {
        let a = cli(first.path(), step);
        let b = cli(second.path(), step);
        ensure(a == b, || format!("{} printed different output", step[0]))?;
        let (ta, tb) = (tree(first.path()), tree(second.path()));
        ensure(ta == tb, || {
            let diff: Vec<&String> = ta
                .iter()
                .zip(&tb)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| &x.0)
                .collect();
            format!("after {}: files differ {diff:?}", step[0])
        })?;
    }
    Ok(format!("{} subcommand runs, {} files identical", steps.len(), tree(first.path()).len()))
}

// 7. micro-F1 equals accuracy exactly; worked case 2/3.
fn metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..10_000 {
        let n = rng.random_range(1..=50);
        let c = rng.random_range(2..=10);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (f, a) = (micro_f1(&preds, &labels).unwrap(), accuracy(&preds, &labels).unwrap());
        ensure(f == a, || format!("case {case}: micro-F1 {f} != accuracy {a}"))?;
    }
    let worked = micro_f1(&[0, 1, 0], &[0, 1, 1]).unwrap();
    ensure((worked - 2.0 / 3.0).abs() <= 1e-12, || format!("worked case gave {worked}"))?;
    Ok("10000 cases exact, worked case 2/3".into())
}

fn is_format(r: Result<impl std::fmt::Debug, Error>) -> bool {
    matches!(r, Err(Error::Format { .. }))
}

// 8. write -> read -> write is byte-identical; bad magic and truncation
// are format errors.
fn formats() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n);
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let mut store = EmbeddingStore::new(5);
    for i in 0..7 {
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.insert(format!("e{i}"), &v).unwrap();
    }
    let ckpt = Checkpoint {
        model: "probe".into(),
        config: serde_json::json!({ "seed": 8, "note": "round trip" }),
        tensors: vec![
            ("a".into(), Tensor::new(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()),
            ("b".into(), Tensor::new(1, 4, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()),
        ],
    };
    let cache = SoftLabelCache {
        classes: 3,
        entries: (0..5).map(|i| (format!("s{i}"), random_distribution(&mut rng, 3))).collect(),
    };

    store.write(path("e1")).unwrap();
    EmbeddingStore::read(path("e1")).unwrap().write(path("e2")).unwrap();
    ckpt.write(path("c1")).unwrap();
    Checkpoint::read(path("c1")).unwrap().write(path("c2")).unwrap();
    cache.write(path("s1")).unwrap();
    SoftLabelCache::read(path("s1")).unwrap().write(path("s2")).unwrap();
    for (a, b) in [("e1", "e2"), ("c1", "c2"), ("s1", "s2")] {
        let (x, y) = (std::fs::read(path(a)).unwrap(), std::fs::read(path(b)).unwrap());
        ensure(x == y, || format!("{a} and {b} differ"))?;
    }

    let mut cases = 0;
    for (name, bytes) in [
        ("embedding store", std::fs::read(path("e1")).unwrap()),
        ("checkpoint", std::fs::read(path("c1")).unwrap()),
        ("soft-label cache", std::fs::read(path("s1")).unwrap()),
    ] {
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        let mut variants = vec![("bad magic", bad_magic)];
        for cut in [0, 3, 7, bytes.len() / 2, bytes.len() - 1] {
            variants.push(("truncated", bytes[..cut].to_vec()));
        }
        for (what, v) in variants {
            let ok = match name {
                "embedding store" => is_format(EmbeddingStore::from_bytes(&v)),
                "checkpoint" => is_format(Checkpoint::from_bytes(&v)),
                _ => is_format(SoftLabelCache::from_bytes(&v)),
            };
            ensure(ok, || format!("{name} {what} ({} bytes) was not a format error", v.len()))?;
            cases += 1;
        }
    }
    Ok(format!("3 formats round-trip byte-identically, {cases} corruptions rejected"))
}
