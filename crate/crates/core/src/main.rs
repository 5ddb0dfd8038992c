use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use graphkd::checkpoint::Checkpoint;
use graphkd::distill::{check_teachers, precompute_soft_labels, train_with_soft_labels, DistillConfig, SoftLabelCache};
use graphkd::embedding::EmbeddingStore;
use graphkd::eval::{comparison_report, evaluate_model, EvalReport, Model, NamedRun};
use graphkd::fixtures::{student_gradcheck, teacher_gradcheck};
use graphkd::graph::dump::GraphSet;
use graphkd::graph::{build_graphs, embed_dataset, EdgeMode, GraphConfig, TextEmbedding};
use graphkd::manifest::{ingest_manifest, Split};
use graphkd::optim::{OptimizerConfig, OptimizerKind};
use graphkd::student::StudentKind;
use graphkd::synth::{generate_synthetic, SplitFractions, SynthConfig};
use graphkd::teacher::{train_teacher, Teacher, TeacherConfig};
use graphkd::triplets::{read_triplets_tsv, TripletStore};
use graphkd::Error;

#[derive(Parser, Serialize)]
#[command(name = "graphkd", version, about = "Graph-based multimodal commonsense knowledge distillation")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate the synthetic dataset into a directory.
    GenSynth(GenSynthArgs),
    /// Embed every text of a manifest with the toy embedder.
    Embed(EmbedArgs),
    /// Build one subgraph per sample.
    BuildGraphs(BuildGraphsArgs),
    /// Train the GCN teacher.
    TrainTeacher(TrainTeacherArgs),
    /// Train a student with teacher soft labels.
    Distill(DistillArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Pair baseline and treated reports into a comparison table.
    Compare(CompareArgs),
    /// Check analytic gradients of the teacher and student losses.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.4)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    mask_prob: f64,
    #[arg(long, default_value_t = 48)]
    triplets_per_class: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct BuildGraphsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Content embedding stores, comma separated; merged in order.
    #[arg(long, value_delimiter = ',', required = true)]
    embeddings: Vec<PathBuf>,
    #[arg(long)]
    triplets: PathBuf,
    #[arg(long)]
    triplet_embeddings: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "hybrid")]
    edge_mode: EdgeMode,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OptimArgs {
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    /// Defaults to 0.001 for adam and 0.01 for sgd.
    #[arg(long)]
    lr: Option<f64>,
}

impl OptimArgs {
    fn config(&self) -> OptimizerConfig {
        let lr = self.lr.unwrap_or(self.optimizer.default_lr());
        match self.optimizer {
            OptimizerKind::Adam => OptimizerConfig::adam(lr),
            OptimizerKind::Sgd => OptimizerConfig::sgd(lr),
        }
    }
}

#[derive(Args, Serialize)]
struct TrainTeacherArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    head_hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DistillArgs {
    #[arg(long)]
    graphs: PathBuf,
    /// Teacher checkpoints, comma separated.
    #[arg(long, value_delimiter = ',')]
    teacher: Vec<PathBuf>,
    #[arg(long, default_value = "mlp")]
    student: StudentKind,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 1.0)]
    kd_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Soft-label cache: read when the file exists, otherwise computed from
    /// the teachers and written.
    #[arg(long)]
    soft_label_cache: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    /// Baseline eval reports; the i-th pairs with the i-th treated report.
    #[arg(long, required = true)]
    baseline: Vec<PathBuf>,
    #[arg(long, required = true)]
    treated: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.into()).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

/// The parsed invocation, recorded in every artifact.
fn echo(cli: &Cli) -> Value {
    serde_json::to_value(cli).expect("command line arguments serialize")
}

fn with_run(config: Value, cli: &Cli) -> Value {
    match config {
        Value::Object(mut map) => {
            map.insert("run".into(), echo(cli));
            Value::Object(map)
        }
        Value::Null => json!({ "run": echo(cli) }),
        other => json!({ "config": other, "run": echo(cli) }),
    }
}

/// Writes the run echo next to artifacts whose format has no metadata slot.
fn write_sidecar(out: &Path, cli: &Cli) -> Outcome {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    let mut text = serde_json::to_string_pretty(&echo(cli)).expect("json value serializes");
    text.push('\n');
    std::fs::write(PathBuf::from(name), text)?;
    Ok(())
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Embed(a) => embed(a, cli),
        Command::BuildGraphs(a) => build(a, cli),
        Command::TrainTeacher(a) => teacher(a, cli),
        Command::Distill(a) => distill(a, cli),
        Command::Eval(a) => eval(a, cli),
        Command::Compare(a) => compare(a, cli),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen_synth(a: &GenSynthArgs) -> Outcome {
    let config = SynthConfig {
        samples: a.samples,
        classes: a.classes,
        dim: a.dim,
        noise: a.noise,
        mask_prob: a.mask_prob,
        triplets_per_class: a.triplets_per_class,
        splits: SplitFractions {
            train: a.train_fraction,
            val: a.val_fraction,
            test: a.test_fraction,
        },
        seed: a.seed,
    };
    // The generator config echoed in the manifest header and ground truth
    // covers every flag except the output directory.
    let data = generate_synthetic(&config)?;
    data.write(&a.out)?;
    print_json(&data.dataset.summary());
    Ok(())
}

fn embed(a: &EmbedArgs, cli: &Cli) -> Outcome {
    if a.dim == 0 {
        return Err(Failure::Usage("--dim must be positive".into()));
    }
    let dataset = ingest_manifest(&a.manifest, None)?;
    let store = embed_dataset(&dataset, a.dim, a.seed)?;
    store.write(&a.out)?;
    write_sidecar(&a.out, cli)?;
    println!("embedded {} texts of {} samples", store.len(), dataset.samples.len());
    Ok(())
}

fn build(a: &BuildGraphsArgs, cli: &Cli) -> Outcome {
    let mut store: Option<EmbeddingStore> = None;
    for path in &a.embeddings {
        let next = EmbeddingStore::read(path)?;
        match &mut store {
            Some(s) => s.merge(&next)?,
            None => store = Some(next),
        }
    }
    let store = store.ok_or_else(|| Failure::Usage("--embeddings needs at least one store".into()))?;
    let dataset = ingest_manifest(&a.manifest, Some(&store))?;
    let triplets = TripletStore::new(read_triplets_tsv(&a.triplets)?, EmbeddingStore::read(&a.triplet_embeddings)?)?;
    let config = GraphConfig {
        k: a.k,
        mode: a.edge_mode,
        tau: a.tau,
        text: TextEmbedding::Precomputed,
    };
    let graphs = build_graphs(&dataset, &store, &triplets, &config)?;
    let set = GraphSet {
        labels: dataset.labels.clone(),
        dim: store.dim(),
        config: json!({
            "graph": config,
            "dataset": dataset.config,
            "run": echo(cli),
        }),
        graphs,
    };
    set.write(&a.out)?;
    let nodes: usize = set.graphs.iter().map(|g| g.num_nodes()).sum();
    println!(
        "built {} graphs, {:.2} nodes per graph",
        set.graphs.len(),
        nodes as f64 / set.graphs.len().max(1) as f64
    );
    Ok(())
}

fn teacher(a: &TrainTeacherArgs, cli: &Cli) -> Outcome {
    let set = GraphSet::read(&a.graphs)?;
    let mut config = TeacherConfig::new(set.dim, set.num_classes());
    config.hidden = a.hidden;
    config.head_hidden = a.head_hidden;
    config.epochs = a.epochs;
    config.optimizer = a.optim.config();
    config.seed = a.seed;
    config.graph = set.config.clone();
    let (teacher, history) = train_teacher(&set.split(Split::Train), &set.split(Split::Val), config)?;
    for h in &history {
        eprintln!("epoch {:>3} loss {:.6} val micro-F1 {}", h.epoch, h.train_loss, fmt_opt(h.val_micro_f1));
    }
    let mut ckpt = teacher.to_checkpoint()?;
    ckpt.config = with_run(ckpt.config, cli);
    ckpt.write(&a.out)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn distill(a: &DistillArgs, cli: &Cli) -> Outcome {
    let set = GraphSet::read(&a.graphs)?;
    let train = set.split(Split::Train);
    let val = set.split(Split::Val);
    let config = DistillConfig {
        student: a.student,
        hidden: a.hidden,
        kd_weight: a.kd_weight,
        temperature: a.temperature,
        optimizer: a.optim.config(),
        epochs: a.epochs,
        seed: a.seed,
    };
    let classes = set.num_classes();

    // With λ = 0 the KD term vanishes and teachers are not needed.
    let soft = if a.kd_weight > 0.0 {
        let cached = match &a.soft_label_cache {
            Some(path) if path.exists() => Some(SoftLabelCache::read(path)?),
            _ => None,
        };
        let soft = match cached {
            Some(cache) => cache_rows(&cache, &train, classes)?,
            None => {
                if a.teacher.is_empty() {
                    return Err(Failure::Usage("--teacher is required when --kd-weight is positive".into()));
                }
                let teachers = a
                    .teacher
                    .iter()
                    .map(|p| Teacher::from_checkpoint(&Checkpoint::read(p)?))
                    .collect::<graphkd::Result<Vec<_>>>()?;
                let (dim, teacher_classes) = check_teachers(&teachers)?;
                if dim != set.dim || teacher_classes != classes {
                    return Err(Error::Config(format!(
                        "teachers expect dim {dim} and {teacher_classes} classes, graphs have dim {} and {classes}",
                        set.dim
                    ))
                    .into());
                }
                let soft = precompute_soft_labels(&teachers, &train, a.temperature)?;
                if let Some(path) = &a.soft_label_cache {
                    let cache = SoftLabelCache {
                        classes,
                        entries: train.iter().map(|g| g.sample_id.clone()).zip(soft.iter().cloned()).collect(),
                    };
                    cache.write(path)?;
                }
                soft
            }
        };
        Some(soft)
    } else {
        None
    };

    let (student, history) = train_with_soft_labels(&train, &val, soft.as_deref(), classes, &config)?;
    for h in &history {
        eprintln!("epoch {:>3} loss {:.6} val micro-F1 {}", h.epoch, h.train_loss, fmt_opt(h.val_micro_f1));
    }
    let mut ckpt = student.to_checkpoint()?;
    ckpt.config = with_run(ckpt.config, cli);
    ckpt.write(&a.out)?;
    Ok(())
}

/// Soft labels from a cache, in training-split order.
fn cache_rows(cache: &SoftLabelCache, train: &[&graphkd::graph::Subgraph], classes: usize) -> Result<Vec<Vec<f64>>, Failure> {
    if cache.classes != classes {
        return Err(Error::Config(format!("soft-label cache has {} classes, graphs have {classes}", cache.classes)).into());
    }
    let by_id: std::collections::HashMap<&str, &Vec<f64>> =
        cache.entries.iter().map(|(id, p)| (id.as_str(), p)).collect();
    train
        .iter()
        .map(|g| {
            by_id
                .get(g.sample_id.as_str())
                .map(|p| p.to_vec())
                .ok_or_else(|| Error::Input(format!("soft-label cache has no entry for {:?}", g.sample_id)).into())
        })
        .collect()
}

fn eval(a: &EvalArgs, cli: &Cli) -> Outcome {
    let model = Model::from_checkpoint(&Checkpoint::read(&a.model)?)?;
    let set = GraphSet::read(&a.graphs)?;
    let mut report = evaluate_model(&model, &set.graphs, a.split)?;
    report.config = json!({ "model": report.config, "run": echo(cli) });
    std::fs::write(&a.report, report.to_json()?)?;
    println!(
        "{} on {} split: micro-F1 {:.4} over {} samples",
        report.model, report.split, report.micro_f1, report.samples
    );
    Ok(())
}

fn compare(a: &CompareArgs, cli: &Cli) -> Outcome {
    if a.baseline.len() != a.treated.len() {
        return Err(Failure::Usage(format!(
            "{} baseline reports but {} treated reports",
            a.baseline.len(),
            a.treated.len()
        )));
    }
    let load = |path: &PathBuf| -> Result<EvalReport, Failure> {
        Ok(EvalReport::from_json(&std::fs::read_to_string(path)?)?)
    };
    let mut runs = Vec::new();
    for (i, (b, t)) in a.baseline.iter().zip(&a.treated).enumerate() {
        let base_name = run_name(b, i, "baseline");
        runs.push(NamedRun {
            name: base_name.clone(),
            report: load(b)?,
            baseline: None,
        });
        runs.push(NamedRun {
            name: run_name(t, i, "treated"),
            report: load(t)?,
            baseline: Some(base_name),
        });
    }
    let mut report = comparison_report(&runs)?;
    report.config = echo(cli);
    std::fs::write(&a.out, report.to_json()?)?;
    print!("{}", report.to_table());
    Ok(())
}

/// File stem of a report, suffixed with its pair index so names stay unique.
fn run_name(path: &Path, index: usize, role: &str) -> String {
    let stem = path.file_stem().map_or_else(|| role.to_string(), |s| s.to_string_lossy().into_owned());
    format!("{stem} [{role} {}]", index + 1)
}

fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let checks = [
        ("teacher", teacher_gradcheck(a.seed, a.eps)?),
        ("mlp", student_gradcheck(StudentKind::Mlp, a.seed, a.eps)?),
        ("transformer", student_gradcheck(StudentKind::Transformer, a.seed, a.eps)?),
    ];
    let mut worst: f64 = 0.0;
    for (name, report) in &checks {
        println!(
            "{name}: max relative error {:.3e} over {} coordinates",
            report.max_rel_error, report.coordinates
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst > a.tolerance {
        return Err(Error::Invariant(format!("gradient error {worst:.3e} exceeds tolerance {:.1e}", a.tolerance)).into());
    }
    Ok(())
}
