//! Small seeded models and inputs for gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distill::{student_loss, DistillConfig};
use crate::error::Result;
use crate::gradcheck::{gradcheck, GradcheckReport};
use crate::graph::normalize_adjacency;
use crate::student::{StudentKind, StudentShape, TOKENS};
use crate::tape::Tape;
use crate::teacher::{teacher_loss, Teacher, TeacherConfig, TeacherVars};
use crate::tensor::Tensor;

const DIM: usize = 5;
const CLASSES: usize = 3;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).expect("finite fixture values")
}

/// Six-node graph (four content nodes, two commonsense nodes) with random
/// features, its normalized adjacency, and a label.
pub fn six_node_graph(seed: u64) -> (Tensor, Tensor, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = [
        [0.0, 0.7, 0.2, 0.9, 0.5, 0.0],
        [0.7, 0.0, 0.4, 0.6, 0.0, 0.3],
        [0.2, 0.4, 0.0, 0.8, 0.1, 0.0],
        [0.9, 0.6, 0.8, 0.0, 0.0, 0.6],
        [0.5, 0.0, 0.1, 0.0, 0.0, 0.45],
        [0.0, 0.3, 0.0, 0.6, 0.45, 0.0],
    ];
    let a = Tensor::from_rows(&w).expect("fixture adjacency");
    let a_hat = normalize_adjacency(&a).expect("fixture adjacency is valid");
    let x = uniform(&mut rng, 6, DIM);
    (a_hat, x, rng.random_range(0..CLASSES))
}

/// Gradient check of the full teacher cross-entropy with respect to every
/// teacher parameter.
pub fn teacher_gradcheck(seed: u64, eps: f64) -> Result<GradcheckReport> {
    let (a_hat, x, label) = six_node_graph(seed);
    let mut config = TeacherConfig::new(DIM, CLASSES);
    config.hidden = 4;
    config.head_hidden = 4;
    config.seed = seed;
    let (mut teacher, mut rng) = Teacher::init(config)?;
    // Non-zero biases so every parameter path is exercised.
    teacher.params.head_b1 = uniform(&mut rng, 1, 4);
    teacher.params.head_b2 = uniform(&mut rng, 1, CLASSES);
    let params: Vec<Tensor> = teacher.params.tensors().into_iter().cloned().collect();
    gradcheck(
        |tape: &mut Tape, vars| {
            let a = tape.constant(a_hat.clone());
            let h = tape.constant(x.clone());
            teacher_loss(tape, &TeacherVars::from_slice(vars), a, h, label)
        },
        &params,
        eps,
    )
}

/// Gradient check of a student's combined loss (cross-entropy plus the
/// temperature-scaled KD term) with respect to every student parameter.
pub fn student_gradcheck(kind: StudentKind, seed: u64, eps: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = StudentShape {
        kind,
        dim: DIM,
        hidden: 6,
        classes: CLASSES,
    };
    let params: Vec<Tensor> = shape
        .init(&mut rng)
        .into_iter()
        .map(|p| {
            let noise = uniform(&mut rng, p.rows(), p.cols());
            p.add(&noise.scale(0.3).expect("finite")).expect("same shape")
        })
        .collect();
    let x = uniform(&mut rng, TOKENS, DIM);
    let label = rng.random_range(0..CLASSES);
    let raw: Vec<f64> = (0..CLASSES).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let soft: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mut config = DistillConfig::new(kind);
    config.temperature = 2.0;
    config.kd_weight = 0.7;
    gradcheck(
        |tape: &mut Tape, vars| {
            let content = tape.constant(x.clone());
            student_loss(tape, kind, vars, content, label, Some(&soft), &config)
        },
        &params,
        eps,
    )
}
