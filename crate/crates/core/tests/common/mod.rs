#![allow(dead_code)]

use fedmix::{ClientDataset, ComponentBank, Federation, LossKind, MixtureRow, PosteriorTable, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn loss_kinds() -> [LossKind; 3] {
    [
        LossKind::SquaredError,
        LossKind::Logistic,
        LossKind::cross_entropy(3).unwrap(),
    ]
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..=scale)).collect()
}

pub fn random_label(rng: &mut ChaCha8Rng, loss: LossKind) -> f64 {
    match loss {
        LossKind::SquaredError => rng.random_range(-2.0..=2.0),
        LossKind::Logistic => rng.random_range(0..2) as f64,
        LossKind::CrossEntropy { num_classes } => rng.random_range(0..num_classes) as f64,
    }
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize, loss: LossKind) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let x = random_vec(rng, dim, 1.0);
            let y = random_label(rng, loss);
            Sample::new(x, y)
        })
        .collect()
}

pub fn random_bank(rng: &mut ChaCha8Rng, loss: LossKind, dim: usize, m: usize) -> ComponentBank {
    let comps = (0..m).map(|_| random_vec(rng, loss.param_len(dim), 1.0)).collect();
    ComponentBank::new(loss, dim, comps).unwrap()
}

/// A point of the open simplex, bounded away from the faces.
pub fn random_simplex(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_row(rng: &mut ChaCha8Rng, m: usize) -> MixtureRow {
    MixtureRow::new(random_simplex(rng, m)).unwrap()
}

pub fn random_table(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PosteriorTable {
    PosteriorTable::from_rows((0..n).map(|_| random_simplex(rng, m)).collect()).unwrap()
}

pub fn random_federation(rng: &mut ChaCha8Rng, clients: usize, dim: usize, loss: LossKind) -> Federation {
    let data = (0..clients)
        .map(|_| {
            let n = rng.random_range(5..30);
            ClientDataset::new(random_samples(rng, n, dim, loss), random_samples(rng, 4, dim, loss))
        })
        .collect();
    Federation::new(data, loss, dim).unwrap()
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute error when both are below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}
