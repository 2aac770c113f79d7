//! Synthetic mixture federations with planted components.
//!
//! Generation steps, per client `t`:
//! 1. `π_t ~ Dir(α)` (or one-hot at a uniformly random component);
//! 2. `θ_m ~ U([−1, 1]^d)` shared by all clients;
//! 3. `n_t = min(50 + ⌊m_t⌋, 1000)` with `m_t` log-normal, underlying normal
//!    mean 4 and standard deviation 2;
//! 4. `x ~ U([−1, 1]^d)` and scalar noise `ε ~ N(0, 1)`;
//! 5. `z ~ Categorical(π_t)`;
//! 6. `y ~ Bernoulli(sigmoid(⟨x, θ_z⟩ + ε))`.
//!
//! The first 80% of each client's samples form its train split.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};

use crate::data::{ClientDataset, Federation};
use crate::error::{FedError, Result};
use crate::model::{self, LossKind, Sample};
use crate::rng::{stream, Namespace, StreamRng};

pub const MIN_CLIENT_SAMPLES: usize = 50;
pub const MAX_CLIENT_SAMPLES: usize = 1000;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    /// Dirichlet mixture weights.
    Mixture,
    /// One-hot mixture weights: every client belongs to one cluster.
    HardCluster,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_clients: usize,
    pub num_components: usize,
    pub dim: usize,
    /// Dirichlet concentration.
    pub alpha: f64,
    pub seed: u64,
    pub label_mode: LabelMode,
    /// Add `ε ~ N(0, 1)` to the logit.
    pub noise: bool,
}

impl SyntheticConfig {
    pub fn new(num_clients: usize, num_components: usize, dim: usize, alpha: f64, seed: u64) -> Self {
        SyntheticConfig {
            num_clients,
            num_components,
            dim,
            alpha,
            seed,
            label_mode: LabelMode::Mixture,
            noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.num_components == 0 || self.dim == 0 {
            return Err(FedError::input("clients, components and dim must be positive"));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(FedError::input(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Planted parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `M × d`.
    pub theta_star: Vec<Vec<f64>>,
    /// `T × M`.
    pub pi_star: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Largest-weight component of each client.
    pub fn cluster_labels(&self) -> Vec<usize> {
        self.pi_star.iter().map(|p| model::argmax(p)).collect()
    }
}

fn dirichlet(rng: &mut StreamRng, alpha: f64, m: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.into_iter().map(|g| g / sum).collect()
    } else {
        // Every gamma draw underflowed; the limit of Dir(α→0) is a vertex.
        let mut v = vec![0.0; m];
        v[rng.random_range(0..m)] = 1.0;
        v
    }
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

/// Draws `n` labelled samples from the mixture `pi` over `theta_star`.
pub fn draw_samples<R: Rng + ?Sized>(
    rng: &mut R,
    theta_star: &[Vec<f64>],
    pi: &[f64],
    n: usize,
    noise: bool,
) -> Vec<Sample> {
    let d = theta_star.first().map_or(0, Vec::len);
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let eps: f64 = if noise { StandardNormal.sample(rng) } else { 0.0 };
            let z = categorical(rng, pi);
            let p = model::sigmoid(model::dot(&x, &theta_star[z]) + eps);
            let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            Sample::new(x, y)
        })
        .collect()
}

/// Generates a logistic federation and the parameters it was drawn from.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Federation, GroundTruth)> {
    cfg.validate()?;
    let (t, m, d) = (cfg.num_clients, cfg.num_components, cfg.dim);

    let mut rng = stream(cfg.seed, Namespace::Data, 0, 0);
    let pi_star: Vec<Vec<f64>> = (0..t)
        .map(|_| match cfg.label_mode {
            LabelMode::Mixture => dirichlet(&mut rng, cfg.alpha, m),
            LabelMode::HardCluster => {
                let mut v = vec![0.0; m];
                v[rng.random_range(0..m)] = 1.0;
                v
            }
        })
        .collect();

    let mut rng = stream(cfg.seed, Namespace::Data, 1, 0);
    let theta_star: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();

    let mut rng = stream(cfg.seed, Namespace::Data, 2, 0);
    let size_law = LogNormal::new(4.0, 2.0).expect("valid log-normal");
    let sizes: Vec<usize> = (0..t)
        .map(|_| {
            let m_t: f64 = size_law.sample(&mut rng);
            (MIN_CLIENT_SAMPLES as f64 + m_t.floor()).min(MAX_CLIENT_SAMPLES as f64) as usize
        })
        .collect();

    let clients = (0..t)
        .map(|c| {
            let mut rng = stream(cfg.seed, Namespace::Data, 3, c as u64);
            let mut samples = draw_samples(&mut rng, &theta_star, &pi_star[c], sizes[c], cfg.noise);
            let n_train = ((TRAIN_FRACTION * sizes[c] as f64).round() as usize).clamp(1, sizes[c]);
            let test = samples.split_off(n_train);
            ClientDataset::new(samples, test)
        })
        .collect();

    let fed = Federation::new(clients, LossKind::Logistic, d)?;
    Ok((fed, GroundTruth { theta_star, pi_star }))
}

/// Generates `train_clients + unseen_clients` clients from one set of
/// planted components and splits them into a training federation and a
/// federation of clients never seen during training.
pub fn generate_with_unseen(
    cfg: &SyntheticConfig,
    unseen_clients: usize,
) -> Result<(Federation, Federation, GroundTruth)> {
    let mut full = cfg.clone();
    full.num_clients += unseen_clients;
    let (mut fed, mut truth) = generate(&full)?;
    let unseen = fed.split_off(cfg.num_clients)?;
    truth.pi_star.truncate(cfg.num_clients);
    Ok((fed, unseen, truth))
}
