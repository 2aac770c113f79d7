//! Federated optimization of partial first-order surrogates.
//!
//! A client objective `f_t(u, v_t)` has a shared block `u` and a private
//! block `v_t`. Each round a client builds a surrogate `g_t` anchored at its
//! current point, jumps `v_t` to the surrogate minimizer, and takes local
//! stochastic steps on `u`. The shared block is then averaged by a server
//! ([`run_federated_surrogate`]) or gossiped over a mixing schedule
//! ([`run_decentralized_surrogate`]).
//!
//! [`FedEmObjective`] is the mixture-model instantiation (`u = Θ`,
//! `v_t = π_t`); [`QuadraticObjective`] is a closed-form test objective.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::em::{self, ComponentBank, MixtureRow, PosteriorTable, SolverConfig};
use crate::error::{FedError, Result};
use crate::model::{LossKind, Sample};
use crate::rng::{stream, Namespace, StreamRng};
use crate::topology::{consensus_distance, MixingSchedule};

/// Slack for the majorization audit.
pub const MAJORIZATION_TOL: f64 = 1e-8;

/// Contract of a partial first-order surrogate.
///
/// Implementors must guarantee, for a state built by `anchor(u₀, v₀)`:
/// `surrogate_value ≥ true_value` everywhere; equality of values and
/// `u`-gradients at `(u₀, v₀)`; and
/// `surrogate_value(u, v) − surrogate_value(u, v*) = divergence(v, v*)` where
/// `v* = minimize_v(u)`.
pub trait SurrogateObjective: Sync {
    type State: Send + Sync;
    type V: Clone + Send + Sync;

    fn anchor(&self, u: &[f64], v: &Self::V) -> Result<Self::State>;

    fn surrogate_value(&self, state: &Self::State, u: &[f64], v: &Self::V) -> Result<f64>;

    fn surrogate_grad_u(&self, state: &Self::State, u: &[f64], v: &Self::V) -> Result<Vec<f64>>;

    /// Unbiased mini-batch estimate of [`surrogate_grad_u`](Self::surrogate_grad_u).
    fn stochastic_grad_u(
        &self,
        state: &Self::State,
        u: &[f64],
        v: &Self::V,
        batch_size: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>>;

    fn minimize_v(&self, state: &Self::State, u: &[f64]) -> Result<Self::V>;

    fn true_value(&self, u: &[f64], v: &Self::V) -> Result<f64>;

    /// `d_V(v, v*)`, the surrogate decrease obtained by moving from `v` to `v*`.
    fn divergence(&self, v: &Self::V, v_star: &Self::V) -> f64;
}

/// Aggregation weights `ω_t` on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct FederationWeights(Vec<f64>);

impl FederationWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() || omega.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(FedError::input("weights must be nonnegative and non-empty"));
        }
        let sum: f64 = omega.iter().sum();
        if (sum - 1.0).abs() > em::SIMPLEX_TOL {
            return Err(FedError::input(format!("weights sum to {sum}, not 1")));
        }
        Ok(FederationWeights(omega))
    }

    pub(crate) fn new_unchecked(omega: Vec<f64>) -> Self {
        FederationWeights(omega)
    }

    pub fn uniform(t: usize) -> Self {
        FederationWeights(vec![1.0 / t as f64; t])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateRoundLog {
    pub round: usize,
    /// `Σ_t ω_t f_t` at the end of the round.
    pub objective: f64,
    /// `Σ_t ‖u_t − ū‖²`, decentralized runs only.
    pub consensus_dist: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FederatedRun<V> {
    pub u: Vec<f64>,
    pub vs: Vec<V>,
    pub log: Vec<SurrogateRoundLog>,
}

#[derive(Clone, Debug)]
pub struct DecentralizedRun<V> {
    pub us: Vec<Vec<f64>>,
    pub vs: Vec<V>,
    pub log: Vec<SurrogateRoundLog>,
}

/// Runtime options of the generic loops.
#[derive(Clone, Debug)]
pub struct SurrogateRunConfig {
    pub rounds: usize,
    pub solver: SolverConfig,
    /// Check majorization at the anchor and after the local solve.
    pub audit: bool,
}

impl SurrogateRunConfig {
    pub fn new(rounds: usize, solver: SolverConfig) -> Self {
        SurrogateRunConfig {
            rounds,
            solver,
            audit: cfg!(debug_assertions),
        }
    }
}

fn audit_majorization<O: SurrogateObjective>(
    obj: &O,
    state: &O::State,
    u: &[f64],
    v: &O::V,
) -> Result<()> {
    let g = obj.surrogate_value(state, u, v)?;
    let f = obj.true_value(u, v)?;
    if g < f - MAJORIZATION_TOL {
        return Err(FedError::ContractViolation(format!(
            "surrogate {g} below objective {f}"
        )));
    }
    Ok(())
}

/// One client's work in a round: anchor, update `v`, then `J` local steps.
fn client_round<O: SurrogateObjective>(
    obj: &O,
    u: &[f64],
    v: &O::V,
    cfg: &SurrogateRunConfig,
    step_scale: f64,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, O::V)> {
    let state = obj.anchor(u, v)?;
    if cfg.audit {
        let g = obj.surrogate_value(&state, u, v)?;
        let f = obj.true_value(u, v)?;
        if (g - f).abs() > MAJORIZATION_TOL {
            return Err(FedError::ContractViolation(format!(
                "surrogate {g} not tight at anchor (objective {f})"
            )));
        }
    }
    let v_new = obj.minimize_v(&state, u)?;
    let plan = cfg.solver.plan(cfg.rounds, step_scale);
    let mut local = u.to_vec();
    for _ in 0..plan.steps {
        let g = obj.stochastic_grad_u(&state, &local, &v_new, plan.batch_size, rng)?;
        local
            .iter_mut()
            .zip(&g)
            .for_each(|(x, d)| *x -= plan.step_size * d);
    }
    if cfg.audit {
        audit_majorization(obj, &state, &local, &v_new)?;
    }
    Ok((local, v_new))
}

/// Client-server federated surrogate optimization.
pub fn run_federated_surrogate<O: SurrogateObjective>(
    objectives: &[O],
    u0: &[f64],
    v0s: &[O::V],
    weights: &FederationWeights,
    cfg: &SurrogateRunConfig,
) -> Result<FederatedRun<O::V>> {
    let t = objectives.len();
    if t == 0 || v0s.len() != t || weights.len() != t {
        return Err(FedError::input(format!(
            "{t} objectives, {} private states, {} weights",
            v0s.len(),
            weights.len()
        )));
    }
    cfg.solver.validate()?;
    let mut u = u0.to_vec();
    let mut vs = v0s.to_vec();
    let mut log = Vec::with_capacity(cfg.rounds);
    for k in 1..=cfg.rounds {
        let results: Vec<(Vec<f64>, O::V)> = objectives
            .par_iter()
            .zip(vs.par_iter())
            .enumerate()
            .map(|(client, (obj, v))| {
                let mut rng = stream(cfg.solver.seed, Namespace::Batches, client as u64, k as u64);
                client_round(obj, &u, v, cfg, 1.0, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut next = vec![0.0; u.len()];
        for ((local, _), w) in results.iter().zip(weights.as_slice()) {
            next.iter_mut().zip(local).for_each(|(a, x)| *a += w * x);
        }
        u = next;
        vs = results.into_iter().map(|(_, v)| v).collect();
        let objective = weighted_objective(objectives, |_| &u, &vs, weights.as_slice())?;
        log.push(SurrogateRoundLog {
            round: k,
            objective,
            consensus_dist: None,
        });
    }
    Ok(FederatedRun { u, vs, log })
}

/// Fully decentralized surrogate optimization: every client keeps its own
/// `u_t`, local steps are scaled by `step_scales[t]`, and shared blocks are
/// mixed with the round's matrix, `u_t ← Σ_s w_ts u_s`.
pub fn run_decentralized_surrogate<O: SurrogateObjective>(
    objectives: &[O],
    u0s: &[Vec<f64>],
    v0s: &[O::V],
    step_scales: &[f64],
    schedule: &MixingSchedule,
    cfg: &SurrogateRunConfig,
) -> Result<DecentralizedRun<O::V>> {
    let t = objectives.len();
    if t == 0 || u0s.len() != t || v0s.len() != t || step_scales.len() != t {
        return Err(FedError::input("per-client inputs must all have one entry per objective"));
    }
    if schedule.num_nodes() != t {
        return Err(FedError::DimensionMismatch {
            expected: t,
            got: schedule.num_nodes(),
        });
    }
    cfg.solver.validate()?;
    let mut us = u0s.to_vec();
    let mut vs = v0s.to_vec();
    let mut log = Vec::with_capacity(cfg.rounds);
    for k in 1..=cfg.rounds {
        let w = schedule.matrix(k - 1)?;
        let results: Vec<(Vec<f64>, O::V)> = objectives
            .par_iter()
            .zip(us.par_iter().zip(vs.par_iter()))
            .enumerate()
            .map(|(client, (obj, (u, v)))| {
                let mut rng = stream(cfg.solver.seed, Namespace::Batches, client as u64, k as u64);
                client_round(obj, u, v, cfg, step_scales[client], &mut rng)
            })
            .collect::<Result<_>>()?;
        let (half, new_vs): (Vec<Vec<f64>>, Vec<O::V>) = results.into_iter().unzip();
        us = w.mix(&half)?;
        vs = new_vs;
        let uniform = vec![1.0 / t as f64; t];
        let objective = weighted_objective(objectives, |s| &us[s], &vs, &uniform)?;
        log.push(SurrogateRoundLog {
            round: k,
            objective,
            consensus_dist: Some(consensus_distance(&us)),
        });
    }
    Ok(DecentralizedRun { us, vs, log })
}

fn weighted_objective<'a, O: SurrogateObjective>(
    objectives: &[O],
    u_of: impl Fn(usize) -> &'a Vec<f64> + Sync,
    vs: &[O::V],
    weights: &[f64],
) -> Result<f64> {
    let values: Vec<f64> = objectives
        .par_iter()
        .enumerate()
        .map(|(t, obj)| obj.true_value(u_of(t), &vs[t]))
        .collect::<Result<_>>()?;
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum())
}

/// `f(u) = ½‖u − c‖²`, its own surrogate. The private block is unused.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub center: Vec<f64>,
    /// Standard deviation of Gaussian noise added to stochastic gradients.
    pub noise_sd: f64,
}

impl QuadraticObjective {
    pub fn new(center: Vec<f64>) -> Self {
        QuadraticObjective {
            center,
            noise_sd: 0.0,
        }
    }

    fn value(&self, u: &[f64]) -> f64 {
        0.5 * u
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
    }
}

impl SurrogateObjective for QuadraticObjective {
    type State = ();
    type V = ();

    fn anchor(&self, u: &[f64], _v: &()) -> Result<()> {
        if u.len() != self.center.len() {
            return Err(FedError::DimensionMismatch {
                expected: self.center.len(),
                got: u.len(),
            });
        }
        Ok(())
    }

    fn surrogate_value(&self, _state: &(), u: &[f64], _v: &()) -> Result<f64> {
        Ok(self.value(u))
    }

    fn surrogate_grad_u(&self, _state: &(), u: &[f64], _v: &()) -> Result<Vec<f64>> {
        Ok(u.iter().zip(&self.center).map(|(a, c)| a - c).collect())
    }

    fn stochastic_grad_u(
        &self,
        _state: &(),
        u: &[f64],
        _v: &(),
        _batch_size: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        Ok(u.iter()
            .zip(&self.center)
            .map(|(a, c)| {
                let noise = if self.noise_sd > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    self.noise_sd * z
                } else {
                    0.0
                };
                a - c + noise
            })
            .collect())
    }

    fn minimize_v(&self, _state: &(), _u: &[f64]) -> Result<()> {
        Ok(())
    }

    fn true_value(&self, u: &[f64], _v: &()) -> Result<f64> {
        Ok(self.value(u))
    }

    fn divergence(&self, _v: &(), _v_star: &()) -> f64 {
        0.0
    }
}

/// The EM surrogate of one client's mixture negative log-likelihood.
///
/// `u` is the flattened component bank, `v` the client's mixture weights, and
/// the anchored state is the E-step posterior table.
#[derive(Clone, Debug)]
pub struct FedEmObjective<'a> {
    samples: &'a [Sample],
    loss: LossKind,
    dim: usize,
    num_components: usize,
}

impl<'a> FedEmObjective<'a> {
    pub fn new(samples: &'a [Sample], loss: LossKind, dim: usize, num_components: usize) -> Self {
        FedEmObjective {
            samples,
            loss,
            dim,
            num_components,
        }
    }

    pub fn bank(&self, u: &[f64]) -> Result<ComponentBank> {
        ComponentBank::from_flat(self.loss, self.dim, self.num_components, u)
    }
}

impl SurrogateObjective for FedEmObjective<'_> {
    type State = PosteriorTable;
    type V = MixtureRow;

    fn anchor(&self, u: &[f64], v: &MixtureRow) -> Result<PosteriorTable> {
        em::e_step(&self.bank(u)?, v, self.samples)
    }

    fn surrogate_value(&self, q: &PosteriorTable, u: &[f64], v: &MixtureRow) -> Result<f64> {
        em::surrogate_value(&self.bank(u)?, v, q, self.samples)
    }

    fn surrogate_grad_u(&self, q: &PosteriorTable, u: &[f64], _v: &MixtureRow) -> Result<Vec<f64>> {
        em::surrogate_gradient(&self.bank(u)?, q, self.samples)
    }

    fn stochastic_grad_u(
        &self,
        q: &PosteriorTable,
        u: &[f64],
        _v: &MixtureRow,
        batch_size: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        let len = self.loss.param_len(self.dim);
        let mut out = vec![0.0; u.len()];
        if self.samples.is_empty() {
            return Ok(out);
        }
        let batch = em::sample_batch(rng, self.samples.len(), batch_size);
        let n = batch.len() as f64;
        for m in 0..self.num_components {
            let theta = &u[m * len..(m + 1) * len];
            let block = &mut out[m * len..(m + 1) * len];
            em::weighted_batch_gradient(theta, self.samples, &batch, self.loss, |i| q.get(i, m), block);
            block.iter_mut().for_each(|g| *g /= n);
        }
        Ok(out)
    }

    fn minimize_v(&self, q: &PosteriorTable, _u: &[f64]) -> Result<MixtureRow> {
        em::m_step_pi(q)
    }

    fn true_value(&self, u: &[f64], v: &MixtureRow) -> Result<f64> {
        em::client_objective(&self.bank(u)?, v, self.samples)
    }

    /// `KL(v* ‖ v)`.
    fn divergence(&self, v: &MixtureRow, v_star: &MixtureRow) -> f64 {
        v_star.kl(v)
    }
}
