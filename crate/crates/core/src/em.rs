//! EM updates for a mixture of linear components.
//!
//! The E-step computes per-sample posteriors over components, the π-step
//! averages them, and the Θ-step is either a few weighted SGD steps (the
//! federated local solver) or a full-batch solve used as a centralized
//! oracle.

use rand::Rng;

use crate::error::{FedError, Result};
use crate::model::{self, log_sum_exp, LossKind, Sample};

/// Tolerance for simplex membership checks.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Iteration cap for [`exact_m_step_theta`].
pub const EXACT_SOLVER_MAX_ITERS: usize = 10_000;

/// The `M` shared component models, `Θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentBank {
    loss: LossKind,
    dim: usize,
    components: Vec<Vec<f64>>,
}

impl ComponentBank {
    pub fn new(loss: LossKind, dim: usize, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(FedError::input("a component bank needs at least one component"));
        }
        let len = loss.param_len(dim);
        for c in &components {
            if c.len() != len {
                return Err(FedError::DimensionMismatch {
                    expected: len,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(FedError::input("component parameters must be finite"));
            }
        }
        Ok(ComponentBank {
            loss,
            dim,
            components,
        })
    }

    /// Entries i.i.d. uniform on `[-1/√d, 1/√d]`.
    pub fn random_init<R: Rng + ?Sized>(
        loss: LossKind,
        dim: usize,
        num_components: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_components == 0 {
            return Err(FedError::input("number of components must be at least 1"));
        }
        if dim == 0 {
            return Err(FedError::input("feature dimension must be at least 1"));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let len = loss.param_len(dim);
        let components = (0..num_components)
            .map(|_| (0..len).map(|_| rng.random_range(-bound..=bound)).collect())
            .collect();
        Ok(ComponentBank {
            loss,
            dim,
            components,
        })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn param_len(&self) -> usize {
        self.loss.param_len(self.dim)
    }

    pub fn component(&self, m: usize) -> &[f64] {
        &self.components[m]
    }

    pub fn component_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.components[m]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Row-major flattening, component after component.
    pub fn to_flat(&self) -> Vec<f64> {
        self.components.concat()
    }

    pub fn from_flat(loss: LossKind, dim: usize, num_components: usize, flat: &[f64]) -> Result<Self> {
        let len = loss.param_len(dim);
        if num_components == 0 || flat.len() != len * num_components {
            return Err(FedError::DimensionMismatch {
                expected: len * num_components,
                got: flat.len(),
            });
        }
        ComponentBank::new(loss, dim, flat.chunks(len).map(<[f64]>::to_vec).collect())
    }

    /// Squared Frobenius distance to another bank of the same shape.
    pub fn distance_sq(&self, other: &ComponentBank) -> f64 {
        self.components
            .iter()
            .flatten()
            .zip(other.components.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `Σ_s weights[s] · banks[s]`, accumulated in order.
    pub fn weighted_sum<'a>(
        banks: impl IntoIterator<Item = (f64, &'a ComponentBank)>,
    ) -> Result<ComponentBank> {
        let mut iter = banks.into_iter().peekable();
        let first = iter
            .peek()
            .ok_or_else(|| FedError::input("cannot aggregate an empty set of banks"))?
            .1;
        let mut out = ComponentBank {
            loss: first.loss,
            dim: first.dim,
            components: vec![vec![0.0; first.param_len()]; first.num_components()],
        };
        for (w, bank) in iter {
            if bank.num_components() != out.num_components() || bank.param_len() != out.param_len()
            {
                return Err(FedError::input("cannot aggregate banks of different shapes"));
            }
            for (acc, c) in out.components.iter_mut().zip(&bank.components) {
                acc.iter_mut().zip(c).for_each(|(a, v)| *a += w * v);
            }
        }
        Ok(out)
    }

    fn check_data(&self, samples: &[Sample]) -> Result<()> {
        for s in samples {
            if s.x.len() != self.dim {
                return Err(FedError::DimensionMismatch {
                    expected: self.dim,
                    got: s.x.len(),
                });
            }
            self.loss.validate_label(s.y)?;
        }
        Ok(())
    }
}

/// A client's mixture weights `π_t` on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureRow(Vec<f64>);

impl MixtureRow {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        check_simplex(&pi)?;
        Ok(MixtureRow(pi))
    }

    pub fn uniform(m: usize) -> Self {
        MixtureRow(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, hot: usize) -> Self {
        let mut v = vec![0.0; m];
        v[hot] = 1.0;
        MixtureRow(v)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        model::argmax(&self.0)
    }

    /// `KL(self ‖ other)`.
    pub fn kl(&self, other: &MixtureRow) -> f64 {
        kl_divergence(&self.0, &other.0)
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(FedError::input("empty probability vector"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(FedError::input(format!("negative or non-finite probability in {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(FedError::input(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// `KL(p ‖ q)` with `0 log 0 = 0`; infinite when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a == 0.0 {
                0.0
            } else if b == 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln()
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// Per-sample posteriors `q(z_i = m)`, stored row-major `n × M`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    m: usize,
    q: Vec<f64>,
}

impl PosteriorTable {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(FedError::input("posterior table has no columns"));
        }
        let mut q = Vec::with_capacity(rows.len() * m);
        for row in rows {
            if row.len() != m {
                return Err(FedError::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            check_simplex(&row)?;
            q.extend(row);
        }
        Ok(PosteriorTable { m, q })
    }

    /// Table with zero rows and `m` columns.
    pub fn empty(m: usize) -> Self {
        PosteriorTable { m, q: Vec::new() }
    }

    pub fn num_rows(&self) -> usize {
        self.q.len() / self.m
    }

    pub fn num_components(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.q.chunks(self.m)
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.q[i * self.m + m]
    }
}

/// Learning-rate policy for one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    /// Per-round rate equals `learning_rate`.
    Constant,
    /// Per-round rate is `learning_rate / √K` for a run of `K` rounds.
    InverseSqrtRounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// `J`, local steps per round.
    pub local_steps: usize,
    pub batch_size: usize,
    /// `η` (or `a₀` under [`LrSchedule::InverseSqrtRounds`]).
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(local_steps: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        SolverConfig {
            local_steps,
            batch_size,
            learning_rate,
            schedule: LrSchedule::Constant,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FedError::input("batch_size must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(FedError::input("learning_rate must be positive and finite"));
        }
        Ok(())
    }

    /// Rate summed over one round's local steps.
    pub fn round_rate(&self, total_rounds: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::InverseSqrtRounds => {
                self.learning_rate / (total_rounds.max(1) as f64).sqrt()
            }
        }
    }

    /// Local step plan for one round, with the per-step rate `η / J`
    /// multiplied by `scale`.
    pub fn plan(&self, total_rounds: usize, scale: f64) -> LocalPlan {
        let steps = self.local_steps;
        LocalPlan {
            steps,
            batch_size: self.batch_size,
            step_size: scale * self.round_rate(total_rounds) / steps.max(1) as f64,
        }
    }
}

/// Resolved parameters of one call to the local solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalPlan {
    pub steps: usize,
    pub batch_size: usize,
    pub step_size: f64,
}

/// Indices of one mini-batch: all of `0..n` when `batch_size ≥ n`, otherwise
/// `batch_size` distinct indices drawn uniformly.
pub(crate) fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, batch_size: usize) -> Vec<usize> {
    if batch_size >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, batch_size).into_vec()
    }
}

/// `out = Σ_{i∈batch} weight(i) · ∇l(θ; s_i)`.
pub(crate) fn weighted_batch_gradient(
    theta: &[f64],
    samples: &[Sample],
    batch: &[usize],
    loss: LossKind,
    weight: impl Fn(usize) -> f64,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &i in batch {
        let w = weight(i);
        if w != 0.0 {
            model::add_weighted_gradient(theta, &samples[i], loss, w, out);
        }
    }
}

/// `θ ← θ − step · (grad / batch_len)`.
#[inline]
pub(crate) fn apply_mean_step(theta: &mut [f64], grad_sum: &[f64], step_size: f64, batch_len: usize) {
    let n = batch_len as f64;
    theta
        .iter_mut()
        .zip(grad_sum)
        .for_each(|(t, g)| *t -= step_size * (g / n));
}

/// `n × M` matrix of `log π_m − l(θ_m; s_i)`.
fn log_joint(bank: &ComponentBank, pi: &[f64], samples: &[Sample]) -> Vec<f64> {
    let m = bank.num_components();
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let mut out = Vec::with_capacity(samples.len() * m);
    for s in samples {
        for (c, lp) in bank.components.iter().zip(&log_pi) {
            out.push(lp - model::loss_unchecked(c, s, bank.loss));
        }
    }
    out
}

fn check_shapes(bank: &ComponentBank, pi: &MixtureRow, samples: &[Sample]) -> Result<()> {
    if pi.len() != bank.num_components() {
        return Err(FedError::DimensionMismatch {
            expected: bank.num_components(),
            got: pi.len(),
        });
    }
    bank.check_data(samples)
}

/// E-step: `q[i][m] ∝ π_m · exp(−l(θ_m; s_i))`, normalized in log space.
pub fn e_step(bank: &ComponentBank, pi: &MixtureRow, samples: &[Sample]) -> Result<PosteriorTable> {
    check_shapes(bank, pi, samples)?;
    let m = bank.num_components();
    let mut q = log_joint(bank, pi.as_slice(), samples);
    for row in q.chunks_mut(m) {
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    Ok(PosteriorTable { m, q })
}

/// π-step: column means of the posterior table.
pub fn m_step_pi(q: &PosteriorTable) -> Result<MixtureRow> {
    let n = q.num_rows();
    if n == 0 {
        return Err(FedError::input("cannot update mixture weights from an empty posterior table"));
    }
    let mut pi = vec![0.0; q.m];
    for row in q.rows() {
        pi.iter_mut().zip(row).for_each(|(p, v)| *p += v);
    }
    pi.iter_mut().for_each(|p| *p /= n as f64);
    Ok(MixtureRow(pi))
}

/// Weighted local SGD on every component.
///
/// Each step draws one mini-batch and moves every component `m` along
/// `−(1/|I|) Σ_{i∈I} q[i][m] ∇l(θ_m; s_i)`. Components never interact, so
/// each one follows its own weighted SGD trajectory.
pub fn local_sgd_theta<R: Rng + ?Sized>(
    bank: &ComponentBank,
    q: &PosteriorTable,
    samples: &[Sample],
    plan: &LocalPlan,
    rng: &mut R,
) -> Result<ComponentBank> {
    bank.check_data(samples)?;
    if q.num_rows() != samples.len() || q.num_components() != bank.num_components() {
        return Err(FedError::input(format!(
            "posterior table is {}x{}, expected {}x{}",
            q.num_rows(),
            q.num_components(),
            samples.len(),
            bank.num_components()
        )));
    }
    let mut out = bank.clone();
    if samples.is_empty() {
        return Ok(out);
    }
    let mut grad = vec![0.0; bank.param_len()];
    for _ in 0..plan.steps {
        let batch = sample_batch(rng, samples.len(), plan.batch_size);
        for (m, theta) in out.components.iter_mut().enumerate() {
            weighted_batch_gradient(theta, samples, &batch, bank.loss, |i| q.get(i, m), &mut grad);
            apply_mean_step(theta, &grad, plan.step_size, batch.len());
        }
    }
    Ok(out)
}

/// `(1/N) Σ_t Σ_i q_t[i][m] · l(θ; s_t^{(i)})` and its total weight.
fn pooled_objective(theta: &[f64], m: usize, tables: &[&PosteriorTable], data: &[&[Sample]], loss: LossKind, n: f64) -> f64 {
    let mut total = 0.0;
    for (q, samples) in tables.iter().zip(data) {
        for (i, s) in samples.iter().enumerate() {
            let w = q.get(i, m);
            if w != 0.0 {
                total += w * model::loss_unchecked(theta, s, loss);
            }
        }
    }
    total / n
}

fn pooled_gradient(
    theta: &[f64],
    m: usize,
    tables: &[&PosteriorTable],
    data: &[&[Sample]],
    loss: LossKind,
    n: f64,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (q, samples) in tables.iter().zip(data) {
        for (i, s) in samples.iter().enumerate() {
            let w = q.get(i, m);
            if w != 0.0 {
                model::add_weighted_gradient(theta, s, loss, w, out);
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Centralized Θ-step: for each component, full-batch gradient descent with
/// backtracking on the pooled weighted loss, normalized by the total sample
/// count, until the gradient norm is at most `tol`.
pub fn exact_m_step_theta(
    init: &ComponentBank,
    all_q: &[PosteriorTable],
    all_data: &[&[Sample]],
    tol: f64,
) -> Result<ComponentBank> {
    if all_q.len() != all_data.len() {
        return Err(FedError::input(format!(
            "{} posterior tables for {} clients",
            all_q.len(),
            all_data.len()
        )));
    }
    for (q, samples) in all_q.iter().zip(all_data) {
        init.check_data(samples)?;
        if q.num_rows() != samples.len() || q.num_components() != init.num_components() {
            return Err(FedError::input("posterior table shape does not match client data"));
        }
    }
    let tables: Vec<&PosteriorTable> = all_q.iter().collect();
    let n = all_data.iter().map(|d| d.len()).sum::<usize>().max(1) as f64;
    let loss = init.loss;
    let mut out = init.clone();
    let mut grad = vec![0.0; init.param_len()];
    let mut trial = vec![0.0; init.param_len()];
    for m in 0..init.num_components() {
        let total_weight: f64 = tables
            .iter()
            .map(|q| (0..q.num_rows()).map(|i| q.get(i, m)).sum::<f64>())
            .sum();
        if total_weight == 0.0 {
            continue;
        }
        let theta = &mut out.components[m];
        let mut value = pooled_objective(theta, m, &tables, all_data, loss, n);
        let mut step = 1.0;
        let mut converged = false;
        let mut grad_norm = f64::INFINITY;
        for _ in 0..EXACT_SOLVER_MAX_ITERS {
            pooled_gradient(theta, m, &tables, all_data, loss, n, &mut grad);
            grad_norm = norm(&grad);
            if grad_norm <= tol {
                converged = true;
                break;
            }
            let g2 = grad_norm * grad_norm;
            loop {
                trial
                    .iter_mut()
                    .zip(theta.iter().zip(&grad))
                    .for_each(|(t, (th, g))| *t = th - step * g);
                let candidate = pooled_objective(&trial, m, &tables, all_data, loss, n);
                if candidate <= value - 1e-4 * step * g2 {
                    theta.copy_from_slice(&trial);
                    value = candidate;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
                if step < 1e-30 {
                    return Err(FedError::NotConverged {
                        iterations: EXACT_SOLVER_MAX_ITERS,
                        grad_norm,
                    });
                }
            }
        }
        if !converged {
            return Err(FedError::NotConverged {
                iterations: EXACT_SOLVER_MAX_ITERS,
                grad_norm,
            });
        }
    }
    Ok(out)
}

/// Per-client objective `f_t = −(1/n_t) Σ_i log Σ_m π_m exp(−l(θ_m; s_i))`.
pub fn client_objective(bank: &ComponentBank, pi: &MixtureRow, samples: &[Sample]) -> Result<f64> {
    check_shapes(bank, pi, samples)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let m = bank.num_components();
    let joint = log_joint(bank, pi.as_slice(), samples);
    let total: f64 = joint.chunks(m).map(log_sum_exp).sum();
    Ok(-total / samples.len() as f64)
}

/// EM surrogate `g_t = (1/n_t) Σ_i Σ_m q_im (l(θ_m; s_i) − log π_m + log q_im)`.
pub fn surrogate_value(
    bank: &ComponentBank,
    pi: &MixtureRow,
    q: &PosteriorTable,
    samples: &[Sample],
) -> Result<f64> {
    check_shapes(bank, pi, samples)?;
    check_table(q, samples.len(), bank.num_components())?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let m = bank.num_components();
    let joint = log_joint(bank, pi.as_slice(), samples);
    let mut total = 0.0;
    for (qrow, jrow) in q.rows().zip(joint.chunks(m)) {
        for (&qv, &jv) in qrow.iter().zip(jrow) {
            if qv > 0.0 {
                total += qv * (qv.ln() - jv);
            }
        }
    }
    Ok(total / samples.len() as f64)
}

/// Gradient of [`surrogate_value`] with respect to every component,
/// flattened like [`ComponentBank::to_flat`].
pub fn surrogate_gradient(bank: &ComponentBank, q: &PosteriorTable, samples: &[Sample]) -> Result<Vec<f64>> {
    bank.check_data(samples)?;
    check_table(q, samples.len(), bank.num_components())?;
    let len = bank.param_len();
    let mut out = vec![0.0; len * bank.num_components()];
    if samples.is_empty() {
        return Ok(out);
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    for (m, theta) in bank.components.iter().enumerate() {
        let block = &mut out[m * len..(m + 1) * len];
        weighted_batch_gradient(theta, samples, &all, bank.loss, |i| q.get(i, m), block);
        block.iter_mut().for_each(|v| *v /= samples.len() as f64);
    }
    Ok(out)
}

fn check_table(q: &PosteriorTable, rows: usize, m: usize) -> Result<()> {
    if q.num_rows() != rows || q.num_components() != m {
        return Err(FedError::input(format!(
            "posterior table is {}x{}, expected {rows}x{m}",
            q.num_rows(),
            q.num_components()
        )));
    }
    Ok(())
}

/// `g_t − f_t = (1/n_t) Σ_i KL(q_i ‖ p(z_i | s_i, Θ, π))`.
pub fn surrogate_gap(
    bank: &ComponentBank,
    pi: &MixtureRow,
    q: &PosteriorTable,
    samples: &[Sample],
) -> Result<f64> {
    let posterior = e_step(bank, pi, samples)?;
    check_table(q, samples.len(), bank.num_components())?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = q
        .rows()
        .zip(posterior.rows())
        .map(|(a, b)| kl_divergence(a, b))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Squared norm of `∇_Θ f` where `f = Σ_t ω_t f_t`, evaluated exactly.
pub fn objective_gradient_norm_sq<'a>(
    banks: impl Fn(usize) -> &'a ComponentBank,
    pis: &[MixtureRow],
    data: &[&[Sample]],
    weights: &[f64],
) -> Result<f64> {
    let mut total: Option<Vec<f64>> = None;
    for (t, samples) in data.iter().enumerate() {
        let bank = banks(t);
        let q = e_step(bank, &pis[t], samples)?;
        let g = surrogate_gradient(bank, &q, samples)?;
        let acc = total.get_or_insert_with(|| vec![0.0; g.len()]);
        acc.iter_mut().zip(&g).for_each(|(a, v)| *a += weights[t] * v);
    }
    Ok(total.map_or(0.0, |g| g.iter().map(|v| v * v).sum()))
}
