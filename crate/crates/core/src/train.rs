//! Training loops: federated EM, decentralized EM, FedAvg and local-only
//! baselines, and personalization of unseen clients.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{Federation, Split};
use crate::em::{self, ComponentBank, MixtureRow, SolverConfig};
use crate::error::{FedError, Result};
use crate::metrics::{mixture_accuracy, Banks};
use crate::model::{LinearHypothesis, Sample};
use crate::rng::{stream, Namespace};
use crate::topology::{consensus_distance, MixingSchedule};

/// Per-round diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// `‖∇_Θ f‖²` at the start of the round.
    pub grad_norm_sq: f64,
    /// `Σ_t ω_t KL(π_t^k ‖ π_t^{k−1})`.
    pub delta_pi: f64,
    /// `Σ_t ‖Θ_t − Θ̄‖²_F`, decentralized runs only.
    pub consensus_dist: Option<f64>,
}

pub const ROUND_LOG_HEADER: &str =
    "round,train_loss,train_acc,test_loss,test_acc,grad_norm_sq,delta_pi,consensus_dist";

/// Renders logs as CSV with [`ROUND_LOG_HEADER`].
pub fn round_log_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from(ROUND_LOG_HEADER);
    out.push('\n');
    for l in logs {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},",
            l.round, l.train_loss, l.train_acc, l.test_loss, l.test_acc, l.grad_norm_sq, l.delta_pi
        );
        if let Some(c) = l.consensus_dist {
            let _ = write!(out, "{c}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_round_log_csv(text: &str) -> Result<Vec<RoundLog>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == ROUND_LOG_HEADER => {}
        other => {
            return Err(FedError::input(format!(
                "line 1: expected header `{ROUND_LOG_HEADER}`, got `{}`",
                other.unwrap_or("")
            )))
        }
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().map(|(n, l)| (n + 2, l.trim_end())) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(FedError::input(format!("line {n}: expected 8 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v = fields[i]
                .parse::<f64>()
                .map_err(|_| FedError::input(format!("line {n}: bad number `{}`", fields[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FedError::input(format!("line {n}: non-finite value")))
            }
        };
        out.push(RoundLog {
            round: fields[0]
                .parse()
                .map_err(|_| FedError::input(format!("line {n}: bad round `{}`", fields[0])))?,
            train_loss: num(1)?,
            train_acc: num(2)?,
            test_loss: num(3)?,
            test_acc: num(4)?,
            grad_norm_sq: num(5)?,
            delta_pi: num(6)?,
            consensus_dist: if fields[7].is_empty() { None } else { Some(num(7)?) },
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FedEmConfig {
    pub num_components: usize,
    pub rounds: usize,
    pub solver: SolverConfig,
    /// Fraction of clients sampled per round, in `(0, 1]`.
    pub sample_rate: f64,
}

#[derive(Clone, Debug)]
pub struct FedEmRun {
    pub bank: ComponentBank,
    pub pis: Vec<MixtureRow>,
    pub log: Vec<RoundLog>,
}

fn validate_common(fed: &Federation, solver: &SolverConfig, sample_rate: f64) -> Result<()> {
    if fed.clients.is_empty() {
        return Err(FedError::input("federation has no clients"));
    }
    solver.validate()?;
    if !(sample_rate > 0.0 && sample_rate <= 1.0) {
        return Err(FedError::input(format!("sample_rate {sample_rate} not in (0, 1]")));
    }
    Ok(())
}

/// Initial shared bank, drawn from the `init` stream.
pub fn initial_bank(fed: &Federation, num_components: usize, seed: u64) -> Result<ComponentBank> {
    let mut rng = stream(seed, Namespace::Init, 0, 0);
    ComponentBank::random_init(fed.loss, fed.dim, num_components, &mut rng)
}

/// Clients taking part in round `k` (1-based), ascending.
pub fn sampled_clients(num_clients: usize, sample_rate: f64, seed: u64, round: usize) -> Vec<usize> {
    let count = ((sample_rate * num_clients as f64).ceil() as usize).clamp(1, num_clients);
    if count == num_clients {
        return (0..num_clients).collect();
    }
    let mut rng = stream(seed, Namespace::Sampling, 0, round as u64);
    let mut picked = rand::seq::index::sample(&mut rng, num_clients, count).into_vec();
    picked.sort_unstable();
    picked
}

fn train_slices(fed: &Federation) -> Vec<&[Sample]> {
    fed.clients.iter().map(|c| c.train.as_slice()).collect()
}

fn evaluate(
    fed: &Federation,
    banks: Banks<'_>,
    pis: &[MixtureRow],
) -> Result<(crate::metrics::EvalReport, Option<crate::metrics::EvalReport>)> {
    let train = mixture_accuracy(banks, pis, fed, Split::Train)?;
    let test = if fed.clients.iter().all(|c| !c.test.is_empty()) {
        Some(mixture_accuracy(banks, pis, fed, Split::Test)?)
    } else {
        None
    };
    Ok((train, test))
}

#[allow(clippy::too_many_arguments)]
fn make_log(
    fed: &Federation,
    round: usize,
    banks: Banks<'_>,
    pis: &[MixtureRow],
    grad_norm_sq: f64,
    delta_pi: f64,
    consensus_dist: Option<f64>,
) -> Result<RoundLog> {
    let (train, test) = evaluate(fed, banks, pis)?;
    let (test_loss, test_acc) = test.map_or((0.0, 0.0), |r| (r.objective, r.weighted_accuracy));
    Ok(RoundLog {
        round,
        train_loss: train.objective,
        train_acc: train.weighted_accuracy,
        test_loss,
        test_acc,
        grad_norm_sq,
        delta_pi,
        consensus_dist,
    })
}

fn delta_pi(weights: &[f64], new: &[MixtureRow], old: &[MixtureRow]) -> f64 {
    new.iter()
        .zip(old)
        .zip(weights)
        .map(|((a, b), w)| w * a.kl(b))
        .sum()
}

/// Federated EM with local SGD and optional client sampling.
///
/// Each round the sampled clients run an E-step against the broadcast bank,
/// update their mixture weights, and take `J` weighted SGD steps per
/// component; the server averages the returned banks with weights
/// proportional to `n_t`, renormalized over the sampled set. Clients left
/// out keep their previous `π_t`.
pub fn train_fedem(fed: &Federation, cfg: &FedEmConfig) -> Result<FedEmRun> {
    validate_common(fed, &cfg.solver, cfg.sample_rate)?;
    if cfg.num_components == 0 {
        return Err(FedError::input("number of components must be at least 1"));
    }
    let t = fed.num_clients();
    let seed = cfg.solver.seed;
    let weights = fed.weights();
    let data = train_slices(fed);
    let plan = cfg.solver.plan(cfg.rounds, 1.0);

    let mut bank = initial_bank(fed, cfg.num_components, seed)?;
    let mut pis = vec![MixtureRow::uniform(cfg.num_components); t];
    let mut log = Vec::with_capacity(cfg.rounds);

    for k in 1..=cfg.rounds {
        let grad_norm_sq =
            em::objective_gradient_norm_sq(|_| &bank, &pis, &data, weights.as_slice())?;
        let picked = sampled_clients(t, cfg.sample_rate, seed, k);
        let updates: Vec<(ComponentBank, MixtureRow)> = picked
            .par_iter()
            .map(|&c| {
                let samples = data[c];
                let q = em::e_step(&bank, &pis[c], samples)?;
                let pi = em::m_step_pi(&q)?;
                let mut rng = stream(seed, Namespace::Batches, c as u64, k as u64);
                let local = em::local_sgd_theta(&bank, &q, samples, &plan, &mut rng)?;
                Ok((local, pi))
            })
            .collect::<Result<_>>()?;

        let n_sampled: usize = picked.iter().map(|&c| fed.clients[c].n_train()).sum();
        bank = ComponentBank::weighted_sum(
            picked
                .iter()
                .zip(&updates)
                .map(|(&c, (b, _))| (fed.clients[c].n_train() as f64 / n_sampled as f64, b)),
        )?;
        let old = pis.clone();
        for (&c, (_, pi)) in picked.iter().zip(updates) {
            pis[c] = pi;
        }
        let dp = delta_pi(weights.as_slice(), &pis, &old);
        log.push(make_log(fed, k, Banks::Shared(&bank), &pis, grad_norm_sq, dp, None)?);
    }
    Ok(FedEmRun { bank, pis, log })
}

/// How decentralized clients initialize their banks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecentralizedInit {
    /// Every client draws its own random bank.
    Independent,
    /// Every client starts from the bank [`train_fedem`] would use.
    Shared,
}

#[derive(Clone, Debug)]
pub struct DFedEmConfig {
    pub num_components: usize,
    pub rounds: usize,
    pub solver: SolverConfig,
    pub init: DecentralizedInit,
}

#[derive(Clone, Debug)]
pub struct DFedEmRun {
    pub banks: Vec<ComponentBank>,
    pub pis: Vec<MixtureRow>,
    pub log: Vec<RoundLog>,
}

impl DFedEmRun {
    /// Client-average bank `Θ̄`.
    pub fn mean_bank(&self) -> Result<ComponentBank> {
        let w = 1.0 / self.banks.len() as f64;
        ComponentBank::weighted_sum(self.banks.iter().map(|b| (w, b)))
    }
}

/// Fully decentralized federated EM.
///
/// Clients run the E-step and π-update against their own bank, take local
/// SGD steps scaled by `n_t / n`, then replace their bank by the
/// mixing-matrix-weighted combination of their neighbours' banks.
pub fn train_dfedem(fed: &Federation, cfg: &DFedEmConfig, schedule: &MixingSchedule) -> Result<DFedEmRun> {
    validate_common(fed, &cfg.solver, 1.0)?;
    if cfg.num_components == 0 {
        return Err(FedError::input("number of components must be at least 1"));
    }
    let t = fed.num_clients();
    if schedule.num_nodes() != t {
        return Err(FedError::DimensionMismatch {
            expected: t,
            got: schedule.num_nodes(),
        });
    }
    let seed = cfg.solver.seed;
    let weights = fed.weights();
    let data = train_slices(fed);

    let mut banks: Vec<ComponentBank> = match cfg.init {
        DecentralizedInit::Shared => vec![initial_bank(fed, cfg.num_components, seed)?; t],
        DecentralizedInit::Independent => (0..t)
            .map(|c| {
                let mut rng = stream(seed, Namespace::Init, c as u64, 1);
                ComponentBank::random_init(fed.loss, fed.dim, cfg.num_components, &mut rng)
            })
            .collect::<Result<_>>()?,
    };
    let mut pis = vec![MixtureRow::uniform(cfg.num_components); t];
    let mut log = Vec::with_capacity(cfg.rounds);

    for k in 1..=cfg.rounds {
        let w = schedule.matrix(k - 1)?;
        let mean = ComponentBank::weighted_sum(banks.iter().map(|b| (1.0 / t as f64, b)))?;
        let grad_norm_sq = em::objective_gradient_norm_sq(|_| &mean, &pis, &data, weights.as_slice())?;

        let updates: Vec<(ComponentBank, MixtureRow)> = (0..t)
            .into_par_iter()
            .map(|c| {
                let samples = data[c];
                let q = em::e_step(&banks[c], &pis[c], samples)?;
                let pi = em::m_step_pi(&q)?;
                let plan = cfg.solver.plan(cfg.rounds, weights.as_slice()[c]);
                let mut rng = stream(seed, Namespace::Batches, c as u64, k as u64);
                let half = em::local_sgd_theta(&banks[c], &q, samples, &plan, &mut rng)?;
                Ok((half, pi))
            })
            .collect::<Result<_>>()?;

        let (half, new_pis): (Vec<ComponentBank>, Vec<MixtureRow>) = updates.into_iter().unzip();
        let flat: Vec<Vec<f64>> = half.iter().map(ComponentBank::to_flat).collect();
        let mixed = w.mix(&flat)?;
        banks = mixed
            .iter()
            .map(|u| ComponentBank::from_flat(fed.loss, fed.dim, cfg.num_components, u))
            .collect::<Result<_>>()?;
        let dp = delta_pi(weights.as_slice(), &new_pis, &pis);
        pis = new_pis;
        let consensus = consensus_distance(&mixed);
        log.push(make_log(fed, k, Banks::PerClient(&banks), &pis, grad_norm_sq, dp, Some(consensus))?);
    }
    Ok(DFedEmRun { banks, pis, log })
}

#[derive(Clone, Debug)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub solver: SolverConfig,
    pub sample_rate: f64,
}

#[derive(Clone, Debug)]
pub struct FedAvgRun {
    pub model: LinearHypothesis,
    pub log: Vec<RoundLog>,
}

/// `J` unweighted mini-batch SGD steps on one hypothesis.
fn local_sgd(theta: &mut [f64], samples: &[Sample], loss: crate::model::LossKind, plan: &em::LocalPlan, rng: &mut crate::rng::StreamRng) {
    let mut grad = vec![0.0; theta.len()];
    for _ in 0..plan.steps {
        let batch = em::sample_batch(rng, samples.len(), plan.batch_size);
        em::weighted_batch_gradient(theta, samples, &batch, loss, |_| 1.0, &mut grad);
        em::apply_mean_step(theta, &grad, plan.step_size, batch.len());
    }
}

/// Federated averaging of a single linear model.
pub fn train_fedavg(fed: &Federation, cfg: &FedAvgConfig) -> Result<FedAvgRun> {
    validate_common(fed, &cfg.solver, cfg.sample_rate)?;
    let t = fed.num_clients();
    let seed = cfg.solver.seed;
    let weights = fed.weights();
    let data = train_slices(fed);
    let plan = cfg.solver.plan(cfg.rounds, 1.0);
    let mut theta = initial_bank(fed, 1, seed)?.component(0).to_vec();
    let pis = vec![MixtureRow::uniform(1); t];
    let mut log = Vec::with_capacity(cfg.rounds);

    for k in 1..=cfg.rounds {
        let bank = ComponentBank::new(fed.loss, fed.dim, vec![theta.clone()])?;
        let grad_norm_sq =
            em::objective_gradient_norm_sq(|_| &bank, &pis, &data, weights.as_slice())?;
        let picked = sampled_clients(t, cfg.sample_rate, seed, k);
        let locals: Vec<Vec<f64>> = picked
            .par_iter()
            .map(|&c| {
                let mut local = theta.clone();
                let mut rng = stream(seed, Namespace::Batches, c as u64, k as u64);
                local_sgd(&mut local, data[c], fed.loss, &plan, &mut rng);
                local
            })
            .collect();
        let n_sampled: usize = picked.iter().map(|&c| fed.clients[c].n_train()).sum();
        let mut next = vec![0.0; theta.len()];
        for (&c, local) in picked.iter().zip(&locals) {
            let w = fed.clients[c].n_train() as f64 / n_sampled as f64;
            next.iter_mut().zip(local).for_each(|(a, v)| *a += w * v);
        }
        theta = next;
        let bank = ComponentBank::new(fed.loss, fed.dim, vec![theta.clone()])?;
        log.push(make_log(fed, k, Banks::Shared(&bank), &pis, grad_norm_sq, 0.0, None)?);
    }
    Ok(FedAvgRun {
        model: LinearHypothesis { theta },
        log,
    })
}

#[derive(Clone, Debug)]
pub struct LocalConfig {
    /// Training runs for `rounds · J` local steps, logged once per `J` steps.
    pub rounds: usize,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug)]
pub struct LocalRun {
    pub models: Vec<LinearHypothesis>,
    pub log: Vec<RoundLog>,
}

/// Independent SGD on each client with no communication.
pub fn train_local(fed: &Federation, cfg: &LocalConfig) -> Result<LocalRun> {
    validate_common(fed, &cfg.solver, 1.0)?;
    let t = fed.num_clients();
    let seed = cfg.solver.seed;
    let weights = fed.weights();
    let data = train_slices(fed);
    let plan = cfg.solver.plan(cfg.rounds, 1.0);
    let init = initial_bank(fed, 1, seed)?.component(0).to_vec();
    let mut thetas = vec![init; t];
    let pis = vec![MixtureRow::uniform(1); t];
    let mut log = Vec::with_capacity(cfg.rounds);

    let to_banks = |thetas: &[Vec<f64>]| -> Result<Vec<ComponentBank>> {
        thetas
            .iter()
            .map(|th| ComponentBank::new(fed.loss, fed.dim, vec![th.clone()]))
            .collect()
    };
    for k in 1..=cfg.rounds {
        let banks = to_banks(&thetas)?;
        let grad_norm_sq =
            em::objective_gradient_norm_sq(|c| &banks[c], &pis, &data, weights.as_slice())?;
        thetas
            .par_iter_mut()
            .enumerate()
            .for_each(|(c, theta)| {
                let mut rng = stream(seed, Namespace::Batches, c as u64, k as u64);
                local_sgd(theta, data[c], fed.loss, &plan, &mut rng);
            });
        let banks = to_banks(&thetas)?;
        log.push(make_log(fed, k, Banks::PerClient(&banks), &pis, grad_norm_sq, 0.0, None)?);
    }
    Ok(LocalRun {
        models: thetas.into_iter().map(|theta| LinearHypothesis { theta }).collect(),
        log,
    })
}

/// Mixture weights for a client unseen during training: one E-step from
/// uniform weights followed by one π-update, with the components frozen.
/// An empty dataset yields uniform weights.
pub fn personalize_unseen(bank: &ComponentBank, samples: &[Sample]) -> Result<MixtureRow> {
    let uniform = MixtureRow::uniform(bank.num_components());
    if samples.is_empty() {
        return Ok(uniform);
    }
    em::m_step_pi(&em::e_step(bank, &uniform, samples)?)
}

/// Local-data fractions of the personalization sweep.
pub const SWEEP_FRACTIONS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub fraction: f64,
    /// Test accuracy averaged over clients with weights `∝ n_t`.
    pub accuracy: f64,
    pub pis: Vec<MixtureRow>,
}

/// Personalizes every client of `fed` from the first `⌊f · n_t⌋` of its
/// training samples, for each fraction `f`, and scores the resulting
/// mixtures on the test split.
pub fn personalization_sweep(bank: &ComponentBank, fed: &Federation, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    fractions
        .iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(FedError::input(format!("fraction {f} not in [0, 1]")));
            }
            let pis = fed
                .clients
                .iter()
                .map(|c| {
                    // The epsilon absorbs representation error in products such as 0.6 · 5.
                    let n = ((f * c.n_train() as f64) + 1e-9).floor() as usize;
                    personalize_unseen(bank, &c.train[..n.min(c.n_train())])
                })
                .collect::<Result<Vec<_>>>()?;
            let report = mixture_accuracy(Banks::Shared(bank), &pis, fed, Split::Test)?;
            Ok(SweepPoint {
                fraction: f,
                accuracy: report.weighted_accuracy,
                pis,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClientDataset;
    use crate::model::LossKind;
    use crate::topology::MixingMatrix;

    fn tiny_federation() -> Federation {
        let mut rng = stream(11, Namespace::Data, 0, 0);
        use rand::Rng;
        let clients = (0..4)
            .map(|c| {
                let n = 12 + 3 * c;
                let mk = |rng: &mut crate::rng::StreamRng| {
                    let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    let y = if x[0] * (c as f64 - 1.5) > 0.0 { 1.0 } else { 0.0 };
                    Sample::new(x, y)
                };
                let train = (0..n).map(|_| mk(&mut rng)).collect();
                let test = (0..5).map(|_| mk(&mut rng)).collect();
                ClientDataset::new(train, test)
            })
            .collect();
        Federation::new(clients, LossKind::Logistic, 2).unwrap()
    }

    fn solver() -> SolverConfig {
        SolverConfig::new(3, 4, 0.5, 21)
    }

    #[test]
    fn zero_rounds_return_initialization() {
        let fed = tiny_federation();
        let cfg = FedEmConfig { num_components: 2, rounds: 0, solver: solver(), sample_rate: 1.0 };
        let run = train_fedem(&fed, &cfg).unwrap();
        assert_eq!(run.bank, initial_bank(&fed, 2, 21).unwrap());
        assert!(run.pis.iter().all(|p| *p == MixtureRow::uniform(2)));
        assert!(run.log.is_empty());

        let avg = train_fedavg(&fed, &FedAvgConfig { rounds: 0, solver: solver(), sample_rate: 1.0 }).unwrap();
        assert_eq!(avg.model.theta, initial_bank(&fed, 1, 21).unwrap().component(0));
    }

    #[test]
    fn rejects_bad_configs() {
        let fed = tiny_federation();
        let cfg = FedEmConfig { num_components: 0, rounds: 1, solver: solver(), sample_rate: 1.0 };
        assert!(train_fedem(&fed, &cfg).is_err());
        let cfg = FedEmConfig { num_components: 2, rounds: 1, solver: solver(), sample_rate: 0.0 };
        assert!(train_fedem(&fed, &cfg).is_err());
        let dcfg = DFedEmConfig { num_components: 2, rounds: 1, solver: solver(), init: DecentralizedInit::Shared };
        let sched = MixingSchedule::Static(MixingMatrix::identity(3));
        assert!(train_dfedem(&fed, &dcfg, &sched).is_err());
    }

    #[test]
    fn sampled_clients_counts() {
        assert_eq!(sampled_clients(10, 1.0, 1, 1), (0..10).collect::<Vec<_>>());
        let s = sampled_clients(10, 0.2, 1, 3);
        assert_eq!(s.len(), 2);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sampled_clients(10, 0.01, 1, 3).len(), 1);
        assert_eq!(s, sampled_clients(10, 0.2, 1, 3));
    }

    #[test]
    fn non_sampled_clients_keep_their_weights() {
        let fed = tiny_federation();
        let cfg = FedEmConfig { num_components: 2, rounds: 1, solver: solver(), sample_rate: 0.5 };
        let run = train_fedem(&fed, &cfg).unwrap();
        let picked = sampled_clients(4, 0.5, 21, 1);
        for c in 0..4 {
            let uniform = run.pis[c] == MixtureRow::uniform(2);
            assert_eq!(uniform, !picked.contains(&c), "client {c}");
        }
    }

    #[test]
    fn round_log_csv_round_trip() {
        let logs = vec![
            RoundLog { round: 1, train_loss: 0.5, train_acc: 0.75, test_loss: 0.625, test_acc: 0.7, grad_norm_sq: 1e-3, delta_pi: 0.0, consensus_dist: None },
            RoundLog { round: 2, train_loss: 0.1, train_acc: 1.0, test_loss: 0.2, test_acc: 0.9, grad_norm_sq: 2.5e-7, delta_pi: 0.125, consensus_dist: Some(3.0) },
        ];
        let text = round_log_csv(&logs);
        assert!(text.starts_with(ROUND_LOG_HEADER));
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        assert_eq!(parse_round_log_csv(&text).unwrap(), logs);
        assert!(parse_round_log_csv("round\n").is_err());
        assert!(parse_round_log_csv(&format!("{ROUND_LOG_HEADER}\n1,2,3\n")).is_err());
        assert!(parse_round_log_csv(&format!("{ROUND_LOG_HEADER}\n1,x,0,0,0,0,0,\n")).is_err());
    }

    #[test]
    fn personalize_edge_cases() {
        let bank = ComponentBank::new(LossKind::Logistic, 1, vec![vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(personalize_unseen(&bank, &[]).unwrap(), MixtureRow::uniform(2));
        let single = ComponentBank::new(LossKind::Logistic, 1, vec![vec![1.0]]).unwrap();
        let pi = personalize_unseen(&single, &[Sample::new(vec![1.0], 0.0)]).unwrap();
        assert_eq!(pi.as_slice(), &[1.0]);
    }
}
