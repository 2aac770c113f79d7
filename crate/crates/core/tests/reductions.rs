mod common;

use common::*;
use fedmix::em;
use fedmix::rng::{stream, Namespace};
use fedmix::surrogate::{
    run_decentralized_surrogate, run_federated_surrogate, FedEmObjective, QuadraticObjective, SurrogateRunConfig,
};
use fedmix::synth::{generate, SyntheticConfig};
use fedmix::topology::{consensus_distance, metropolis_weights, MixingMatrix};
use fedmix::train::*;
use fedmix::{ComponentBank, FederationWeights, Graph, LossKind, MixingSchedule, MixtureRow, SolverConfig};
use rand_distr::{Distribution, StandardNormal};

fn small_federation(seed: u64) -> fedmix::Federation {
    generate(&SyntheticConfig::new(6, 2, 4, 0.5, seed)).unwrap().0
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn single_component_fedem_is_fedavg() {
    for (seed, rate) in [(1, 1.0), (2, 0.5)] {
        let fed = small_federation(seed);
        let solver = SolverConfig::new(3, 8, 0.3, seed);
        let em = train_fedem(
            &fed,
            &FedEmConfig {
                num_components: 1,
                rounds: 6,
                solver: solver.clone(),
                sample_rate: rate,
            },
        )
        .unwrap();
        let avg = train_fedavg(&fed, &FedAvgConfig { rounds: 6, solver, sample_rate: rate }).unwrap();
        assert_eq!(bits(em.bank.component(0)), bits(&avg.model.theta));
        assert_eq!(round_log_csv(&em.log), round_log_csv(&avg.log));
    }
}

#[test]
fn generic_loop_reproduces_fedem() {
    let fed = small_federation(3);
    let (m, rounds) = (3, 5);
    let solver = SolverConfig::new(4, 6, 0.4, 3);
    let run = train_fedem(
        &fed,
        &FedEmConfig {
            num_components: m,
            rounds,
            solver: solver.clone(),
            sample_rate: 1.0,
        },
    )
    .unwrap();

    let objectives: Vec<FedEmObjective<'_>> = fed
        .clients
        .iter()
        .map(|c| FedEmObjective::new(&c.train, fed.loss, fed.dim, m))
        .collect();
    let u0 = initial_bank(&fed, m, 3).unwrap().to_flat();
    let v0 = vec![MixtureRow::uniform(m); fed.num_clients()];
    let mut cfg = SurrogateRunConfig::new(rounds, solver);
    cfg.audit = true;
    let generic = run_federated_surrogate(&objectives, &u0, &v0, &fed.weights(), &cfg).unwrap();

    assert_eq!(bits(&generic.u), bits(&run.bank.to_flat()));
    assert_eq!(generic.vs, run.pis);
    let objective = generic.log.last().unwrap().objective;
    assert!((objective - run.log.last().unwrap().train_loss).abs() < 1e-12);
}

#[test]
fn generic_loop_reproduces_dfedem() {
    let fed = small_federation(4);
    let (m, rounds) = (2, 4);
    let solver = SolverConfig::new(2, 5, 0.5, 4);
    let schedule = MixingSchedule::Static(metropolis_weights(&Graph::ring(fed.num_clients())));
    let run = train_dfedem(
        &fed,
        &DFedEmConfig {
            num_components: m,
            rounds,
            solver: solver.clone(),
            init: DecentralizedInit::Independent,
        },
        &schedule,
    )
    .unwrap();

    let objectives: Vec<FedEmObjective<'_>> = fed
        .clients
        .iter()
        .map(|c| FedEmObjective::new(&c.train, fed.loss, fed.dim, m))
        .collect();
    let u0s: Vec<Vec<f64>> = (0..fed.num_clients())
        .map(|c| {
            let mut r = stream(4, Namespace::Init, c as u64, 1);
            ComponentBank::random_init(fed.loss, fed.dim, m, &mut r).unwrap().to_flat()
        })
        .collect();
    let v0 = vec![MixtureRow::uniform(m); fed.num_clients()];
    let scales = fed.weights().as_slice().to_vec();
    let cfg = SurrogateRunConfig::new(rounds, solver);
    let generic = run_decentralized_surrogate(&objectives, &u0s, &v0, &scales, &schedule, &cfg).unwrap();

    for (u, b) in generic.us.iter().zip(&run.banks) {
        assert_eq!(bits(u), bits(&b.to_flat()));
    }
    assert_eq!(generic.vs, run.pis);
    for (g, l) in generic.log.iter().zip(&run.log) {
        assert_eq!(g.consensus_dist, l.consensus_dist);
    }
}

#[test]
fn identity_topology_is_independent_local_em() {
    let fed = small_federation(5);
    let (m, rounds, seed) = (2, 5, 5);
    let solver = SolverConfig::new(3, 4, 0.6, seed);
    let t = fed.num_clients();
    let run = train_dfedem(
        &fed,
        &DFedEmConfig {
            num_components: m,
            rounds,
            solver: solver.clone(),
            init: DecentralizedInit::Independent,
        },
        &MixingSchedule::Static(MixingMatrix::identity(t)),
    )
    .unwrap();

    let weights = fed.weights();
    for c in 0..t {
        let samples = &fed.clients[c].train;
        let mut r = stream(seed, Namespace::Init, c as u64, 1);
        let mut bank = ComponentBank::random_init(fed.loss, fed.dim, m, &mut r).unwrap();
        let mut pi = MixtureRow::uniform(m);
        let plan = solver.plan(rounds, weights.as_slice()[c]);
        for k in 1..=rounds {
            let q = em::e_step(&bank, &pi, samples).unwrap();
            pi = em::m_step_pi(&q).unwrap();
            let mut r = stream(seed, Namespace::Batches, c as u64, k as u64);
            bank = em::local_sgd_theta(&bank, &q, samples, &plan, &mut r).unwrap();
        }
        assert_eq!(bits(&bank.to_flat()), bits(&run.banks[c].to_flat()));
        assert_eq!(pi, run.pis[c]);
    }
    // Without communication the spread between clients is whatever local
    // training makes it; it must equal the spread of the independent runs.
    let last = run.log.last().unwrap().consensus_dist.unwrap();
    let flat: Vec<Vec<f64>> = run.banks.iter().map(ComponentBank::to_flat).collect();
    assert_eq!(last, consensus_distance(&flat));
}

#[test]
fn single_quadratic_client_is_plain_sgd() {
    let seed = 9;
    let center = vec![1.5, -0.5, 2.0];
    let objective = QuadraticObjective {
        center: center.clone(),
        noise_sd: 0.3,
    };
    let solver = SolverConfig::new(4, 1, 0.8, seed);
    let rounds = 10;
    let cfg = SurrogateRunConfig::new(rounds, solver.clone());
    let u0 = vec![0.0; 3];
    let run = run_federated_surrogate(&[objective], &u0, &[()], &FederationWeights::uniform(1), &cfg).unwrap();

    let plan = solver.plan(rounds, 1.0);
    let mut u = u0;
    for k in 1..=rounds {
        let mut r = stream(seed, Namespace::Batches, 0, k as u64);
        for _ in 0..plan.steps {
            let g: Vec<f64> = u
                .iter()
                .zip(&center)
                .map(|(a, c)| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    a - c + 0.3 * z
                })
                .collect();
            u.iter_mut().zip(&g).for_each(|(x, d)| *x -= plan.step_size * d);
        }
        // Averaging over one client with weight 1.
        u = u.iter().map(|x| 0.0 + 1.0 * x).collect();
    }
    assert_eq!(bits(&run.u), bits(&u));
}

#[test]
fn quadratic_ring_reaches_consensus() {
    let centers: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, -(i as f64) / 2.0]).collect();
    let objectives: Vec<QuadraticObjective> = centers.iter().cloned().map(QuadraticObjective::new).collect();
    let u0s: Vec<Vec<f64>> = (0..8).map(|i| vec![(i * 3 % 5) as f64, 1.0]).collect();
    let schedule = MixingSchedule::Static(metropolis_weights(&Graph::ring(8)));
    let mut solver = SolverConfig::new(1, 1, 0.2, 0);
    solver.schedule = fedmix::LrSchedule::InverseSqrtRounds;
    let cfg = SurrogateRunConfig::new(40_000, solver);
    let run = run_decentralized_surrogate(&objectives, &u0s, &[(); 8], &[1.0; 8], &schedule, &cfg).unwrap();
    let initial = consensus_distance(&u0s);
    let last = run.log.last().unwrap().consensus_dist.unwrap();
    assert!(last < 1e-4 * initial, "{last} vs {initial}");
    let target: Vec<f64> = (0..2).map(|k| centers.iter().map(|c| c[k]).sum::<f64>() / 8.0).collect();
    let mean: Vec<f64> = (0..2).map(|k| run.us.iter().map(|u| u[k]).sum::<f64>() / 8.0).collect();
    assert!(relative_error(&mean, &target, 1.0) < 0.05, "{mean:?} vs {target:?}");
}

#[test]
fn loss_kind_does_not_matter_for_the_reduction() {
    let mut r = rng(8);
    let fed = random_federation(&mut r, 4, 3, LossKind::SquaredError);
    let solver = SolverConfig::new(2, 3, 0.05, 8);
    let em = train_fedem(&fed, &FedEmConfig { num_components: 1, rounds: 3, solver: solver.clone(), sample_rate: 1.0 }).unwrap();
    let avg = train_fedavg(&fed, &FedAvgConfig { rounds: 3, solver, sample_rate: 1.0 }).unwrap();
    assert_eq!(bits(em.bank.component(0)), bits(&avg.model.theta));
}
