mod common;

use common::*;
use fedmix::em::{self, kl_divergence};
use fedmix::synth::{generate, SyntheticConfig};
use fedmix::{ComponentBank, LossKind, MixtureRow, PosteriorTable, Sample};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, m).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn instance() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 0usize..3, 1usize..5, 1usize..20)
}

proptest! {
    #[test]
    fn e_step_rows_are_distributions((seed, kind, m, n) in instance(), pi in simplex(4)) {
        let loss = loss_kinds()[kind];
        let mut r = rng(seed);
        let bank = random_bank(&mut r, loss, 3, m);
        let pi = MixtureRow::new({
            let p = &pi[..m];
            let s: f64 = p.iter().sum();
            p.iter().map(|v| v / s).collect()
        }).unwrap();
        let samples = random_samples(&mut r, n, 3, loss);
        let q = em::e_step(&bank, &pi, &samples).unwrap();
        for row in q.rows() {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let new_pi = em::m_step_pi(&q).unwrap();
        prop_assert!((new_pi.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn surrogate_contract_holds((seed, kind, m, n) in instance()) {
        let loss = loss_kinds()[kind];
        let mut r = rng(seed);
        let bank = random_bank(&mut r, loss, 2, m);
        let pi = random_row(&mut r, m);
        let samples = random_samples(&mut r, n, 2, loss);
        let f = em::client_objective(&bank, &pi, &samples).unwrap();

        // Any table majorizes, with the gap equal to the average KL.
        let q = random_table(&mut r, n, m);
        let g = em::surrogate_value(&bank, &pi, &q, &samples).unwrap();
        let gap = em::surrogate_gap(&bank, &pi, &q, &samples).unwrap();
        prop_assert!(g - f >= -1e-10);
        prop_assert!(((g - f) - gap).abs() < 1e-9);

        // Tight at the anchor.
        let q_star = em::e_step(&bank, &pi, &samples).unwrap();
        let g_star = em::surrogate_value(&bank, &pi, &q_star, &samples).unwrap();
        prop_assert!((g_star - f).abs() <= 1e-10);

        // Moving π to the column means lowers the surrogate by KL(π_new ‖ π).
        let pi_new = em::m_step_pi(&q).unwrap();
        let g_new = em::surrogate_value(&bank, &pi_new, &q, &samples).unwrap();
        let kl = kl_divergence(pi_new.as_slice(), pi.as_slice());
        prop_assert!(((g - g_new) - kl).abs() <= 1e-9, "{} vs {}", g - g_new, kl);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(p in simplex(5), q in simplex(5)) {
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-15);
    }

    #[test]
    fn local_sgd_moves_only_weighted_components(seed in any::<u64>(), steps in 1usize..5) {
        let mut r = rng(seed);
        let bank = random_bank(&mut r, LossKind::Logistic, 3, 3);
        let samples = random_samples(&mut r, 15, 3, LossKind::Logistic);
        let q = PosteriorTable::from_rows(
            (0..15).map(|i| if i % 2 == 0 { vec![1.0, 0.0, 0.0] } else { vec![0.0, 1.0, 0.0] }).collect(),
        ).unwrap();
        let solver = fedmix::SolverConfig::new(steps, 4, 0.5, seed);
        let out = em::local_sgd_theta(&bank, &q, &samples, &solver.plan(10, 1.0), &mut r).unwrap();
        prop_assert_eq!(out.component(2), bank.component(2));
    }
}

fn weighted_objective(bank: &ComponentBank, pis: &[MixtureRow], data: &[&[Sample]]) -> f64 {
    let n: usize = data.iter().map(|d| d.len()).sum();
    data.iter()
        .zip(pis)
        .map(|(d, pi)| d.len() as f64 / n as f64 * em::client_objective(bank, pi, d).unwrap())
        .sum()
}

/// One centralized EM iteration with an exact Θ-step.
pub fn exact_em_step(
    bank: &ComponentBank,
    pis: &[MixtureRow],
    data: &[&[Sample]],
    tol: f64,
) -> (ComponentBank, Vec<MixtureRow>) {
    let qs: Vec<PosteriorTable> = data
        .iter()
        .zip(pis)
        .map(|(d, pi)| em::e_step(bank, pi, d).unwrap())
        .collect();
    let pis = qs.iter().map(|q| em::m_step_pi(q).unwrap()).collect();
    (em::exact_m_step_theta(bank, &qs, data, tol).unwrap(), pis)
}

#[test]
fn exact_em_never_increases_the_objective() {
    for seed in 0..3 {
        let (fed, _) = generate(&SyntheticConfig::new(8, 2, 3, 0.5, seed)).unwrap();
        let data: Vec<&[Sample]> = fed.clients.iter().map(|c| c.train.as_slice()).collect();
        let mut bank = fedmix::train::initial_bank(&fed, 2, seed).unwrap();
        let mut pis = vec![MixtureRow::uniform(2); fed.num_clients()];
        let mut prev = weighted_objective(&bank, &pis, &data);
        for _ in 0..20 {
            (bank, pis) = exact_em_step(&bank, &pis, &data, 1e-6);
            let now = weighted_objective(&bank, &pis, &data);
            assert!(now <= prev + 1e-7, "{prev} -> {now}");
            prev = now;
        }
    }
}

#[test]
fn exact_m_step_solves_weighted_normal_equations() {
    let mut r = rng(21);
    let (dim, m) = (3, 2);
    let loss = LossKind::SquaredError;
    let clients: Vec<Vec<Sample>> = (0..3).map(|_| random_samples(&mut r, 25, dim, loss)).collect();
    let data: Vec<&[Sample]> = clients.iter().map(Vec::as_slice).collect();
    let tables: Vec<PosteriorTable> = clients.iter().map(|c| random_table(&mut r, c.len(), m)).collect();
    let init = random_bank(&mut r, loss, dim, m);
    let solved = em::exact_m_step_theta(&init, &tables, &data, 1e-8).unwrap();

    for comp in 0..m {
        let mut xtqx = DMatrix::<f64>::zeros(dim, dim);
        let mut xtqy = DVector::<f64>::zeros(dim);
        for (c, q) in clients.iter().zip(&tables) {
            for (i, s) in c.iter().enumerate() {
                let x = DVector::from_column_slice(&s.x);
                let w = q.get(i, comp);
                xtqx += w * &x * x.transpose();
                xtqy += w * s.y * &x;
            }
        }
        let oracle = xtqx.lu().solve(&xtqy).unwrap();
        for (a, b) in solved.component(comp).iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn exact_m_step_reaches_tolerance_on_separable_data() {
    let samples = vec![
        Sample::new(vec![1.0, 1.0], 1.0),
        Sample::new(vec![2.0, 1.0], 1.0),
        Sample::new(vec![-1.0, 1.0], 0.0),
        Sample::new(vec![-2.0, 1.0], 0.0),
    ];
    let q = PosteriorTable::from_rows(vec![vec![1.0]; 4]).unwrap();
    let init = ComponentBank::new(LossKind::Logistic, 2, vec![vec![0.0, 0.0]]).unwrap();
    let out = em::exact_m_step_theta(&init, std::slice::from_ref(&q), &[&samples], 1e-4).unwrap();
    let g = em::surrogate_gradient(&out, &q, &samples).unwrap();
    assert!(norm(&g) <= 1e-4);
}
