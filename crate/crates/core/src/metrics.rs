//! Evaluation of mixture predictors and recovery of planted parameters.

use rayon::prelude::*;

use crate::data::{Federation, Split};
use crate::em::{self, ComponentBank, MixtureRow};
use crate::error::{FedError, Result};
use crate::model::{self, LossKind, Prediction};

/// Largest `M` supported by the brute-force permutation search.
pub const MAX_PERMUTED_COMPONENTS: usize = 5;

/// Which component bank each client uses.
#[derive(Clone, Copy, Debug)]
pub enum Banks<'a> {
    Shared(&'a ComponentBank),
    PerClient(&'a [ComponentBank]),
}

impl<'a> Banks<'a> {
    pub fn get(&self, t: usize) -> &'a ComponentBank {
        match *self {
            Banks::Shared(b) => b,
            Banks::PerClient(bs) => &bs[t],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `Σ_t ω_t acc_t` with `ω_t ∝` training-set size.
    pub weighted_accuracy: f64,
    /// `Σ_t ω_t f_t` on the split, up to an additive constant.
    pub objective: f64,
    pub per_client_accuracy: Vec<f64>,
}

/// Probability-level mixture `Σ_m π_m h_{θ_m}(x)`.
pub fn mixture_prediction(bank: &ComponentBank, pi: &[f64], x: &[f64]) -> Result<Prediction> {
    if pi.len() != bank.num_components() {
        return Err(FedError::DimensionMismatch {
            expected: bank.num_components(),
            got: pi.len(),
        });
    }
    let mut out: Option<Prediction> = None;
    for (theta, &w) in bank.components().iter().zip(pi) {
        let p = model::predict(theta, x, bank.loss())?;
        out = Some(match (out, p) {
            (None, Prediction::Value(v)) => Prediction::Value(w * v),
            (None, Prediction::Probability(v)) => Prediction::Probability(w * v),
            (None, Prediction::Distribution(v)) => {
                Prediction::Distribution(v.into_iter().map(|p| w * p).collect())
            }
            (Some(Prediction::Value(a)), Prediction::Value(v)) => Prediction::Value(a + w * v),
            (Some(Prediction::Probability(a)), Prediction::Probability(v)) => {
                Prediction::Probability(a + w * v)
            }
            (Some(Prediction::Distribution(mut a)), Prediction::Distribution(v)) => {
                a.iter_mut().zip(v).for_each(|(acc, p)| *acc += w * p);
                Prediction::Distribution(a)
            }
            _ => unreachable!("all components share one loss kind"),
        });
    }
    Ok(out.expect("bank has at least one component"))
}

/// Accuracy of a mixture prediction on one client's split. Regression losses
/// have no notion of accuracy and report 0.
fn client_accuracy(bank: &ComponentBank, pi: &[f64], samples: &[model::Sample]) -> Result<f64> {
    if !bank.loss().is_classification() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if mixture_prediction(bank, pi, &s.x)?.label() == s.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Per-client and weighted accuracy of the mixture predictor, plus the
/// mixture negative log-likelihood objective on `split`.
pub fn mixture_accuracy(
    banks: Banks<'_>,
    pis: &[MixtureRow],
    fed: &Federation,
    split: Split,
) -> Result<EvalReport> {
    let t = fed.num_clients();
    if pis.len() != t {
        return Err(FedError::DimensionMismatch {
            expected: t,
            got: pis.len(),
        });
    }
    if let Banks::PerClient(bs) = banks {
        if bs.len() != t {
            return Err(FedError::DimensionMismatch {
                expected: t,
                got: bs.len(),
            });
        }
    }
    if let Some(c) = fed.clients.iter().position(|c| c.split(split).is_empty()) {
        return Err(FedError::input(format!("client {c} has an empty {split:?} split")));
    }
    let per_client: Vec<(f64, f64)> = (0..t)
        .into_par_iter()
        .map(|c| {
            let bank = banks.get(c);
            let samples = fed.clients[c].split(split);
            let acc = client_accuracy(bank, pis[c].as_slice(), samples)?;
            let obj = em::client_objective(bank, &pis[c], samples)?;
            Ok((acc, obj))
        })
        .collect::<Result<_>>()?;
    let weights = fed.weights();
    let mut weighted_accuracy = 0.0;
    let mut objective = 0.0;
    for ((acc, obj), w) in per_client.iter().zip(weights.as_slice()) {
        weighted_accuracy += w * acc;
        objective += w * obj;
    }
    Ok(EvalReport {
        weighted_accuracy,
        objective,
        per_client_accuracy: per_client.into_iter().map(|(a, _)| a).collect(),
    })
}

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

/// Orientation of the component index in a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentAxis {
    /// One row per component (`Θ`).
    Rows,
    /// One column per component (`Π`).
    Columns,
}

fn check_same_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(FedError::input("estimate and truth have different shapes"));
    }
    Ok(())
}

fn num_components(m: &[Vec<f64>], axis: ComponentAxis) -> usize {
    match axis {
        ComponentAxis::Rows => m.len(),
        ComponentAxis::Columns => m.first().map_or(0, Vec::len),
    }
}

/// Cosine distance between `vec(est)` with components reordered by `perm`
/// and `vec(truth)`.
pub fn permuted_cosine_distance(
    est: &[Vec<f64>],
    truth: &[Vec<f64>],
    axis: ComponentAxis,
    perm: &[usize],
) -> f64 {
    let mut dot = 0.0;
    let mut ne = 0.0;
    let mut nt = 0.0;
    for (r, truth_row) in truth.iter().enumerate() {
        for (c, &tv) in truth_row.iter().enumerate() {
            let ev = match axis {
                ComponentAxis::Rows => est[perm[r]][c],
                ComponentAxis::Columns => est[r][perm[c]],
            };
            dot += ev * tv;
            ne += ev * ev;
            nt += tv * tv;
        }
    }
    if ne == 0.0 || nt == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (ne.sqrt() * nt.sqrt())).clamp(0.0, 2.0)
}

fn check_component_count(m: usize) -> Result<()> {
    if m > MAX_PERMUTED_COMPONENTS {
        return Err(FedError::input(format!(
            "permutation search supports at most {MAX_PERMUTED_COMPONENTS} components, got {m}"
        )));
    }
    Ok(())
}

/// Cosine distance in `[0, 2]`, minimized over relabelings of the components.
pub fn recovery_distance(est: &[Vec<f64>], truth: &[Vec<f64>], axis: ComponentAxis) -> Result<f64> {
    check_same_shape(est, truth)?;
    let m = num_components(truth, axis);
    check_component_count(m)?;
    Ok(permutations(m)
        .iter()
        .map(|p| permuted_cosine_distance(est, truth, axis, p))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovery {
    pub theta_distance: f64,
    pub pi_distance: f64,
    /// `permutation[m]` is the estimated component matched to true component `m`.
    pub permutation: Vec<usize>,
}

/// Aligns estimated components to the truth by the permutation that best
/// matches `Θ`, then scores `Θ` rows and `Π` columns under that one
/// permutation.
pub fn aligned_recovery(
    theta_est: &[Vec<f64>],
    pi_est: &[Vec<f64>],
    theta_truth: &[Vec<f64>],
    pi_truth: &[Vec<f64>],
) -> Result<Recovery> {
    check_same_shape(theta_est, theta_truth)?;
    check_same_shape(pi_est, pi_truth)?;
    let m = theta_truth.len();
    check_component_count(m)?;
    if num_components(pi_truth, ComponentAxis::Columns) != m {
        return Err(FedError::input("Θ and Π disagree on the number of components"));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(m) {
        let d = permuted_cosine_distance(theta_est, theta_truth, ComponentAxis::Rows, &p);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, p));
        }
    }
    let (theta_distance, permutation) = best.expect("at least one permutation");
    let pi_distance = permuted_cosine_distance(pi_est, pi_truth, ComponentAxis::Columns, &permutation);
    Ok(Recovery {
        theta_distance,
        pi_distance,
        permutation,
    })
}

/// Assigns each client to its largest-weight component (ties to the lowest
/// index) and returns the fraction matching `truth_labels` under the best
/// relabeling.
pub fn cluster_assignment_accuracy(pis: &[MixtureRow], truth_labels: &[usize]) -> Result<f64> {
    if pis.len() != truth_labels.len() || pis.is_empty() {
        return Err(FedError::input("need one true label per client"));
    }
    let m = pis[0].len();
    check_component_count(m)?;
    if let Some(l) = truth_labels.iter().find(|&&l| l >= m) {
        return Err(FedError::input(format!("true cluster {l} out of range for {m} components")));
    }
    let assigned: Vec<usize> = pis.iter().map(MixtureRow::argmax).collect();
    let best = permutations(m)
        .iter()
        .map(|p| {
            assigned
                .iter()
                .zip(truth_labels)
                .filter(|(&a, &t)| p[a] == t)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok(best as f64 / pis.len() as f64)
}

/// Accuracy of a single hypothesis, for baselines.
pub fn single_model_accuracy(theta: &[f64], loss: LossKind, samples: &[model::Sample]) -> Result<f64> {
    let bank = ComponentBank::new(loss, samples.first().map_or(0, |s| s.x.len()), vec![theta.to_vec()])?;
    client_accuracy(&bank, &[1.0], samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClientDataset;
    use crate::model::Sample;
    use proptest::prelude::*;

    #[test]
    fn tie_prediction_classifies_as_one() {
        // θ₁ = ln 9 gives h₁ = 0.9 and θ₂ = −ln 9 gives h₂ = 0.1 at x = 1.
        let bank = ComponentBank::new(LossKind::Logistic, 1, vec![vec![9f64.ln()], vec![-(9f64.ln())]]).unwrap();
        let p = mixture_prediction(&bank, &[0.5, 0.5], &[1.0]).unwrap();
        match p {
            Prediction::Probability(v) => assert!((v - 0.5).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(Prediction::Probability(0.5).label(), 1.0);
        assert_eq!(Prediction::Distribution(vec![0.4, 0.4, 0.2]).label(), 0.0);
    }

    #[test]
    fn single_component_matches_plain_accuracy() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| Sample::new(vec![(i as f64 - 10.0) / 5.0, 1.0], ((i * 7) % 3 == 0) as u8 as f64))
            .collect();
        let theta = vec![0.8, -0.2];
        let fed = Federation::new(
            vec![ClientDataset::new(samples.clone(), samples.clone())],
            LossKind::Logistic,
            2,
        )
        .unwrap();
        let bank = ComponentBank::new(LossKind::Logistic, 2, vec![theta.clone()]).unwrap();
        let report = mixture_accuracy(Banks::Shared(&bank), &[MixtureRow::uniform(1)], &fed, Split::Test).unwrap();
        let plain = samples
            .iter()
            .filter(|s| (model::sigmoid(model::dot(&theta, &s.x)) >= 0.5) as u8 as f64 == s.y)
            .count() as f64
            / 20.0;
        assert_eq!(report.weighted_accuracy, plain);
        assert_eq!(single_model_accuracy(&theta, LossKind::Logistic, &samples).unwrap(), plain);
    }

    #[test]
    fn empty_split_is_an_error() {
        let s = Sample::new(vec![1.0], 1.0);
        let fed = Federation::new(vec![ClientDataset::new(vec![s], vec![])], LossKind::Logistic, 1).unwrap();
        let bank = ComponentBank::new(LossKind::Logistic, 1, vec![vec![0.0]]).unwrap();
        assert!(mixture_accuracy(Banks::Shared(&bank), &[MixtureRow::uniform(1)], &fed, Split::Test).is_err());
    }

    #[test]
    fn recovery_examples() {
        let truth = vec![vec![1.0, -0.5, 0.2], vec![0.3, 0.9, -1.0]];
        assert!(recovery_distance(&truth, &truth, ComponentAxis::Rows).unwrap() < 1e-15);
        let one = vec![truth[0].clone()];
        let neg = vec![truth[0].iter().map(|v| -v).collect::<Vec<f64>>()];
        assert!((recovery_distance(&neg, &one, ComponentAxis::Rows).unwrap() - 2.0).abs() < 1e-9);
        let swapped = vec![truth[1].clone(), truth[0].clone()];
        assert!(recovery_distance(&swapped, &truth, ComponentAxis::Rows).unwrap() < 1e-15);
        let six = vec![vec![1.0; 6]; 6];
        assert!(recovery_distance(&six, &six, ComponentAxis::Rows).is_err());
    }

    #[test]
    fn cluster_accuracy_examples() {
        let truth = vec![0, 1, 1, 0, 2, 0];
        let one_hot: Vec<MixtureRow> = truth.iter().map(|&l| MixtureRow::one_hot(3, l)).collect();
        assert_eq!(cluster_assignment_accuracy(&one_hot, &truth).unwrap(), 1.0);

        let relabeled: Vec<MixtureRow> = truth.iter().map(|&l| MixtureRow::one_hot(3, (l + 1) % 3)).collect();
        assert_eq!(cluster_assignment_accuracy(&relabeled, &truth).unwrap(), 1.0);

        // Uniform rows all go to component 0; brute force over the 6
        // relabelings finds the best match is the most frequent true
        // cluster, here cluster 0 with 3 of 6 clients.
        let uniform = vec![MixtureRow::uniform(3); 6];
        let brute = permutations(3)
            .iter()
            .map(|p| truth.iter().filter(|&&l| p[0] == l).count())
            .max()
            .unwrap() as f64
            / 6.0;
        assert_eq!(brute, 0.5);
        assert_eq!(cluster_assignment_accuracy(&uniform, &truth).unwrap(), brute);
    }

    #[test]
    fn aligned_recovery_uses_one_permutation() {
        let theta = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let pi = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let theta_est = vec![theta[1].clone(), theta[0].clone()];
        let pi_est: Vec<Vec<f64>> = pi.iter().map(|r| vec![r[1], r[0]]).collect();
        let rec = aligned_recovery(&theta_est, &pi_est, &theta, &pi).unwrap();
        assert_eq!(rec.permutation, vec![1, 0]);
        assert!(rec.theta_distance < 1e-15 && rec.pi_distance < 1e-15);
    }

    fn permute_rows(m: &[Vec<f64>], p: &[usize]) -> Vec<Vec<f64>> {
        p.iter().map(|&i| m[i].clone()).collect()
    }

    proptest! {
        #[test]
        fn recovery_is_permutation_invariant(
            est in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3),
            truth in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3),
            which in 0usize..6,
        ) {
            let p = &permutations(3)[which];
            let a = recovery_distance(&est, &truth, ComponentAxis::Rows).unwrap();
            let b = recovery_distance(&permute_rows(&est, p), &truth, ComponentAxis::Rows).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&a));
        }

        #[test]
        fn cluster_accuracy_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..12),
            labels in prop::collection::vec(0usize..3, 12),
            which in 0usize..6,
        ) {
            let pis: Vec<MixtureRow> = rows.iter().map(|r| {
                let s: f64 = r.iter().sum();
                MixtureRow::new(r.iter().map(|v| v / s).collect()).unwrap()
            }).collect();
            let labels = &labels[..pis.len()];
            let p = &permutations(3)[which];
            let relabeled: Vec<MixtureRow> = pis.iter().map(|r| {
                let mut v = vec![0.0; 3];
                for (m, &x) in r.as_slice().iter().enumerate() { v[p[m]] = x; }
                MixtureRow::new(v).unwrap()
            }).collect();
            let a = cluster_assignment_accuracy(&pis, labels).unwrap();
            let b = cluster_assignment_accuracy(&relabeled, labels).unwrap();
            // Ties inside a row may resolve differently after relabeling, so
            // only compare rows with a unique maximum.
            let unique = pis.iter().all(|r| {
                let mx = r.as_slice()[r.argmax()];
                r.as_slice().iter().filter(|&&v| v == mx).count() == 1
            });
            if unique { prop_assert_eq!(a, b); }
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
