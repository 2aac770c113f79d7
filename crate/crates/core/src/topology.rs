//! Communication graphs and gossip mixing matrices.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{FedError, Result};
use crate::rng::{stream, Namespace};

/// Tolerance used when validating mixing matrices.
pub const MIXING_TOL: f64 = 1e-9;

/// Simple undirected graph on nodes `0..num_nodes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn empty(num_nodes: usize) -> Self {
        Graph {
            num_nodes,
            edges: BTreeSet::new(),
        }
    }

    pub fn complete(num_nodes: usize) -> Self {
        let mut g = Graph::empty(num_nodes);
        for i in 0..num_nodes {
            for j in i + 1..num_nodes {
                g.edges.insert((i, j));
            }
        }
        g
    }

    pub fn ring(num_nodes: usize) -> Self {
        let mut g = Graph::empty(num_nodes);
        if num_nodes >= 2 {
            for i in 0..num_nodes {
                // Adding a duplicate edge is a no-op, which covers T = 2.
                let _ = g.add_edge(i, (i + 1) % num_nodes);
            }
        }
        g
    }

    pub fn path(num_nodes: usize) -> Self {
        let mut g = Graph::empty(num_nodes);
        for i in 1..num_nodes {
            let _ = g.add_edge(i - 1, i);
        }
        g
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.num_nodes || j >= self.num_nodes {
            return Err(FedError::input(format!(
                "edge ({i}, {j}) out of range for {} nodes",
                self.num_nodes
            )));
        }
        if i == j {
            return Err(FedError::input(format!("self-loop on node {i}")));
        }
        self.edges.insert((i.min(j), i.max(j)));
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Edge-list text: first line `T`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.num_nodes);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Graph> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| FedError::input("edge list is empty"))?;
        let num_nodes: usize = first
            .parse()
            .map_err(|_| FedError::input(format!("line 1: expected node count, got `{first}`")))?;
        let mut g = Graph::empty(num_nodes);
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(FedError::input(format!("line {n}: expected `i j`, got `{line}`")));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| FedError::input(format!("line {n}: bad node index `{s}`")))
            };
            g.add_edge(parse(a)?, parse(b)?)
                .map_err(|e| FedError::input(format!("line {n}: {e}")))?;
        }
        Ok(g)
    }
}

/// Erdős–Rényi graph: each unordered pair is an edge with probability `p_edge`.
pub fn erdos_renyi(num_nodes: usize, p_edge: f64, seed: u64) -> Result<Graph> {
    if num_nodes == 0 {
        return Err(FedError::input("graph needs at least one node"));
    }
    if !(0.0..=1.0).contains(&p_edge) {
        return Err(FedError::input(format!("edge probability {p_edge} not in [0, 1]")));
    }
    let mut rng = stream(seed, Namespace::Topology, num_nodes as u64, 0);
    let mut g = Graph::empty(num_nodes);
    for i in 0..num_nodes {
        for j in i + 1..num_nodes {
            if rng.random::<f64>() < p_edge {
                g.edges.insert((i, j));
            }
        }
    }
    Ok(g)
}

/// Dense square matrix used for gossip rounds, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    w: Vec<f64>,
}

impl MixingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut w = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(FedError::input("mixing matrix must be square"));
            }
            w.extend(row);
        }
        Ok(MixingMatrix { n, w })
    }

    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        MixingMatrix { n, w }
    }

    /// `(1/T)·𝟙𝟙ᵀ`.
    pub fn uniform(n: usize) -> Self {
        MixingMatrix {
            n,
            w: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn matmul(&self, other: &MixingMatrix) -> MixingMatrix {
        let n = self.n;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a != 0.0 {
                    for j in 0..n {
                        w[i * n + j] += a * other.get(k, j);
                    }
                }
            }
        }
        MixingMatrix { n, w }
    }

    /// Checks symmetry, nonnegativity and unit row/column sums within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                let v = self.get(i, j);
                if !v.is_finite() || v < -tol {
                    return Err(FedError::InvalidMixingMatrix(format!("entry ({i}, {j}) = {v}")));
                }
                if (v - self.get(j, i)).abs() > tol {
                    return Err(FedError::InvalidMixingMatrix(format!("asymmetric at ({i}, {j})")));
                }
                row += v;
                col += self.get(j, i);
            }
            if (row - 1.0).abs() > tol || (col - 1.0).abs() > tol {
                return Err(FedError::InvalidMixingMatrix(format!(
                    "row/column {i} sums to {row}/{col}"
                )));
            }
        }
        Ok(())
    }

    /// Gossip step: `out_t = Σ_s w_{ts} · values_s`, summed in order of `s`.
    pub fn mix(&self, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if values.len() != self.n {
            return Err(FedError::DimensionMismatch {
                expected: self.n,
                got: values.len(),
            });
        }
        let len = values.first().map_or(0, Vec::len);
        Ok((0..self.n)
            .map(|t| {
                let mut acc = vec![0.0; len];
                for (s, v) in values.iter().enumerate() {
                    let w = self.get(t, s);
                    if w != 0.0 {
                        acc.iter_mut().zip(v).for_each(|(a, x)| *a += w * x);
                    }
                }
                acc
            })
            .collect())
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// the remaining mass on the diagonal.
pub fn metropolis_weights(g: &Graph) -> MixingMatrix {
    let n = g.num_nodes();
    let deg = g.degrees();
    let mut w = vec![0.0; n * n];
    for (i, j) in g.edges() {
        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        w[i * n + j] = v;
        w[j * n + i] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[i * n + j]).sum();
        w[i * n + i] = 1.0 - off;
    }
    MixingMatrix { n, w }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralReport {
    pub is_valid: bool,
    /// Second-largest eigenvalue modulus `λ₂`; `λ₂²` bounds one-round contraction.
    pub second_eigenvalue_modulus: f64,
}

/// Validates `w` and estimates `λ₂` by power iteration on `W − 𝟙𝟙ᵀ/T`.
pub fn spectral_mixing_check(w: &MixingMatrix) -> SpectralReport {
    SpectralReport {
        is_valid: w.validate(MIXING_TOL).is_ok(),
        second_eigenvalue_modulus: second_eigenvalue_modulus(w, 1e-8),
    }
}

fn second_eigenvalue_modulus(w: &MixingMatrix, tol: f64) -> f64 {
    let n = w.size();
    if n <= 1 {
        return 0.0;
    }
    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let normalize = |v: &mut [f64]| -> f64 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        norm
    };
    let apply = |v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = w.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };

    // Fixed, generic start vector so every eigen-direction is represented.
    let mut v: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5 + 1e-3 * i as f64)
        .collect();
    project(&mut v);
    if normalize(&mut v) == 0.0 {
        return 0.0;
    }
    let mut next = vec![0.0; n];
    let mut estimate = 0.0;
    let max_iters = 200_000;
    for _ in 0..max_iters {
        apply(&v, &mut next);
        project(&mut next);
        let norm = normalize(&mut next);
        if norm == 0.0 {
            return 0.0;
        }
        std::mem::swap(&mut v, &mut next);
        // ‖Bv‖ approaches the dominant modulus from below; stop once stable.
        if (norm - estimate).abs() <= tol * norm.max(1e-300) && norm >= estimate {
            return norm;
        }
        estimate = norm;
    }
    estimate
}

/// Source of one mixing matrix per round.
#[derive(Clone, Debug)]
pub enum MixingSchedule {
    /// Same matrix every round.
    Static(MixingMatrix),
    /// Fresh Erdős–Rényi graph with Metropolis weights each round.
    ResampledErdosRenyi {
        num_nodes: usize,
        p_edge: f64,
        seed: u64,
    },
}

impl MixingSchedule {
    pub fn num_nodes(&self) -> usize {
        match self {
            MixingSchedule::Static(w) => w.size(),
            MixingSchedule::ResampledErdosRenyi { num_nodes, .. } => *num_nodes,
        }
    }

    /// Matrix used in round `k` (0-based), validated.
    pub fn matrix(&self, round: usize) -> Result<MixingMatrix> {
        let w = match self {
            MixingSchedule::Static(w) => w.clone(),
            MixingSchedule::ResampledErdosRenyi {
                num_nodes,
                p_edge,
                seed,
            } => {
                let round_seed = seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                metropolis_weights(&erdos_renyi(*num_nodes, *p_edge, round_seed)?)
            }
        };
        w.validate(MIXING_TOL)?;
        Ok(w)
    }
}

/// `Σ_t ‖u_t − ū‖²`.
pub fn consensus_distance(values: &[Vec<f64>]) -> f64 {
    let t = values.len();
    if t == 0 {
        return 0.0;
    }
    let len = values[0].len();
    let mut mean = vec![0.0; len];
    for v in values {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    values
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum()
}
