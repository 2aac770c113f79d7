//! Config-driven front end: generate synthetic federations, train, and
//! personalize unseen clients, writing CSV outputs.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedmix::io::{csv_row, fmt_f64, load_federation, matrix_csv, parse_matrix_csv, save_federation};
use fedmix::metrics::{aligned_recovery, cluster_assignment_accuracy, MAX_PERMUTED_COMPONENTS};
use fedmix::synth::{generate, generate_with_unseen, GroundTruth, SyntheticConfig};
use fedmix::topology::{metropolis_weights, Graph, MixingMatrix};
use fedmix::train::{
    personalization_sweep, round_log_csv, train_dfedem, train_fedavg, train_fedem, train_local, DFedEmConfig,
    DecentralizedInit, FedAvgConfig, FedEmConfig, LocalConfig, RoundLog, SWEEP_FRACTIONS,
};
use fedmix::{ComponentBank, Federation, MixingSchedule};

pub use config::{Algorithm, ConfigError, DataSource, Init, RunConfig, Topology};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const THETA_FILE: &str = "theta_final.csv";
pub const PI_FILE: &str = "pi_final.csv";
pub const RECOVERY_FILE: &str = "recovery.csv";
pub const PERSONALIZE_FILE: &str = "personalize.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
/// Subdirectory of a generated dataset holding the unseen clients.
pub const UNSEEN_DIR: &str = "unseen";

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    RunConfig::parse(&text).with_context(|| format!("in config {}", path.display()))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.output_dir
        .as_deref()
        .context("config must set `output_dir`")
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the configured synthetic federation to `output_dir`, with unseen
/// clients (if any) under `output_dir/unseen`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let out = output_dir(cfg)?;
    let Some(DataSource::Synthetic { cfg: synth, unseen_clients }) = &cfg.data else {
        bail!("`generate` needs `synthetic.*` settings in the config");
    };
    let (fed, unseen, truth) = synthesize(synth, *unseen_clients)?;
    save_federation(&fed, Some(&truth), out)?;
    if let Some(unseen) = unseen {
        save_federation(&unseen, None, &out.join(UNSEEN_DIR))?;
    }
    Ok(out.to_path_buf())
}

fn synthesize(cfg: &SyntheticConfig, unseen_clients: usize) -> Result<(Federation, Option<Federation>, GroundTruth)> {
    if unseen_clients == 0 {
        let (fed, truth) = generate(cfg)?;
        return Ok((fed, None, truth));
    }
    let (fed, unseen, truth) = generate_with_unseen(cfg, unseen_clients)?;
    Ok((fed, Some(unseen), truth))
}

fn load_data(cfg: &RunConfig) -> Result<(Federation, Option<GroundTruth>)> {
    match &cfg.data {
        Some(DataSource::Dir(dir)) => {
            load_federation(dir).with_context(|| format!("loading federation from {}", dir.display()))
        }
        Some(DataSource::Synthetic { cfg: synth, unseen_clients }) => {
            let (fed, _, truth) = synthesize(synth, *unseen_clients)?;
            Ok((fed, Some(truth)))
        }
        None => bail!("config must set `data_dir` or `synthetic.*` keys"),
    }
}

fn mixing_schedule(topology: Topology, num_clients: usize, seed: u64) -> Result<MixingSchedule> {
    let w = match topology {
        Topology::Complete => MixingMatrix::uniform(num_clients),
        Topology::Identity => MixingMatrix::identity(num_clients),
        Topology::Ring => metropolis_weights(&Graph::ring(num_clients)),
        Topology::ErdosRenyi { p_edge } => {
            return Ok(MixingSchedule::ResampledErdosRenyi {
                num_nodes: num_clients,
                p_edge,
                seed,
            })
        }
    };
    Ok(MixingSchedule::Static(w))
}

/// Final parameters of any algorithm, as written to disk.
pub struct TrainOutput {
    pub log: Vec<RoundLog>,
    /// One row per component, or per client for local-only training.
    pub theta: Vec<Vec<f64>>,
    /// One row per client.
    pub pi: Vec<Vec<f64>>,
}

pub fn run_training(cfg: &RunConfig, fed: &Federation) -> Result<TrainOutput> {
    let t = fed.num_clients();
    let degenerate_pi = || vec![vec![1.0]; t];
    let pis_of = |pis: Vec<fedmix::MixtureRow>| pis.into_iter().map(|p| p.into_vec()).collect();
    let out = match cfg.algorithm {
        Algorithm::FedEm => {
            let run = train_fedem(
                fed,
                &FedEmConfig {
                    num_components: cfg.components,
                    rounds: cfg.rounds,
                    solver: cfg.solver.clone(),
                    sample_rate: cfg.sample_rate,
                },
            )?;
            TrainOutput {
                log: run.log,
                theta: run.bank.components().to_vec(),
                pi: pis_of(run.pis),
            }
        }
        Algorithm::DFedEm => {
            let schedule = mixing_schedule(cfg.topology, t, cfg.solver.seed)?;
            let init = match cfg.init {
                Init::Independent => DecentralizedInit::Independent,
                Init::Shared => DecentralizedInit::Shared,
            };
            let run = train_dfedem(
                fed,
                &DFedEmConfig {
                    num_components: cfg.components,
                    rounds: cfg.rounds,
                    solver: cfg.solver.clone(),
                    init,
                },
                &schedule,
            )?;
            let mean: ComponentBank = run.mean_bank()?;
            TrainOutput {
                log: run.log,
                theta: mean.components().to_vec(),
                pi: pis_of(run.pis),
            }
        }
        Algorithm::FedAvg => {
            let run = train_fedavg(
                fed,
                &FedAvgConfig {
                    rounds: cfg.rounds,
                    solver: cfg.solver.clone(),
                    sample_rate: cfg.sample_rate,
                },
            )?;
            TrainOutput {
                log: run.log,
                theta: vec![run.model.theta],
                pi: degenerate_pi(),
            }
        }
        Algorithm::Local => {
            let run = train_local(
                fed,
                &LocalConfig {
                    rounds: cfg.rounds,
                    solver: cfg.solver.clone(),
                },
            )?;
            TrainOutput {
                log: run.log,
                theta: run.models.into_iter().map(|m| m.theta).collect(),
                pi: degenerate_pi(),
            }
        }
    };
    Ok(out)
}

fn recovery_csv(out: &TrainOutput, truth: &GroundTruth) -> Result<Option<String>> {
    let m = truth.theta_star.len();
    if out.theta.len() != m || m > MAX_PERMUTED_COMPONENTS || out.pi.first().map_or(0, Vec::len) != m {
        return Ok(None);
    }
    let rec = aligned_recovery(&out.theta, &out.pi, &truth.theta_star, &truth.pi_star)?;
    let rows: Vec<fedmix::MixtureRow> = out
        .pi
        .iter()
        .map(|p| fedmix::MixtureRow::new(p.clone()))
        .collect::<fedmix::Result<_>>()?;
    let clusters = cluster_assignment_accuracy(&rows, &truth.cluster_labels())?;
    let mut text = String::from("metric,value\n");
    let _ = writeln!(text, "theta_cosine_distance,{}", fmt_f64(rec.theta_distance));
    let _ = writeln!(text, "pi_cosine_distance,{}", fmt_f64(rec.pi_distance));
    let _ = writeln!(text, "cluster_accuracy,{}", fmt_f64(clusters));
    let perm: Vec<String> = rec.permutation.iter().map(usize::to_string).collect();
    let _ = writeln!(text, "permutation,{}", perm.join(" "));
    Ok(Some(text))
}

/// Trains the configured algorithm and writes its outputs. Returns the
/// paths written.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out_dir = output_dir(cfg)?;
    let (fed, truth) = load_data(cfg)?;
    let out = run_training(cfg, &fed)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut written = Vec::new();
    let mut emit = |name: &str, text: &str| -> Result<()> {
        let path = out_dir.join(name);
        write(&path, text)?;
        written.push(path);
        Ok(())
    };
    emit(ROUNDS_FILE, &round_log_csv(&out.log))?;
    emit(THETA_FILE, &matrix_csv(&out.theta))?;
    emit(PI_FILE, &matrix_csv(&out.pi))?;
    let mixture = matches!(cfg.algorithm, Algorithm::FedEm | Algorithm::DFedEm);
    if let (Some(truth), true) = (&truth, mixture) {
        if let Some(text) = recovery_csv(&out, truth)? {
            emit(RECOVERY_FILE, &text)?;
        }
    }
    Ok(written)
}

/// Personalizes the clients in `clients_dir` against the components in
/// `theta_path`, writing per-client mixtures and the local-fraction sweep.
pub fn cmd_personalize(cfg: &RunConfig, theta_path: &Path, clients_dir: &Path) -> Result<Vec<PathBuf>> {
    let out_dir = output_dir(cfg)?;
    let text = fs::read_to_string(theta_path).with_context(|| format!("reading {}", theta_path.display()))?;
    let theta = parse_matrix_csv(&text).with_context(|| format!("parsing {}", theta_path.display()))?;
    let (fed, _) =
        load_federation(clients_dir).with_context(|| format!("loading clients from {}", clients_dir.display()))?;
    let bank = ComponentBank::new(fed.loss, fed.dim, theta)
        .with_context(|| format!("components in {} do not fit the clients", theta_path.display()))?;

    let sweep = personalization_sweep(&bank, &fed, &SWEEP_FRACTIONS)?;
    let full = sweep.last().expect("sweep ends at the full fraction");
    let report = fedmix::metrics::mixture_accuracy(
        fedmix::metrics::Banks::Shared(&bank),
        &full.pis,
        &fed,
        fedmix::Split::Test,
    )?;

    let m = bank.num_components();
    let mut per_client = String::from("client");
    for k in 0..m {
        let _ = write!(per_client, ",pi_{k}");
    }
    per_client.push_str(",test_accuracy\n");
    for (t, (pi, acc)) in full.pis.iter().zip(&report.per_client_accuracy).enumerate() {
        let _ = writeln!(per_client, "{t},{},{}", csv_row(pi.as_slice()), fmt_f64(*acc));
    }
    let mut sweep_text = String::from("fraction,accuracy\n");
    for p in &sweep {
        let _ = writeln!(sweep_text, "{},{}", fmt_f64(p.fraction), fmt_f64(p.accuracy));
    }

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let a = out_dir.join(PERSONALIZE_FILE);
    let b = out_dir.join(SWEEP_FILE);
    write(&a, &per_client)?;
    write(&b, &sweep_text)?;
    Ok(vec![a, b])
}
