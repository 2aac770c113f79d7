//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Synthetic-data settings use the `synthetic.` prefix.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use fedmix::synth::{LabelMode, SyntheticConfig};
use fedmix::{LrSchedule, SolverConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`: {reason}")]
    Value {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Inconsistent(String),
}

const KEYS: &[&str] = &[
    "algorithm",
    "components",
    "rounds",
    "local_steps",
    "batch_size",
    "learning_rate",
    "lr_a0",
    "sample_rate",
    "topology",
    "init",
    "seed",
    "data_dir",
    "output_dir",
    "synthetic.clients",
    "synthetic.components",
    "synthetic.dim",
    "synthetic.alpha",
    "synthetic.label_mode",
    "synthetic.noise",
    "synthetic.seed",
    "synthetic.unseen_clients",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    FedEm,
    DFedEm,
    FedAvg,
    Local,
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fedem" => Ok(Algorithm::FedEm),
            "dfedem" => Ok(Algorithm::DFedEm),
            "fedavg" => Ok(Algorithm::FedAvg),
            "local" => Ok(Algorithm::Local),
            _ => Err("expected fedem, dfedem, fedavg or local".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Topology {
    Complete,
    Ring,
    Identity,
    ErdosRenyi { p_edge: f64 },
}

impl FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "complete" => return Ok(Topology::Complete),
            "ring" => return Ok(Topology::Ring),
            "identity" => return Ok(Topology::Identity),
            _ => {}
        }
        let p = s
            .strip_prefix("erdos_renyi:")
            .or_else(|| s.strip_prefix("erdos_renyi(").and_then(|r| r.strip_suffix(')')))
            .ok_or("expected complete, ring, identity or erdos_renyi:<p>")?;
        let p_edge: f64 = p.trim().parse().map_err(|_| format!("bad edge probability `{p}`"))?;
        if !(0.0..=1.0).contains(&p_edge) {
            return Err(format!("edge probability {p_edge} not in [0, 1]"));
        }
        Ok(Topology::ErdosRenyi { p_edge })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Independent,
    Shared,
}

impl FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "independent" => Ok(Init::Independent),
            "shared" => Ok(Init::Shared),
            _ => Err("expected independent or shared".into()),
        }
    }
}

/// Where the federation comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Synthetic {
        cfg: SyntheticConfig,
        unseen_clients: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub components: usize,
    pub rounds: usize,
    pub solver: SolverConfig,
    pub sample_rate: f64,
    pub topology: Topology,
    pub init: Init,
    pub data: Option<DataSource>,
    pub output_dir: Option<PathBuf>,
}

struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if map.insert(key.clone(), (line, v.trim().to_string())).is_some() {
                return Err(ConfigError::Duplicate { line, key });
            }
        }
        Ok(Entries(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: ToString,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                line: *line,
                key: key.to_string(),
                value: value.clone(),
                reason: e.to_string(),
            }),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn invalid(&self, key: &str, reason: &str) -> ConfigError {
        let (line, value) = self.0.get(key).cloned().unwrap_or_default();
        ConfigError::Value {
            line,
            key: key.to_string(),
            value,
            reason: reason.to_string(),
        }
    }
}

fn parse_label_mode(s: &str) -> Result<LabelMode, String> {
    match s {
        "mixture" => Ok(LabelMode::Mixture),
        "hard_cluster" => Ok(LabelMode::HardCluster),
        _ => Err("expected mixture or hard_cluster".into()),
    }
}

impl RunConfig {
    /// Parses and validates a configuration file's contents.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let e = Entries::parse(text)?;
        let algorithm = e.get::<Algorithm>("algorithm")?.unwrap_or(Algorithm::FedEm);
        let seed = e.get::<u64>("seed")?.unwrap_or(0);

        let components = match (algorithm, e.get::<usize>("components")?) {
            (Algorithm::FedAvg | Algorithm::Local, Some(m)) if m != 1 => {
                return Err(e.invalid("components", "fedavg and local train a single model"))
            }
            (_, Some(0)) => return Err(e.invalid("components", "must be at least 1")),
            (_, Some(m)) => m,
            (_, None) => 1,
        };
        let rounds = e.get::<usize>("rounds")?.unwrap_or(0);
        let local_steps = e.get::<usize>("local_steps")?.unwrap_or(1);
        let batch_size = e.get::<usize>("batch_size")?.unwrap_or(32);
        if batch_size == 0 {
            return Err(e.invalid("batch_size", "must be positive"));
        }
        let (learning_rate, schedule) = match (e.get::<f64>("learning_rate")?, e.get::<f64>("lr_a0")?) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Inconsistent(
                    "set either `learning_rate` or `lr_a0`, not both".into(),
                ))
            }
            (Some(lr), None) => (lr, LrSchedule::Constant),
            (None, Some(a0)) => (a0, LrSchedule::InverseSqrtRounds),
            (None, None) => (0.1, LrSchedule::Constant),
        };
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            let key = if e.has("lr_a0") { "lr_a0" } else { "learning_rate" };
            return Err(e.invalid(key, "must be positive and finite"));
        }
        let solver = SolverConfig {
            local_steps,
            batch_size,
            learning_rate,
            schedule,
            seed,
        };

        let sample_rate = e.get::<f64>("sample_rate")?.unwrap_or(1.0);
        if !(sample_rate > 0.0 && sample_rate <= 1.0) {
            return Err(e.invalid("sample_rate", "must be in (0, 1]"));
        }
        if sample_rate < 1.0 && matches!(algorithm, Algorithm::DFedEm | Algorithm::Local) {
            return Err(e.invalid("sample_rate", "client sampling applies to fedem and fedavg only"));
        }
        if algorithm != Algorithm::DFedEm {
            for key in ["topology", "init"] {
                if e.has(key) {
                    return Err(e.invalid(key, "only used by dfedem"));
                }
            }
        }
        let topology = e.get::<Topology>("topology")?.unwrap_or(Topology::Complete);
        let init = e.get::<Init>("init")?.unwrap_or(Init::Independent);

        let synthetic_keys: Vec<&str> = KEYS.iter().copied().filter(|k| k.starts_with("synthetic.")).collect();
        let any_synthetic = synthetic_keys.iter().any(|k| e.has(k));
        let data = match (e.get::<PathBuf>("data_dir")?, any_synthetic) {
            (Some(_), true) => {
                return Err(ConfigError::Inconsistent(
                    "`data_dir` and `synthetic.*` keys are mutually exclusive".into(),
                ))
            }
            (Some(dir), false) => Some(DataSource::Dir(dir)),
            (None, true) => {
                let clients = e.get::<usize>("synthetic.clients")?.ok_or(ConfigError::Missing("synthetic.clients"))?;
                let m = e.get::<usize>("synthetic.components")?.ok_or(ConfigError::Missing("synthetic.components"))?;
                let dim = e.get::<usize>("synthetic.dim")?.ok_or(ConfigError::Missing("synthetic.dim"))?;
                let alpha = e.get::<f64>("synthetic.alpha")?.unwrap_or(0.4);
                let mut cfg = SyntheticConfig::new(clients, m, dim, alpha, e.get::<u64>("synthetic.seed")?.unwrap_or(seed));
                if let Some(mode) = e.0.get("synthetic.label_mode") {
                    cfg.label_mode = parse_label_mode(&mode.1)
                        .map_err(|r| e.invalid("synthetic.label_mode", &r))?;
                }
                cfg.noise = e.get::<bool>("synthetic.noise")?.unwrap_or(true);
                cfg.validate()
                    .map_err(|err| ConfigError::Inconsistent(format!("synthetic settings: {err}")))?;
                let unseen_clients = e.get::<usize>("synthetic.unseen_clients")?.unwrap_or(0);
                Some(DataSource::Synthetic { cfg, unseen_clients })
            }
            (None, false) => None,
        };

        Ok(RunConfig {
            algorithm,
            components,
            rounds,
            solver,
            sample_rate,
            topology,
            init,
            data,
            output_dir: e.get::<PathBuf>("output_dir")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let cfg = RunConfig::parse(
            "# demo\nalgorithm = dfedem\ncomponents = 3\nrounds = 10\nlocal_steps = 2\nbatch_size = 16\n\
             lr_a0 = 0.5\ntopology = erdos_renyi:0.3\nseed = 4\noutput_dir = out\n\
             synthetic.clients = 5\nsynthetic.components = 3\nsynthetic.dim = 4\nsynthetic.label_mode = hard_cluster\n",
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::DFedEm);
        assert_eq!(cfg.topology, Topology::ErdosRenyi { p_edge: 0.3 });
        assert_eq!(cfg.solver.schedule, LrSchedule::InverseSqrtRounds);
        assert_eq!(cfg.solver.seed, 4);
        match cfg.data {
            Some(DataSource::Synthetic { cfg, unseen_clients }) => {
                assert_eq!(cfg.seed, 4);
                assert_eq!(cfg.label_mode, LabelMode::HardCluster);
                assert_eq!(unseen_clients, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_line_and_key() {
        let err = RunConfig::parse("rounds = 3\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "learning_rat".into()
            }
        );
        let msg = RunConfig::parse("rounds = three\n").unwrap_err().to_string();
        assert!(msg.contains("line 1") && msg.contains("rounds"), "{msg}");
        assert!(RunConfig::parse("rounds\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn rejects_inconsistent_settings() {
        assert!(RunConfig::parse("algorithm = fedem\ntopology = ring\n").is_err());
        assert!(RunConfig::parse("algorithm = fedavg\ncomponents = 2\n").is_err());
        assert!(RunConfig::parse("learning_rate = 0.1\nlr_a0 = 1\n").is_err());
        assert!(RunConfig::parse("data_dir = d\nsynthetic.dim = 2\n").is_err());
        assert!(RunConfig::parse("synthetic.clients = 2\n").is_err());
        assert!(RunConfig::parse("sample_rate = 0\n").is_err());
        assert!(RunConfig::parse("topology = erdos_renyi:1.5\nalgorithm = dfedem\n").is_err());
    }

    #[test]
    fn topology_spellings() {
        assert_eq!("erdos_renyi(0.5)".parse::<Topology>(), Ok(Topology::ErdosRenyi { p_edge: 0.5 }));
        assert_eq!("ring".parse::<Topology>(), Ok(Topology::Ring));
        assert!("star".parse::<Topology>().is_err());
    }
}
