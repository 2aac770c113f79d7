//! On-disk federation format.
//!
//! A federation directory holds:
//! - `manifest.txt`: `key = value` lines with `clients`, `dim`, `loss`, an
//!   optional `components`, and one `client_<t> = train:<ranges> test:<ranges>`
//!   line per client, where `<ranges>` is a comma-separated list of row
//!   indices or `a-b` inclusive ranges;
//! - `client_<t>.csv`: a `label,feat_1,…,feat_d` header, then one sample per row;
//! - `truth_theta.csv` / `truth_pi.csv` for synthetic federations.
//!
//! Numbers are written with 17 significant digits so a load reproduces the
//! saved values exactly. All files are UTF-8 with LF line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{ClientDataset, Federation};
use crate::error::{FedError, Result};
use crate::model::{LossKind, Sample};
use crate::synth::GroundTruth;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRUTH_THETA_FILE: &str = "truth_theta.csv";
pub const TRUTH_PI_FILE: &str = "truth_pi.csv";

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV row of numbers.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

pub fn matrix_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

fn parse_number(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| FedError::input(format!("line {line}: bad number `{}`", field.trim())))?;
    if !v.is_finite() {
        return Err(FedError::input(format!("line {line}: non-finite number")));
    }
    Ok(v)
}

/// Parses a headerless numeric CSV with rows of equal length.
pub fn parse_matrix_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate().map(|(n, l)| (n + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| parse_number(f, n))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(FedError::input(format!(
                    "line {n}: expected {} columns, got {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn client_header(dim: usize) -> String {
    let mut h = String::from("label");
    for j in 1..=dim {
        let _ = write!(h, ",feat_{j}");
    }
    h
}

/// Rows of one client file; `dim` features follow the label on each row.
pub fn parse_client_csv(text: &str, dim: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().map(|(n, l)| (n + 1, l.trim())) {
        if line.is_empty() || (n == 1 && line.starts_with("label")) {
            continue;
        }
        let mut fields = line.split(',');
        let y = parse_number(fields.next().unwrap_or(""), n)?;
        let x = fields.map(|f| parse_number(f, n)).collect::<Result<Vec<_>>>()?;
        if x.len() != dim {
            return Err(FedError::input(format!(
                "line {n}: expected {dim} features, got {}",
                x.len()
            )));
        }
        out.push(Sample::new(x, y));
    }
    Ok(out)
}

/// Contents of `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub clients: usize,
    pub dim: usize,
    pub components: Option<usize>,
    pub loss: LossKind,
    /// Train and test row indices of each client file.
    pub splits: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Upper bound on any index or count in a manifest, to keep corrupt files
/// from requesting huge allocations.
const MAX_MANIFEST_INDEX: usize = 1 << 28;

fn format_ranges(idx: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let start = idx[i];
        let mut end = start;
        while i + 1 < idx.len() && idx[i + 1] == end + 1 {
            i += 1;
            end += 1;
        }
        parts.push(if start == end {
            start.to_string()
        } else {
            format!("{start}-{end}")
        });
        i += 1;
    }
    parts.join(",")
}

fn parse_ranges(text: &str, line: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| -> Result<usize> {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| FedError::input(format!("line {line}: bad index `{s}`")))?;
            if v > MAX_MANIFEST_INDEX {
                return Err(FedError::input(format!("line {line}: index {v} too large")));
            }
            Ok(v)
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if b < a {
                    return Err(FedError::input(format!("line {line}: empty range `{part}`")));
                }
                if out.len() + (b - a) > MAX_MANIFEST_INDEX {
                    return Err(FedError::input(format!("line {line}: too many indices")));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "clients = {}", self.clients);
        let _ = writeln!(out, "dim = {}", self.dim);
        if let Some(m) = self.components {
            let _ = writeln!(out, "components = {m}");
        }
        let _ = writeln!(out, "loss = {}", self.loss);
        for (t, (train, test)) in self.splits.iter().enumerate() {
            let _ = writeln!(
                out,
                "client_{t} = train:{} test:{}",
                format_ranges(train),
                format_ranges(test)
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate().map(|(n, l)| (n + 1, l)) {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FedError::input(format!("line {n}: expected `key = value`")))?;
            let k = k.trim().to_string();
            if values.insert(k.clone(), (n, v.trim().to_string())).is_some() {
                return Err(FedError::input(format!("line {n}: duplicate key `{k}`")));
            }
        }
        let take_usize = |values: &mut BTreeMap<String, (usize, String)>, key: &str| -> Result<Option<usize>> {
            match values.remove(key) {
                None => Ok(None),
                Some((n, v)) => {
                    let x: usize = v
                        .parse()
                        .map_err(|_| FedError::input(format!("line {n}: `{key}` must be an integer")))?;
                    if x > MAX_MANIFEST_INDEX {
                        return Err(FedError::input(format!("line {n}: `{key}` too large")));
                    }
                    Ok(Some(x))
                }
            }
        };
        let clients = take_usize(&mut values, "clients")?
            .ok_or_else(|| FedError::input("missing key `clients`"))?;
        let dim = take_usize(&mut values, "dim")?.ok_or_else(|| FedError::input("missing key `dim`"))?;
        let components = take_usize(&mut values, "components")?;
        let loss = match values.remove("loss") {
            Some((n, v)) => v
                .parse::<LossKind>()
                .map_err(|e| FedError::input(format!("line {n}: {e}")))?,
            None => return Err(FedError::input("missing key `loss`")),
        };
        let mut splits = Vec::with_capacity(clients.min(1 << 16));
        for t in 0..clients {
            let key = format!("client_{t}");
            let (n, v) = values
                .remove(&key)
                .ok_or_else(|| FedError::input(format!("missing key `{key}`")))?;
            let mut train = None;
            let mut test = None;
            for part in v.split_whitespace() {
                match part.split_once(':') {
                    Some(("train", r)) if train.is_none() => train = Some(parse_ranges(r, n)?),
                    Some(("test", r)) if test.is_none() => test = Some(parse_ranges(r, n)?),
                    _ => return Err(FedError::input(format!("line {n}: bad split `{part}`"))),
                }
            }
            splits.push((train.unwrap_or_default(), test.unwrap_or_default()));
        }
        if let Some((key, (n, _))) = values.into_iter().next() {
            return Err(FedError::input(format!("line {n}: unknown key `{key}`")));
        }
        Ok(Manifest {
            clients,
            dim,
            components,
            loss,
            splits,
        })
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| FedError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FedError::io(path, e))
}

/// Writes a federation (and its planted parameters, if any) to `dir`.
pub fn save_federation(fed: &Federation, truth: Option<&GroundTruth>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedError::io(dir, e))?;
    let mut splits = Vec::with_capacity(fed.num_clients());
    for (t, client) in fed.clients.iter().enumerate() {
        let mut text = client_header(fed.dim);
        text.push('\n');
        for s in client.train.iter().chain(&client.test) {
            let _ = writeln!(text, "{},{}", fmt_f64(s.y), csv_row(&s.x));
        }
        write_file(&dir.join(format!("client_{t}.csv")), &text)?;
        let n_train = client.train.len();
        splits.push((
            (0..n_train).collect(),
            (n_train..n_train + client.test.len()).collect(),
        ));
    }
    let manifest = Manifest {
        clients: fed.num_clients(),
        dim: fed.dim,
        components: truth.map(|t| t.theta_star.len()),
        loss: fed.loss,
        splits,
    };
    write_file(&dir.join(MANIFEST_FILE), &manifest.render())?;
    if let Some(truth) = truth {
        write_file(&dir.join(TRUTH_THETA_FILE), &matrix_csv(&truth.theta_star))?;
        write_file(&dir.join(TRUTH_PI_FILE), &matrix_csv(&truth.pi_star))?;
    }
    Ok(())
}

fn count_client_files(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| FedError::io(dir, e))?;
    let mut count = 0;
    for entry in entries {
        let entry = entry.map_err(|e| FedError::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name.strip_prefix("client_").and_then(|r| r.strip_suffix(".csv")) {
            if idx.parse::<usize>().is_ok() {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Loads a federation written by [`save_federation`], along with planted
/// parameters when both truth files are present.
pub fn load_federation(dir: &Path) -> Result<(Federation, Option<GroundTruth>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = Manifest::parse(&read_file(&manifest_path)?)
        .map_err(|e| FedError::parse(&manifest_path, e.to_string()))?;
    let files = count_client_files(dir)?;
    if files != manifest.clients {
        return Err(FedError::parse(
            &manifest_path,
            format!("manifest lists {} clients but {files} client files exist", manifest.clients),
        ));
    }
    let mut clients = Vec::with_capacity(manifest.clients);
    for (t, (train_idx, test_idx)) in manifest.splits.iter().enumerate() {
        let path = dir.join(format!("client_{t}.csv"));
        let rows = parse_client_csv(&read_file(&path)?, manifest.dim)
            .map_err(|e| FedError::parse(&path, e.to_string()))?;
        let mut used = vec![false; rows.len()];
        let mut pick = |idx: &[usize]| -> Result<Vec<Sample>> {
            idx.iter()
                .map(|&i| {
                    if i >= rows.len() || used[i] {
                        return Err(FedError::parse(
                            &manifest_path,
                            format!("client_{t}: row {i} missing or listed twice"),
                        ));
                    }
                    used[i] = true;
                    Ok(rows[i].clone())
                })
                .collect()
        };
        let train = pick(train_idx)?;
        let test = pick(test_idx)?;
        clients.push(ClientDataset::new(train, test));
    }
    let fed = Federation::new(clients, manifest.loss, manifest.dim)
        .map_err(|e| FedError::parse(dir, e.to_string()))?;

    let theta_path = dir.join(TRUTH_THETA_FILE);
    let pi_path = dir.join(TRUTH_PI_FILE);
    let truth = if theta_path.exists() && pi_path.exists() {
        let theta_star = parse_matrix_csv(&read_file(&theta_path)?)
            .map_err(|e| FedError::parse(&theta_path, e.to_string()))?;
        let pi_star = parse_matrix_csv(&read_file(&pi_path)?)
            .map_err(|e| FedError::parse(&pi_path, e.to_string()))?;
        if pi_star.len() != fed.num_clients() {
            return Err(FedError::parse(&pi_path, "one row per client expected"));
        }
        Some(GroundTruth { theta_star, pi_star })
    } else {
        None
    };
    Ok((fed, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranges_round_trip() {
        let idx = vec![0, 1, 2, 5, 7, 8];
        assert_eq!(format_ranges(&idx), "0-2,5,7-8");
        assert_eq!(parse_ranges("0-2,5,7-8", 1).unwrap(), idx);
        assert_eq!(parse_ranges("", 1).unwrap(), Vec::<usize>::new());
        assert!(parse_ranges("3-1", 1).is_err());
        assert!(parse_ranges("a", 1).is_err());
    }

    #[test]
    fn manifest_errors_name_keys() {
        let err = Manifest::parse("clients = 1\ndim = 2\nloss = logistic\nclient_0 = train:0 test:\nfoo = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("foo"), "{err}");
        let err = Manifest::parse("clients = 2\ndim = 2\nloss = logistic\nclient_0 = train:0 test:\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("client_1"), "{err}");
        assert!(Manifest::parse("clients = 1\nclients = 1\n").is_err());
        assert!(Manifest::parse("dim = 2\n").is_err());
    }

    #[test]
    fn client_csv_checks_width() {
        assert_eq!(
            parse_client_csv("label,feat_1\n1,0.5\n0,-2\n", 1).unwrap(),
            vec![Sample::new(vec![0.5], 1.0), Sample::new(vec![-2.0], 0.0)]
        );
        assert!(parse_client_csv("1,0.5,0.3\n", 1).is_err());
        assert!(parse_client_csv("1,nan\n", 1).is_err());
    }

    #[test]
    fn matrix_csv_checks_width() {
        assert_eq!(parse_matrix_csv("1,2\n3,4\n").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
    }

    proptest! {
        #[test]
        fn numbers_survive_text(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
            let back: f64 = fmt_f64(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
