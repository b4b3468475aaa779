//! End-to-end entry points behind the command line tool.
//!
//! Data directories hold one sub-directory per node (`node_000`, ...), each
//! with a `train.csv` of normal operation and, for evaluation, a labeled
//! `test.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::Serialize;

use crate::bilevel::{ClientData, ReKoModel};
use crate::bundle::ModelBundle;
use crate::config::FedConfig;
use crate::data::{
    self, dirichlet_partition, inject_anomalies, train_split_len, Dataset, LinearSystem,
    PartitionEntry, Standardizer,
};
use crate::detect::{self, EvalNode, EvalReport, NodePredictions, ThresholdMode};
use crate::federated::{self, ClientRegistry, RoundRecord, RoundSettings};
use crate::koopman::eig_unchecked;
use crate::par;
use crate::reservoir::ReservoirBank;
use crate::seed::{self, Stream};
use crate::{Error, Result};

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const PARTITION_MANIFEST: &str = "partition.json";

pub fn node_name(i: usize) -> String {
    format!("node_{i:03}")
}

fn ensure_empty_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::InvalidParameter(format!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub nodes: usize,
    pub len: usize,
    pub features: usize,
    pub rho_a: f64,
    pub noise_std: f64,
    pub anomaly_rate: f64,
    pub magnitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nodes: 4,
            len: 2000,
            features: 5,
            rho_a: 0.9,
            noise_std: 0.05,
            anomaly_rate: 0.05,
            magnitude: 8.0,
            seed: 0,
        }
    }
}

/// Train and test series of one synthetic node.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthNode {
    pub train: Dataset,
    pub test: Dataset,
}

/// Every node observes the same linear system. Each simulates one run of
/// `2 · len` steps: the first half is the clean training file, the second
/// half receives anomaly segments and becomes the test file.
pub fn gen_synth(spec: &SynthSpec) -> Result<Vec<SynthNode>> {
    if spec.nodes == 0 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    if spec.len < 2 {
        return Err(Error::InvalidParameter(format!(
            "series length must be at least 2, got {}",
            spec.len
        )));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise std must be non-negative, got {}",
            spec.noise_std
        )));
    }
    let mut rng = seed::rng(spec.seed, 0, 0, Stream::Synthetic);
    let system = LinearSystem::random(spec.features, spec.rho_a, &mut rng)?;
    let names: Vec<String> = (0..spec.features).map(|i| format!("x{i}")).collect();
    (0..spec.nodes)
        .map(|i| {
            let mut rng = seed::rng(spec.seed, 0, i as u64 + 1, Stream::Synthetic);
            let run = system.simulate(2 * spec.len, spec.noise_std, &mut rng);
            let train = run.slice(s![.., ..spec.len]).to_owned();
            let mut test = run.slice(s![.., spec.len..]).to_owned();
            let labels = inject_anomalies(&mut test, spec.anomaly_rate, spec.magnitude, &mut rng)?;
            Ok(SynthNode {
                train: Dataset::new(node_name(i), train, Some(vec![0; spec.len]))?
                    .with_feature_names(names.clone())?,
                test: Dataset::new(node_name(i), test, Some(labels))?
                    .with_feature_names(names.clone())?,
            })
        })
        .collect()
}

/// Writes `node_XXX/train.csv` and `node_XXX/test.csv` under `out`.
pub fn gen_synth_dir(out: impl AsRef<Path>, spec: &SynthSpec, force: bool) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    let nodes = gen_synth(spec)?;
    ensure_empty_dir(out, force)?;
    let mut written = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        let dir = out.join(node_name(i));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (file, d) in [(TRAIN_FILE, &node.train), (TEST_FILE, &node.test)] {
            let path = dir.join(file);
            data::write_csv(&path, d)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn has_label_column(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().next().unwrap_or_default();
    Ok(header.rsplit(',').next().map(str::trim) == Some(data::LABEL_COLUMN))
}

/// Splits one series into contiguous Dirichlet-sized blocks, written as
/// `node_XXX/train.csv` plus a `partition.json` manifest.
pub fn partition(
    input: impl AsRef<Path>,
    clients: usize,
    alpha: f64,
    seed: u64,
    out: impl AsRef<Path>,
    force: bool,
) -> Result<Vec<PartitionEntry>> {
    let input = input.as_ref();
    let out = out.as_ref();
    let dataset = data::load_csv(input, has_label_column(input)?)?;
    let ranges = dirichlet_partition(dataset.len(), clients, alpha, seed)?;
    if let Some(r) = ranges.iter().find(|r| r.len() < 2) {
        return Err(Error::InvalidParameter(format!(
            "partition block {r:?} has fewer than two steps; use fewer clients or a larger alpha"
        )));
    }
    ensure_empty_dir(out, force)?;
    for (i, r) in ranges.iter().enumerate() {
        let dir = out.join(node_name(i));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        data::write_csv(dir.join(TRAIN_FILE), &dataset.slice_steps(r.start, r.end)?)?;
    }
    let entries = PartitionEntry::from_ranges(&ranges);
    let path = out.join(PARTITION_MANIFEST);
    let text = serde_json::to_string_pretty(&entries).expect("entries serialize") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

/// Sorted node directories under `data_dir`.
pub fn node_dirs(data_dir: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let dir = data_dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(TRAIN_FILE).is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} contains no node directories with a {TRAIN_FILE}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Z-scores a training series with statistics from its training part.
pub fn fit_standardizer(train: &Dataset, cfg: &FedConfig) -> Result<Standardizer> {
    let train_len = train_split_len(train.len(), cfg.train_fraction)?;
    Standardizer::fit(&train.slice_steps(0, train_len)?, cfg.std_epsilon)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub bundle: ModelBundle,
    pub history: Vec<RoundRecord>,
}

/// Trains on in-memory training series, one per client.
pub fn train_datasets(cfg: &FedConfig, datasets: &[Dataset]) -> Result<Trained> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::InvalidParameter("no training data".into()));
    }
    if let Some(n) = cfg.n_clients {
        if n != datasets.len() {
            return Err(Error::InvalidParameter(format!(
                "config expects {n} clients, found {}",
                datasets.len()
            )));
        }
    }
    let n = datasets[0].n_features();
    if cfg.m <= n {
        log::warn!(
            "lifted dimension m={} does not exceed the {n} input features",
            cfg.m
        );
    }
    let mut bank = ReservoirBank::init(n, &cfg.reservoir, cfg.seed)?;
    bank.activation = cfg.activation.reservoir;
    let initial = ReKoModel::init(
        n,
        cfg.reservoir.d,
        cfg.m,
        cfg.activation.readout,
        cfg.rho_target,
        cfg.seed,
    )?;

    let work = || -> Result<Trained> {
        let clients: Vec<ClientData> = par::map_ordered_ref(
            &datasets.iter().enumerate().collect::<Vec<_>>(),
            |&(i, d)| {
                if d.n_features() != n {
                    return Err(Error::Shape(format!(
                        "{} has {} features, expected {n}",
                        d.name,
                        d.n_features()
                    )));
                }
                let st = fit_standardizer(d, cfg)?;
                let z = st.apply(d)?;
                ClientData::new(
                    i,
                    z.values,
                    &bank,
                    cfg.train_fraction,
                    cfg.s_fraction,
                    cfg.horizon,
                    cfg.washout,
                )
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
        let mut registry = ClientRegistry::new(bank.clone(), clients, &initial)?;
        let settings = RoundSettings::from_config(cfg);
        let server = federated::train(
            &mut registry,
            initial.clone(),
            cfg.rounds,
            cfg.beta,
            &settings,
        )?;
        Ok(Trained {
            bundle: ModelBundle {
                bank: registry.bank,
                model: server.model,
                config: cfg.clone(),
                rounds_completed: server.round,
            },
            history: server.history,
        })
    };
    if cfg.workers == 0 {
        work()
    } else {
        par::with_workers(cfg.workers, work)
    }
}

fn load_train_sets(data_dir: &Path) -> Result<Vec<Dataset>> {
    node_dirs(data_dir)?
        .into_iter()
        .map(|(name, dir)| {
            let mut d = data::load_csv(dir.join(TRAIN_FILE), false)?;
            d.name = name;
            Ok(d)
        })
        .collect()
}

/// Trains on `data_dir` and writes the bundle and `history.csv` into `out`.
pub fn train(
    cfg: &FedConfig,
    data_dir: impl AsRef<Path>,
    out: impl AsRef<Path>,
) -> Result<Trained> {
    let sets = load_train_sets(data_dir.as_ref())?;
    let trained = train_datasets(cfg, &sets)?;
    let out = out.as_ref();
    trained.bundle.save(out)?;
    federated::write_history(out.join(HISTORY_FILE), &trained.history)?;
    Ok(trained)
}

/// Standardizes one node's files with statistics of its training part.
pub fn eval_node(name: &str, train: &Dataset, test: &Dataset, cfg: &FedConfig) -> Result<EvalNode> {
    let labels = test
        .labels
        .clone()
        .ok_or_else(|| Error::InvalidParameter(format!("{name}: test data has no labels")))?;
    let st = fit_standardizer(train, cfg)?;
    Ok(EvalNode {
        name: name.to_string(),
        train: st.apply(train)?.values,
        train_len: train_split_len(train.len(), cfg.train_fraction)?,
        test: st.apply(test)?.values,
        labels,
    })
}

/// Scores every node of `data_dir` with a saved bundle.
pub fn eval(
    bundle: &ModelBundle,
    data_dir: impl AsRef<Path>,
    mode: ThresholdMode,
    horizon: usize,
) -> Result<(EvalReport, Vec<NodePredictions>)> {
    let cfg = &bundle.config;
    let nodes: Vec<EvalNode> = node_dirs(data_dir)?
        .into_iter()
        .map(|(name, dir)| {
            let train = data::load_csv(dir.join(TRAIN_FILE), false)?;
            let test = data::load_csv(dir.join(TEST_FILE), true)?;
            eval_node(&name, &train, &test, cfg)
        })
        .collect::<Result<_>>()?;
    detect::evaluate(
        &bundle.model,
        &bundle.bank,
        &nodes,
        mode,
        horizon,
        cfg.washout,
    )
}

/// Writes `report` to `path` and `scores_<node>.csv` next to it.
pub fn write_eval(
    path: impl AsRef<Path>,
    report: &EvalReport,
    preds: &[NodePredictions],
) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    for (node, p) in report.per_node.iter().zip(preds) {
        detect::write_scores_csv(dir.join(format!("scores_{}.csv", node.node)), p)?;
    }
    Ok(())
}

/// Summary printed by `inspect`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inspection {
    pub n_features: usize,
    pub reservoir_size: usize,
    pub lifted_dim: usize,
    pub param_count: usize,
    pub rounds_completed: usize,
    pub rho_k: f64,
    pub rho_target: f64,
    pub eig_residual: f64,
    pub eigenvalue_magnitudes: Vec<f64>,
}

pub fn inspect(bundle: &ModelBundle) -> Result<Inspection> {
    let m = &bundle.model;
    let sys = eig_unchecked(m.k.view())?;
    Ok(Inspection {
        n_features: m.n_features(),
        reservoir_size: m.reservoir_size(),
        lifted_dim: m.lifted_dim(),
        param_count: m.param_count(),
        rounds_completed: bundle.rounds_completed,
        rho_k: sys.spectral_radius(),
        rho_target: bundle.config.rho_target,
        eig_residual: sys.residual,
        eigenvalue_magnitudes: sys.lambdas.iter().map(|l| l.norm()).collect(),
    })
}

impl std::fmt::Display for Inspection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "features (n):        {}", self.n_features)?;
        writeln!(f, "reservoir size (d):  {}", self.reservoir_size)?;
        writeln!(f, "lifted dim (m):      {}", self.lifted_dim)?;
        writeln!(
            f,
            "W: {m}x{d}  K: {m}x{m}  V: {m}x{n}",
            m = self.lifted_dim,
            d = self.reservoir_size,
            n = self.n_features
        )?;
        writeln!(
            f,
            "trainable params:    {} (m*d + m^2 + m*n)",
            self.param_count
        )?;
        writeln!(f, "rounds completed:    {}", self.rounds_completed)?;
        writeln!(
            f,
            "rho(K):              {:.6} (target {})",
            self.rho_k, self.rho_target
        )?;
        writeln!(f, "eigen residual:      {:.3e}", self.eig_residual)?;
        let mags: Vec<String> = self
            .eigenvalue_magnitudes
            .iter()
            .map(|x| format!("{x:.4}"))
            .collect();
        writeln!(f, "|lambda|:            {}", mags.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            nodes: 2,
            len: 300,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn synth_is_deterministic_with_shared_system() {
        let a = gen_synth(&small_spec()).unwrap();
        let b = gen_synth(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].train.values, a[1].train.values);
        assert!(a[0].train.labels.as_ref().unwrap().iter().all(|&l| l == 0));
        assert!(a[0].test.labels.as_ref().unwrap().contains(&1));
    }

    #[test]
    fn zero_rate_has_no_anomalies() {
        let spec = SynthSpec {
            anomaly_rate: 0.0,
            ..small_spec()
        };
        for node in gen_synth(&spec).unwrap() {
            assert!(node.test.labels.unwrap().iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn synth_dir_refuses_non_empty_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            nodes: 1,
            ..small_spec()
        };
        let files = gen_synth_dir(dir.path(), &spec, false).unwrap();
        assert_eq!(files.len(), 2);
        let err = gen_synth_dir(dir.path(), &spec, false).unwrap_err();
        assert!(err.is_usage());
        gen_synth_dir(dir.path(), &spec, true).unwrap();
    }

    #[test]
    fn tiny_training_run() {
        let spec = small_spec();
        let nodes = gen_synth(&spec).unwrap();
        let cfg = FedConfig {
            rounds: 2,
            sample_rate: 1.0,
            m: 8,
            reservoir: crate::reservoir::ReservoirParams {
                d: 12,
                ..Default::default()
            },
            ..FedConfig::default()
        };
        let trains: Vec<Dataset> = nodes.iter().map(|n| n.train.clone()).collect();
        let trained = train_datasets(&cfg, &trains).unwrap();
        assert_eq!(trained.history.len(), 2);
        assert_eq!(trained.bundle.rounds_completed, 2);
        let evals: Vec<EvalNode> = nodes
            .iter()
            .map(|n| eval_node(&n.train.name, &n.train, &n.test, &cfg).unwrap())
            .collect();
        let (report, preds) = detect::evaluate(
            &trained.bundle.model,
            &trained.bundle.bank,
            &evals,
            ThresholdMode::BestF1,
            1,
            cfg.washout,
        )
        .unwrap();
        assert_eq!(report.per_node.len(), 2);
        assert_eq!(preds[0].scores.len(), 300);
    }
}
