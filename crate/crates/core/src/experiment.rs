//! Experiment specification and the `train` driver.
//!
//! A spec is a flat set of `key = value` settings. Values come from built-in
//! defaults, then an optional config file, then command-line flags. The fully
//! resolved set is written next to the results and reproduces the run when fed
//! back as a config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cell::{EurnnCell, Model, VanillaCell};
use crate::error::{EunnError, Result};
use crate::formats::write_checkpoint;
use crate::optim::{train_with, MetricRecord, RmsPropConfig, TrainConfig, TrainOutcome, METRICS_HEADER};
use crate::tasks::{memoryless_baseline, mnist_load, CopyTask, CopyTaskConfig, MnistConfig, TaskSource};
use crate::unitary::MeshStyle;
use crate::Rng;

/// Default data directory when `data_dir` is not set.
pub const DATA_DIR_ENV: &str = "EUNN_DATA_DIR";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Mnist,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::Mnist => "mnist",
        })
    }
}

impl FromStr for TaskKind {
    type Err = EunnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "mnist" => Ok(TaskKind::Mnist),
            _ => Err(EunnError::Config(format!("unknown task `{s}` (expected copy or mnist)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    EurnnTunable,
    EurnnFft,
    Vanilla,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::EurnnTunable => "eurnn-tunable",
            ModelKind::EurnnFft => "eurnn-fft",
            ModelKind::Vanilla => "vanilla",
        })
    }
}

impl FromStr for ModelKind {
    type Err = EunnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eurnn-tunable" => Ok(ModelKind::EurnnTunable),
            "eurnn-fft" => Ok(ModelKind::EurnnFft),
            "vanilla" => Ok(ModelKind::Vanilla),
            _ => Err(EunnError::Config(format!(
                "unknown model `{s}` (expected eurnn-tunable, eurnn-fft or vanilla)"
            ))),
        }
    }
}

/// Every setting of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub task: TaskKind,
    pub model: ModelKind,
    pub n_hidden: usize,
    /// Tunable layers; ignored by the fft and vanilla models.
    pub capacity: usize,
    pub spectral_radius: f64,
    pub n_symbols: usize,
    pub m_len: usize,
    pub t_delay: usize,
    pub data_dir: PathBuf,
    pub train_size: usize,
    /// Copy: validation batch size. MNIST: images held out from the end of
    /// the training file.
    pub val_size: usize,
    pub downsample: usize,
    pub perm_seed: u64,
    pub train: TrainConfig,
}

/// Keys accepted in config files, in the order they are written out.
pub const KEYS: &[&str] = &[
    "task",
    "model",
    "n_hidden",
    "capacity",
    "spectral_radius",
    "n_symbols",
    "m_len",
    "t_delay",
    "data_dir",
    "train_size",
    "val_size",
    "downsample",
    "perm_seed",
    "iters",
    "batch_size",
    "eval_interval",
    "seed",
    "lr",
    "decay",
    "momentum",
    "epsilon",
    "clip_norm",
    "wall_clock",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| EunnError::Parse {
            path: source.to_string(),
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        let k = k.trim().replace('-', "_");
        if !KEYS.contains(&k.as_str()) {
            return Err(EunnError::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("unknown key `{k}`"),
            });
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| EunnError::Config(format!("invalid value `{v}` for `{key}`")))
}

fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from)
}

impl ExperimentSpec {
    /// Resolves settings applied in order (later pairs win) over defaults.
    /// Defaults that depend on the task and model are filled in after all
    /// pairs are read.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in pairs {
            let k = KEYS
                .iter()
                .find(|key| **key == k.replace('-', "_"))
                .ok_or_else(|| EunnError::Config(format!("unknown setting `{k}`")))?;
            map.insert(k, v.as_str());
        }
        let get = |k: &str| map.get(k).copied();
        let task: TaskKind = get("task").map_or(Ok(TaskKind::Copy), str::parse)?;
        let model: ModelKind = get("model").map_or(Ok(ModelKind::EurnnTunable), str::parse)?;
        let num = |k: &str, default: usize| -> Result<usize> { get(k).map_or(Ok(default), |v| parse_value(k, v)) };
        let real = |k: &str, default: f64| -> Result<f64> { get(k).map_or(Ok(default), |v| parse_value(k, v)) };
        let is_copy = task == TaskKind::Copy;
        let eurnn = model != ModelKind::Vanilla;
        let clip_norm = match get("clip_norm") {
            None | Some("none") => None,
            Some(v) => Some(parse_value("clip_norm", v)?),
        };
        let spec = ExperimentSpec {
            task,
            model,
            n_hidden: num("n_hidden", 128)?,
            capacity: num("capacity", 2)?,
            spectral_radius: real("spectral_radius", 1.0)?,
            n_symbols: num("n_symbols", 8)?,
            m_len: num("m_len", 10)?,
            t_delay: num("t_delay", 100)?,
            data_dir: get("data_dir").map_or_else(default_data_dir, PathBuf::from),
            train_size: num("train_size", 10_000)?,
            val_size: num("val_size", if is_copy { 256 } else { 2_000 })?,
            downsample: num("downsample", 1)?,
            perm_seed: get("perm_seed").map_or(Ok(1), |v| parse_value("perm_seed", v))?,
            train: TrainConfig {
                batch_size: num("batch_size", 128)?,
                iters: num("iters", 2_000)?,
                eval_interval: num("eval_interval", 100)?,
                seed: get("seed").map_or(Ok(0), |v| parse_value("seed", v))?,
                optimizer: RmsPropConfig {
                    lr: real("lr", if is_copy { 1e-3 } else { 1e-4 })?,
                    decay: real("decay", if is_copy && eurnn { 0.5 } else { 0.9 })?,
                    momentum: real("momentum", 0.0)?,
                    epsilon: real("epsilon", 1e-8)?,
                },
                clip_norm,
                wall_clock: get("wall_clock").map_or(Ok(false), |v| parse_value("wall_clock", v))?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_hidden == 0 || self.val_size == 0 {
            return Err(EunnError::Config("n_hidden and val_size must be positive".into()));
        }
        match self.model {
            ModelKind::EurnnTunable if self.n_hidden % 2 != 0 || self.capacity == 0 || self.capacity > self.n_hidden => {
                Err(EunnError::Config(format!(
                    "eurnn-tunable needs an even n_hidden and 1 <= capacity <= n_hidden (got n_hidden={}, capacity={})",
                    self.n_hidden, self.capacity
                )))
            }
            ModelKind::EurnnFft if !self.n_hidden.is_power_of_two() || self.n_hidden < 2 => Err(EunnError::Config(
                format!("eurnn-fft needs a power-of-two n_hidden >= 2 (got {})", self.n_hidden),
            )),
            ModelKind::Vanilla if !(self.spectral_radius.is_finite() && self.spectral_radius >= 0.0) => Err(
                EunnError::Config(format!("invalid spectral_radius {}", self.spectral_radius)),
            ),
            _ => Ok(()),
        }?;
        if self.task == TaskKind::Copy {
            CopyTaskConfig::new(self.n_symbols, self.m_len, self.t_delay)?;
        }
        Ok(())
    }

    /// `key = value` lines for every setting, in [`KEYS`] order.
    pub fn resolved_text(&self) -> String {
        let t = &self.train;
        let o = &t.optimizer;
        let values: Vec<String> = vec![
            self.task.to_string(),
            self.model.to_string(),
            self.n_hidden.to_string(),
            self.capacity.to_string(),
            format!("{:?}", self.spectral_radius),
            self.n_symbols.to_string(),
            self.m_len.to_string(),
            self.t_delay.to_string(),
            self.data_dir.display().to_string(),
            self.train_size.to_string(),
            self.val_size.to_string(),
            self.downsample.to_string(),
            self.perm_seed.to_string(),
            t.iters.to_string(),
            t.batch_size.to_string(),
            t.eval_interval.to_string(),
            t.seed.to_string(),
            format!("{:?}", o.lr),
            format!("{:?}", o.decay),
            format!("{:?}", o.momentum),
            format!("{:?}", o.epsilon),
            t.clip_norm.map_or("none".into(), |c| format!("{c:?}")),
            t.wall_clock.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn build_task(&self) -> Result<Box<dyn TaskSource>> {
        match self.task {
            TaskKind::Copy => {
                let cfg = CopyTaskConfig::new(self.n_symbols, self.m_len, self.t_delay)?;
                let mut rng = Rng::with_stream(self.train.seed, 2);
                Ok(Box::new(CopyTask::new(cfg, self.val_size, &mut rng)?))
            }
            TaskKind::Mnist => Ok(Box::new(mnist_load(&MnistConfig {
                dir: self.data_dir.clone(),
                perm_seed: Some(self.perm_seed),
                train_size: self.train_size,
                val_size: self.val_size,
                downsample: self.downsample,
            })?)),
        }
    }

    /// Model initialized from stream 0 of the run seed.
    pub fn build_model(&self, n_in: usize, n_out: usize) -> Result<Model> {
        let mut rng = Rng::with_stream(self.train.seed, 0);
        Ok(match self.model {
            ModelKind::EurnnTunable => Model::Eurnn(EurnnCell::new(
                n_in,
                self.n_hidden,
                n_out,
                MeshStyle::Tunable,
                self.capacity,
                &mut rng,
            )?),
            ModelKind::EurnnFft => Model::Eurnn(EurnnCell::new(
                n_in,
                self.n_hidden,
                n_out,
                MeshStyle::Fft,
                self.n_hidden.trailing_zeros() as usize,
                &mut rng,
            )?),
            ModelKind::Vanilla => Model::Vanilla(VanillaCell::new(n_in, self.n_hidden, n_out, self.spectral_radius, &mut rng)?),
        })
    }

    /// Memoryless copy-task cross entropy, if this is a copy run.
    pub fn baseline(&self) -> Option<f64> {
        (self.task == TaskKind::Copy).then(|| memoryless_baseline(self.n_symbols, self.m_len, self.t_delay))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub records: Vec<MetricRecord>,
    pub outcome: TrainOutcome,
    pub val_metric_name: &'static str,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn last_val(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_metric)
    }
}

/// Runs `spec`, writing the resolved config, the metrics stream (row by row)
/// and, unless training diverged, the final checkpoint into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(RESOLVED_FILE), spec.resolved_text())?;
    let task = spec.build_task()?;
    let mut model = spec.build_model(task.n_in(), task.n_out())?;
    let mut metrics = std::io::BufWriter::new(fs::File::create(out_dir.join(METRICS_FILE))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut io_error = None;
    let run = train_with(&spec.train, &mut model, task.as_ref(), |rec| {
        let res = writeln!(metrics, "{}", rec.csv_row()).and_then(|_| metrics.flush());
        match res {
            Ok(()) => true,
            Err(e) => {
                io_error = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    metrics.flush()?;
    if !matches!(run.outcome, TrainOutcome::Diverged { .. }) {
        fs::write(out_dir.join(CHECKPOINT_FILE), write_checkpoint(&model))?;
    }
    Ok(RunSummary {
        records: run.records,
        outcome: run.outcome,
        val_metric_name: task.val_metric_name(),
        out_dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_follow_task_and_model() {
        let copy = ExperimentSpec::resolve(&[]).unwrap();
        assert_eq!(copy.train.optimizer.decay, 0.5);
        assert_eq!(copy.train.optimizer.lr, 1e-3);
        let vanilla = ExperimentSpec::resolve(&pairs(&[("model", "vanilla")])).unwrap();
        assert_eq!(vanilla.train.optimizer.decay, 0.9);
        let mnist = ExperimentSpec::resolve(&pairs(&[("task", "mnist")])).unwrap();
        assert_eq!(mnist.train.optimizer.lr, 1e-4);
        assert_eq!(mnist.val_size, 2000);
    }

    #[test]
    fn later_pairs_win() {
        let s = ExperimentSpec::resolve(&pairs(&[("iters", "5"), ("iters", "7"), ("t-delay", "20")])).unwrap();
        assert_eq!(s.train.iters, 7);
        assert_eq!(s.t_delay, 20);
    }

    #[test]
    fn resolved_text_round_trips() {
        let s = ExperimentSpec::resolve(&pairs(&[
            ("model", "eurnn-fft"),
            ("n_hidden", "64"),
            ("lr", "0.1"),
            ("clip_norm", "2.5"),
            ("data_dir", "/tmp/x"),
        ]))
        .unwrap();
        let text = s.resolved_text();
        let back = ExperimentSpec::resolve(&parse_config_text(&text, "r").unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn invalid_settings_rejected() {
        for bad in [
            vec![("task", "timit")],
            vec![("n_hidden", "7")],
            vec![("model", "eurnn-fft"), ("n_hidden", "96")],
            vec![("capacity", "0")],
            vec![("iters", "-1")],
            vec![("batch_size", "0")],
            vec![("colour", "red")],
        ] {
            assert!(ExperimentSpec::resolve(&pairs(&bad)).is_err(), "{bad:?}");
        }
        assert!(matches!(
            parse_config_text("iters = 3\nbogus\n", "c"),
            Err(EunnError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::resolve(&pairs(&[
            ("n_hidden", "8"),
            ("t_delay", "3"),
            ("m_len", "2"),
            ("n_symbols", "3"),
            ("iters", "4"),
            ("batch_size", "2"),
            ("eval_interval", "2"),
            ("val_size", "4"),
        ]))
        .unwrap();
        let summary = run_experiment(&spec, dir.path()).unwrap();
        assert_eq!(summary.records.len(), 4);
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("iter,loss,val_metric,wall_ms\n1,"));
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
        let resolved = fs::read_to_string(dir.path().join(RESOLVED_FILE)).unwrap();
        assert_eq!(resolved, spec.resolved_text());
    }
}
