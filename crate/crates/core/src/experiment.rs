//! Seeded multi-run experiments driven by a flat `key = value` config file.
//!
//! Blank lines and lines starting with `#` are ignored. Keys, with defaults:
//!
//! ```text
//! data = synthetic            # synthetic | idx
//! synthetic.classes = 10
//! synthetic.dim = 32
//! synthetic.train_per_class = 500
//! synthetic.test_per_class = 100
//! synthetic.spread = 0.3
//! synthetic.seed = 0
//! idx.train_images = PATH     # required when data = idx
//! idx.train_labels = PATH
//! idx.test_images = PATH
//! idx.test_labels = PATH
//! idx.classes = N             # optional, inferred from the labels
//! tasks = 5
//! memory = 200
//! method = afs                # afs | er | ablation:<flags>
//! hidden = 256                # comma-separated hidden widths, may be empty
//! runs = 1
//! seed = 0                    # run r uses seed + r
//! output = afs-output
//! format = csv                # csv | json
//! reference = true            # train the CE reference model for I_T
//! offline_epochs = 0          # > 0 also trains the i.i.d. offline oracle
//! stream_batch = 10
//! retrieve_batch = 100
//! lr = 0.1
//! rv_lr = 0.01
//! rv_batch = 10
//! rv_every = none             # none | N
//! review = true               # review pass for afs
//! augment = vector:0.1        # none | vector:SIGMA | image:PAD
//! alpha = 0.25
//! gamma = 2
//! mu = 0.3
//! sigma = 0.5
//! beta = 0.1
//! temperature = 20
//! epsilon = 0.01
//! ```
//!
//! Ablation flags are joined with `+` and pick at most one entry per axis:
//! class loss `ce | fl | rfl` (default `ce`), regularizer
//! `none | lsr | vkd` (default `none`) and review `rv | norv` (default `rv`).
//! The ablation baseline is replay with augmentation and review trained with
//! cross-entropy; `ablation:rfl+vkd` is AFS.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::idx::load_idx;
use crate::losses::{ClassLoss, LossConfig, Objective, Regularizer};
use crate::memory::MemoryBuffer;
use crate::model::{Network, NetworkSpec};
use crate::report::{emit_report, write_records, Format, RunResult, PARTIAL_MARKER};
use crate::stream::{gen_synthetic, split_tasks, AugmentKind, Dataset, Split, SyntheticSpec};
use crate::trainer::{task_streams, train_offline, train_reference, train_replay, TaskData, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        num_classes: Option<usize>,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic(spec) => gen_synthetic(spec),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
            } => {
                let train = load_idx(train_images, train_labels, *num_classes, Split::Train)?;
                let test = load_idx(test_images, test_labels, Some(train.num_classes), Split::Test)?;
                Ok((train, test))
            }
        }
    }
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub class_loss: ClassLoss,
    pub regularizer: Regularizer,
    pub review: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Afs,
    Er,
    Ablation(Ablation),
}

impl Ablation {
    pub fn parse(flags: &str) -> Result<Self> {
        let mut class_loss = None;
        let mut regularizer = None;
        let mut review = None;
        fn set<T>(slot: &mut Option<T>, value: T, axis: &str, flag: &str) -> Result<()> {
            if slot.is_some() {
                return Err(Error::config(format!(
                    "method: ablation flag {flag:?} repeats the {axis} axis"
                )));
            }
            *slot = Some(value);
            Ok(())
        }
        for flag in flags.split('+').map(str::trim).filter(|f| !f.is_empty()) {
            match flag {
                "ce" => set(&mut class_loss, ClassLoss::CrossEntropy, "class loss", flag)?,
                "fl" => set(&mut class_loss, ClassLoss::Focal, "class loss", flag)?,
                "rfl" => set(&mut class_loss, ClassLoss::Revised, "class loss", flag)?,
                "none" => set(&mut regularizer, Regularizer::None, "regularizer", flag)?,
                "lsr" => set(&mut regularizer, Regularizer::LabelSmoothing, "regularizer", flag)?,
                "vkd" => set(&mut regularizer, Regularizer::VirtualKd, "regularizer", flag)?,
                "rv" => set(&mut review, true, "review", flag)?,
                "norv" => set(&mut review, false, "review", flag)?,
                other => {
                    return Err(Error::config(format!("method: unknown ablation flag {other:?}")))
                }
            }
        }
        Ok(Self {
            class_loss: class_loss.unwrap_or(ClassLoss::CrossEntropy),
            regularizer: regularizer.unwrap_or(Regularizer::None),
            review: review.unwrap_or(true),
        })
    }

    /// `baseline`, `baseline+rfl+vkd`, `baseline+fl-norv`, ...
    pub fn label(&self) -> String {
        let mut s = String::from("baseline");
        if self.class_loss != ClassLoss::CrossEntropy {
            s.push('+');
            s.push_str(self.class_loss.label());
        }
        if self.regularizer != Regularizer::None {
            s.push('+');
            s.push_str(self.regularizer.label());
        }
        if !self.review {
            s.push_str("-norv");
        }
        s
    }

    /// Every combination of the three axes.
    pub fn all() -> Vec<Ablation> {
        let mut out = Vec::new();
        for class_loss in [ClassLoss::CrossEntropy, ClassLoss::Focal, ClassLoss::Revised] {
            for regularizer in [Regularizer::None, Regularizer::LabelSmoothing, Regularizer::VirtualKd] {
                for review in [true, false] {
                    out.push(Ablation {
                        class_loss,
                        regularizer,
                        review,
                    });
                }
            }
        }
        out
    }
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Afs => "afs".into(),
            Method::Er => "er".into(),
            Method::Ablation(a) => a.label(),
        }
    }

    /// The objective and the training settings this method runs with.
    pub fn resolve(&self, base: &TrainConfig) -> (TrainConfig, Objective) {
        match self {
            Method::Afs => (base.clone(), Objective::afs(base.loss)),
            Method::Er => (
                TrainConfig {
                    augment: AugmentKind::None,
                    review: false,
                    ..base.clone()
                },
                Objective::cross_entropy(base.loss),
            ),
            Method::Ablation(a) => (
                TrainConfig {
                    review: a.review,
                    ..base.clone()
                },
                Objective::new(a.class_loss, a.regularizer, base.loss),
            ),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "afs" => Ok(Method::Afs),
            "er" => Ok(Method::Er),
            other => match other.strip_prefix("ablation:") {
                Some(flags) => Ablation::parse(flags).map(Method::Ablation),
                None => Err(Error::config(format!(
                    "method: expected afs, er or ablation:<flags>, got {other:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Afs => f.write_str("afs"),
            Method::Er => f.write_str("er"),
            Method::Ablation(a) => {
                let mut flags = vec![a.class_loss.label(), a.regularizer.label()];
                flags.push(if a.review { "rv" } else { "norv" });
                write!(f, "ablation:{}", flags.join("+"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub num_tasks: usize,
    pub memory: usize,
    pub method: Method,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub runs: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub format: Format,
    pub reference: bool,
    pub offline_epochs: usize,
}

pub const DEFAULT_SPREAD: f64 = 0.3;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_JITTER: f64 = 0.1;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig::new(LossConfig::new(10));
        train.augment = AugmentKind::Vector {
            sigma: DEFAULT_JITTER,
        };
        Self {
            data: DataSource::Synthetic(SyntheticSpec {
                num_classes: 10,
                dim: 32,
                train_per_class: 500,
                test_per_class: 100,
                spread: DEFAULT_SPREAD,
                seed: 0,
            }),
            num_tasks: 5,
            memory: 200,
            method: Method::Afs,
            hidden: vec![DEFAULT_HIDDEN],
            train,
            runs: 1,
            seed: 0,
            output: PathBuf::from("afs-output"),
            format: Format::Csv,
            reference: true,
            offline_epochs: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

pub fn parse_augment(value: &str) -> Result<AugmentKind> {
    let bad = || Error::config(format!("augment: expected none, vector:SIGMA or image:PAD, got {value:?}"));
    match value.split_once(':') {
        None if value == "none" => Ok(AugmentKind::None),
        Some(("vector", s)) => Ok(AugmentKind::Vector {
            sigma: s.parse().map_err(|_| bad())?,
        }),
        Some(("image", p)) => Ok(AugmentKind::Image {
            pad: p.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn format_augment(kind: AugmentKind) -> String {
    match kind {
        AugmentKind::None => "none".into(),
        AugmentKind::Vector { sigma } => format!("vector:{sigma}"),
        AugmentKind::Image { pad } => format!("image:{pad}"),
    }
}

#[derive(Default)]
struct IdxKeys {
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    classes: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut synth = match &cfg.data {
            DataSource::Synthetic(s) => s.clone(),
            DataSource::Idx { .. } => unreachable!(),
        };
        let mut idx = IdxKeys::default();
        let mut use_idx = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let t = &mut cfg.train;
            match key {
                "data" => {
                    use_idx = match value {
                        "synthetic" => false,
                        "idx" => true,
                        _ => return Err(Error::config(format!("data: unknown source {value:?}"))),
                    }
                }
                "synthetic.classes" => synth.num_classes = parse_value(key, value)?,
                "synthetic.dim" => synth.dim = parse_value(key, value)?,
                "synthetic.train_per_class" => synth.train_per_class = parse_value(key, value)?,
                "synthetic.test_per_class" => synth.test_per_class = parse_value(key, value)?,
                "synthetic.spread" => synth.spread = parse_value(key, value)?,
                "synthetic.seed" => synth.seed = parse_value(key, value)?,
                "idx.train_images" => idx.train_images = Some(value.into()),
                "idx.train_labels" => idx.train_labels = Some(value.into()),
                "idx.test_images" => idx.test_images = Some(value.into()),
                "idx.test_labels" => idx.test_labels = Some(value.into()),
                "idx.classes" => idx.classes = Some(parse_value(key, value)?),
                "tasks" => cfg.num_tasks = parse_value(key, value)?,
                "memory" => cfg.memory = parse_value(key, value)?,
                "method" => cfg.method = value.parse()?,
                "hidden" => {
                    cfg.hidden = value
                        .split(',')
                        .map(str::trim)
                        .filter(|w| !w.is_empty())
                        .map(|w| parse_value(key, w))
                        .collect::<Result<_>>()?
                }
                "runs" => cfg.runs = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "output" => cfg.output = value.into(),
                "format" => cfg.format = value.parse()?,
                "reference" => cfg.reference = parse_bool(key, value)?,
                "offline_epochs" => cfg.offline_epochs = parse_value(key, value)?,
                "stream_batch" => t.stream_batch = parse_value(key, value)?,
                "retrieve_batch" => t.retrieve_batch = parse_value(key, value)?,
                "lr" => t.lr = parse_value(key, value)?,
                "rv_lr" => t.rv_lr = parse_value(key, value)?,
                "rv_batch" => t.rv_batch = parse_value(key, value)?,
                "rv_every" => {
                    t.rv_every = match value {
                        "none" => None,
                        v => Some(parse_value(key, v)?),
                    }
                }
                "review" => t.review = parse_bool(key, value)?,
                "augment" => t.augment = parse_augment(value)?,
                "alpha" => t.loss.alpha = parse_value(key, value)?,
                "gamma" => t.loss.gamma = parse_value(key, value)?,
                "mu" => t.loss.mu = parse_value(key, value)?,
                "sigma" => t.loss.sigma = parse_value(key, value)?,
                "beta" => t.loss.beta = parse_value(key, value)?,
                "temperature" => t.loss.temperature = parse_value(key, value)?,
                "epsilon" => t.loss.epsilon = parse_value(key, value)?,
                other => return Err(Error::config(format!("{other}: unknown key"))),
            }
        }
        cfg.data = if use_idx {
            let need = |v: Option<PathBuf>, key: &str| {
                v.ok_or_else(|| Error::config(format!("{key}: required when data = idx")))
            };
            DataSource::Idx {
                train_images: need(idx.train_images, "idx.train_images")?,
                train_labels: need(idx.train_labels, "idx.train_labels")?,
                test_images: need(idx.test_images, "idx.test_images")?,
                test_labels: need(idx.test_labels, "idx.test_labels")?,
                num_classes: idx.classes,
            }
        } else {
            cfg.train.loss.num_classes = synth.num_classes;
            DataSource::Synthetic(synth)
        };
        if let DataSource::Idx {
            num_classes: Some(c), ..
        } = cfg.data
        {
            cfg.train.loss.num_classes = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs: must be positive"));
        }
        if self.num_tasks == 0 {
            return Err(Error::config("tasks: must be positive"));
        }
        if self.memory == 0 {
            return Err(Error::config("memory: must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden: widths must be positive"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.num_classes < 2 {
                return Err(Error::config("synthetic.classes: need at least 2"));
            }
            if s.num_classes % self.num_tasks != 0 {
                return Err(Error::config(format!(
                    "tasks: {} classes cannot be split into {} equal tasks",
                    s.num_classes, self.num_tasks
                )));
            }
            if s.dim == 0 || s.train_per_class == 0 || s.test_per_class == 0 {
                return Err(Error::config("synthetic: dim and per-class counts must be positive"));
            }
            if !(s.spread >= 0.0 && s.spread.is_finite()) {
                return Err(Error::config("synthetic.spread: must be non-negative"));
            }
        }
        self.train.validate()
    }

    /// The resolved configuration in the same `key = value` syntax.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        let mut kv = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        match &self.data {
            DataSource::Synthetic(s) => {
                kv("data", "synthetic".into());
                kv("synthetic.classes", s.num_classes.to_string());
                kv("synthetic.dim", s.dim.to_string());
                kv("synthetic.train_per_class", s.train_per_class.to_string());
                kv("synthetic.test_per_class", s.test_per_class.to_string());
                kv("synthetic.spread", s.spread.to_string());
                kv("synthetic.seed", s.seed.to_string());
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
            } => {
                kv("data", "idx".into());
                kv("idx.train_images", train_images.display().to_string());
                kv("idx.train_labels", train_labels.display().to_string());
                kv("idx.test_images", test_images.display().to_string());
                kv("idx.test_labels", test_labels.display().to_string());
                if let Some(c) = num_classes {
                    kv("idx.classes", c.to_string());
                }
            }
        }
        let t = &self.train;
        kv("tasks", self.num_tasks.to_string());
        kv("memory", self.memory.to_string());
        kv("method", self.method.to_string());
        kv(
            "hidden",
            self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv("runs", self.runs.to_string());
        kv("seed", self.seed.to_string());
        kv("output", self.output.display().to_string());
        kv(
            "format",
            match self.format {
                Format::Csv => "csv".into(),
                Format::Json => "json".into(),
            },
        );
        kv("reference", self.reference.to_string());
        kv("offline_epochs", self.offline_epochs.to_string());
        kv("stream_batch", t.stream_batch.to_string());
        kv("retrieve_batch", t.retrieve_batch.to_string());
        kv("lr", t.lr.to_string());
        kv("rv_lr", t.rv_lr.to_string());
        kv("rv_batch", t.rv_batch.to_string());
        kv("rv_every", t.rv_every.map_or("none".into(), |n| n.to_string()));
        kv("review", t.review.to_string());
        kv("augment", format_augment(t.augment));
        kv("alpha", t.loss.alpha.to_string());
        kv("gamma", t.loss.gamma.to_string());
        kv("mu", t.loss.mu.to_string());
        kv("sigma", t.loss.sigma.to_string());
        kv("beta", t.loss.beta.to_string());
        kv("temperature", t.loss.temperature.to_string());
        kv("epsilon", t.loss.epsilon.to_string());
        lines.join("\n") + "\n"
    }

    pub fn network_spec(&self, input_dim: usize, seed: u64) -> NetworkSpec {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden);
        widths.push(self.train.loss.num_classes);
        NetworkSpec::new(widths, seed)
    }
}

/// Runs one seeded repetition on prepared task streams.
pub fn run_once(
    cfg: &ExperimentConfig,
    tasks: &[TaskData],
    input_dim: usize,
    run: usize,
) -> Result<RunResult> {
    let seed = cfg.seed.wrapping_add(run as u64);
    let base = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (train_cfg, objective) = cfg.method.resolve(&base);
    let spec = cfg.network_spec(input_dim, seed);
    let mut model = Network::init(&spec)?;
    let mut memory = MemoryBuffer::new(cfg.memory)?;
    let record = train_replay(&mut model, &mut memory, tasks, &train_cfg, &objective)?;
    let reference = if cfg.reference {
        train_reference(&spec, tasks, &base)?
    } else {
        Vec::new()
    };
    let offline_accuracy = if cfg.offline_epochs > 0 {
        let mut oracle = Network::init(&spec)?;
        let ce = Objective::cross_entropy(base.loss);
        Some(train_offline(&mut oracle, tasks, &base, &ce, cfg.offline_epochs, None)?.average)
    } else {
        None
    };
    Ok(RunResult {
        method: cfg.method.label(),
        memory: cfg.memory,
        run,
        seed,
        record,
        reference,
        offline_accuracy,
    })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub files: Vec<PathBuf>,
}

/// Runs `cfg.runs` repetitions in parallel and writes `records.json`, the
/// resolved `config.txt` and the report tables into `cfg.output`. If some
/// runs fail, the finished ones are still written next to a `PARTIAL` marker
/// listing the failures.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (train, test) = cfg.data.load()?;
    if train.num_classes != cfg.train.loss.num_classes {
        return Err(Error::config(format!(
            "data has {} classes but the loss is configured for {}",
            train.num_classes, cfg.train.loss.num_classes
        )));
    }
    let split = split_tasks(&train, cfg.num_tasks)?;
    let tasks = task_streams(&train, &test, &split);
    let dim = train.dim();

    let outcomes: Vec<(usize, Result<RunResult>)> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| (run, run_once(cfg, &tasks, dim, run)))
        .collect();
    write_outcomes(cfg, outcomes)
}

fn write_outcomes(
    cfg: &ExperimentConfig,
    outcomes: Vec<(usize, Result<RunResult>)>,
) -> Result<ExperimentOutcome> {
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (run, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(format!("run {run}: {e}")),
        }
    }
    let config_path = dir.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;
    let mut files = vec![config_path, write_records(&results, dir)?];
    if !results.is_empty() {
        files.extend(emit_report(&results, dir, cfg.format)?);
    }
    let marker = dir.join(PARTIAL_MARKER);
    if failures.is_empty() {
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        Ok(ExperimentOutcome { results, files })
    } else {
        fs::write(&marker, failures.join("\n") + "\n").map_err(|e| Error::io(&marker, e))?;
        Err(Error::PartialRun {
            failed: failures.len(),
            total: cfg.runs,
            first: failures[0].clone(),
            dir: dir.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.stream_batch, 10);
        assert_eq!(cfg.train.retrieve_batch, 100);
        assert_eq!(cfg.train.lr, 0.1);
        assert_eq!(cfg.train.rv_lr, 0.01);
    }

    #[test]
    fn text_round_trips() {
        let text = "method = ablation:rfl+lsr+norv\nhidden = 32,16\nrv_every = 7\naugment = image:4\n\
                    synthetic.classes = 4\nsynthetic.dim = 16\ntasks = 2\nbeta = 0.3\nformat = json\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.train.loss.num_classes, 4);
        assert_eq!(cfg.train.rv_every, Some(7));
        assert_eq!(cfg.hidden, vec![32, 16]);
    }

    #[test]
    fn errors_name_the_field() {
        let msg = |t: &str| ExperimentConfig::parse(t).unwrap_err().to_string();
        assert!(msg("lr = fast").contains("lr"));
        assert!(msg("runs = 0").contains("runs"));
        assert!(msg("tasks = 3").contains("tasks"));
        assert!(msg("colour = red").contains("colour"));
        assert!(msg("data = idx").contains("idx.train_images"));
        assert!(msg("augment = blur").contains("augment"));
        assert!(msg("method = gem").contains("method"));
        assert!(msg("no equals sign").contains("line 1"));
    }

    #[test]
    fn ablation_axes_are_exclusive() {
        assert!("ablation:rfl+fl".parse::<Method>().is_err());
        assert!("ablation:vkd+lsr".parse::<Method>().is_err());
        assert!("ablation:rv+norv".parse::<Method>().is_err());
        assert!("ablation:rfl+mixup".parse::<Method>().is_err());
        assert_eq!(
            "ablation:".parse::<Method>().unwrap(),
            Method::Ablation(Ablation {
                class_loss: ClassLoss::CrossEntropy,
                regularizer: Regularizer::None,
                review: true
            })
        );
    }

    #[test]
    fn ablation_labels_are_distinct_and_parse_back() {
        let all = Ablation::all();
        assert_eq!(all.len(), 18);
        let labels: HashSet<String> = all.iter().map(Ablation::label).collect();
        assert_eq!(labels.len(), 18);
        for a in &all {
            let m = Method::Ablation(*a);
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ablation:rfl+vkd".parse::<Method>().unwrap().label(), "baseline+rfl+vkd");
        assert_eq!("ablation:ce".parse::<Method>().unwrap().label(), "baseline");
        assert_eq!("ablation:fl+norv".parse::<Method>().unwrap().label(), "baseline+fl-norv");
    }

    #[test]
    fn methods_resolve_to_their_components() {
        let base = ExperimentConfig::default().train;
        let (er, obj) = Method::Er.resolve(&base);
        assert!(er.augment.is_none() && !er.review);
        assert_eq!(obj.class_loss, ClassLoss::CrossEntropy);
        let (afs, obj) = Method::Afs.resolve(&base);
        assert_eq!(afs, base);
        assert_eq!((obj.class_loss, obj.regularizer), (ClassLoss::Revised, Regularizer::VirtualKd));
        let (ab, obj) = "ablation:fl+lsr+norv".parse::<Method>().unwrap().resolve(&base);
        assert!(!ab.review);
        assert_eq!(ab.augment, base.augment);
        assert_eq!((obj.class_loss, obj.regularizer), (ClassLoss::Focal, Regularizer::LabelSmoothing));
    }

    fn small() -> ExperimentConfig {
        ExperimentConfig::parse(
            "synthetic.classes = 4\nsynthetic.dim = 8\nsynthetic.train_per_class = 20\n\
             synthetic.test_per_class = 5\ntasks = 2\nmemory = 10\nhidden = 8\nruns = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn small_experiment_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.output = dir.path().join("out");
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.results.len(), 2);
        assert_eq!(out.results[1].seed, 1);
        for name in ["records.json", "config.txt", "metrics.csv", "diagnostics.csv", "summary.csv"] {
            assert!(cfg.output.join(name).exists(), "{name}");
        }
        assert!(!cfg.output.join(PARTIAL_MARKER).exists());
    }

    #[test]
    fn failing_runs_leave_a_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.output = dir.path().join("out");
        let (train, test) = cfg.data.load().unwrap();
        let tasks = task_streams(&train, &test, &split_tasks(&train, 2).unwrap());
        let ok = run_once(&cfg, &tasks, 8, 0).unwrap();

        let mut broken = tasks.clone();
        broken[1].test[0].features.push(0.0);
        let failed = run_once(&cfg, &broken, 8, 1);
        assert!(failed.is_err());

        let err = write_outcomes(&cfg, vec![(0, Ok(ok.clone())), (1, failed)]).unwrap_err();
        assert!(matches!(err, Error::PartialRun { failed: 1, total: 2, .. }));
        let marker = fs::read_to_string(cfg.output.join(PARTIAL_MARKER)).unwrap();
        assert!(marker.starts_with("run 1:"));
        let kept = crate::report::read_records(&cfg.output).unwrap();
        assert_eq!(kept, vec![ok.clone()]);
        assert!(cfg.output.join("metrics.csv").exists());

        // a later complete run clears the marker
        write_outcomes(&cfg, vec![(0, Ok(ok))]).unwrap();
        assert!(!cfg.output.join(PARTIAL_MARKER).exists());
    }
}
