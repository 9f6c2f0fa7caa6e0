//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use can_core::gradcheck::{CASES, DEFAULT_SEEDS};
use can_core::network::train::TrainConfig;
use can_core::Dims;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    All,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "all" => Some(Split::All),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub spec: String,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub train: TrainConfig,
    pub clips_per_class: usize,
    /// Clip length for `generate`, input length for `count`.
    pub frames: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub split: Split,
    pub modules: Vec<String>,
    pub seeds: Vec<u64>,
    pub inject_fault: Option<String>,
    pub iterations: usize,
    pub shape: Dims,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            spec: "tinycan".into(),
            dataset: None,
            checkpoint: None,
            out: None,
            seed: 7,
            threads: 1,
            train: TrainConfig::default(),
            clips_per_class: 80,
            frames: None,
            height: 32,
            width: 32,
            split: Split::Val,
            modules: CASES.iter().map(|s| s.to_string()).collect(),
            seeds: DEFAULT_SEEDS.to_vec(),
            inject_fault: None,
            iterations: 3,
            shape: Dims::new(1, 8, 56, 56, 64),
        }
    }
}

/// Keys accepted in config files and `--set`, in echo order.
pub const KEYS: &[&str] = &[
    "spec",
    "dataset",
    "checkpoint",
    "out",
    "seed",
    "threads",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "milestones",
    "lr_decay",
    "clips_per_class",
    "frames",
    "height",
    "width",
    "split",
    "modules",
    "seeds",
    "iterations",
    "shape",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let path = || (!v.is_empty()).then(|| PathBuf::from(v));
        match key.trim() {
            "spec" => self.spec = v.to_string(),
            "dataset" => self.dataset = path(),
            "checkpoint" => self.checkpoint = path(),
            "out" => self.out = path(),
            "seed" => self.seed = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "lr" => self.train.lr = num(key, v)?,
            "momentum" => self.train.momentum = num(key, v)?,
            "weight_decay" => self.train.weight_decay = num(key, v)?,
            "milestones" => self.train.milestones = list(key, v)?,
            "lr_decay" => self.train.lr_decay = num(key, v)?,
            "clips_per_class" => self.clips_per_class = num(key, v)?,
            "frames" => self.frames = if v.is_empty() { None } else { Some(num(key, v)?) },
            "height" => self.height = num(key, v)?,
            "width" => self.width = num(key, v)?,
            "split" => self.split = Split::parse(v).ok_or_else(|| CliError::Usage(format!("split must be train, val or all, got {v:?}")))?,
            "modules" => self.modules = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "seeds" => self.seeds = list(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "shape" => {
                let d: Vec<usize> = list(key, v)?;
                if d.len() != 5 || d.contains(&0) {
                    return Err(CliError::Usage(format!("shape needs five positive sizes N,T,H,W,C, got {v:?}")));
                }
                self.shape = Dims::new(d[0], d[1], d[2], d[3], d[4]);
            }
            "inject_fault" => self.inject_fault = (!v.is_empty()).then(|| v.to_string()),
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a config file body: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                CliError::Usage(m) => CliError::Usage(format!("config line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// `--set key=value` override.
    pub fn apply_assignment(&mut self, a: &str) -> Result<(), CliError> {
        let (k, v) = a.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {a:?}")))?;
        self.set(k, v)
    }

    /// Every key with its resolved value; feeding this back through
    /// [`RunConfig::apply_text`] reproduces the config.
    pub fn echo(&self) -> String {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let d = self.shape;
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "spec" => self.spec.clone(),
                "dataset" => p(&self.dataset),
                "checkpoint" => p(&self.checkpoint),
                "out" => p(&self.out),
                "seed" => self.seed.to_string(),
                "threads" => self.threads.to_string(),
                "epochs" => t.epochs.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "lr" => t.lr.to_string(),
                "momentum" => t.momentum.to_string(),
                "weight_decay" => t.weight_decay.to_string(),
                "milestones" => join(&t.milestones),
                "lr_decay" => t.lr_decay.to_string(),
                "clips_per_class" => self.clips_per_class.to_string(),
                "frames" => self.frames.map(|f| f.to_string()).unwrap_or_default(),
                "height" => self.height.to_string(),
                "width" => self.width.to_string(),
                "split" => self.split.name().to_string(),
                "modules" => self.modules.join(","),
                "seeds" => join(&self.seeds),
                "iterations" => self.iterations.to_string(),
                "shape" => join(&d.as_array()),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        if let Some(f) = &self.inject_fault {
            let _ = writeln!(s, "inject_fault = {f}");
        }
        s
    }
}
