//! The `can` command: dataset generation, training, evaluation, gradient
//! certification, cost tables and kernel timings.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data format, 4 numeric failure.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use can_core::autograd::{evaluate as forward, Faults};
use can_core::data::{generate, read_dataset, split_indices, write_dataset, ClipRecord, Dataset, SynthConfig, TRAIN_FRACTION};
use can_core::gradcheck::{check_all, TOLERANCE};
use can_core::gscm::{Gscm, GscmConfig};
use can_core::mtcm::{Mtcm, MtcmConfig};
use can_core::network::checkpoint::load_into;
use can_core::network::train::{evaluate, train, BEST_CHECKPOINT};
use can_core::network::{count_cost, Model, NetSpec};
use can_core::ops::{conv3d, conv3d_oracle, ConvGeometry, ConvKernel};
use can_core::params::ParamStore;
use can_core::{Error, Real, VideoTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{RunConfig, Split};

pub const CONFIG_ECHO: &str = "config.txt";
pub const RUN_ID: &str = "run_id";
pub const DATASET_FILE: &str = "dataset.canv";
pub const EVAL_FILE: &str = "eval.tsv";
pub const COST_FILE: &str = "cost.tsv";
pub const BENCH_FILE: &str = "bench.tsv";
pub const GRADCHECK_FILE: &str = "gradcheck.tsv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed: {0}")]
    GradientCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Shape(_) => 2,
                Error::Format { .. } | Error::Io(_) => 3,
                Error::Numeric(_) | Error::State(_) => 4,
            },
            CliError::GradientCheck(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "can", version, about = "Channel-attention video network toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every output of the run.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write a synthetic motion dataset to OUT/dataset.canv.
    Generate,
    /// Train a network on the training split of `dataset`.
    Train {
        #[arg(value_name = "SPEC")]
        spec: Option<SpecArg>,
    },
    /// Top-1 / top-5 of a checkpoint on a split of `dataset`.
    Eval {
        #[arg(value_name = "SPEC")]
        spec: Option<SpecArg>,
    },
    /// Finite-difference certification of every primitive and module.
    Gradcheck,
    /// Per-layer parameter and multiply-accumulate table.
    Count {
        #[arg(value_name = "SPEC")]
        spec: Option<SpecArg>,
    },
    /// Median wall time of kernels and full forward passes.
    Bench,
}

/// Spec name given positionally; validated when the run starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecArg(usize);

impl std::str::FromStr for SpecArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        can_core::network::SPEC_NAMES
            .iter()
            .position(|n| *n == s)
            .map(SpecArg)
            .ok_or_else(|| format!("unknown network {s:?}; expected one of {}", can_core::network::SPEC_NAMES.join(", ")))
    }
}

impl SpecArg {
    fn name(self) -> &'static str {
        can_core::network::SPEC_NAMES[self.0]
    }
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Gradcheck => "gradcheck",
            Command::Count { .. } => "count",
            Command::Bench => "bench",
        }
    }
}

/// Defaults, then the config file, then `--set`, then the dedicated flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.common.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for a in &cli.common.set {
        cfg.apply_assignment(a)?;
    }
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = cli.common.threads {
        cfg.threads = t;
    }
    if let Command::Train { spec: Some(s) } | Command::Eval { spec: Some(s) } | Command::Count { spec: Some(s) } = cli.command {
        cfg.spec = s.name().to_string();
    }
    cfg.train.seed = cfg.seed;
    cfg.train.threads = cfg.threads;
    Ok(cfg)
}

/// Short content hash of the echoed config, in the style of an abbreviated commit id.
pub fn run_id(command: &str, echo: &str) -> String {
    let digest = Sha256::digest(format!("{command}\n{echo}").as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn out_dir(cfg: &RunConfig, required: bool) -> Result<Option<PathBuf>, CliError> {
    match &cfg.out {
        Some(d) => {
            if d.exists() && !d.is_dir() {
                return Err(CliError::Usage(format!("--out {} is not a directory", d.display())));
            }
            Ok(Some(d.clone()))
        }
        None if required => Err(CliError::Usage("this command needs --out DIR".into())),
        None => Ok(None),
    }
}

fn existing(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = path.as_ref().ok_or_else(|| CliError::Usage(format!("set `{key}` (config key or --set {key}=PATH)")))?;
    if !p.is_file() {
        return Err(CliError::Usage(format!("{key} {} does not exist", p.display())));
    }
    Ok(p.clone())
}

fn spec_for(cfg: &RunConfig) -> Result<NetSpec, CliError> {
    NetSpec::named(&cfg.spec).map_err(|_| {
        CliError::Usage(format!(
            "unknown network {:?}; expected one of {}",
            cfg.spec,
            can_core::network::SPEC_NAMES.join(", ")
        ))
    })
}

/// Write the config echo and run id, after all inputs have been validated.
fn start_run(dir: &Path, command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let echo = cfg.echo();
    fs::write(dir.join(CONFIG_ECHO), &echo)?;
    fs::write(dir.join(RUN_ID), format!("{}\n", run_id(command.name(), &echo)))?;
    Ok(())
}

/// Execute one parsed command line, writing the human-readable report to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg, out),
        Command::Train { .. } => cmd_train(&cfg, out),
        Command::Eval { .. } => cmd_eval(&cfg, out),
        Command::Gradcheck => cmd_gradcheck(&cfg, out),
        Command::Count { .. } => cmd_count(&cfg, out),
        Command::Bench => cmd_bench(&cfg, out),
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(cfg, true)?.expect("required");
    if cfg.clips_per_class == 0 {
        return Err(CliError::Usage("clips_per_class must be positive".into()));
    }
    let synth = SynthConfig {
        frames: cfg.frames.unwrap_or(SynthConfig::default().frames),
        height: cfg.height,
        width: cfg.width,
    };
    if synth.frames == 0 || synth.height == 0 || synth.width == 0 {
        return Err(CliError::Usage("frames, height and width must be positive".into()));
    }
    start_run(&dir, Command::Generate, cfg)?;
    let ds = generate(cfg.seed, cfg.clips_per_class, &synth);
    let path = dir.join(DATASET_FILE);
    write_dataset(&path, &ds)?;
    writeln!(out, "wrote {} clips ({} per class, T={} {}x{}) to {}", ds.clips.len(), cfg.clips_per_class, synth.frames, synth.height, synth.width, path.display())?;
    Ok(())
}

/// Network spec adapted to the clip geometry of `ds`, after checking the class count.
fn dataset_spec(cfg: &RunConfig, ds: &Dataset) -> Result<NetSpec, CliError> {
    let spec = spec_for(cfg)?;
    let h = &ds.header;
    if h.classes as usize != spec.num_classes {
        return Err(Error::Config(format!("dataset has {} classes but {} predicts {}", h.classes, spec.name, spec.num_classes)).into());
    }
    Ok(spec.with_input(h.frames as usize, h.height as usize, h.width as usize))
}

fn split(ds: &Dataset) -> (Vec<ClipRecord>, Vec<ClipRecord>) {
    let (tr, va) = split_indices(ds.clips.len(), TRAIN_FRACTION);
    let pick = |ix: &[usize]| ix.iter().map(|&i| ds.clips[i].clone()).collect();
    (pick(&tr), pick(&va))
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(cfg, true)?.expect("required");
    let data = existing(&cfg.dataset, "dataset")?;
    spec_for(cfg)?;
    cfg.train.validate()?;
    let ds = read_dataset(&data)?;
    let spec = dataset_spec(cfg, &ds)?;
    start_run(&dir, Command::Train { spec: None }, cfg)?;
    let (tr, va) = split(&ds);
    writeln!(out, "training {} on {} clips, validating on {}", spec.name, tr.len(), va.len())?;
    let started = Instant::now();
    let outcome = train(&spec, &tr, &va, &cfg.train, Some(&dir))?;
    writeln!(out, "epoch\ttrain_loss\ttrain_top1\tval_top1\tval_top5")?;
    for m in &outcome.metrics {
        writeln!(out, "{}", m.tsv_line())?;
    }
    let best = &outcome.metrics[outcome.best_epoch - 1];
    writeln!(
        out,
        "best epoch {} val top-1 {:.4} top-5 {:.4} ({:.1} s); checkpoint {}",
        outcome.best_epoch,
        best.val_top1,
        best.val_top5,
        started.elapsed().as_secs_f64(),
        dir.join(BEST_CHECKPOINT).display()
    )?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(cfg, true)?.expect("required");
    let data = existing(&cfg.dataset, "dataset")?;
    let ckpt = existing(&cfg.checkpoint, "checkpoint")?;
    spec_for(cfg)?;
    let ds = read_dataset(&data)?;
    let spec = dataset_spec(cfg, &ds)?;
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, cfg.seed)?;
    load_into(&ckpt, spec.hash(), &mut store)?;
    start_run(&dir, Command::Eval { spec: None }, cfg)?;
    let (tr, va) = split(&ds);
    let clips = match cfg.split {
        Split::Train => tr,
        Split::Val => va,
        Split::All => ds.clips.clone(),
    };
    let acc = evaluate(&model, &store, &clips, cfg.threads)?;
    let line = format!("{}\t{}\t{:.4}\t{:.4}", spec.name, acc.count, acc.top1, acc.top5);
    fs::write(dir.join(EVAL_FILE), format!("spec\tclips\ttop1\ttop5\n{line}\n"))?;
    writeln!(out, "spec\tclips\ttop1\ttop5\n{line}")?;
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(cfg, false)?;
    if cfg.modules.is_empty() {
        return Err(CliError::Usage("no modules selected for gradcheck".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("no seeds selected for gradcheck".into()));
    }
    for m in &cfg.modules {
        if !can_core::gradcheck::CASES.contains(&m.as_str()) {
            return Err(CliError::Usage(format!("unknown module {m:?}; expected one of {}", can_core::gradcheck::CASES.join(", "))));
        }
    }
    let faults = match cfg.inject_fault.as_deref() {
        None => Faults::default(),
        Some("sigmoid") => Faults { sigmoid_adjoint: true },
        Some(other) => return Err(CliError::Usage(format!("unknown fault {other:?}"))),
    };
    if let Some(d) = &dir {
        start_run(d, Command::Gradcheck, cfg)?;
    }
    let modules: Vec<&str> = cfg.modules.iter().map(String::as_str).collect();
    let results = check_all(&modules, &cfg.seeds, faults)?;
    let mut table = String::from("module\tmax_rel_error\tcoordinates\tstatus\n");
    let mut failed = Vec::new();
    for m in &modules {
        let rs: Vec<_> = results.iter().filter(|r| r.case == *m).collect();
        let worst = rs.iter().map(|r| r.report.max_rel_error).fold(0.0, Real::max);
        let coords: usize = rs.iter().map(|r| r.report.coordinates).sum();
        let ok = worst <= TOLERANCE;
        if !ok {
            failed.push(m.to_string());
        }
        table.push_str(&format!("{m}\t{worst:.3e}\t{coords}\t{}\n", if ok { "ok" } else { "FAIL" }));
    }
    write!(out, "{table}")?;
    if let Some(d) = &dir {
        fs::write(d.join(GRADCHECK_FILE), &table)?;
    }
    if failed.is_empty() {
        writeln!(out, "all {} modules within {TOLERANCE:e}", modules.len())?;
        Ok(())
    } else {
        Err(CliError::GradientCheck(failed.join(", ")))
    }
}

pub fn cmd_count(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(cfg, false)?;
    let mut spec = spec_for(cfg)?;
    if let Some(t) = cfg.frames {
        if t == 0 {
            return Err(CliError::Usage("frames must be positive".into()));
        }
        spec = spec.with_frames(t);
    }
    let report = count_cost(&spec)?;
    if let Some(d) = &dir {
        start_run(d, Command::Count { spec: None }, cfg)?;
    }
    let mut table = String::from("layer\tparams\tmacs\n");
    for r in &report.rows {
        table.push_str(&format!("{}\t{}\t{}\n", r.name, r.params, r.macs));
    }
    table.push_str(&format!("total\t{}\t{}\n", report.total_params, report.total_macs));
    if let Some(d) = &dir {
        fs::write(d.join(COST_FILE), &table)?;
    }
    write!(out, "{table}")?;
    writeln!(
        out,
        "{} at T={}: {:.1} M params, {:.1} G MACs",
        report.spec_name,
        report.frames,
        report.params_millions(),
        report.giga_macs()
    )?;
    Ok(())
}

fn median_ms(iterations: usize, mut f: impl FnMut() -> Result<(), Error>) -> Result<(f64, f64, f64), CliError> {
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };
    Ok((median, times[0], times[times.len() - 1]))
}

pub const BENCH_HEADER: &str = "kernel\tshape\titerations\tmedian_ms\tmin_ms\tmax_ms";

pub fn cmd_bench(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(cfg, false)?;
    if cfg.iterations == 0 {
        return Err(CliError::Usage("iterations must be positive".into()));
    }
    let d = cfg.shape;
    if !d.c.is_multiple_of(8) {
        return Err(CliError::Usage(format!("bench shape channels {} must be a multiple of 8", d.c)));
    }
    if let Some(dir) = &dir {
        start_run(dir, Command::Bench, cfg)?;
    }
    let rng = &mut ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = VideoTensor::randn(d, 1.0, rng)?;
    let g = ConvGeometry::same(d.c, d.c, [3, 3, 3], [1, 1, 1], 1);
    let k = ConvKernel::new(g, VideoTensor::randn(can_core::Dims::new(1, 1, 1, 1, g.weight_len()), 0.1, rng)?.into_vec(), vec![0.0; d.c])?;
    let mut store = ParamStore::new();
    let mtcm = Mtcm::new(&mut store, "mtcm", MtcmConfig::new(d.c), rng)?;
    let gscm = Gscm::new(&mut store, "gscm", GscmConfig::new(d.c), rng)?;
    let spec = NetSpec::named("tinycan")?;
    let mut net_store = ParamStore::new();
    let model = Model::new(&spec, &mut net_store, cfg.seed)?;
    let clip = VideoTensor::uniform(can_core::Dims::new(1, spec.frames, spec.height, spec.width, 1), 0.0, 1.0, rng)?;

    let shape = d.as_array().map(|v| v.to_string()).join("x");
    let clip_shape = clip.dims().as_array().map(|v| v.to_string()).join("x");
    let n = cfg.iterations;
    let rows = [
        ("conv3d", shape.clone(), median_ms(n, || conv3d(&x, &k).map(drop))?),
        ("conv3d_oracle", shape.clone(), median_ms(n, || conv3d_oracle(&x, &k).map(drop))?),
        ("mtcm_forward", shape.clone(), median_ms(n, || mtcm.apply(&store, &x).map(drop))?),
        ("gscm_forward", shape.clone(), median_ms(n, || gscm.apply(&store, &x).map(drop))?),
        ("tinycan_forward", clip_shape, median_ms(n, || forward(&net_store, &clip, |t, v| model.forward(t, v)).map(drop))?),
    ];
    let mut table = format!("{BENCH_HEADER}\n");
    for (name, shape, (med, lo, hi)) in rows {
        table.push_str(&format!("{name}\t{shape}\t{n}\t{med:.3}\t{lo:.3}\t{hi:.3}\n"));
    }
    if let Some(dir) = &dir {
        fs::write(dir.join(BENCH_FILE), &table)?;
    }
    write!(out, "{table}")?;
    Ok(())
}
