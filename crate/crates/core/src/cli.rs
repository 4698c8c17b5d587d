//! The `mango` command line.
//!
//! Every subcommand resolves its parameters as flag > `--config` JSON >
//! default, runs, and writes a `<output>.manifest.json` recording the
//! resolved parameters and the digests of everything it read and wrote.
//! `replay` re-runs a manifest into another directory and compares digests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{self, Task};
use crate::checkpoint::Checkpoint;
use crate::dataset::{Normalizer, OfflineDataset};
use crate::error::{Error, Result};
use crate::evaluation::{self, PF_RESOLUTION};
use crate::guidance::{self, GuidanceConfig, SampleOutput};
use crate::io::{self, TaskSidecar};
use crate::manifest::{FileDigest, RunManifest};
use crate::pareto;
use crate::rng;
use crate::scaling::{self, ScalingConfig, ScalingMode};
use crate::scorenet::{NetConfig, ScoreNetwork};
use crate::sde::VpSchedule;
use crate::training::{self, TrainConfig};

/// Semicolon-separated points of comma-separated coordinates, `1,2;3,4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Points(pub Vec<Vec<f64>>);

impl FromStr for Points {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(';')
            .map(|p| p.parse::<Point>().map(|p| p.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Points)
    }
}

/// Comma-separated coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl FromStr for Point {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v = s
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| format!("{c:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        Ok(Point(v))
    }
}

/// Per-coordinate `lo:hi` pairs separated by commas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxBounds(pub Vec<(f64, f64)>);

impl FromStr for BoxBounds {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|pair| {
                let (lo, hi) = pair
                    .split_once(':')
                    .ok_or_else(|| format!("{pair:?} is not lo:hi"))?;
                let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
                let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
                if !(lo <= hi) {
                    return Err(format!("{pair:?} needs lo <= hi"));
                }
                Ok((lo, hi))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(BoxBounds)
    }
}

#[derive(Parser)]
#[command(name = "mango", version, about = "Offline optimization with a design-score diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic offline dataset with its best samples removed.
    GenData(GenDataFlags),
    /// Train a score network on a dataset.
    Train(TrainFlags),
    /// Generate candidate designs from a checkpoint.
    Sample(SampleFlags),
    /// Predict the scores of a design.
    Predict(PredictFlags),
    /// Estimate a checkpoint's fidelity on its training data.
    Fidelity(FidelityFlags),
    /// Score candidates with the task's true objectives.
    Eval(EvalFlags),
    /// Re-run a manifest and compare output digests.
    Replay(ReplayFlags),
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct GenDataFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    removal: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct GenData {
    pub task: Option<String>,
    /// Defaults to 10,000 for one objective and 60,000 otherwise.
    pub n: Option<usize>,
    pub removal: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct TrainFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    time_embed: Option<usize>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    /// Multiplier applied to both rates, e.g. the step count when the rates
    /// are given per discrete step.
    #[arg(long)]
    schedule_scale: Option<f64>,
    /// Reverse steps stored with the schedule.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Train {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub depth: usize,
    pub time_embed: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub schedule_scale: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for Train {
    fn default() -> Self {
        let t = TrainConfig::default();
        let n = NetConfig::new(1, 1);
        let s = VpSchedule::default();
        Train {
            data: None,
            out: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr_peak,
            weight_decay: t.weight_decay,
            hidden: n.hidden_width,
            depth: n.depth,
            time_embed: n.time_embed_dim,
            beta_min: s.beta_min,
            beta_max: s.beta_max,
            schedule_scale: 1.0,
            steps: s.steps,
            seed: 0,
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SampleFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Candidates CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Preferred scores in task units, e.g. `0.4` or `-1,-1;0,-2`.
    #[arg(long, allow_hyphen_values = true)]
    y_pref: Option<Points>,
    /// Design box in task units, e.g. `0:1,2:3`.
    #[arg(long = "box", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    design_box: Option<BoxBounds>,
    #[arg(long)]
    alpha_x: Option<f64>,
    #[arg(long)]
    alpha_y: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// none, self-is or fks.
    #[arg(long)]
    scaling: Option<ScalingMode>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    alpha_i: Option<f64>,
    #[arg(long)]
    every: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    m_fidelity: Option<usize>,
    /// Training dataset, needed for the fidelity gate when scaling.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Points in the default reference front.
    #[arg(long)]
    pf_resolution: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Sample {
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: usize,
    pub y_pref: Option<Points>,
    #[serde(rename = "box")]
    pub design_box: Option<BoxBounds>,
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub steps: usize,
    pub seed: u64,
    pub scaling: ScalingMode,
    pub j: usize,
    pub alpha_i: f64,
    pub every: usize,
    pub tau: Option<f64>,
    pub m_fidelity: usize,
    pub data: Option<PathBuf>,
    pub pf_resolution: Option<usize>,
}

impl Default for Sample {
    fn default() -> Self {
        let s = ScalingConfig::new(ScalingMode::None, false);
        Sample {
            checkpoint: None,
            out: None,
            k: 128,
            y_pref: None,
            design_box: None,
            alpha_x: 0.0,
            alpha_y: 1.0,
            steps: VpSchedule::default().steps,
            seed: 0,
            scaling: ScalingMode::None,
            j: s.j,
            alpha_i: s.alpha_i,
            every: s.every,
            tau: None,
            m_fidelity: s.m_fidelity,
            data: None,
            pf_resolution: None,
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct PredictFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Design in task units, e.g. `3.14,2.27`.
    #[arg(long, allow_hyphen_values = true)]
    design: Option<Point>,
    /// Prediction JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha_x: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Predict {
    pub checkpoint: Option<PathBuf>,
    pub design: Option<Point>,
    pub out: Option<PathBuf>,
    pub alpha_x: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for Predict {
    fn default() -> Self {
        Predict {
            checkpoint: None,
            design: None,
            out: None,
            alpha_x: guidance::PREDICT_ALPHA_X,
            steps: guidance::PREDICT_STEPS,
            seed: 0,
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct FidelityFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fidelity JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    m_fidelity: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Fidelity {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub m_fidelity: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for Fidelity {
    fn default() -> Self {
        Fidelity {
            checkpoint: None,
            data: None,
            out: None,
            m_fidelity: ScalingConfig::new(ScalingMode::None, false).m_fidelity,
            steps: VpSchedule::default().steps,
            seed: 0,
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct EvalFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Candidates CSV with its task sidecar.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Training dataset CSV the candidates are compared with.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides the task recorded in the candidates' sidecar.
    #[arg(long)]
    task: Option<String>,
    /// Report JSON to write; a one-row CSV is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pf_resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct Eval {
    pub candidates: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub task: Option<String>,
    pub out: Option<PathBuf>,
    pub pf_resolution: usize,
    pub seed: u64,
}

impl Default for Eval {
    fn default() -> Self {
        Eval {
            candidates: None,
            data: None,
            task: None,
            out: None,
            pf_resolution: PF_RESOLUTION,
            seed: 0,
        }
    }
}

#[derive(Args)]
struct ReplayFlags {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving the re-created outputs.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on usage errors and 2 on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, argv) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("MANGO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Runtime(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

/// Layers flags over the config file over `R::default()`.
fn layer<R>(flags: &impl Serialize, config: Option<&Path>) -> CliResult<R>
where
    R: Serialize + DeserializeOwned + Default,
{
    let mut merged = match serde_json::to_value(R::default()).map_err(Error::from)? {
        Value::Object(map) => map,
        _ => unreachable!("config structs serialize to objects"),
    };
    if let Some(path) = config {
        let file: Value = io::read_json(path)?;
        let Value::Object(file) = file else {
            return Err(Error::schema(path, "config must be a JSON object").into());
        };
        // Keys for other commands are ignored so one file can serve a pipeline.
        for (k, v) in file {
            if merged.contains_key(&k) {
                merged.insert(k, v);
            }
        }
    }
    if let Value::Object(flags) = serde_json::to_value(flags).map_err(Error::from)? {
        for (k, v) in flags {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn dispatch(command: Command, argv: Vec<String>) -> CliResult<()> {
    match command {
        Command::GenData(f) => {
            let cfg: GenData = layer(&f, f.config.as_deref())?;
            gen_data(cfg, argv).map(drop)
        }
        Command::Train(f) => {
            let cfg: Train = layer(&f, f.config.as_deref())?;
            train(cfg, argv).map(drop)
        }
        Command::Sample(f) => {
            let cfg: Sample = layer(&f, f.config.as_deref())?;
            sample(cfg, argv).map(drop)
        }
        Command::Predict(f) => {
            let cfg: Predict = layer(&f, f.config.as_deref())?;
            predict(cfg, argv).map(drop)
        }
        Command::Fidelity(f) => {
            let cfg: Fidelity = layer(&f, f.config.as_deref())?;
            fidelity(cfg, argv).map(drop)
        }
        Command::Eval(f) => {
            let cfg: Eval = layer(&f, f.config.as_deref())?;
            eval(cfg, argv).map(drop)
        }
        Command::Replay(f) => replay(&f.manifest, &f.out_dir),
    }
}

struct Recorder {
    command: &'static str,
    argv: Vec<String>,
    started: Instant,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    seeds: BTreeMap<String, u64>,
    checkpoint_id: Option<String>,
    notes: BTreeMap<String, Value>,
}

impl Recorder {
    fn new(command: &'static str, argv: Vec<String>) -> Self {
        Recorder {
            command,
            argv,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            checkpoint_id: None,
            notes: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        if let Ok(v) = serde_json::to_value(value) {
            self.notes.insert(key.to_string(), v);
        }
    }

    /// Writes the manifest next to `primary` and returns it.
    fn finish(self, config: &impl Serialize, primary: &Path) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv: self.argv,
            config: serde_json::to_value(config)?,
            seeds: self.seeds,
            checkpoint_id: self.checkpoint_id,
            inputs: self.inputs,
            outputs: self.outputs,
            notes: self.notes,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        manifest.write(primary)?;
        Ok(manifest)
    }
}

fn parse_task(id: &str) -> CliResult<Task> {
    id.parse::<Task>().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn gen_data(mut cfg: GenData, argv: Vec<String>) -> CliResult<RunManifest> {
    let task = parse_task(required(&cfg.task, "task")?)?;
    let out = required(&cfg.out, "out")?.clone();
    let n = *cfg
        .n
        .get_or_insert(if task.is_multi_objective() { 60_000 } else { 10_000 });
    let mut rec = Recorder::new("gen-data", argv);
    rec.seeds.insert("seed".into(), cfg.seed);
    let ds = bench::generate_dataset(task, n, cfg.removal, cfg.seed)?;
    let sidecar = TaskSidecar::from(&task.spec());
    for p in io::write_dataset(&out, &sidecar, &io::dataset_rows(&ds))? {
        rec.output(&p)?;
    }
    println!("wrote {} samples to {}", ds.len(), out.display());
    Ok(rec.finish(&cfg, &out)?)
}

fn normalized_front(ds: &OfflineDataset, norm: &Normalizer) -> Result<Vec<Vec<f64>>> {
    let scores = ds.scores();
    Ok(pareto::first_front(&scores)?
        .into_iter()
        .map(|i| norm.score.normalize(&scores[i]))
        .collect())
}

pub fn train(cfg: Train, argv: Vec<String>) -> CliResult<RunManifest> {
    let data = required(&cfg.data, "data")?.clone();
    let out = required(&cfg.out, "out")?.clone();
    let mut rec = Recorder::new("train", argv);
    rec.seeds.insert("seed".into(), cfg.seed);
    rec.input(&data)?;
    rec.input(&io::sidecar_path(&data))?;
    let (ds, sidecar) = io::read_dataset(&data)?;
    let norm = Normalizer::fit(&ds)?;
    let rows = norm.transform(&ds);
    let weights = training::compute_weights(&ds)?;
    let net_cfg = NetConfig {
        hidden_width: cfg.hidden,
        depth: cfg.depth,
        time_embed_dim: cfg.time_embed,
        ..NetConfig::new(ds.d, ds.m)
    };
    if !(cfg.schedule_scale > 0.0 && cfg.schedule_scale.is_finite()) {
        return Err(CliError::Usage(format!("schedule-scale must be > 0, got {}", cfg.schedule_scale)));
    }
    let sched = VpSchedule::new(
        cfg.beta_min * cfg.schedule_scale,
        cfg.beta_max * cfg.schedule_scale,
        cfg.steps,
    )?;
    let net0 = ScoreNetwork::init(net_cfg, sched, cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr_peak: cfg.lr,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
    };
    let front = normalized_front(&ds, &norm)?;
    let (net, log) = match training::train_rows(&rows, &weights.0, &tcfg, net0, |_| {}) {
        Ok(r) => r,
        Err(Error::Divergence { epoch, checkpoint }) => {
            let path = out.with_extension("diverged.json");
            Checkpoint::new(sidecar, &checkpoint, norm, front, epoch, None).save(&path)?;
            eprintln!("training diverged; last finite model saved to {}", path.display());
            return Err(Error::Divergence { epoch, checkpoint }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let ck = Checkpoint::new(sidecar, &net, norm, front, cfg.epochs, log.final_loss());
    rec.checkpoint_id = Some(ck.save(&out)?);
    rec.output(&out)?;
    let log_path = out.with_extension("log.csv");
    let mut buf = Vec::new();
    log.write_csv(&mut buf)
        .map_err(|e| Error::io(&log_path, e))?;
    io::write_atomic(&log_path, &buf)?;
    rec.output(&log_path)?;
    rec.note("final_loss", log.final_loss());
    println!(
        "trained {} epochs, final loss {}",
        cfg.epochs,
        log.final_loss().unwrap_or(f64::NAN)
    );
    Ok(rec.finish(&cfg, &out)?)
}

/// Preferred scores in task units (original orientation) used when none are
/// given: the known optimum or discretized front of a registered task, or
/// points shifted 10% past the training front otherwise.
pub fn default_targets(ck: &Checkpoint, k: usize, resolution: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let internal: Vec<Vec<f64>> = match ck.task.task_id.parse::<Task>() {
        Ok(task) => evaluation::truth_reference(task, resolution.unwrap_or(k))?,
        Err(_) => {
            let mut front = ck.train_front.clone();
            front.sort_by(|a, b| a[0].total_cmp(&b[0]));
            let want = resolution.unwrap_or(k).min(front.len()).max(1);
            let picked: Vec<Vec<f64>> = (0..want)
                .map(|i| front[if want == 1 { 0 } else { i * (front.len() - 1) / (want - 1) }].clone())
                .collect();
            picked
                .into_iter()
                .map(|y| ck.normalizer.score.denormalize(&y.iter().map(|v| v - 0.1).collect::<Vec<_>>()))
                .collect()
        }
    };
    Ok(internal
        .into_iter()
        .map(|y| y.iter().zip(ck.sense()).map(|(&v, s)| s.orient(v)).collect())
        .collect())
}

fn load_checkpoint(path: &Path, rec: &mut Recorder) -> Result<Checkpoint> {
    let (ck, id) = Checkpoint::load(path)?;
    rec.input(path)?;
    rec.checkpoint_id = Some(id);
    Ok(ck)
}

/// Candidate rows in task units, dropping flagged chains.
fn candidate_rows(ck: &Checkpoint, out: &SampleOutput) -> Vec<Vec<f64>> {
    out.samples
        .iter()
        .filter(|g| !g.flagged)
        .map(|g| ck.to_task_units(&g.state))
        .collect()
}

fn fidelity_seed(seed: u64) -> u64 {
    rng::derive(&[seed, 0xF1DE])
}

pub fn sample(mut cfg: Sample, argv: Vec<String>) -> CliResult<RunManifest> {
    let ck_path = required(&cfg.checkpoint, "checkpoint")?.clone();
    let out = required(&cfg.out, "out")?.clone();
    let mut rec = Recorder::new("sample", argv);
    rec.seeds.insert("seed".into(), cfg.seed);
    let ck = load_checkpoint(&ck_path, &mut rec)?;
    let net = ck.network()?;
    let sched = ck.schedule;
    let d = ck.d();
    if cfg.alpha_y > 0.0 && cfg.y_pref.is_none() {
        cfg.y_pref = Some(Points(default_targets(&ck, cfg.k, cfg.pf_resolution)?));
    }
    let y_pref = match &cfg.y_pref {
        Some(p) => ck.normalize_targets(&p.0)?,
        None => Vec::new(),
    };
    let design_box = match &cfg.design_box {
        Some(b) => {
            if b.0.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.0.len(),
                }
                .into());
            }
            let (lo, hi): (Vec<f64>, Vec<f64>) = b.0.iter().copied().unzip();
            let (lo, hi) = (ck.normalizer.design.normalize(&lo), ck.normalizer.design.normalize(&hi));
            Some(lo.into_iter().zip(hi).collect())
        }
        None => None,
    };
    let gcfg = GuidanceConfig {
        y_pref,
        design_box,
        alpha_x: cfg.alpha_x,
        alpha_y: cfg.alpha_y,
        steps: cfg.steps,
        seed: cfg.seed,
    };
    let output = if cfg.scaling == ScalingMode::None {
        guidance::sample(&net, &sched, d, &gcfg, cfg.k, false)?
    } else {
        let tau = *cfg.tau.get_or_insert(if ck.m() > 1 {
            scaling::TAU_MOO
        } else {
            scaling::TAU_SOO
        });
        let scfg = ScalingConfig {
            mode: cfg.scaling,
            j: cfg.j,
            alpha_i: cfg.alpha_i,
            every: cfg.every,
            tau,
            m_fidelity: cfg.m_fidelity,
        };
        scfg.validate()?;
        let data = required(&cfg.data, "data")?.clone();
        rec.input(&data)?;
        let (ds, _) = io::read_dataset(&data)?;
        let rows = ck.normalizer.transform(&ds);
        let fid = scaling::fidelity(&net, &sched, &rows, d, cfg.m_fidelity, cfg.steps, fidelity_seed(cfg.seed))?;
        rec.note("fidelity", &fid);
        rec.note("scaling_active", scfg.active(fid.fidelity));
        match cfg.scaling {
            ScalingMode::SelfIs => {
                scaling::self_is_sample(&net, &sched, d, &gcfg, &scfg, fid.fidelity, cfg.k, false)?
            }
            _ => scaling::fks_sample(&net, &sched, d, &gcfg, &scfg, fid.fidelity, cfg.k, false)?.0,
        }
    };
    let rows = candidate_rows(&ck, &output);
    let flagged = cfg.k - rows.len();
    rec.note("flagged", flagged);
    for p in io::write_dataset(&out, &ck.task, &rows)? {
        rec.output(&p)?;
    }
    println!("wrote {} candidates to {} ({flagged} flagged)", rows.len(), out.display());
    Ok(rec.finish(&cfg, &out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub design: Vec<f64>,
    pub score: Vec<f64>,
    pub converged: bool,
}

pub fn predict(cfg: Predict, argv: Vec<String>) -> CliResult<RunManifest> {
    let ck_path = required(&cfg.checkpoint, "checkpoint")?.clone();
    let design = required(&cfg.design, "design")?.0.clone();
    let out = required(&cfg.out, "out")?.clone();
    let mut rec = Recorder::new("predict", argv);
    rec.seeds.insert("seed".into(), cfg.seed);
    let ck = load_checkpoint(&ck_path, &mut rec)?;
    let net = ck.network()?;
    let gcfg = GuidanceConfig {
        alpha_x: cfg.alpha_x,
        ..GuidanceConfig::unconditional(cfg.steps, cfg.seed)
    };
    let p = ck.predict(&net, &design, &gcfg)?;
    let score = p.score;
    let report = PredictionReport {
        design,
        score,
        converged: p.converged,
    };
    io::write_json(&out, &report)?;
    rec.output(&out)?;
    if !report.converged {
        eprintln!("warning: prediction unconverged (design drifted beyond tolerance)");
    }
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(rec.finish(&cfg, &out)?)
}

pub fn fidelity(cfg: Fidelity, argv: Vec<String>) -> CliResult<RunManifest> {
    let ck_path = required(&cfg.checkpoint, "checkpoint")?.clone();
    let data = required(&cfg.data, "data")?.clone();
    let out = required(&cfg.out, "out")?.clone();
    let mut rec = Recorder::new("fidelity", argv);
    rec.seeds.insert("seed".into(), cfg.seed);
    let ck = load_checkpoint(&ck_path, &mut rec)?;
    rec.input(&data)?;
    let (ds, _) = io::read_dataset(&data)?;
    let net = ck.network()?;
    let rows = ck.normalizer.transform(&ds);
    let rep = scaling::fidelity(&net, &ck.schedule, &rows, ck.d(), cfg.m_fidelity, cfg.steps, fidelity_seed(cfg.seed))?;
    io::write_json(&out, &rep)?;
    rec.output(&out)?;
    println!("{}", serde_json::to_string(&rep).map_err(Error::from)?);
    Ok(rec.finish(&cfg, &out)?)
}

pub fn eval(cfg: Eval, argv: Vec<String>) -> CliResult<RunManifest> {
    let cands = required(&cfg.candidates, "candidates")?.clone();
    let data = required(&cfg.data, "data")?.clone();
    let out = required(&cfg.out, "out")?.clone();
    let mut rec = Recorder::new("eval", argv);
    rec.seeds.insert("seed".into(), cfg.seed);
    rec.input(&cands)?;
    rec.input(&data)?;
    let side: TaskSidecar = io::read_json(&io::sidecar_path(&cands))?;
    let task = parse_task(cfg.task.as_deref().unwrap_or(&side.task_id))?;
    let (dm, m) = task.dims();
    if side.d != dm || side.m != m {
        return Err(Error::schema(&cands, format!("sidecar dimensions do not match task {task}")).into());
    }
    let designs: Vec<Vec<f64>> = io::read_rows(&cands, side.d, side.m)?
        .into_iter()
        .map(|mut r| {
            r.truncate(side.d);
            r
        })
        .collect();
    let (train_ds, _) = io::read_dataset(&data)?;
    let report = evaluation::evaluate_designs(task, &designs, &train_ds.scores(), cfg.pf_resolution, cfg.seed)?;
    io::write_json(&out, &report)?;
    rec.output(&out)?;
    let csv_path = out.with_extension("csv");
    io::write_atomic(
        &csv_path,
        format!("{}\n{}\n", pareto::EvalReport::CSV_HEADER, report.csv_row()).as_bytes(),
    )?;
    rec.output(&csv_path)?;
    println!(
        "{task}: normalized HV {} normalized IGD {}",
        report.normalized_hv, report.normalized_igd
    );
    Ok(rec.finish(&cfg, &out)?)
}

fn redirect<R: DeserializeOwned + Serialize>(config: &Value, out_dir: &Path) -> CliResult<R> {
    let mut cfg = config.clone();
    let out = cfg
        .get("out")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Usage("manifest config has no output path".into()))?;
    let name = Path::new(out)
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("bad output path {out:?}")))?;
    cfg["out"] = Value::String(out_dir.join(name).to_string_lossy().into_owned());
    serde_json::from_value(cfg).map_err(|e| CliError::Usage(format!("manifest config: {e}")))
}

/// Re-runs the command recorded in a manifest with outputs redirected into
/// `out_dir` and checks that every output digest matches.
pub fn replay(manifest: &Path, out_dir: &Path) -> CliResult<()> {
    let original = RunManifest::read(manifest)?;
    let argv = vec![
        "mango".to_string(),
        "replay".to_string(),
        manifest.to_string_lossy().into_owned(),
    ];
    let c = &original.config;
    let replayed = match original.command.as_str() {
        "gen-data" => gen_data(redirect(c, out_dir)?, argv)?,
        "train" => train(redirect(c, out_dir)?, argv)?,
        "sample" => sample(redirect(c, out_dir)?, argv)?,
        "predict" => predict(redirect(c, out_dir)?, argv)?,
        "fidelity" => fidelity(redirect(c, out_dir)?, argv)?,
        "eval" => eval(redirect(c, out_dir)?, argv)?,
        other => return Err(CliError::Usage(format!("cannot replay command {other:?}"))),
    };
    let by_name = |m: &RunManifest| -> BTreeMap<OsString, String> {
        m.outputs
            .iter()
            .map(|o| (o.path.file_name().unwrap_or_default().to_os_string(), o.sha256.clone()))
            .collect()
    };
    let (want, got) = (by_name(&original), by_name(&replayed));
    let mismatched: Vec<String> = want
        .iter()
        .filter(|(k, v)| got.get(*k) != Some(*v))
        .map(|(k, _)| k.to_string_lossy().into_owned())
        .collect();
    if mismatched.is_empty() && want.len() == got.len() {
        println!("replay: {} outputs identical", want.len());
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("replay outputs differ: {}", mismatched.join(", "))).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        assert_eq!("0.4".parse::<Points>().unwrap().0, vec![vec![0.4]]);
        assert_eq!(
            "-1,-1;0,-2".parse::<Points>().unwrap().0,
            vec![vec![-1.0, -1.0], vec![0.0, -2.0]]
        );
        assert!("1,x".parse::<Points>().is_err());
        assert!("nan".parse::<Point>().is_err());
    }

    #[test]
    fn box_parse() {
        assert_eq!(
            "0:1,-2:3".parse::<BoxBounds>().unwrap().0,
            vec![(0.0, 1.0), (-2.0, 3.0)]
        );
        assert!("1:0".parse::<BoxBounds>().is_err());
        assert!("1".parse::<BoxBounds>().is_err());
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 5, "n": 50, "epochs": 3}"#).unwrap();
        let flags = GenDataFlags {
            config: None,
            task: Some("branin".into()),
            n: Some(70),
            removal: None,
            seed: None,
            out: None,
        };
        let cfg: GenData = layer(&flags, Some(&path)).ok().unwrap();
        assert_eq!(cfg.n, Some(70));
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.removal, 0.0);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["mango", "gen-data", "--bogus"]), 1);
        assert_eq!(run(["mango", "gen-data", "--task", "branin"]), 1);
        assert_eq!(run(["mango", "gen-data", "--task", "nope", "--out", "x.csv"]), 1);
        assert_eq!(run(["mango", "--help"]), 0);
    }
}
