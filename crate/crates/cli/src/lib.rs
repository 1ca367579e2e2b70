//! Command-line harness around `ccg-core`: data generation, training,
//! evaluation, player-count and ablation sweeps, sensitivity sweeps and graph
//! export. The binary is a thin wrapper over [`run`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use ccg_core::data::{load_dataset, Dataset, PlantedWorld, SyntheticSpec};
use ccg_core::evaluation::{evaluate, structure_score, EvalOptions, MetricsReport, StructureScore};
use ccg_core::graph::export_dot;
use ccg_core::training::{log_to_jsonl, train, Ablation, EpochRecord, TrainConfig, TrainedModel};
use ccg_core::{generate_synthetic, CcgError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const MODEL_FILE: &str = "model.json";
pub const CONFIG_FILE: &str = "config.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const WORLD_FILE: &str = "world.json";

#[derive(Debug, Parser)]
#[command(name = "ccg", version, about = "Causal cooperative multi-label training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and one dataset per environment.
    Gen(GenArgs),
    /// Train a model and write its run directory.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Train and evaluate once per player count.
    SweepPlayers(SweepArgs),
    /// Train the full model and its one-component ablations.
    Ablate(AblateArgs),
    /// Train and evaluate over a range of one hyperparameter.
    Sensitivity(SensitivityArgs),
    /// Write the learned label graph in DOT format.
    ExportGraph(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub labels: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub envs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of forward label pairs that get a planted edge.
    #[arg(long, default_value_t = 0.2)]
    pub edge_density: f64,
    /// Move this fraction of environment 0 into `test.jsonl` (seeded shuffle).
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by every command that trains.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat JSON file with TrainConfig keys; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub n_players: Option<usize>,
    #[arg(long)]
    pub k_topk: Option<usize>,
    #[arg(long)]
    pub m_envs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr_main: Option<f64>,
    #[arg(long)]
    pub lr_aux: Option<f64>,
    #[arg(long)]
    pub rare_pct: Option<f64>,
    /// Any other TrainConfig key, e.g. `--set lambda_rare=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Comma-separated components to switch off: cgm, ccr, cil, mpd, rle.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Planted world; when given, environment views perturb only its spurious features.
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ood: Option<PathBuf>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "20,30,40,50")]
    pub rare_pcts: Vec<f64>,
    /// Pool confusion counts over rare labels instead of averaging per-label F1.
    #[arg(long)]
    pub micro: bool,
    /// Output directory for report.json and report.csv; defaults to the model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Data flags for the sweep commands.
#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out in-distribution test file.
    #[arg(long)]
    pub test: PathBuf,
    /// Shifted test file.
    #[arg(long)]
    pub ood: Option<PathBuf>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,10")]
    pub players: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Restrict to these ablations (the full model is always included).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// One of gamma, eta, gamma_r, m_envs.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Destination file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing files, malformed input: exit code 1.
    Usage(anyhow::Error),
    /// Training diverged: exit code 2.
    Numerical(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Numerical(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        let numerical = e
            .chain()
            .any(|c| c.downcast_ref::<CcgError>().is_some_and(CcgError::is_numerical));
        if numerical {
            CliError::Numerical(e)
        } else {
            CliError::Usage(e)
        }
    }
}

impl From<CcgError> for CliError {
    fn from(e: CcgError) -> Self {
        anyhow::Error::from(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Caps the worker pool at `CCG_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var("CCG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::SweepPlayers(a) => cmd_sweep_players(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::Sensitivity(a) => cmd_sensitivity(&a).map(|_| ()),
        Command::ExportGraph(a) => cmd_export_graph(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path, None).with_context(|| format!("loading dataset {}", path.display()))
}

fn read_world(path: Option<&Path>) -> anyhow::Result<Option<PlantedWorld>> {
    path.map(|p| PlantedWorld::load(p).with_context(|| format!("loading world {}", p.display())))
        .transpose()
}

/// Dataset file name for environment `e`.
pub fn env_file_name(e: usize) -> String {
    format!("env{e}.jsonl")
}

pub const TEST_FILE: &str = "test.jsonl";

/// Writes `env{e}.jsonl` per environment and `world.json`, plus `test.jsonl`
/// when `--holdout` is positive. Returns the written paths.
pub fn cmd_gen(a: &GenArgs) -> CliResult<Vec<PathBuf>> {
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(CliError::Usage(anyhow!(
            "--holdout must be in [0, 1), got {}",
            a.holdout
        )));
    }
    let spec = SyntheticSpec {
        labels: a.labels,
        dim: a.dim,
        samples: a.samples,
        envs: a.envs,
        seed: a.seed,
        edge_density: a.edge_density,
    };
    let (mut datasets, world) = generate_synthetic(&spec).context("generating synthetic data")?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    if a.holdout > 0.0 {
        let (train, test) = datasets[0].split_shuffled(a.holdout, a.seed ^ 0x7e57)?;
        datasets[0] = train;
        let path = a.out.join(TEST_FILE);
        test.save_jsonl(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    for (e, ds) in datasets.iter().enumerate() {
        let path = a.out.join(env_file_name(e));
        ds.save_jsonl(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    let path = a.out.join(WORLD_FILE);
    world
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}

fn set_key(cfg: TrainConfig, assignment: &str) -> anyhow::Result<TrainConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{assignment}'"))?;
    let mut value = serde_json::to_value(&cfg)?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let obj = value.as_object_mut().expect("config serializes to an object");
    if !obj.contains_key(key) {
        bail!("unknown config key '{key}'");
    }
    obj.insert(key.to_string(), parsed);
    serde_json::from_value(value).with_context(|| format!("invalid value for '{key}'"))
}

/// Config file (or defaults), then explicit flags, then `--set`, then ablations.
pub fn resolve_config(a: &ConfigArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.warmup_epochs {
        cfg.warmup_epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.n_players {
        cfg.n_players = v;
    }
    if let Some(v) = a.k_topk {
        cfg.k_topk = v;
    }
    if let Some(v) = a.m_envs {
        cfg.m_envs = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.lr_main {
        cfg.lr_main = v;
    }
    if let Some(v) = a.lr_aux {
        cfg.lr_aux = v;
    }
    if let Some(v) = a.rare_pct {
        cfg.rare_pct = v;
    }
    for s in &a.set {
        cfg = set_key(cfg, s)?;
    }
    for name in &a.ablate {
        cfg.apply_ablation(name.parse::<Ablation>()?);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PartitionFile<'a> {
    players: &'a [Vec<usize>],
}

/// Writes the run directory: model, config, partition, final graph, epoch log.
pub fn write_run_dir(dir: &Path, model: &TrainedModel, log: &[EpochRecord]) -> anyhow::Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(MODEL_FILE), &model.to_json()?)?;
    write_file(
        &dir.join(CONFIG_FILE),
        &(serde_json::to_string_pretty(&model.config)? + "\n"),
    )?;
    let partition = PartitionFile {
        players: &model.players,
    };
    write_file(
        &dir.join(PARTITION_FILE),
        &(serde_json::to_string_pretty(&partition)? + "\n"),
    )?;
    write_file(
        &dir.join(GRAPH_FILE),
        &(serde_json::to_string_pretty(&model.graph)? + "\n"),
    )?;
    write_file(&dir.join(LOG_FILE), &log_to_jsonl(log)?)?;
    Ok(())
}

/// Trains, writing the run directory even when training aborts.
fn train_to_dir(
    ds: &Dataset,
    world: Option<&PlantedWorld>,
    cfg: &TrainConfig,
    dir: &Path,
) -> CliResult<(TrainedModel, Vec<EpochRecord>)> {
    match train(ds, world, cfg) {
        Ok(out) => {
            write_run_dir(dir, &out.model, &out.log)?;
            Ok((out.model, out.log))
        }
        Err(abort) => {
            if let Some(ck) = &abort.checkpoint {
                write_run_dir(dir, ck, &abort.log)?;
            }
            let numerical = abort.error.is_numerical();
            let err = anyhow::Error::new(abort.error).context("training aborted; last finite checkpoint kept");
            Err(if numerical {
                CliError::Numerical(err)
            } else {
                CliError::Usage(err)
            })
        }
    }
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<TrainedModel> {
    let cfg = resolve_config(&a.cfg)?;
    let ds = read_dataset(&a.data)?;
    let world = read_world(a.world.as_deref())?;
    let (model, _) = train_to_dir(&ds, world.as_ref(), &cfg, &a.out)?;
    Ok(model)
}

pub fn load_model_dir(dir: &Path) -> anyhow::Result<TrainedModel> {
    let path = dir.join(MODEL_FILE);
    TrainedModel::load(&path).with_context(|| format!("loading model {}", path.display()))
}

/// Evaluates `model` on `id` (and `ood`), with structure scores against `world`.
pub fn evaluate_model(
    model: &TrainedModel,
    id: &Dataset,
    ood: Option<&Dataset>,
    world: Option<&PlantedWorld>,
    opts: &EvalOptions,
) -> anyhow::Result<MetricsReport> {
    let mut report = evaluate(model.sem(), &model.union_mask(), id, ood, &model.stats, opts)?;
    if let Some(w) = world {
        let (precision, recall) = structure_score(&model.graph, w)?;
        report.structure = Some(StructureScore { precision, recall });
    }
    Ok(report)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<MetricsReport> {
    let model = load_model_dir(&a.model)?;
    let id = read_dataset(&a.data)?;
    let ood = a.ood.as_deref().map(read_dataset).transpose()?;
    let world = read_world(a.world.as_deref())?;
    let opts = EvalOptions {
        rare_pcts: a.rare_pcts.clone(),
        micro: a.micro,
    };
    let report = evaluate_model(&model, &id, ood.as_ref(), world.as_ref(), &opts)?;
    let out = a.out.clone().unwrap_or_else(|| a.model.clone());
    create_dir(&out)?;
    write_file(&out.join("report.json"), &report.to_json()?)?;
    write_file(&out.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

/// Inputs shared by every run of a sweep.
pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub ood: Option<Dataset>,
    pub world: Option<PlantedWorld>,
}

impl Experiment {
    pub fn load(a: &ExperimentArgs) -> anyhow::Result<Self> {
        Ok(Self {
            train: read_dataset(&a.data)?,
            test: read_dataset(&a.test)?,
            ood: a.ood.as_deref().map(read_dataset).transpose()?,
            world: read_world(a.world.as_deref())?,
        })
    }
}

/// Scores of one trained configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScores {
    pub map: f64,
    pub rare_f1: f64,
    pub ood_map: Option<f64>,
    pub ood_rare_f1: Option<f64>,
}

impl RunScores {
    /// ID minus OOD Rare-F1, when a shifted test set was scored.
    pub fn rare_f1_drop(&self) -> Option<f64> {
        self.ood_rare_f1.map(|o| self.rare_f1 - o)
    }
}

/// Trains `cfg` on the experiment's training set, writing the run to `dir`,
/// and scores it at the config's rare percentage.
pub fn train_and_score(exp: &Experiment, cfg: &TrainConfig, dir: &Path) -> CliResult<RunScores> {
    let (model, _) = train_to_dir(&exp.train, exp.world.as_ref(), cfg, dir)?;
    let opts = EvalOptions {
        rare_pcts: vec![cfg.rare_pct],
        micro: false,
    };
    let report = evaluate_model(&model, &exp.test, None, exp.world.as_ref(), &opts)?;
    let rare_f1 = report.rare_f1.values().next().copied().unwrap_or(0.0);
    let (ood_map, ood_rare_f1) = match &exp.ood {
        Some(ood) => {
            let r = evaluate_model(&model, ood, None, None, &opts)?;
            (Some(r.map), r.rare_f1.values().next().copied())
        }
        None => (None, None),
    };
    write_file(&dir.join("report.json"), &report.to_json()?)?;
    Ok(RunScores {
        map: report.map,
        rare_f1,
        ood_map,
        ood_rare_f1,
    })
}

fn score_header(exp: &Experiment) -> &'static str {
    if exp.ood.is_some() {
        "map,rare_f1,ood_map,ood_rare_f1"
    } else {
        "map,rare_f1"
    }
}

fn score_cells(s: &RunScores) -> String {
    match (s.ood_map, s.ood_rare_f1) {
        (Some(m), Some(r)) => format!("{},{},{},{}", s.map, s.rare_f1, m, r),
        _ => format!("{},{}", s.map, s.rare_f1),
    }
}

/// One row per player count; `N` must not exceed the label count.
pub fn sweep_players(
    exp: &Experiment,
    base: &TrainConfig,
    ns: &[usize],
    out: &Path,
) -> CliResult<Vec<(usize, RunScores)>> {
    if ns.is_empty() {
        return Err(CliError::Usage(anyhow!("empty player list")));
    }
    let l = exp.train.num_labels();
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > l) {
        return Err(CliError::Usage(anyhow!("player count {n} outside 1..={l}")));
    }
    create_dir(out)?;
    let mut rows = Vec::new();
    let mut csv = format!("n_players,{}\n", score_header(exp));
    for &n in ns {
        let cfg = TrainConfig {
            n_players: n,
            ..base.clone()
        };
        let s = train_and_score(exp, &cfg, &out.join(format!("n{n}")))?;
        let _ = writeln!(csv, "{n},{}", score_cells(&s));
        rows.push((n, s));
    }
    write_file(&out.join("sweep_players.csv"), &csv)?;
    Ok(rows)
}

pub fn cmd_sweep_players(a: &SweepArgs) -> CliResult<Vec<(usize, RunScores)>> {
    let base = resolve_config(&a.exp.cfg)?;
    let exp = Experiment::load(&a.exp)?;
    sweep_players(&exp, &base, &a.players, &a.exp.out)
}

/// Row label for a variant: `full` or `w/o-<name>`.
pub fn variant_name(a: Option<Ablation>) -> String {
    match a {
        None => "full".into(),
        Some(a) => format!("w/o-{a}"),
    }
}

/// The full model followed by each ablation in `ablations`.
pub fn ablate(
    exp: &Experiment,
    base: &TrainConfig,
    ablations: &[Ablation],
    out: &Path,
) -> CliResult<Vec<(String, RunScores)>> {
    create_dir(out)?;
    let variants: Vec<Option<Ablation>> = std::iter::once(None)
        .chain(ablations.iter().copied().map(Some))
        .collect();
    let mut rows = Vec::new();
    let mut csv = format!("variant,{}\n", score_header(exp));
    for v in variants {
        let mut cfg = base.clone();
        if let Some(a) = v {
            cfg.apply_ablation(a);
        }
        let name = variant_name(v);
        let dir = out.join(v.map_or("full", Ablation::as_str));
        let s = train_and_score(exp, &cfg, &dir)?;
        let _ = writeln!(csv, "{name},{}", score_cells(&s));
        rows.push((name, s));
    }
    write_file(&out.join("ablation.csv"), &csv)?;
    Ok(rows)
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<Vec<(String, RunScores)>> {
    let base = resolve_config(&a.exp.cfg)?;
    let ablations: Vec<Ablation> = if a.only.is_empty() {
        Ablation::ALL.to_vec()
    } else {
        a.only
            .iter()
            .map(|s| s.parse::<Ablation>())
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::from)?
    };
    let exp = Experiment::load(&a.exp)?;
    ablate(&exp, &base, &ablations, &a.exp.out)
}

/// Sets one sweepable hyperparameter. `gamma_r` moves both schedule endpoints.
pub fn set_sensitivity_param(cfg: &mut TrainConfig, param: &str, value: f64) -> anyhow::Result<()> {
    match param {
        "gamma" => cfg.gamma = value,
        "eta" => cfg.eta = value,
        "gamma_r" => {
            cfg.gamma_r0 = value;
            cfg.gamma_rt = value;
        }
        "m_envs" => {
            if value < 1.0 || value.fract() != 0.0 {
                bail!("m_envs must be a positive integer, got {value}");
            }
            cfg.m_envs = value as usize;
        }
        other => bail!("unknown sensitivity parameter '{other}' (expected gamma, eta, gamma_r or m_envs)"),
    }
    cfg.validate()?;
    Ok(())
}

pub fn sensitivity(
    exp: &Experiment,
    base: &TrainConfig,
    param: &str,
    values: &[f64],
    out: &Path,
) -> CliResult<Vec<(f64, RunScores)>> {
    if values.is_empty() {
        return Err(CliError::Usage(anyhow!("no values to sweep")));
    }
    let cfgs = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            set_sensitivity_param(&mut cfg, param, v)?;
            Ok(cfg)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    create_dir(out)?;
    let mut rows = Vec::new();
    let mut csv = format!("param,value,{}\n", score_header(exp));
    for (i, (&v, cfg)) in values.iter().zip(&cfgs).enumerate() {
        let s = train_and_score(exp, cfg, &out.join(format!("{param}_{i}")))?;
        let _ = writeln!(csv, "{param},{v},{}", score_cells(&s));
        rows.push((v, s));
    }
    write_file(&out.join("sensitivity.csv"), &csv)?;
    Ok(rows)
}

pub fn cmd_sensitivity(a: &SensitivityArgs) -> CliResult<Vec<(f64, RunScores)>> {
    let base = resolve_config(&a.exp.cfg)?;
    let exp = Experiment::load(&a.exp)?;
    sensitivity(&exp, &base, &a.param, &a.values, &a.exp.out)
}

pub fn cmd_export_graph(a: &ExportArgs) -> CliResult<()> {
    let model = load_model_dir(&a.model)?;
    let dot = export_dot(&model.graph, &model.label_names);
    match &a.out {
        Some(path) => write_file(path, &dot)?,
        None => print!("{dot}"),
    }
    Ok(())
}
