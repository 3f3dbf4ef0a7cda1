//! `g2l` command-line driver.
//!
//! Every command resolves one [`RunConfig`] from `--config`, `--set` and the
//! dedicated flags, validates it, echoes it to `effective-config.txt` and only
//! then starts working. All artifacts land under `--out`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use g2l_core::data::{self, Dataset, FoldSplit, FrameSequence};
use g2l_core::global_search::{history_csv, GlobalCheckpoint, GlobalSearch, Strategy};
use g2l_core::local_search::{
    run_local_search_with, trajectory_csv, LocalSearchConfig, LocalSearchState, LocalTrainer,
};
use g2l_core::metrics::MetricsReport;
use g2l_core::tcn::checkpoint::save_model;
use g2l_core::tcn::{train_and_report, StructureEvaluator};
use g2l_core::{seed, DilationStructure, Error as CoreError, Fitness, RunConfig};
use serde::{Deserialize, Serialize};

pub const HISTORY_FILE: &str = "history.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const POPULATION_FILE: &str = "population.ckpt";
pub const LOCAL_CHECKPOINT_FILE: &str = "local.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_ECHO_FILE: &str = "effective-config.txt";
pub const STRUCTURE_FILE: &str = "structure.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FOLDS_FILE: &str = "folds.json";

/// Prefix of every diagnostic line, for log scrapers.
pub const ERROR_PREFIX: &str = "G2L-ERROR:";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files; exit code 2.
    Config(String),
    /// Anything that failed while working; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "g2l", version, about = "Dilation-rate structure search for temporal convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic segmentation dataset and its folds.
    Synth(CommonArgs),
    /// Genetic search over the sparse dilation set.
    Global(CommonArgs),
    /// Refine a structure with expectation-guided local search.
    Local {
        #[command(flatten)]
        common: CommonArgs,
        /// Initial structure, e.g. `1,2,4|1,2,4`.
        #[arg(long, conflicts_with = "init_file")]
        init: Option<String>,
        /// File holding the initial structure.
        #[arg(long)]
        init_file: Option<PathBuf>,
    },
    /// Global search followed by local refinement of its best structure.
    G2l(CommonArgs),
    /// Full-budget cross-validated evaluation of one structure.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with = "structure_file")]
        structure: Option<String>,
        #[arg(long)]
        structure_file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel fitness evaluations (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override one config key, e.g. `--set global.iterations=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Stop after this many search iterations, leaving a checkpoint.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{ERROR_PREFIX} {}", first.trim_start_matches("error: "));
            eprint!("{text}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{ERROR_PREFIX} {}", e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(common) => {
            let ctx = Context::new(&common, |_| Ok(()))?;
            cmd_synth(&ctx)
        }
        Command::Global(common) => {
            let ctx = Context::new(&common, |_| Ok(()))?;
            cmd_global(&ctx).map(|_| ())
        }
        Command::Local { common, init, init_file } => {
            let ctx = Context::new(&common, |cfg| {
                if let Some(text) = &init {
                    cfg.set("local.init", text)?;
                }
                if let Some(path) = &init_file {
                    cfg.local.init = None;
                    cfg.local.init_file = Some(path.clone());
                }
                Ok(())
            })?;
            let initial = initial_structure(&ctx.cfg)?;
            cmd_local(&ctx, &initial, ctx.resume.as_deref()).map(|_| ())
        }
        Command::G2l(common) => {
            let ctx = Context::new(&common, |_| Ok(()))?;
            cmd_g2l(&ctx)
        }
        Command::Eval { common, structure, structure_file } => {
            let ctx = Context::new(&common, |cfg| {
                if let Some(text) = &structure {
                    cfg.set("eval.structure", text)?;
                }
                if let Some(path) = &structure_file {
                    let text = read_text(path)?;
                    cfg.set("eval.structure", text.trim())?;
                }
                Ok(())
            })?;
            cmd_eval(&ctx)
        }
    }
}

/// Resolved settings shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub workers: usize,
    pub resume: Option<PathBuf>,
    pub stop_after: Option<usize>,
}

impl Context {
    fn new(
        args: &CommonArgs,
        extra: impl FnOnce(&mut RunConfig) -> CliResult<()>,
    ) -> CliResult<Self> {
        let mut cfg = match &args.config {
            Some(path) => RunConfig::parse(&read_text(path)?)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        for assignment in &args.overrides {
            cfg.apply_override(assignment)?;
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        extra(&mut cfg)?;
        cfg.validate()?;
        let workers = match args.workers {
            Some(0) => return Err(config_err("--workers must be >= 1")),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        fs::create_dir_all(&args.out)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
        fs::write(args.out.join(CONFIG_ECHO_FILE), cfg.to_text())?;
        Ok(Self {
            cfg,
            out: args.out.clone(),
            workers,
            resume: args.resume.clone(),
            stop_after: args.stop_after,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file so an interrupted write never leaves a
/// truncated artifact behind.
fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn say(line: std::fmt::Arguments<'_>) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

pub fn cmd_synth(ctx: &Context) -> CliResult<()> {
    let synth = ctx.cfg.synth_config()?;
    let dataset = data::generate_synthetic(&synth)?;
    data::save_dataset(&ctx.out, &dataset)?;
    let folds = data::make_folds(&dataset.ids(), ctx.cfg.synth.folds, ctx.cfg.sub_seed("folds"))?;
    data::save_folds(&ctx.path(FOLDS_FILE), &folds)?;
    let frames: usize = dataset.sequences.iter().map(FrameSequence::len).sum();
    say(format_args!(
        "wrote {} sequences ({frames} frames, {} classes, {} folds) to {}",
        dataset.sequences.len(),
        dataset.num_classes(),
        folds.len(),
        ctx.out.display()
    ));
    Ok(())
}

/// Dataset plus folds from `data.root`.
pub struct LoadedData {
    pub dataset: Dataset,
    pub folds: Vec<FoldSplit>,
}

impl LoadedData {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let root = cfg
            .data
            .root
            .as_ref()
            .ok_or_else(|| config_err("data.root is not set"))?;
        if !root.is_dir() {
            return Err(config_err(format!("data.root {} is not a directory", root.display())));
        }
        let dataset = data::load_dataset(root)?;
        let folds = data::load_folds(&root.join(FOLDS_FILE))?;
        let known = dataset.ids();
        for f in &folds {
            if let Some(id) = f.train.iter().chain(&f.validation).find(|id| !known.contains(id)) {
                return Err(CliError::Runtime(format!(
                    "{}: fold {} names unknown sequence {id:?}",
                    root.join(FOLDS_FILE).display(),
                    f.fold
                )));
            }
        }
        Ok(Self { dataset, folds })
    }

    pub fn template(&self, cfg: &RunConfig) -> CliResult<g2l_core::tcn::TcnConfig> {
        let dim = self
            .dataset
            .feature_dim()
            .ok_or_else(|| CliError::Runtime("dataset has no sequences".into()))?;
        Ok(cfg.tcn_template(dim, self.dataset.num_classes())?)
    }

    pub fn split(&self, fold: usize) -> CliResult<(Vec<FrameSequence>, Vec<FrameSequence>)> {
        let f = self.folds.get(fold).ok_or_else(|| {
            config_err(format!("fold {fold} out of range (dataset has {} folds)", self.folds.len()))
        })?;
        Ok((self.dataset.select(&f.train)?, self.dataset.select(&f.validation)?))
    }
}

/// Fitness function and data of one search fold.
struct SearchSetup {
    template: g2l_core::tcn::TcnConfig,
    train: Vec<FrameSequence>,
    validation: Vec<FrameSequence>,
}

impl SearchSetup {
    fn new(cfg: &RunConfig, data: &LoadedData) -> CliResult<Self> {
        let (train, validation) = data.split(cfg.data.fold)?;
        let template = data.template(cfg)?;
        Ok(Self { template, train, validation })
    }

    fn evaluator<'a>(&'a self, cfg: &RunConfig) -> StructureEvaluator<'a> {
        StructureEvaluator {
            train: &self.train,
            validation: &self.validation,
            model: self.template.clone(),
            training: cfg.train.clone(),
            metric: cfg.metrics.fitness,
            repeats: cfg.global.repeats,
        }
    }

    /// Fitness as the global search would have scored `s`.
    fn fitness(&self, cfg: &RunConfig, s: &DilationStructure) -> CliResult<f64> {
        let root = cfg.sub_seed("global");
        Ok(self
            .evaluator(cfg)
            .evaluate(s, cfg.global.epochs, seed::derive_str(root, &s.encode()))?)
    }
}

pub struct GlobalResult {
    pub best: DilationStructure,
    pub fitness: f64,
    /// False when `--stop-after` interrupted the search.
    pub finished: bool,
}

fn load_global_checkpoint(path: &Path) -> CliResult<GlobalCheckpoint> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: corrupt checkpoint: {e}", path.display())))
}

fn run_global(ctx: &Context, setup: &SearchSetup, resume: Option<&Path>) -> CliResult<GlobalResult> {
    let cfg = &ctx.cfg;
    let gcfg = cfg.global_config()?;
    let evaluator = setup.evaluator(cfg);
    let mut search = match resume {
        Some(path) => {
            let ckpt = load_global_checkpoint(path)?;
            if ckpt.config != gcfg {
                return Err(config_err(format!(
                    "{}: checkpoint was written with a different global search configuration",
                    path.display()
                )));
            }
            GlobalSearch::resume(ckpt, ctx.workers)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        }
        None => GlobalSearch::start(gcfg, Strategy::Genetic, &evaluator, ctx.workers)?,
    };
    write_json(&ctx.path(POPULATION_FILE), &search.checkpoint())?;
    write_atomic(&ctx.path(HISTORY_FILE), history_csv(search.history()).as_bytes())?;

    let mut steps = 0;
    while !search.is_done() {
        if ctx.stop_after.is_some_and(|n| steps >= n) {
            say(format_args!("stopped after iteration {}", search.iteration()));
            let best = search.population().best().expect("non-empty population");
            return Ok(GlobalResult {
                best: best.structure.clone(),
                fitness: best.fitness.unwrap_or(0.0),
                finished: false,
            });
        }
        let row = search.step(&evaluator)?;
        say(format_args!(
            "global {}/{} best {:.2} mean {:.2} {}",
            row.iteration, cfg.global.iterations, row.best_fitness, row.mean_fitness, row.best_structure
        ));
        write_json(&ctx.path(POPULATION_FILE), &search.checkpoint())?;
        write_atomic(&ctx.path(HISTORY_FILE), history_csv(search.history()).as_bytes())?;
        steps += 1;
    }
    for w in search.warnings() {
        eprintln!("warning: iteration {}: {}", w.iteration, w.message);
    }
    let outcome = search.finish();
    let best = outcome.best();
    write_atomic(&ctx.path(STRUCTURE_FILE), format!("{}\n", best.structure).as_bytes())?;
    Ok(GlobalResult {
        best: best.structure.clone(),
        fitness: best.fitness.unwrap_or(0.0),
        finished: true,
    })
}

pub fn cmd_global(ctx: &Context) -> CliResult<GlobalResult> {
    let data = LoadedData::load(&ctx.cfg)?;
    let setup = SearchSetup::new(&ctx.cfg, &data)?;
    let result = run_global(ctx, &setup, ctx.resume.as_deref())?;
    if result.finished {
        say(format_args!("best {} fitness {:.2}", result.best, result.fitness));
    }
    Ok(result)
}

/// Local search progress, written after every structure update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCheckpoint {
    pub version: u32,
    pub initial: DilationStructure,
    pub config: LocalSearchConfig,
    pub state: LocalSearchState,
}

const LOCAL_CHECKPOINT_VERSION: u32 = 1;

fn load_local_checkpoint(path: &Path) -> CliResult<LocalCheckpoint> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let ckpt: LocalCheckpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: corrupt checkpoint: {e}", path.display())))?;
    if ckpt.version != LOCAL_CHECKPOINT_VERSION {
        return Err(CliError::Runtime(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            ckpt.version
        )));
    }
    Ok(ckpt)
}

fn initial_structure(cfg: &RunConfig) -> CliResult<DilationStructure> {
    let s = match (&cfg.local.init, &cfg.local.init_file) {
        (Some(s), _) => s.clone(),
        (None, Some(path)) => read_text(path)?.trim().parse::<DilationStructure>()?,
        (None, None) => return Err(config_err("local search needs --init, --init-file or local.init")),
    };
    cfg.check_shape(&s)?;
    Ok(s)
}

pub struct LocalResult {
    pub structure: DilationStructure,
    pub finished: bool,
}

pub fn cmd_local(
    ctx: &Context,
    initial: &DilationStructure,
    resume: Option<&Path>,
) -> CliResult<LocalResult> {
    let data = LoadedData::load(&ctx.cfg)?;
    let setup = SearchSetup::new(&ctx.cfg, &data)?;
    run_local(ctx, &setup, initial, resume)
}

fn run_local(
    ctx: &Context,
    setup: &SearchSetup,
    initial: &DilationStructure,
    resume: Option<&Path>,
) -> CliResult<LocalResult> {
    let cfg = &ctx.cfg;
    let lcfg = cfg.local_config();
    let state = match resume {
        Some(path) => {
            let ckpt = load_local_checkpoint(path)?;
            if ckpt.config != lcfg || &ckpt.initial != initial {
                return Err(config_err(format!(
                    "{}: checkpoint was written for a different local search",
                    path.display()
                )));
            }
            Some(ckpt.state)
        }
        None => None,
    };
    let trainer = LocalTrainer {
        data: &setup.train,
        model: setup.template.clone(),
        training: cfg.train.clone(),
    };
    let mut run_cfg = lcfg.clone();
    if let Some(n) = ctx.stop_after {
        let done = state.as_ref().map_or(0, |s| s.iteration);
        run_cfg.iterations = run_cfg.iterations.min(done + n);
    }
    let trajectory_path = ctx.path(TRAJECTORY_FILE);
    let checkpoint_path = ctx.path(LOCAL_CHECKPOINT_FILE);
    let mut on_update = |s: &LocalSearchState| -> g2l_core::Result<()> {
        say(format_args!(
            "local {}/{} {}",
            s.iteration, lcfg.iterations, s.structure
        ));
        let ckpt = LocalCheckpoint {
            version: LOCAL_CHECKPOINT_VERSION,
            initial: initial.clone(),
            config: lcfg.clone(),
            state: s.clone(),
        };
        write_json(&checkpoint_path, &ckpt)
            .and_then(|_| write_atomic(&trajectory_path, trajectory_csv(&s.trajectory).as_bytes()))
            .map_err(|e| CoreError::Io(std::io::Error::other(e.message().to_string())))
    };
    let start = state.clone();
    if start.is_none() {
        write_atomic(&trajectory_path, trajectory_csv(std::slice::from_ref(initial)).as_bytes())?;
    }
    let outcome = run_local_search_with(initial, &run_cfg, &trainer, start, &mut on_update)?;
    let finished = run_cfg.iterations == lcfg.iterations;
    if finished {
        write_atomic(&ctx.path(STRUCTURE_FILE), format!("{}\n", outcome.structure).as_bytes())?;
        save_model(&ctx.path("model.g2l"), &outcome.model)?;
        say(format_args!("local-searched structure {}", outcome.structure));
    } else {
        say(format_args!("stopped after local iteration {}", run_cfg.iterations));
    }
    Ok(LocalResult {
        structure: outcome.structure,
        finished,
    })
}

#[derive(Debug, Serialize)]
struct PhaseSummary {
    structure: DilationStructure,
    fitness: f64,
}

#[derive(Debug, Serialize)]
struct G2lSummary {
    global: PhaseSummary,
    local: PhaseSummary,
}

pub fn cmd_g2l(ctx: &Context) -> CliResult<()> {
    let data = LoadedData::load(&ctx.cfg)?;
    let setup = SearchSetup::new(&ctx.cfg, &data)?;
    let resume_local = match &ctx.resume {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| CliError::Runtime(format!("{}: corrupt checkpoint: {e}", path.display())))?
                .get("initial")
                .is_some()
        }
        None => false,
    };
    let (global_best, global_fitness) = if resume_local {
        // The global phase finished earlier; its best is the local start.
        let ckpt = load_global_checkpoint(&ctx.path(POPULATION_FILE))?;
        let best = ckpt
            .population
            .best()
            .ok_or_else(|| CliError::Runtime("empty population checkpoint".into()))?;
        (best.structure.clone(), best.fitness.unwrap_or(0.0))
    } else {
        let result = run_global(ctx, &setup, ctx.resume.as_deref())?;
        if !result.finished {
            return Ok(());
        }
        (result.best, result.fitness)
    };
    say(format_args!("global best {global_best} fitness {global_fitness:.2}"));
    let local_resume = if resume_local { ctx.resume.as_deref() } else { None };
    let local = run_local(ctx, &setup, &global_best, local_resume)?;
    if !local.finished {
        return Ok(());
    }
    let local_fitness = setup.fitness(&ctx.cfg, &local.structure)?;
    say(format_args!("local fitness {local_fitness:.2}"));
    write_json(
        &ctx.path(SUMMARY_FILE),
        &G2lSummary {
            global: PhaseSummary { structure: global_best, fitness: global_fitness },
            local: PhaseSummary { structure: local.structure, fitness: local_fitness },
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub structure: DilationStructure,
    #[serde(flatten)]
    pub mean: MetricsReport,
    pub folds: Vec<FoldReport>,
}

pub fn cmd_eval(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let structure = cfg
        .eval
        .structure
        .clone()
        .ok_or_else(|| config_err("eval needs --structure, --structure-file or eval.structure"))?;
    let data = LoadedData::load(cfg)?;
    let folds: Vec<usize> = if cfg.eval.folds.is_empty() {
        (0..data.folds.len()).collect()
    } else {
        cfg.eval.folds.clone()
    };
    if let Some(bad) = folds.iter().find(|&&f| f >= data.folds.len()) {
        return Err(config_err(format!(
            "fold {bad} out of range (dataset has {} folds)",
            data.folds.len()
        )));
    }
    let template = data.template(cfg)?;
    let root = cfg.sub_seed("eval");
    let mut reports = Vec::with_capacity(folds.len());
    for &fold in &folds {
        let (train, validation) = data.split(fold)?;
        let (model, metrics) = train_and_report(
            &structure,
            &train,
            &validation,
            &template,
            &cfg.train,
            &cfg.metrics.thresholds,
            seed::derive(root, fold as u64),
        )?;
        save_model(&ctx.path(&format!("model-fold{fold}.g2l")), &model)?;
        say(format_args!(
            "fold {fold}: acc {:.2} edit {:.2} {}",
            metrics.acc,
            metrics.edit,
            metrics
                .f1
                .iter()
                .map(|(k, v)| format!("f1@{k} {v:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        reports.push(FoldReport { fold, metrics });
    }
    let metrics: Vec<MetricsReport> = reports.iter().map(|r| r.metrics.clone()).collect();
    let report = EvalReport {
        structure,
        mean: MetricsReport::mean(&metrics)?,
        folds: reports,
    };
    say(format_args!(
        "mean: acc {:.2} edit {:.2} f1 {:?}",
        report.mean.acc, report.mean.edit, report.mean.f1
    ));
    write_json(&ctx.path(REPORT_FILE), &report)
}
