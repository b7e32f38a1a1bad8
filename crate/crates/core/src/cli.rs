//! Command-line front end. `run` parses arguments, executes one subcommand and
//! returns the process exit code.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 a pack or probe
//! failed validation, 4 any other runtime failure. Every failure also writes a
//! single JSON object to stderr: `{"error":{"kind":..,"code":..,"message":..}}`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    fit_checkpoint_probe, margin_table, margins_csv, sweep, AnalysisConfig, AnalysisError, CohortFilter, FeatureSet,
    SweepResult,
};
use crate::earlyexit::{reports_csv, simulate, threshold_sweep, ExitDirection, ExitError, ExitPolicy, ExitReport, Thresholds};
use crate::probe::{stratified_split, ProbeBundle, ProbeModel, SplitSpec};
use crate::report::{render_report, summary_table};
use crate::synth::{generate, SynthConfig, SynthError};
use crate::trace_store::{load_pack, merge_packs, validate_pack, write_pack, PackError, TracePack};

pub const THREADS_ENV: &str = "COTPROBE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cotprobe", version, about = "Probe chain-of-thought hidden states for answer correctness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a trace pack's schema and invariants.
    Validate { pack: PathBuf },
    /// Generate a synthetic trace pack from a JSON config.
    Synth {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Replace an existing pack at the output path.
        #[arg(long)]
        force: bool,
    },
    /// Hidden-state probe sweep over checkpoints and cohorts.
    Sweep {
        config: PathBuf,
        /// Override the split seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Output-space baseline sweep (entropy, length, both).
    Baselines {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-checkpoint AUC margin of a hidden-state sweep over a baseline sweep.
    Margins {
        hidden: PathBuf,
        baseline: PathBuf,
        /// Directory for margins.json and margins.csv; stdout CSV if absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Replay probe-gated early exit over held-out traces.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render charts and a summary table from a sweep JSON.
    Report {
        sweep: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Validation(_) => 3,
            Self::Runtime(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Validation(_) => "validation",
            Self::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Validation(m) | Self::Runtime(m) => m,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": {"kind": self.kind(), "code": self.code(), "message": self.message()}
        })
        .to_string()
    }
}

impl From<PackError> for CliError {
    fn from(e: PackError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Pack(p) => p.into(),
            AnalysisError::NotInGrid(_) | AnalysisError::InvalidCohort(_) | AnalysisError::GridMismatch(_) => {
                Self::Usage(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<ExitError> for CliError {
    fn from(e: ExitError) -> Self {
        match e {
            ExitError::MissingProbe(_) | ExitError::InvalidThreshold(_) => Self::Usage(e.to_string()),
            ExitError::MissingProvenance(_) | ExitError::ProvenanceOverlap { .. } | ExitError::EmptyPack => {
                Self::Validation(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Usage(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Configuration shared by `sweep` and `baselines`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Pack directories; several are merged. Relative paths resolve against the config file.
    pub packs: Vec<PathBuf>,
    /// Checkpoints to evaluate; defaults to the pack's grid.
    #[serde(default)]
    pub grid: Option<Vec<u32>>,
    #[serde(default = "default_cohorts")]
    pub cohorts: Vec<CohortFilter>,
    /// Defaults to `hidden_state` for `sweep` and the three baselines for `baselines`.
    #[serde(default)]
    pub feature_sets: Option<Vec<FeatureSet>>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

fn default_cohorts() -> Vec<CohortFilter> {
    vec![CohortFilter::ALL]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Packs the per-checkpoint probes are trained on.
    pub train_packs: Vec<PathBuf>,
    /// Packs the policy is replayed over. Must share no example ids with the
    /// training packs. When absent, the training packs are split with
    /// `analysis.split`: probes learn from the training fold and the policy is
    /// replayed over the held-out fold.
    #[serde(default)]
    pub eval_packs: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub grid: Option<Vec<u32>>,
    /// Cohort the probes are trained on.
    #[serde(default)]
    pub cohort: CohortFilter,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub direction: ExitDirection,
    /// Global thresholds to sweep.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    /// An additional policy with one threshold per checkpoint.
    #[serde(default)]
    pub per_checkpoint_thresholds: Option<BTreeMap<u32, f64>>,
    /// Also write one probe bundle per checkpoint.
    #[serde(default)]
    pub save_probes: bool,
    pub output_dir: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_packs(base: &Path, packs: &[PathBuf], field: &str) -> Result<Vec<PathBuf>, CliError> {
    if packs.is_empty() {
        return Err(CliError::Usage(format!("{field} must list at least one pack")));
    }
    packs
        .iter()
        .map(|p| {
            let r = resolve(base, p);
            if r.is_dir() {
                Ok(r)
            } else {
                Err(CliError::Usage(format!("{field}: pack directory {} does not exist", r.display())))
            }
        })
        .collect()
}

fn load_merged(paths: &[PathBuf]) -> Result<TracePack, CliError> {
    let packs = paths.iter().map(load_pack).collect::<Result<Vec<_>, _>>()?;
    if packs.len() == 1 {
        Ok(packs.into_iter().next().expect("one pack"))
    } else {
        Ok(merge_packs(&packs)?)
    }
}

fn check_analysis(config: &AnalysisConfig) -> Result<(), CliError> {
    let f = config.split.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(CliError::Usage(format!("split.train_fraction must lie in (0, 1), got {f}")));
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(CliError::Usage(format!("lambda must be positive and finite, got {}", config.lambda)));
    }
    if config.k_max == 0 {
        return Err(CliError::Usage("k_max must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(CliError::Usage(format!("threshold must lie in [0, 1], got {}", config.threshold)));
    }
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.to_json_line());
            return err.code();
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{}", e.to_json_line());
        return e.code();
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {value:?}")))?;
    // 0 keeps rayon's default; a second call in the same process is a no-op
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { pack } => cmd_validate(&pack),
        Command::Synth { config, out, force } => cmd_synth(&config, &out, force),
        Command::Sweep { config, seed } => cmd_sweep(&config, seed, false),
        Command::Baselines { config, seed } => cmd_sweep(&config, seed, true),
        Command::Margins { hidden, baseline, out } => cmd_margins(&hidden, &baseline, out.as_deref()),
        Command::Simulate { config, seed } => cmd_simulate(&config, seed),
        Command::Report { sweep, out } => cmd_report(&sweep, &out),
    }
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let pack = match load_pack(path) {
        Ok(p) => p,
        Err(PackError::Invalid(violations)) => {
            for v in &violations {
                println!("{v}");
            }
            println!("{} violations", violations.len());
            return Err(CliError::Validation(format!(
                "{} has {} invariant violation(s)",
                path.display(),
                violations.len()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    // load_pack already validates; re-running keeps the printed count honest
    let violations = validate_pack(&pack);
    println!(
        "{}: {} examples, hidden_dim {}, grid {:?}",
        path.display(),
        pack.len(),
        pack.hidden_dim,
        pack.prefix_grid
    );
    println!("{} violations", violations.len());
    Ok(())
}

fn cmd_synth(config_path: &Path, out: &Path, force: bool) -> Result<(), CliError> {
    let config: SynthConfig = read_json(config_path)?;
    config.validate()?;
    if out.join("manifest.json").exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already holds a pack; pass --force to replace it",
            out.display()
        )));
    }
    let pack = generate(&config)?;
    write_pack(&pack, out)?;
    println!("wrote {} examples to {}", pack.len(), out.display());
    Ok(())
}

struct LoadedRun {
    config: RunConfig,
    pack: TracePack,
    grid: Vec<u32>,
    feature_sets: Vec<FeatureSet>,
}

fn load_run(config_path: &Path, seed: Option<u64>, baselines: bool) -> Result<LoadedRun, CliError> {
    let mut config: RunConfig = read_json(config_path)?;
    let base = base_dir(config_path);
    config.packs = resolve_packs(&base, &config.packs, "packs")?;
    config.output_dir = resolve(&base, &config.output_dir);
    if let Some(s) = seed {
        config.analysis.split.seed = s;
    }
    check_analysis(&config.analysis)?;
    if config.cohorts.is_empty() {
        return Err(CliError::Usage("cohorts must not be empty".into()));
    }
    let feature_sets = match &config.feature_sets {
        Some(f) if f.is_empty() => return Err(CliError::Usage("feature_sets must not be empty".into())),
        Some(f) => f.clone(),
        None if baselines => FeatureSet::BASELINES.to_vec(),
        None => vec![FeatureSet::HiddenState],
    };
    config.feature_sets = Some(feature_sets.clone());
    let pack = load_merged(&config.packs)?;
    let grid = config.grid.clone().unwrap_or_else(|| pack.prefix_grid.clone());
    if let Some(t) = grid.iter().find(|t| !pack.prefix_grid.contains(t)) {
        return Err(CliError::Usage(format!("grid checkpoint t={t} is not in the pack's prefix grid")));
    }
    config.grid = Some(grid.clone());
    Ok(LoadedRun {
        config,
        pack,
        grid,
        feature_sets,
    })
}

fn cmd_sweep(config_path: &Path, seed: Option<u64>, baselines: bool) -> Result<(), CliError> {
    let run = load_run(config_path, seed, baselines)?;
    let mut result = sweep(&run.pack, &run.grid, &run.config.cohorts, &run.feature_sets, &run.config.analysis)?;
    result.run_config = Some(serde_json::to_value(&run.config).expect("config serializes"));
    let stem = if baselines { "baselines" } else { "sweep" };
    create_dir(&run.config.output_dir)?;
    let json_path = run.config.output_dir.join(format!("{stem}.json"));
    write_file(&json_path, &result.to_json())?;
    write_file(&run.config.output_dir.join(format!("{stem}.csv")), &result.to_csv())?;
    print!("{}", summary_table(&result));
    println!("wrote {}", json_path.display());
    Ok(())
}

fn read_sweep(path: &Path) -> Result<SweepResult, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    SweepResult::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_margins(hidden: &Path, baseline: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let rows = margin_table(&read_sweep(hidden)?, &read_sweep(baseline)?)?;
    let csv = margins_csv(&rows);
    match out {
        Some(dir) => {
            create_dir(dir)?;
            let doc = serde_json::json!({
                "hidden": hidden,
                "baseline": baseline,
                "rows": rows,
            });
            write_file(&dir.join("margins.json"), &serde_json::to_string_pretty(&doc).expect("serializes"))?;
            write_file(&dir.join("margins.csv"), &csv)?;
            println!("wrote {} rows to {}", rows.len(), dir.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    run_config: &'a SimulateConfig,
    probed_checkpoints: Vec<u32>,
    skipped_checkpoints: Vec<SkippedCheckpoint>,
    reports: &'a [ExitReport],
}

#[derive(Serialize)]
struct SkippedCheckpoint {
    t: u32,
    reason: String,
}

fn cmd_simulate(config_path: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut config: SimulateConfig = read_json(config_path)?;
    let base = base_dir(config_path);
    config.train_packs = resolve_packs(&base, &config.train_packs, "train_packs")?;
    if let Some(eval) = &config.eval_packs {
        config.eval_packs = Some(resolve_packs(&base, eval, "eval_packs")?);
    }
    config.output_dir = resolve(&base, &config.output_dir);
    if let Some(s) = seed {
        config.analysis.split.seed = s;
    }
    check_analysis(&config.analysis)?;
    config.cohort.validate()?;
    if config.thresholds.is_empty() && config.per_checkpoint_thresholds.is_none() {
        return Err(CliError::Usage(
            "give thresholds, per_checkpoint_thresholds, or both".into(),
        ));
    }
    if let Some(v) = config.thresholds.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CliError::Usage(format!("threshold {v} outside [0, 1]")));
    }

    let loaded = load_merged(&config.train_packs)?;
    let (train, eval) = match &config.eval_packs {
        Some(paths) => (loaded, load_merged(paths)?),
        None => holdout(loaded, &config.analysis.split)?,
    };
    let grid = config.grid.clone().unwrap_or_else(|| train.prefix_grid.clone());
    for t in &grid {
        if !train.prefix_grid.contains(t) || !eval.prefix_grid.contains(t) {
            return Err(CliError::Usage(format!("grid checkpoint t={t} is missing from a pack's prefix grid")));
        }
    }
    config.grid = Some(grid.clone());
    let source = config
        .train_packs
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",");

    let fits: Vec<(u32, Result<ProbeModel, AnalysisError>)> = grid
        .par_iter()
        .map(|&t| (t, fit_checkpoint_probe(&train, t, &config.cohort, &config.analysis, &source)))
        .collect();
    let mut probes = BTreeMap::new();
    let mut skipped = Vec::new();
    for (t, fit) in fits {
        match fit {
            Ok(model) => {
                probes.insert(t, model);
            }
            Err(e @ AnalysisError::CohortTooSmall { .. }) => skipped.push(SkippedCheckpoint { t, reason: e.to_string() }),
            Err(e) => return Err(e.into()),
        }
    }
    if probes.is_empty() {
        return Err(CliError::Runtime("no checkpoint had enough training examples for a probe".into()));
    }

    let mut reports = threshold_sweep(&eval, &probes, config.direction, &config.thresholds)?;
    if let Some(per) = &config.per_checkpoint_thresholds {
        let policy = ExitPolicy {
            thresholds: Thresholds::PerCheckpoint(per.clone()),
            direction: config.direction,
        };
        reports.push(simulate(&eval, &probes, &policy)?);
    }

    create_dir(&config.output_dir)?;
    let output = SimulateOutput {
        run_config: &config,
        probed_checkpoints: probes.keys().copied().collect(),
        skipped_checkpoints: skipped,
        reports: &reports,
    };
    let json_path = config.output_dir.join("simulate.json");
    write_file(&json_path, &serde_json::to_string_pretty(&output).expect("serializes"))?;
    write_file(&config.output_dir.join("simulate.csv"), &reports_csv(&reports))?;
    if config.save_probes {
        let dir = config.output_dir.join("probes");
        create_dir(&dir)?;
        for (t, model) in &probes {
            let bundle = ProbeBundle {
                split: config.analysis.split,
                lambda: config.analysis.lambda,
                tol: config.analysis.tol,
                max_iter: config.analysis.max_iter,
                model: model.clone(),
            };
            let path = dir.join(format!("probe_t{t}.json"));
            bundle.save(&path).map_err(|e| io_err(&path, e))?;
        }
    }
    print!("{}", reports_csv(&reports));
    println!("wrote {}", json_path.display());
    Ok(())
}

/// Splits a pack into stratified training and held-out packs.
fn holdout(pack: TracePack, spec: &SplitSpec) -> Result<(TracePack, TracePack), CliError> {
    let labels: Vec<bool> = pack.examples.iter().map(|e| e.correct).collect();
    let split = stratified_split(&labels, spec).map_err(|e| CliError::Runtime(e.to_string()))?;
    let subset = |idx: &[usize]| {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        TracePack {
            examples: sorted.iter().map(|&i| pack.examples[i].clone()).collect(),
            ..pack.clone()
        }
    };
    Ok((subset(&split.train), subset(&split.test)))
}

fn cmd_report(sweep_path: &Path, out: &Path) -> Result<(), CliError> {
    let sweep = read_sweep(sweep_path)?;
    let written = render_report(&sweep, out).map_err(|e| io_err(out, e))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
