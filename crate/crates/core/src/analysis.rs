//! Experiment drivers: the per-checkpoint probe pipeline, prefix sweeps over
//! cohorts and feature sets, output-space baselines and probe-vs-baseline margins.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg_pca::{fit_pca, PcaError, MAX_COMPONENTS};
use crate::metrics::{EvalReport, MetricsError};
use crate::probe::{
    balanced_class_weights, predict_scores, stratified_split, train_probe, ProbeError, ProbeModel,
    Provenance, SplitSpec, DEFAULT_LAMBDA, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::trace_store::{DifficultyBucket, ExampleTrace, PackError, TracePack};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("checkpoint t={0} is not in the pack's prefix grid")]
    NotInGrid(u32),
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("sweeps are not comparable: {0}")]
    GridMismatch(String),
    #[error("cohort {cohort} at t={t} has {n_pos} correct and {n_neg} incorrect examples; need 2 of each")]
    CohortTooSmall {
        t: u32,
        cohort: String,
        n_pos: usize,
        n_neg: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyFilter {
    #[default]
    All,
    Easy,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct CohortFilter {
    #[serde(default)]
    pub difficulty: DifficultyFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_reasoning_length: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_reasoning_length: Option<u32>,
}

impl CohortFilter {
    pub const ALL: Self = Self::bucket(DifficultyFilter::All);
    pub const EASY: Self = Self::bucket(DifficultyFilter::Easy);
    pub const HARD: Self = Self::bucket(DifficultyFilter::Hard);

    pub const fn bucket(difficulty: DifficultyFilter) -> Self {
        Self {
            difficulty,
            min_reasoning_length: None,
            max_reasoning_length: None,
        }
    }

    pub fn with_min_length(mut self, min: u32) -> Self {
        self.min_reasoning_length = Some(min);
        self
    }

    pub fn with_max_length(mut self, max: u32) -> Self {
        self.max_reasoning_length = Some(max);
        self
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        match (self.min_reasoning_length, self.max_reasoning_length) {
            (Some(lo), Some(hi)) if lo > hi => Err(AnalysisError::InvalidCohort(format!(
                "min_reasoning_length {lo} exceeds max_reasoning_length {hi}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn admits(&self, ex: &ExampleTrace) -> bool {
        let bucket_ok = match self.difficulty {
            DifficultyFilter::All => true,
            DifficultyFilter::Easy => ex.difficulty_bucket == DifficultyBucket::Easy,
            DifficultyFilter::Hard => ex.difficulty_bucket == DifficultyBucket::Hard,
        };
        bucket_ok
            && self.min_reasoning_length.is_none_or(|m| ex.reasoning_length >= m)
            && self.max_reasoning_length.is_none_or(|m| ex.reasoning_length <= m)
    }
}

impl fmt::Display for CohortFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.difficulty {
            DifficultyFilter::All => "all",
            DifficultyFilter::Easy => "easy",
            DifficultyFilter::Hard => "hard",
        };
        f.write_str(name)?;
        match (self.min_reasoning_length, self.max_reasoning_length) {
            (None, None) => Ok(()),
            (Some(lo), None) => write!(f, ":len>={lo}"),
            (None, Some(hi)) => write!(f, ":len<={hi}"),
            (Some(lo), Some(hi)) => write!(f, ":{lo}<=len<={hi}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    HiddenState,
    Entropy,
    Length,
    EntropyLength,
}

impl FeatureSet {
    pub const BASELINES: [Self; 3] = [Self::Entropy, Self::Length, Self::EntropyLength];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HiddenState => "hidden_state",
            Self::Entropy => "entropy",
            Self::Length => "length",
            Self::EntropyLength => "entropy_length",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which rows the PCA basis is fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaFit {
    /// Training fold only; the test fold never influences the projection.
    #[default]
    TrainOnly,
    /// Every survivor in the cohort, before splitting.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub lambda: f64,
    pub k_max: usize,
    pub split: SplitSpec,
    pub pca_fit: PcaFit,
    pub tol: f64,
    pub max_iter: usize,
    /// Probability at or above which a trace is predicted correct.
    pub threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            k_max: MAX_COMPONENTS,
            split: SplitSpec::default(),
            pca_fit: PcaFit::TrainOnly,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            threshold: 0.5,
        }
    }
}

impl AnalysisConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResult {
    pub t: u32,
    pub cohort: CohortFilter,
    pub feature_set: FeatureSet,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction correct in the training fold.
    pub train_prior: f64,
    pub report: EvalReport,
}

impl CheckpointResult {
    pub fn n_survivors(&self) -> usize {
        self.n_train + self.n_test
    }
}

/// One sweep row: either evaluated or skipped with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepRow {
    Evaluated(CheckpointResult),
    Skipped {
        t: u32,
        cohort: CohortFilter,
        feature_set: FeatureSet,
        n_survivors: usize,
        reason: String,
    },
}

impl SweepRow {
    pub fn t(&self) -> u32 {
        match self {
            Self::Evaluated(r) => r.t,
            Self::Skipped { t, .. } => *t,
        }
    }

    pub fn cohort(&self) -> CohortFilter {
        match self {
            Self::Evaluated(r) => r.cohort,
            Self::Skipped { cohort, .. } => *cohort,
        }
    }

    pub fn feature_set(&self) -> FeatureSet {
        match self {
            Self::Evaluated(r) => r.feature_set,
            Self::Skipped { feature_set, .. } => *feature_set,
        }
    }

    pub fn n_survivors(&self) -> usize {
        match self {
            Self::Evaluated(r) => r.n_survivors(),
            Self::Skipped { n_survivors, .. } => *n_survivors,
        }
    }

    pub fn result(&self) -> Option<&CheckpointResult> {
        match self {
            Self::Evaluated(r) => Some(r),
            Self::Skipped { .. } => None,
        }
    }

    pub fn roc_auc(&self) -> Option<f64> {
        self.result().and_then(|r| r.report.roc_auc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: AnalysisConfig,
    pub grid: Vec<u32>,
    pub cohorts: Vec<CohortFilter>,
    pub feature_sets: Vec<FeatureSet>,
    /// Resolved run configuration, attached by callers that persist the sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "t,cohort,feature_set,n_train,n_test,train_prior,accuracy,roc_auc";

impl SweepResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Flat table for plotting; skipped rows keep their keys and leave metrics empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            match row {
                SweepRow::Evaluated(r) => {
                    let auc = r.report.roc_auc.map(|a| a.to_string()).unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        r.t, r.cohort, r.feature_set, r.n_train, r.n_test, r.train_prior, r.report.accuracy, auc
                    );
                }
                SweepRow::Skipped {
                    t,
                    cohort,
                    feature_set,
                    ..
                } => {
                    let _ = writeln!(out, "{t},{cohort},{feature_set},,,,,");
                }
            }
        }
        out
    }

    pub fn rows_for(&self, cohort: CohortFilter, feature_set: FeatureSet) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.cohort() == cohort && r.feature_set() == feature_set)
    }
}

fn check_grid(pack: &TracePack, t: u32) -> Result<(), AnalysisError> {
    if pack.prefix_grid.contains(&t) {
        Ok(())
    } else {
        Err(AnalysisError::NotInGrid(t))
    }
}

/// Positions of the examples that pass the cohort filter and survive to `t`.
pub fn cohort_survivors(pack: &TracePack, t: u32, cohort: &CohortFilter) -> Vec<usize> {
    pack.examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.survives(t) && cohort.admits(e))
        .map(|(i, _)| i)
        .collect()
}

/// Survivor count per grid checkpoint for one cohort.
pub fn survival_counts(pack: &TracePack, cohort: &CohortFilter) -> Vec<(u32, usize)> {
    pack.prefix_grid
        .iter()
        .map(|&t| (t, cohort_survivors(pack, t, cohort).len()))
        .collect()
}

fn hidden_rows(pack: &TracePack, t: u32, rows: &[usize]) -> Result<DMatrix<f64>, AnalysisError> {
    let mut x = DMatrix::zeros(rows.len(), pack.hidden_dim);
    for (r, &i) in rows.iter().enumerate() {
        let ex = &pack.examples[i];
        let cp = ex.checkpoint(t).ok_or_else(|| PackError::MissingCheckpoint {
            example_id: ex.example_id.clone(),
            t,
        })?;
        for (c, &v) in cp.pooled_state.iter().enumerate() {
            x[(r, c)] = f64::from(v);
        }
    }
    Ok(x)
}

fn baseline_rows(
    pack: &TracePack,
    t: u32,
    kind: FeatureSet,
    rows: &[usize],
) -> Result<DMatrix<f64>, AnalysisError> {
    let width = match kind {
        FeatureSet::Entropy => 2,
        FeatureSet::Length => 1,
        FeatureSet::EntropyLength => 3,
        FeatureSet::HiddenState => {
            return Err(AnalysisError::InvalidCohort(
                "hidden_state is not an output-space baseline".into(),
            ))
        }
    };
    let mut x = DMatrix::zeros(rows.len(), width);
    for (r, &i) in rows.iter().enumerate() {
        let ex = &pack.examples[i];
        let cp = ex.checkpoint(t).ok_or_else(|| PackError::MissingCheckpoint {
            example_id: ex.example_id.clone(),
            t,
        })?;
        let length = f64::from(ex.reasoning_length);
        let values: &[f64] = match kind {
            FeatureSet::Entropy => &[cp.mean_entropy, cp.window_entropy],
            FeatureSet::Length => &[length],
            _ => &[cp.mean_entropy, cp.window_entropy, length],
        };
        for (c, &v) in values.iter().enumerate() {
            x[(r, c)] = v;
        }
    }
    Ok(x)
}

/// Output-space features of every survivor at `t`, in examples-file order.
///
/// `entropy` gives `[mean_entropy, window_entropy]`, `length` gives
/// `[reasoning_length]` and `entropy_length` all three.
pub fn baseline_features(pack: &TracePack, t: u32, kind: FeatureSet) -> Result<DMatrix<f64>, AnalysisError> {
    check_grid(pack, t)?;
    baseline_rows(pack, t, kind, &pack.survivors(t))
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows.iter())
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Trains a probe for `(t, cohort, feature_set)` on `train` (positions into the
/// survivor list) and returns it with the feature matrix of all survivors.
fn fit_on(
    pack: &TracePack,
    t: u32,
    feature_set: FeatureSet,
    survivors: &[usize],
    train: &[usize],
    config: &AnalysisConfig,
) -> Result<(ProbeModel, DMatrix<f64>), AnalysisError> {
    let labels: Vec<bool> = survivors.iter().map(|&i| pack.examples[i].correct).collect();
    let y_train = pick(&labels, train);
    let cw = balanced_class_weights(&y_train)?;
    match feature_set {
        FeatureSet::HiddenState => {
            let x = hidden_rows(pack, t, survivors)?;
            let x_train = select_rows(&x, train);
            let pca = match config.pca_fit {
                PcaFit::TrainOnly => fit_pca(&x_train, config.k_max)?,
                PcaFit::All => fit_pca(&x, config.k_max)?,
            };
            let z_train = pca.project(&x_train)?;
            let model = train_probe(&z_train, &y_train, cw, config.lambda, config.tol, config.max_iter)?;
            Ok((model.with_pca(pca), x))
        }
        kind => {
            let x = baseline_rows(pack, t, kind, survivors)?;
            let x_train = select_rows(&x, train);
            let model = train_probe(&x_train, &y_train, cw, config.lambda, config.tol, config.max_iter)?;
            Ok((model, x))
        }
    }
}

/// Full recipe at one checkpoint: cohort and survival filter, stratified split,
/// PCA (hidden states only), probe training, held-out evaluation.
///
/// A cohort without two examples of each class yields [`SweepRow::Skipped`].
pub fn evaluate_checkpoint(
    pack: &TracePack,
    t: u32,
    cohort: &CohortFilter,
    feature_set: FeatureSet,
    config: &AnalysisConfig,
) -> Result<SweepRow, AnalysisError> {
    check_grid(pack, t)?;
    cohort.validate()?;
    let survivors = cohort_survivors(pack, t, cohort);
    let labels: Vec<bool> = survivors.iter().map(|&i| pack.examples[i].correct).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return Ok(SweepRow::Skipped {
            t,
            cohort: *cohort,
            feature_set,
            n_survivors: survivors.len(),
            reason: format!("cohort too small: {n_pos} correct, {n_neg} incorrect"),
        });
    }

    let split = stratified_split(&labels, &config.split)?;
    let (model, x) = fit_on(pack, t, feature_set, &survivors, &split.train, config)?;
    let scores = predict_scores(&model, &select_rows(&x, &split.test))?;
    let y_train = pick(&labels, &split.train);
    let y_test = pick(&labels, &split.test);
    let report = EvalReport::compute(&scores, &y_test, config.threshold)?;
    Ok(SweepRow::Evaluated(CheckpointResult {
        t,
        cohort: *cohort,
        feature_set,
        n_train: split.train.len(),
        n_test: split.test.len(),
        train_prior: crate::metrics::class_prior(&y_train)?,
        report,
    }))
}

/// Trains a hidden-state probe on every cohort survivor at `t`, for use on a
/// different pack (e.g. by the early-exit simulator). `source` names the pack in
/// the provenance record.
pub fn fit_checkpoint_probe(
    pack: &TracePack,
    t: u32,
    cohort: &CohortFilter,
    config: &AnalysisConfig,
    source: &str,
) -> Result<ProbeModel, AnalysisError> {
    check_grid(pack, t)?;
    cohort.validate()?;
    let survivors = cohort_survivors(pack, t, cohort);
    let n_pos = survivors.iter().filter(|&&i| pack.examples[i].correct).count();
    let n_neg = survivors.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return Err(AnalysisError::CohortTooSmall {
            t,
            cohort: cohort.to_string(),
            n_pos,
            n_neg,
        });
    }
    let all: Vec<usize> = (0..survivors.len()).collect();
    let (model, _) = fit_on(pack, t, FeatureSet::HiddenState, &survivors, &all, config)?;
    Ok(model.with_provenance(Provenance {
        pack: source.to_owned(),
        t,
        cohort: cohort.to_string(),
        training_ids: survivors
            .iter()
            .map(|&i| pack.examples[i].example_id.clone())
            .collect(),
    }))
}

/// Every `(t, cohort, feature_set)` combination, rows ordered t-major then by
/// cohort then feature set. Rows run in parallel; results do not depend on scheduling.
pub fn sweep(
    pack: &TracePack,
    grid: &[u32],
    cohorts: &[CohortFilter],
    feature_sets: &[FeatureSet],
    config: &AnalysisConfig,
) -> Result<SweepResult, AnalysisError> {
    for &t in grid {
        check_grid(pack, t)?;
    }
    for c in cohorts {
        c.validate()?;
    }
    let jobs: Vec<(u32, CohortFilter, FeatureSet)> = grid
        .iter()
        .flat_map(|&t| {
            cohorts
                .iter()
                .flat_map(move |&c| feature_sets.iter().map(move |&f| (t, c, f)))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|(t, c, f)| evaluate_checkpoint(pack, *t, c, *f, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult {
        config: *config,
        grid: grid.to_vec(),
        cohorts: cohorts.to_vec(),
        feature_sets: feature_sets.to_vec(),
        run_config: None,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub t: u32,
    pub cohort: CohortFilter,
    pub auc_hidden: Option<f64>,
    /// Best AUC among the baseline sweep's feature sets at this `(t, cohort)`.
    pub auc_baseline: Option<f64>,
    pub baseline_feature_set: Option<FeatureSet>,
    pub margin: Option<f64>,
}

/// Per-checkpoint AUC margin of the hidden-state probe over the best baseline.
///
/// Both sweeps must cover the same `(t, cohort)` keys. The hidden side uses the
/// `hidden_state` rows; the baseline side takes the best AUC over its rows.
pub fn margin_table(hidden: &SweepResult, baseline: &SweepResult) -> Result<Vec<MarginRow>, AnalysisError> {
    let keys = |s: &SweepResult| -> BTreeSet<(u32, CohortFilter)> {
        s.rows.iter().map(|r| (r.t(), r.cohort())).collect()
    };
    let hidden_keys = keys(hidden);
    if hidden_keys != keys(baseline) {
        return Err(AnalysisError::GridMismatch(
            "the two sweeps cover different (t, cohort) rows".into(),
        ));
    }

    let mut hidden_auc: BTreeMap<(u32, CohortFilter), Option<f64>> = BTreeMap::new();
    for r in hidden.rows.iter().filter(|r| r.feature_set() == FeatureSet::HiddenState) {
        hidden_auc.insert((r.t(), r.cohort()), r.roc_auc());
    }
    if hidden_auc.len() != hidden_keys.len() {
        return Err(AnalysisError::GridMismatch(
            "hidden sweep lacks hidden_state rows for some (t, cohort)".into(),
        ));
    }

    let mut best: BTreeMap<(u32, CohortFilter), (Option<f64>, Option<FeatureSet>)> = BTreeMap::new();
    for r in &baseline.rows {
        let entry = best.entry((r.t(), r.cohort())).or_insert((None, None));
        if let Some(auc) = r.roc_auc() {
            if entry.0.is_none_or(|b| auc > b) {
                *entry = (Some(auc), Some(r.feature_set()));
            }
        }
    }

    // keep the hidden sweep's row order
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in hidden.rows.iter().filter(|r| r.feature_set() == FeatureSet::HiddenState) {
        let key = (r.t(), r.cohort());
        if !seen.insert(key) {
            continue;
        }
        let auc_hidden = hidden_auc[&key];
        let (auc_baseline, baseline_feature_set) = best[&key];
        let margin = match (auc_hidden, auc_baseline) {
            (Some(h), Some(b)) => Some(h - b),
            _ => None,
        };
        out.push(MarginRow {
            t: key.0,
            cohort: key.1,
            auc_hidden,
            auc_baseline,
            baseline_feature_set,
            margin,
        });
    }
    Ok(out)
}

pub fn margins_csv(rows: &[MarginRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("t,cohort,auc_hidden,auc_baseline,baseline_feature_set,margin\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            r.cohort,
            fmt(r.auc_hidden),
            fmt(r.auc_baseline),
            r.baseline_feature_set.map(FeatureSet::as_str).unwrap_or(""),
            fmt(r.margin)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn toy() -> TracePack {
        let mut cfg = SynthConfig::planted(60, 4, 2.0, 5);
        cfg.length_range = Some((4, 512));
        generate(&cfg).unwrap()
    }

    #[test]
    fn cohort_labels() {
        assert_eq!(CohortFilter::ALL.to_string(), "all");
        assert_eq!(CohortFilter::HARD.with_min_length(256).to_string(), "hard:len>=256");
        assert_eq!(CohortFilter::EASY.with_max_length(256).to_string(), "easy:len<=256");
        assert_eq!(
            CohortFilter::ALL.with_min_length(8).with_max_length(64).to_string(),
            "all:8<=len<=64"
        );
        assert!(CohortFilter::ALL
            .with_min_length(9)
            .with_max_length(8)
            .validate()
            .is_err());
    }

    #[test]
    fn single_cell_sweep() {
        let pack = toy();
        let s = sweep(&pack, &[4], &[CohortFilter::ALL], &[FeatureSet::HiddenState], &AnalysisConfig::default())
            .unwrap();
        assert_eq!(s.rows.len(), 1);
        let r = s.rows[0].result().unwrap();
        assert_eq!(r.n_survivors(), 60);
        assert_eq!(s.to_csv().lines().count(), 2);
    }

    #[test]
    fn tiny_cohort_is_skipped_not_fatal() {
        let pack = toy();
        let cohort = CohortFilter::ALL.with_min_length(100_000);
        let row = evaluate_checkpoint(&pack, 4, &cohort, FeatureSet::HiddenState, &AnalysisConfig::default())
            .unwrap();
        assert!(matches!(row, SweepRow::Skipped { n_survivors: 0, .. }));
        let s = SweepResult {
            config: AnalysisConfig::default(),
            grid: vec![4],
            cohorts: vec![cohort],
            feature_sets: vec![FeatureSet::HiddenState],
            run_config: None,
            rows: vec![row],
        };
        assert_eq!(s.to_csv().lines().nth(1).unwrap(), "4,all:len>=100000,hidden_state,,,,,");
    }

    #[test]
    fn off_grid_is_an_error() {
        let pack = toy();
        assert!(matches!(
            evaluate_checkpoint(&pack, 5, &CohortFilter::ALL, FeatureSet::Length, &AnalysisConfig::default()),
            Err(AnalysisError::NotInGrid(5))
        ));
        assert!(baseline_features(&pack, 7, FeatureSet::Entropy).is_err());
    }

    #[test]
    fn constant_length_baseline_is_uninformative() {
        let pack = generate(&SynthConfig::planted(80, 3, 1.0, 2)).unwrap();
        let row = evaluate_checkpoint(&pack, 16, &CohortFilter::ALL, FeatureSet::Length, &AnalysisConfig::default())
            .unwrap();
        assert_eq!(row.roc_auc(), Some(0.5));
    }

    #[test]
    fn margins_of_identical_sweeps_are_zero() {
        let pack = toy();
        let s = sweep(
            &pack,
            &[4, 8],
            &[CohortFilter::ALL],
            &[FeatureSet::HiddenState],
            &AnalysisConfig::default(),
        )
        .unwrap();
        let m = margin_table(&s, &s).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|r| r.margin == Some(0.0)));
    }

    #[test]
    fn margin_grid_mismatch() {
        let pack = toy();
        let cfg = AnalysisConfig::default();
        let a = sweep(&pack, &[4, 8], &[CohortFilter::ALL], &[FeatureSet::HiddenState], &cfg).unwrap();
        let b = sweep(&pack, &[4], &[CohortFilter::ALL], &[FeatureSet::Length], &cfg).unwrap();
        assert!(matches!(margin_table(&a, &b), Err(AnalysisError::GridMismatch(_))));
    }
}
