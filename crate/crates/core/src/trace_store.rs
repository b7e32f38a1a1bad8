//! Trace packs: pooled hidden states, labels and metadata captured at fixed
//! reasoning-prefix checkpoints.
//!
//! On disk a pack is a directory:
//!
//! ```text
//! pack/
//! ├── manifest.json      schema_version, model_name, hidden_dim, prefix_grid,
//! │                      pooling_window, n_examples
//! ├── examples.jsonl     one metadata object per example
//! └── states_t{t}.bin    little-endian f32, row-major, one row per example
//!                        that survives to checkpoint t (examples.jsonl order)
//! ```
//!
//! A matrix file is only written when at least one example survives to `t`.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PREFIX_GRID: [u32; 10] = [4, 8, 16, 32, 64, 128, 192, 256, 384, 512];
pub const DEFAULT_POOLING_WINDOW: u32 = 4;

const MANIFEST_FILE: &str = "manifest.json";
const EXAMPLES_FILE: &str = "examples.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PackError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path} (line {line}): {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("dimension mismatch in {file}: expected {expected} bytes, found {actual}")]
    DimensionMismatch {
        file: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("non-finite value in {file} at row {row}, column {col}")]
    NonFinite { file: PathBuf, row: usize, col: usize },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("malformed pack: {0}")]
    Format(String),
    #[error("pack has {} invariant violation(s): {}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("checkpoint t={0} is not in the prefix grid")]
    NotInGrid(u32),
    #[error("example {example_id:?} survives to t={t} but has no checkpoint record")]
    MissingCheckpoint { example_id: String, t: u32 },
    #[error("cannot merge packs: {0}")]
    Incompatible(String),
    #[error("cannot merge packs: example id {0:?} appears in more than one pack")]
    IdCollision(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyBucket {
    Easy,
    Hard,
}

impl DifficultyBucket {
    /// Levels 1-2 are easy, 4-5 are hard. Level 3 (and anything else) has no bucket.
    pub fn for_level(level: u8) -> Option<Self> {
        match level {
            1 | 2 => Some(Self::Easy),
            4 | 5 => Some(Self::Hard),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Hard => "hard",
        }
    }
}

impl fmt::Display for DifficultyBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State of one example after the first `t` reasoning tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub t: u32,
    /// Mean of the final-layer hidden states over the pooling window ending at `t`.
    pub pooled_state: Vec<f32>,
    /// Mean next-token entropy (nats) over reasoning tokens `1..=t`.
    pub mean_entropy: f64,
    /// Mean next-token entropy (nats) over the last four tokens ending at `t`.
    pub window_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleTrace {
    pub example_id: String,
    pub difficulty_bucket: DifficultyBucket,
    pub raw_level: u8,
    pub correct: bool,
    pub reasoning_length: u32,
    pub checkpoints: Vec<CheckpointRecord>,
}

impl ExampleTrace {
    pub fn checkpoint(&self, t: u32) -> Option<&CheckpointRecord> {
        self.checkpoints
            .binary_search_by_key(&t, |c| c.t)
            .ok()
            .map(|i| &self.checkpoints[i])
    }

    /// Survival rule: an example contributes to checkpoint `t` iff it reasoned for at least `t` tokens.
    pub fn survives(&self, t: u32) -> bool {
        self.reasoning_length >= t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePack {
    pub schema_version: u32,
    pub model_name: String,
    pub hidden_dim: usize,
    pub prefix_grid: Vec<u32>,
    pub pooling_window: u32,
    pub examples: Vec<ExampleTrace>,
}

impl TracePack {
    /// An empty pack with the default grid and pooling window.
    pub fn new(model_name: impl Into<String>, hidden_dim: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model_name: model_name.into(),
            hidden_dim,
            prefix_grid: DEFAULT_PREFIX_GRID.to_vec(),
            pooling_window: DEFAULT_POOLING_WINDOW,
            examples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Indices (into `examples`) of the examples that survive to `t`.
    pub fn survivors(&self, t: u32) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.survives(t))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn example_ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.example_id.as_str())
    }
}

/// A broken invariant. Violations are data; a pack may carry many.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub example_id: Option<String>,
    pub t: Option<u32>,
    pub message: String,
}

impl Violation {
    fn pack(message: impl Into<String>) -> Self {
        Self {
            example_id: None,
            t: None,
            message: message.into(),
        }
    }

    fn example(id: &str, message: impl Into<String>) -> Self {
        Self {
            example_id: Some(id.to_owned()),
            t: None,
            message: message.into(),
        }
    }

    fn checkpoint(id: &str, t: u32, message: impl Into<String>) -> Self {
        Self {
            example_id: Some(id.to_owned()),
            t: Some(t),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.example_id, self.t) {
            (Some(id), Some(t)) => write!(f, "example {id:?} t={t}: {}", self.message),
            (Some(id), None) => write!(f, "example {id:?}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Checks every pack invariant and returns the violations found (empty when valid).
pub fn validate_pack(pack: &TracePack) -> Vec<Violation> {
    let mut out = Vec::new();

    if pack.hidden_dim == 0 {
        out.push(Violation::pack("hidden_dim must be positive"));
    }
    if pack.pooling_window == 0 {
        out.push(Violation::pack("pooling_window must be positive"));
    }
    if pack.prefix_grid.is_empty() {
        out.push(Violation::pack("prefix_grid is empty"));
    }
    if pack.prefix_grid.windows(2).any(|w| w[0] >= w[1]) {
        out.push(Violation::pack("prefix_grid must be strictly increasing"));
    }
    if let Some(&min_t) = pack.prefix_grid.iter().min() {
        if min_t < pack.pooling_window {
            out.push(Violation::pack(format!(
                "smallest checkpoint {min_t} is below pooling_window {}",
                pack.pooling_window
            )));
        }
    }

    let grid: HashSet<u32> = pack.prefix_grid.iter().copied().collect();
    let mut seen = HashSet::new();
    for ex in &pack.examples {
        let id = ex.example_id.as_str();
        if !seen.insert(id) {
            out.push(Violation::example(id, "duplicate example_id"));
        }
        match DifficultyBucket::for_level(ex.raw_level) {
            None => out.push(Violation::example(
                id,
                format!("raw_level {} has no difficulty bucket", ex.raw_level),
            )),
            Some(b) if b != ex.difficulty_bucket => out.push(Violation::example(
                id,
                format!(
                    "difficulty_bucket {} disagrees with raw_level {}",
                    ex.difficulty_bucket, ex.raw_level
                ),
            )),
            Some(_) => {}
        }
        if ex.reasoning_length == 0 {
            out.push(Violation::example(id, "reasoning_length must be positive"));
        }
        if ex.checkpoints.windows(2).any(|w| w[0].t >= w[1].t) {
            out.push(Violation::example(id, "checkpoint t values must be strictly increasing"));
        }
        for cp in &ex.checkpoints {
            if cp.t > ex.reasoning_length {
                out.push(Violation::checkpoint(
                    id,
                    cp.t,
                    format!("checkpoint beyond reasoning_length {}", ex.reasoning_length),
                ));
            }
            if !grid.contains(&cp.t) {
                out.push(Violation::checkpoint(id, cp.t, "checkpoint not in prefix_grid"));
            }
            if cp.pooled_state.len() != pack.hidden_dim {
                out.push(Violation::checkpoint(
                    id,
                    cp.t,
                    format!(
                        "pooled_state has length {}, expected hidden_dim {}",
                        cp.pooled_state.len(),
                        pack.hidden_dim
                    ),
                ));
            }
            if cp.pooled_state.iter().any(|v| !v.is_finite()) {
                out.push(Violation::checkpoint(id, cp.t, "pooled_state has non-finite entries"));
            }
            if !(cp.mean_entropy.is_finite() && cp.mean_entropy >= 0.0) {
                out.push(Violation::checkpoint(id, cp.t, "mean_entropy must be finite and >= 0"));
            }
            if !(cp.window_entropy.is_finite() && cp.window_entropy >= 0.0) {
                out.push(Violation::checkpoint(id, cp.t, "window_entropy must be finite and >= 0"));
            }
        }
        for &t in &pack.prefix_grid {
            if t <= ex.reasoning_length && ex.checkpoint(t).is_none() {
                out.push(Violation::checkpoint(id, t, "surviving checkpoint is missing"));
            }
        }
    }
    out
}

/// Rows of one checkpoint after survival filtering.
#[derive(Debug, Clone)]
pub struct CheckpointMatrix {
    /// `n × hidden_dim`, rows in examples-file order.
    pub x: DMatrix<f64>,
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    /// Positions of the rows in `pack.examples`.
    pub indices: Vec<usize>,
}

pub fn checkpoint_matrix(pack: &TracePack, t: u32) -> Result<CheckpointMatrix, PackError> {
    if !pack.prefix_grid.contains(&t) {
        return Err(PackError::NotInGrid(t));
    }
    let indices = pack.survivors(t);
    let mut x = DMatrix::zeros(indices.len(), pack.hidden_dim);
    let mut ids = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        let ex = &pack.examples[i];
        let cp = ex.checkpoint(t).ok_or_else(|| PackError::MissingCheckpoint {
            example_id: ex.example_id.clone(),
            t,
        })?;
        if cp.pooled_state.len() != pack.hidden_dim {
            return Err(PackError::Format(format!(
                "example {:?} t={t}: pooled_state length {} != hidden_dim {}",
                ex.example_id,
                cp.pooled_state.len(),
                pack.hidden_dim
            )));
        }
        for (col, &v) in cp.pooled_state.iter().enumerate() {
            x[(row, col)] = f64::from(v);
        }
        ids.push(ex.example_id.clone());
        labels.push(ex.correct);
    }
    Ok(CheckpointMatrix {
        x,
        ids,
        labels,
        indices,
    })
}

/// Concatenates packs that share schema, model, dimension, grid and pooling window.
pub fn merge_packs(packs: &[TracePack]) -> Result<TracePack, PackError> {
    let (first, rest) = packs
        .split_first()
        .ok_or_else(|| PackError::Incompatible("no packs given".into()))?;
    let mut merged = first.clone();
    let mut seen: HashSet<String> = first.example_ids().map(str::to_owned).collect();
    for p in rest {
        if p.schema_version != first.schema_version {
            return Err(PackError::Incompatible(format!(
                "schema_version {} vs {}",
                first.schema_version, p.schema_version
            )));
        }
        if p.model_name != first.model_name {
            return Err(PackError::Incompatible(format!(
                "model_name {:?} vs {:?}",
                first.model_name, p.model_name
            )));
        }
        if p.hidden_dim != first.hidden_dim {
            return Err(PackError::Incompatible(format!(
                "hidden_dim {} vs {}",
                first.hidden_dim, p.hidden_dim
            )));
        }
        if p.prefix_grid != first.prefix_grid {
            return Err(PackError::Incompatible("prefix_grid differs".into()));
        }
        if p.pooling_window != first.pooling_window {
            return Err(PackError::Incompatible(format!(
                "pooling_window {} vs {}",
                first.pooling_window, p.pooling_window
            )));
        }
        for ex in &p.examples {
            if !seen.insert(ex.example_id.clone()) {
                return Err(PackError::IdCollision(ex.example_id.clone()));
            }
            merged.examples.push(ex.clone());
        }
    }
    Ok(merged)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    model_name: String,
    hidden_dim: usize,
    prefix_grid: Vec<u32>,
    pooling_window: u32,
    n_examples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleLine {
    example_id: String,
    raw_level: u8,
    difficulty_bucket: DifficultyBucket,
    correct: bool,
    reasoning_length: u32,
    checkpoints: Vec<CheckpointLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointLine {
    t: u32,
    mean_entropy: f64,
    window_entropy: f64,
}

pub fn states_file_name(t: u32) -> String {
    format!("states_t{t}.bin")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PackError + '_ {
    move |source| PackError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn write_pack(pack: &TracePack, dir: impl AsRef<Path>) -> Result<(), PackError> {
    let dir = dir.as_ref();
    let violations = validate_pack(pack);
    if !violations.is_empty() {
        return Err(PackError::Invalid(violations));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest = Manifest {
        schema_version: pack.schema_version,
        model_name: pack.model_name.clone(),
        hidden_dim: pack.hidden_dim,
        prefix_grid: pack.prefix_grid.clone(),
        pooling_window: pack.pooling_window,
        n_examples: pack.examples.len(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;

    let path = dir.join(EXAMPLES_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for ex in &pack.examples {
        let line = ExampleLine {
            example_id: ex.example_id.clone(),
            raw_level: ex.raw_level,
            difficulty_bucket: ex.difficulty_bucket,
            correct: ex.correct,
            reasoning_length: ex.reasoning_length,
            checkpoints: ex
                .checkpoints
                .iter()
                .map(|c| CheckpointLine {
                    t: c.t,
                    mean_entropy: c.mean_entropy,
                    window_entropy: c.window_entropy,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line).expect("example line serializes");
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    for &t in &pack.prefix_grid {
        let rows: Vec<&CheckpointRecord> =
            pack.examples.iter().filter_map(|e| e.checkpoint(t)).collect();
        let path = dir.join(states_file_name(t));
        if rows.is_empty() {
            // a stale matrix from an earlier write would contradict the manifest
            if path.exists() {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
            continue;
        }
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for cp in rows {
            for v in &cp.pooled_state {
                w.write_all(&v.to_le_bytes()).map_err(io_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn load_pack(dir: impl AsRef<Path>) -> Result<TracePack, PackError> {
    let dir = dir.as_ref();

    let path = dir.join(MANIFEST_FILE);
    let text = read_required(&path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| PackError::Json {
        path: path.clone(),
        line: source.line(),
        source,
    })?;
    if manifest.hidden_dim == 0 {
        return Err(PackError::Format("manifest hidden_dim must be positive".into()));
    }

    let path = dir.join(EXAMPLES_FILE);
    let file = File::open(&path).map_err(|e| missing_or_io(&path, e))?;
    let mut examples = Vec::with_capacity(manifest.n_examples);
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExampleLine = serde_json::from_str(&line).map_err(|source| PackError::Json {
            path: path.clone(),
            line: i + 1,
            source,
        })?;
        if !seen.insert(parsed.example_id.clone()) {
            return Err(PackError::DuplicateId(parsed.example_id));
        }
        examples.push(ExampleTrace {
            example_id: parsed.example_id,
            difficulty_bucket: parsed.difficulty_bucket,
            raw_level: parsed.raw_level,
            correct: parsed.correct,
            reasoning_length: parsed.reasoning_length,
            checkpoints: parsed
                .checkpoints
                .into_iter()
                .map(|c| CheckpointRecord {
                    t: c.t,
                    pooled_state: Vec::new(),
                    mean_entropy: c.mean_entropy,
                    window_entropy: c.window_entropy,
                })
                .collect(),
        });
    }
    if examples.len() != manifest.n_examples {
        return Err(PackError::Format(format!(
            "manifest declares {} examples, {} has {}",
            manifest.n_examples,
            EXAMPLES_FILE,
            examples.len()
        )));
    }

    let grid: HashSet<u32> = manifest.prefix_grid.iter().copied().collect();
    for ex in &examples {
        if let Some(cp) = ex.checkpoints.iter().find(|c| !grid.contains(&c.t)) {
            return Err(PackError::Format(format!(
                "example {:?} has checkpoint t={} outside the prefix grid",
                ex.example_id, cp.t
            )));
        }
    }

    let dim = manifest.hidden_dim;
    for &t in &manifest.prefix_grid {
        let n_rows = examples
            .iter()
            .filter(|e| e.checkpoints.iter().any(|c| c.t == t))
            .count();
        let path = dir.join(states_file_name(t));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && n_rows == 0 => continue,
            Err(e) => return Err(missing_or_io(&path, e)),
        };
        let expected = (n_rows * dim * 4) as u64;
        if bytes.len() as u64 != expected {
            return Err(PackError::DimensionMismatch {
                file: path,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let mut chunks = bytes.chunks_exact(4);
        let mut row = 0;
        for ex in examples.iter_mut() {
            let Some(cp) = ex.checkpoints.iter_mut().find(|c| c.t == t) else {
                continue;
            };
            let mut state = Vec::with_capacity(dim);
            for col in 0..dim {
                let chunk = chunks.next().expect("size checked above");
                let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
                if !v.is_finite() {
                    return Err(PackError::NonFinite {
                        file: path.clone(),
                        row,
                        col,
                    });
                }
                state.push(v);
            }
            cp.pooled_state = state;
            row += 1;
        }
    }

    let pack = TracePack {
        schema_version: manifest.schema_version,
        model_name: manifest.model_name,
        hidden_dim: dim,
        prefix_grid: manifest.prefix_grid,
        pooling_window: manifest.pooling_window,
        examples,
    };
    let violations = validate_pack(&pack);
    if violations.is_empty() {
        Ok(pack)
    } else {
        Err(PackError::Invalid(violations))
    }
}

fn read_required(path: &Path) -> Result<String, PackError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| missing_or_io(path, e))?;
    Ok(s)
}

fn missing_or_io(path: &Path, e: std::io::Error) -> PackError {
    if e.kind() == std::io::ErrorKind::NotFound {
        PackError::MissingFile(path.to_owned())
    } else {
        PackError::Io {
            path: path.to_owned(),
            source: e,
        }
    }
}
