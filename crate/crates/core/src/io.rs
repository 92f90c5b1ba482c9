//! On-disk formats: dataset directory (JSON manifest + CSV matrices), model
//! JSON and objective trace CSV.
//!
//! Matrices are written one instance per CSV row with a header naming every
//! column. Floats use 17 significant digits, so values round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModalityLayout, TrainingSet, WeightU, WeightW};
use crate::norms::ObjectiveBreakdown;
use crate::simulator::{Episode, SimConfig, TerrainProfile};
use crate::solver::{FitOptions, FitResult};

pub const DATASET_FORMAT: &str = "terradapt-dataset/1";
pub const MODEL_FORMAT: &str = "terradapt-model/1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const EXPECTED_FILE: &str = "expected.csv";
pub const ACTUAL_FILE: &str = "actual.csv";
pub const DIFFERENCES_FILE: &str = "differences.csv";
pub const EPISODES_FILE: &str = "episodes.csv";

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format { what: "csv", message: format!("{}: bad number {s:?}", path.display()) })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format { what: "json", message: e.to_string() })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { what: "json", message: format!("{}: {e}", path.display()) })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes a `rows × n` matrix as `n` CSV records (one per column) under
/// `header`, which names the matrix rows.
pub fn write_matrix_csv(path: &Path, header: &[String], matrix: &DMatrix<f64>) -> Result<()> {
    if header.len() != matrix.nrows() {
        return Err(Error::dim("csv header width", matrix.nrows(), header.len()));
    }
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_error(path))?;
    for col in matrix.column_iter() {
        w.write_record(col.iter().map(|&v| format_float(v))).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_matrix_csv`]; the header must equal `header` exactly.
pub fn read_matrix_csv(path: &Path, header: &[String]) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let found: Vec<String> = r.headers().map_err(csv_error(path))?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Format {
            what: "csv",
            message: format!("{}: header does not match the layout", path.display()),
        });
    }
    let mut values = Vec::new();
    let mut n = 0;
    for record in r.records() {
        let record = record.map_err(csv_error(path))?;
        for field in record.iter() {
            values.push(parse_float(field, path)?);
        }
        n += 1;
    }
    Ok(DMatrix::from_vec(header.len(), n, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub features: String,
    pub expected: String,
    pub actual: String,
    pub differences: String,
    pub episodes: String,
}

impl Default for DatasetFiles {
    fn default() -> Self {
        Self {
            features: FEATURES_FILE.into(),
            expected: EXPECTED_FILE.into(),
            actual: ACTUAL_FILE.into(),
            differences: DIFFERENCES_FILE.into(),
            episodes: EPISODES_FILE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub generator: String,
    pub layout: ModalityLayout,
    pub preset: String,
    pub profile: TerrainProfile,
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
    pub steps_per_episode: usize,
    pub instances: usize,
    pub files: DatasetFiles,
}

fn frame_names(layout: &ModalityLayout) -> Vec<String> {
    layout
        .widths()
        .iter()
        .enumerate()
        .flat_map(|(i, &w)| (0..w).map(move |j| format!("mod{}_dim{j}", i + 1)))
        .collect()
}

fn episode_header(layout: &ModalityLayout) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "step".to_string()];
    h.extend(frame_names(layout));
    h.extend((0..layout.behavior_dim()).map(|j| format!("expected_b{j}")));
    h.extend((0..layout.behavior_dim()).map(|j| format!("actual_b{j}")));
    h.extend(["x", "y", "heading"].map(String::from));
    h
}

fn write_episodes(path: &Path, layout: &ModalityLayout, episodes: &[Episode]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(episode_header(layout)).map_err(csv_error(path))?;
    for (e, ep) in episodes.iter().enumerate() {
        for (t, s) in ep.steps.iter().enumerate() {
            let mut rec = vec![e.to_string(), t.to_string()];
            let pose = [s.pose.x, s.pose.y, s.pose.heading];
            let floats = s
                .features
                .iter()
                .chain(&s.expected)
                .chain(&s.actual)
                .chain(&pose);
            rec.extend(floats.map(|&v| format_float(v)));
            w.write_record(&rec).map_err(csv_error(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the manifest, the training matrices and the raw episodes into `dir`
/// (created if missing).
#[allow(clippy::too_many_arguments)]
pub fn write_dataset(
    dir: &Path,
    profile: &TerrainProfile,
    sim: &SimConfig,
    seeds: &[u64],
    steps_per_episode: usize,
    episodes: &[Episode],
    data: &TrainingSet,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layout = data.layout();
    let files = DatasetFiles::default();
    write_matrix_csv(&dir.join(&files.features), &layout.feature_names(), data.features())?;
    write_matrix_csv(&dir.join(&files.expected), &layout.behavior_names(), data.expected())?;
    write_matrix_csv(&dir.join(&files.actual), &layout.behavior_names(), data.actual())?;
    write_matrix_csv(&dir.join(&files.differences), &layout.difference_names(), data.differences())?;
    write_episodes(&dir.join(&files.episodes), layout, episodes)?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        generator: concat!("terradapt ", env!("CARGO_PKG_VERSION")).into(),
        layout: layout.clone(),
        preset: profile.name.clone(),
        profile: profile.clone(),
        sim: sim.clone(),
        seeds: seeds.to_vec(),
        steps_per_episode,
        instances: data.len(),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, TrainingSet)> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Format { what: "dataset manifest", message: format!("unsupported format {:?}", manifest.format) });
    }
    let layout = &manifest.layout;
    let path = |f: &str| -> PathBuf { dir.join(f) };
    let x = read_matrix_csv(&path(&manifest.files.features), &layout.feature_names())?;
    let y = read_matrix_csv(&path(&manifest.files.expected), &layout.behavior_names())?;
    let y_hat = read_matrix_csv(&path(&manifest.files.actual), &layout.behavior_names())?;
    let e = read_matrix_csv(&path(&manifest.files.differences), &layout.difference_names())?;
    let data = TrainingSet::new(layout.clone(), x, y, y_hat, e)?;
    if data.len() != manifest.instances {
        return Err(Error::dim("dataset instances", manifest.instances, data.len()));
    }
    Ok((manifest, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub layout: ModalityLayout,
    pub options: FitOptions,
    pub converged: bool,
    pub iterations: usize,
    pub objective: ObjectiveBreakdown,
    /// Row-major `d × r`.
    pub w: Vec<Vec<f64>>,
    /// Row-major `rc × r`.
    pub u: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::dim(what, nrows, rows.len()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::dim(what, ncols, bad.len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn from_fit(fit: &FitResult, options: &FitOptions) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            layout: fit.w.layout().clone(),
            options: options.clone(),
            converged: fit.converged,
            iterations: fit.iterations,
            objective: *fit.final_objective(),
            w: rows_of(fit.w.values()),
            u: rows_of(fit.u.values()),
        }
    }

    pub fn weights(&self) -> Result<(WeightW, WeightU)> {
        let l = &self.layout;
        let r = l.behavior_dim();
        let w = WeightW::new(from_rows(&self.w, l.feature_dim(), r, "model W")?, l.clone())?;
        let u = WeightU::new(from_rows(&self.u, l.difference_dim(), r, "model U")?, l.clone())?;
        Ok((w, u))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = read_json(path)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::Format { what: "model", message: format!("unsupported format {:?}", model.format) });
        }
        model.weights()?;
        Ok(model)
    }
}

pub const TRACE_HEADER: [&str; 5] = ["iter", "loss", "modality_penalty", "temporal_penalty", "total"];

pub fn write_trace_csv(path: &Path, trace: &[ObjectiveBreakdown]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_error(path))?;
    for (i, t) in trace.iter().enumerate() {
        let rec = [i.to_string()]
            .into_iter()
            .chain([t.loss, t.modality_penalty, t.temporal_penalty, t.total].map(format_float));
        w.write_record(rec).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<ObjectiveBreakdown>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    if r.headers().map_err(csv_error(path))?.iter().ne(TRACE_HEADER) {
        return Err(Error::Format { what: "trace csv", message: format!("{}: unexpected header", path.display()) });
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error(path))?;
            let f = |i: usize| parse_float(rec.get(i).unwrap_or(""), path);
            Ok(ObjectiveBreakdown { loss: f(1)?, modality_penalty: f(2)?, temporal_penalty: f(3)?, total: f(4)? })
        })
        .collect()
}
