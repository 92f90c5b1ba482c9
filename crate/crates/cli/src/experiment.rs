//! The generate, train and eval pipeline, shared by the binary and the
//! acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use terradapt_core::io::{self, DatasetManifest, ModelFile};
use terradapt_core::metrics::{aggregate, render_table, RunMetrics, Summary};
use terradapt_core::oracle::{oracle_fit, OracleOptions};
use terradapt_core::simulator::{
    closed_loop_run, episodes_to_training_set, generate_episode, ControlMode, Episode, TerrainProfile,
};
use terradapt_core::solver::{fit, FitOptions, FitResult};
use terradapt_core::{Error, Result, TrainingSet, WeightU, WeightW};

use crate::config::ExperimentConfig;

pub const EVAL_FORMAT: &str = "terradapt-eval/1";
pub const TRAIN_FORMAT: &str = "terradapt-train/1";
/// JSON schema for [`EvalReport`] files.
pub const SUMMARY_SCHEMA: &str = include_str!("../schema/summary.schema.json");
/// Largest relative objective gap to the oracle that still passes verification.
pub const ORACLE_GAP_LIMIT: f64 = 1e-3;

/// Simulated demonstrations for the configured terrain, one episode per seed.
pub fn simulate(config: &ExperimentConfig) -> Result<(TerrainProfile, Vec<Episode>, TrainingSet)> {
    config.validate()?;
    let profile = config.profile()?;
    let episodes = config
        .train_seeds()
        .par_iter()
        .map(|&seed| generate_episode(&profile, &config.sim, config.train.steps, seed))
        .collect::<Result<Vec<_>>>()?;
    let data = episodes_to_training_set(&episodes, &config.layout()?)?;
    Ok((profile, episodes, data))
}

pub fn generate(config: &ExperimentConfig, dir: &Path) -> Result<DatasetManifest> {
    let (profile, episodes, data) = simulate(config)?;
    io::write_dataset(dir, &profile, &config.sim, &config.train_seeds(), config.train.steps, &episodes, &data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedEntry {
    pub lambda1: f64,
    pub lambda2: f64,
    pub model: String,
    pub trace: String,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Relative gap to the independent oracle, when verification ran.
    pub oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub format: String,
    pub instances: usize,
    pub models: Vec<TrainedEntry>,
}

impl TrainReport {
    pub fn worst_gap(&self) -> Option<f64> {
        self.models.iter().filter_map(|m| m.oracle_gap).reduce(f64::max)
    }
}

/// Fits every `(λ1, λ2)` pair of the grid, in row-major order over `lambda1s`.
pub fn fit_grid(data: &TrainingSet, base: &FitOptions, lambda1s: &[f64], lambda2s: &[f64]) -> Result<Vec<(FitOptions, FitResult)>> {
    let grid: Vec<FitOptions> = lambda1s
        .iter()
        .flat_map(|&l1| lambda2s.iter().map(move |&l2| FitOptions { lambda1: l1, lambda2: l2, ..base.clone() }))
        .collect();
    grid.into_par_iter()
        .map(|opts| fit(data, &opts).map(|r| (opts, r)))
        .collect()
}

/// `|fit − oracle| / oracle` on the full objective.
pub fn oracle_gap(data: &TrainingSet, opts: &FitOptions, result: &FitResult) -> Result<f64> {
    let oracle = oracle_fit(data, opts.lambda1, opts.lambda2, &OracleOptions::default())?;
    Ok((result.final_objective().total - oracle.objective).abs() / oracle.objective.abs().max(f64::MIN_POSITIVE))
}

fn artifact_stem(opts: &FitOptions, grid: bool) -> String {
    if grid {
        format!("l1-{}_l2-{}", opts.lambda1, opts.lambda2)
    } else {
        String::new()
    }
}

/// Trains one model per grid cell and writes `model*.json`, `trace*.csv`
/// and `train.json` into `dir`.
pub fn train(
    data: &TrainingSet,
    base: &FitOptions,
    lambda1s: &[f64],
    lambda2s: &[f64],
    verify: bool,
    dir: &Path,
) -> Result<TrainReport> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let grid = lambda1s.len() * lambda2s.len() > 1;
    let mut models = Vec::new();
    for (opts, result) in fit_grid(data, base, lambda1s, lambda2s)? {
        let stem = artifact_stem(&opts, grid);
        let (model_name, trace_name) = if grid {
            (format!("model_{stem}.json"), format!("trace_{stem}.csv"))
        } else {
            ("model.json".to_string(), "trace.csv".to_string())
        };
        ModelFile::from_fit(&result, &opts).save(&dir.join(&model_name))?;
        io::write_trace_csv(&dir.join(&trace_name), &result.trace)?;
        let oracle_gap = if verify { Some(oracle_gap(data, &opts, &result)?) } else { None };
        models.push(TrainedEntry {
            lambda1: opts.lambda1,
            lambda2: opts.lambda2,
            model: model_name,
            trace: trace_name,
            converged: result.converged,
            iterations: result.iterations,
            objective: result.final_objective().total,
            oracle_gap,
        });
    }
    let report = TrainReport {
        format: TRAIN_FORMAT.into(),
        instances: data.len(),
        models,
    };
    io::write_json(&dir.join("train.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeReport {
    pub mode: ControlMode,
    pub summary: Summary,
    pub runs: Vec<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub model: String,
    pub profile: String,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub modes: Vec<ModeReport>,
}

impl EvalReport {
    pub fn mode(&self, mode: ControlMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn table(&self) -> String {
        let rows: Vec<(String, Summary)> = self.modes.iter().map(|m| (m.mode.name().to_string(), m.summary.clone())).collect();
        render_table(&rows)
    }
}

fn run_file(dir: &Path, mode: ControlMode, seed: u64) -> PathBuf {
    dir.join(format!("{}_{seed:06}.json", mode.name()))
}

/// Closed-loop runs for every configured mode and seed. Runs execute in
/// parallel; with `run_dir` set each run is written to its own file and the
/// report is assembled from those files afterwards.
pub fn evaluate(
    config: &ExperimentConfig,
    profile: &TerrainProfile,
    w: &WeightW,
    u: &WeightU,
    model_name: &str,
    run_dir: Option<&Path>,
) -> Result<EvalReport> {
    let seeds = config.eval_seeds();
    let jobs: Vec<(ControlMode, u64)> = config
        .eval
        .modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let computed = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let run = closed_loop_run(profile, &config.sim, w, u, mode, config.eval.steps, seed)?;
            let metrics = RunMetrics::from_run(&run)?;
            if let Some(dir) = run_dir {
                io::write_json(&run_file(dir, mode, seed), &metrics)?;
            }
            Ok(metrics)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut modes = Vec::new();
    for &mode in &config.eval.modes {
        let runs = match run_dir {
            Some(dir) => seeds.iter().map(|&s| io::read_json(&run_file(dir, mode, s))).collect::<Result<Vec<RunMetrics>>>()?,
            None => jobs.iter().zip(&computed).filter(|(j, _)| j.0 == mode).map(|(_, m)| m.clone()).collect(),
        };
        modes.push(ModeReport {
            mode,
            summary: aggregate(&runs)?,
            runs,
        });
    }
    Ok(EvalReport {
        format: EVAL_FORMAT.into(),
        model: model_name.to_string(),
        profile: profile.name.clone(),
        steps: config.eval.steps,
        seeds,
        modes,
    })
}

/// Evaluates a saved model and writes `summary.json`, `summary.txt` and the
/// per-run files under `dir/runs`.
pub fn eval_model(config: &ExperimentConfig, model_path: &Path, dir: &Path) -> Result<EvalReport> {
    config.validate()?;
    let model = ModelFile::load(model_path)?;
    if model.layout != config.layout()? {
        return Err(Error::InvalidLayout(format!(
            "model layout {:?} does not match the configured simulator {:?}",
            model.layout,
            config.layout()?
        )));
    }
    let (w, u) = model.weights()?;
    let profile = config.profile()?;
    let name = model_path.file_name().map_or_else(|| "model".into(), |n| n.to_string_lossy().into_owned());
    let report = evaluate(config, &profile, &w, &u, &name, Some(&dir.join("runs")))?;
    io::write_json(&dir.join("summary.json"), &report)?;
    fs::write(dir.join("summary.txt"), report.table()).map_err(|e| io_error(dir, e))?;
    Ok(report)
}

fn io_error(path: &Path, err: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order_is_row_major() {
        use terradapt_core::synthetic::{instance, InstanceSpec};
        let layout = terradapt_core::ModalityLayout::new(vec![1, 1], 2, 1).unwrap();
        let data = instance(&InstanceSpec::new(layout, 10, 0)).unwrap().data;
        let out = fit_grid(&data, &FitOptions::default(), &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        let pairs: Vec<_> = out.iter().map(|(o, _)| (o.lambda1, o.lambda2)).collect();
        assert_eq!(pairs, vec![(1.0, 3.0), (1.0, 4.0), (2.0, 3.0), (2.0, 4.0)]);
    }

    #[test]
    fn stems_only_appear_for_grids() {
        let o = FitOptions::with_lambdas(0.01, 10.0);
        assert_eq!(artifact_stem(&o, true), "l1-0.01_l2-10");
        assert_eq!(artifact_stem(&o, false), "");
    }
}
