//! Deterministic desk-scale ground-vehicle world.
//!
//! A track runs along the +x axis and is split into terrain segments. Each
//! segment parameterizes the feature generators (texture, shape, geometry) and
//! the setbacks applied to executed behaviors (slip, drag, roughness). A
//! scripted expert supplies expected behaviors; actual behaviors go through
//! the setback model and are integrated with unicycle kinematics.
//!
//! Behaviors are `(linear speed m/s, angular rate rad/s)`. All randomness
//! comes from one ChaCha8 stream seeded per episode, drawn in a fixed order
//! (feature noise, then behavior noise) every step regardless of the
//! commands, so runs that differ only in their controller see identical noise.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_differences, build_instance, ModalityLayout, TrainingSet, WeightU, WeightW};
use crate::predictor::{self, ExecutionState, HistoryEntry, InverseMode};

/// Behavior vector length: linear speed and angular rate.
pub const BEHAVIOR_DIM: usize = 2;

/// Control period matching a 30 Hz sensor rate.
pub const DEFAULT_DT: f64 = 1.0 / 30.0;

/// Names of the built-in terrain profiles.
pub const PRESETS: [&str; 8] = [
    "grass",
    "sand",
    "gravel",
    "medium_rock",
    "large_rock",
    "grass_to_large_rock",
    "mixed_1",
    "mixed_2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSegment {
    pub terrain: String,
    /// Meters along the track.
    pub length: f64,
    /// Fraction of commanded motion lost to wheel slip.
    pub slip: f64,
    /// Fraction of commanded motion lost to load and rolling resistance.
    pub drag: f64,
    /// Surface roughness; slows the expert and amplifies execution noise.
    pub roughness: f64,
    /// Amplitude of the texture sinusoid bundle.
    pub texture: f64,
    /// Shape code in `[0, 1]`, encoded as a one-hot step bundle.
    pub shape: f64,
}

impl TerrainSegment {
    fn named(terrain: &str, length: f64) -> Self {
        let (roughness, slip, drag, texture, shape) = match terrain {
            "grass" => (0.05, 0.05, 0.0, 0.3, 0.1),
            "sand" => (0.15, 0.20, 0.10, 0.2, 0.3),
            "gravel" => (0.25, 0.10, 0.05, 0.6, 0.5),
            "medium_rock" => (0.45, 0.10, 0.10, 0.8, 0.7),
            "large_rock" => (0.60, 0.15, 0.10, 1.0, 0.9),
            other => unreachable!("unknown terrain {other}"),
        };
        Self {
            terrain: terrain.to_string(),
            length,
            slip,
            drag,
            roughness,
            texture,
            shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainProfile {
    pub name: String,
    pub segments: Vec<TerrainSegment>,
}

impl TerrainProfile {
    /// Built-in profile by name (see [`PRESETS`]). Single-terrain tracks are
    /// 10 m long; mixed tracks split 10 m between their terrains.
    pub fn preset(name: &str) -> Result<Self> {
        let parts: &[&str] = match name {
            "grass" | "sand" | "gravel" | "medium_rock" | "large_rock" => &[name],
            "grass_to_large_rock" => &["grass", "large_rock"],
            "mixed_1" => &["grass", "gravel", "sand", "medium_rock"],
            "mixed_2" => &["sand", "medium_rock", "large_rock", "gravel"],
            other => return Err(Error::InvalidProfile(format!("unknown preset {other:?}"))),
        };
        let length = 10.0 / parts.len() as f64;
        Ok(Self {
            name: name.to_string(),
            segments: parts.iter().map(|t| TerrainSegment::named(t, length)).collect(),
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(json).map_err(|e| Error::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        if self.segments.is_empty() {
            return bad("profile has no segments".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.length > 0.0 && s.length.is_finite()) {
                return bad(format!("segment {i}: length must be > 0"));
            }
            if !(0.0..1.0).contains(&s.slip) {
                return bad(format!("segment {i}: slip must be in [0, 1)"));
            }
            if !(0.0..1.0).contains(&s.drag) {
                return bad(format!("segment {i}: drag must be in [0, 1)"));
            }
            if s.slip + s.drag >= 1.0 {
                return bad(format!("segment {i}: slip + drag must be < 1"));
            }
            if !(s.roughness >= 0.0 && s.roughness.is_finite()) {
                return bad(format!("segment {i}: roughness must be >= 0"));
            }
            if !s.texture.is_finite() || !(0.0..=1.0).contains(&s.shape) {
                return bad(format!("segment {i}: texture must be finite and shape in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Segment under track position `s`; positions past either end clamp to
    /// the first or last segment.
    pub fn segment_at(&self, s: f64) -> &TerrainSegment {
        let mut end = 0.0;
        for seg in &self.segments {
            end += seg.length;
            if s < end {
                return seg;
            }
        }
        self.segments.last().expect("validated non-empty")
    }

    /// Copy with every segment's slip replaced.
    pub fn with_slip(mut self, slip: f64) -> Self {
        for seg in &mut self.segments {
            seg.slip = slip;
        }
        self
    }

    /// Copy with slip, drag and roughness zeroed on every segment.
    pub fn without_setbacks(mut self) -> Self {
        for seg in &mut self.segments {
            seg.slip = 0.0;
            seg.drag = 0.0;
            seg.roughness = 0.0;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    /// `texture * sin((j + 1) 1.7 s + j)`
    Texture,
    /// One-hot code of the segment shape, binned over the modality width.
    Shape,
    /// `roughness * (1 + 0.2 sin((j + 1) 0.9 s))`
    Geometry,
    /// Standard normal noise with no relation to the terrain.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub kind: ModalityKind,
    pub width: usize,
}

/// Setbacks acting on one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetbackModel {
    pub slip: f64,
    pub drag: f64,
    pub roughness: f64,
    /// Per-channel standard deviation of execution noise.
    pub noise_std: Vec<f64>,
    /// Weight of the previous actual behavior, in `[0, 1)`.
    pub inertia: f64,
}

impl SetbackModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.inertia) {
            return Err(Error::InvalidProfile(format!("inertia must be in [0, 1), got {}", self.inertia)));
        }
        if self.noise_std.len() != BEHAVIOR_DIM || self.noise_std.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidProfile("noise_std needs two nonnegative entries".into()));
        }
        Ok(())
    }

    /// `ŷ = inertia ŷ_prev + (1 − inertia)(1 − slip − drag) cmd + σ ξ`,
    /// with the speed magnitude capped at `|cmd_v| (1 + roughness)`.
    pub fn apply(&self, previous: &[f64], command: &[f64], noise: &[f64]) -> Vec<f64> {
        let gain = (1.0 - self.inertia) * (1.0 - self.slip - self.drag);
        let mut out: Vec<f64> = (0..BEHAVIOR_DIM)
            .map(|j| {
                self.inertia * previous[j]
                    + gain * command[j]
                    + self.noise_std[j] * noise[j]
            })
            .collect();
        let cap = command[0].abs() * (1.0 + self.roughness);
        out[0] = out[0].clamp(-cap, cap);
        out
    }
}

/// Scripted stand-in for a human demonstrator: slows down on rough ground and
/// steers back onto the track centerline (`y = 0`, heading 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedExpert {
    pub v_max: f64,
    pub v_min: f64,
    /// Speed reduction per unit roughness.
    pub caution: f64,
    pub lateral_gain: f64,
    pub heading_gain: f64,
}

impl Default for ScriptedExpert {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            v_min: 0.1,
            caution: 1.0,
            lateral_gain: 1.5,
            heading_gain: 2.0,
        }
    }
}

impl ScriptedExpert {
    pub fn behavior(&self, segment: &TerrainSegment, pose: &Pose) -> Vec<f64> {
        let speed = (self.v_max * (1.0 - self.caution * segment.roughness)).max(self.v_min);
        let turn = -self.lateral_gain * pose.y - self.heading_gain * pose.heading;
        vec![speed, turn]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Explicit Euler step of unicycle kinematics.
    pub fn advance(&self, behavior: &[f64], dt: f64) -> Pose {
        let (v, omega) = (behavior[0], behavior[1]);
        Pose {
            x: self.x + v * self.heading.cos() * dt,
            y: self.y + v * self.heading.sin() * dt,
            heading: wrap_angle(self.heading + omega * dt),
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub modalities: Vec<ModalitySpec>,
    /// History window `c` used when building training windows.
    pub history: usize,
    pub feature_noise: f64,
    pub noise_std: Vec<f64>,
    pub inertia: f64,
    pub expert: ScriptedExpert,
    pub dt: f64,
    /// Half-width of the corridor around the centerline, meters.
    pub corridor: f64,
    pub stall_speed: f64,
    /// Seconds below `stall_speed` before a run counts as stopped.
    pub stall_time: f64,
    /// Actuator limit on commanded speed magnitude.
    pub speed_limit: f64,
    /// Actuator limit on commanded turn rate magnitude.
    pub turn_limit: f64,
    pub inverse_mode: InverseMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            modalities: vec![
                ModalitySpec { kind: ModalityKind::Texture, width: 4 },
                ModalitySpec { kind: ModalityKind::Shape, width: 4 },
                ModalitySpec { kind: ModalityKind::Geometry, width: 4 },
            ],
            history: 15,
            feature_noise: 0.05,
            noise_std: vec![0.03, 0.05],
            inertia: 0.3,
            expert: ScriptedExpert::default(),
            dt: DEFAULT_DT,
            corridor: 1.0,
            stall_speed: 0.01,
            stall_time: 2.0,
            speed_limit: 2.0,
            turn_limit: 2.0,
            inverse_mode: InverseMode::PseudoInverse,
        }
    }
}

impl SimConfig {
    pub fn layout(&self) -> Result<ModalityLayout> {
        ModalityLayout::new(self.modalities.iter().map(|m| m.width).collect(), self.history, BEHAVIOR_DIM)
    }

    /// Copy with every setback source switched off.
    pub fn without_noise(mut self) -> Self {
        self.feature_noise = 0.0;
        self.noise_std = vec![0.0; BEHAVIOR_DIM];
        self.inertia = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        if !(self.dt > 0.0) {
            return Err(Error::InvalidProfile(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::InvalidProfile("feature_noise must be >= 0".into()));
        }
        if !(self.corridor > 0.0 && self.speed_limit > 0.0 && self.turn_limit > 0.0) {
            return Err(Error::InvalidProfile("corridor and actuator limits must be > 0".into()));
        }
        self.setback(&TerrainSegment::named("grass", 1.0)).validate()
    }

    fn setback(&self, segment: &TerrainSegment) -> SetbackModel {
        SetbackModel {
            slip: segment.slip,
            drag: segment.drag,
            roughness: segment.roughness,
            noise_std: self.noise_std.clone(),
            inertia: self.inertia,
        }
    }

    fn stall_steps(&self) -> usize {
        (self.stall_time / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub features: Vec<f64>,
    pub expected: Vec<f64>,
    pub actual: Vec<f64>,
    /// Pose after executing the actual behavior.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub profile: String,
    pub seed: u64,
    pub dt: f64,
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    /// Poses including the starting pose at the origin.
    pub fn trajectory(&self) -> Vec<Pose> {
        std::iter::once(Pose::default()).chain(self.steps.iter().map(|s| s.pose)).collect()
    }
}

struct World<'a> {
    profile: &'a TerrainProfile,
    config: &'a SimConfig,
    rng: ChaCha8Rng,
}

impl<'a> World<'a> {
    fn new(profile: &'a TerrainProfile, config: &'a SimConfig, seed: u64) -> Self {
        Self {
            profile,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn features(&mut self, pose: &Pose) -> Vec<f64> {
        let s = pose.x;
        let seg = self.profile.segment_at(s);
        let noise = self.config.feature_noise;
        let mut out = Vec::new();
        for spec in &self.config.modalities {
            for j in 0..spec.width {
                let jf = j as f64;
                let clean = match spec.kind {
                    ModalityKind::Texture => seg.texture * ((jf + 1.0) * 1.7 * s + jf).sin(),
                    ModalityKind::Shape => {
                        let bin = ((seg.shape * spec.width as f64) as usize).min(spec.width - 1);
                        if bin == j {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    ModalityKind::Geometry => seg.roughness * (1.0 + 0.2 * ((jf + 1.0) * 0.9 * s).sin()),
                    ModalityKind::Noise => 0.0,
                };
                let z = self.normal();
                out.push(match spec.kind {
                    ModalityKind::Noise => z,
                    _ => clean + noise * z,
                });
            }
        }
        out
    }

    fn execute(&mut self, pose: &Pose, previous: &[f64], command: &[f64]) -> Vec<f64> {
        let noise: Vec<f64> = (0..BEHAVIOR_DIM).map(|_| self.normal()).collect();
        let seg = self.profile.segment_at(pose.x);
        self.config.setback(seg).apply(previous, command, &noise)
    }
}

/// Records one expert-driven episode: the expert's behavior is both the
/// command and the expected behavior.
pub fn generate_episode(profile: &TerrainProfile, config: &SimConfig, n_steps: usize, seed: u64) -> Result<Episode> {
    profile.validate()?;
    config.validate()?;
    if n_steps < config.history {
        return Err(Error::InvalidProfile(format!(
            "n_steps ({n_steps}) must be at least the history length ({})",
            config.history
        )));
    }
    let mut world = World::new(profile, config, seed);
    let mut pose = Pose::default();
    let mut previous = vec![0.0; BEHAVIOR_DIM];
    let mut steps = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let features = world.features(&pose);
        let expected = config.expert.behavior(profile.segment_at(pose.x), &pose);
        let actual = world.execute(&pose, &previous, &expected);
        pose = pose.advance(&actual, config.dt);
        previous.clone_from(&actual);
        steps.push(EpisodeStep {
            features,
            expected,
            actual,
            pose,
        });
    }
    Ok(Episode {
        profile: profile.name.clone(),
        seed,
        dt: config.dt,
        steps,
    })
}

/// One training column per complete window of `c` consecutive steps.
pub fn episodes_to_training_set(episodes: &[Episode], layout: &ModalityLayout) -> Result<TrainingSet> {
    let c = layout.history();
    let r = layout.behavior_dim();
    let mut x_cols = Vec::new();
    let mut e_cols = Vec::new();
    let mut expected = Vec::new();
    let mut actual = Vec::new();
    for episode in episodes {
        if episode.steps.len() < c {
            return Err(Error::dim("episode length", c, episode.steps.len()));
        }
        for t in (c - 1)..episode.steps.len() {
            let window: Vec<&EpisodeStep> = (0..c).map(|k| &episode.steps[t - k]).collect();
            let frames: Vec<&[f64]> = window.iter().map(|s| s.features.as_slice()).collect();
            let ys: Vec<&[f64]> = window.iter().map(|s| s.expected.as_slice()).collect();
            let y_hats: Vec<&[f64]> = window.iter().map(|s| s.actual.as_slice()).collect();
            x_cols.push(build_instance(&frames, layout)?.into_inner());
            e_cols.push(build_differences(&ys, &y_hats, layout)?);
            if ys[0].len() != r {
                return Err(Error::dim("behavior width", r, ys[0].len()));
            }
            expected.extend_from_slice(ys[0]);
            actual.extend_from_slice(y_hats[0]);
        }
    }
    if x_cols.is_empty() {
        return Err(Error::dim("instance count", 1, 0));
    }
    let n = x_cols.len();
    TrainingSet::new(
        layout.clone(),
        DMatrix::from_columns(&x_cols),
        DMatrix::from_vec(r, n, expected),
        DMatrix::from_vec(r, n, actual),
        DMatrix::from_columns(&e_cols),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Command `Wᵀx` only.
    Feedforward,
    /// Command `Wᵀx + ṽ + Uᵀe` from the predictor.
    WithOffset,
}

impl ControlMode {
    pub fn name(&self) -> &'static str {
        match self {
            ControlMode::Feedforward => "feedforward",
            ControlMode::WithOffset => "with_offset",
        }
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedforward" => Ok(ControlMode::Feedforward),
            "with_offset" => Ok(ControlMode::WithOffset),
            other => Err(Error::InvalidOptions(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    /// Left the corridor around the centerline.
    OutOfCorridor,
    /// Speed stayed below the stall threshold for the stall time.
    Stalled,
    /// Step budget exhausted before reaching the end of the track.
    TimedOut,
    /// The predictor could not invert a temporal block.
    SingularTemporalBlock,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        *self != RunOutcome::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRun {
    pub mode: ControlMode,
    pub episode: Episode,
    pub commands: Vec<Vec<f64>>,
    /// Poses from integrating the expected behaviors, starting at the origin.
    pub expected_poses: Vec<Pose>,
    /// Poses actually reached, starting at the origin.
    pub actual_poses: Vec<Pose>,
    pub outcome: RunOutcome,
}

impl ClosedLoopRun {
    pub fn elapsed(&self) -> f64 {
        self.episode.steps.len() as f64 * self.episode.dt
    }
}

fn clamp_command(config: &SimConfig, mut command: Vec<f64>) -> Vec<f64> {
    command[0] = command[0].clamp(-config.speed_limit, config.speed_limit);
    command[1] = command[1].clamp(-config.turn_limit, config.turn_limit);
    command
}

/// Drives a trained model through `profile` until it reaches the end of the
/// track, fails, or exhausts `n_steps`.
///
/// The feature window is padded with the oldest available frame until `c`
/// frames exist. In [`ControlMode::WithOffset`] the difference vector `e`
/// holds `actual − expected` for the last `c` completed steps, and the
/// predicted offset is zero until the window is full.
pub fn closed_loop_run(
    profile: &TerrainProfile,
    config: &SimConfig,
    w: &WeightW,
    u: &WeightU,
    mode: ControlMode,
    n_steps: usize,
    seed: u64,
) -> Result<ClosedLoopRun> {
    profile.validate()?;
    config.validate()?;
    let layout = w.layout();
    if layout.behavior_dim() != BEHAVIOR_DIM || layout.frame_width() != config.layout()?.frame_width() {
        return Err(Error::dim("model frame width", config.layout()?.frame_width(), layout.frame_width()));
    }
    if u.layout() != layout {
        return Err(Error::dim("U rows", layout.difference_dim(), u.values().nrows()));
    }

    let mut world = World::new(profile, config, seed);
    let mut state = ExecutionState::new(layout.clone());
    let mut frames: VecDeque<Vec<f64>> = VecDeque::with_capacity(layout.history());
    let mut pose = Pose::default();
    let mut expected_pose = Pose::default();
    let mut previous = vec![0.0; BEHAVIOR_DIM];
    let mut steps = Vec::new();
    let mut commands = Vec::new();
    let mut expected_poses = vec![expected_pose];
    let mut actual_poses = vec![pose];
    let mut slow_steps = 0;
    let stall_steps = config.stall_steps();
    let finish_line = profile.total_length();
    let mut outcome = RunOutcome::TimedOut;

    for _ in 0..n_steps {
        let features = world.features(&pose);
        let expected = config.expert.behavior(profile.segment_at(pose.x), &pose);

        if frames.len() == layout.history() {
            frames.pop_back();
        }
        frames.push_front(features.clone());
        let oldest = frames.back().expect("just pushed").clone();
        let window: Vec<&[f64]> = (0..layout.history())
            .map(|k| frames.get(k).map_or(oldest.as_slice(), Vec::as_slice))
            .collect();
        let x = build_instance(&window, layout)?;

        let command = match mode {
            ControlMode::Feedforward => w.values().tr_mul(x.values()),
            ControlMode::WithOffset => {
                let predicted = match predictor::predicted_offset(w, u, &state, config.inverse_mode) {
                    Ok(v) => v,
                    Err(Error::SingularTemporalBlock(_)) => {
                        outcome = RunOutcome::SingularTemporalBlock;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                predictor::generate_behavior(w, u, &x, &state.differences(), &predicted)?
            }
        };
        let command = clamp_command(config, command.iter().copied().collect());
        let actual = world.execute(&pose, &previous, &command);

        state.push(HistoryEntry {
            features: features.clone(),
            expected: expected.clone(),
            actual: actual.clone(),
        })?;
        pose = pose.advance(&actual, config.dt);
        expected_pose = expected_pose.advance(&expected, config.dt);
        previous.clone_from(&actual);
        expected_poses.push(expected_pose);
        actual_poses.push(pose);
        commands.push(command);
        steps.push(EpisodeStep {
            features,
            expected,
            actual: actual.clone(),
            pose,
        });

        if pose.y.abs() > config.corridor {
            outcome = RunOutcome::OutOfCorridor;
            break;
        }
        if pose.x >= finish_line {
            outcome = RunOutcome::Completed;
            break;
        }
        slow_steps = if actual[0].abs() < config.stall_speed { slow_steps + 1 } else { 0 };
        if slow_steps >= stall_steps {
            outcome = RunOutcome::Stalled;
            break;
        }
    }

    Ok(ClosedLoopRun {
        mode,
        episode: Episode {
            profile: profile.name.clone(),
            seed,
            dt: config.dt,
            steps,
        },
        commands,
        expected_poses,
        actual_poses,
        outcome,
    })
}

/// Expected behaviors predicted by `Wᵀx` over a training set; handy for
/// checking what a model learned.
pub fn feed_forward(w: &WeightW, data: &TrainingSet) -> DMatrix<f64> {
    w.values().tr_mul(data.features())
}

/// Speed of a behavior vector.
pub fn speed(behavior: &DVector<f64>) -> f64 {
    behavior[0]
}
