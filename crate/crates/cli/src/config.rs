//! Run configuration: JSON parsing, defaults, validation and presets.
//!
//! Relative paths inside a config are resolved against the directory the
//! config file lives in.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flexti2v_core::schedule::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_TIMESTEPS};
use flexti2v_core::{Codec, EngineConfig, NoiseSchedule, PromptSpec, TimestepMap, WindowDirection};
use serde::Deserialize;

use crate::error::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionFormat {
    Ppm,
    Ltn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEntry {
    pub path: PathBuf,
    pub position: usize,
    pub format: ConditionFormat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EstimatorChoice {
    Dummy,
    /// Analytic estimator pulling towards the LTN video at this path.
    Oracle(PathBuf),
    Remote(String),
}

impl fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorChoice::Dummy => f.write_str("dummy"),
            EstimatorChoice::Oracle(p) => write!(f, "oracle:{}", p.display()),
            EstimatorChoice::Remote(e) => write!(f, "remote:{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub frames: bool,
    pub latents: bool,
    pub metrics: bool,
    pub timing: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            frames: true,
            latents: false,
            metrics: true,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_timesteps: u32,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            train_timesteps: DEFAULT_TRAIN_TIMESTEPS,
        }
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub prompt: PromptSpec,
    pub conditions: Vec<ConditionEntry>,
    pub codec: Codec,
    pub estimator: EstimatorChoice,
    pub output_dir: PathBuf,
    pub emit: Emit,
    pub schedule: ScheduleParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawDirection {
    PerAlgorithm,
    Inverted,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondition {
    path: PathBuf,
    position: usize,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    prompt: Option<String>,
    negative_prompt: String,
    conditions: Option<Vec<RawCondition>>,
    codec: String,
    estimator: Option<String>,
    output_dir: PathBuf,
    emit: Emit,
    schedule: ScheduleParams,

    num_frames: usize,
    num_steps: usize,
    p0: f64,
    t0: f64,
    delta1: f64,
    delta2: f64,
    guidance_scale: f64,
    sigma: f64,
    seed: u64,
    enable_frame_replace: bool,
    enable_rps: bool,
    enable_dynamic_control: bool,
    hard_replace_output: bool,
    window_direction: RawDirection,
    reuse_inversion_noise: bool,
}

impl Default for RawConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            prompt: None,
            negative_prompt: String::new(),
            conditions: None,
            codec: "identity".into(),
            estimator: None,
            output_dir: PathBuf::from("out"),
            emit: Emit::default(),
            schedule: ScheduleParams::default(),
            num_frames: e.num_frames,
            num_steps: e.num_steps,
            p0: e.p0,
            t0: e.t0,
            delta1: e.delta1,
            delta2: e.delta2,
            guidance_scale: e.guidance_scale,
            sigma: e.sigma,
            seed: e.seed,
            enable_frame_replace: e.enable_frame_replace,
            enable_rps: e.enable_rps,
            enable_dynamic_control: e.enable_dynamic_control,
            hard_replace_output: e.hard_replace_output,
            window_direction: RawDirection::PerAlgorithm,
            reuse_inversion_noise: e.reuse_inversion_noise,
        }
    }
}

fn invalid(key: &str, msg: impl fmt::Display) -> Failure {
    Failure::Config(format!("{key}: {msg}"))
}

fn parse_codec(s: &str) -> Result<Codec, Failure> {
    if s == "identity" {
        return Ok(Codec::identity());
    }
    let factor = s
        .strip_prefix("patchify:")
        .and_then(|f| f.parse::<usize>().ok())
        .ok_or_else(|| {
            invalid(
                "codec",
                format!("expected \"identity\" or \"patchify:<factor>\", got {s:?}"),
            )
        })?;
    Codec::patchify(factor).map_err(|e| invalid("codec", e))
}

fn parse_format(raw: Option<&str>, path: &Path, key: &str) -> Result<ConditionFormat, Failure> {
    let name = match raw {
        Some(f) => f.to_ascii_lowercase(),
        None => path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .ok_or_else(|| {
                invalid(
                    key,
                    "cannot infer format from the file name; set \"format\"",
                )
            })?,
    };
    match name.as_str() {
        "ppm" => Ok(ConditionFormat::Ppm),
        "ltn" => Ok(ConditionFormat::Ltn),
        other => Err(invalid(
            key,
            format!("unknown format {other:?}, expected ppm or ltn"),
        )),
    }
}

fn parse_estimator(s: &str, base: &Path) -> Result<EstimatorChoice, Failure> {
    if s == "dummy" {
        Ok(EstimatorChoice::Dummy)
    } else if let Some(p) = s.strip_prefix("oracle:") {
        Ok(EstimatorChoice::Oracle(base.join(p)))
    } else if let Some(e) = s.strip_prefix("remote:") {
        Ok(EstimatorChoice::Remote(e.to_string()))
    } else {
        Err(invalid(
            "estimator",
            format!("expected dummy, oracle:<path> or remote:<endpoint>, got {s:?}"),
        ))
    }
}

/// Parses and validates a JSON config. `base` anchors relative paths.
pub fn parse_config(bytes: &[u8], base: &Path) -> Result<RunConfig, Failure> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Failure::Config(format!("config is not UTF-8: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Failure::Config(e.inner().to_string())
        } else {
            invalid(&path, e.inner())
        }
    })?;

    let prompt = raw
        .prompt
        .ok_or_else(|| invalid("prompt", "missing required key"))?;
    let raw_conditions = raw
        .conditions
        .ok_or_else(|| invalid("conditions", "missing required key"))?;
    let estimator = raw
        .estimator
        .ok_or_else(|| invalid("estimator", "missing required key"))?;

    let mut conditions = Vec::with_capacity(raw_conditions.len());
    for (i, c) in raw_conditions.into_iter().enumerate() {
        let format = parse_format(
            c.format.as_deref(),
            &c.path,
            &format!("conditions[{i}].format"),
        )?;
        conditions.push(ConditionEntry {
            path: base.join(&c.path),
            position: c.position,
            format,
        });
    }

    let engine = EngineConfig {
        num_frames: raw.num_frames,
        num_steps: raw.num_steps,
        p0: raw.p0,
        t0: raw.t0,
        delta1: raw.delta1,
        delta2: raw.delta2,
        guidance_scale: raw.guidance_scale,
        sigma: raw.sigma,
        seed: raw.seed,
        enable_frame_replace: raw.enable_frame_replace,
        enable_rps: raw.enable_rps,
        enable_dynamic_control: raw.enable_dynamic_control,
        hard_replace_output: raw.hard_replace_output,
        direction: match raw.window_direction {
            RawDirection::PerAlgorithm => WindowDirection::PerAlgorithm,
            RawDirection::Inverted => WindowDirection::Inverted,
        },
        reuse_inversion_noise: raw.reuse_inversion_noise,
    };

    let cfg = RunConfig {
        engine,
        prompt: PromptSpec {
            text: prompt,
            negative: raw.negative_prompt,
        },
        conditions,
        codec: parse_codec(&raw.codec)?,
        estimator: parse_estimator(&estimator, base)?,
        output_dir: base.join(raw.output_dir),
        emit: raw.emit,
        schedule: raw.schedule,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&bytes, base)
}

impl RunConfig {
    /// Checks every cross-field constraint. Called again after overrides.
    pub fn validate(&self) -> Result<(), Failure> {
        self.engine
            .validate()
            .map_err(|e| Failure::Config(e.to_string()))?;
        if self.conditions.is_empty() {
            return Err(invalid(
                "conditions",
                "at least one condition image is required",
            ));
        }
        let m = self.engine.num_frames;
        for (i, c) in self.conditions.iter().enumerate() {
            if c.position >= m {
                return Err(invalid(
                    &format!("conditions[{i}].position"),
                    format!("position out of range ({} >= num_frames {m})", c.position),
                ));
            }
            if i > 0 && self.conditions[i - 1].position >= c.position {
                return Err(invalid(
                    &format!("conditions[{i}].position"),
                    "positions strictly increasing",
                ));
            }
            if !c.path.is_file() {
                return Err(invalid(
                    &format!("conditions[{i}].path"),
                    format!("file not found: {}", c.path.display()),
                ));
            }
        }
        if let EstimatorChoice::Oracle(p) = &self.estimator {
            if !p.is_file() {
                return Err(invalid(
                    "estimator",
                    format!("oracle target not found: {}", p.display()),
                ));
            }
        }
        if let EstimatorChoice::Remote(e) = &self.estimator {
            flexti2v_core::Endpoint::parse(e).map_err(|err| invalid("estimator", err))?;
        }
        self.noise_schedule()?;
        self.timestep_map()?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, Failure> {
        let s = &self.schedule;
        NoiseSchedule::scaled_linear(s.beta_start, s.beta_end, s.train_timesteps)
            .map_err(|e| invalid("schedule", e))
    }

    pub fn timestep_map(&self) -> Result<TimestepMap, Failure> {
        let steps =
            u32::try_from(self.engine.num_steps).map_err(|_| invalid("num_steps", "too large"))?;
        TimestepMap::uniform(self.schedule.train_timesteps, steps)
            .map_err(|e| invalid("num_steps", e))
    }

    pub fn positions(&self) -> Vec<usize> {
        self.conditions.iter().map(|c| c.position).collect()
    }

    /// Reassigns condition positions to the preset layout.
    pub fn apply_preset(&mut self, preset: Preset) -> Result<(), Failure> {
        let positions = preset.positions(self.engine.num_frames)?;
        if positions.len() != self.conditions.len() {
            return Err(invalid(
                "conditions",
                format!(
                    "preset {preset} needs {} condition image(s), config has {}",
                    positions.len(),
                    self.conditions.len()
                ),
            ));
        }
        for (c, p) in self.conditions.iter_mut().zip(positions) {
            c.position = p;
        }
        self.validate()
    }

    /// Replaces the endpoint of a remote estimator. Other estimators are left alone.
    pub fn override_endpoint(&mut self, endpoint: &str) -> Result<(), Failure> {
        if let EstimatorChoice::Remote(e) = &mut self.estimator {
            *e = endpoint.to_string();
            self.validate()?;
        }
        Ok(())
    }
}

/// The four standard condition layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Image as the first frame.
    Animation,
    /// Image as the last frame.
    Rewind,
    /// Images as first and last frames.
    Interpolate,
    /// Image just before the middle frame.
    Outpaint,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Animation,
        Preset::Rewind,
        Preset::Interpolate,
        Preset::Outpaint,
    ];

    pub fn positions(self, num_frames: usize) -> Result<Vec<usize>, Failure> {
        let last = num_frames.saturating_sub(1);
        let positions = match self {
            Preset::Animation => vec![0],
            Preset::Rewind => vec![last],
            Preset::Interpolate => vec![0, last],
            Preset::Outpaint => vec![(num_frames / 2)
                .checked_sub(1)
                .ok_or_else(|| invalid("num_frames", "outpaint preset needs at least 2 frames"))?],
        };
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                "num_frames",
                format!("preset {self} needs at least 2 frames"),
            ));
        }
        Ok(positions)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Animation => "animation",
            Preset::Rewind => "rewind",
            Preset::Interpolate => "interpolate",
            Preset::Outpaint => "outpaint",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| {
                format!("unknown preset {s:?}; expected animation, rewind, interpolate or outpaint")
            })
    }
}
