//! Executes a run: load conditions, sample, write outputs and the report.

use std::fs;
use std::path::{Path, PathBuf};

use flexti2v_core::io::{encode_ltn, encode_ppm, read_ltn, read_ppm, write_atomic};
use flexti2v_core::{
    run_flexti2v, ConditionSet, DummyEstimator, Endpoint, LatentFrame, NoiseEstimator,
    OracleEstimator, RemoteEstimator,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConditionFormat, EstimatorChoice, RunConfig};
use crate::error::Failure;
use crate::metrics::metrics;

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LATENTS_FILE: &str = "latents.ltn";

pub fn frame_file_name(m: usize) -> String {
    format!("frame_{m:03}.ppm")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub estimator: String,
    pub seed: u64,
    pub num_frames: usize,
    pub num_steps: usize,
    pub positions: Vec<usize>,
    pub estimator_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_ms: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
    /// Every emitted file except the report itself.
    pub manifest: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

/// Reads and encodes the condition images into latents.
pub fn load_conditions(cfg: &RunConfig) -> Result<ConditionSet, Failure> {
    let mut latents: Vec<LatentFrame> = Vec::with_capacity(cfg.conditions.len());
    for c in &cfg.conditions {
        let latent = match c.format {
            ConditionFormat::Ppm => {
                let raster = read_ppm(&c.path).map_err(|e| load_error(&c.path, e))?;
                cfg.codec
                    .encode(&raster)
                    .map_err(|e| load_error(&c.path, e))?
            }
            ConditionFormat::Ltn => {
                let video = read_ltn(&c.path).map_err(|e| load_error(&c.path, e))?;
                if video.num_frames() != 1 {
                    return Err(load_error(
                        &c.path,
                        format!(
                            "condition latent must hold exactly one frame, found {}",
                            video.num_frames()
                        ),
                    ));
                }
                video.into_frames().remove(0)
            }
        };
        if let Some(first) = latents.first() {
            if first.dims() != latent.dims() {
                return Err(load_error(
                    &c.path,
                    format!(
                        "latent dims {} differ from the first condition's {}",
                        latent.dims(),
                        first.dims()
                    ),
                ));
            }
        }
        latents.push(latent);
    }
    ConditionSet::new(latents, cfg.positions()).map_err(|e| Failure::Config(e.to_string()))
}

fn build_estimator(
    cfg: &RunConfig,
    conditions: &ConditionSet,
) -> Result<Box<dyn NoiseEstimator>, Failure> {
    match &cfg.estimator {
        EstimatorChoice::Dummy => Ok(Box::new(DummyEstimator)),
        EstimatorChoice::Oracle(path) => {
            let target = read_ltn(path).map_err(|e| load_error(path, e))?;
            if target.num_frames() != cfg.engine.num_frames || target.dims() != conditions.dims() {
                return Err(load_error(
                    path,
                    format!(
                        "oracle target is {} frames of {}, run needs {} frames of {}",
                        target.num_frames(),
                        target.dims(),
                        cfg.engine.num_frames,
                        conditions.dims()
                    ),
                ));
            }
            Ok(Box::new(OracleEstimator::new(
                target,
                cfg.noise_schedule()?,
            )))
        }
        EstimatorChoice::Remote(endpoint) => {
            let endpoint = Endpoint::parse(endpoint)
                .map_err(|e| Failure::Config(format!("estimator: {e}")))?;
            Ok(Box::new(
                RemoteEstimator::connect(&endpoint).map_err(Failure::engine)?,
            ))
        }
    }
}

/// Files are staged in memory and written only after sampling succeeds, so
/// a failed run leaves nothing behind. A failed write removes what this run
/// already wrote.
struct OutputWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
    manifest: Vec<ManifestEntry>,
}

impl OutputWriter {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| {
            Failure::Engine(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            manifest: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8], in_manifest: bool) -> Result<(), Failure> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)
            .map_err(|e| Failure::Engine(format!("writing {}: {e}", path.display())))?;
        self.written.push(path);
        if in_manifest {
            self.manifest.push(ManifestEntry {
                path: name.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn rollback(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunReport, Failure> {
    let conditions = load_conditions(cfg)?;
    let dims = conditions.dims();
    if cfg.emit.frames && dims.c != cfg.codec.latent_channels() {
        return Err(Failure::Config(format!(
            "emit.frames: latents have {} channels but the codec decodes {}; disable frame output or change the codec",
            dims.c,
            cfg.codec.latent_channels()
        )));
    }
    let schedule = cfg.noise_schedule()?;
    let tmap = cfg.timestep_map()?;
    let mut estimator = build_estimator(cfg, &conditions)?;
    let estimator_name = cfg.estimator.to_string();

    let output = run_flexti2v(
        &cfg.engine,
        &conditions,
        &cfg.prompt,
        estimator.as_mut(),
        &schedule,
        &tmap,
    )
    .map_err(Failure::engine)?;
    // Shuts a remote worker down cleanly before anything is written.
    drop(estimator);

    let mut staged: Vec<(String, Vec<u8>)> = Vec::new();
    if cfg.emit.frames {
        for (m, frame) in output.video.frames().iter().enumerate() {
            let raster = cfg
                .codec
                .decode(frame)
                .map_err(|e| Failure::Engine(e.to_string()))?;
            staged.push((frame_file_name(m), encode_ppm(&raster)));
        }
    }
    if cfg.emit.latents {
        staged.push((
            LATENTS_FILE.to_string(),
            encode_ltn(&output.video).map_err(|e| Failure::Engine(e.to_string()))?,
        ));
    }
    let metrics_json = if cfg.emit.metrics {
        let m = metrics(&output.video, &conditions).map_err(|e| Failure::Engine(e.to_string()))?;
        let json = m.to_json();
        let mut bytes = serde_json::to_vec_pretty(&json).expect("metrics serialize");
        bytes.push(b'\n');
        staged.push((METRICS_FILE.to_string(), bytes));
        Some(json)
    } else {
        None
    };

    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    let result = (|| {
        for (name, bytes) in &staged {
            writer.write(name, bytes, true)?;
        }
        let report = RunReport {
            estimator: estimator_name,
            seed: cfg.engine.seed,
            num_frames: cfg.engine.num_frames,
            num_steps: cfg.engine.num_steps,
            positions: cfg.positions(),
            estimator_calls: output.estimator_calls,
            step_ms: cfg.emit.timing.then(|| output.step_ms.clone()),
            total_ms: cfg.emit.timing.then_some(output.total_ms),
            metrics: metrics_json,
            manifest: writer.manifest.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&report).expect("report serialize");
        bytes.push(b'\n');
        writer.write(REPORT_FILE, &bytes, false)?;
        Ok(report)
    })();
    if result.is_err() {
        writer.rollback();
    }
    result
}

/// Checks that every manifest entry exists on disk with a matching digest.
pub fn verify_manifest(dir: &Path, manifest: &[ManifestEntry]) -> Result<(), String> {
    for entry in manifest {
        let bytes = fs::read(dir.join(&entry.path)).map_err(|e| format!("{}: {e}", entry.path))?;
        if sha256_hex(&bytes) != entry.sha256 || bytes.len() as u64 != entry.bytes {
            return Err(format!("{}: digest mismatch", entry.path));
        }
    }
    Ok(())
}
