//! Noise-robustness experiments: generate clips, perturb a representation,
//! invert it and score the result against the clean clip.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};
use crate::griffinlim::{griffin_lim, GlConfig, DEFAULT_ITERATIONS};
use crate::metrics::{
    embed_logmel_stats, frechet_distance, log_spectral_distance, snr_db, spectral_convergence,
    EmbeddingStats,
};
use crate::pghi::{pghi_invert, DEFAULT_TOL};
use crate::repr::{compute_if, inject_noise, invert_if, LogMagSpectrogram, NoiseChannel};
use crate::seed::{derive_path, derive_seed};
use crate::textures::{random_spec, Family};
use crate::tf::{log_magnitude, stft, TfParams, WindowKind};

pub const REPORT_FILE: &str = "report.toml";
pub const DEFAULT_CLIPS_PER_CELL: usize = 25;
pub const STITCH_GAP_SECONDS: f64 = 0.5;
const SAMPLE_RATE: u32 = crate::audio::DEFAULT_SAMPLE_RATE;

/// How a spectrogram is estimated and turned back into audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Hann STFT, log-magnitude + IF, noise on the IF channel.
    If,
    /// Gaussian STFT log-magnitude, noise on log-magnitude, PGHI.
    Pghi,
    /// Gaussian STFT log-magnitude, noise on log-magnitude, Griffin-Lim.
    GriffinLim,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::If, Pipeline::Pghi, Pipeline::GriffinLim];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::If => "if",
            Pipeline::Pghi => "pghi",
            Pipeline::GriffinLim => "griffinlim",
        }
    }

    pub fn window(self) -> WindowKind {
        match self {
            Pipeline::If => WindowKind::Hann,
            Pipeline::Pghi | Pipeline::GriffinLim => WindowKind::TruncatedGaussian,
        }
    }
}

fn default_clips() -> usize {
    DEFAULT_CLIPS_PER_CELL
}

fn default_gl_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_true() -> bool {
    true
}

/// Every combination of the listed families, pipelines, hops and sigmas is
/// one cell of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub families: Vec<Family>,
    pub pipelines: Vec<Pipeline>,
    pub hops: Vec<usize>,
    pub noise_sigmas: Vec<f64>,
    #[serde(default = "default_clips")]
    pub clips_per_cell: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Griffin-Lim iterations run after IF integration.
    #[serde(default)]
    pub if_refine_iters: usize,
    #[serde(default = "default_gl_iterations")]
    pub gl_iterations: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Compute the population Fréchet distance per cell.
    #[serde(default = "default_true")]
    pub frechet: bool,
    /// Write the first three outputs of each cell as one WAV, separated by
    /// half a second of silence.
    #[serde(default)]
    pub stitch: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(families: Vec<Family>, pipelines: Vec<Pipeline>, hops: Vec<usize>, noise_sigmas: Vec<f64>) -> Self {
        Self {
            families,
            pipelines,
            hops,
            noise_sigmas,
            clips_per_cell: DEFAULT_CLIPS_PER_CELL,
            master_seed: 0,
            if_refine_iters: 0,
            gl_iterations: DEFAULT_ITERATIONS,
            tol: DEFAULT_TOL,
            frechet: true,
            stitch: false,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(invalid("families", "must list at least one family"));
        }
        if self.pipelines.is_empty() {
            return Err(invalid("pipelines", "must list at least one pipeline"));
        }
        if self.hops.is_empty() {
            return Err(invalid("hops", "must list at least one hop"));
        }
        if let Some(h) = self.hops.iter().find(|h| **h != 64 && **h != 128) {
            return Err(invalid("hops", format!("only 64 and 128 are supported, got {h}")));
        }
        if self.noise_sigmas.is_empty() {
            return Err(invalid("noise_sigmas", "must list at least one sigma"));
        }
        if let Some(s) = self.noise_sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(invalid("noise_sigmas", format!("must be finite and >= 0, got {s}")));
        }
        let min_clips = if self.frechet { 2 } else { 1 };
        if self.clips_per_cell < min_clips {
            return Err(invalid(
                "clips_per_cell",
                format!("must be at least {min_clips}, got {}", self.clips_per_cell),
            ));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(invalid("tol", format!("must be in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &pipeline in &self.pipelines {
                for &hop in &self.hops {
                    for &sigma in &self.noise_sigmas {
                        out.push(CellKey {
                            family,
                            pipeline,
                            hop,
                            sigma,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CellKey {
    family: Family,
    pipeline: Pipeline,
    hop: usize,
    sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub family: Family,
    pub pipeline: Pipeline,
    pub hop: usize,
    pub sigma: f64,
    /// Noise standard deviation actually applied to the perturbed channel.
    pub applied_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CellMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub sc_mean: f64,
    pub sc_std: f64,
    pub lsd_mean: f64,
    pub lsd_std: f64,
    pub snr_mean: f64,
    pub snr_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub magnitude_noise_rule: String,
    /// Texture specs behind every clip, by family.
    pub clip_seeds: BTreeMap<Family, Vec<u64>>,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn cell(&self, family: Family, pipeline: Pipeline, hop: usize, sigma: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.family == family && c.pipeline == pipeline && c.hop == hop && c.sigma == sigma)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

const MAGNITUDE_NOISE_RULE: &str = "log-magnitude noise std = sigma * std(log-magnitude above floor) / (pi / sqrt(3)); \
     pi / sqrt(3) is the std of a phase uniform on (-pi, pi]";

/// Standard deviation for log-magnitude noise that matches `sigma` on the IF
/// channel relative to each channel's own spread.
pub fn magnitude_sigma(logmag: &LogMagSpectrogram, sigma: f64) -> f64 {
    let vals: Vec<f64> = logmag
        .values
        .iter()
        .cloned()
        .filter(|v| *v > logmag.floor)
        .collect();
    if vals.len() < 2 || sigma == 0.0 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    sigma * var.sqrt() / (PI / 3f64.sqrt())
}

/// Texture seed for clip `index` of `family`. Cells that share a family use
/// the same clips.
pub fn clip_seed(master: u64, family: Family, index: usize) -> u64 {
    derive_path(master, &[family as u64, index as u64]) >> 1
}

pub fn family_clips(master: u64, family: Family, count: usize) -> Result<Vec<AudioBuffer>> {
    (0..count)
        .into_par_iter()
        .map(|i| random_spec(family, clip_seed(master, family, i)).generate(SAMPLE_RATE))
        .collect()
}

/// Settings shared by all pipelines of one run.
#[derive(Debug, Clone, Copy)]
pub struct PipelineSettings {
    pub tol: f64,
    pub gl_iterations: usize,
    pub if_refine_iters: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            gl_iterations: DEFAULT_ITERATIONS,
            if_refine_iters: 0,
        }
    }
}

/// Analyze `clip`, perturb the pipeline's channel by `sigma` and invert.
/// Returns the output and the noise std actually applied.
pub fn run_pipeline(
    clip: &AudioBuffer,
    pipeline: Pipeline,
    hop: usize,
    sigma: f64,
    seed: u64,
    settings: &PipelineSettings,
) -> Result<(AudioBuffer, f64)> {
    let params = TfParams::preset(hop, pipeline.window())?;
    let spec = stft(clip, &params)?;
    match pipeline {
        Pipeline::If => {
            let noisy = inject_noise(&compute_if(&spec), sigma, NoiseChannel::InstFreq, seed)?;
            Ok((invert_if(&noisy, settings.if_refine_iters)?, sigma))
        }
        Pipeline::Pghi | Pipeline::GriffinLim => {
            let lm = log_magnitude(&spec);
            let s = magnitude_sigma(&lm, sigma);
            let noisy = inject_noise(&lm, s, NoiseChannel::Magnitude, seed)?;
            let out = if pipeline == Pipeline::Pghi {
                pghi_invert(&noisy, settings.tol, derive_seed(seed, 1))?
            } else {
                griffin_lim(
                    &noisy,
                    &GlConfig {
                        iterations: settings.gl_iterations,
                        init_phase: None,
                    },
                )?
                .audio
            };
            Ok((out, s))
        }
    }
}

/// Analysis settings for the spectral scores, independent of the pipeline.
pub fn eval_params() -> TfParams {
    TfParams::preset(128, WindowKind::Hann).expect("static parameters")
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Values in reports are kept at a fixed precision so reruns compare equal
/// byte for byte.
fn fixed(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn stitch(clips: &[AudioBuffer]) -> Result<AudioBuffer> {
    let Some(first) = clips.first() else {
        return Err(invalid("clips", "nothing to stitch"));
    };
    let sr = first.sample_rate();
    let gap = (STITCH_GAP_SECONDS * sr as f64).round() as usize;
    let mut out = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        if i > 0 {
            out.extend(std::iter::repeat_n(0.0, gap));
        }
        out.extend_from_slice(c.samples());
    }
    AudioBuffer::new(out, sr)
}

fn run_cell(
    cfg: &ExperimentConfig,
    index: usize,
    key: CellKey,
    clips: &[AudioBuffer],
    clean: Option<&EmbeddingStats>,
) -> Result<(CellMetrics, f64, Vec<AudioBuffer>)> {
    let settings = PipelineSettings {
        tol: cfg.tol,
        gl_iterations: cfg.gl_iterations,
        if_refine_iters: cfg.if_refine_iters,
    };
    let cell_seed = derive_seed(cfg.master_seed, index as u64);
    let eval = eval_params();
    let results: Vec<(AudioBuffer, f64, [f64; 3])> = clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let (out, applied) =
                run_pipeline(clip, key.pipeline, key.hop, key.sigma, derive_seed(cell_seed, i as u64), &settings)?;
            let scores = [
                spectral_convergence(clip, &out, &eval)?,
                log_spectral_distance(clip, &out, &eval)?,
                snr_db(clip, &out, true)?,
            ];
            Ok((out, applied, scores))
        })
        .collect::<Result<_>>()?;
    let column = |k: usize| results.iter().map(|r| r.2[k]).collect::<Vec<_>>();
    let (sc_mean, sc_std) = mean_std(&column(0));
    let (lsd_mean, lsd_std) = mean_std(&column(1));
    let (snr_mean, snr_std) = mean_std(&column(2));
    let applied = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
    let outputs: Vec<AudioBuffer> = results.into_iter().map(|r| r.0).collect();
    let frechet = match clean {
        Some(stats) => Some(fixed(frechet_distance(stats, &embed_logmel_stats(&outputs)?)?)),
        None => None,
    };
    let metrics = CellMetrics {
        sc_mean: fixed(sc_mean),
        sc_std: fixed(sc_std),
        lsd_mean: fixed(lsd_mean),
        lsd_std: fixed(lsd_std),
        snr_mean: fixed(snr_mean),
        snr_std: fixed(snr_std),
        frechet,
    };
    Ok((metrics, fixed(applied), outputs))
}

/// Run every configured cell. Configuration errors abort before any work;
/// a failing cell is reported with its error and the rest still run. With
/// `output` set, the report (and stitched examples) are written there.
pub fn run_robustness(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
    }

    let mut clips = BTreeMap::new();
    let mut clean = BTreeMap::new();
    let mut clip_seeds = BTreeMap::new();
    for &family in &cfg.families {
        if clips.contains_key(&family) {
            continue;
        }
        let c = family_clips(cfg.master_seed, family, cfg.clips_per_cell)?;
        if cfg.frechet {
            clean.insert(family, embed_logmel_stats(&c)?);
        }
        clip_seeds.insert(
            family,
            (0..cfg.clips_per_cell).map(|i| clip_seed(cfg.master_seed, family, i)).collect(),
        );
        clips.insert(family, c);
    }

    let cells: Vec<CellReport> = cfg
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(index, key)| {
            let result = run_cell(cfg, index, key, &clips[&key.family], clean.get(&key.family));
            let mut row = CellReport {
                family: key.family,
                pipeline: key.pipeline,
                hop: key.hop,
                sigma: key.sigma,
                applied_sigma: 0.0,
                metrics: None,
                error: None,
            };
            match result {
                Ok((metrics, applied, outputs)) => {
                    row.applied_sigma = applied;
                    row.metrics = Some(metrics);
                    if let (true, Some(dir)) = (cfg.stitch, &cfg.output) {
                        let name = format!(
                            "{}_{}_hop{}_sigma{}.wav",
                            key.family,
                            key.pipeline.name(),
                            key.hop,
                            key.sigma
                        );
                        let n = outputs.len().min(3);
                        if let Err(e) = stitch(&outputs[..n]).and_then(|s| s.write_wav(dir.join(name))) {
                            row.error = Some(format!("stitch: {e}"));
                        }
                    }
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();

    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        magnitude_noise_rule: MAGNITUDE_NOISE_RULE.to_string(),
        clip_seeds,
        cells,
    };
    if let Some(dir) = &cfg.output {
        report.save(dir.join(REPORT_FILE))?;
    }
    Ok(report)
}
