//! Reconstruction quality measures.
//!
//! Pairwise scores compare a reference clip with an estimate. Population
//! scores embed each clip as log-mel band statistics and compare the
//! Gaussian fits of two populations with the Fréchet distance.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};
use crate::tf::{stft, TfParams, WindowKind};

/// SNR reported for a perfect reconstruction.
pub const SNR_CAP_DB: f64 = 300.0;

/// Eigenvalues below this are treated as zero in matrix square roots.
pub const EIGEN_CLIP: f64 = 1e-10;

pub const MEL_BANDS: usize = 64;
pub const MEL_FMIN: f64 = 125.0;
pub const MEL_FMAX: f64 = 7500.0;
/// Added to mel magnitudes before the log, limiting the embedding's
/// sensitivity to content far below full scale.
pub const LOG_MEL_OFFSET: f64 = 0.01;
pub const EMBEDDING_DIM: usize = 2 * MEL_BANDS;

/// A named scalar result with free-form parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    #[serde(default)]
    pub metadata: std::collections::BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("metric value"));
        }
        Ok(Self {
            name: name.into(),
            value,
            metadata: Default::default(),
        })
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }
}

fn magnitude_pair(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    params: &TfParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let est = estimate.fit_to(reference.len())?;
    let a = stft(reference, params)?.magnitudes();
    let b = stft(&est, params)?.magnitudes();
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            context: "aligned magnitude spectrograms",
            expected: format!("{:?}", a.dim()),
            actual: format!("{:?}", b.dim()),
        });
    }
    Ok((a, b))
}

/// `||S_ref| - |S_est|||_F / ||S_ref||_F`; the estimate is padded or cropped
/// to the reference length first.
pub fn spectral_convergence(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    params: &TfParams,
) -> Result<f64> {
    let (a, b) = magnitude_pair(reference, estimate, params)?;
    let den: f64 = a.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(invalid("reference", "all-zero reference has no spectral energy"));
    }
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// RMS difference in dB over cells where the reference lies within the
/// dynamic range of its own peak. Estimate cells are clamped at that floor.
pub fn log_spectral_distance(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    params: &TfParams,
) -> Result<f64> {
    let (a, b) = magnitude_pair(reference, estimate, params)?;
    let peak = a.iter().fold(0.0_f64, |m, &v| m.max(v));
    if peak == 0.0 {
        return Err(invalid("reference", "all-zero reference has no spectral energy"));
    }
    let floor = peak * 10f64.powf(-params.dynamic_range_db / 20.0);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (&x, &y) in a.iter().zip(&b) {
        if x > floor {
            let d = 20.0 * (x / y.max(floor)).log10();
            acc += d * d;
            count += 1;
        }
    }
    Ok((acc / count as f64).sqrt())
}

fn fft_real(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::default());
    planner.plan_fft_forward(n).process(&mut buf);
    buf
}

/// Lag `d` and sign maximizing `sum_t ref[t] * est[t + d]` over the full
/// lag range, via FFT cross-correlation.
pub fn best_alignment(reference: &[f64], estimate: &[f64]) -> (isize, f64) {
    let n = (reference.len() + estimate.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let r = fft_real(reference, n, &mut planner);
    let e = fft_real(estimate, n, &mut planner);
    let mut cross: Vec<Complex64> = r.iter().zip(&e).map(|(a, b)| a.conj() * b).collect();
    planner.plan_fft_inverse(n).process(&mut cross);
    let mut best = (0isize, 0.0f64);
    for (i, c) in cross.iter().enumerate() {
        let lag = if i < n / 2 { i as isize } else { i as isize - n as isize };
        if lag >= estimate.len() as isize || -lag >= reference.len() as isize {
            continue;
        }
        let v = c.re / n as f64;
        // prefer the smallest |lag| on exact ties
        if v.abs() > best.1.abs() + 1e-12 * v.abs()
            || (v.abs() == best.1.abs() && lag.abs() < best.0.abs())
        {
            best = (lag, v);
        }
    }
    (best.0, if best.1 < 0.0 { -1.0 } else { 1.0 })
}

/// `out[t] = sign * est[t + lag]`, zero outside the estimate, length `len`.
fn shifted(estimate: &[f64], lag: isize, sign: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let s = t as isize + lag;
            if s >= 0 && (s as usize) < estimate.len() {
                sign * estimate[s as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn snr_from(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let e: f64 = reference.iter().map(|v| v * v).sum();
    if e == 0.0 {
        return Err(invalid("reference", "SNR is undefined for an all-zero reference"));
    }
    let d: f64 = reference
        .iter()
        .zip(estimate.iter().chain(std::iter::repeat(&0.0)))
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    if d == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (e / d).log10()).min(SNR_CAP_DB))
}

/// `10 log10(||ref||^2 / ||ref - est||^2)`, capped at 300 dB. With `align`
/// the estimate is first shifted and sign-flipped to the cross-correlation
/// peak.
pub fn snr_db(reference: &AudioBuffer, estimate: &AudioBuffer, align: bool) -> Result<f64> {
    let r = reference.samples();
    if !align {
        return snr_from(r, estimate.samples());
    }
    let (lag, sign) = best_alignment(r, estimate.samples());
    snr_from(r, &shifted(estimate.samples(), lag, sign, r.len()))
}

/// Analytic signal `x + i H[x]`, zero-padded to `n` (at least twice the
/// input length so the circular convolution does not wrap).
fn analytic(x: &[f64], n: usize, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf = fft_real(x, n, planner);
    for (k, v) in buf.iter_mut().enumerate() {
        let factor = if k == 0 || k == n / 2 {
            1.0
        } else if k < n / 2 {
            2.0
        } else {
            0.0
        };
        *v *= factor / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.truncate(x.len());
    buf
}

/// SNR between analytic signals after the best delay and constant phase
/// rotation. The delay maximizes the magnitude of the analytic
/// cross-correlation, so a pure rotation of a narrowband signal is not
/// mistaken for a time shift. Comparing analytic signals removes the global
/// phase ambiguity of magnitude-only reconstruction without penalizing the
/// Hilbert transform's edge effects; for real signals without rotation the
/// value tracks [`snr_db`].
pub fn snr_db_phase_aligned(reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<f64> {
    let r = reference.samples();
    let e = estimate.samples();
    let n = (2 * r.len().max(e.len())).next_power_of_two();
    let mut planner = FftPlanner::new();
    let ra = analytic(r, n, &mut planner);
    let ea = analytic(e, n, &mut planner);
    let mut rf = ra.clone();
    rf.resize(n, Complex64::default());
    planner.plan_fft_forward(n).process(&mut rf);
    let mut ef = ea.clone();
    ef.resize(n, Complex64::default());
    planner.plan_fft_forward(n).process(&mut ef);
    let mut cross: Vec<Complex64> = rf.iter().zip(&ef).map(|(a, b)| a.conj() * b).collect();
    planner.plan_fft_inverse(n).process(&mut cross);
    let mut best = (0isize, Complex64::default());
    for (i, c) in cross.iter().enumerate() {
        let lag = if i < n / 2 { i as isize } else { i as isize - n as isize };
        if lag >= e.len() as isize || -lag >= r.len() as isize {
            continue;
        }
        let m = c.norm();
        if m > best.1.norm() + 1e-12 * m || (m == best.1.norm() && lag.abs() < best.0.abs()) {
            best = (lag, *c);
        }
    }
    let (lag, c) = best;
    // rotate est by -arg(c) so that it lines up with the reference
    let rot = Complex64::from_polar(1.0, -c.arg());
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (t, a) in ra.iter().enumerate() {
        let s = t as isize + lag;
        let b = if s >= 0 && (s as usize) < e.len() {
            rot * ea[s as usize]
        } else {
            Complex64::default()
        };
        signal += a.norm_sqr();
        noise += (a - b).norm_sqr();
    }
    if signal == 0.0 {
        return Err(invalid("reference", "SNR is undefined for an all-zero reference"));
    }
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// Mean vector and covariance of an embedded population.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl EmbeddingStats {
    /// Unbiased statistics of row vectors.
    pub fn from_embeddings(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(invalid("clips", format!("need at least 2, got {}", rows.len())));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension {
                context: "embeddings",
                expected: format!("{dim}"),
                actual: "ragged rows".into(),
            });
        }
        let count = rows.len();
        let mut mean = DVector::zeros(dim);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= count as f64;
        let mut covariance = DMatrix::zeros(dim, dim);
        for r in rows {
            let d = DVector::from_column_slice(r) - &mean;
            covariance += &d * d.transpose();
        }
        covariance /= (count - 1) as f64;
        let stats = Self {
            mean,
            covariance,
            count,
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.mean.len();
        if self.covariance.shape() != (d, d) {
            return Err(Error::Dimension {
                context: "embedding covariance",
                expected: format!("{d}x{d}"),
                actual: format!("{:?}", self.covariance.shape()),
            });
        }
        if self.mean.iter().chain(self.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding statistics"));
        }
        if self.count < 2 {
            return Err(invalid("count", "statistics need at least 2 samples"));
        }
        Ok(())
    }

    /// Binary layout: `EMB1`, u32 dim, u64 count, then `dim` mean values and
    /// `dim * dim` row-major covariance values, all little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"EMB1")?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.count as u64).to_le_bytes())?;
        for v in self.mean.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                w.write_all(&self.covariance[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EMB1" {
            return Err(Error::Format {
                what: "embedding stats",
                reason: format!("bad magic {magic:?}"),
            });
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut next = || -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let mean = DVector::from_iterator(dim, (0..dim).map(|_| next()).collect::<Result<Vec<_>>>()?);
        let cov: Vec<f64> = (0..dim * dim).map(|_| next()).collect::<Result<_>>()?;
        let stats = Self {
            mean,
            covariance: DMatrix::from_row_slice(dim, dim, &cov),
            count,
        };
        stats.check()?;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `bands x bins`, with band edges evenly spaced
/// on the mel scale between `fmin` and `fmax`.
pub fn mel_filterbank(bands: usize, fft_size: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let (bottom, top) = (hz_to_mel(fmin), hz_to_mel(fmax.min(sample_rate as f64 / 2.0)));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(bottom + (top - bottom) * i as f64 / (bands + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((bands, bins));
    for b in 0..bands {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[b, k]] = w;
        }
    }
    fb
}

/// Embedding analysis: Hann, 512-point FFT, 10 ms hop at 16 kHz.
fn embedding_params() -> TfParams {
    TfParams::new(512, 160, WindowKind::Hann).expect("static parameters")
}

/// Per-band time mean and standard deviation of log-mel magnitudes,
/// 128 values.
pub fn embed_clip(clip: &AudioBuffer) -> Result<Vec<f64>> {
    let params = embedding_params();
    let mags = stft(clip, &params)?.magnitudes();
    let fb = mel_filterbank(MEL_BANDS, params.fft_size, clip.sample_rate(), MEL_FMIN, MEL_FMAX);
    let mel = fb.dot(&mags).mapv(|e| (e + LOG_MEL_OFFSET).ln());
    let frames = mel.ncols() as f64;
    let mut out = Vec::with_capacity(EMBEDDING_DIM);
    let mut stds = Vec::with_capacity(MEL_BANDS);
    for row in mel.rows() {
        let mean = row.sum() / frames;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames;
        out.push(mean);
        stds.push(var.sqrt());
    }
    out.extend(stds);
    Ok(out)
}

pub fn embed_logmel_stats(clips: &[AudioBuffer]) -> Result<EmbeddingStats> {
    if clips.len() < 2 {
        return Err(invalid("clips", format!("need at least 2, got {}", clips.len())));
    }
    let rows: Vec<Vec<f64>> = clips.par_iter().map(embed_clip).collect::<Result<_>>()?;
    EmbeddingStats::from_embeddings(&rows)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig
        .eigenvalues
        .map(|l| if l > EIGEN_CLIP { l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `||mu_r - mu_g||^2 + tr(S_r + S_g - 2 (S_r S_g)^(1/2))`.
///
/// The trace of the cross term is evaluated as `tr((S_r^(1/2) S_g S_r^(1/2))^(1/2))`,
/// which is symmetric and real for PSD inputs.
pub fn frechet_distance(r: &EmbeddingStats, g: &EmbeddingStats) -> Result<f64> {
    r.check()?;
    g.check()?;
    if r.dim() != g.dim() {
        return Err(Error::Dimension {
            context: "frechet distance",
            expected: format!("{}", r.dim()),
            actual: format!("{}", g.dim()),
        });
    }
    let mean_term = (&r.mean - &g.mean).norm_squared();
    let root_r = psd_sqrt(&r.covariance);
    let inner = &root_r * &g.covariance * &root_r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| if l > EIGEN_CLIP { l.sqrt() } else { 0.0 })
        .sum();
    let d = mean_term + r.covariance.trace() + g.covariance.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Largest absolute sample-to-sample step within `radius` samples of each
/// onset. A smeared transient has a smaller maximum slope.
pub fn onset_slopes(clip: &AudioBuffer, onsets: &[usize], radius: usize) -> Vec<f64> {
    let x = clip.samples();
    onsets
        .iter()
        .map(|&o| {
            let lo = o.saturating_sub(radius);
            let hi = (o + radius).min(x.len().saturating_sub(1));
            (lo..hi).map(|t| (x[t + 1] - x[t]).abs()).fold(0.0, f64::max)
        })
        .collect()
}
