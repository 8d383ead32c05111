//! Short-time Fourier analysis and least-squares overlap-add synthesis.
//!
//! Conventions:
//!
//! * frame `n` is centered on sample `n * hop`; samples outside the signal
//!   are zero, and a signal of `L` samples yields `ceil(L / hop)` frames;
//! * the window is centered on tap `M / 2` and each windowed frame is
//!   circularly shifted so that the center sample sits at FFT index 0. Phase
//!   is therefore referenced to the frame center, which is what the phase
//!   gradient relations in [`crate::pghi`] assume;
//! * only bins `0..=M/2` are stored. Synthesis rebuilds the conjugate
//!   symmetric half so the output is exactly real.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};

/// Default dynamic range of log-magnitude spectrograms.
pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 100.0;

/// FFT size used by every experiment preset.
pub const PRESET_FFT_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    TruncatedGaussian,
}

/// Analysis parameters shared by a spectrogram and its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfParams {
    /// FFT size `M`, also the window length.
    pub fft_size: usize,
    /// Hop `a` in samples.
    pub hop: usize,
    pub window: WindowKind,
    /// Gaussian time-frequency ratio in samples², `w[k] = exp(-pi (k - M/2)^2 / gamma)`.
    pub gamma: f64,
    pub dynamic_range_db: f64,
}

impl TfParams {
    /// Parameters with `gamma = hop * fft_size` and a 100 dB log floor.
    pub fn new(fft_size: usize, hop: usize, window: WindowKind) -> Result<Self> {
        let p = Self {
            fft_size,
            hop,
            window,
            gamma: (hop * fft_size) as f64,
            dynamic_range_db: DEFAULT_DYNAMIC_RANGE_DB,
        };
        p.validate()?;
        Ok(p)
    }

    /// One of the two experiment settings: `M = 512`, hop 64 or 128.
    pub fn preset(hop: usize, window: WindowKind) -> Result<Self> {
        if hop != 64 && hop != 128 {
            return Err(invalid("hop", format!("preset hop must be 64 or 128, got {hop}")));
        }
        Self::new(PRESET_FFT_SIZE, hop, window)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dynamic_range(mut self, db: f64) -> Result<Self> {
        self.dynamic_range_db = db;
        self.validate()?;
        Ok(self)
    }

    pub fn with_window(mut self, window: WindowKind) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || !self.fft_size.is_multiple_of(2) {
            return Err(invalid(
                "fft_size",
                format!("must be a positive even integer, got {}", self.fft_size),
            ));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(invalid(
                "hop",
                format!("must be in 1..={}, got {}", self.fft_size, self.hop),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.dynamic_range_db > 0.0 && self.dynamic_range_db.is_finite()) {
            return Err(invalid(
                "dynamic_range_db",
                format!("must be positive, got {}", self.dynamic_range_db),
            ));
        }
        Ok(())
    }

    /// `M / a`.
    pub fn redundancy(&self) -> f64 {
        self.fft_size as f64 / self.hop as f64
    }

    /// Fails unless `M / a >= 4`.
    pub fn require_redundancy(&self) -> Result<()> {
        if self.fft_size < 4 * self.hop {
            return Err(Error::Redundancy {
                fft_size: self.fft_size,
                hop: self.hop,
                ratio: self.redundancy(),
            });
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Log floor offset below the maximum, in nepers.
    pub fn dynamic_range_nats(&self) -> f64 {
        self.dynamic_range_db * std::f64::consts::LN_10 / 20.0
    }
}

/// Analysis window of length `M`, peak 1 at tap `M / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    taps: Vec<f64>,
    kind: WindowKind,
}

impl Window {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn center(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

pub fn make_window(params: &TfParams) -> Result<Window> {
    params.validate()?;
    let m = params.fft_size;
    let c = (m / 2) as f64;
    let taps = match params.window {
        WindowKind::Hann => (0..m)
            .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / m as f64).cos())
            .collect(),
        WindowKind::TruncatedGaussian => (0..m)
            .map(|k| {
                let d = k as f64 - c;
                (-PI * d * d / params.gamma).exp()
            })
            .collect(),
    };
    Ok(Window {
        taps,
        kind: params.window,
    })
}

/// One-sided complex STFT, `(M/2 + 1) x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub coefficients: Array2<Complex64>,
    pub params: TfParams,
    /// Length of the signal the spectrogram describes.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(
        coefficients: Array2<Complex64>,
        params: TfParams,
        signal_len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let s = Self {
            coefficients,
            params,
            signal_len,
            sample_rate,
        };
        s.check()?;
        Ok(s)
    }

    pub fn bins(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn frames(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.coefficients.mapv(|c| c.norm())
    }

    pub fn phases(&self) -> Array2<f64> {
        self.coefficients.mapv(|c| c.arg())
    }

    fn check(&self) -> Result<()> {
        self.params.validate()?;
        check_shape(
            "complex spectrogram",
            &self.params,
            self.signal_len,
            self.coefficients.dim(),
        )?;
        if self.coefficients.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram coefficients"));
        }
        Ok(())
    }
}

pub(crate) fn check_shape(
    context: &'static str,
    params: &TfParams,
    signal_len: usize,
    dim: (usize, usize),
) -> Result<()> {
    let expected = (params.bins(), params.frames_for(signal_len));
    if signal_len == 0 || dim != expected {
        return Err(Error::Dimension {
            context,
            expected: format!("{} bins x {} frames", expected.0, expected.1),
            actual: format!("{} bins x {} frames", dim.0, dim.1),
        });
    }
    Ok(())
}

/// Reusable forward/inverse transform for one parameter set.
pub(crate) struct Engine {
    params: TfParams,
    window: Window,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Engine {
    pub(crate) fn new(params: &TfParams) -> Result<Self> {
        let window = make_window(params)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(params.fft_size);
        let inverse = planner.plan_fft_inverse(params.fft_size);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            params: *params,
            window,
            forward,
            inverse,
            buf: vec![Complex64::default(); params.fft_size],
            scratch: vec![Complex64::default(); scratch_len],
        })
    }

    pub(crate) fn analyze(&mut self, x: &[f64]) -> Array2<Complex64> {
        let m = self.params.fft_size;
        let c = m / 2;
        let hop = self.params.hop;
        let frames = self.params.frames_for(x.len());
        let mut out = Array2::zeros((self.params.bins(), frames));
        let taps = self.window.taps();
        for n in 0..frames {
            for (k, &w) in taps.iter().enumerate() {
                let t = (n * hop + k) as isize - c as isize;
                let s = if t >= 0 && (t as usize) < x.len() {
                    x[t as usize]
                } else {
                    0.0
                };
                self.buf[(k + m - c) % m] = Complex64::new(w * s, 0.0);
            }
            self.forward
                .process_with_scratch(&mut self.buf, &mut self.scratch);
            for (b, v) in out.column_mut(n).iter_mut().enumerate() {
                *v = self.buf[b];
            }
        }
        out
    }

    /// Least-squares inverse: overlap-add of windowed frames normalized by
    /// the accumulated squared window.
    pub(crate) fn synthesize(&mut self, coefficients: &Array2<Complex64>, len: usize) -> Vec<f64> {
        let m = self.params.fft_size;
        let c = m / 2;
        let half = m / 2;
        let hop = self.params.hop;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let taps = self.window.taps();
        for (n, col) in coefficients.columns().into_iter().enumerate() {
            self.buf[0] = Complex64::new(col[0].re, 0.0);
            self.buf[half] = Complex64::new(col[half].re, 0.0);
            for k in 1..half {
                self.buf[k] = col[k];
                self.buf[m - k] = col[k].conj();
            }
            self.inverse
                .process_with_scratch(&mut self.buf, &mut self.scratch);
            for (k, &w) in taps.iter().enumerate() {
                let t = (n * hop + k) as isize - c as isize;
                if t < 0 || t as usize >= len {
                    continue;
                }
                let y = self.buf[(k + m - c) % m].re / m as f64;
                out[t as usize] += w * y;
                norm[t as usize] += w * w;
            }
        }
        for (o, &d) in out.iter_mut().zip(&norm) {
            *o = if d > 1e-12 { *o / d } else { 0.0 };
        }
        out
    }
}

pub fn stft(audio: &AudioBuffer, params: &TfParams) -> Result<ComplexSpectrogram> {
    let mut engine = Engine::new(params)?;
    let coefficients = engine.analyze(audio.samples());
    Ok(ComplexSpectrogram {
        coefficients,
        params: *params,
        signal_len: audio.len(),
        sample_rate: audio.sample_rate(),
    })
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
    spec.check()?;
    let mut engine = Engine::new(&spec.params)?;
    let samples = engine.synthesize(&spec.coefficients, spec.signal_len);
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Natural-log magnitudes floored `dynamic_range_db` below the maximum.
pub fn log_magnitude(spec: &ComplexSpectrogram) -> crate::repr::LogMagSpectrogram {
    let mags = spec.magnitudes();
    let peak = mags.iter().fold(0.0_f64, |m, &v| m.max(v));
    let reference = if peak > 0.0 { peak.ln() } else { 0.0 };
    let floor = reference - spec.params.dynamic_range_nats();
    let values = mags.mapv(|v| if v > 0.0 { v.ln().max(floor) } else { floor });
    crate::repr::LogMagSpectrogram {
        values,
        floor,
        params: spec.params,
        signal_len: spec.signal_len,
        sample_rate: spec.sample_rate,
    }
}
