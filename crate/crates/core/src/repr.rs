//! The two competing spectrogram representations.
//!
//! [`LogMagSpectrogram`] is the single-channel log magnitude. [`IfSpectrogram`]
//! pairs it with an instantaneous-frequency channel holding per-hop phase
//! advances, which integrate back to the STFT phase by cumulative summation.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};
use crate::griffinlim::{griffin_lim, GlConfig};
use crate::seed;
use crate::tf::{self, check_shape, ComplexSpectrogram, TfParams};

/// Wrap an angle to the principal range (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let w = PI - (PI - x).rem_euclid(2.0 * PI);
    // rem_euclid may round up to exactly 2 pi
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Natural-log magnitude spectrogram. Every value is `>= floor`; cells equal
/// to the floor stand for "below the dynamic range" and resynthesize as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMagSpectrogram {
    pub values: Array2<f64>,
    pub floor: f64,
    pub params: TfParams,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl LogMagSpectrogram {
    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Linear magnitudes; floored cells map to exactly zero.
    pub fn magnitudes(&self) -> Array2<f64> {
        let floor = self.floor;
        self.values
            .mapv(|v| if v > floor { v.exp() } else { 0.0 })
    }

    pub fn above_floor(&self) -> Array2<bool> {
        let floor = self.floor;
        self.values.mapv(|v| v > floor)
    }

    pub fn check(&self) -> Result<()> {
        self.params.validate()?;
        check_shape(
            "log-magnitude spectrogram",
            &self.params,
            self.signal_len,
            self.values.dim(),
        )?;
        if !self.floor.is_finite() || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log-magnitude values"));
        }
        if self.values.iter().any(|&v| v < self.floor) {
            return Err(invalid("values", "log-magnitude below its floor"));
        }
        Ok(())
    }

    /// Complex spectrogram `|X| exp(i phase)`.
    pub fn with_phase(&self, phase: &Array2<f64>) -> Result<ComplexSpectrogram> {
        if phase.dim() != self.values.dim() {
            return Err(Error::Dimension {
                context: "phase matrix",
                expected: format!("{:?}", self.values.dim()),
                actual: format!("{:?}", phase.dim()),
            });
        }
        let mut coefficients = Array2::zeros(self.values.dim());
        Zip::from(&mut coefficients)
            .and(&self.magnitudes())
            .and(phase)
            .for_each(|c, &m, &p| *c = Complex64::from_polar(m, p));
        ComplexSpectrogram::new(coefficients, self.params, self.signal_len, self.sample_rate)
    }
}

/// Log magnitude plus instantaneous frequency in radians per hop, (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct IfSpectrogram {
    pub log_mag: LogMagSpectrogram,
    pub inst_freq: Array2<f64>,
}

impl IfSpectrogram {
    pub fn params(&self) -> &TfParams {
        &self.log_mag.params
    }

    pub fn check(&self) -> Result<()> {
        self.log_mag.check()?;
        if self.inst_freq.dim() != self.log_mag.values.dim() {
            return Err(Error::Dimension {
                context: "instantaneous frequency channel",
                expected: format!("{:?}", self.log_mag.values.dim()),
                actual: format!("{:?}", self.inst_freq.dim()),
            });
        }
        if self.inst_freq.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("instantaneous frequency"));
        }
        Ok(())
    }

    /// Phase recovered as the running sum of the IF channel along time.
    pub fn integrated_phase(&self) -> Array2<f64> {
        let mut phase = self.inst_freq.clone();
        for mut row in phase.rows_mut() {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        phase
    }
}

pub fn compute_if(spec: &ComplexSpectrogram) -> IfSpectrogram {
    let log_mag = tf::log_magnitude(spec);
    let floor = log_mag.floor;
    let mut inst_freq = Array2::zeros(spec.coefficients.dim());
    for (b, row) in spec.coefficients.rows().into_iter().enumerate() {
        let mut prev = 0.0;
        for (n, c) in row.iter().enumerate() {
            let phase = if log_mag.values[[b, n]] > floor {
                c.arg()
            } else {
                0.0
            };
            inst_freq[[b, n]] = wrap_phase(phase - prev);
            prev = phase;
        }
    }
    IfSpectrogram { log_mag, inst_freq }
}

/// Resynthesize from the IF channel; `refine_iters > 0` continues with
/// Griffin-Lim started from the integrated phase.
pub fn invert_if(rep: &IfSpectrogram, refine_iters: usize) -> Result<AudioBuffer> {
    rep.check()?;
    let phase = rep.integrated_phase();
    if refine_iters == 0 {
        return tf::istft(&rep.log_mag.with_phase(&phase)?);
    }
    let cfg = GlConfig {
        iterations: refine_iters,
        init_phase: Some(phase),
    };
    Ok(griffin_lim(&rep.log_mag, &cfg)?.audio)
}

/// Baseline inversion with every phase set to zero.
pub fn zero_phase_invert(logmag: &LogMagSpectrogram) -> Result<AudioBuffer> {
    logmag.check()?;
    tf::istft(&logmag.with_phase(&Array2::zeros(logmag.values.dim()))?)
}

/// Baseline inversion with independent uniform phases.
pub fn random_phase_invert(logmag: &LogMagSpectrogram, seed: u64) -> Result<AudioBuffer> {
    logmag.check()?;
    let mut rng = seed::rng(seed);
    let phase = Array2::from_shape_simple_fn(logmag.values.dim(), || {
        PI - 2.0 * PI * rng.random::<f64>()
    });
    tf::istft(&logmag.with_phase(&phase)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseChannel {
    InstFreq,
    Magnitude,
}

/// A representation that accepts simulated estimation error.
pub trait NoiseTarget: Sized {
    fn with_noise(&self, sigma: f64, channel: NoiseChannel, seed: u64) -> Result<Self>;
}

fn add_gaussian(values: &mut Array2<f64>, sigma: f64, seed: u64) {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = seed::rng(seed);
    for v in values.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

impl NoiseTarget for LogMagSpectrogram {
    fn with_noise(&self, sigma: f64, channel: NoiseChannel, seed: u64) -> Result<Self> {
        check_sigma(sigma)?;
        if channel == NoiseChannel::InstFreq {
            return Err(invalid(
                "channel",
                "a log-magnitude spectrogram has no instantaneous-frequency channel",
            ));
        }
        let mut out = self.clone();
        if sigma == 0.0 {
            return Ok(out);
        }
        add_gaussian(&mut out.values, sigma, seed);
        let floor = out.floor;
        out.values.mapv_inplace(|v| v.max(floor));
        Ok(out)
    }
}

impl NoiseTarget for IfSpectrogram {
    fn with_noise(&self, sigma: f64, channel: NoiseChannel, seed: u64) -> Result<Self> {
        check_sigma(sigma)?;
        match channel {
            NoiseChannel::Magnitude => Ok(Self {
                log_mag: self.log_mag.with_noise(sigma, channel, seed)?,
                inst_freq: self.inst_freq.clone(),
            }),
            NoiseChannel::InstFreq => {
                let mut out = self.clone();
                if sigma == 0.0 {
                    return Ok(out);
                }
                add_gaussian(&mut out.inst_freq, sigma, seed);
                out.inst_freq.mapv_inplace(wrap_phase);
                Ok(out)
            }
        }
    }
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma` to one channel.
pub fn inject_noise<R: NoiseTarget>(
    rep: &R,
    sigma: f64,
    channel: NoiseChannel,
    seed: u64,
) -> Result<R> {
    rep.with_noise(sigma, channel, seed)
}
