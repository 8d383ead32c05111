//! Classical Griffin-Lim phase estimation.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::repr::LogMagSpectrogram;
use crate::tf::Engine;

/// Iteration budget used by experiment presets.
pub const DEFAULT_ITERATIONS: usize = 60;

#[derive(Debug, Clone, Default)]
pub struct GlConfig {
    pub iterations: usize,
    /// Starting phase; zeros when absent.
    pub init_phase: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct GlOutput {
    pub audio: AudioBuffer,
    /// `inconsistency[k]` is the distance between the target magnitude and
    /// the magnitude of the signal produced by iteration `k + 1`.
    pub inconsistency: Vec<f64>,
}

/// Frobenius distance between two one-sided magnitude matrices, counted over
/// the full conjugate-symmetric spectrum so it matches the norm in which
/// the overlap-add inverse is a least-squares projection.
pub fn spectral_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let last = a.nrows() - 1;
    let mut acc = 0.0;
    Zip::indexed(a).and(b).for_each(|(bin, _), &x, &y| {
        let w = if bin == 0 || bin == last { 1.0 } else { 2.0 };
        acc += w * (x - y) * (x - y);
    });
    acc.sqrt()
}

pub fn griffin_lim(mag: &LogMagSpectrogram, cfg: &GlConfig) -> Result<GlOutput> {
    mag.check()?;
    let target = mag.magnitudes();
    let mut phase = match &cfg.init_phase {
        Some(p) if p.dim() != target.dim() => {
            return Err(Error::Dimension {
                context: "griffin-lim initial phase",
                expected: format!("{:?}", target.dim()),
                actual: format!("{:?}", p.dim()),
            })
        }
        Some(p) => p.clone(),
        None => Array2::zeros(target.dim()),
    };
    if phase.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("griffin-lim initial phase"));
    }

    let mut engine = Engine::new(&mag.params)?;
    let len = mag.signal_len;
    let mut coeffs: Array2<Complex64> = Array2::zeros(target.dim());
    let mut inconsistency = Vec::with_capacity(cfg.iterations);

    let combine = |coeffs: &mut Array2<Complex64>, phase: &Array2<f64>| {
        Zip::from(coeffs)
            .and(&target)
            .and(phase)
            .for_each(|c, &m, &p| *c = Complex64::from_polar(m, p));
    };

    for _ in 0..cfg.iterations {
        combine(&mut coeffs, &phase);
        let x = engine.synthesize(&coeffs, len);
        let reanalyzed = engine.analyze(&x);
        let mags = reanalyzed.mapv(|c| c.norm());
        inconsistency.push(spectral_distance(&target, &mags));
        phase = reanalyzed.mapv(|c| c.arg());
    }
    combine(&mut coeffs, &phase);
    let audio = AudioBuffer::new(engine.synthesize(&coeffs, len), mag.sample_rate)?;
    Ok(GlOutput {
        audio,
        inconsistency,
    })
}
