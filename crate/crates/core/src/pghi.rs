//! Phase gradient heap integration.
//!
//! For a Gaussian window `exp(-pi t^2 / gamma)` the STFT phase gradients are
//! determined by the log-magnitude gradients:
//!
//! ```text
//! dphase/dbin(m, n) = -gamma / (2 a M) * (s(m, n+1) - s(m, n-1))
//! dphase/dhop(m, n) =  a M / (2 gamma) * (s(m+1, n) - s(m-1, n)) + 2 pi a m / M
//! ```
//!
//! with `s` the natural-log magnitude, `a` the hop and `M` the FFT size. The
//! gradients come out directly in radians per bin step and radians per hop
//! for the frame-centered phase convention used by [`crate::tf`].
//!
//! Integration visits coefficients in order of decreasing magnitude, growing
//! each region from its loudest cell so that phase errors accumulate along
//! the prominent ridges last.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};
use crate::repr::LogMagSpectrogram;
use crate::seed;
use crate::tf::{self, TfParams, WindowKind};

/// Default relative magnitude threshold.
pub const DEFAULT_TOL: f64 = 1e-7;

/// Estimated phase derivatives, same shape as the source log-magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGradients {
    /// Phase advance per hop.
    pub time: Array2<f64>,
    /// Phase change per bin step.
    pub freq: Array2<f64>,
    pub params: TfParams,
}

/// Result of heap integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub phase: Array2<f64>,
    /// Cells at or above `tol * max` magnitude.
    pub significant: Array2<bool>,
    /// Cells that started a region, in the order they were seeded.
    pub seeds: Vec<(usize, usize)>,
    /// Cells assigned through integration, seeds included.
    pub assigned: usize,
}

/// Centered difference `v[i+1] - v[i-1]`, one-sided (doubled) at the borders.
fn span_difference(v: &[f64], out: &mut [f64]) {
    let n = v.len();
    if n < 2 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    out[0] = 2.0 * (v[1] - v[0]);
    out[n - 1] = 2.0 * (v[n - 1] - v[n - 2]);
    for i in 1..n - 1 {
        out[i] = v[i + 1] - v[i - 1];
    }
}

pub fn phase_gradients(logmag: &LogMagSpectrogram) -> Result<PhaseGradients> {
    logmag.check()?;
    let p = logmag.params;
    if p.window != WindowKind::TruncatedGaussian {
        return Err(Error::WindowKind(p.window));
    }
    p.require_redundancy()?;

    let (bins, frames) = logmag.values.dim();
    let a = p.hop as f64;
    let m = p.fft_size as f64;
    let freq_scale = -p.gamma / (2.0 * a * m);
    let time_scale = a * m / (2.0 * p.gamma);

    let mut time = Array2::zeros((bins, frames));
    let mut freq = Array2::zeros((bins, frames));

    let mut buf = vec![0.0; frames.max(bins)];
    let mut diff = vec![0.0; frames.max(bins)];
    for b in 0..bins {
        for (n, v) in buf[..frames].iter_mut().enumerate() {
            *v = logmag.values[[b, n]];
        }
        span_difference(&buf[..frames], &mut diff[..frames]);
        for n in 0..frames {
            freq[[b, n]] = freq_scale * diff[n];
        }
    }
    for n in 0..frames {
        for (b, v) in buf[..bins].iter_mut().enumerate() {
            *v = logmag.values[[b, n]];
        }
        span_difference(&buf[..bins], &mut diff[..bins]);
        for b in 0..bins {
            time[[b, n]] = time_scale * diff[b] + 2.0 * PI * a * b as f64 / m;
        }
    }
    Ok(PhaseGradients { time, freq, params: p })
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    mag: f64,
    bin: usize,
    frame: usize,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    // Max-heap on magnitude; ties pop the smallest (bin, frame) first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.mag
            .total_cmp(&other.mag)
            .then_with(|| other.bin.cmp(&self.bin))
            .then_with(|| other.frame.cmp(&self.frame))
    }
}

pub fn heap_integrate(
    logmag: &LogMagSpectrogram,
    grads: &PhaseGradients,
    tol: f64,
    seed: u64,
) -> Result<Integration> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid("tol", format!("must lie in (0, 1), got {tol}")));
    }
    let dim = logmag.values.dim();
    for (name, g) in [("time gradient", &grads.time), ("frequency gradient", &grads.freq)] {
        if g.dim() != dim {
            return Err(Error::Dimension {
                context: name,
                expected: format!("{dim:?}"),
                actual: format!("{:?}", g.dim()),
            });
        }
    }
    if grads.time.iter().chain(grads.freq.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("phase gradients"));
    }

    let mags = logmag.magnitudes();
    let peak = mags.iter().fold(0.0_f64, |m, &v| m.max(v));
    let threshold = tol * peak;
    let significant = mags.mapv(|v| v > 0.0 && v >= threshold);

    let mut rng = seed::rng(seed);
    let mut phase = Array2::zeros(dim);
    let mut done = Array2::from_elem(dim, false);
    for ((idx, p), &sig) in phase.indexed_iter_mut().zip(significant.iter()) {
        if !sig {
            *p = PI - 2.0 * PI * rng.random::<f64>();
            done[idx] = true;
        }
    }

    let mut order: Vec<Cell> = significant
        .indexed_iter()
        .filter(|(_, &s)| s)
        .map(|((bin, frame), _)| Cell {
            mag: mags[[bin, frame]],
            bin,
            frame,
        })
        .collect();
    order.sort_unstable_by(|a, b| b.cmp(a));

    let (bins, frames) = dim;
    let mut heap = BinaryHeap::new();
    let mut seeds = Vec::new();
    let mut assigned = 0;
    for start in order {
        if done[[start.bin, start.frame]] {
            continue;
        }
        phase[[start.bin, start.frame]] = 0.0;
        done[[start.bin, start.frame]] = true;
        assigned += 1;
        seeds.push((start.bin, start.frame));
        heap.push(start);

        while let Some(Cell { bin, frame, .. }) = heap.pop() {
            let here = phase[[bin, frame]];
            let mut visit = |nb: usize, nf: usize, value: f64| {
                if !done[[nb, nf]] {
                    phase[[nb, nf]] = value;
                    done[[nb, nf]] = true;
                    assigned += 1;
                    heap.push(Cell {
                        mag: mags[[nb, nf]],
                        bin: nb,
                        frame: nf,
                    });
                }
            };
            let dt = grads.time[[bin, frame]];
            let df = grads.freq[[bin, frame]];
            if frame + 1 < frames {
                visit(bin, frame + 1, here + 0.5 * (dt + grads.time[[bin, frame + 1]]));
            }
            if frame > 0 {
                visit(bin, frame - 1, here - 0.5 * (dt + grads.time[[bin, frame - 1]]));
            }
            if bin + 1 < bins {
                visit(bin + 1, frame, here + 0.5 * (df + grads.freq[[bin + 1, frame]]));
            }
            if bin > 0 {
                visit(bin - 1, frame, here - 0.5 * (df + grads.freq[[bin - 1, frame]]));
            }
        }
    }

    Ok(Integration {
        phase,
        significant,
        seeds,
        assigned,
    })
}

/// Phase reconstruction from the log magnitude alone.
pub fn pghi_phase(logmag: &LogMagSpectrogram, tol: f64, seed: u64) -> Result<Array2<f64>> {
    let grads = phase_gradients(logmag)?;
    Ok(heap_integrate(logmag, &grads, tol, seed)?.phase)
}

pub fn pghi_invert(logmag: &LogMagSpectrogram, tol: f64, seed: u64) -> Result<AudioBuffer> {
    let phase = pghi_phase(logmag, tol, seed)?;
    tf::istft(&logmag.with_phase(&phase)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::repr::{random_phase_invert, wrap_phase};
    use crate::tf::{log_magnitude, stft, ComplexSpectrogram};
    use num_complex::Complex64;
    use proptest::prelude::*;

    const SR: f64 = 16_000.0;

    fn gauss(hop: usize) -> TfParams {
        TfParams::preset(hop, WindowKind::TruncatedGaussian).unwrap()
    }

    fn tone(k0: usize, len: usize, phase0: f64) -> AudioBuffer {
        let f = k0 as f64 * SR / 512.0;
        AudioBuffer::new(
            (0..len)
                .map(|t| 0.5 * (2.0 * PI * f * t as f64 / SR + phase0).cos())
                .collect(),
            16_000,
        )
        .unwrap()
    }

    fn logmag_from(values: Array2<f64>, floor: f64, params: TfParams, len: usize) -> LogMagSpectrogram {
        LogMagSpectrogram {
            values,
            floor,
            params,
            signal_len: len,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn sinusoid_gradients_match_true_phase_advance() {
        for hop in [64, 128] {
            let p = gauss(hop);
            let k0 = 11;
            let spec = stft(&tone(k0, 16_000, 0.4), &p).unwrap();
            let g = phase_gradients(&log_magnitude(&spec)).unwrap();
            let expected = wrap_phase(2.0 * PI * k0 as f64 * hop as f64 / 512.0);
            let ph = spec.phases();
            let frames = spec.frames();
            for n in 6..frames - 6 {
                assert!((wrap_phase(g.time[[k0, n]]) - expected).abs() < 1e-2);
                let true_adv = wrap_phase(ph[[k0, n]] - ph[[k0, n - 1]]);
                assert!((wrap_phase(g.time[[k0, n]] - true_adv)).abs() < 1e-2);
                assert!(g.freq[[k0, n]].abs() < 1e-2);
            }
        }
    }

    #[test]
    fn impulse_gradients_match_true_phase_structure() {
        let p = gauss(64);
        let t0 = 4000 + 17;
        let mut x = vec![0.0; 8000];
        x[t0] = 1.0;
        let spec = stft(&AudioBuffer::new(x, 16_000).unwrap(), &p).unwrap();
        let lm = log_magnitude(&spec);
        let g = phase_gradients(&lm).unwrap();
        let ph = spec.phases();
        let n0 = t0 / 64;
        for n in n0 - 2..=n0 + 2 {
            for b in 20..200 {
                // the magnitude-driven part of the time gradient vanishes
                let demod = 2.0 * PI * 64.0 * b as f64 / 512.0;
                assert!((g.time[[b, n]] - demod).abs() < 1e-6);
                let true_df = wrap_phase(ph[[b + 1, n]] - ph[[b, n]]);
                assert!((wrap_phase(g.freq[[b, n]]) - true_df).abs() < 1e-6);
                let analytic = -2.0 * PI * (t0 as f64 - (n * 64) as f64) / 512.0;
                assert!((g.freq[[b, n]] - analytic).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_hann_and_low_redundancy() {
        let hann = TfParams::preset(128, WindowKind::Hann).unwrap();
        let lm = log_magnitude(&stft(&tone(5, 2000, 0.0), &hann).unwrap());
        assert!(matches!(phase_gradients(&lm), Err(Error::WindowKind(_))));
        assert!(pghi_invert(&lm, DEFAULT_TOL, 0).is_err());

        let low = TfParams::new(512, 256, WindowKind::TruncatedGaussian).unwrap();
        let lm = log_magnitude(&stft(&tone(5, 2000, 0.0), &low).unwrap());
        let err = phase_gradients(&lm).unwrap_err();
        assert!(matches!(err, Error::Redundancy { .. }));
        assert!(err.to_string().contains("M/a >= 4"));
    }

    #[test]
    fn single_significant_cell_gets_zero_phase() {
        let p = TfParams::new(16, 4, WindowKind::TruncatedGaussian).unwrap();
        let floor = -20.0;
        let mut v = Array2::from_elem((9, 5), floor);
        v[[4, 2]] = 0.0;
        let lm = logmag_from(v, floor, p, 20);
        let g = phase_gradients(&lm).unwrap();
        let out = heap_integrate(&lm, &g, 0.5, 3).unwrap();
        assert_eq!(out.seeds, vec![(4, 2)]);
        assert_eq!(out.assigned, 1);
        assert_eq!(out.phase[[4, 2]], 0.0);
        let zeros = out.phase.iter().filter(|&&p| p == 0.0).count();
        assert_eq!(zeros, 1);
        assert!(out.phase.iter().all(|&p| p > -PI && p <= PI));
    }

    #[test]
    fn disconnected_regions_are_seeded_separately() {
        let p = TfParams::new(16, 4, WindowKind::TruncatedGaussian).unwrap();
        let floor = -20.0;
        let mut v = Array2::from_elem((9, 6), floor);
        for (b, n, val) in [(1, 1, 0.0), (1, 2, -0.1), (2, 1, -0.2), (6, 4, -0.05), (7, 4, -0.3)] {
            v[[b, n]] = val;
        }
        let lm = logmag_from(v, floor, p, 24);
        let g = phase_gradients(&lm).unwrap();
        let out = heap_integrate(&lm, &g, 0.5, 1).unwrap();
        assert_eq!(out.seeds, vec![(1, 1), (6, 4)]);
        assert_eq!(out.assigned, 5);
        assert_eq!(out.significant.iter().filter(|&&s| s).count(), 5);
        assert_eq!(out.phase[[1, 1]], 0.0);
        assert_eq!(out.phase[[6, 4]], 0.0);
        let step = 0.5 * (g.freq[[6, 4]] + g.freq[[7, 4]]);
        assert!((out.phase[[7, 4]] - step).abs() < 1e-12);
    }

    #[test]
    fn equal_magnitudes_break_ties_by_bin_then_frame() {
        let p = TfParams::new(16, 4, WindowKind::TruncatedGaussian).unwrap();
        let floor = -20.0;
        let mut v = Array2::from_elem((9, 6), floor);
        v[[5, 1]] = 0.0;
        v[[2, 4]] = 0.0;
        v[[2, 0]] = 0.0;
        let lm = logmag_from(v, floor, p, 24);
        let g = phase_gradients(&lm).unwrap();
        let out = heap_integrate(&lm, &g, 0.5, 1).unwrap();
        assert_eq!(out.seeds, vec![(2, 0), (2, 4), (5, 1)]);
    }

    #[test]
    fn rejects_bad_tol_and_dims() {
        let p = gauss(128);
        let lm = log_magnitude(&stft(&tone(5, 2000, 0.0), &p).unwrap());
        let g = phase_gradients(&lm).unwrap();
        assert!(heap_integrate(&lm, &g, 0.0, 0).is_err());
        assert!(heap_integrate(&lm, &g, 1.0, 0).is_err());
        let mut bad = g.clone();
        bad.freq = Array2::zeros((2, 2));
        assert!(matches!(heap_integrate(&lm, &bad, 0.1, 0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sinusoid_phase_tracks_truth_over_one_second() {
        let p = gauss(128);
        let k0 = 13;
        let spec = stft(&tone(k0, 16_000, 1.1), &p).unwrap();
        let lm = log_magnitude(&spec);
        let g = phase_gradients(&lm).unwrap();
        let out = heap_integrate(&lm, &g, DEFAULT_TOL, 5).unwrap();
        let truth = spec.phases();
        let frames = spec.frames();
        let mid = frames / 2;
        let offset = truth[[k0, mid]] - out.phase[[k0, mid]];
        for n in 2..frames - 2 {
            let drift = wrap_phase(out.phase[[k0, n]] + offset - truth[[k0, n]]);
            assert!(drift.abs() < 0.1, "frame {n}: drift {drift}");
        }
    }

    #[test]
    fn smooth_surface_integrates_exactly() {
        // gradients sampled from a quadratic phase surface are reproduced up
        // to a constant: the trapezoid rule is exact for linear gradients
        let p = TfParams::new(64, 16, WindowKind::TruncatedGaussian).unwrap();
        let (bins, frames) = (33, 20);
        let surface = |b: f64, n: f64| 0.3 * n + 0.05 * n * n - 0.2 * b + 0.01 * b * b + 0.02 * b * n;
        let time = Array2::from_shape_fn((bins, frames), |(b, n)| {
            0.3 + 0.1 * n as f64 + 0.02 * b as f64
        });
        let freq = Array2::from_shape_fn((bins, frames), |(b, n)| {
            -0.2 + 0.02 * b as f64 + 0.02 * n as f64
        });
        let values = Array2::from_shape_fn((bins, frames), |(b, n)| {
            -((b as f64 - 10.0).powi(2) + (n as f64 - 7.0).powi(2)) / 100.0
        });
        let lm = logmag_from(values, -100.0, p, frames * 16);
        let grads = PhaseGradients { time, freq, params: p };
        let out = heap_integrate(&lm, &grads, 1e-9, 0).unwrap();
        assert_eq!(out.seeds.len(), 1);
        let c = surface(10.0, 7.0);
        for ((b, n), &ph) in out.phase.indexed_iter() {
            assert!((ph - (surface(b as f64, n as f64) - c)).abs() < 1e-6);
        }
    }

    #[test]
    fn silence_inverts_to_silence() {
        let p = gauss(128);
        let lm = log_magnitude(&stft(&AudioBuffer::silence(4000, 16_000).unwrap(), &p).unwrap());
        let y = pghi_invert(&lm, DEFAULT_TOL, 1).unwrap();
        assert_eq!(y.len(), 4000);
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sinusoid_reconstruction_beats_random_phase() {
        let p = gauss(128);
        let x = tone(17, 16_000, 0.3);
        let lm = log_magnitude(&stft(&x, &p).unwrap());
        let y = pghi_invert(&lm, DEFAULT_TOL, 2).unwrap();
        assert!(y.samples().iter().all(|v| v.is_finite()));
        let sc = crate::metrics::spectral_convergence(&x, &y, &p).unwrap();
        assert!(sc <= 0.05, "spectral convergence {sc}");
        let rnd = random_phase_invert(&lm, 2).unwrap();
        let s_pghi = crate::metrics::snr_db_phase_aligned(&x, &y).unwrap();
        let s_rnd = crate::metrics::snr_db_phase_aligned(&x, &rnd).unwrap();
        assert!(s_pghi >= s_rnd + 20.0, "pghi {s_pghi} dB vs random {s_rnd} dB");
    }

    #[test]
    fn deterministic_for_seed() {
        let p = gauss(64);
        let mut r = seed::rng(3);
        let x: Vec<f64> = (0..3000).map(|_| r.random::<f64>() - 0.5).collect();
        let lm = log_magnitude(&stft(&AudioBuffer::new(x, 16_000).unwrap(), &p).unwrap());
        let a = pghi_phase(&lm, 1e-3, 9).unwrap();
        let b = pghi_phase(&lm, 1e-3, 9).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn assigns_every_significant_cell_once(seed in any::<u64>(), tol in 1e-6f64..0.5) {
            let p = TfParams::new(64, 16, WindowKind::TruncatedGaussian).unwrap();
            let mut r = seed::rng(seed);
            let coeffs = Array2::from_shape_simple_fn((33, 12), || {
                Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)
                    * if r.random::<f64>() < 0.3 { 0.0 } else { 1.0 }
            });
            let spec = ComplexSpectrogram::new(coeffs, p, 12 * 16, 16_000).unwrap();
            let lm = log_magnitude(&spec);
            let g = phase_gradients(&lm).unwrap();
            let out = heap_integrate(&lm, &g, tol, seed).unwrap();
            let sig = out.significant.iter().filter(|&&s| s).count();
            prop_assert_eq!(out.assigned, sig);
            prop_assert!(out.phase.iter().all(|v| v.is_finite()));
        }
    }
}
