//! Mono sampled audio and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{invalid, Error, Result};

/// Sample rate used throughout the experiments.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// A mono waveform. Samples are finite and the buffer is never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("samples", "audio buffer must not be empty"));
        }
        if sample_rate == 0 {
            return Err(invalid("sample_rate", "must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Zero-pad or crop to `len` samples.
    pub fn fit_to(&self, len: usize) -> Result<Self> {
        let mut s = self.samples.clone();
        s.resize(len, 0.0);
        Self::new(s, self.sample_rate)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Format {
                what: "wav",
                reason: format!("channels = {}, only mono is supported", spec.channels),
            });
        }
        let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<_, _>>()?,
            (SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<_, _>>()?,
            (fmt, bits) => {
                return Err(Error::Format {
                    what: "wav",
                    reason: format!(
                        "bits_per_sample = {bits} ({fmt:?}); expected 16-bit PCM or 32-bit float"
                    ),
                })
            }
        };
        Self::new(samples, spec.sample_rate)
    }

    /// Write 16-bit PCM. Samples outside [-1, 1] are clipped.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut writer = WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }

    /// Write 32-bit float samples, lossless for values representable in f32.
    pub fn write_wav_f32(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut writer = WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample(s as f32)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(AudioBuffer::new(vec![], 16_000).is_err());
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn wav_round_trip_pcm16_and_f32() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..1000).map(|i| 0.5 * (i as f64 * 0.01).sin()).collect();
        let a = AudioBuffer::new(x, 16_000).unwrap();

        let p16 = dir.path().join("a16.wav");
        a.write_wav(&p16).unwrap();
        let b = AudioBuffer::read_wav(&p16).unwrap();
        assert_eq!(b.sample_rate(), 16_000);
        assert_eq!(b.len(), a.len());
        for (u, v) in a.samples().iter().zip(b.samples()) {
            assert!((u - v).abs() < 1.0 / 32768.0 + 1e-9);
        }

        let p32 = dir.path().join("a32.wav");
        a.write_wav_f32(&p32).unwrap();
        let c = AudioBuffer::read_wav(&p32).unwrap();
        for (u, v) in a.samples().iter().zip(c.samples()) {
            assert!((u - v).abs() < 1e-7);
        }
    }

    #[test]
    fn fit_to_pads_and_crops() {
        let a = AudioBuffer::new(vec![1.0, 2.0, 3.0], 8).unwrap();
        assert_eq!(a.fit_to(5).unwrap().samples(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(a.fit_to(2).unwrap().samples(), &[1.0, 2.0]);
    }
}
