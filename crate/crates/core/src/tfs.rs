//! `TFS1` spectrogram container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"TFS1" | channels: u32 | bins: u32 | frames: u32 | flags: u32 | payload
//! ```
//!
//! The payload is channel-major f32. Within a channel values are ordered
//! bin-major (`bin * frames + frame`). With the complex flag every value is an
//! interleaved `(re, im)` pair.
//!
//! Flags: bit 0 log-magnitude present, bit 1 IF present, bit 2 complex.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::repr::{IfSpectrogram, LogMagSpectrogram};
use crate::tf::{ComplexSpectrogram, TfParams};

pub const MAGIC: &[u8; 4] = b"TFS1";
pub const FLAG_LOG_MAG: u32 = 1;
pub const FLAG_IF: u32 = 1 << 1;
pub const FLAG_COMPLEX: u32 = 1 << 2;

/// Raw container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct TfsContainer {
    pub bins: u32,
    pub frames: u32,
    pub flags: u32,
    pub channels: Vec<Vec<f32>>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "TFS1 container",
        reason: reason.into(),
    }
}

impl TfsContainer {
    fn values_per_channel(&self) -> usize {
        let cells = self.bins as usize * self.frames as usize;
        if self.flags & FLAG_COMPLEX != 0 {
            2 * cells
        } else {
            cells
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let per = self.values_per_channel();
        if let Some(c) = self.channels.iter().find(|c| c.len() != per) {
            return Err(bad(format!("channel holds {} values, expected {per}", c.len())));
        }
        w.write_all(MAGIC)?;
        for v in [self.channels.len() as u32, self.bins, self.frames, self.flags] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(per * 4);
        for ch in &self.channels {
            bytes.clear();
            for v in ch {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad(format!("magic: expected \"TFS1\", got {magic:?}")));
        }
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *h = u32::from_le_bytes(b);
        }
        let [channels, bins, frames, flags] = header;
        if flags & !(FLAG_LOG_MAG | FLAG_IF | FLAG_COMPLEX) != 0 {
            return Err(bad(format!("flags: unknown bits set in {flags:#x}")));
        }
        let mut c = Self {
            bins,
            frames,
            flags,
            channels: Vec::new(),
        };
        let per = c.values_per_channel();
        let mut bytes = vec![0u8; per * 4];
        for i in 0..channels {
            r.read_exact(&mut bytes)
                .map_err(|_| bad(format!("payload: channel {i} truncated")))?;
            c.channels.push(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            );
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("payload: trailing bytes after last channel"));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn flatten(m: &Array2<f64>) -> Vec<f32> {
    m.iter().map(|&v| v as f32).collect()
}

fn unflatten(ch: &[f32], bins: usize, frames: usize) -> Array2<f64> {
    Array2::from_shape_fn((bins, frames), |(b, n)| ch[b * frames + n] as f64)
}

/// Floor recovery after the f32 round trip: the channel minimum when it sits
/// at the dynamic-range limit, otherwise the limit itself.
fn recover_floor(values: &Array2<f64>, params: &TfParams) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let limit = max - params.dynamic_range_nats();
    if min <= limit + 1e-3 {
        min
    } else {
        limit
    }
}

/// A decoded spectrogram representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    LogMag(LogMagSpectrogram),
    If(IfSpectrogram),
    Complex(ComplexSpectrogram),
}

impl Representation {
    pub fn to_container(&self) -> TfsContainer {
        match self {
            Representation::LogMag(l) => TfsContainer {
                bins: l.bins() as u32,
                frames: l.frames() as u32,
                flags: FLAG_LOG_MAG,
                channels: vec![flatten(&l.values)],
            },
            Representation::If(r) => TfsContainer {
                bins: r.log_mag.bins() as u32,
                frames: r.log_mag.frames() as u32,
                flags: FLAG_LOG_MAG | FLAG_IF,
                channels: vec![flatten(&r.log_mag.values), flatten(&r.inst_freq)],
            },
            Representation::Complex(c) => TfsContainer {
                bins: c.bins() as u32,
                frames: c.frames() as u32,
                flags: FLAG_COMPLEX,
                channels: vec![c
                    .coefficients
                    .iter()
                    .flat_map(|z| [z.re as f32, z.im as f32])
                    .collect()],
            },
        }
    }

    /// Decode a container. The container carries no analysis metadata, so
    /// `params` and `sample_rate` come from the caller and the signal length
    /// is taken as `frames * hop`.
    pub fn from_container(c: &TfsContainer, params: TfParams, sample_rate: u32) -> Result<Self> {
        params.validate()?;
        let (bins, frames) = (c.bins as usize, c.frames as usize);
        if bins != params.bins() {
            return Err(bad(format!(
                "bins: container has {bins}, fft_size {} implies {}",
                params.fft_size,
                params.bins()
            )));
        }
        if frames == 0 {
            return Err(bad("frames: must be positive"));
        }
        let signal_len = frames * params.hop;
        let expect_channels = |n: usize| {
            if c.channels.len() != n {
                Err(bad(format!(
                    "channels: flags {:#x} need {n}, container has {}",
                    c.flags,
                    c.channels.len()
                )))
            } else {
                Ok(())
            }
        };
        let logmag = |ch: &[f32]| -> Result<LogMagSpectrogram> {
            let values = unflatten(ch, bins, frames);
            let floor = recover_floor(&values, &params);
            let l = LogMagSpectrogram {
                values: values.mapv(|v| v.max(floor)),
                floor,
                params,
                signal_len,
                sample_rate,
            };
            l.check()?;
            Ok(l)
        };
        match c.flags {
            FLAG_LOG_MAG => {
                expect_channels(1)?;
                Ok(Representation::LogMag(logmag(&c.channels[0])?))
            }
            f if f == FLAG_LOG_MAG | FLAG_IF => {
                expect_channels(2)?;
                let rep = IfSpectrogram {
                    log_mag: logmag(&c.channels[0])?,
                    inst_freq: unflatten(&c.channels[1], bins, frames),
                };
                rep.check()?;
                Ok(Representation::If(rep))
            }
            FLAG_COMPLEX => {
                expect_channels(1)?;
                let ch = &c.channels[0];
                let coefficients = Array2::from_shape_fn((bins, frames), |(b, n)| {
                    let i = 2 * (b * frames + n);
                    Complex64::new(ch[i] as f64, ch[i + 1] as f64)
                });
                Ok(Representation::Complex(ComplexSpectrogram::new(
                    coefficients,
                    params,
                    signal_len,
                    sample_rate,
                )?))
            }
            f => Err(bad(format!("flags: unsupported combination {f:#x}"))),
        }
    }

    /// Log-magnitude view of any representation.
    pub fn log_mag(&self) -> LogMagSpectrogram {
        match self {
            Representation::LogMag(l) => l.clone(),
            Representation::If(r) => r.log_mag.clone(),
            Representation::Complex(c) => crate::tf::log_magnitude(c),
        }
    }
}
