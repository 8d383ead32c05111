//! Fixtures shared by the criterion benchmarks in `benches/`.

use tfphase_core::textures::{random_spec, Family};
use tfphase_core::{log_magnitude, stft, AudioBuffer, LogMagSpectrogram, TfParams, WindowKind};

pub const SAMPLE_RATE: u32 = 16_000;

/// A seeded 1 s texture clip.
pub fn clip(family: Family, seed: u64) -> AudioBuffer {
    random_spec(family, seed).generate(SAMPLE_RATE).expect("random specs are valid")
}

/// Gaussian-window log-magnitude of a seeded clip, ready for PGHI or Griffin-Lim.
pub fn gauss_logmag(family: Family, seed: u64, hop: usize) -> LogMagSpectrogram {
    let p = TfParams::preset(hop, WindowKind::TruncatedGaussian).expect("hop is 64 or 128");
    log_magnitude(&stft(&clip(family, seed), &p).expect("valid clip"))
}
