//! Time-frequency analysis and phase reconstruction for audio.
//!
//! The crate compares two spectrogram representations of audio:
//!
//! * a two-channel log-magnitude + instantaneous-frequency spectrogram,
//!   inverted by integrating the IF channel along time ([`repr`]);
//! * a single-channel log-magnitude of a Gaussian-window STFT, inverted by
//!   phase gradient heap integration ([`pghi`]).
//!
//! Griffin-Lim ([`griffinlim`]) serves both as a baseline and as a
//! refinement stage. [`textures`] generates the synthetic pops, chirps and
//! harmonic tones used for comparisons, [`metrics`] scores reconstructions
//! and [`harness`] runs the robustness experiments end to end.

pub mod audio;
pub mod error;
pub mod griffinlim;
pub mod harness;
pub mod metrics;
pub mod pghi;
pub mod repr;
pub mod seed;
pub mod textures;
pub mod tf;
pub mod tfs;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use griffinlim::{griffin_lim, GlConfig, GlOutput};
pub use metrics::{
    embed_logmel_stats, frechet_distance, log_spectral_distance, snr_db, spectral_convergence,
    EmbeddingStats, MetricReport,
};
pub use pghi::{heap_integrate, pghi_invert, phase_gradients, Integration, PhaseGradients};
pub use repr::{
    compute_if, inject_noise, invert_if, IfSpectrogram, LogMagSpectrogram, NoiseChannel,
};
pub use tf::{istft, log_magnitude, make_window, stft, ComplexSpectrogram, TfParams, Window, WindowKind};

pub use ndarray::Array2;
pub use num_complex::Complex64;
