//! Synthetic test signals: bandpassed noise pops, octave-pair chirps and
//! decaying harmonic tones, plus Cartesian parameter grids over them.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};
use crate::seed::{derive_seed, rng};

pub const PEAK_LEVEL: f64 = 0.9;
pub const POP_BURST_SECONDS: f64 = 0.01;
pub const POP_Q: f64 = 5.0;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const VARIATIONS: usize = 5;

/// Chirp components fade out between these fractions of the sample rate.
const NYQUIST_TAPER: (f64, f64) = (0.40, 0.45);

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pops,
    Chirps,
    Tones,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Pops, Family::Chirps, Family::Tones];

    pub fn name(self) -> &'static str {
        match self {
            Family::Pops => "pops",
            Family::Chirps => "chirps",
            Family::Tones => "tones",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_duration() -> f64 {
    1.0
}

fn check_range(name: &'static str, v: f64, lo: f64, hi: f64) -> Result<()> {
    // a little slack so grid values computed in floating point stay inside
    let eps = 1e-9 * hi.abs().max(1.0);
    if !v.is_finite() || v < lo - eps || v > hi + eps {
        return Err(invalid(name, format!("{v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_duration(d: f64) -> Result<()> {
    if !(d.is_finite() && d > 0.0) {
        return Err(invalid("duration", format!("must be positive, got {d}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopSpec {
    pub rate: f64,
    /// Standard deviation of onset jitter in seconds.
    pub irregularity: f64,
    pub center_freq: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    pub seed: u64,
}

impl PopSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("rate", self.rate, 2.0, 16.0)?;
        check_range("irregularity", self.irregularity, 0.0, 0.4)?;
        check_range("center_freq", self.center_freq, 440.0, 880.0)?;
        check_duration(self.duration)
    }

    /// Onset sample indices in event order, as used by [`gen_pop`].
    pub fn onsets(&self, sample_rate: u32) -> Result<Vec<usize>> {
        self.validate()?;
        let mut r = rng(self.seed);
        Ok(draw_onsets(&mut r, self.rate, self.irregularity, self.duration, sample_rate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    pub rate: f64,
    pub irregularity: f64,
    pub sweep_octaves: i32,
    pub event_duration: f64,
    pub center_freq: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    pub seed: u64,
}

impl ChirpSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("rate", self.rate, 2.0, 16.0)?;
        check_range("irregularity", self.irregularity, 0.0, 0.4)?;
        if ![-3, -1, 1, 3].contains(&self.sweep_octaves) {
            return Err(invalid(
                "sweep_octaves",
                format!("must be one of -3, -1, 1, 3, got {}", self.sweep_octaves),
            ));
        }
        check_range("event_duration", self.event_duration, 0.02, 0.2)?;
        check_range("center_freq", self.center_freq, 440.0, 880.0)?;
        check_duration(self.duration)
    }

    pub fn onsets(&self, sample_rate: u32) -> Result<Vec<usize>> {
        self.validate()?;
        let mut r = rng(self.seed);
        Ok(draw_onsets(&mut r, self.rate, self.irregularity, self.duration, sample_rate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub midi_pitch: u8,
    pub num_harmonics: usize,
    /// Amplitude decay rate in 1/s.
    pub decay_rate: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    pub seed: u64,
}

pub const TONE_PITCHES: std::ops::RangeInclusive<u8> = 44..=70;
pub const DEFAULT_HARMONICS: usize = 8;
pub const DEFAULT_DECAY: f64 = 3.0;

impl ToneSpec {
    pub fn fundamental(&self) -> f64 {
        midi_to_hz(self.midi_pitch as f64)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !TONE_PITCHES.contains(&self.midi_pitch) {
            return Err(invalid(
                "midi_pitch",
                format!("{} outside [44, 70]", self.midi_pitch),
            ));
        }
        if self.num_harmonics == 0 {
            return Err(invalid("num_harmonics", "must be at least 1"));
        }
        let top = self.num_harmonics as f64 * self.fundamental();
        if top >= sample_rate as f64 / 2.0 {
            return Err(invalid(
                "num_harmonics",
                format!("harmonic {} at {top:.1} Hz is above Nyquist", self.num_harmonics),
            ));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate >= 0.0) {
            return Err(invalid("decay_rate", format!("must be >= 0, got {}", self.decay_rate)));
        }
        check_duration(self.duration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TextureSpec {
    Pops(PopSpec),
    Chirps(ChirpSpec),
    Tones(ToneSpec),
}

impl TextureSpec {
    pub fn family(&self) -> Family {
        match self {
            TextureSpec::Pops(_) => Family::Pops,
            TextureSpec::Chirps(_) => Family::Chirps,
            TextureSpec::Tones(_) => Family::Tones,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TextureSpec::Pops(s) => s.seed,
            TextureSpec::Chirps(s) => s.seed,
            TextureSpec::Tones(s) => s.seed,
        }
    }

    pub fn generate(&self, sample_rate: u32) -> Result<AudioBuffer> {
        match self {
            TextureSpec::Pops(s) => gen_pop(s, sample_rate),
            TextureSpec::Chirps(s) => gen_chirp(s, sample_rate),
            TextureSpec::Tones(s) => gen_tone(s, sample_rate),
        }
    }
}

fn clip_len(duration: f64, sample_rate: u32) -> usize {
    ((duration * sample_rate as f64).round() as usize).max(1)
}

fn draw_onsets<R: Rng>(r: &mut R, rate: f64, irregularity: f64, duration: f64, sr: u32) -> Vec<usize> {
    let count = (rate * duration + 1e-9).floor() as usize;
    let last = clip_len(duration, sr) - 1;
    let jitter = Normal::new(0.0, irregularity).expect("irregularity validated");
    (0..count)
        .map(|k| {
            let t = k as f64 / rate + jitter.sample(r);
            ((t.max(0.0) * sr as f64).round() as usize).min(last)
        })
        .collect()
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Second-order constant-skirt bandpass (RBJ cookbook, 0 dB peak gain).
struct Bandpass {
    b: [f64; 3],
    a: [f64; 2],
}

impl Bandpass {
    fn new(center: f64, q: f64, sr: u32) -> Self {
        let w = 2.0 * PI * center / sr as f64;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
}

/// White-noise bursts at jittered, evenly spaced onsets, run through a
/// bandpass at `center_freq`.
pub fn gen_pop(spec: &PopSpec, sample_rate: u32) -> Result<AudioBuffer> {
    spec.validate()?;
    let len = clip_len(spec.duration, sample_rate);
    let mut r = rng(spec.seed);
    let onsets = draw_onsets(&mut r, spec.rate, spec.irregularity, spec.duration, sample_rate);
    let burst = ((POP_BURST_SECONDS * sample_rate as f64).round() as usize).max(1);
    let mut x = vec![0.0; len];
    for &start in &onsets {
        for v in x.iter_mut().skip(start).take(burst) {
            *v += r.sample::<f64, _>(StandardNormal);
        }
    }
    Bandpass::new(spec.center_freq, POP_Q, sample_rate).run(&mut x);
    AudioBuffer::new(normalize(x), sample_rate)
}

fn nyquist_gate(f: f64, sr: f64) -> f64 {
    let (lo, hi) = (NYQUIST_TAPER.0 * sr, NYQUIST_TAPER.1 * sr);
    if f <= lo {
        1.0
    } else if f >= hi {
        0.0
    } else {
        0.5 + 0.5 * (PI * (f - lo) / (hi - lo)).cos()
    }
}

/// Each event is a pair of exponential sweeps starting at `center_freq` and
/// twice that, covering `sweep_octaves` over `event_duration` under a Hann
/// envelope.
pub fn gen_chirp(spec: &ChirpSpec, sample_rate: u32) -> Result<AudioBuffer> {
    spec.validate()?;
    let sr = sample_rate as f64;
    let len = clip_len(spec.duration, sample_rate);
    let mut r = rng(spec.seed);
    let onsets = draw_onsets(&mut r, spec.rate, spec.irregularity, spec.duration, sample_rate);
    let d = spec.event_duration;
    let s = spec.sweep_octaves as f64;
    let event_len = (d * sr).round() as usize;
    let mut x = vec![0.0; len];
    for &start in &onsets {
        for f0 in [spec.center_freq, 2.0 * spec.center_freq] {
            let phi0 = r.random_range(-PI..PI);
            // phase integral of f0 * 2^(s t / d)
            let k = 2.0 * PI * f0 * d / (s * std::f64::consts::LN_2);
            for (i, v) in x.iter_mut().skip(start).take(event_len).enumerate() {
                let t = i as f64 / sr;
                let ratio = 2f64.powf(s * t / d);
                let env = 0.5 - 0.5 * (2.0 * PI * t / d).cos();
                *v += env * nyquist_gate(f0 * ratio, sr) * (phi0 + k * (ratio - 1.0)).sin();
            }
        }
    }
    AudioBuffer::new(normalize(x), sample_rate)
}

/// Harmonics `h = 1..=num_harmonics` at amplitude `1/h` with random starting
/// phases under a shared exponential decay.
pub fn gen_tone(spec: &ToneSpec, sample_rate: u32) -> Result<AudioBuffer> {
    spec.validate(sample_rate)?;
    let sr = sample_rate as f64;
    let len = clip_len(spec.duration, sample_rate);
    let f0 = spec.fundamental();
    let mut r = rng(spec.seed);
    let phases: Vec<f64> = (0..spec.num_harmonics).map(|_| r.random_range(-PI..PI)).collect();
    let x = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let env = (-spec.decay_rate * t).exp();
            let sum: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, p)| {
                    let h = (h + 1) as f64;
                    (2.0 * PI * h * f0 * t + p).sin() / h
                })
                .sum();
            env * sum
        })
        .collect();
    AudioBuffer::new(normalize(x), sample_rate)
}

/// Grid reduction applied before generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Keep this many evenly spaced values on every parameter axis.
    /// Variations are not reduced.
    pub subsample: Option<usize>,
    /// Keep at most this many entries, evenly spaced through the grid.
    pub limit: Option<usize>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn pick<T: Copy>(axis: &[T], keep: Option<usize>) -> Vec<T> {
    match keep {
        Some(k) if k < axis.len() => {
            if k <= 1 {
                return axis[..1].to_vec();
            }
            (0..k)
                .map(|i| axis[(i * (axis.len() - 1) + (k - 1) / 2) / (k - 1)])
                .collect()
        }
        _ => axis.to_vec(),
    }
}

/// Entry seeds stay below 2^63 so the manifest can store them as TOML
/// integers.
fn entry_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64) >> 1
}

/// Enumerate the grid for `family` in nested axis order, with seeds derived
/// from `master_seed` and the entry's position in the full enumeration.
pub fn plan_corpus(family: Family, opts: &GridOptions, master_seed: u64) -> Result<Vec<TextureSpec>> {
    if opts.subsample == Some(0) {
        return Err(invalid("subsample", "must be at least 1"));
    }
    let k = opts.subsample;
    let centers = |n| {
        linspace(69.0, 81.0, n)
            .into_iter()
            .map(midi_to_hz)
            .map(|f: f64| f.clamp(440.0, 880.0))
            .collect::<Vec<_>>()
    };
    let mut specs = Vec::new();
    let mut push = |make: &dyn Fn(u64) -> TextureSpec| {
        for _ in 0..VARIATIONS {
            let index = specs.len();
            specs.push(make(entry_seed(master_seed, index)));
        }
    };
    match family {
        Family::Pops => {
            for rate in pick(&linspace(2.0, 16.0, 21), k) {
                for irregularity in pick(&linspace(0.04, 0.4, 21), k) {
                    for center_freq in pick(&centers(21), k) {
                        push(&|seed| {
                            TextureSpec::Pops(PopSpec {
                                rate,
                                irregularity,
                                center_freq,
                                duration: 1.0,
                                seed,
                            })
                        });
                    }
                }
            }
        }
        Family::Chirps => {
            for irregularity in pick(&linspace(0.04, 0.4, 5), k) {
                for rate in pick(&linspace(2.0, 16.0, 9), k) {
                    for sweep_octaves in pick(&[-3, -1, 1, 3], k) {
                        for event_duration in pick(&linspace(0.02, 0.2, 5), k) {
                            for center_freq in pick(&centers(9), k) {
                                push(&|seed| {
                                    TextureSpec::Chirps(ChirpSpec {
                                        rate,
                                        irregularity,
                                        sweep_octaves,
                                        event_duration,
                                        center_freq,
                                        duration: 1.0,
                                        seed,
                                    })
                                });
                            }
                        }
                    }
                }
            }
        }
        Family::Tones => {
            let pitches: Vec<u8> = TONE_PITCHES.collect();
            for midi_pitch in pick(&pitches, k) {
                push(&|seed| {
                    TextureSpec::Tones(ToneSpec {
                        midi_pitch,
                        num_harmonics: DEFAULT_HARMONICS,
                        decay_rate: DEFAULT_DECAY,
                        duration: 1.0,
                        seed,
                    })
                });
            }
        }
    }
    if let Some(n) = opts.limit {
        if n < specs.len() {
            let total = specs.len();
            specs = (0..n).map(|i| specs[i * total / n]).collect();
        }
    }
    Ok(specs)
}

/// A random point of the family's full grid, fully determined by `seed`.
pub fn random_spec(family: Family, seed: u64) -> TextureSpec {
    let mut r = rng(seed);
    let child = derive_seed(seed, 1) >> 1;
    let mut from = |axis: Vec<f64>| axis[r.random_range(0..axis.len())];
    match family {
        Family::Pops => TextureSpec::Pops(PopSpec {
            rate: from(linspace(2.0, 16.0, 21)),
            irregularity: from(linspace(0.04, 0.4, 21)),
            center_freq: midi_to_hz(from(linspace(69.0, 81.0, 21))).clamp(440.0, 880.0),
            duration: 1.0,
            seed: child,
        }),
        Family::Chirps => TextureSpec::Chirps(ChirpSpec {
            irregularity: from(linspace(0.04, 0.4, 5)),
            rate: from(linspace(2.0, 16.0, 9)),
            sweep_octaves: from(vec![-3.0, -1.0, 1.0, 3.0]) as i32,
            event_duration: from(linspace(0.02, 0.2, 5)),
            center_freq: midi_to_hz(from(linspace(69.0, 81.0, 9))).clamp(440.0, 880.0),
            duration: 1.0,
            seed: child,
        }),
        Family::Tones => TextureSpec::Tones(ToneSpec {
            midi_pitch: from(linspace(44.0, 70.0, 27)) as u8,
            num_harmonics: DEFAULT_HARMONICS,
            decay_rate: DEFAULT_DECAY,
            duration: 1.0,
            seed: child,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub spec: TextureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub family: Family,
    pub master_seed: u64,
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Manifest for a planned grid, without generating audio.
    pub fn plan(family: Family, opts: &GridOptions, master_seed: u64, sample_rate: u32) -> Result<Self> {
        let entries = plan_corpus(family, opts, master_seed)?
            .into_iter()
            .enumerate()
            .map(|(i, spec)| ManifestEntry {
                path: format!("{family}_{i:05}.wav"),
                error: None,
                spec,
            })
            .collect();
        Ok(Self {
            format_version: MANIFEST_VERSION,
            family,
            master_seed,
            sample_rate,
            entries,
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.error.is_some())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(invalid(
                "format_version",
                format!("expected {MANIFEST_VERSION}, got {}", m.format_version),
            ));
        }
        Ok(m)
    }
}

/// Generate every planned entry into `out_dir` as 16-bit WAV and write the
/// manifest next to them. Entries that fail keep their error message in the
/// manifest; the rest of the batch still runs.
pub fn gen_corpus(
    family: Family,
    opts: &GridOptions,
    master_seed: u64,
    sample_rate: u32,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = CorpusManifest::plan(family, opts, master_seed, sample_rate)?;
    manifest.entries.par_iter_mut().for_each(|e| {
        let path: PathBuf = out_dir.join(&e.path);
        if let Err(err) = e.spec.generate(sample_rate).and_then(|a| a.write_wav(&path)) {
            e.error = Some(err.to_string());
        }
    });
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    const SR: u32 = 16_000;

    /// Start of every active region preceded by at least `gap` samples below
    /// `rel` of the peak.
    fn detect_onsets(x: &[f64], rel: f64, gap: usize) -> Vec<usize> {
        let thr = rel * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut quiet = gap;
        let mut found = Vec::new();
        for (i, v) in x.iter().enumerate() {
            if v.abs() > thr {
                if quiet >= gap {
                    found.push(i);
                }
                quiet = 0;
            } else {
                quiet += 1;
            }
        }
        found
    }

    /// Frequency of the largest DFT magnitude on a 0.1 Hz grid in [lo, hi].
    fn peak_freq(x: &[f64], lo: f64, hi: f64) -> f64 {
        let mut best = (0.0, lo);
        let mut f = lo;
        while f <= hi {
            let w = 2.0 * PI * f / SR as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                re += v * (w * n as f64).cos();
                im -= v * (w * n as f64).sin();
            }
            let m = re * re + im * im;
            if m > best.0 {
                best = (m, f);
            }
            f += 0.1;
        }
        best.1
    }

    fn pop(rate: f64, irregularity: f64, center_freq: f64, seed: u64) -> PopSpec {
        PopSpec {
            rate,
            irregularity,
            center_freq,
            duration: 1.0,
            seed,
        }
    }

    #[test]
    fn pop_onsets_follow_the_rate() {
        let x = gen_pop(&pop(4.0, 0.0, 440.0, 3), SR).unwrap();
        let found = detect_onsets(x.samples(), 1e-3, 480);
        assert_eq!(found.len(), 4, "{found:?}");
        for (k, &i) in found.iter().enumerate() {
            let t = i as f64 / SR as f64;
            assert!((t - 0.25 * k as f64).abs() <= 1e-3, "onset {k} at {t}");
        }
    }

    #[test]
    fn event_count_holds_across_the_rate_grid_at_small_jitter() {
        for rate in linspace(2.0, 16.0, 21) {
            let spec = pop(rate, 0.002, 440.0, 11);
            let x = gen_pop(&spec, SR).unwrap();
            let found = detect_onsets(x.samples(), 1e-3, 160);
            assert_eq!(found.len(), (rate + 1e-9).floor() as usize, "rate {rate}");
            assert_eq!(spec.onsets(SR).unwrap().len(), found.len());
        }
    }

    #[test]
    fn pop_spectrum_peaks_at_center() {
        use crate::tf::{stft, TfParams, WindowKind};
        // long-term average spectrum over frames and seeds, parabolic peak
        let p = TfParams::preset(128, WindowKind::Hann).unwrap();
        let mut avg = vec![0.0; p.bins()];
        for seed in 0..8 {
            let x = gen_pop(&pop(16.0, 0.1, midi_to_hz(69.0), seed), SR).unwrap();
            let m = stft(&x, &p).unwrap().magnitudes();
            for (b, row) in m.rows().into_iter().enumerate() {
                avg[b] += row.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let k = (1..avg.len() - 1).max_by(|&a, &b| avg[a].total_cmp(&avg[b])).unwrap();
        let (l, c, r) = (avg[k - 1].ln(), avg[k].ln(), avg[k + 1].ln());
        let f = (k as f64 + 0.5 * (l - r) / (l - 2.0 * c + r)) * SR as f64 / 512.0;
        assert!((f - 440.0).abs() <= 0.03 * 440.0, "peak at {f}");
    }

    #[test]
    fn generation_is_deterministic_and_clip_free() {
        let specs = [
            TextureSpec::Pops(pop(16.0, 0.4, 880.0, 1)),
            TextureSpec::Chirps(ChirpSpec {
                rate: 16.0,
                irregularity: 0.4,
                sweep_octaves: 3,
                event_duration: 0.2,
                center_freq: 880.0,
                duration: 1.0,
                seed: 2,
            }),
            TextureSpec::Tones(ToneSpec {
                midi_pitch: 70,
                num_harmonics: 17,
                decay_rate: 0.0,
                duration: 1.0,
                seed: 3,
            }),
        ];
        for s in specs {
            let a = s.generate(SR).unwrap();
            assert_eq!(a, s.generate(SR).unwrap());
            assert_eq!(a.len(), 16_000);
            assert!(a.peak() <= 0.95);
        }
    }

    #[test]
    fn tone_fundamental_matches_midi() {
        let x = gen_tone(
            &ToneSpec {
                midi_pitch: 57,
                num_harmonics: 4,
                decay_rate: 1.0,
                duration: 1.0,
                seed: 9,
            },
            SR,
        )
        .unwrap();
        let f = peak_freq(x.samples(), 150.0, 300.0);
        assert!((f - 220.0).abs() <= 0.005 * 220.0, "fundamental at {f}");
    }

    #[test]
    fn tone_decay_rate() {
        let x = gen_tone(
            &ToneSpec {
                midi_pitch: 60,
                num_harmonics: 3,
                decay_rate: 3.0,
                duration: 1.0,
                seed: 4,
            },
            SR,
        )
        .unwrap();
        let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        let ratio = rms(&x.samples()[14_400..]) / rms(&x.samples()[..1600]);
        let expected = (-2.7f64).exp();
        assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio} vs {expected}");
    }

    #[test]
    fn single_harmonic_tone_is_a_sinusoid() {
        let spec = ToneSpec {
            midi_pitch: 69,
            num_harmonics: 1,
            decay_rate: 0.0,
            duration: 1.0,
            seed: 8,
        };
        let x = gen_tone(&spec, SR).unwrap();
        let mut r = rng(8);
        let p: f64 = r.random_range(-PI..PI);
        for (n, v) in x.samples().iter().enumerate() {
            let want = 0.9 * (2.0 * PI * 440.0 * n as f64 / SR as f64 + p).sin();
            assert!((v - want).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(gen_pop(&pop(1.0, 0.1, 440.0, 0), SR).is_err());
        assert!(gen_pop(&pop(4.0, 0.5, 440.0, 0), SR).is_err());
        assert!(gen_pop(&pop(4.0, 0.1, 300.0, 0), SR).is_err());
        let mut c = ChirpSpec {
            rate: 4.0,
            irregularity: 0.1,
            sweep_octaves: 2,
            event_duration: 0.1,
            center_freq: 440.0,
            duration: 1.0,
            seed: 0,
        };
        let err = gen_chirp(&c, SR).unwrap_err();
        assert!(err.to_string().contains("sweep_octaves"));
        c.sweep_octaves = 1;
        c.event_duration = 0.5;
        assert!(gen_chirp(&c, SR).is_err());
        let t = ToneSpec {
            midi_pitch: 70,
            num_harmonics: 18,
            decay_rate: 0.0,
            duration: 1.0,
            seed: 0,
        };
        let err = gen_tone(&t, SR).unwrap_err();
        assert!(err.to_string().contains("Nyquist"));
        assert!(gen_tone(&ToneSpec { midi_pitch: 43, num_harmonics: 1, ..t }, SR).is_err());
    }

    /// Lowest local spectral peak above `rel` of the frame maximum, in Hz.
    fn lowest_ridge(frame: &[f64], rel: f64) -> Option<f64> {
        let m = frame.iter().cloned().fold(0.0, f64::max);
        (1..frame.len() - 1)
            .find(|&b| frame[b] >= rel * m && frame[b] >= frame[b - 1] && frame[b] >= frame[b + 1])
            .map(|b| b as f64 * SR as f64 / 512.0)
    }

    fn ridge_track(sweep: i32) -> Vec<(f64, f64)> {
        use crate::tf::{stft, TfParams, WindowKind};
        let spec = ChirpSpec {
            rate: 2.0,
            irregularity: 0.0,
            sweep_octaves: sweep,
            event_duration: 0.2,
            center_freq: 440.0,
            duration: 1.0,
            seed: 6,
        };
        let x = gen_chirp(&spec, SR).unwrap();
        let p = TfParams::preset(64, WindowKind::Hann).unwrap();
        let mags = stft(&x, &p).unwrap().magnitudes();
        // central 60% of the first event, away from the envelope edges
        (0..mags.ncols())
            .filter_map(|n| {
                let t = n as f64 * 64.0 / SR as f64;
                if !(0.04..=0.16).contains(&t) {
                    return None;
                }
                let col: Vec<f64> = mags.column(n).to_vec();
                lowest_ridge(&col, 0.3).map(|f| (t, f))
            })
            .collect()
    }

    #[test]
    fn rising_chirp_ridge_tracks_an_octave() {
        let track = ridge_track(1);
        assert!(track.len() > 20);
        for &(t, f) in &track {
            let want = 440.0 * 2f64.powf(t / 0.2);
            assert!((f / want - 1.0).abs() < 0.06, "t={t} ridge {f} want {want}");
        }
        for w in track.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-9);
        }
        // 2^0.6 ~ 1.52 across the central 60% of the event
        assert!(track.last().unwrap().1 > 1.4 * track[0].1);
    }

    #[test]
    fn falling_chirp_ridge_mirrors() {
        let track = ridge_track(-1);
        for &(t, f) in &track {
            let want = 440.0 * 2f64.powf(-t / 0.2);
            assert!((f / want - 1.0).abs() < 0.06, "t={t} ridge {f} want {want}");
        }
        for w in track.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9);
        }
    }

    #[test]
    fn chirp_event_count() {
        let spec = ChirpSpec {
            rate: 2.0,
            irregularity: 0.0,
            sweep_octaves: 3,
            event_duration: 0.1,
            center_freq: 600.0,
            duration: 1.0,
            seed: 1,
        };
        let x = gen_chirp(&spec, SR).unwrap();
        assert_eq!(detect_onsets(x.samples(), 1e-3, 800).len(), 2);
    }

    #[test]
    fn full_grid_sizes() {
        let o = GridOptions::default();
        assert_eq!(plan_corpus(Family::Pops, &o, 0).unwrap().len(), 46_305);
        assert_eq!(plan_corpus(Family::Chirps, &o, 0).unwrap().len(), 40_500);
        assert_eq!(plan_corpus(Family::Tones, &o, 0).unwrap().len(), 135);
        let sub = GridOptions {
            subsample: Some(2),
            limit: None,
        };
        assert_eq!(plan_corpus(Family::Pops, &sub, 0).unwrap().len(), 40);
        assert_eq!(plan_corpus(Family::Chirps, &sub, 0).unwrap().len(), 160);
    }

    #[test]
    fn subsampled_axes_keep_their_endpoints() {
        assert_eq!(pick(&[1, 2, 3, 4, 5], Some(2)), vec![1, 5]);
        assert_eq!(pick(&[1, 2, 3, 4, 5], Some(3)), vec![1, 3, 5]);
        assert_eq!(pick(&[1, 2, 3], Some(7)), vec![1, 2, 3]);
        assert_eq!(pick(&[1, 2, 3], Some(1)), vec![1]);
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GridOptions {
            subsample: Some(2),
            limit: Some(12),
        };
        let m = gen_corpus(Family::Chirps, &opts, 77, SR, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 12);
        assert_eq!(m.failures().count(), 0);
        let back = CorpusManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        let mut paths: Vec<_> = m.entries.iter().map(|e| &e.path).collect();
        paths.dedup();
        assert_eq!(paths.len(), 12);
        let a = AudioBuffer::read_wav(dir.path().join(&m.entries[3].path)).unwrap();
        assert_eq!(a.len(), 16_000);
    }

    #[test]
    fn failed_entries_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GridOptions {
            subsample: Some(1),
            limit: None,
        };
        let m = CorpusManifest::plan(Family::Tones, &opts, 1, SR).unwrap();
        // a directory squatting on an output path makes that write fail
        std::fs::create_dir(dir.path().join(&m.entries[0].path)).unwrap();
        let got = gen_corpus(Family::Tones, &opts, 1, SR, dir.path()).unwrap();
        assert_eq!(got.failures().count(), 1);
        assert!(got.entries[1].error.is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn random_specs_are_valid(family in 0usize..3, seed in any::<u64>()) {
            let spec = random_spec(Family::ALL[family], seed);
            let a = spec.generate(SR).unwrap();
            prop_assert!(a.peak() <= 0.95);
            prop_assert_eq!(spec, random_spec(Family::ALL[family], seed));
        }
    }
}
