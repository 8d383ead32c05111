use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tfphase_core::griffinlim::DEFAULT_ITERATIONS;
use tfphase_core::harness::{run_robustness, ExperimentConfig, ExperimentReport};
use tfphase_core::metrics::snr_db_phase_aligned;
use tfphase_core::pghi::DEFAULT_TOL;
use tfphase_core::repr::{random_phase_invert, zero_phase_invert};
use tfphase_core::textures::{gen_corpus, CorpusManifest, Family, GridOptions, TextureSpec, MANIFEST_FILE};
use tfphase_core::tfs::{Representation, TfsContainer};
use tfphase_core::*;

#[derive(Parser, Debug)]
#[command(name = "tfphase", version, about = "Spectrogram analysis, phase reconstruction and texture benchmarks")]
struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Hop size in samples (window length is 512).
    #[arg(long, global = true, default_value_t = 128, value_parser = parse_hop)]
    hop: usize,
    #[arg(long, global = true, value_enum, default_value_t = WindowArg::Gauss)]
    window: WindowArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WindowArg {
    Hann,
    Gauss,
}

impl From<WindowArg> for WindowKind {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Hann => WindowKind::Hann,
            WindowArg::Gauss => WindowKind::TruncatedGaussian,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// WAV -> TFS1 spectrogram container.
    Analyze {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = RepArg::Mag)]
        rep: RepArg,
    },
    /// TFS1 spectrogram container -> WAV.
    Invert(InvertArgs),
    /// Generate one texture from a spec file, or a grid corpus for a family.
    Gen(GenArgs),
    /// Score reconstructions.
    #[command(subcommand)]
    Metric(MetricCommand),
    /// Run a robustness experiment from a config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        stitch: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RepArg {
    Mag,
    If,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum PipelineArg {
    Pghi,
    If,
    Gl,
    Zerophase,
    Randomphase,
    /// Exact inverse of a complex container.
    Istft,
}

#[derive(Args, Debug)]
struct InvertArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = PipelineArg::Pghi)]
    pipeline: PipelineArg,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Griffin-Lim iterations.
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Griffin-Lim iterations after IF integration.
    #[arg(long, default_value_t = 0)]
    refine: usize,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(value_enum, required_unless_present = "spec", conflicts_with = "spec")]
    family: Option<FamilyArg>,
    /// TOML texture spec; writes a single WAV to `--out`.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for a corpus, or WAV path with `--spec`.
    #[arg(long)]
    out: PathBuf,
    /// Keep every K-th value along each grid axis (endpoints included).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    grid_subsample: Option<u64>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Pops,
    Chirps,
    Tones,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Pops => Family::Pops,
            FamilyArg::Chirps => Family::Chirps,
            FamilyArg::Tones => Family::Tones,
        }
    }
}

#[derive(Subcommand, Debug)]
enum MetricCommand {
    /// Spectral convergence.
    Sc { reference: PathBuf, estimate: PathBuf },
    /// Log-spectral distance in dB.
    Lsd { reference: PathBuf, estimate: PathBuf },
    /// Waveform SNR in dB.
    Snr {
        reference: PathBuf,
        estimate: PathBuf,
        /// Search for the best integer delay first.
        #[arg(long)]
        align: bool,
    },
    /// SNR after optimal delay and global phase alignment.
    SnrAligned { reference: PathBuf, estimate: PathBuf },
    /// Frechet distance between log-mel statistics of two WAV directories.
    Fad { reference: PathBuf, estimate: PathBuf },
}

fn parse_hop(s: &str) -> std::result::Result<usize, String> {
    match s {
        "64" => Ok(64),
        "128" => Ok(128),
        _ => Err(format!("hop must be 64 or 128, got {s}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn params(cli: &Cli) -> Result<TfParams> {
    TfParams::preset(cli.hop, cli.window.into())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze { input, output, rep } => {
            let audio = AudioBuffer::read_wav(input)?;
            let spec = stft(&audio, &params(&cli)?)?;
            let rep = match rep {
                RepArg::Mag => Representation::LogMag(log_magnitude(&spec)),
                RepArg::If => Representation::If(compute_if(&spec)),
                RepArg::Complex => Representation::Complex(spec),
            };
            let c = rep.to_container();
            c.save(output)?;
            println!("{}: {} bins x {} frames", output.display(), c.bins, c.frames);
        }
        Command::Invert(args) => {
            let c = TfsContainer::load(&args.input)?;
            let rep = Representation::from_container(&c, params(&cli)?, args.sample_rate)?;
            let out = invert(&rep, args, cli.seed)?;
            out.write_wav_f32(&args.output)?;
            println!("{}: {} samples", args.output.display(), out.len());
        }
        Command::Gen(args) => gen(args, cli.seed)?,
        Command::Metric(m) => metric(m, &params(&cli)?)?,
        Command::Bench { config, output, stitch } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(o) = output {
                cfg.output = Some(o.clone());
            }
            cfg.stitch |= *stitch;
            print_report(&run_robustness(&cfg)?);
        }
    }
    Ok(())
}

fn invert(rep: &Representation, args: &InvertArgs, seed: u64) -> Result<AudioBuffer> {
    let lm = rep.log_mag();
    match (args.pipeline, rep) {
        (PipelineArg::Pghi, _) => pghi_invert(&lm, args.tol, seed),
        (PipelineArg::If, Representation::If(r)) => invert_if(r, args.refine),
        (PipelineArg::If, Representation::Complex(c)) => invert_if(&compute_if(c), args.refine),
        (PipelineArg::If, Representation::LogMag(_)) => Err(Error::Format {
            what: "container",
            reason: "the if pipeline needs an IF or complex container".into(),
        }),
        (PipelineArg::Gl, _) => griffin_lim(
            &lm,
            &GlConfig {
                iterations: args.iterations,
                init_phase: None,
            },
        )
        .map(|o| o.audio),
        (PipelineArg::Zerophase, _) => zero_phase_invert(&lm),
        (PipelineArg::Randomphase, _) => random_phase_invert(&lm, seed),
        (PipelineArg::Istft, Representation::Complex(c)) => istft(c),
        (PipelineArg::Istft, _) => Err(Error::Format {
            what: "container",
            reason: "the istft pipeline needs a complex container".into(),
        }),
    }
}

fn gen(args: &GenArgs, seed: u64) -> Result<()> {
    if let Some(path) = &args.spec {
        let spec: TextureSpec = toml::from_str(&std::fs::read_to_string(path)?)?;
        spec.generate(args.sample_rate)?.write_wav(&args.out)?;
        println!("{}: {} texture", args.out.display(), spec.family());
        return Ok(());
    }
    let family: Family = args.family.expect("clap requires family without --spec").into();
    let opts = GridOptions {
        subsample: args.grid_subsample.map(|k| k as usize),
        limit: args.limit,
    };
    let m = gen_corpus(family, &opts, seed, args.sample_rate, &args.out)?;
    let failed = m.failures().count();
    for f in m.failures() {
        eprintln!("failed {}: {}", f.path, f.error.as_deref().unwrap_or(""));
    }
    println!(
        "{}: {} {family} files, {failed} failed",
        args.out.join(MANIFEST_FILE).display(),
        m.entries.len() - failed
    );
    Ok(())
}

fn metric(m: &MetricCommand, params: &TfParams) -> Result<()> {
    let pair = |a: &Path, b: &Path| -> Result<(AudioBuffer, AudioBuffer)> {
        Ok((AudioBuffer::read_wav(a)?, AudioBuffer::read_wav(b)?))
    };
    let value = match m {
        MetricCommand::Sc { reference, estimate } => {
            let (r, e) = pair(reference, estimate)?;
            spectral_convergence(&r, &e, params)?
        }
        MetricCommand::Lsd { reference, estimate } => {
            let (r, e) = pair(reference, estimate)?;
            log_spectral_distance(&r, &e, params)?
        }
        MetricCommand::Snr { reference, estimate, align } => {
            let (r, e) = pair(reference, estimate)?;
            snr_db(&r, &e, *align)?
        }
        MetricCommand::SnrAligned { reference, estimate } => {
            let (r, e) = pair(reference, estimate)?;
            snr_db_phase_aligned(&r, &e)?
        }
        MetricCommand::Fad { reference, estimate } => {
            let a = embed_logmel_stats(&read_dir_wavs(reference)?)?;
            let b = embed_logmel_stats(&read_dir_wavs(estimate)?)?;
            frechet_distance(&a, &b)?
        }
    };
    println!("{value}");
    Ok(())
}

/// All `.wav` files of a directory in name order; a corpus manifest, if
/// present, only lists successfully generated files.
fn read_dir_wavs(dir: &Path) -> Result<Vec<AudioBuffer>> {
    let manifest = dir.join(MANIFEST_FILE);
    let mut paths: Vec<PathBuf> = if manifest.exists() {
        let m = CorpusManifest::load(&manifest)?;
        m.entries.iter().filter(|e| e.error.is_none()).map(|e| dir.join(&e.path)).collect()
    } else {
        std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect()
    };
    paths.sort();
    paths.iter().map(AudioBuffer::read_wav).collect()
}

fn print_report(r: &ExperimentReport) {
    println!("family  pipeline    hop  sigma    SC      LSD     SNR     FD");
    for c in &r.cells {
        match (&c.metrics, &c.error) {
            (Some(m), _) => println!(
                "{:<7} {:<10} {:>4} {:>6.2} {:>7.4} {:>7.3} {:>7.2} {}",
                c.family.name(),
                c.pipeline.name(),
                c.hop,
                c.sigma,
                m.sc_mean,
                m.lsd_mean,
                m.snr_mean,
                m.frechet.map_or("-".to_string(), |f| format!("{f:.3}"))
            ),
            (None, e) => println!(
                "{:<7} {:<10} {:>4} {:>6.2} error: {}",
                c.family.name(),
                c.pipeline.name(),
                c.hop,
                c.sigma,
                e.as_deref().unwrap_or("unknown")
            ),
        }
    }
    if let Some(o) = &r.config.output {
        println!("report: {}", o.join(tfphase_core::harness::REPORT_FILE).display());
    }
}
