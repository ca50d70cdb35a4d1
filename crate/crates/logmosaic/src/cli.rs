//! The `logmosaic` command line.
//!
//! Exit status: 0 on success, 1 when fewer than `--min-ok` of the frames
//! registered, 2 on usage or input errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use logmosaic_core::affine::AffineMotion;
use logmosaic_core::image::{Raster, RegionMask};
use logmosaic_core::kourogi::KourogiConfig;
use logmosaic_core::matching::{Neighborhood, SearchConfig, TemplateSpec};
use logmosaic_core::mosaic::{build_mosaic, CompositePolicy};
use logmosaic_core::registration::{InitMode, LandmarkLayout, RegistrationConfig};
use logmosaic_core::synth::{generate_sequence, Illumination, MaskShape, SynthSpec, Texture};

use crate::bench::{baseline_config, bench_pair, write_csv, BenchRow};
use crate::io;
use crate::report::{Report, RunConfig};
use crate::runtime::RayonRuntime;
use crate::synth_export::{export_sequence, read_truth};

#[derive(Debug, Parser)]
#[command(
    name = "logmosaic",
    version,
    about = "Mosaicking of image sequences by landmark registration"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a frame sequence and composite it into one mosaic.
    Mosaic(MosaicArgs),
    /// Compare optical-flow and landmark registration on frame pairs.
    Bench(BenchArgs),
    /// Write a synthetic sequence with ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
struct FrameSource {
    /// Frames to read, as a glob; ordered by file name.
    #[arg(long, value_name = "GLOB")]
    frames: Option<String>,
    /// Text file listing frames in order, one per line.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Zero,
    Previous,
    Kourogi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CompositeArg {
    Last,
    First,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NeighborhoodArg {
    Cross5,
    Square9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Grid,
    Jittered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Png,
    Pgm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextureArg {
    SmoothedNoise,
    CheckerBlurred,
    BlobField,
}

fn defaults() -> RegistrationConfig {
    RegistrationConfig::default()
}

#[derive(Debug, Clone, Args)]
struct RegistrationArgs {
    /// Number of landmarks.
    #[arg(long, default_value_t = defaults().landmarks)]
    landmarks: usize,
    /// Minimum correlation score for the first filter stage.
    #[arg(long, default_value_t = defaults().c_min, allow_negative_numbers = true)]
    cmin: f64,
    /// Fraction of landmarks each filter stage keeps at least.
    #[arg(long, default_value_t = defaults().a_min)]
    amin: f64,
    /// Maximum residual in pixels for the second filter stage.
    #[arg(long, default_value_t = defaults().e_max)]
    emax: f64,
    /// Initial search step, a power of two.
    #[arg(long, default_value_t = defaults().search.w_init)]
    winit: u32,
    /// Template half-extent h; templates are (2h+1) pixels square.
    #[arg(long, default_value_t = defaults().template.half_extent())]
    template: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Kourogi)]
    init: InitArg,
    /// Iteration cap of the optical-flow initializer.
    #[arg(long, default_value_t = defaults().kourogi.max_iters)]
    kourogi_iters: usize,
    /// Gray-level threshold of the optical-flow acceptance test.
    #[arg(long = "kourogi-T", default_value_t = defaults().kourogi.threshold)]
    kourogi_t: f64,
    #[arg(long, value_enum, default_value_t = NeighborhoodArg::Cross5)]
    neighborhood: NeighborhoodArg,
    #[arg(long, value_enum, default_value_t = LayoutArg::Grid)]
    layout: LayoutArg,
    /// Seed for jittered landmark layouts.
    #[arg(long, default_value_t = defaults().seed)]
    seed: u64,
    /// Worker threads; 0 uses all available cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl RegistrationArgs {
    fn config(&self) -> Result<RegistrationConfig> {
        let c = RegistrationConfig {
            landmarks: self.landmarks,
            c_min: self.cmin,
            a_min: self.amin,
            e_max: self.emax,
            init_mode: match self.init {
                InitArg::Zero => InitMode::Zero,
                InitArg::Previous => InitMode::Previous,
                InitArg::Kourogi => InitMode::Kourogi,
            },
            template: TemplateSpec::new(self.template)
                .map_err(|_| anyhow!("--template must be at least 1"))?,
            search: SearchConfig {
                w_init: self.winit,
                neighborhood: match self.neighborhood {
                    NeighborhoodArg::Cross5 => Neighborhood::Cross5,
                    NeighborhoodArg::Square9 => Neighborhood::Square9,
                },
                ..SearchConfig::default()
            },
            layout: match self.layout {
                LayoutArg::Grid => LandmarkLayout::Grid,
                LayoutArg::Jittered => LandmarkLayout::GridJittered,
            },
            seed: self.seed,
            kourogi: KourogiConfig {
                max_iters: self.kourogi_iters,
                threshold: self.kourogi_t,
                ..KourogiConfig::default()
            },
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct MosaicArgs {
    #[command(flatten)]
    source: FrameSource,
    /// Mask image shared by all frames; samples above zero are valid.
    #[arg(long, value_name = "PATH")]
    mask: Option<PathBuf>,
    /// Output directory for the mosaic, coverage mask and report.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Report path (default: <out>/report.json).
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CompositeArg::Last)]
    composite: CompositeArg,
    /// Image format of the mosaic.
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    format: FormatArg,
    /// Fraction of frames that must register for exit status 0.
    #[arg(long, default_value_t = 0.5)]
    min_ok: f64,
    /// Report zero stage timings so reruns produce identical reports.
    #[arg(long)]
    no_timings: bool,
    #[command(flatten)]
    registration: RegistrationArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Frames to benchmark pairwise; a synthetic pair is used if absent.
    #[arg(long, value_name = "GLOB")]
    frames: Option<String>,
    /// Ground-truth sidecar giving the motion of each frame.
    #[arg(long, value_name = "PATH", requires = "frames")]
    truth: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "frames")]
    mask: Option<PathBuf>,
    /// CSV output path (default: standard output).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Iteration cap of the optical-flow baseline.
    #[arg(long, default_value_t = 30)]
    baseline_iters: usize,
    #[command(flatten)]
    synth: SynthParams,
    #[command(flatten)]
    registration: RegistrationArgs,
}

#[derive(Debug, Clone, Args)]
struct SynthParams {
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 120)]
    height: usize,
    /// Per-frame motion: "u,v" or "a1,a2,a3,a4,a5,a6".
    #[arg(long, default_value = "3,1", allow_hyphen_values = true)]
    motion: String,
    #[arg(long, value_enum, default_value_t = TextureArg::SmoothedNoise)]
    texture: TextureArg,
    /// Box filter width of the texture.
    #[arg(long, default_value_t = 5)]
    smoothing: usize,
    #[arg(long = "synth-seed", default_value_t = 0)]
    synth_seed: u64,
    /// Gain applied to every frame after the first.
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    /// Offset added to every frame after the first.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset: f64,
    /// Linear ramp amplitude as a fraction of the frame mean.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ramp: f64,
    /// Ramp direction in radians; 0 runs left to right.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ramp_angle: f64,
    /// Circular mask radius in pixels (default: full frame).
    #[arg(long)]
    circle: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[command(flatten)]
    params: SynthParams,
}

impl SynthParams {
    fn spec(&self, frame_count: usize) -> Result<SynthSpec> {
        ensure!(
            self.width >= 8 && self.height >= 8,
            "frames must be at least 8x8"
        );
        ensure!(
            self.width.saturating_mul(self.height) <= 1 << 26,
            "frames larger than 64 Mpixel are not supported"
        );
        ensure!(frame_count >= 1, "--count must be at least 1");
        ensure!(
            self.gain > 0.0 && self.gain.is_finite(),
            "--gain must be positive"
        );
        ensure!(
            self.offset.is_finite() && self.ramp.is_finite() && self.ramp_angle.is_finite(),
            "illumination parameters must be finite"
        );
        let step_motion = parse_motion(&self.motion)?;
        ensure!(
            step_motion.is_invertible(),
            "--motion {} is not invertible",
            self.motion
        );
        // Keep the rendered world, which spans every frame, bounded.
        let (w, h) = (self.width as f64, self.height as f64);
        let mut chained = AffineMotion::ZERO;
        for _ in 1..frame_count {
            chained = AffineMotion::compose(&chained, &step_motion);
            let far = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
                .iter()
                .map(|&(x, y)| {
                    let (px, py) = chained.map_point(x, y);
                    (px - x).abs().max((py - y).abs())
                })
                .fold(0.0, f64::max);
            ensure!(
                far.is_finite() && far < 16.0 * w.max(h),
                "--motion moves frames too far for --count {frame_count}"
            );
        }
        let mask = match self.circle {
            Some(r) if r > 0.0 && r.is_finite() => MaskShape::Circle(r),
            Some(r) => bail!("--circle radius {r} must be positive"),
            None => MaskShape::Full,
        };
        Ok(SynthSpec {
            width: self.width,
            height: self.height,
            texture: match self.texture {
                TextureArg::SmoothedNoise => Texture::SmoothedNoise,
                TextureArg::CheckerBlurred => Texture::CheckerBlurred,
                TextureArg::BlobField => Texture::BlobField,
            },
            smoothing: self.smoothing.max(1),
            seed: self.synth_seed,
            step_motion,
            illumination: Illumination {
                gain: self.gain,
                offset: self.offset,
                ramp: self.ramp,
                ramp_angle: self.ramp_angle,
            },
            frame_count,
            mask,
        })
    }
}

fn parse_motion(s: &str) -> Result<AffineMotion> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad motion {s:?}"))?;
    let motion = match values[..] {
        [u, v] => AffineMotion::new([0.0, 0.0, u, 0.0, 0.0, v]),
        [a1, a2, a3, a4, a5, a6] => AffineMotion::new([a1, a2, a3, a4, a5, a6]),
        _ => bail!("motion {s:?} needs 2 or 6 comma-separated numbers"),
    };
    motion.map_err(|_| anyhow!("motion {s:?} has non-finite values"))
}

/// Frame paths from a glob, sorted by file name.
fn glob_frames(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = glob::glob(pattern)
        .with_context(|| format!("bad --frames pattern {pattern:?}"))?
        .filter_map(|entry| entry.ok())
        .filter(|p| p.is_file())
        .collect::<Vec<_>>();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    ensure!(!paths.is_empty(), "no frames matched {pattern:?}");
    Ok(paths)
}

/// Frame paths listed in a manifest. Blank lines and `#` comments are
/// ignored; relative paths are taken from the manifest's directory.
fn manifest_frames(manifest: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(manifest)
        .with_context(|| format!("cannot read manifest {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let paths: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    ensure!(
        !paths.is_empty(),
        "manifest {} lists no frames",
        manifest.display()
    );
    Ok(paths)
}

fn load_frames(paths: &[PathBuf]) -> Result<Vec<Raster>> {
    paths
        .iter()
        .map(|p| io::read_frame(p).map_err(Into::into))
        .collect()
}

fn load_mask(path: Option<&Path>, width: usize, height: usize) -> Result<RegionMask> {
    match path {
        Some(p) => {
            let mask = io::read_mask(p)?;
            ensure!(
                (mask.width(), mask.height()) == (width, height),
                "mask {} is {}x{}, frames are {width}x{height}",
                p.display(),
                mask.width(),
                mask.height()
            );
            Ok(mask)
        }
        None => Ok(RegionMask::full(width, height)?),
    }
}

fn check_same_size(frames: &[Raster], paths: &[PathBuf]) -> Result<(usize, usize)> {
    let (w, h) = (frames[0].width(), frames[0].height());
    for (f, p) in frames.iter().zip(paths) {
        ensure!(
            (f.width(), f.height()) == (w, h),
            "{} is {}x{}, expected {w}x{h}",
            p.display(),
            f.width(),
            f.height()
        );
    }
    Ok((w, h))
}

fn run_mosaic(args: MosaicArgs) -> Result<ExitCode> {
    let config = args.registration.config()?;
    ensure!(
        (0.0..=1.0).contains(&args.min_ok),
        "--min-ok must lie in [0, 1]"
    );
    let paths = match (&args.source.frames, &args.source.manifest) {
        (Some(pattern), _) => glob_frames(pattern)?,
        (None, Some(manifest)) => manifest_frames(manifest)?,
        (None, None) => unreachable!("clap requires a frame source"),
    };
    let images = load_frames(&paths)?;
    let (w, h) = check_same_size(&images, &paths)?;
    let mask = load_mask(args.mask.as_deref(), w, h)?;
    log::info!("{} frames of {w}x{h}", images.len());

    let runtime = RayonRuntime::new(args.registration.threads, !args.no_timings)?;
    let policy = match args.composite {
        CompositeArg::Last => CompositePolicy::LastWins,
        CompositeArg::First => CompositePolicy::FirstWins,
        CompositeArg::Mean => CompositePolicy::Mean,
    };
    let frames: Vec<(Raster, RegionMask)> =
        images.into_iter().map(|img| (img, mask.clone())).collect();
    let mosaic = build_mosaic(&frames, &config, policy, &runtime)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let ext = match args.format {
        FormatArg::Png => "png",
        FormatArg::Pgm => "pgm",
    };
    let image = mosaic
        .canvas
        .to_raster(0.0)
        .ok_or_else(|| anyhow!("mosaic is empty"))?;
    io::write_image(&args.out.join(format!("mosaic.{ext}")), &image)?;
    if let Some(coverage) = mosaic.canvas.coverage() {
        io::write_mask(&args.out.join("coverage.pgm"), &coverage)?;
    }

    let run = RunConfig {
        registration: config,
        composite: policy,
        inputs: paths.iter().map(|p| p.display().to_string()).collect(),
        mask: args.mask.as_ref().map(|p| p.display().to_string()),
        min_ok: args.min_ok,
        timings: !args.no_timings,
    };
    let report = Report::new(run, &mosaic);
    let report_path = args.report.unwrap_or_else(|| args.out.join("report.json"));
    fs::write(&report_path, report.to_json())
        .with_context(|| format!("cannot write {}", report_path.display()))?;

    let (ok, total) = (mosaic.ok_count(), mosaic.frames.len());
    eprintln!(
        "{ok}/{total} frames registered; mosaic {}x{}",
        mosaic.canvas.width(),
        mosaic.canvas.height()
    );
    if (ok as f64) < args.min_ok * total as f64 {
        eprintln!(
            "fewer than {:.0}% of frames registered",
            100.0 * args.min_ok
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_bench(args: BenchArgs) -> Result<ExitCode> {
    let config = args.registration.config()?;
    let baseline = baseline_config(args.registration.kourogi_t, args.baseline_iters);
    baseline
        .validate()
        .map_err(|e| anyhow!("optical-flow baseline: {e}"))?;
    let runtime = RayonRuntime::new(args.registration.threads, false)?;

    // Frames, shared mask and first-to-frame motions where known.
    let (images, mask, chains): (Vec<Raster>, RegionMask, Vec<Option<AffineMotion>>) =
        match &args.frames {
            Some(pattern) => {
                let paths = glob_frames(pattern)?;
                let images = load_frames(&paths)?;
                let (w, h) = check_same_size(&images, &paths)?;
                let mask = load_mask(args.mask.as_deref(), w, h)?;
                let chains = match &args.truth {
                    Some(t) => {
                        let truth = read_truth(t)?;
                        paths
                            .iter()
                            .map(|p| {
                                let name = p.file_name().and_then(|n| n.to_str());
                                truth
                                    .frames
                                    .iter()
                                    .find(|f| Some(f.file.as_str()) == name)
                                    .map(|f| f.chained)
                            })
                            .collect()
                    }
                    None => vec![None; paths.len()],
                };
                (images, mask, chains)
            }
            None => {
                let spec = args.synth.spec(2)?;
                let frames = generate_sequence(&spec);
                let mask = frames[0].mask.clone();
                let chains = frames.iter().map(|f| Some(f.chained)).collect();
                (frames.into_iter().map(|f| f.image).collect(), mask, chains)
            }
        };
    ensure!(images.len() >= 2, "benchmarking needs at least two frames");

    let mut rows: Vec<BenchRow> = Vec::new();
    for k in 1..images.len() {
        // Step truth from chained motions: first->k-1 then (k-1)->k.
        let truth = match (chains[k - 1], chains[k]) {
            (Some(a), Some(b)) => a.invert().ok().map(|inv| AffineMotion::compose(&inv, &b)),
            _ => None,
        };
        let pair = bench_pair(
            &images[k - 1],
            &images[k],
            &mask,
            truth.as_ref(),
            k,
            &baseline,
            &config,
            &runtime,
        );
        for row in &pair {
            if let Some(f) = &row.failure {
                log::warn!("frame {k}, {}: {f}", row.method);
            }
        }
        rows.extend(pair);
    }

    match &args.out {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            write_csv(file, &rows)?;
        }
        None => write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn run_synth(args: SynthArgs) -> Result<ExitCode> {
    let spec = args.params.spec(args.count)?;
    let truth = export_sequence(&args.out, &spec)?;
    eprintln!(
        "wrote {} frames to {}",
        truth.frames.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Mosaic(a) => run_mosaic(a),
        Command::Bench(a) => run_bench(a),
        Command::Synth(a) => run_synth(a),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn motions_parse() {
        assert_eq!(
            parse_motion("3,-1").unwrap(),
            AffineMotion::translation(3.0, -1.0)
        );
        assert_eq!(
            parse_motion("0.1, 0, 2, 0, 0.1, 1").unwrap().params(),
            [0.1, 0.0, 2.0, 0.0, 0.1, 1.0]
        );
        assert!(parse_motion("1").is_err());
        assert!(parse_motion("a,b").is_err());
        assert!(parse_motion("inf,0").is_err());
    }

    #[test]
    fn flags_map_onto_config() {
        let cli = Cli::try_parse_from([
            "logmosaic",
            "mosaic",
            "--frames",
            "*.pgm",
            "--out",
            "o",
            "--landmarks",
            "25",
            "--cmin",
            "-0.5",
            "--init",
            "zero",
            "--neighborhood",
            "square9",
            "--kourogi-T",
            "7",
            "--template",
            "5",
        ])
        .unwrap();
        let Command::Mosaic(args) = cli.command else {
            panic!("expected mosaic")
        };
        let c = args.registration.config().unwrap();
        assert_eq!(c.landmarks, 25);
        assert_eq!(c.c_min, -0.5);
        assert_eq!(c.init_mode, InitMode::Zero);
        assert_eq!(c.search.neighborhood, Neighborhood::Square9);
        assert_eq!(c.kourogi.threshold, 7.0);
        assert_eq!(c.template.half_extent(), 5);
    }

    #[test]
    fn defaults_match_library() {
        let cli =
            Cli::try_parse_from(["logmosaic", "mosaic", "--frames", "x", "--out", "o"]).unwrap();
        let Command::Mosaic(args) = cli.command else {
            panic!("expected mosaic")
        };
        assert_eq!(
            args.registration.config().unwrap(),
            RegistrationConfig::default()
        );
    }
}
