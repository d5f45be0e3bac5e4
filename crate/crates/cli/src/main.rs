use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use texmap::pipeline::{self, ErrorKind, PipelineConfig, PipelineError, Stage};
use texmap::synth::{self, CameraLayout, Jitter, Pattern, SceneSpec, Shape, SynthError};

#[derive(Parser, Debug)]
#[command(name = "texmap", version, about = "Multi-view texture mapping for triangle meshes")]
struct Cli {
    /// TOML file of pipeline settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Texture a mesh from calibrated views.
    Texture(TextureArgs),
    /// Re-render an exported model into every view and score it.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Print per-face quality, costs and candidate ranks as CSV.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct Inputs {
    /// Mesh (OBJ or ASCII PLY).
    #[arg(long)]
    mesh: PathBuf,
    /// JSON view manifest.
    #[arg(long)]
    views: PathBuf,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    lbp_iters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lbp_damping: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    meanshift_threshold: Option<f64>,
    #[arg(long)]
    meanshift_iters: Option<usize>,
    #[arg(long)]
    depth_bias: Option<f64>,
    #[arg(long)]
    drop_degenerate: bool,
    /// Merge vertices closer than this distance.
    #[arg(long)]
    weld: Option<f64>,
    /// Resolve image paths against this directory.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Cache quality and selection results in this directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    dump_depth: Option<PathBuf>,
    #[arg(long)]
    dump_quality: Option<PathBuf>,
    #[arg(long)]
    dump_labels: Option<PathBuf>,
    #[arg(long)]
    dump_dist: Option<PathBuf>,
}

impl Overrides {
    fn apply(self, c: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(workers, top_n, lbp_iters, lambda, lbp_damping, ratio, meanshift_threshold, meanshift_iters, depth_bias);
        c.drop_degenerate |= self.drop_degenerate;
        if self.weld.is_some() {
            c.weld = self.weld;
        }
        if self.image_root.is_some() {
            c.image_root = self.image_root;
        }
        if self.cache.is_some() {
            c.cache = self.cache;
        }
        if self.dump_depth.is_some() {
            c.dump.depth = self.dump_depth;
        }
        if self.dump_quality.is_some() {
            c.dump.quality = self.dump_quality;
        }
        if self.dump_labels.is_some() {
            c.dump.labels = self.dump_labels;
        }
        if self.dump_dist.is_some() {
            c.dump.dist = self.dump_dist;
        }
    }
}

#[derive(Args, Debug)]
struct TextureArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Output directory for the model, atlases and run report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Textured OBJ written by `texture`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    views: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ShapeArg {
    Cube,
    Icosphere,
    Plane,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PatternArg {
    Checker,
    Gradient,
    Solid,
    Uv,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "cube")]
    shape: ShapeArg,
    /// Cube quads per side, icosphere subdivisions or plane cells.
    #[arg(long)]
    subdiv: Option<u32>,
    #[arg(long, value_enum, default_value = "checker")]
    pattern: PatternArg,
    /// Checker or UV cells per unit span.
    #[arg(long, default_value_t = 8)]
    cells: u32,
    /// Number of cameras on a ring around the object.
    #[arg(long, default_value_t = 6)]
    cameras: usize,
    #[arg(long, default_value_t = 6.0)]
    radius: f64,
    #[arg(long, default_value_t = 35.0)]
    elevation: f64,
    #[arg(long, default_value_t = 512)]
    width: u32,
    #[arg(long, default_value_t = 512)]
    height: u32,
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
    /// Per-view gains drawn uniformly from `lo:hi`.
    #[arg(long, value_parser = parse_range)]
    gain_range: Option<(f64, f64)>,
    /// Rotation error in degrees added to the recorded poses.
    #[arg(long, default_value_t = 0.0)]
    jitter_rot: f64,
    /// Translation error added to the recorded poses, as a fraction of
    /// camera distance.
    #[arg(long, default_value_t = 0.0)]
    jitter_trans: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per pixel along each axis.
    #[arg(long, default_value_t = 3)]
    supersample: u32,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("invalid range {s:?}"));
    }
    Ok((lo, hi))
}

impl SynthArgs {
    fn spec(&self) -> SceneSpec {
        let shape = match self.shape {
            ShapeArg::Cube => Shape::Cube { subdiv: self.subdiv.unwrap_or(4) },
            ShapeArg::Icosphere => Shape::Icosphere { subdiv: self.subdiv.unwrap_or(3) },
            ShapeArg::Plane => Shape::PlaneGrid { cells: self.subdiv.unwrap_or(8) },
        };
        let pattern = match self.pattern {
            PatternArg::Checker => Pattern::Checkerboard { cells: self.cells },
            PatternArg::Gradient => Pattern::Gradient,
            PatternArg::Solid => Pattern::Solid { rgb: [160, 140, 120] },
            PatternArg::Uv => Pattern::UvDebug { cells: self.cells },
        };
        let gains = self
            .gain_range
            .map(|(lo, hi)| SceneSpec::random_gains(self.cameras, lo, hi, self.seed))
            .unwrap_or_default();
        SceneSpec {
            shape,
            pattern,
            cameras: CameraLayout::Ring {
                count: self.cameras,
                radius: self.radius,
                elevation_deg: self.elevation,
                alternate: true,
                azimuth_offset_deg: 15.0,
            },
            width: self.width,
            height: self.height,
            fov_deg: self.fov,
            gains,
            biases: Vec::new(),
            jitter: Jitter {
                rotation_deg: self.jitter_rot,
                translation_frac: self.jitter_trans,
                seed: self.seed,
            },
            supersample: self.supersample,
        }
    }
}

fn load_config(path: Option<&Path>, overrides: Overrides) -> Result<PipelineConfig, PipelineError> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::input(Stage::Config, format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| PipelineError::input(Stage::Config, format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn write_output(path: Option<&Path>, text: &str, stage: Stage) -> Result<(), PipelineError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| PipelineError::input(stage, format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(PipelineError::input(stage, e)),
                _ => Ok(()),
            }
        }
    }
}

fn synth_error(e: SynthError) -> PipelineError {
    PipelineError::input(Stage::Config, e)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Texture(a) => {
            let config = load_config(config_path, a.overrides)?;
            let out = pipeline::run_texture(&a.inputs.mesh, &a.inputs.views, &a.out, &config)?;
            let r = &out.report;
            info!(
                "{} faces, {} views, {} untextured, {} atlas page(s) -> {}",
                r.faces,
                r.views,
                r.untextured_faces,
                r.atlas_pages,
                a.out.display()
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let config = load_config(config_path, a.overrides)?;
            let report = pipeline::run_evaluate(&a.model, &a.views, &config)?;
            info!(
                "{} of {} views evaluated: PSNR {:.2} dB, MS-SSIM {:.4}",
                report.evaluated_views,
                report.views.len(),
                report.mean_psnr,
                report.mean_ms_ssim
            );
            let text = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::internal(Stage::Eval, e))?;
            write_output(a.report.as_deref(), &text, Stage::Eval)
        }
        Command::Inspect(a) => {
            let config = load_config(config_path, a.overrides)?;
            let csv = pipeline::run_inspect(&a.inputs.mesh, &a.inputs.views, &config)?;
            write_output(a.out.as_deref(), csv.trim_end(), Stage::Mrf)
        }
        Command::Synth(a) => {
            let files = synth::generate(&a.spec(), &a.out).map_err(synth_error)?;
            info!("wrote {} and {} images", files.manifest.display(), files.images.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind {
                ErrorKind::Input => 1,
                ErrorKind::Internal => 2,
            })
        }
    }
}
