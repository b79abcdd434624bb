use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tetrapod::balloon::{build_shape, export_obj, extract_mesh, BodyPartConfig};
use tetrapod::control::{project_pose, rasterize_pose, render_depth, PoseStyle};
use tetrapod::dataset::{make_control_set, AugmentRanges, SourceDocument};
use tetrapod::editor::{self, preview_camera, Editor};
use tetrapod::field::RadianceGrid;
use tetrapod::pipeline::{Pipeline, PipelineConfig, Stages};
use tetrapod::skeleton::{default_skeleton, Skeleton};

/// Skeleton-driven balloon meshes, control images and score-distilled
/// radiance grids.
#[derive(Debug, Parser)]
#[command(name = "tetrapod", version)]
struct Cli {
    /// Seed for every random draw; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline config document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the balloon mesh for a skeleton and write it as OBJ.
    Mesh {
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Body-part config document.
        #[arg(long)]
        body: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the primitive list as JSON.
        #[arg(long)]
        shape_out: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Sphere-trace a depth map of the balloon shape.
    RenderDepth {
        #[command(flatten)]
        view: ViewArgs,
        /// Raw depth as a portable float map.
        #[arg(long)]
        pfm: Option<PathBuf>,
    },
    /// Rasterize the projected pose with head-part culling.
    RenderPose {
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Filter annotation documents by coverage and write augmented pose images.
    Curate {
        /// Annotation documents, or directories of `*.json` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
    },
    /// Run the optimization stages.
    Optimize {
        #[arg(long, value_enum, default_value_t = StageArg::Both)]
        stage: StageArg,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start from this grid checkpoint instead of a fresh grid.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Serve the editor HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Persist skeleton and config here across restarts.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Static files served under `/`.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ViewArgs {
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long)]
    body: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    radius: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    azimuth: f64,
    #[arg(long, default_value_t = 90.0)]
    polar: f64,
    #[arg(long, default_value_t = 256)]
    size: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_skeleton(path: Option<&Path>, config: &PipelineConfig) -> Result<Skeleton> {
    match path.or(config.skeleton.as_deref()) {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Skeleton::from_json(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(default_skeleton()),
    }
}

fn load_body(path: Option<&Path>, config: &PipelineConfig) -> Result<BodyPartConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let body: BodyPartConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            body.validate()?;
            Ok(body)
        }
        None => Ok(config.body),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn collect_documents(inputs: &[PathBuf]) -> Result<Vec<SourceDocument>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(SourceDocument { id, text })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Mesh { skeleton, body, out, shape_out, resolution } => {
            let skeleton = load_skeleton(skeleton.as_deref(), &config)?;
            let shape = build_shape(&skeleton, &load_body(body.as_deref(), &config)?)?;
            let mesh = extract_mesh(&shape, resolution)?;
            write(&out, export_obj(&mesh))?;
            if let Some(path) = shape_out {
                write(&path, shape.to_json())?;
            }
            eprintln!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
        }
        Command::RenderDepth { view, pfm } => {
            let skeleton = load_skeleton(view.skeleton.as_deref(), &config)?;
            let shape = build_shape(&skeleton, &load_body(view.body.as_deref(), &config)?)?;
            let camera = camera_for(&skeleton, &view)?;
            let depth = render_depth(&shape, &camera);
            write(&view.out, depth.to_png16())?;
            if let Some(path) = pfm {
                write(&path, depth.to_pfm(false))?;
            }
        }
        Command::RenderPose { view } => {
            let skeleton = load_skeleton(view.skeleton.as_deref(), &config)?;
            let camera = camera_for(&skeleton, &view)?;
            let pose = project_pose(&skeleton, &camera);
            let img = rasterize_pose(&pose, &PoseStyle::for_width(camera.width as usize));
            write(&view.out, img.to_png())?;
            eprintln!("view {}, {} keypoints drawn", pose.view.map(|v| v.as_str()).unwrap_or("?"), pose.visible_count());
        }
        Command::Curate { inputs, out, threshold } => {
            let docs = collect_documents(&inputs)?;
            let (samples, report) = make_control_set(&docs, threshold, &AugmentRanges::default(), config.seed)?;
            for s in &samples {
                write(&out.join(format!("{}.png", s.id)), s.image.to_png())?;
            }
            let text = serde_json::to_string_pretty(&report)?;
            write(&out.join("report.json"), &text)?;
            println!("{text}");
        }
        Command::Optimize { stage, out, init } => {
            let mut config = config;
            if out.is_some() {
                config.output_dir = out;
            }
            if config.output_dir.is_none() {
                bail!("optimize needs an output directory (--out or output_dir in the config)");
            }
            let initial = match &init {
                Some(p) => {
                    let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    Some(RadianceGrid::read_checkpoint(std::io::BufReader::new(file))?)
                }
                None => None,
            };
            let stages = match stage {
                StageArg::One => Stages::First,
                StageArg::Two => Stages::Second,
                StageArg::Both => Stages::Both,
            };
            let pipeline = Pipeline::new(config)?;
            let (_, reports) = pipeline.run(stages, initial)?;
            for r in &reports {
                if let Some(ckpt) = &r.checkpoint {
                    eprintln!("{} iterations in {:.1}s -> {}", r.records.len(), r.wall_seconds, ckpt.display());
                }
            }
        }
        Command::Serve { port, host, state, assets } => {
            let editor = match &state {
                Some(path) => Editor::with_state_file(path)?,
                None => Editor::new(),
            };
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse().context("parsing listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(editor::serve(addr, Arc::new(editor), assets))?;
        }
    }
    Ok(())
}

fn camera_for(skeleton: &Skeleton, view: &ViewArgs) -> Result<tetrapod::geometry::Camera> {
    let cam = preview_camera(skeleton, view.azimuth, view.polar, view.radius).map_err(anyhow::Error::msg)?;
    Ok(cam.with_resolution(view.size, view.size))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(
        tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
    ).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
