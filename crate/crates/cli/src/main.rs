//! `dense-se3`: generate synthetic scenes, solve for dense SE(3) motion,
//! evaluate and visualise the result.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dense_se3::dense_se3::{Damping, DenseSe3Config, Neighborhood};
use dense_se3::fieldops::{induced_flow, solve_scene, IterationAccuracy, IterationDiagnostics, SolveOptions};
use dense_se3::metrics::{self, CurvePoint, MetricReport};
use dense_se3::synth::{self, OracleConfig, SceneOracle};
use dense_se3::{io, selfcheck, viz, Error};

#[derive(Parser)]
#[command(name = "dense-se3", version, about = "Dense SE(3) scene-flow toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene from a JSON spec
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the transform field of a scene
    Solve(SolveArgs),
    /// Score a transform field against scene ground truth
    Eval(EvalArgs),
    /// Write false-colour PPM images of flow and twist fields
    Viz(VizArgs),
    /// Run the numerical self-checks
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Output `SE3F` field file
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics JSON path [default: <out> with a .json extension]
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    iters: usize,
    #[arg(long, default_value_t = 16)]
    radius: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Relative Levenberg-Marquardt damping
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    smoothing: Toggle,
    /// Std-dev of oracle flow noise, pixels
    #[arg(long, default_value_t = 0.0)]
    noise_flow: f64,
    /// Std-dev of oracle inverse-depth noise
    #[arg(long, default_value_t = 0.0)]
    noise_depth: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Fail with exit code 3 when more than this fraction of pixels could
    /// not be updated in the final iteration
    #[arg(long, default_value_t = 0.5)]
    max_flagged: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    field: PathBuf,
    /// Solver diagnostics whose per-iteration curves go into the report
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Ignore pixels whose ground-truth flow exceeds this many pixels
    #[arg(long)]
    max_flow: Option<f64>,
    /// Write the report JSON here as well as to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    report: ReportFormat,
}

#[derive(Args)]
struct VizArgs {
    /// Scene directory; provides depth for `--field` and ground-truth flow
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    /// A `.flo` file to render on its own
    #[arg(long)]
    flo: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Flow magnitude mapped to full saturation [default: per-image max]
    #[arg(long)]
    max_flow: Option<f64>,
    /// Twist magnitude mapped to full channel range [default: per-image max]
    #[arg(long)]
    twist_scale: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SolveDiagnostics {
    iterations: usize,
    radius: usize,
    stride: usize,
    lambda: f64,
    smoothing: Toggle,
    noise_flow: f64,
    noise_depth: f64,
    seed: u64,
    threads: Option<usize>,
    initial_accuracy: Option<IterationAccuracy>,
    history: Vec<IterationDiagnostics>,
    flagged_fraction: f64,
}

enum Failure {
    Usage(String),
    Io(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format(_) | Error::ShapeMismatch(_) => Failure::Io(e.to_string()),
            Error::InvalidParameter(_) | Error::InvalidIntrinsics(_) => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn generate(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let spec = io::read_scene_spec(spec_path)?;
    let scene = synth::generate(&spec)?;
    io::write_scene(out, &scene)?;
    let (h, w) = scene.shape();
    println!(
        "scene {h}x{w}, {} segments, {} occluded pixels, mean depth {:.3}",
        scene.num_segments(),
        scene.occlusion.iter().filter(|o| **o).count(),
        scene.mean_depth()
    );
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let scene = io::read_scene(&args.scene)?;
    let oracle_cfg = OracleConfig {
        flow_noise_sigma: args.noise_flow,
        depth_noise_sigma: args.noise_depth,
        seed: args.seed,
        ..OracleConfig::default()
    };
    let mut oracle = SceneOracle::new(&scene, oracle_cfg)?;
    if !(args.lambda >= 0.0) {
        return Err(Failure::Usage("--lambda must be >= 0".into()));
    }
    let options = SolveOptions {
        iterations: args.iters,
        dense: DenseSe3Config {
            damping: Damping {
                relative: args.lambda,
                ..Damping::default()
            },
            ..DenseSe3Config::new(Neighborhood::new(args.radius, args.stride)?)
        },
        smoothing: args.smoothing == Toggle::On,
    };
    let output = solve_scene(&scene.z1, &scene.z2, &scene.intrinsics, &mut oracle, &options)?;
    io::write_se3_field(&args.out, &output.field)?;

    let flagged = output.diagnostics.last().map_or(0, |d| d.flagged_pixels);
    let flagged_fraction = flagged as f64 / output.field.len() as f64;
    let diag = SolveDiagnostics {
        iterations: args.iters,
        radius: args.radius,
        stride: args.stride,
        lambda: args.lambda,
        smoothing: args.smoothing,
        noise_flow: args.noise_flow,
        noise_depth: args.noise_depth,
        seed: args.seed,
        threads: args.threads,
        initial_accuracy: output.initial_accuracy,
        history: output.diagnostics,
        flagged_fraction,
    };
    let diag_path = args
        .diagnostics
        .clone()
        .unwrap_or_else(|| args.out.with_extension("json"));
    write_json(&diag_path, &diag)?;

    match args.report {
        ReportFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&diag).expect("diagnostics serialize"))
        }
        ReportFormat::Text => {
            for d in &diag.history {
                let acc = d
                    .accuracy
                    .map(|a| format!("  epe2d {:.6}  epe3d {:.3e}", a.epe2d, a.epe3d))
                    .unwrap_or_default();
                println!(
                    "iter {:>2}  objective {:.6e}  |delta| {:.3e}  flagged {}{acc}",
                    d.iteration, d.objective, d.mean_update_norm, d.flagged_pixels
                );
            }
        }
    }
    if flagged_fraction > args.max_flagged {
        return Err(Failure::Numerical(format!(
            "{:.1}% of pixels could not be updated (limit {:.1}%)",
            100.0 * flagged_fraction,
            100.0 * args.max_flagged
        )));
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let scene = io::read_scene(&args.scene)?;
    let field = io::read_se3_field(&args.field)?;
    let curves: Vec<CurvePoint> = match &args.diagnostics {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let diag: SolveDiagnostics =
                serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
            diag.history.iter().map(CurvePoint::from).collect()
        }
        None => Vec::new(),
    };
    let report: MetricReport = metrics::report(&field, &scene, args.max_flow, curves)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    match args.report {
        ReportFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"))
        }
        ReportFormat::Text => {
            println!("pixels     {}", report.pixel_count);
            println!("EPE 2D     {:.6}", report.epe2d_mean);
            println!("EPE 3D     {:.6e}", report.epe3d_mean);
            println!("2D < 1px   {:.4}", report.acc_1px);
            println!("3D < 0.05  {:.4}", report.acc3d_05);
            println!("3D < 0.10  {:.4}", report.acc3d_10);
        }
    }
    Ok(())
}

fn viz(args: &VizArgs) -> Result<(), Failure> {
    if args.field.is_none() && args.flo.is_none() && args.scene.is_none() {
        return Err(Failure::Usage("viz needs --scene, --field or --flo".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let scene = args.scene.as_deref().map(io::read_scene).transpose()?;
    if let Some(path) = &args.field {
        let scene = scene
            .as_ref()
            .ok_or_else(|| Failure::Usage("--field needs --scene for depth".into()))?;
        let field = io::read_se3_field(path)?;
        let flow = induced_flow(&field, &scene.z1, &scene.intrinsics)?;
        io::write_ppm(&args.out.join("flow.ppm"), &viz::flow_to_rgb(&flow, args.max_flow))?;
        let (tau, phi) = viz::twist_to_rgb(&field, args.twist_scale);
        io::write_ppm(&args.out.join("tau.ppm"), &tau)?;
        io::write_ppm(&args.out.join("phi.ppm"), &phi)?;
    }
    if let Some(scene) = &scene {
        io::write_ppm(
            &args.out.join("flow_gt.ppm"),
            &viz::flow_to_rgb(&scene.flow_gt, args.max_flow),
        )?;
    }
    if let Some(path) = &args.flo {
        let flow = io::read_flo_field(path)?;
        io::write_ppm(&args.out.join("flo.ppm"), &viz::flow_to_rgb(&flow, args.max_flow))?;
    }
    Ok(())
}

fn selftest() -> Result<(), Failure> {
    let checks = selfcheck::run_all();
    let mut failed = 0;
    for c in &checks {
        let tag = if c.passed() { "ok  " } else { "FAIL" };
        println!("{tag} {:<52} {:.3e} (tol {:.0e})", c.name, c.error, c.tolerance);
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} checks failed", checks.len())));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { spec, out } => generate(&spec, &out),
        Command::Solve(args) => {
            let threads = args.threads.unwrap_or(0);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
            pool.install(|| solve(&args))
        }
        Command::Eval(args) => eval(&args),
        Command::Viz(args) => viz(&args),
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
