//! Command-line surface: fit single images, generate synthetic bundles,
//! run the evaluation sweep, and compare the two edge-driven methods.
//!
//! Exit codes: 0 success, 2 I/O failure, 3 parse failure, 4 degenerate
//! fit, 1 anything else (including bad usage).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector2;
use rand::SeedableRng;
use serde::Deserialize;

use edgefit_core::camera;
use edgefit_core::contour::occluding_boundary;
use edgefit_core::edgemap::{gradient_edges, EdgeSet, GrayImage};
use edgefit_core::eval::{run_protocol, Method, MethodOptions, Sweep};
use edgefit_core::fit_hard::{
    hybrid_fit_hard, icef_correspond, icef_fit, FitResult, HybridOptions, HybridWeights,
    IcefOptions, PairStatus,
};
use edgefit_core::fit_soft::{hybrid_fit_soft, SoftFitConfig};
use edgefit_core::landmark_fit::{fit_landmarks, FitOptions, LandmarkSet};
use edgefit_core::model::{ShapeCoefficients, ShapeModel};
use edgefit_core::synth::{
    make_synthetic_model, render_subject, sample_subject, save_scene_bundle, ProtocolConfig,
    Subject,
};
use edgefit_core::{Error, Pose, Result};

#[derive(Parser)]
#[command(
    name = "edgefit",
    version,
    about = "Fit a linear 3D shape model to images using landmarks and edges"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to one image and write result JSON, OBJ mesh and a
    /// debug overlay
    Fit(FitArgs),
    /// Generate a synthetic model plus rendered scene bundles
    Synth(SynthArgs),
    /// Run the evaluation sweep over synthetic scenes and write CSV tables
    Eval(EvalArgs),
    /// Run the hard and soft fits side by side on one image
    Compare(CompareArgs),
}

/// Flags shared by the fitting commands.
#[derive(Args, Clone)]
struct FitCommon {
    /// TOML file mirroring the flags; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shape model file (.json or binary)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Grayscale image (PGM)
    #[arg(long)]
    image: Option<PathBuf>,
    /// Landmark CSV: vertex,x,y
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Landmark term weight
    #[arg(long)]
    w1: Option<f64>,
    /// Edge term weight
    #[arg(long)]
    w2: Option<f64>,
    /// Prior term weight
    #[arg(long)]
    w3: Option<f64>,
    /// Closest-edge refit iterations
    #[arg(long)]
    icef_iters: Option<usize>,
    /// Gradient threshold for edge detection
    #[arg(long)]
    edge_threshold: Option<f64>,
    /// Output directory; all files are written below it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: FitCommon,
    /// One of: landmarks, icef, hard, soft
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file mirroring the flags; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; receives model.json and one bundle per scene
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    /// Yaw angles in degrees, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    yaw: Option<Vec<f64>>,
    /// Image side length in pixels
    #[arg(long)]
    size: Option<usize>,
    /// Approximate vertex count of the generated model
    #[arg(long)]
    vertices: Option<usize>,
    /// Shape component count of the generated model
    #[arg(long)]
    components: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// TOML file mirroring the flags; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shape model file, typically model.json from `synth`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory for detail.csv, summary.csv and results.dat
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma list of: mean-shape, landmarks-only, icef, hard, soft
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Sweep variable: yaw or noise
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    /// Yaw angles in degrees, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    yaw: Option<Vec<f64>>,
    /// Landmark noise sigmas in pixels, comma separated
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Image side length in pixels
    #[arg(long)]
    size: Option<usize>,
    /// Worker threads for the sweep
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    w3: Option<f64>,
    #[arg(long)]
    icef_iters: Option<usize>,
    #[arg(long)]
    edge_threshold: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: FitCommon,
}

/// Every flag, optional, as a TOML document. Flags win over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    image: Option<PathBuf>,
    landmarks: Option<PathBuf>,
    method: Option<String>,
    methods: Option<Vec<String>>,
    w1: Option<f64>,
    w2: Option<f64>,
    w3: Option<f64>,
    icef_iters: Option<usize>,
    edge_threshold: Option<f64>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    subjects: Option<usize>,
    yaw: Option<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    sweep: Option<String>,
    size: Option<usize>,
    vertices: Option<usize>,
    components: Option<usize>,
    jobs: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            field: "config".into(),
            message: e.to_string(),
        })
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        Error::Parse { .. } => 3,
        Error::Degenerate(_)
        | Error::EmptyBoundary(_)
        | Error::NoEdges(_)
        | Error::NonConvergence { .. } => 4,
        _ => 1,
    }
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })
}

/// Inputs shared by `fit` and `compare` after merging flags and config.
struct FitInputs {
    model: ShapeModel,
    image: GrayImage,
    landmarks: LandmarkSet,
    weights: HybridWeights,
    icef_iters: usize,
    edge_threshold: f64,
    out: PathBuf,
}

impl FitInputs {
    fn resolve(common: FitCommon) -> Result<(FitInputs, FileConfig)> {
        let file = FileConfig::load(common.config.as_deref())?;
        let model_path = require(common.model.or(file.model.clone()), "model")?;
        let image_path = require(common.image.or(file.image.clone()), "image")?;
        let landmark_path = require(common.landmarks.or(file.landmarks.clone()), "landmarks")?;
        let out = require(common.out.or(file.out.clone()), "out")?;

        let defaults = HybridWeights::default();
        let weights = HybridWeights {
            w1: common.w1.or(file.w1).unwrap_or(defaults.w1),
            w2: common.w2.or(file.w2).unwrap_or(defaults.w2),
            w3: common.w3.or(file.w3).unwrap_or(defaults.w3),
        };
        weights.validate()?;

        let inputs = FitInputs {
            model: ShapeModel::load(&model_path)?,
            image: GrayImage::load(&image_path)?,
            landmarks: LandmarkSet::load_csv(&landmark_path)?,
            weights,
            icef_iters: common
                .icef_iters
                .or(file.icef_iters)
                .unwrap_or(IcefOptions::default().iterations),
            edge_threshold: common.edge_threshold.or(file.edge_threshold).unwrap_or(0.1),
            out,
        };
        Ok((inputs, file))
    }

    fn initial_fit(&self) -> Result<edgefit_core::landmark_fit::LandmarkFit> {
        fit_landmarks(&self.model, &self.landmarks, &FitOptions::default())
    }

    fn run_method(&self, method: &str) -> Result<FitResult> {
        let init = self.initial_fit()?;
        match method {
            "landmarks" => {
                let mut result = FitResult::from_estimate("landmarks", &init.alpha, &init.pose);
                result.stage_energies.push(stage("initial", init.diagnostics.initial_energy));
                result.stage_energies.push(stage("final", init.diagnostics.final_energy));
                Ok(result)
            }
            "icef" => {
                let edges = gradient_edges(&self.image, self.edge_threshold)?;
                let options = IcefOptions {
                    iterations: self.icef_iters,
                    ..IcefOptions::default()
                };
                let fit = icef_fit(
                    &self.model,
                    &self.landmarks,
                    &edges,
                    (&init.alpha, &init.pose),
                    &options,
                )?;
                Ok(fit.to_result())
            }
            "hard" => {
                let edges = gradient_edges(&self.image, self.edge_threshold)?;
                let icef_options = IcefOptions {
                    iterations: self.icef_iters,
                    ..IcefOptions::default()
                };
                let icef = icef_fit(
                    &self.model,
                    &self.landmarks,
                    &edges,
                    (&init.alpha, &init.pose),
                    &icef_options,
                )?;
                let options = HybridOptions {
                    weights: self.weights.clone(),
                    ..HybridOptions::default()
                };
                hybrid_fit_hard(
                    &self.model,
                    &self.landmarks,
                    &edges,
                    (&icef.alpha, &icef.pose),
                    &options,
                )
            }
            "soft" => {
                let config = SoftFitConfig {
                    weights: self.weights.clone(),
                    ..SoftFitConfig::default()
                };
                hybrid_fit_soft(
                    &self.model,
                    &self.landmarks,
                    &self.image,
                    (&init.alpha, &init.pose),
                    &config,
                )
            }
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}`; expected landmarks, icef, hard or soft"
            ))),
        }
    }

    /// Writes result JSON, the fitted mesh, and the overlay for one method.
    fn write_outputs(&self, result: &FitResult, suffix: &str) -> Result<()> {
        let name = |base: &str, ext: &str| {
            if suffix.is_empty() {
                self.out.join(format!("{base}.{ext}"))
            } else {
                self.out.join(format!("{base}_{suffix}.{ext}"))
            }
        };
        result.save_json(name("result", "json"))?;
        let alpha = result.coefficients();
        let pose = result.pose();
        let mesh = self.model.instantiate(&alpha)?;
        mesh.save_obj(name("mesh", "obj"))?;

        let edges = gradient_edges(&self.image, self.edge_threshold).ok();
        let (kept, dropped) = self.correspondence_markers(&alpha, &pose, edges.as_ref())?;
        write_overlay(
            &name("overlay", "png"),
            &self.image,
            edges.as_ref(),
            &kept,
            &dropped,
        )
    }

    /// Marker positions for the overlay: matched boundary vertices split by
    /// filter outcome, or (without usable edges) visible vs occluded
    /// boundary projections.
    fn correspondence_markers(
        &self,
        alpha: &ShapeCoefficients,
        pose: &Pose,
        edges: Option<&EdgeSet>,
    ) -> Result<(Vec<Vector2<f64>>, Vec<Vector2<f64>>)> {
        let mesh = self.model.instantiate(alpha)?;
        if let Some(edges) = edges {
            if !edges.is_empty() {
                let corr = icef_correspond(&self.model, alpha, pose, edges, 0.05, 10.0)?;
                let project = |v: u32| camera::sop(&mesh.vertex(v as usize), pose);
                let kept = corr
                    .pairs()
                    .iter()
                    .filter(|p| p.status == PairStatus::Kept)
                    .map(|p| project(p.vertex))
                    .collect();
                let dropped = corr
                    .pairs()
                    .iter()
                    .filter(|p| p.status != PairStatus::Kept)
                    .map(|p| project(p.vertex))
                    .collect();
                return Ok((kept, dropped));
            }
        }
        let boundary = occluding_boundary(&mesh, pose, self.image.width(), self.image.height())?;
        let project = |v: &u32| camera::sop(&mesh.vertex(*v as usize), pose);
        Ok((
            boundary.indices().iter().map(project).collect(),
            boundary.occluded().iter().map(project).collect(),
        ))
    }
}

fn stage(name: &str, energy: f64) -> edgefit_core::fit_hard::StageEnergy {
    edgefit_core::fit_hard::StageEnergy {
        stage: name.to_string(),
        energy,
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let method_flag = args.method.clone();
    let (inputs, file) = FitInputs::resolve(args.common)?;
    let method = method_flag.or(file.method).unwrap_or_else(|| "hard".into());
    ensure_out_dir(&inputs.out)?;
    let result = inputs.run_method(&method)?;
    inputs.write_outputs(&result, "")?;
    let final_energy = result
        .stage_energies
        .last()
        .map(|s| s.energy)
        .unwrap_or(f64::NAN);
    println!(
        "fit method={method} final_energy={final_energy} out={}",
        inputs.out.display()
    );
    Ok(())
}

/// Image edges in blue, kept correspondences in green, dropped in red,
/// over the grayscale input.
fn write_overlay(
    path: &Path,
    image: &GrayImage,
    edges: Option<&EdgeSet>,
    kept: &[Vector2<f64>],
    dropped: &[Vector2<f64>],
) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let mut rgb = image::RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = (image.get(x as usize, y as usize) * 255.0).round() as u8;
            rgb.put_pixel(x, y, image::Rgb([v, v, v]));
        }
    }
    if let Some(edges) = edges {
        for &(x, y) in edges.pixels() {
            rgb.put_pixel(x, y, image::Rgb([64, 96, 255]));
        }
    }
    let mut dot = |p: &Vector2<f64>, color: [u8; 3]| {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
                    rgb.put_pixel(x as u32, y as u32, image::Rgb(color));
                }
            }
        }
    };
    for p in kept {
        dot(p, [64, 224, 64]);
    }
    for p in dropped {
        dot(p, [224, 48, 48]);
    }
    rgb.save(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })
}

fn scene_seed(base: u64, subject: u64, angle_index: u64) -> u64 {
    let mut z = base
        ^ subject.wrapping_mul(0xBF58476D1CE4E5B9)
        ^ angle_index.wrapping_mul(0x94D049BB133111EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let out = require(args.out.or(file.out.clone()), "out")?;
    let seed = args.seed.or(file.seed).unwrap_or(7);
    let subjects = args.subjects.or(file.subjects).unwrap_or(2);
    let yaw = args
        .yaw
        .or(file.yaw.clone())
        .unwrap_or_else(|| vec![-30.0, 0.0, 30.0]);
    let size = args.size.or(file.size).unwrap_or(256);
    let vertices = args.vertices.or(file.vertices).unwrap_or(2000);
    let components = args.components.or(file.components).unwrap_or(40);

    let config = ProtocolConfig {
        yaw_angles: yaw.clone(),
        noise_sigmas: vec![0.0],
        subjects,
        seed,
    };
    config.validate()?;

    ensure_out_dir(&out)?;
    let model = make_synthetic_model(vertices, components, seed)?;
    model.save(out.join("model.json"))?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let roster: Vec<Subject> = (0..subjects)
        .map(|_| sample_subject(&model, &mut rng))
        .collect();
    let mut bundles = 0;
    for (angle_index, &angle) in yaw.iter().enumerate() {
        for (subject, who) in roster.iter().enumerate() {
            let scene = render_subject(
                &model,
                who,
                angle,
                size,
                scene_seed(seed, subject as u64, angle_index as u64),
            )?;
            let dir = out.join(format!("scene_subj{subject}_yaw{angle}"));
            save_scene_bundle(&scene, &dir)?;
            bundles += 1;
        }
    }
    println!(
        "synth wrote model.json and {bundles} bundles under {}",
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let model_path = require(args.model.or(file.model.clone()), "model")?;
    let out = require(args.out.or(file.out.clone()), "out")?;
    let method_names = args
        .methods
        .or(file.methods.clone())
        .unwrap_or_else(|| Method::ALL.iter().map(|m| m.name().to_string()).collect());
    let methods = method_names
        .iter()
        .map(|name| name.parse())
        .collect::<Result<Vec<Method>>>()?;
    let sweep = match args
        .sweep
        .or(file.sweep.clone())
        .unwrap_or_else(|| "yaw".into())
        .as_str()
    {
        "yaw" => Sweep::Yaw,
        "noise" => Sweep::Noise,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown sweep `{other}`; expected yaw or noise"
            )))
        }
    };
    let config = ProtocolConfig {
        yaw_angles: args
            .yaw
            .or(file.yaw.clone())
            .unwrap_or(ProtocolConfig::default().yaw_angles),
        noise_sigmas: args
            .sigma
            .or(file.sigma.clone())
            .unwrap_or(ProtocolConfig::default().noise_sigmas),
        subjects: args.subjects.or(file.subjects).unwrap_or(5),
        seed: args.seed.or(file.seed).unwrap_or(7),
    };
    let size = args.size.or(file.size).unwrap_or(384);

    if let Some(jobs) = args.jobs.or(file.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }

    let mut options = MethodOptions::default();
    let defaults = HybridWeights::default();
    let weights = HybridWeights {
        w1: args.w1.or(file.w1).unwrap_or(defaults.w1),
        w2: args.w2.or(file.w2).unwrap_or(defaults.w2),
        w3: args.w3.or(file.w3).unwrap_or(defaults.w3),
    };
    weights.validate()?;
    options.hard.weights = weights.clone();
    options.soft.weights = weights;
    if let Some(iters) = args.icef_iters.or(file.icef_iters) {
        options.icef.iterations = iters;
    }
    if let Some(threshold) = args.edge_threshold.or(file.edge_threshold) {
        options.edge_threshold = threshold;
    }

    let model = ShapeModel::load(&model_path)?;
    ensure_out_dir(&out)?;
    let table = run_protocol(&model, &config, sweep, &methods, size, &options)?;
    table.write_detail_csv(out.join("detail.csv"))?;
    table.write_summary_csv(out.join("summary.csv"))?;
    table.write_dat(out.join("results.dat"))?;

    let failed = table.records.iter().filter(|r| r.error.is_none()).count();
    if failed > 0 {
        eprintln!("{failed} cells failed; see detail records");
    }
    print!("{}", table.summary_csv());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let (inputs, _) = FitInputs::resolve(args.common)?;
    ensure_out_dir(&inputs.out)?;
    let hard = inputs.run_method("hard")?;
    let soft = inputs.run_method("soft")?;
    inputs.write_outputs(&hard, "hard")?;
    inputs.write_outputs(&soft, "soft")?;
    let last = |r: &FitResult| r.stage_energies.last().map(|s| s.energy).unwrap_or(f64::NAN);
    println!(
        "compare hard_final_energy={} soft_final_energy={} out={}",
        last(&hard),
        last(&soft),
        inputs.out.display()
    );
    Ok(())
}
