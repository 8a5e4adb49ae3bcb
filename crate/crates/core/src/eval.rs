//! Procrustes-aligned surface error and the synthetic evaluation sweep.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edgemap::gradient_edges;
use crate::error::{Error, Result};
use crate::fit_hard::{hybrid_fit_hard, icef_fit, HybridOptions, IcefOptions};
use crate::fit_soft::{hybrid_fit_soft, SoftFitConfig};
use crate::landmark_fit::{fit_landmarks, FitOptions, LandmarkSet};
use crate::model::{Mesh, ShapeCoefficients, ShapeModel};
use crate::synth::{add_landmark_noise, render_subject, ProtocolConfig, SyntheticScene};

/// Map `v -> scale * rotation * v + translation`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * v) + self.translation
    }

    pub fn apply_mesh(&self, mesh: &Mesh) -> Mesh {
        let n = mesh.vertex_count();
        let mut vertices = DVector::zeros(3 * n);
        for i in 0..n {
            let v = self.apply(&mesh.vertex(i));
            vertices[3 * i] = v.x;
            vertices[3 * i + 1] = v.y;
            vertices[3 * i + 2] = v.z;
        }
        Mesh {
            vertices,
            topology: mesh.topology.clone(),
        }
    }
}

/// Closed-form similarity transform minimizing the summed squared distance
/// from transformed source vertices to target vertices (correspondence by
/// index), via the centered cross-covariance SVD. When the SVD factors
/// compose to a reflection, the smallest singular direction is flipped so
/// the result is a proper rotation.
///
/// Scale is estimated because orthographic fits carry a scale ambiguity
/// against metric ground truth.
pub fn procrustes_align(source: &Mesh, target: &Mesh) -> Result<(Mesh, SimilarityTransform)> {
    let n = source.vertex_count();
    if n != target.vertex_count() {
        return Err(Error::DimensionMismatch(format!(
            "cannot align {} vertices to {}",
            n,
            target.vertex_count()
        )));
    }
    if !Arc::ptr_eq(&source.topology, &target.topology)
        && source.triangles() != target.triangles()
    {
        return Err(Error::Topology(
            "alignment needs index-wise correspondence on a shared topology".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Degenerate("cannot align empty meshes".into()));
    }

    let inv_n = 1.0 / n as f64;
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for i in 0..n {
        mu_s += source.vertex(i);
        mu_t += target.vertex(i);
    }
    mu_s *= inv_n;
    mu_t *= inv_n;

    let mut var_s = 0.0;
    let mut var_t = 0.0;
    let mut cov = Matrix3::zeros();
    for i in 0..n {
        let x = source.vertex(i) - mu_s;
        let y = target.vertex(i) - mu_t;
        var_s += x.norm_squared();
        var_t += y.norm_squared();
        cov += y * x.transpose();
    }
    var_s *= inv_n;
    var_t *= inv_n;
    cov *= inv_n;
    if !(var_s > 0.0) {
        return Err(Error::Degenerate("source vertices all coincide".into()));
    }
    if !(var_t > 0.0) {
        return Err(Error::Degenerate("target vertices all coincide".into()));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd of 3x3 with compute_u");
    let v_t = svd.v_t.expect("svd of 3x3 with compute_v");
    let flip = u.determinant() * v_t.determinant() < 0.0;
    let signs = Vector3::new(1.0, 1.0, if flip { -1.0 } else { 1.0 });
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = svd.singular_values.dot(&signs) / var_s;
    let translation = mu_t - scale * (rotation * mu_s);

    let transform = SimilarityTransform {
        rotation,
        translation,
        scale,
    };
    Ok((transform.apply_mesh(source), transform))
}

/// Mean of per-vertex Euclidean distances (not RMS).
pub fn mean_vertex_error(a: &Mesh, b: &Mesh) -> Result<f64> {
    let n = a.vertex_count();
    if n != b.vertex_count() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare {} vertices with {}",
            n,
            b.vertex_count()
        )));
    }
    if n == 0 {
        return Err(Error::Degenerate("cannot compare empty meshes".into()));
    }
    let sum: f64 = (0..n).map(|i| (a.vertex(i) - b.vertex(i)).norm()).sum();
    Ok(sum / n as f64)
}

/// The evaluation metric: mean vertex distance after aligning the estimate
/// to the ground truth with a similarity transform.
pub fn aligned_surface_error(estimate: &Mesh, truth: &Mesh) -> Result<f64> {
    let (aligned, _) = procrustes_align(estimate, truth)?;
    mean_vertex_error(&aligned, truth)
}

/// Fitting methods the sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Pose-free baseline: the mean shape aligned to the truth.
    MeanShape,
    LandmarksOnly,
    Icef,
    Hard,
    Soft,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MeanShape,
        Method::LandmarksOnly,
        Method::Icef,
        Method::Hard,
        Method::Soft,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::MeanShape => "mean-shape",
            Method::LandmarksOnly => "landmarks-only",
            Method::Icef => "icef",
            Method::Hard => "hard",
            Method::Soft => "soft",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method `{s}`; expected one of mean-shape, landmarks-only, icef, hard, soft"
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-method solver settings shared by every scene of a sweep.
#[derive(Debug, Clone)]
pub struct MethodOptions {
    pub landmark_fit: FitOptions,
    pub icef: IcefOptions,
    pub hard: HybridOptions,
    pub soft: SoftFitConfig,
    /// Gradient threshold for the edge set fed to icef and hard fitting.
    pub edge_threshold: f64,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            landmark_fit: FitOptions::default(),
            icef: IcefOptions::default(),
            hard: HybridOptions::default(),
            soft: SoftFitConfig::default(),
            edge_threshold: 0.1,
        }
    }
}

/// Outcome of one method on one scene. A failure is recorded, never
/// propagated, so a sweep keeps going when single cells go bad.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    /// Aligned surface error in model units; `None` marks a failed cell.
    pub error: Option<f64>,
    pub failure: Option<String>,
    /// Seconds, including the stages the method depends on.
    pub wall_time: f64,
    pub notes: Vec<String>,
}

impl MethodOutcome {
    fn failed(method: Method, wall_time: f64, reason: &str) -> Self {
        MethodOutcome {
            method,
            error: None,
            failure: Some(reason.to_string()),
            wall_time,
            notes: Vec::new(),
        }
    }
}

/// Runs the requested methods on one scene against its ground truth.
///
/// `landmarks` is passed separately from the scene so callers can feed a
/// noise-perturbed copy. Stages chain the way the methods are defined: the
/// landmark fit initializes everything downstream, closest-edge fitting
/// refines it, and the hard hybrid refinement starts from the closest-edge
/// result while the soft one starts from the landmark fit. Each shared
/// stage is computed once, and its cost is included in the wall time of
/// every method that depends on it.
pub fn evaluate_scene(
    model: &ShapeModel,
    scene: &SyntheticScene,
    landmarks: &LandmarkSet,
    methods: &[Method],
    options: &MethodOptions,
) -> Vec<MethodOutcome> {
    let truth = match scene.truth_mesh(model) {
        Ok(mesh) => mesh,
        Err(e) => {
            let reason = format!("ground truth mesh: {e}");
            return methods
                .iter()
                .map(|&m| MethodOutcome::failed(m, 0.0, &reason))
                .collect();
        }
    };

    let needs_init = methods.iter().any(|m| *m != Method::MeanShape);
    let needs_edges = methods
        .iter()
        .any(|m| matches!(m, Method::Icef | Method::Hard));

    let init_start = Instant::now();
    let init = needs_init.then(|| fit_landmarks(model, landmarks, &options.landmark_fit));
    let init_time = init_start.elapsed().as_secs_f64();

    let edge_start = Instant::now();
    let edges = needs_edges.then(|| gradient_edges(&scene.image, options.edge_threshold));
    let edge_time = edge_start.elapsed().as_secs_f64();

    let icef_start = Instant::now();
    let icef = needs_edges.then(|| {
        with_init_and_edges(&init, &edges).and_then(|(fit, edges)| {
            icef_fit(model, landmarks, edges, (&fit.alpha, &fit.pose), &options.icef)
        })
    });
    let icef_time = icef_start.elapsed().as_secs_f64();

    let score = |alpha: &ShapeCoefficients| -> Result<f64> {
        let estimate = model.instantiate(alpha)?;
        aligned_surface_error(&estimate, &truth)
    };

    let mut outcomes = Vec::with_capacity(methods.len());
    for &method in methods {
        let run = |base: f64| -> (Result<(f64, Vec<String>)>, f64) {
            let start = Instant::now();
            let outcome = match method {
                Method::MeanShape => {
                    score(&ShapeCoefficients::zeros(model.component_count()))
                        .map(|e| (e, Vec::new()))
                }
                Method::LandmarksOnly => init.as_ref().unwrap().as_ref().map_err(clone_error).and_then(
                    |fit| score(&fit.alpha).map(|e| (e, Vec::new())),
                ),
                Method::Icef => icef.as_ref().unwrap().as_ref().map_err(clone_error).and_then(
                    |fit| {
                        let notes = fit.to_result().notes;
                        score(&fit.alpha).map(|e| (e, notes))
                    },
                ),
                Method::Hard => icef.as_ref().unwrap().as_ref().map_err(clone_error).and_then(
                    |fit| {
                        let edges = edges.as_ref().unwrap().as_ref().map_err(clone_error)?;
                        let result = hybrid_fit_hard(
                            model,
                            landmarks,
                            edges,
                            (&fit.alpha, &fit.pose),
                            &options.hard,
                        )?;
                        score(&result.coefficients()).map(|e| (e, result.notes))
                    },
                ),
                Method::Soft => init.as_ref().unwrap().as_ref().map_err(clone_error).and_then(
                    |fit| {
                        let result = hybrid_fit_soft(
                            model,
                            landmarks,
                            &scene.image,
                            (&fit.alpha, &fit.pose),
                            &options.soft,
                        )?;
                        score(&result.coefficients()).map(|e| (e, result.notes))
                    },
                ),
            };
            (outcome, base + start.elapsed().as_secs_f64())
        };

        let base = match method {
            Method::MeanShape => 0.0,
            Method::LandmarksOnly | Method::Soft => init_time,
            Method::Icef | Method::Hard => init_time + edge_time + icef_time,
        };
        let (outcome, wall_time) = run(base);
        outcomes.push(match outcome {
            Ok((error, notes)) => MethodOutcome {
                method,
                error: Some(error),
                failure: None,
                wall_time,
                notes,
            },
            Err(e) => MethodOutcome::failed(method, wall_time, &e.to_string()),
        });
    }
    outcomes
}

/// Errors are not `Clone`; sharing one init result across methods needs a
/// value copy, and the message is all downstream cells report anyway.
fn clone_error(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

fn with_init_and_edges<'a>(
    init: &'a Option<Result<crate::landmark_fit::LandmarkFit>>,
    edges: &'a Option<Result<crate::edgemap::EdgeSet>>,
) -> Result<(&'a crate::landmark_fit::LandmarkFit, &'a crate::edgemap::EdgeSet)> {
    let fit = init.as_ref().unwrap().as_ref().map_err(clone_error)?;
    let edges = edges.as_ref().unwrap().as_ref().map_err(clone_error)?;
    Ok((fit, edges))
}

/// Which variable the sweep columns run over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Columns are yaw angles; landmarks are noiseless.
    Yaw,
    /// Columns are noise sigmas; every configured yaw contributes to each
    /// cell, and all sigmas share one noise realization per scene.
    Noise,
}

impl Sweep {
    pub fn column_label(&self) -> &'static str {
        match self {
            Sweep::Yaw => "yaw",
            Sweep::Noise => "sigma",
        }
    }
}

/// One method run on one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scene_id: String,
    pub method: Method,
    /// Sweep column value: yaw degrees or noise sigma.
    pub column: f64,
    pub subject: usize,
    /// Aligned surface error in model units; `None` marks a failed cell.
    pub error: Option<f64>,
    pub failure: Option<String>,
    pub wall_time: f64,
    pub notes: Vec<String>,
}

/// Sweep results: rows per method, columns per yaw angle or sigma, plus a
/// mean column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsTable {
    pub sweep: Sweep,
    pub columns: Vec<f64>,
    pub methods: Vec<Method>,
    pub records: Vec<ExperimentRecord>,
}

impl ResultsTable {
    /// Mean error over every scored record in the cell (all subjects, and
    /// for noise sweeps all yaw angles). `None` when the cell is empty.
    pub fn cell_mean(&self, method: Method, column: f64) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in &self.records {
            if r.method == method && r.column == column {
                if let Some(e) = r.error {
                    sum += e;
                    count += 1;
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// Arithmetic mean of the populated column means.
    pub fn overall_mean(&self, method: Method) -> Option<f64> {
        let cells: Vec<f64> = self
            .columns
            .iter()
            .filter_map(|&c| self.cell_mean(method, c))
            .collect();
        (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
    }

    /// One row per record: `method,angle_or_sigma,subject,error,walltime`.
    /// A failed cell leaves the error field empty.
    pub fn detail_csv(&self) -> String {
        let mut out = String::from("method,angle_or_sigma,subject,error,walltime\n");
        for r in &self.records {
            let error = r.error.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method, r.column, r.subject, error, r.wall_time
            ));
        }
        out
    }

    /// One row per method with per-column cell means and the mean column.
    /// Contains no timing, so repeated runs of one configuration produce
    /// identical bytes.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method");
        for c in &self.columns {
            out.push_str(&format!(",{c}"));
        }
        out.push_str(",mean\n");
        for &method in &self.methods {
            out.push_str(method.name());
            for &c in &self.columns {
                match self.cell_mean(method, c) {
                    Some(e) => out.push_str(&format!(",{e}")),
                    None => out.push(','),
                }
            }
            match self.overall_mean(method) {
                Some(e) => out.push_str(&format!(",{e}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    /// Gnuplot-ready columns: the sweep value then one cell mean per
    /// method, with empty cells as `nan`.
    pub fn dat(&self) -> String {
        let mut out = format!("# {}", self.sweep.column_label());
        for m in &self.methods {
            out.push_str(&format!(" {}", m.name()));
        }
        out.push('\n');
        for &c in &self.columns {
            out.push_str(&format!("{c}"));
            for &m in &self.methods {
                match self.cell_mean(m, c) {
                    Some(e) => out.push_str(&format!(" {e}")),
                    None => out.push_str(" nan"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_detail_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.detail_csv())
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.summary_csv())
    }

    pub fn write_dat(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.dat())
    }
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// splitmix64 finalizer over the base seed and per-scene indices, so scene
/// streams are decorrelated but fully determined by the protocol seed.
fn scene_seed(base: u64, tag: u64, subject: u64, angle_index: u64) -> u64 {
    let mut z = base
        ^ tag.wrapping_mul(0x9E3779B97F4A7C15)
        ^ subject.wrapping_mul(0xBF58476D1CE4E5B9)
        ^ angle_index.wrapping_mul(0x94D049BB133111EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const RENDER_TAG: u64 = 1;
const NOISE_TAG: u64 = 2;

/// Runs the full sweep: renders subjects at every yaw, fits every requested
/// method, and scores against ground truth.
///
/// Subjects are sampled out of the component span (coefficients plus an
/// orthogonal residual field), so every method faces a representation
/// floor. Scenes run in parallel; records keep a deterministic order
/// (angle-major, then subject, then sigma, then method) regardless of
/// completion order, and per-scene failures become empty cells instead of
/// aborting the sweep.
pub fn run_protocol(
    model: &ShapeModel,
    config: &ProtocolConfig,
    sweep: Sweep,
    methods: &[Method],
    image_size: usize,
    options: &MethodOptions,
) -> Result<ResultsTable> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    let mut unique = Vec::new();
    for &m in methods {
        if !unique.contains(&m) {
            unique.push(m);
        }
    }
    if sweep == Sweep::Noise && config.noise_sigmas.is_empty() {
        return Err(Error::InvalidArgument(
            "noise sweep needs at least one sigma".into(),
        ));
    }

    use rand::SeedableRng;
    let mut subject_rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let subjects: Vec<crate::synth::Subject> = (0..config.subjects)
        .map(|_| crate::synth::sample_subject(model, &mut subject_rng))
        .collect();

    struct Job {
        angle_index: usize,
        angle: f64,
        subject: usize,
    }
    let mut jobs = Vec::new();
    for (angle_index, &angle) in config.yaw_angles.iter().enumerate() {
        for subject in 0..config.subjects {
            jobs.push(Job {
                angle_index,
                angle,
                subject,
            });
        }
    }

    let sigmas: &[f64] = match sweep {
        Sweep::Yaw => &[],
        Sweep::Noise => &config.noise_sigmas,
    };

    let per_job: Vec<Vec<ExperimentRecord>> = jobs
        .par_iter()
        .map(|job| {
            let render_seed = scene_seed(config.seed, RENDER_TAG, job.subject as u64, job.angle_index as u64);
            let noise_seed = scene_seed(config.seed, NOISE_TAG, job.subject as u64, job.angle_index as u64);
            let scene = render_subject(
                model,
                &subjects[job.subject],
                job.angle,
                image_size,
                render_seed,
            );

            let mut records = Vec::new();
            let mut push_scene = |scene_id: String, column: f64, outcomes: Vec<MethodOutcome>| {
                for o in outcomes {
                    records.push(ExperimentRecord {
                        scene_id: scene_id.clone(),
                        method: o.method,
                        column,
                        subject: job.subject,
                        error: o.error,
                        failure: o.failure,
                        wall_time: o.wall_time,
                        notes: o.notes,
                    });
                }
            };
            let failed_all = |reason: &str| -> Vec<MethodOutcome> {
                unique
                    .iter()
                    .map(|&m| MethodOutcome::failed(m, 0.0, reason))
                    .collect()
            };

            match sweep {
                Sweep::Yaw => {
                    let scene_id = format!("subj{}_yaw{}", job.subject, job.angle);
                    let outcomes = match &scene {
                        Ok(s) => evaluate_scene(model, s, &s.landmarks, &unique, options),
                        Err(e) => failed_all(&format!("scene generation: {e}")),
                    };
                    push_scene(scene_id, job.angle, outcomes);
                }
                Sweep::Noise => {
                    for &sigma in sigmas {
                        let scene_id =
                            format!("subj{}_yaw{}_sigma{}", job.subject, job.angle, sigma);
                        let outcomes = match &scene {
                            Ok(s) => match add_landmark_noise(&s.landmarks, sigma, noise_seed) {
                                Ok(noised) => {
                                    evaluate_scene(model, s, &noised, &unique, options)
                                }
                                Err(e) => failed_all(&format!("landmark noise: {e}")),
                            },
                            Err(e) => failed_all(&format!("scene generation: {e}")),
                        };
                        push_scene(scene_id, sigma, outcomes);
                    }
                }
            }
            records
        })
        .collect();

    let columns = match sweep {
        Sweep::Yaw => config.yaw_angles.clone(),
        Sweep::Noise => config.noise_sigmas.clone(),
    };
    Ok(ResultsTable {
        sweep,
        columns,
        methods: unique,
        records: per_job.into_iter().flatten().collect(),
    })
}
