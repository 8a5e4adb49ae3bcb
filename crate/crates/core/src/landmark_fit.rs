//! Pose and shape from labelled 2D landmarks.
//!
//! A landmark ties a model vertex to an observed pixel. Fitting runs in
//! three stages: closed-form pose from the POS linear system, alternation
//! between nonlinear pose refinement and a box-constrained linear shape
//! step, and a final joint nonlinear refinement over shape and pose. Every
//! stage only accepts improvements, so the reprojection energy is
//! non-increasing across the stage sequence.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector2, Vector3};

use crate::camera::{self, AxisAnglePose, Pose};
use crate::error::{Error, Result};
use crate::model::{ShapeCoefficients, ShapeModel};
use crate::solvers::{bvls, lm};

/// One observed point: a model vertex and where it appears in the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub vertex: u32,
    pub position: Vector2<f64>,
}

/// Collection of landmarks with distinct vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn new(entries: Vec<Landmark>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for lm in &entries {
            if !seen.insert(lm.vertex) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate landmark vertex {}",
                    lm.vertex
                )));
            }
        }
        Ok(LandmarkSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Landmark] {
        &self.entries
    }

    /// Reads `vertexIndex,x,y` lines. `#` starts a comment; a header line
    /// is recognized by a non-numeric first field and skipped.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
        let mut entries = Vec::new();
        let mut first_data_line = true;
        for (line_no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    &name,
                    "row",
                    format!("line {}: expected 3 fields, got {}", line_no + 1, fields.len()),
                ));
            }
            let vertex = match fields[0].parse::<u32>() {
                Ok(v) => v,
                Err(_) if first_data_line => {
                    // Header row such as `vertexIndex,x,y`.
                    first_data_line = false;
                    continue;
                }
                Err(_) => {
                    return Err(Error::parse(
                        &name,
                        "vertexIndex",
                        format!("line {}: `{}` is not a vertex index", line_no + 1, fields[0]),
                    ));
                }
            };
            first_data_line = false;
            let x = fields[1].parse::<f64>().map_err(|_| {
                Error::parse(&name, "x", format!("line {}: `{}`", line_no + 1, fields[1]))
            })?;
            let y = fields[2].parse::<f64>().map_err(|_| {
                Error::parse(&name, "y", format!("line {}: `{}`", line_no + 1, fields[2]))
            })?;
            entries.push(Landmark {
                vertex,
                position: Vector2::new(x, y),
            });
        }
        LandmarkSet::new(entries)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("vertexIndex,x,y\n");
        for lm in &self.entries {
            text.push_str(&format!("{},{},{}\n", lm.vertex, lm.position.x, lm.position.y));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Stage controls for landmark fitting.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Shape coefficients are confined to `|a_i| <= hyperbox_k * sqrt(var_i)`.
    pub hyperbox_k: f64,
    /// Rounds of {pose refine, linear shape} alternation.
    pub alternation_iters: usize,
    /// Iteration cap for each nonlinear solve.
    pub nonlinear_max_iters: usize,
    /// Step-norm tolerance for the nonlinear solves.
    pub convergence_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            hyperbox_k: 3.0,
            alternation_iters: 5,
            nonlinear_max_iters: 200,
            convergence_tol: 1e-8,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.hyperbox_k > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "hyperbox_k must be positive, got {}",
                self.hyperbox_k
            )));
        }
        if self.alternation_iters < 1 || self.nonlinear_max_iters < 1 {
            return Err(Error::InvalidArgument(
                "iteration counts must be at least 1".into(),
            ));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "convergence_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean squared reprojection error over the landmark set. The mean (rather
/// than the sum) keeps the value comparable across landmark counts.
pub fn landmark_energy(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    alpha: &ShapeCoefficients,
    pose: &Pose,
) -> Result<f64> {
    if landmarks.is_empty() {
        return Err(Error::InvalidArgument("landmark set is empty".into()));
    }
    if alpha.len() != model.component_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a model with {} components",
            alpha.len(),
            model.component_count()
        )));
    }
    let mut total = 0.0;
    for lm in landmarks.entries() {
        let (sub, mean) = model.vertex_submatrix(lm.vertex as usize)?;
        let v = &sub * &alpha.0 + mean;
        total += (camera::sop(&v, pose) - lm.position).norm_squared();
    }
    Ok(total / landmarks.len() as f64)
}

const POS_RANK_TOL: f64 = 1e-10;

/// Closed-form scaled orthographic pose from 3D-2D point pairs.
///
/// Solves the stacked linear system for the two scaled rotation rows plus
/// translation, averages the row norms into the scale, and projects the row
/// stack onto the rotation group via SVD. The result is always a proper
/// rotation; configurations that leave the system rank deficient (collinear
/// points) are rejected.
pub fn estimate_pose_pos(points3d: &[Vector3<f64>], points2d: &[Vector2<f64>]) -> Result<Pose> {
    if points3d.len() != points2d.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} 3d points vs {} 2d points",
            points3d.len(),
            points2d.len()
        )));
    }
    let l = points3d.len();
    if l < 4 {
        return Err(Error::InvalidArgument(format!(
            "pose estimation needs at least 4 point pairs, got {l}"
        )));
    }

    let mut a = DMatrix::zeros(2 * l, 8);
    let mut d = DVector::zeros(2 * l);
    for i in 0..l {
        let p = points3d[i];
        a[(2 * i, 0)] = p.x;
        a[(2 * i, 1)] = p.y;
        a[(2 * i, 2)] = p.z;
        a[(2 * i, 3)] = 1.0;
        a[(2 * i + 1, 4)] = p.x;
        a[(2 * i + 1, 5)] = p.y;
        a[(2 * i + 1, 6)] = p.z;
        a[(2 * i + 1, 7)] = 1.0;
        d[2 * i] = points2d[i].x;
        d[2 * i + 1] = points2d[i].y;
    }

    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sigma_min > POS_RANK_TOL * sigma_max) {
        return Err(Error::Degenerate(
            "point configuration leaves the pose system rank deficient".into(),
        ));
    }
    let k = svd
        .solve(&d, 0.0)
        .map_err(|m| Error::Degenerate(format!("pose system solve failed: {m}")))?;

    let r1 = Vector3::new(k[0], k[1], k[2]);
    let r2 = Vector3::new(k[4], k[5], k[6]);
    let scale = (r1.norm() + r2.norm()) / 2.0;
    if !(scale > 1e-12) {
        return Err(Error::Degenerate(
            "recovered projection scale is zero".into(),
        ));
    }
    let translation = Vector2::new(k[3] / scale, k[7] / scale);

    let r3 = r1.cross(&r2);
    let stack = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    let svd3 = stack.svd(true, true);
    let mut u = svd3.u.expect("svd with u requested");
    let v_t = svd3.v_t.expect("svd with v_t requested");
    let mut rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        let flipped = -u.row(2);
        u.set_row(2, &flipped);
        rotation = u * v_t;
    }
    Pose::new(rotation, translation, scale)
}

/// Box-constrained linear shape estimate at a fixed pose.
pub fn estimate_shape_lls(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    pose: &Pose,
    hyperbox_k: f64,
) -> Result<ShapeCoefficients> {
    if landmarks.is_empty() {
        return Err(Error::InvalidArgument("landmark set is empty".into()));
    }
    if !(hyperbox_k > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "hyperbox_k must be positive, got {hyperbox_k}"
        )));
    }
    let weight = (1.0 / landmarks.len() as f64).sqrt();
    let terms = landmarks
        .entries()
        .iter()
        .map(|lm| point_term(model, lm.vertex, lm.position, weight))
        .collect::<Result<Vec<_>>>()?;
    shape_step(model, &terms, pose, hyperbox_k)
}

/// Result of a landmark fit with per-stage energies.
#[derive(Debug, Clone)]
pub struct LandmarkFit {
    pub alpha: ShapeCoefficients,
    pub pose: Pose,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// Energy at the initial pose with zero (or supplied) shape.
    pub initial_energy: f64,
    /// Energy after each alternation round.
    pub alternation_energies: Vec<f64>,
    /// Energy after the joint nonlinear stage.
    pub final_energy: f64,
    pub nonlinear_iterations: usize,
}

/// Full landmark fit: POS initialization on the mean shape, alternation,
/// joint nonlinear refinement.
pub fn fit_landmarks(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    options: &FitOptions,
) -> Result<LandmarkFit> {
    let targets: Vec<(u32, Vector2<f64>)> = landmarks
        .entries()
        .iter()
        .map(|lm| (lm.vertex, lm.position))
        .collect();
    fit_correspondences(model, &targets, options, None)
}

/// Shared fit driver over explicit vertex-to-pixel correspondences. With
/// `init` the supplied estimate replaces the POS stage, which lets callers
/// refit with extra pseudo-landmarks without discarding their current state.
pub(crate) fn fit_correspondences(
    model: &ShapeModel,
    targets: &[(u32, Vector2<f64>)],
    options: &FitOptions,
    init: Option<(&ShapeCoefficients, &Pose)>,
) -> Result<LandmarkFit> {
    options.validate()?;
    if targets.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "fitting needs at least 4 correspondences, got {}",
            targets.len()
        )));
    }
    let s_count = model.component_count();
    let weight = (1.0 / targets.len() as f64).sqrt();
    let terms = targets
        .iter()
        .map(|&(vertex, target)| point_term(model, vertex, target, weight))
        .collect::<Result<Vec<_>>>()?;

    let (mut alpha, mut pose) = match init {
        Some((alpha, pose)) => {
            if alpha.len() != s_count {
                return Err(Error::DimensionMismatch(format!(
                    "{} coefficients for a model with {s_count} components",
                    alpha.len()
                )));
            }
            (alpha.0.clone(), pose.clone())
        }
        None => {
            let p3: Vec<Vector3<f64>> = targets
                .iter()
                .map(|&(v, _)| model.mean_vertex(v as usize))
                .collect();
            let p2: Vec<Vector2<f64>> = targets.iter().map(|&(_, q)| q).collect();
            (DVector::zeros(s_count), estimate_pose_pos(&p3, &p2)?)
        }
    };

    let mut diagnostics = FitDiagnostics {
        initial_energy: term_energy(&terms, &alpha, &pose),
        alternation_energies: Vec::with_capacity(options.alternation_iters),
        final_energy: 0.0,
        nonlinear_iterations: 0,
    };
    let s_floor = pose.scale * 1e-6;

    for _ in 0..options.alternation_iters {
        pose = refine_pose(&terms, &alpha, &pose, options, s_floor);
        alpha = shape_step(model, &terms, &pose, options.hyperbox_k)?.0;
        diagnostics
            .alternation_energies
            .push(term_energy(&terms, &alpha, &pose));
    }

    let std_devs = model.std_devs();
    let problem = PoseShapeProblem {
        terms: &terms,
        std_devs: &std_devs,
        prior_weight: 0.0,
    };
    let x0 = pack_joint(&alpha, &pose.to_axis_angle());
    let (lower, upper) = joint_bounds(&std_devs, options.hyperbox_k, s_floor);
    let lm_result = lm::minimize(
        &problem,
        &x0,
        &lower,
        &upper,
        &lm::LmOptions {
            max_iterations: options.nonlinear_max_iters,
            step_tol: options.convergence_tol,
            ..Default::default()
        },
    );
    let (alpha, aa) = unpack_joint(&lm_result.x, s_count);
    let pose = aa.to_pose();
    diagnostics.final_energy = term_energy(&terms, &alpha, &pose);
    diagnostics.nonlinear_iterations = lm_result.iterations;
    Ok(LandmarkFit {
        alpha: ShapeCoefficients(alpha),
        pose,
        diagnostics,
    })
}

/// One correspondence prepared for repeated evaluation: the vertex's
/// component rows, mean position, image target, and residual weight.
#[derive(Debug, Clone)]
pub(crate) struct PointTerm {
    pub submatrix: Matrix3xX<f64>,
    pub mean: Vector3<f64>,
    pub target: Vector2<f64>,
    pub weight: f64,
}

pub(crate) fn point_term(
    model: &ShapeModel,
    vertex: u32,
    target: Vector2<f64>,
    weight: f64,
) -> Result<PointTerm> {
    let (submatrix, mean) = model.vertex_submatrix(vertex as usize)?;
    Ok(PointTerm {
        submatrix,
        mean,
        target,
        weight,
    })
}

/// Weighted squared reprojection cost over the terms. Equals the mean
/// squared error when every weight is `1/sqrt(count)`.
pub(crate) fn term_energy(terms: &[PointTerm], alpha: &DVector<f64>, pose: &Pose) -> f64 {
    let mut total = 0.0;
    for term in terms {
        let v = &term.submatrix * alpha + term.mean;
        let d = camera::sop(&v, pose) - term.target;
        total += term.weight * term.weight * d.norm_squared();
    }
    total
}

fn shape_step(
    model: &ShapeModel,
    terms: &[PointTerm],
    pose: &Pose,
    hyperbox_k: f64,
) -> Result<ShapeCoefficients> {
    let s_count = model.component_count();
    let mut c = DMatrix::zeros(2 * terms.len(), s_count);
    let mut h = DVector::zeros(2 * terms.len());
    let rot = pose.rotation;
    let s = pose.scale;
    let t = pose.translation;
    for (i, term) in terms.iter().enumerate() {
        let m = rot * &term.submatrix;
        for j in 0..s_count {
            c[(2 * i, j)] = term.weight * s * m[(0, j)];
            c[(2 * i + 1, j)] = term.weight * s * m[(1, j)];
        }
        let rm = rot * term.mean;
        h[2 * i] = term.weight * (term.target.x - s * (rm.x + t.x));
        h[2 * i + 1] = term.weight * (term.target.y - s * (rm.y + t.y));
    }
    let std_devs = model.std_devs();
    let upper = std_devs.map(|sd| hyperbox_k * sd);
    let lower = -&upper;
    let solution = bvls::solve(&c, &h, &lower, &upper, bvls::DEFAULT_KKT_TOL)?;
    Ok(ShapeCoefficients(solution.x))
}

fn refine_pose(
    terms: &[PointTerm],
    alpha: &DVector<f64>,
    pose: &Pose,
    options: &FitOptions,
    s_floor: f64,
) -> Pose {
    let points: Vec<(Vector3<f64>, Vector2<f64>, f64)> = terms
        .iter()
        .map(|term| {
            let v = &term.submatrix * alpha + term.mean;
            (v, term.target, term.weight)
        })
        .collect();
    let problem = PoseOnlyProblem { points: &points };
    let aa = pose.to_axis_angle();
    let x0 = DVector::from_vec(vec![
        aa.rotation.x,
        aa.rotation.y,
        aa.rotation.z,
        aa.translation.x,
        aa.translation.y,
        aa.scale,
    ]);
    let mut lower = DVector::repeat(6, f64::NEG_INFINITY);
    let upper = DVector::repeat(6, f64::INFINITY);
    lower[5] = s_floor;
    let result = lm::minimize(
        &problem,
        &x0,
        &lower,
        &upper,
        &lm::LmOptions {
            max_iterations: options.nonlinear_max_iters,
            step_tol: options.convergence_tol,
            ..Default::default()
        },
    );
    AxisAnglePose {
        rotation: Vector3::new(result.x[0], result.x[1], result.x[2]),
        translation: Vector2::new(result.x[3], result.x[4]),
        scale: result.x[5],
    }
    .to_pose()
}

/// Parameter layout for the joint problems: `[alpha (S), r (3), t (2), s]`.
pub(crate) fn pack_joint(alpha: &DVector<f64>, aa: &AxisAnglePose) -> DVector<f64> {
    let s_count = alpha.len();
    let mut x = DVector::zeros(s_count + 6);
    x.rows_mut(0, s_count).copy_from(alpha);
    x[s_count] = aa.rotation.x;
    x[s_count + 1] = aa.rotation.y;
    x[s_count + 2] = aa.rotation.z;
    x[s_count + 3] = aa.translation.x;
    x[s_count + 4] = aa.translation.y;
    x[s_count + 5] = aa.scale;
    x
}

pub(crate) fn unpack_joint(x: &DVector<f64>, s_count: usize) -> (DVector<f64>, AxisAnglePose) {
    let alpha = x.rows(0, s_count).into_owned();
    let aa = AxisAnglePose {
        rotation: Vector3::new(x[s_count], x[s_count + 1], x[s_count + 2]),
        translation: Vector2::new(x[s_count + 3], x[s_count + 4]),
        scale: x[s_count + 5],
    };
    (alpha, aa)
}

pub(crate) fn joint_bounds(
    std_devs: &DVector<f64>,
    hyperbox_k: f64,
    s_floor: f64,
) -> (DVector<f64>, DVector<f64>) {
    let s_count = std_devs.len();
    let mut lower = DVector::repeat(s_count + 6, f64::NEG_INFINITY);
    let mut upper = DVector::repeat(s_count + 6, f64::INFINITY);
    for j in 0..s_count {
        upper[j] = hyperbox_k * std_devs[j];
        lower[j] = -upper[j];
    }
    lower[s_count + 5] = s_floor;
    (lower, upper)
}

/// Weighted reprojection residuals over shape and pose, with optional
/// Tikhonov rows `prior_weight * alpha_j / std_j` appended.
pub(crate) struct PoseShapeProblem<'a> {
    pub terms: &'a [PointTerm],
    pub std_devs: &'a DVector<f64>,
    pub prior_weight: f64,
}

impl PoseShapeProblem<'_> {
    fn prior_rows(&self) -> usize {
        if self.prior_weight > 0.0 {
            self.std_devs.len()
        } else {
            0
        }
    }
}

impl lm::LeastSquaresProblem for PoseShapeProblem<'_> {
    fn residual_count(&self) -> usize {
        2 * self.terms.len() + self.prior_rows()
    }

    fn parameter_count(&self) -> usize {
        self.std_devs.len() + 6
    }

    fn residuals(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let s_count = self.std_devs.len();
        let (alpha, aa) = unpack_joint(x, s_count);
        let rot = camera::axis_angle_to_matrix(&aa.rotation);
        for (i, term) in self.terms.iter().enumerate() {
            let v = &term.submatrix * &alpha + term.mean;
            let u = rot * v;
            out[2 * i] = term.weight * (aa.scale * (u.x + aa.translation.x) - term.target.x);
            out[2 * i + 1] = term.weight * (aa.scale * (u.y + aa.translation.y) - term.target.y);
        }
        let base = 2 * self.terms.len();
        for j in 0..self.prior_rows() {
            out[base + j] = self.prior_weight * alpha[j] / self.std_devs[j];
        }
    }

    fn jacobian(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let s_count = self.std_devs.len();
        let (alpha, aa) = unpack_joint(x, s_count);
        let rot = camera::axis_angle_to_matrix(&aa.rotation);
        for (i, term) in self.terms.iter().enumerate() {
            let v = &term.submatrix * &alpha + term.mean;
            fill_projection_rows(out, 2 * i, term.weight, &term.submatrix, &v, &aa, &rot);
        }
        let base = 2 * self.terms.len();
        for j in 0..self.prior_rows() {
            out[(base + j, j)] = self.prior_weight / self.std_devs[j];
        }
    }
}

/// Fills the two jacobian rows of one weighted reprojection residual pair
/// `w * (s((R v).xy + t) - target)` over columns `[alpha | r | t | s]`.
/// The target is constant and never appears.
pub(crate) fn fill_projection_rows(
    out: &mut DMatrix<f64>,
    row: usize,
    weight: f64,
    submatrix: &Matrix3xX<f64>,
    v: &Vector3<f64>,
    aa: &AxisAnglePose,
    rot: &Matrix3<f64>,
) {
    let s_count = out.ncols() - 6;
    let u = rot * v;
    let m = rot * submatrix;
    let dr = camera::rotate_point_jacobian(&aa.rotation, v);
    let s = aa.scale;
    let (rx, ry) = (row, row + 1);
    for j in 0..s_count {
        out[(rx, j)] = weight * s * m[(0, j)];
        out[(ry, j)] = weight * s * m[(1, j)];
    }
    for k in 0..3 {
        out[(rx, s_count + k)] = weight * s * dr[(0, k)];
        out[(ry, s_count + k)] = weight * s * dr[(1, k)];
    }
    out[(rx, s_count + 3)] = weight * s;
    out[(ry, s_count + 4)] = weight * s;
    out[(rx, s_count + 5)] = weight * (u.x + aa.translation.x);
    out[(ry, s_count + 5)] = weight * (u.y + aa.translation.y);
}

/// Reprojection residuals over pose only; 3D points are fixed.
/// Parameters are `[r (3), t (2), s]`.
pub(crate) struct PoseOnlyProblem<'a> {
    pub points: &'a [(Vector3<f64>, Vector2<f64>, f64)],
}

impl lm::LeastSquaresProblem for PoseOnlyProblem<'_> {
    fn residual_count(&self) -> usize {
        2 * self.points.len()
    }

    fn parameter_count(&self) -> usize {
        6
    }

    fn residuals(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let r = Vector3::new(x[0], x[1], x[2]);
        let rot = camera::axis_angle_to_matrix(&r);
        let (tx, ty, s) = (x[3], x[4], x[5]);
        for (i, (v, target, w)) in self.points.iter().enumerate() {
            let u = rot * v;
            out[2 * i] = w * (s * (u.x + tx) - target.x);
            out[2 * i + 1] = w * (s * (u.y + ty) - target.y);
        }
    }

    fn jacobian(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let r = Vector3::new(x[0], x[1], x[2]);
        let rot = camera::axis_angle_to_matrix(&r);
        let (tx, ty, s) = (x[3], x[4], x[5]);
        for (i, (v, _, w)) in self.points.iter().enumerate() {
            let u = rot * v;
            let dr = camera::rotate_point_jacobian(&r, v);
            let (rx, ry) = (2 * i, 2 * i + 1);
            for k in 0..3 {
                out[(rx, k)] = w * s * dr[(0, k)];
                out[(ry, k)] = w * s * dr[(1, k)];
            }
            out[(rx, 3)] = w * s;
            out[(ry, 4)] = w * s;
            out[(rx, 5)] = w * (u.x + tx);
            out[(ry, 5)] = w * (u.y + ty);
        }
    }
}
