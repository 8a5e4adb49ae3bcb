//! Edge fitting with hard correspondence.
//!
//! The edge energy pairs every projected occluding-boundary vertex with its
//! nearest image edge pixel. Two stages consume it: iterated closest-edge
//! fitting, which freezes filtered matches into pseudo-landmarks and reruns
//! the landmark fit, and a weighted nonlinear refinement of the combined
//! landmark, edge, and prior objective with the boundary set frozen per
//! round.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{self, AxisAnglePose, Pose};
use crate::contour::{occluding_boundary, BoundaryVertexSet};
use crate::edgemap::EdgeSet;
use crate::error::{Error, Result};
use crate::landmark_fit::{
    fill_projection_rows, fit_correspondences, joint_bounds, pack_joint, point_term, unpack_joint,
    FitOptions, LandmarkSet, PointTerm,
};
use crate::model::{ShapeCoefficients, ShapeModel};
use crate::solvers::lm::{self, LeastSquaresProblem};

/// Term weights of the combined objective
/// `w1 * E_lmk + w2 * E_edge + w3 * E_prior`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for HybridWeights {
    fn default() -> Self {
        HybridWeights {
            w1: 0.15,
            w2: 0.45,
            w3: 0.40,
        }
    }
}

impl HybridWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w1, self.w2, self.w3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and non-negative, got {all:?}"
            )));
        }
        if all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sum of squared standardized coefficients `sum_i (alpha_i^2 / lambda_i)`.
pub fn prior_energy(alpha: &ShapeCoefficients, variances: &DVector<f64>) -> Result<f64> {
    if alpha.len() != variances.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients against {} variances",
            alpha.len(),
            variances.len()
        )));
    }
    Ok((0..alpha.len())
        .map(|i| alpha.0[i] * alpha.0[i] / variances[i])
        .sum())
}

/// Mean squared distance from each projected boundary vertex to its nearest
/// edge pixel; the minimum over edge pixels realizes the correspondence.
pub fn edge_energy_hard(
    model: &ShapeModel,
    alpha: &ShapeCoefficients,
    pose: &Pose,
    edges: &EdgeSet,
    boundary: &BoundaryVertexSet,
) -> Result<f64> {
    if boundary.is_empty() {
        return Err(Error::EmptyBoundary(
            "edge energy needs a non-empty boundary".into(),
        ));
    }
    if edges.is_empty() {
        return Err(Error::NoEdges("edge energy needs edge pixels".into()));
    }
    let mesh = model.instantiate(alpha)?;
    let mut total = 0.0;
    for &v in boundary.indices() {
        let p = camera::sop(&mesh.vertex(v as usize), pose);
        let (_, dist) = edges.nearest(p)?;
        total += dist * dist;
    }
    Ok(total / boundary.len() as f64)
}

/// Why a correspondence pair survived or was filtered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairStatus {
    Kept,
    /// Among the worst `percentile_cut` fraction by distance.
    PercentileCut,
    /// Distance divided by scale exceeded the threshold.
    ThresholdCut,
}

/// One boundary-vertex-to-edge-pixel match.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondencePair {
    pub vertex: u32,
    pub edge_pixel: Vector2<f64>,
    /// Euclidean image distance in pixels.
    pub distance: f64,
    pub status: PairStatus,
}

/// Nearest-edge matches for every visible boundary vertex, ordered by
/// vertex index, with filter decisions recorded per pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeCorrespondences {
    pairs: Vec<CorrespondencePair>,
}

impl EdgeCorrespondences {
    pub fn pairs(&self) -> &[CorrespondencePair] {
        &self.pairs
    }

    pub fn kept(&self) -> impl Iterator<Item = &CorrespondencePair> {
        self.pairs.iter().filter(|p| p.status == PairStatus::Kept)
    }

    pub fn kept_count(&self) -> usize {
        self.kept().count()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Marks the worst `floor(percentile_cut * n)` pairs by distance, then any
/// survivor with `distance / scale > distance_threshold`. Distance ties
/// break toward the higher vertex index so the cut is deterministic.
fn filter_pairs(
    pairs: &mut [CorrespondencePair],
    percentile_cut: f64,
    distance_threshold: f64,
    scale: f64,
) {
    let cut = (percentile_cut * pairs.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        (pairs[a].distance, pairs[a].vertex)
            .partial_cmp(&(pairs[b].distance, pairs[b].vertex))
            .unwrap()
    });
    for &i in order.iter().rev().take(cut) {
        pairs[i].status = PairStatus::PercentileCut;
    }
    for pair in pairs.iter_mut() {
        if pair.status == PairStatus::Kept && pair.distance / scale > distance_threshold {
            pair.status = PairStatus::ThresholdCut;
        }
    }
}

/// Matches every visible boundary vertex of the current estimate to its
/// nearest edge pixel and applies both reliability filters. The scale
/// division makes the threshold invariant to uniform image rescaling.
pub fn icef_correspond(
    model: &ShapeModel,
    alpha: &ShapeCoefficients,
    pose: &Pose,
    edges: &EdgeSet,
    percentile_cut: f64,
    distance_threshold: f64,
) -> Result<EdgeCorrespondences> {
    if edges.is_empty() {
        return Err(Error::NoEdges("correspondence needs edge pixels".into()));
    }
    let mesh = model.instantiate(alpha)?;
    let boundary = occluding_boundary(&mesh, pose, edges.width(), edges.height())?;
    let mut pairs = Vec::with_capacity(boundary.len());
    for &v in boundary.indices() {
        let p = camera::sop(&mesh.vertex(v as usize), pose);
        let (pixel, dist) = edges.nearest(p)?;
        pairs.push(CorrespondencePair {
            vertex: v,
            edge_pixel: Vector2::new(pixel.0 as f64, pixel.1 as f64),
            distance: dist,
            status: PairStatus::Kept,
        });
    }
    filter_pairs(&mut pairs, percentile_cut, distance_threshold, pose.scale);
    Ok(EdgeCorrespondences { pairs })
}

#[derive(Debug, Clone)]
pub struct IcefOptions {
    pub iterations: usize,
    /// Fraction of matches dropped from the worst-distance end.
    pub percentile_cut: f64,
    /// Drop matches with `distance / scale` above this.
    pub distance_threshold: f64,
    /// Options for the inner correspondence refits.
    pub fit: FitOptions,
}

impl Default for IcefOptions {
    fn default() -> Self {
        IcefOptions {
            iterations: 10,
            percentile_cut: 0.05,
            distance_threshold: 10.0,
            fit: FitOptions::default(),
        }
    }
}

/// Diagnostics for one closest-edge iteration: match counts and the inner
/// fit's combined landmark plus pseudo-landmark energy before and after.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcefIteration {
    pub kept: usize,
    pub dropped: usize,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone)]
pub struct IcefFit {
    pub alpha: ShapeCoefficients,
    pub pose: Pose,
    pub iterations: Vec<IcefIteration>,
    /// True when the first iteration found no usable match and the initial
    /// estimate was returned unchanged.
    pub used_fallback: bool,
}

impl IcefFit {
    pub fn to_result(&self) -> FitResult {
        let mut result = FitResult::from_estimate("icef", &self.alpha, &self.pose);
        for (i, it) in self.iterations.iter().enumerate() {
            result.stage_energies.push(StageEnergy {
                stage: format!("iteration{i}"),
                energy: it.energy_after,
            });
            result.correspondence_counts.push(it.kept);
        }
        if self.used_fallback {
            result
                .notes
                .push("no usable edge correspondences; kept landmark-only estimate".into());
        }
        result
    }
}

/// Iterated closest-edge fitting: alternates nearest-edge correspondence
/// with a full refit on the union of true landmarks and kept edge matches.
///
/// Each inner refit starts from the current estimate and only accepts
/// improvements of its own union energy, so `energy_after` never exceeds
/// `energy_before` within an iteration. Across iterations the
/// correspondences change, so no global monotonicity is implied.
pub fn icef_fit(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    edges: &EdgeSet,
    init: (&ShapeCoefficients, &Pose),
    options: &IcefOptions,
) -> Result<IcefFit> {
    let mut alpha = init.0.clone();
    let mut pose = init.1.clone();
    let mut iterations = Vec::with_capacity(options.iterations);
    let mut used_fallback = false;

    for iteration in 0..options.iterations {
        let corr = icef_correspond(
            model,
            &alpha,
            &pose,
            edges,
            options.percentile_cut,
            options.distance_threshold,
        )?;
        if corr.kept_count() == 0 {
            used_fallback = iteration == 0;
            break;
        }
        let mut targets: Vec<(u32, Vector2<f64>)> = landmarks
            .entries()
            .iter()
            .map(|lm| (lm.vertex, lm.position))
            .collect();
        targets.extend(corr.kept().map(|p| (p.vertex, p.edge_pixel)));
        let fit = fit_correspondences(model, &targets, &options.fit, Some((&alpha, &pose)))?;
        iterations.push(IcefIteration {
            kept: corr.kept_count(),
            dropped: corr.len() - corr.kept_count(),
            energy_before: fit.diagnostics.initial_energy,
            energy_after: fit.diagnostics.final_energy,
        });
        alpha = fit.alpha;
        pose = fit.pose;
    }

    Ok(IcefFit {
        alpha,
        pose,
        iterations,
        used_fallback,
    })
}

/// The combined objective as a least-squares system. Row order: two rows
/// per landmark, two per boundary vertex, then one prior row per
/// coefficient. Landmark rows carry weight `sqrt(w1 / L)`, edge rows
/// `sqrt(w2 / |B|)`, prior rows `sqrt(w3)`, so the summed squared residuals
/// equal `w1 E_lmk + w2 E_edge + w3 E_prior`.
///
/// Edge targets are re-queried from the edge set at every evaluation, which
/// keeps the cost equal to the true minimum-distance energy while the
/// jacobian treats the current match as fixed. A frozen variant pins the
/// targets for smoothness-dependent checks.
pub struct HardObjective<'a> {
    landmark_terms: Vec<PointTerm>,
    edge_terms: Vec<PointTerm>,
    /// `Some` re-queries nearest edges per evaluation; `None` uses the
    /// frozen targets stored in `edge_terms`.
    edges: Option<&'a EdgeSet>,
    std_devs: DVector<f64>,
    prior_weight: f64,
}

impl<'a> HardObjective<'a> {
    /// Builds the live objective for the given frozen boundary set.
    pub fn new(
        model: &ShapeModel,
        landmarks: &LandmarkSet,
        edges: &'a EdgeSet,
        boundary: &BoundaryVertexSet,
        weights: &HybridWeights,
    ) -> Result<Self> {
        weights.validate()?;
        if weights.w2 > 0.0 && !boundary.is_empty() && edges.is_empty() {
            return Err(Error::NoEdges("edge term needs edge pixels".into()));
        }
        let landmark_terms = landmark_terms(model, landmarks, weights.w1)?;
        let edge_terms = edge_terms(model, boundary, weights.w2)?;
        Ok(HardObjective {
            landmark_terms,
            edges: if edge_terms.is_empty() {
                None
            } else {
                Some(edges)
            },
            edge_terms,
            std_devs: model.std_devs(),
            prior_weight: weights.w3.sqrt(),
        })
    }

    /// Like [`HardObjective::new`] but resolves each boundary vertex's
    /// nearest edge at `(alpha, pose)` once and keeps it fixed, making the
    /// objective smooth.
    pub fn frozen(
        model: &ShapeModel,
        landmarks: &LandmarkSet,
        edges: &EdgeSet,
        boundary: &BoundaryVertexSet,
        weights: &HybridWeights,
        alpha: &ShapeCoefficients,
        pose: &Pose,
    ) -> Result<HardObjective<'static>> {
        weights.validate()?;
        let landmark_terms = landmark_terms(model, landmarks, weights.w1)?;
        let mut edge_terms = edge_terms(model, boundary, weights.w2)?;
        if !edge_terms.is_empty() {
            let mesh = model.instantiate(alpha)?;
            for (term, &v) in edge_terms.iter_mut().zip(boundary.indices()) {
                let p = camera::sop(&mesh.vertex(v as usize), pose);
                let (pixel, _) = edges.nearest(p)?;
                term.target = Vector2::new(pixel.0 as f64, pixel.1 as f64);
            }
        }
        Ok(HardObjective {
            landmark_terms,
            edge_terms,
            edges: None,
            std_devs: model.std_devs(),
            prior_weight: weights.w3.sqrt(),
        })
    }

    /// Combined energy at a parameter vector; equals the summed squared
    /// residuals.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        lm::cost(self, x)
    }
}

pub(crate) fn landmark_terms(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    w1: f64,
) -> Result<Vec<PointTerm>> {
    if w1 <= 0.0 || landmarks.is_empty() {
        return Ok(Vec::new());
    }
    let weight = (w1 / landmarks.len() as f64).sqrt();
    landmarks
        .entries()
        .iter()
        .map(|lm| point_term(model, lm.vertex, lm.position, weight))
        .collect()
}

pub(crate) fn edge_terms(
    model: &ShapeModel,
    boundary: &BoundaryVertexSet,
    w2: f64,
) -> Result<Vec<PointTerm>> {
    if w2 <= 0.0 || boundary.is_empty() {
        return Ok(Vec::new());
    }
    let weight = (w2 / boundary.len() as f64).sqrt();
    boundary
        .indices()
        .iter()
        .map(|&v| point_term(model, v, Vector2::zeros(), weight))
        .collect()
}

impl lm::LeastSquaresProblem for HardObjective<'_> {
    fn residual_count(&self) -> usize {
        2 * (self.landmark_terms.len() + self.edge_terms.len()) + self.prior_rows()
    }

    fn parameter_count(&self) -> usize {
        self.std_devs.len() + 6
    }

    fn residuals(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let s_count = self.std_devs.len();
        let (alpha, aa) = unpack_joint(x, s_count);
        let rot = camera::axis_angle_to_matrix(&aa.rotation);
        let mut row = 0;
        for term in &self.landmark_terms {
            let v = &term.submatrix * &alpha + term.mean;
            let u = rot * v;
            out[row] = term.weight * (aa.scale * (u.x + aa.translation.x) - term.target.x);
            out[row + 1] = term.weight * (aa.scale * (u.y + aa.translation.y) - term.target.y);
            row += 2;
        }
        for term in &self.edge_terms {
            let v = &term.submatrix * &alpha + term.mean;
            let u = rot * v;
            let p = Vector2::new(
                aa.scale * (u.x + aa.translation.x),
                aa.scale * (u.y + aa.translation.y),
            );
            let target = match self.edges {
                Some(edges) => {
                    let (pixel, _) = edges.nearest(p).expect("edge set checked non-empty");
                    Vector2::new(pixel.0 as f64, pixel.1 as f64)
                }
                None => term.target,
            };
            out[row] = term.weight * (p.x - target.x);
            out[row + 1] = term.weight * (p.y - target.y);
            row += 2;
        }
        for j in 0..self.prior_rows() {
            out[row + j] = self.prior_weight * alpha[j] / self.std_devs[j];
        }
    }

    fn jacobian(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let s_count = self.std_devs.len();
        let (alpha, aa) = unpack_joint(x, s_count);
        let rot = camera::axis_angle_to_matrix(&aa.rotation);
        let mut row = 0;
        for term in self.landmark_terms.iter().chain(&self.edge_terms) {
            let v = &term.submatrix * &alpha + term.mean;
            fill_projection_rows(out, row, term.weight, &term.submatrix, &v, &aa, &rot);
            row += 2;
        }
        for j in 0..self.prior_rows() {
            out[(row + j, j)] = self.prior_weight / self.std_devs[j];
        }
    }
}

impl HardObjective<'_> {
    fn prior_rows(&self) -> usize {
        if self.prior_weight > 0.0 {
            self.std_devs.len()
        } else {
            0
        }
    }
}

#[derive(Debug, Clone)]
pub struct HybridOptions {
    pub weights: HybridWeights,
    /// Boundary recomputations.
    pub outer_rounds: usize,
    /// Optimizer iterations per round.
    pub inner_iterations: usize,
    pub hyperbox_k: f64,
    pub step_tol: f64,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            weights: HybridWeights::default(),
            outer_rounds: 5,
            inner_iterations: 30,
            hyperbox_k: 3.0,
            step_tol: 1e-8,
        }
    }
}

/// Per-stage energy snapshot inside a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEnergy {
    pub stage: String,
    pub energy: f64,
}

/// Serializable result of any fitting method: the estimate plus per-stage
/// energies and correspondence counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub alpha: Vec<f64>,
    /// Rotation as axis-angle.
    pub rotation: [f64; 3],
    pub translation: [f64; 2],
    pub scale: f64,
    pub stage_energies: Vec<StageEnergy>,
    pub correspondence_counts: Vec<usize>,
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn from_estimate(method: &str, alpha: &ShapeCoefficients, pose: &Pose) -> Self {
        let aa = pose.to_axis_angle();
        FitResult {
            method: method.to_string(),
            alpha: alpha.0.iter().copied().collect(),
            rotation: [aa.rotation.x, aa.rotation.y, aa.rotation.z],
            translation: [aa.translation.x, aa.translation.y],
            scale: aa.scale,
            stage_energies: Vec::new(),
            correspondence_counts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn coefficients(&self) -> ShapeCoefficients {
        ShapeCoefficients(DVector::from_vec(self.alpha.clone()))
    }

    pub fn pose(&self) -> Pose {
        AxisAnglePose {
            rotation: Vector3::new(self.rotation[0], self.rotation[1], self.rotation[2]),
            translation: Vector2::new(self.translation[0], self.translation[1]),
            scale: self.scale,
        }
        .to_pose()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse(path.display().to_string(), "fit result", e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), "fit result", e.to_string()))
    }
}

/// Minimizes `w1 E_lmk + w2 E_edge + w3 E_prior` over shape and pose.
///
/// Each round freezes the occluding boundary at the current estimate,
/// optimizes for `inner_iterations`, then recomputes the boundary.
/// Recomputing can reshape the energy landscape, so per-round energies are
/// recorded but only the final comparison, with both endpoints evaluated
/// under the final boundary, is guaranteed non-increasing: if optimization
/// ends up worse there, the initial estimate is returned instead.
pub fn hybrid_fit_hard(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    edges: &EdgeSet,
    init: (&ShapeCoefficients, &Pose),
    options: &HybridOptions,
) -> Result<FitResult> {
    options.weights.validate()?;
    let s_count = model.component_count();
    if init.0.len() != s_count {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a model with {s_count} components",
            init.0.len()
        )));
    }
    let std_devs = model.std_devs();
    let s_floor = init.1.scale * 1e-6;
    let (lower, upper) = joint_bounds(&std_devs, options.hyperbox_k, s_floor);
    let x_init = pack_joint(&init.0 .0, &init.1.to_axis_angle());

    let mut x = x_init.clone();
    let mut result = FitResult::from_estimate("hard", init.0, init.1);

    for round in 0..options.outer_rounds {
        let (alpha, aa) = unpack_joint(&x, s_count);
        let pose = aa.to_pose();
        let mesh = model.instantiate(&ShapeCoefficients(alpha))?;
        let boundary = occluding_boundary(&mesh, &pose, edges.width(), edges.height())?;
        if options.weights.w2 > 0.0 && boundary.is_empty() {
            result
                .notes
                .push(format!("round {round}: empty boundary, edge term skipped"));
        }
        let objective = HardObjective::new(model, landmarks, edges, &boundary, &options.weights)?;
        if objective.residual_count() == 0 {
            result
                .notes
                .push(format!("round {round}: objective empty, round skipped"));
            result.correspondence_counts.push(boundary.len());
            continue;
        }

        let lm_result = lm::minimize(
            &objective,
            &x,
            &lower,
            &upper,
            &lm::LmOptions {
                max_iterations: options.inner_iterations,
                step_tol: options.step_tol,
                ..Default::default()
            },
        );
        if !lm_result.cost.is_finite() {
            result
                .notes
                .push(format!("round {round}: non-finite energy, aborted"));
            break;
        }
        result.stage_energies.push(StageEnergy {
            stage: format!("round{round}"),
            energy: lm_result.cost,
        });
        result.correspondence_counts.push(boundary.len());
        let step = (&lm_result.x - &x).norm();
        x = lm_result.x;
        if step < options.step_tol * (1.0 + x.norm()) {
            break;
        }
    }

    // Final safeguard comparison under the final boundary.
    let (alpha, aa) = unpack_joint(&x, s_count);
    let pose = aa.to_pose();
    let mesh = model.instantiate(&ShapeCoefficients(alpha.clone()))?;
    let boundary = occluding_boundary(&mesh, &pose, edges.width(), edges.height())?;
    let objective = HardObjective::new(model, landmarks, edges, &boundary, &options.weights)?;
    let mut final_energy = objective.energy(&x);
    let initial_energy = objective.energy(&x_init);
    if final_energy > initial_energy {
        result.notes.push(format!(
            "optimized energy {final_energy} exceeded initial {initial_energy} under the final boundary; reverted"
        ));
        x = x_init;
        final_energy = initial_energy;
    }
    result.stage_energies.push(StageEnergy {
        stage: "initial-final-boundary".into(),
        energy: initial_energy,
    });
    result.stage_energies.push(StageEnergy {
        stage: "final-final-boundary".into(),
        energy: final_energy,
    });

    let (alpha, aa) = unpack_joint(&x, s_count);
    result.alpha = alpha.iter().copied().collect();
    result.rotation = [aa.rotation.x, aa.rotation.y, aa.rotation.z];
    result.translation = [aa.translation.x, aa.translation.y];
    result.scale = aa.scale;
    Ok(result)
}
