//! Edge fitting with soft correspondence.
//!
//! Instead of pairing each boundary vertex with an explicit edge pixel, the
//! edge term samples a smooth cost surface built from multi-scale distance
//! transforms, integrating correspondence out of the objective. The outer
//! loop matches the hard fitter so the two differ only in how edges enter
//! the energy: the occluding boundary is frozen per round and the surface
//! sharpness follows the current scale.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::camera::{self, Pose};
use crate::contour::{occluding_boundary, BoundaryVertexSet};
use crate::edgemap::{
    build_distance_stack, EdgeCostSurface, GrayImage, DEFAULT_SCALES, DEFAULT_THRESHOLDS,
};
use crate::error::{Error, Result};
use crate::fit_hard::{edge_terms, landmark_terms, FitResult, HybridWeights, StageEnergy};
use crate::landmark_fit::{
    fill_projection_rows, joint_bounds, pack_joint, unpack_joint, LandmarkSet, PointTerm,
};
use crate::model::{ShapeCoefficients, ShapeModel};
use crate::solvers::lm::{self, LeastSquaresProblem};

/// Cost sharpness as a fraction of the projected model height in pixels.
const KAPPA_FRACTION: f64 = 1.0 / 20.0;

/// Below this cost a vertex counts as exactly on an edge; the square-root
/// residual's slope diverges there, so both it and its row are zeroed.
const COST_FLOOR: f64 = 1e-12;

/// Settings for [`hybrid_fit_soft`].
#[derive(Debug, Clone)]
pub struct SoftFitConfig {
    pub weights: HybridWeights,
    /// Gradient-magnitude thresholds of the cost surface.
    pub thresholds: Vec<f64>,
    /// Image pyramid scales of the cost surface.
    pub scales: Vec<f64>,
    /// Boundary and sharpness recomputations.
    pub outer_rounds: usize,
    /// Optimizer iterations per round.
    pub inner_iterations: usize,
    pub hyperbox_k: f64,
    pub step_tol: f64,
}

impl Default for SoftFitConfig {
    fn default() -> Self {
        SoftFitConfig {
            weights: HybridWeights::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            scales: DEFAULT_SCALES.to_vec(),
            outer_rounds: 5,
            inner_iterations: 30,
            hyperbox_k: 3.0,
            step_tol: 1e-8,
        }
    }
}

/// Mean cost-surface sample over the projected boundary vertices; lies in
/// [0, 1).
pub fn soft_edge_energy(
    model: &ShapeModel,
    alpha: &ShapeCoefficients,
    pose: &Pose,
    surface: &EdgeCostSurface,
    boundary: &BoundaryVertexSet,
) -> Result<f64> {
    if boundary.is_empty() {
        return Err(Error::EmptyBoundary(
            "soft edge energy needs occluding-boundary vertices".into(),
        ));
    }
    let mesh = model.instantiate(alpha)?;
    let sum: f64 = boundary
        .indices()
        .iter()
        .map(|&v| surface.sample(camera::sop(&mesh.vertex(v as usize), pose)))
        .sum();
    Ok(sum / boundary.len() as f64)
}

/// Least-squares form of `w1 E_lmk + w2 E_softedge + w3 E_prior` with the
/// boundary frozen: two rows per landmark, one row `sqrt(w2/|B|) sqrt(S)`
/// per boundary vertex, and one prior row per coefficient.
pub struct SoftObjective<'a> {
    landmark_terms: Vec<PointTerm>,
    /// Targets are unused; only the projection feeds the surface sample.
    edge_terms: Vec<PointTerm>,
    surface: Option<&'a EdgeCostSurface>,
    std_devs: DVector<f64>,
    prior_weight: f64,
}

impl<'a> SoftObjective<'a> {
    /// Builds the objective for the given frozen boundary set. Passing
    /// `None` for the surface disables the edge term regardless of `w2`.
    pub fn new(
        model: &ShapeModel,
        landmarks: &LandmarkSet,
        surface: Option<&'a EdgeCostSurface>,
        boundary: &BoundaryVertexSet,
        weights: &HybridWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let landmark_terms = landmark_terms(model, landmarks, weights.w1)?;
        let edge_terms = match surface {
            Some(_) => edge_terms(model, boundary, weights.w2)?,
            None => Vec::new(),
        };
        Ok(SoftObjective {
            landmark_terms,
            surface: if edge_terms.is_empty() { None } else { surface },
            edge_terms,
            std_devs: model.std_devs(),
            prior_weight: weights.w3.sqrt(),
        })
    }

    /// Combined energy at a parameter vector; equals the summed squared
    /// residuals.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        lm::cost(self, x)
    }

    fn prior_rows(&self) -> usize {
        if self.prior_weight > 0.0 {
            self.std_devs.len()
        } else {
            0
        }
    }
}

impl lm::LeastSquaresProblem for SoftObjective<'_> {
    fn residual_count(&self) -> usize {
        2 * self.landmark_terms.len() + self.edge_terms.len() + self.prior_rows()
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
        if let Some(surface) = self.surface {
            for term in &self.edge_terms {
                let v = &term.submatrix * &alpha + term.mean;
                let u = rot * v;
                let p = Vector2::new(
                    aa.scale * (u.x + aa.translation.x),
                    aa.scale * (u.y + aa.translation.y),
                );
                let s = surface.sample(p);
                out[row] = if s < COST_FLOOR {
                    0.0
                } else {
                    term.weight * s.sqrt()
                };
                row += 1;
            }
        }
        for j in 0..self.prior_rows() {
            out[row + j] = self.prior_weight * alpha[j] / self.std_devs[j];
        }
    }

    fn jacobian(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let s_count = self.std_devs.len();
        let n = s_count + 6;
        let (alpha, aa) = unpack_joint(x, s_count);
        let rot = camera::axis_angle_to_matrix(&aa.rotation);
        let mut row = 0;
        for term in &self.landmark_terms {
            let v = &term.submatrix * &alpha + term.mean;
            fill_projection_rows(out, row, term.weight, &term.submatrix, &v, &aa, &rot);
            row += 2;
        }
        if let Some(surface) = self.surface {
            // Scratch rows 0 and 1 hold dp/dx for the current term; the
            // chain rule contracts them with the surface gradient.
            let mut scratch = DMatrix::zeros(2, n);
            for term in &self.edge_terms {
                let v = &term.submatrix * &alpha + term.mean;
                let u = rot * v;
                let p = Vector2::new(
                    aa.scale * (u.x + aa.translation.x),
                    aa.scale * (u.y + aa.translation.y),
                );
                let (s, grad) = surface.sample_with_gradient(p);
                if s >= COST_FLOOR {
                    fill_projection_rows(&mut scratch, 0, 1.0, &term.submatrix, &v, &aa, &rot);
                    let factor = term.weight / (2.0 * s.sqrt());
                    for j in 0..n {
                        out[(row, j)] =
                            factor * (grad.x * scratch[(0, j)] + grad.y * scratch[(1, j)]);
                    }
                }
                row += 1;
            }
        }
        for j in 0..self.prior_rows() {
            out[(row + j, j)] = self.prior_weight / self.std_devs[j];
        }
    }
}

/// Minimizes `w1 E_lmk + w2 E_softedge + w3 E_prior` over shape and pose.
///
/// Each round freezes the occluding boundary, re-derives the cost surface
/// with sharpness `kappa = scale * model height * KAPPA_FRACTION`, and
/// optimizes for `inner_iterations`. The multi-scale distance stack depends
/// only on the image and is built once. As with the hard fitter, only the
/// final comparison, with both endpoints under the final boundary and
/// surface, is guaranteed non-increasing: if optimization ends up worse
/// there, the initial estimate is returned instead.
pub fn hybrid_fit_soft(
    model: &ShapeModel,
    landmarks: &LandmarkSet,
    image: &GrayImage,
    init: (&ShapeCoefficients, &Pose),
    config: &SoftFitConfig,
) -> Result<FitResult> {
    config.weights.validate()?;
    let s_count = model.component_count();
    if init.0.len() != s_count {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a model with {s_count} components",
            init.0.len()
        )));
    }
    let stack = if config.weights.w2 > 0.0 {
        Some(build_distance_stack(
            image,
            &config.thresholds,
            &config.scales,
        )?)
    } else {
        None
    };
    let mean = model.instantiate(&ShapeCoefficients::zeros(s_count))?;
    let (lo, hi) = mean.bounding_box();
    let model_height = hi.y - lo.y;
    let surface_at = |scale: f64| -> Result<Option<EdgeCostSurface>> {
        match &stack {
            Some(stack) => Ok(Some(
                stack.cost_surface(scale * model_height * KAPPA_FRACTION)?,
            )),
            None => Ok(None),
        }
    };

    let std_devs = model.std_devs();
    let s_floor = init.1.scale * 1e-6;
    let (lower, upper) = joint_bounds(&std_devs, config.hyperbox_k, s_floor);
    let x_init = pack_joint(&init.0 .0, &init.1.to_axis_angle());

    let mut x = x_init.clone();
    let mut result = FitResult::from_estimate("soft", init.0, init.1);

    for round in 0..config.outer_rounds {
        let (alpha, aa) = unpack_joint(&x, s_count);
        let pose = aa.to_pose();
        let mesh = model.instantiate(&ShapeCoefficients(alpha))?;
        let boundary = occluding_boundary(&mesh, &pose, image.width(), image.height())?;
        if config.weights.w2 > 0.0 && boundary.is_empty() {
            result
                .notes
                .push(format!("round {round}: empty boundary, edge term skipped"));
        }
        let surface = surface_at(aa.scale)?;
        let objective =
            SoftObjective::new(model, landmarks, surface.as_ref(), &boundary, &config.weights)?;
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
                max_iterations: config.inner_iterations,
                step_tol: config.step_tol,
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
        if step < config.step_tol * (1.0 + x.norm()) {
            break;
        }
    }

    // Final safeguard comparison under the final boundary and surface.
    let (alpha, aa) = unpack_joint(&x, s_count);
    let pose = aa.to_pose();
    let mesh = model.instantiate(&ShapeCoefficients(alpha.clone()))?;
    let boundary = occluding_boundary(&mesh, &pose, image.width(), image.height())?;
    let surface = surface_at(aa.scale)?;
    let objective =
        SoftObjective::new(model, landmarks, surface.as_ref(), &boundary, &config.weights)?;
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
