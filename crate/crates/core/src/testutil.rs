//! Shared fixtures for unit tests.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{axis_angle_to_matrix, Pose};
use crate::model::ShapeModel;

/// 4-vertex tetrahedron toy model with S = 2.
pub(crate) fn toy_model() -> ShapeModel {
    let mean = DVector::from_vec(vec![
        0.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    ]);
    // Two fixed unit-norm directions.
    let mut c0 = DVector::zeros(12);
    c0[0] = 0.6;
    c0[4] = 0.8;
    let mut c1 = DVector::zeros(12);
    c1[2] = 1.0 / f64::sqrt(2.0);
    c1[9] = -1.0 / f64::sqrt(2.0);
    let comps = DMatrix::from_columns(&[c0, c1]);
    let vars = DVector::from_vec(vec![4.0, 1.0]);
    let tris = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
    ShapeModel::new(mean, comps, vars, tris).unwrap()
}

/// Triangle strip over `vertex_count` vertices; manifold, open boundary.
pub(crate) fn strip_triangles(vertex_count: usize) -> Vec<[u32; 3]> {
    (0..vertex_count - 2)
        .map(|i| [i as u32, i as u32 + 1, i as u32 + 2])
        .collect()
}

/// Random model with strip topology, orthonormal component columns, and
/// polynomially decaying variances.
pub(crate) fn random_model(
    vertex_count: usize,
    component_count: usize,
    rng: &mut ChaCha8Rng,
) -> ShapeModel {
    let n3 = 3 * vertex_count;
    let mean = DVector::from_fn(n3, |_, _| rng.gen_range(-1.0..1.0));
    let mut cols: Vec<DVector<f64>> = Vec::new();
    while cols.len() < component_count {
        let mut v: DVector<f64> = DVector::from_fn(n3, |_, _| rng.gen_range(-1.0..1.0));
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / norm);
        }
    }
    let comps = DMatrix::from_columns(&cols);
    let vars = DVector::from_fn(component_count, |i, _| (i as f64 + 1.0).powf(-1.5));
    ShapeModel::new(mean, comps, vars, strip_triangles(vertex_count)).unwrap()
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n < 1.0 {
            return v / n;
        }
    }
}

pub(crate) fn random_rotation(rng: &mut ChaCha8Rng) -> nalgebra::Matrix3<f64> {
    let axis = random_unit(rng);
    let angle = rng.gen_range(0.1..2.8);
    axis_angle_to_matrix(&(axis * angle))
}

pub(crate) fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose {
        rotation: random_rotation(rng),
        translation: Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
        scale: rng.gen_range(0.5..3.0),
    }
}

/// Closed UV sphere with outward-wound triangles. `rings` latitude bands
/// (>= 2), `segments` meridians (>= 3).
pub(crate) fn uv_sphere(
    rings: usize,
    segments: usize,
    radius: f64,
    center: Vector3<f64>,
) -> crate::model::Mesh {
    use std::f64::consts::PI;
    let mut vertices = vec![center + Vector3::new(0.0, 0.0, radius)];
    for i in 1..rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            vertices.push(
                center
                    + radius
                        * Vector3::new(
                            theta.sin() * phi.cos(),
                            theta.sin() * phi.sin(),
                            theta.cos(),
                        ),
            );
        }
    }
    vertices.push(center - Vector3::new(0.0, 0.0, radius));
    let south = (vertices.len() - 1) as u32;
    let idx = |i: usize, j: usize| (1 + (i - 1) * segments + j % segments) as u32;

    let mut triangles = Vec::new();
    for j in 0..segments {
        triangles.push([0, idx(1, j), idx(1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    for j in 0..segments {
        triangles.push([south, idx(rings - 1, j + 1), idx(rings - 1, j)]);
    }

    let n = vertices.len();
    let coords =
        nalgebra::DVector::from_iterator(3 * n, vertices.iter().flat_map(|v| [v.x, v.y, v.z]));
    crate::model::Mesh {
        vertices: coords,
        topology: std::sync::Arc::new(crate::model::Topology::new(triangles, n).unwrap()),
    }
}

/// Sphere model with two aspect components (x stretch, y stretch), both
/// silhouette-observable and not absorbable by pose.
pub(crate) fn sphere_model(rings: usize, segments: usize) -> ShapeModel {
    let mesh = uv_sphere(rings, segments, 1.0, Vector3::zeros());
    let n3 = mesh.vertices.len();
    let mut c0 = DVector::zeros(n3);
    let mut c1 = DVector::zeros(n3);
    for i in 0..n3 / 3 {
        c0[3 * i] = mesh.vertices[3 * i];
        c1[3 * i + 1] = mesh.vertices[3 * i + 1];
    }
    c0 /= c0.norm();
    c1 /= c1.norm();
    let comps = DMatrix::from_columns(&[c0, c1]);
    let vars = DVector::from_vec(vec![0.09, 0.04]);
    ShapeModel::new(
        mesh.vertices.clone(),
        comps,
        vars,
        mesh.topology.triangles.clone(),
    )
    .unwrap()
}

pub(crate) fn yaw_pose(angle: f64, scale: f64, tx: f64, ty: f64) -> Pose {
    let rot = axis_angle_to_matrix(&Vector3::new(0.0, angle, 0.0));
    Pose::new(rot, Vector2::new(tx, ty), scale).unwrap()
}
