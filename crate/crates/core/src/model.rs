//! PCA shape model representation, instantiation and file I/O.
//!
//! A model is a mean shape `fbar` (3N vector, vertex coordinates interleaved
//! as `[u1 v1 w1 ... uN vN wN]`), a 3N x S matrix of unit-norm principal
//! components, per-component variances, and a shared triangle topology.
//! Instantiation is `f(alpha) = P alpha + fbar`.
//!
//! Components are stored *unscaled* (unit-norm directions) with the
//! variances kept separately. Converters importing an externally trained
//! model must check that convention: if the source stores variance-scaled
//! components, divide each column by `sqrt(lambda_i)` before writing the
//! file, or every fitted coefficient bound will be wrong by that factor.
//!
//! Vertex and triangle indices are zero-based both in memory and on disk.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"E3DM";
const FORMAT_VERSION: u32 = 1;

/// Triangle topology plus the edge adjacency derived from it.
///
/// Built once at model construction and shared by every mesh instanced from
/// the model; the occluding-contour stage walks `edges` directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub triangles: Vec<[u32; 3]>,
    /// Unique undirected edges `(a, b)` with `a < b` and the triangles
    /// adjacent to each (one or two entries).
    pub edges: Vec<MeshEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshEdge {
    pub vertices: [u32; 2],
    pub triangles: [Option<u32>; 2],
}

impl Topology {
    /// Builds the edge adjacency, rejecting edges shared by more than two
    /// triangles.
    pub fn new(triangles: Vec<[u32; 3]>, vertex_count: usize) -> Result<Self> {
        let mut adjacency: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
        for (ti, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v as usize >= vertex_count {
                    return Err(Error::Topology(format!(
                        "triangle {ti} references vertex {v}, but the model has {vertex_count} vertices"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Topology(format!("triangle {ti} is degenerate: {tri:?}")));
            }
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                adjacency.entry(key).or_default().push(ti as u32);
            }
        }
        let mut edges = Vec::with_capacity(adjacency.len());
        for ((a, b), tris) in adjacency {
            if tris.len() > 2 {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) is shared by {} triangles; mesh is not manifold",
                    tris.len()
                )));
            }
            edges.push(MeshEdge {
                vertices: [a, b],
                triangles: [Some(tris[0]), tris.get(1).copied()],
            });
        }
        Ok(Topology {
            triangles,
            edges,
        })
    }

    /// True when every edge has exactly two adjacent triangles.
    pub fn is_closed(&self) -> bool {
        self.edges.iter().all(|e| e.triangles[1].is_some())
    }
}

/// PCA shape model: mean shape, principal directions, variances, topology.
///
/// Immutable after construction; share it freely across threads.
#[derive(Debug, Clone)]
pub struct ShapeModel {
    mean_shape: DVector<f64>,
    components: DMatrix<f64>,
    variances: DVector<f64>,
    topology: Arc<Topology>,
}

impl ShapeModel {
    pub fn new(
        mean_shape: DVector<f64>,
        components: DMatrix<f64>,
        variances: DVector<f64>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        if mean_shape.len() % 3 != 0 || mean_shape.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "mean shape length {} is not a positive multiple of 3",
                mean_shape.len()
            )));
        }
        let n = mean_shape.len() / 3;
        if components.nrows() != mean_shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "components have {} rows, expected {}",
                components.nrows(),
                mean_shape.len()
            )));
        }
        if variances.len() != components.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "variances length {} does not match component count {}",
                variances.len(),
                components.ncols()
            )));
        }
        for i in 0..variances.len() {
            if !(variances[i] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "variance {i} is {}, must be positive",
                    variances[i]
                )));
            }
            if i > 0 && variances[i] > variances[i - 1] {
                return Err(Error::InvalidArgument(format!(
                    "variances must be non-increasing, but lambda_{} > lambda_{}",
                    i,
                    i - 1
                )));
            }
        }
        let topology = Topology::new(triangles, n)?;
        Ok(ShapeModel {
            mean_shape,
            components,
            variances,
            topology: Arc::new(topology),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn component_count(&self) -> usize {
        self.components.ncols()
    }

    pub fn mean_shape(&self) -> &DVector<f64> {
        &self.mean_shape
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn variances(&self) -> &DVector<f64> {
        &self.variances
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.topology.triangles
    }

    /// Per-component standard deviations `sqrt(lambda_i)`.
    pub fn std_devs(&self) -> DVector<f64> {
        self.variances.map(f64::sqrt)
    }

    /// Instantiates the mesh `P alpha + fbar`.
    pub fn instantiate(&self, alpha: &ShapeCoefficients) -> Result<Mesh> {
        if alpha.len() != self.component_count() {
            return Err(Error::DimensionMismatch(format!(
                "alpha has length {}, model has {} components",
                alpha.len(),
                self.component_count()
            )));
        }
        let vertices = &self.components * &alpha.0 + &self.mean_shape;
        Ok(Mesh {
            vertices,
            topology: Arc::clone(&self.topology),
        })
    }

    /// Rows `3i..3i+3` of the component matrix and mean shape: the 3 x S
    /// block and 3-vector such that vertex `i` of an instance is
    /// `P_i alpha + fbar_i`.
    pub fn vertex_submatrix(&self, index: usize) -> Result<(Matrix3xX<f64>, Vector3<f64>)> {
        if index >= self.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "vertex index {index} out of range (N = {})",
                self.vertex_count()
            )));
        }
        let rows = self.components.rows(3 * index, 3);
        let block = Matrix3xX::from_iterator(
            self.component_count(),
            rows.column_iter().flat_map(|c| [c[0], c[1], c[2]]),
        );
        let fbar = Vector3::new(
            self.mean_shape[3 * index],
            self.mean_shape[3 * index + 1],
            self.mean_shape[3 * index + 2],
        );
        Ok((block, fbar))
    }

    /// Mean-shape position of one vertex.
    pub fn mean_vertex(&self, index: usize) -> Vector3<f64> {
        Vector3::new(
            self.mean_shape[3 * index],
            self.mean_shape[3 * index + 1],
            self.mean_shape[3 * index + 2],
        )
    }

    /// Axis-aligned bounding box of the mean shape as `(min, max)`.
    pub fn mean_bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        bounding_box(&self.mean_shape)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            save_json(self, path)
        } else {
            save_binary(self, path)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ShapeModel> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            load_json(path)
        } else {
            load_binary(path)
        }
    }
}

/// PCA weights for one shape instance. Unitless; fitting keeps each
/// coefficient within `k * sqrt(lambda_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoefficients(pub DVector<f64>);

impl ShapeCoefficients {
    pub fn zeros(count: usize) -> Self {
        ShapeCoefficients(DVector::zeros(count))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest violation of the hyperbox `|alpha_i| <= k sqrt(lambda_i)`;
    /// zero when feasible.
    pub fn box_violation(&self, variances: &DVector<f64>, k: f64) -> f64 {
        (0..self.len())
            .map(|i| (self.0[i].abs() - k * variances[i].sqrt()).max(0.0))
            .fold(0.0, f64::max)
    }
}

impl From<DVector<f64>> for ShapeCoefficients {
    fn from(v: DVector<f64>) -> Self {
        ShapeCoefficients(v)
    }
}

/// A concrete mesh instance: vertex coordinates plus shared topology.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: DVector<f64>,
    pub topology: Arc<Topology>,
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn vertex(&self, index: usize) -> Vector3<f64> {
        Vector3::new(
            self.vertices[3 * index],
            self.vertices[3 * index + 1],
            self.vertices[3 * index + 2],
        )
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.topology.triangles
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        bounding_box(&self.vertices)
    }

    /// Writes the mesh as Wavefront OBJ (positions and triangular faces;
    /// OBJ face indices are one-based).
    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path.display().to_string(), e);
        for i in 0..self.vertex_count() {
            let v = self.vertex(i);
            writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io_err)?;
        }
        for t in self.triangles() {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io_err)?;
        }
        Ok(())
    }
}

fn bounding_box(coords: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for i in 0..coords.len() / 3 {
        for k in 0..3 {
            lo[k] = lo[k].min(coords[3 * i + k]);
            hi[k] = hi[k].max(coords[3 * i + k]);
        }
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Binary container: magic "E3DM", version u32, N u32, S u32, mean shape
// (3N f64), components (3N*S f64 column-major), variances (S f64), triangle
// count u32, triangles (3T u32). All integers and floats little-endian.
// ---------------------------------------------------------------------------

fn save_binary(model: &ShapeModel, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(&display, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.vertex_count() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.component_count() as u32).to_le_bytes()).map_err(io_err)?;
    for v in model.mean_shape.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    // Column-major: component after component.
    for c in model.components.column_iter() {
        for v in c.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    for v in model.variances.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    let tris = model.triangles();
    w.write_all(&(tris.len() as u32).to_le_bytes()).map_err(io_err)?;
    for t in tris {
        for &i in t {
            w.write_all(&i.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct FieldReader<'a, R> {
    reader: R,
    path: &'a str,
}

impl<R: Read> FieldReader<'_, R> {
    fn bytes<const K: usize>(&mut self, field: &str) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.reader
            .read_exact(&mut buf)
            .map_err(|e| Error::parse(self.path, field, format!("unexpected end of file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(field)?))
    }

    fn f64_vec(&mut self, field: &str, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(self.bytes::<8>(field)?));
        }
        Ok(out)
    }
}

fn load_binary(path: &Path) -> Result<ShapeModel> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut r = FieldReader {
        reader: BufReader::new(file),
        path: &display,
    };

    let magic = r.bytes::<4>("magic")?;
    if &magic != MAGIC {
        return Err(Error::parse(&display, "magic", format!("expected {MAGIC:?}, found {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(&display, "version", format!("unsupported version {version}")));
    }
    let n = r.u32("vertex_count")? as usize;
    let s = r.u32("component_count")? as usize;
    if n == 0 {
        return Err(Error::parse(&display, "vertex_count", "must be positive"));
    }
    let mean = r.f64_vec("mean_shape", 3 * n)?;
    let comps = r.f64_vec("components", 3 * n * s)?;
    let vars = r.f64_vec("variances", s)?;
    let tri_count = r.u32("triangle_count")? as usize;
    let mut triangles = Vec::with_capacity(tri_count);
    for _ in 0..tri_count {
        let a = r.u32("triangles")?;
        let b = r.u32("triangles")?;
        let c = r.u32("triangles")?;
        triangles.push([a, b, c]);
    }

    ShapeModel::new(
        DVector::from_vec(mean),
        DMatrix::from_vec(3 * n, s, comps),
        DVector::from_vec(vars),
        triangles,
    )
    .map_err(|e| match e {
        Error::DimensionMismatch(m) => Error::parse(&display, "dimensions", m),
        Error::InvalidArgument(m) => Error::parse(&display, "variances", m),
        Error::Topology(m) => Error::parse(&display, "triangles", m),
        other => other,
    })
}

/// JSON sidecar of the binary container, for debugging and hand editing.
#[derive(Serialize, Deserialize)]
struct JsonModel {
    vertex_count: usize,
    component_count: usize,
    mean_shape: Vec<f64>,
    /// One inner vector per component (column), each of length 3N.
    components: Vec<Vec<f64>>,
    variances: Vec<f64>,
    triangles: Vec<[u32; 3]>,
}

fn save_json(model: &ShapeModel, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let doc = JsonModel {
        vertex_count: model.vertex_count(),
        component_count: model.component_count(),
        mean_shape: model.mean_shape.iter().copied().collect(),
        components: model
            .components
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect(),
        variances: model.variances.iter().copied().collect(),
        triangles: model.triangles().to_vec(),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    serde_json::to_writer(BufWriter::new(file), &doc)
        .map_err(|e| Error::parse(&display, "json", e.to_string()))
}

fn load_json(path: &Path) -> Result<ShapeModel> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let doc: JsonModel = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::parse(&display, "json", e.to_string()))?;
    if doc.mean_shape.len() != 3 * doc.vertex_count {
        return Err(Error::parse(
            &display,
            "mean_shape",
            format!("length {} does not match vertex_count {}", doc.mean_shape.len(), doc.vertex_count),
        ));
    }
    if doc.components.len() != doc.component_count {
        return Err(Error::parse(
            &display,
            "components",
            format!("{} columns, header says {}", doc.components.len(), doc.component_count),
        ));
    }
    let mut flat = Vec::with_capacity(3 * doc.vertex_count * doc.component_count);
    for (i, col) in doc.components.iter().enumerate() {
        if col.len() != 3 * doc.vertex_count {
            return Err(Error::parse(
                &display,
                "components",
                format!("column {i} has length {}, expected {}", col.len(), 3 * doc.vertex_count),
            ));
        }
        flat.extend_from_slice(col);
    }
    ShapeModel::new(
        DVector::from_vec(doc.mean_shape),
        DMatrix::from_vec(3 * doc.vertex_count, doc.component_count, flat),
        DVector::from_vec(doc.variances),
        doc.triangles,
    )
    .map_err(|e| match e {
        Error::DimensionMismatch(m) => Error::parse(&display, "dimensions", m),
        Error::InvalidArgument(m) => Error::parse(&display, "variances", m),
        Error::Topology(m) => Error::parse(&display, "triangles", m),
        other => other,
    })
}
