//! Polygonal meshes of the unit square.
//!
//! A [`Mesh`] is built once from vertices and counter-clockwise cell loops; faces,
//! orientation and all geometric quantities are derived at construction and never
//! change afterwards. Boundary conditions are attached per boundary face through
//! [`Mesh::with_boundary`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Point2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};

/// Type of boundary condition imposed on one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

/// Conditions on a boundary face for the displacement and pressure fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceBc {
    pub u: BcKind,
    pub p: BcKind,
}

/// How the boundary of the unit square is split between condition types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryLayout {
    /// Clamped and impermeable everywhere.
    Homogeneous,
    /// Faces whose midpoint has `x <= split` get (Dirichlet-u, Neumann-p), the others
    /// (Neumann-u, Dirichlet-p).
    Mixed { split: f64 },
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Counter-clockwise vertex loop.
    pub vertices: Vec<usize>,
    /// Face `i` joins `vertices[i]` and `vertices[i + 1]`.
    pub faces: Vec<usize>,
    pub area: f64,
    pub centroid: Point2<f64>,
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct Face {
    /// Endpoints, ordered along the owner's counter-clockwise traversal.
    pub vertices: [usize; 2],
    /// Owner `T1` and optional neighbour `T2`.
    pub cells: (usize, Option<usize>),
    pub midpoint: Point2<f64>,
    pub length: f64,
    /// Unit normal pointing out of the owner cell.
    pub normal: Vector2<f64>,
    /// Unit tangent from `vertices[0]` to `vertices[1]`.
    pub tangent: Vector2<f64>,
    /// `None` for interior faces.
    pub bc: Option<FaceBc>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.cells.1.is_none()
    }

    /// Diameter `h_F` of a straight face.
    pub fn diameter(&self) -> f64 {
        self.length
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point2<f64>>,
    cells: Vec<Cell>,
    faces: Vec<Face>,
}

impl Mesh {
    /// Builds a mesh from vertices and counter-clockwise cell loops.
    pub fn new(vertices: Vec<Point2<f64>>, loops: Vec<Vec<usize>>) -> Result<Self> {
        let mut cells = Vec::with_capacity(loops.len());
        let mut faces: Vec<Face> = Vec::new();
        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::new();

        for (c, lp) in loops.into_iter().enumerate() {
            if lp.len() < 3 {
                return Err(Error::InvalidMesh(format!("cell {c} has fewer than 3 vertices")));
            }
            if let Some(&bad) = lp.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("cell {c} references vertex {bad}")));
            }
            let pts: Vec<Point2<f64>> = lp.iter().map(|&v| vertices[v]).collect();
            let (area, centroid) = polygon_area_centroid(&pts);
            if area <= 0.0 {
                return Err(Error::DegenerateCell { cell: c });
            }
            let mut diameter: f64 = 0.0;
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    diameter = diameter.max((pts[i] - pts[j]).norm());
                }
            }

            let m = lp.len();
            let mut cell_faces = Vec::with_capacity(m);
            for i in 0..m {
                let (a, b) = (lp[i], lp[(i + 1) % m]);
                let key = (a.min(b), a.max(b));
                match edge_map.get(&key) {
                    Some(&f) => {
                        let face = &mut faces[f];
                        if face.cells.1.is_some() || face.cells.0 == c {
                            return Err(Error::InvalidMesh(format!(
                                "edge ({a}, {b}) shared by more than two cells"
                            )));
                        }
                        face.cells.1 = Some(c);
                        face.bc = None;
                        cell_faces.push(f);
                    }
                    None => {
                        let d = vertices[b] - vertices[a];
                        let length = d.norm();
                        if length == 0.0 {
                            return Err(Error::InvalidMesh(format!("zero-length edge ({a}, {b})")));
                        }
                        let tangent = d / length;
                        faces.push(Face {
                            vertices: [a, b],
                            cells: (c, None),
                            midpoint: nalgebra::center(&vertices[a], &vertices[b]),
                            length,
                            normal: Vector2::new(tangent.y, -tangent.x),
                            tangent,
                            bc: Some(FaceBc {
                                u: BcKind::Dirichlet,
                                p: BcKind::Neumann,
                            }),
                        });
                        edge_map.insert(key, faces.len() - 1);
                        cell_faces.push(faces.len() - 1);
                    }
                }
            }
            cells.push(Cell {
                vertices: lp,
                faces: cell_faces,
                area,
                centroid,
                diameter,
            });
        }
        Ok(Self {
            vertices,
            cells,
            faces,
        })
    }

    /// Returns a copy of the mesh with boundary faces flagged according to `layout`.
    pub fn with_boundary(mut self, layout: BoundaryLayout) -> Self {
        for face in self.faces.iter_mut().filter(|f| f.cells.1.is_none()) {
            face.bc = Some(match layout {
                BoundaryLayout::Homogeneous => FaceBc {
                    u: BcKind::Dirichlet,
                    p: BcKind::Neumann,
                },
                BoundaryLayout::Mixed { split } => {
                    if face.midpoint.x <= split {
                        FaceBc {
                            u: BcKind::Dirichlet,
                            p: BcKind::Neumann,
                        }
                    } else {
                        FaceBc {
                            u: BcKind::Neumann,
                            p: BcKind::Dirichlet,
                        }
                    }
                }
            });
        }
        self
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Maximal cell diameter `h`.
    pub fn h(&self) -> f64 {
        self.cells.iter().map(|c| c.diameter).fold(0.0, f64::max)
    }

    /// Outward unit normal `n_TF` of the `i`-th face of cell `c`.
    pub fn cell_face_normal(&self, c: usize, i: usize) -> Vector2<f64> {
        let f = &self.faces[self.cells[c].faces[i]];
        if f.cells.0 == c {
            f.normal
        } else {
            -f.normal
        }
    }

    /// Vertex coordinates of cell `c`, counter-clockwise.
    pub fn cell_points(&self, c: usize) -> Vec<Point2<f64>> {
        self.cells[c].vertices.iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn face_points(&self, f: usize) -> [Point2<f64>; 2] {
        let [a, b] = self.faces[f].vertices;
        [self.vertices[a], self.vertices[b]]
    }

    pub fn has_dirichlet_pressure(&self) -> bool {
        self.faces
            .iter()
            .any(|f| matches!(f.bc, Some(FaceBc { p: BcKind::Dirichlet, .. })))
    }

    pub fn has_neumann_displacement(&self) -> bool {
        self.faces
            .iter()
            .any(|f| matches!(f.bc, Some(FaceBc { u: BcKind::Neumann, .. })))
    }

    /// Writes the `polymesh2d` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "polymesh2d {} {}", self.vertices.len(), self.cells.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v.x, v.y);
        }
        for c in &self.cells {
            let _ = write!(s, "{}", c.vertices.len());
            for v in &c.vertices {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses the `polymesh2d` text format. Faces and topology are rebuilt.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
        let mut it = header.split_whitespace();
        if it.next() != Some("polymesh2d") {
            return Err(parse_err(ln, "expected `polymesh2d` header"));
        }
        let mut count = || -> Result<usize> {
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| parse_err(ln, "bad header counts"))
        };
        let (nv, nc) = (count()?, count()?);

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "missing vertex line"))?;
            let xy: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, "bad vertex coordinate"))?;
            if xy.len() != 2 {
                return Err(parse_err(ln, "vertex line needs two coordinates"));
            }
            vertices.push(Point2::new(xy[0], xy[1]));
        }
        let mut loops = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "missing cell line"))?;
            let ids: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, "bad vertex index"))?;
            if ids.is_empty() || ids[0] + 1 != ids.len() {
                return Err(parse_err(ln, "cell vertex count mismatch"));
            }
            loops.push(ids[1..].to_vec());
        }
        Self::new(vertices, loops)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Signed area and area centroid of a polygon given counter-clockwise.
pub fn polygon_area_centroid(pts: &[Point2<f64>]) -> (f64, Point2<f64>) {
    let m = pts.len();
    // shift to the first vertex to limit cancellation
    let o = pts[0];
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let p = pts[i] - o;
        let q = pts[(i + 1) % m] - o;
        let cross = p.x * q.y - q.x * p.y;
        a2 += cross;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    let area = 0.5 * a2;
    if area == 0.0 {
        return (0.0, o);
    }
    (area, Point2::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2)))
}

/// Trapezoidal refinement family of the unit square.
///
/// The `n - 1` interior vertical grid lines are shifted in `y` by
/// `(-1)^i * distortion / n`, boundary vertices stay in place. `distortion = 0`
/// gives the uniform Cartesian grid. Faces default to the homogeneous layout.
pub fn build_trapezoidal_mesh(n: usize, distortion: f64) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMesh("n must be at least 1".into()));
    }
    if !(0.0..0.45).contains(&distortion) {
        return Err(Error::Distortion(distortion));
    }
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let mut y = j as f64 * h;
            if i > 0 && i < n && j > 0 && j < n {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                y += sign * distortion * h;
            }
            vertices.push(Point2::new(i as f64 * h, y));
        }
    }
    let mut loops = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            loops.push(vec![idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new(vertices, loops)
}

/// Minimum over cells of the smallest inradius of the centroid fan divided by `h_T`.
pub fn mesh_regularity(mesh: &Mesh) -> f64 {
    let mut worst = f64::INFINITY;
    for (c, cell) in mesh.cells().iter().enumerate() {
        let pts = mesh.cell_points(c);
        let m = pts.len();
        for i in 0..m {
            let (a, b, x) = (pts[i], pts[(i + 1) % m], cell.centroid);
            let area = 0.5 * ((b - a).perp(&(x - a))).abs();
            let perimeter = (b - a).norm() + (x - b).norm() + (a - x).norm();
            worst = worst.min(2.0 * area / perimeter / cell.diameter);
        }
    }
    worst
}

/// Piecewise-constant symmetric positive definite permeability.
#[derive(Debug, Clone)]
pub struct PermeabilityField {
    tensors: Vec<Matrix2<f64>>,
    bounds: Vec<(f64, f64)>,
}

impl PermeabilityField {
    pub fn uniform(k: Matrix2<f64>, num_cells: usize) -> Result<Self> {
        Self::per_cell(vec![k; num_cells])
    }

    /// `K = kappa * Id` on every cell.
    pub fn isotropic(kappa: f64, num_cells: usize) -> Result<Self> {
        Self::uniform(Matrix2::identity() * kappa, num_cells)
    }

    pub fn per_cell(tensors: Vec<Matrix2<f64>>) -> Result<Self> {
        let mut bounds = Vec::with_capacity(tensors.len());
        for (c, k) in tensors.iter().enumerate() {
            if (k[(0, 1)] - k[(1, 0)]).abs() > 1e-14 * k.norm() {
                return Err(Error::InvalidMesh(format!("permeability of cell {c} is not symmetric")));
            }
            let eig = SymmetricEigen::new(*k).eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            if lo <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "permeability of cell {c} is not positive definite"
                )));
            }
            bounds.push((lo, hi));
        }
        Ok(Self { tensors, bounds })
    }

    pub fn tensor(&self, c: usize) -> &Matrix2<f64> {
        &self.tensors[c]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Smallest and largest eigenvalue of `K_T`.
    pub fn eigen_bounds(&self, c: usize) -> (f64, f64) {
        self.bounds[c]
    }

    /// Local anisotropy ratio `rho_T`.
    pub fn local_anisotropy(&self, c: usize) -> f64 {
        let (lo, hi) = self.bounds[c];
        hi / lo
    }

    /// Global anisotropy ratio `rho`.
    pub fn anisotropy(&self) -> f64 {
        (0..self.len()).map(|c| self.local_anisotropy(c)).fold(1.0, f64::max)
    }

    /// Normal permeability `K_T n . n`.
    pub fn normal_component(&self, c: usize, n: &Vector2<f64>) -> f64 {
        (self.tensors[c] * n).dot(n)
    }
}
