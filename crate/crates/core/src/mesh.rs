//! Structured simplicial meshes in one and two dimensions, together with
//! per-element fiber frames and the conductivity description used to build
//! anisotropic diffusion tensors.
//!
//! Coordinates are stored as `[x, y]` pairs for both dimensions; in 1D the
//! `y` component is identically zero. Nodes of a rectangular grid are ordered
//! row-major by `(j, i)`, so node `(i, j)` has index `j * (nx + 1) + i`.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid mesh dimension {0}; expected 1 or 2")]
    Dimension(usize),
    #[error("invalid mesh parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("element {element} references missing node {node}")]
    MissingNode { element: usize, node: usize },
    #[error("element {element} has non-positive measure {measure}")]
    Degenerate { element: usize, measure: f64 },
    #[error("fiber frame {element} is not orthonormal")]
    FiberFrame { element: usize },
}

/// Triangulation pattern of the quadrilateral cells of a rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Diagonal {
    /// Every cell split along its `(0,0) -> (1,1)` diagonal.
    Right,
    /// Every cell split along its `(1,0) -> (0,1)` diagonal.
    Left,
    /// Checkerboard of `Right` and `Left` cells.
    Alternating,
}

impl std::str::FromStr for Diagonal {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "right" => Ok(Diagonal::Right),
            "left" => Ok(Diagonal::Left),
            "alternating" => Ok(Diagonal::Alternating),
            other => Err(MeshError::Parameter {
                name: "diagonal",
                reason: format!("unknown orientation `{other}`"),
            }),
        }
    }
}

/// A conforming mesh of segments (1D) or triangles (2D).
#[derive(Debug, Clone, PartialEq)]
pub struct SimplicialMesh<T> {
    dim: usize,
    nodes: Vec<[T; 2]>,
    /// Flat connectivity, `dim + 1` node indices per element.
    cells: Vec<usize>,
    boundary_nodes: Vec<usize>,
}

impl<T: Scalar> SimplicialMesh<T> {
    /// Builds a mesh after checking connectivity and element orientation.
    pub fn new(
        dim: usize,
        nodes: Vec<[T; 2]>,
        cells: Vec<usize>,
        boundary_nodes: Vec<usize>,
    ) -> Result<Self, MeshError> {
        if dim != 1 && dim != 2 {
            return Err(MeshError::Dimension(dim));
        }
        let per = dim + 1;
        if cells.len() % per != 0 {
            return Err(MeshError::Parameter {
                name: "cells",
                reason: format!("connectivity length {} is not a multiple of {per}", cells.len()),
            });
        }
        let mesh = Self { dim, nodes, cells, boundary_nodes };
        for e in 0..mesh.n_elements() {
            for &node in mesh.element(e) {
                if node >= mesh.nodes.len() {
                    return Err(MeshError::MissingNode { element: e, node });
                }
            }
            let m = mesh.signed_measure(e);
            if !(m > T::zero()) {
                return Err(MeshError::Degenerate { element: e, measure: m.to_f64().unwrap_or(f64::NAN) });
            }
        }
        if let Some(&b) = mesh.boundary_nodes.iter().find(|&&b| b >= mesh.nodes.len()) {
            return Err(MeshError::Parameter {
                name: "boundary_nodes",
                reason: format!("node {b} does not exist"),
            });
        }
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn nodes(&self) -> &[[T; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [T; 2] {
        self.nodes[i]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let per = self.dim + 1;
        &self.cells[e * per..(e + 1) * per]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    /// Signed length (1D) or signed area (2D) of element `e`.
    pub fn signed_measure(&self, e: usize) -> T {
        let el = self.element(e);
        let a = self.nodes[el[0]];
        let b = self.nodes[el[1]];
        if self.dim == 1 {
            b[0] - a[0]
        } else {
            let c = self.nodes[el[2]];
            let half = T::lit(0.5);
            half * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
    }

    pub fn measure(&self, e: usize) -> T {
        self.signed_measure(e).abs()
    }

    /// Total length or area of the domain.
    pub fn total_measure(&self) -> T {
        (0..self.n_elements()).map(|e| self.measure(e)).sum()
    }

    /// Length of the shortest element edge.
    pub fn h_min(&self) -> T {
        let mut h = T::infinity();
        for el in self.elements() {
            for (k, &a) in el.iter().enumerate() {
                for &b in &el[k + 1..] {
                    h = h.min(self.distance(a, b));
                }
            }
        }
        h
    }

    pub fn distance(&self, a: usize, b: usize) -> T {
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }

    /// Index of the node closest to `p` (ties broken by lowest index).
    pub fn nearest_node(&self, p: [T; 2]) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (i, q) in self.nodes.iter().enumerate() {
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([T; 2], [T; 2]) {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in &self.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

fn positive<T: Scalar>(name: &'static str, v: T) -> Result<(), MeshError> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(MeshError::Parameter { name, reason: format!("must be positive and finite, got {v}") })
    }
}

fn at_least_one(name: &'static str, n: usize) -> Result<(), MeshError> {
    if n >= 1 {
        Ok(())
    } else {
        Err(MeshError::Parameter { name, reason: "must be at least 1".into() })
    }
}

/// Uniform mesh of `[0, length]` with `n_elements` segments.
pub fn line_mesh<T: Scalar>(length: T, n_elements: usize) -> Result<SimplicialMesh<T>, MeshError> {
    positive("length", length)?;
    at_least_one("n_elements", n_elements)?;
    let n = T::from_usize_lossy(n_elements);
    let nodes = (0..=n_elements).map(|i| [length * T::from_usize_lossy(i) / n, T::zero()]).collect();
    let cells = (0..n_elements).flat_map(|e| [e, e + 1]).collect();
    SimplicialMesh::new(1, nodes, cells, vec![0, n_elements])
}

/// Like [`line_mesh`] but spanning `[x0, x0 + length]`.
pub fn line_mesh_from<T: Scalar>(x0: T, length: T, n_elements: usize) -> Result<SimplicialMesh<T>, MeshError> {
    let mut mesh = line_mesh(length, n_elements)?;
    for p in &mut mesh.nodes {
        p[0] += x0;
    }
    Ok(mesh)
}

/// Structured triangulation of `[0, lx] x [0, ly]` with `nx * ny` cells,
/// each split into two counter-clockwise triangles.
pub fn rect_tri_mesh<T: Scalar>(
    lx: T,
    ly: T,
    nx: usize,
    ny: usize,
    diagonal: Diagonal,
) -> Result<SimplicialMesh<T>, MeshError> {
    positive("lx", lx)?;
    positive("ly", ly)?;
    at_least_one("nx", nx)?;
    at_least_one("ny", ny)?;
    let fx = T::from_usize_lossy(nx);
    let fy = T::from_usize_lossy(ny);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([lx * T::from_usize_lossy(i) / fx, ly * T::from_usize_lossy(j) / fy]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            let right = match diagonal {
                Diagonal::Right => true,
                Diagonal::Left => false,
                Diagonal::Alternating => (i + j) % 2 == 0,
            };
            if right {
                cells.extend_from_slice(&[a, b, c, a, c, d]);
            } else {
                cells.extend_from_slice(&[a, b, d, b, c, d]);
            }
        }
    }
    let mut boundary = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if i == 0 || j == 0 || i == nx || j == ny {
                boundary.push(id(i, j));
            }
        }
    }
    SimplicialMesh::new(2, nodes, cells, boundary)
}

/// Like [`rect_tri_mesh`] but with the lower-left corner at `origin`.
pub fn rect_tri_mesh_at<T: Scalar>(
    origin: [T; 2],
    lx: T,
    ly: T,
    nx: usize,
    ny: usize,
    diagonal: Diagonal,
) -> Result<SimplicialMesh<T>, MeshError> {
    let mut mesh = rect_tri_mesh(lx, ly, nx, ny, diagonal)?;
    for p in &mut mesh.nodes {
        p[0] += origin[0];
        p[1] += origin[1];
    }
    Ok(mesh)
}

/// Local orthonormal tissue frame of one element. The sheet-normal direction
/// `n0` does not exist below three dimensions and is not stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberFrame<T> {
    pub f0: [T; 2],
    pub s0: [T; 2],
}

impl<T: Scalar> FiberFrame<T> {
    pub fn from_angle(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self { f0: [c, s], s0: [-s, c] }
    }

    pub fn is_orthonormal(&self, tol: T) -> bool {
        let n_f = (self.f0[0] * self.f0[0] + self.f0[1] * self.f0[1]).sqrt();
        let n_s = (self.s0[0] * self.s0[0] + self.s0[1] * self.s0[1]).sqrt();
        let d = self.f0[0] * self.s0[0] + self.f0[1] * self.s0[1];
        (n_f - T::one()).abs() <= tol && (n_s - T::one()).abs() <= tol && d.abs() <= tol
    }
}

/// Per-element fiber frames of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberField<T> {
    frames: Vec<FiberFrame<T>>,
}

impl<T: Scalar> FiberField<T> {
    pub fn new(frames: Vec<FiberFrame<T>>) -> Result<Self, MeshError> {
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
        if let Some(e) = frames.iter().position(|f| !f.is_orthonormal(tol)) {
            return Err(MeshError::FiberFrame { element: e });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[FiberFrame<T>] {
        &self.frames
    }

    pub fn frame(&self, e: usize) -> &FiberFrame<T> {
        &self.frames[e]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// The same fiber frame on every element. In 1D the angle is ignored and the
/// fiber direction is the line itself.
pub fn uniform_fiber_frame<T: Scalar>(mesh: &SimplicialMesh<T>, angle: T) -> FiberField<T> {
    let frame = if mesh.dim() == 1 { FiberFrame::from_angle(T::zero()) } else { FiberFrame::from_angle(angle) };
    FiberField { frames: vec![frame; mesh.n_elements()] }
}

/// Conductivities along the fiber, sheet and normal directions together
/// with the membrane surface-to-volume ratio `chi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSpec<T> {
    pub sigma_f: T,
    pub sigma_s: T,
    pub sigma_n: T,
    pub chi: T,
}

impl<T: Scalar> DiffusionSpec<T> {
    pub fn new(sigma_f: T, sigma_s: T, sigma_n: T, chi: T) -> Result<Self, MeshError> {
        positive("sigma_f", sigma_f)?;
        positive("sigma_s", sigma_s)?;
        positive("sigma_n", sigma_n)?;
        positive("chi", chi)?;
        Ok(Self { sigma_f, sigma_s, sigma_n, chi })
    }

    /// Transversely isotropic spec with `sigma_n = sigma_s`.
    pub fn transverse(sigma_f: T, sigma_s: T, chi: T) -> Result<Self, MeshError> {
        Self::new(sigma_f, sigma_s, sigma_s, chi)
    }

    pub fn isotropic(sigma: T, chi: T) -> Result<Self, MeshError> {
        Self::new(sigma, sigma, sigma, chi)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        Self::new(self.sigma_f, self.sigma_s, self.sigma_n, self.chi).map(|_| ())
    }

    /// Multiplies every conductivity by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            sigma_f: self.sigma_f * factor,
            sigma_s: self.sigma_s * factor,
            sigma_n: self.sigma_n * factor,
            chi: self.chi,
        }
    }

    /// Diffusion tensor `(sigma_f f0 f0^T + sigma_s s0 s0^T) / chi`.
    pub fn tensor(&self, frame: &FiberFrame<T>) -> [[T; 2]; 2] {
        let mut d = [[T::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                d[i][j] = (self.sigma_f * frame.f0[i] * frame.f0[j] + self.sigma_s * frame.s0[i] * frame.s0[j]) / self.chi;
            }
        }
        d
    }

    /// Diffusivity along the fibers, the only one that matters in 1D.
    pub fn fiber_diffusivity(&self) -> T {
        self.sigma_f / self.chi
    }
}
