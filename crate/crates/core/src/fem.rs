//! P1 finite element operators and the conjugate gradient solver.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{DiffusionSpec, FiberField, MeshError, SimplicialMesh};
use crate::scalar::{dot, norm2, Scalar};

const PAR_ROWS: usize = 32_768;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("element {element} is degenerate (measure {measure})")]
    Degenerate { element: usize, measure: f64 },
    #[error("fiber field has {got} frames for {expected} elements")]
    FiberCount { expected: usize, got: usize },
    #[error("operator dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("operators do not share a sparsity pattern")]
    Pattern,
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("conjugate gradient broke down: operator is not positive definite")]
    Breakdown,
}

/// Square sparse matrix in compressed sparse row form. Column indices are
/// sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseOperator<T> {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self, FemError> {
        let mut rows: Vec<BTreeMap<usize, T>> = vec![BTreeMap::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(FemError::Dimension { expected: n, got: i.max(j) + 1 });
            }
            *rows[i].entry(j).or_insert_with(T::zero) += v;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { n, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![T::one(); n] }
    }

    /// Zero matrix with the node-adjacency pattern of `mesh`.
    pub fn zeros_like_mesh(mesh: &SimplicialMesh<T>) -> Self {
        let n = mesh.n_nodes();
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for el in mesh.elements() {
            for &a in el {
                for &b in el {
                    adj[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(&row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self { n, row_ptr, col_idx, values: vec![T::zero(); nnz] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Entry `(i, j)`, zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.position(i, j).map_or(T::zero(), |k| self.values[k])
    }

    fn add_at(&mut self, i: usize, j: usize, v: T) {
        let k = self.position(i, j).expect("entry inside sparsity pattern");
        self.values[k] += v;
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).1.iter().copied().sum()).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let row = |i: usize| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).fold(T::zero(), |acc, (&j, &a)| acc + a * x[j])
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        dot(x, &self.apply(x))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).all(|(&j, &a)| (a - self.get(j, i)).abs() <= tol)
        })
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// `a A + b B` for operators on a common pattern.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Result<Self, FemError> {
        if !self.same_pattern(other) {
            return Err(FemError::Pattern);
        }
        let mut out = self.clone();
        for (o, &v) in out.values.iter_mut().zip(&other.values) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }

    /// `scale A + diag(d)`. The diagonal must be inside the pattern.
    pub fn scaled_plus_diagonal(&self, scale: T, d: &[T]) -> Result<Self, FemError> {
        if d.len() != self.n {
            return Err(FemError::Dimension { expected: self.n, got: d.len() });
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= scale;
        }
        for (i, &di) in d.iter().enumerate() {
            out.add_at(i, i, di);
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut m = vec![vec![T::zero(); self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        m
    }
}

fn check_measure<T: Scalar>(mesh: &SimplicialMesh<T>, e: usize) -> Result<T, FemError> {
    let m = mesh.signed_measure(e);
    if !(m > T::zero()) {
        return Err(FemError::Degenerate { element: e, measure: m.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(m)
}

fn element_mass<T: Scalar>(mesh: &SimplicialMesh<T>, e: usize) -> Result<[[T; 3]; 3], FemError> {
    let m = check_measure(mesh, e)?;
    let mut out = [[T::zero(); 3]; 3];
    let (diag, off) = if mesh.dim() == 1 { (m / T::lit(3.0), m / T::lit(6.0)) } else { (m / T::lit(6.0), m / T::lit(12.0)) };
    let k = mesh.dim() + 1;
    for (a, row) in out.iter_mut().enumerate().take(k) {
        for (b, v) in row.iter_mut().enumerate().take(k) {
            *v = if a == b { diag } else { off };
        }
    }
    Ok(out)
}

fn element_stiffness<T: Scalar>(
    mesh: &SimplicialMesh<T>,
    fibers: &FiberField<T>,
    spec: &DiffusionSpec<T>,
    e: usize,
) -> Result<[[T; 3]; 3], FemError> {
    let m = check_measure(mesh, e)?;
    let d = spec.tensor(fibers.frame(e));
    let el = mesh.element(e);
    let mut out = [[T::zero(); 3]; 3];
    if mesh.dim() == 1 {
        let k = d[0][0] / m;
        out[0][0] = k;
        out[1][1] = k;
        out[0][1] = -k;
        out[1][0] = -k;
        return Ok(out);
    }
    let p = [mesh.node(el[0]), mesh.node(el[1]), mesh.node(el[2])];
    let two_a = m + m;
    let mut grad = [[T::zero(); 2]; 3];
    for a in 0..3 {
        let b = p[(a + 1) % 3];
        let c = p[(a + 2) % 3];
        grad[a] = [(b[1] - c[1]) / two_a, (c[0] - b[0]) / two_a];
    }
    for a in 0..3 {
        let dg = [
            d[0][0] * grad[a][0] + d[0][1] * grad[a][1],
            d[1][0] * grad[a][0] + d[1][1] * grad[a][1],
        ];
        for b in 0..3 {
            out[b][a] = m * (dg[0] * grad[b][0] + dg[1] * grad[b][1]);
        }
    }
    Ok(out)
}

fn scatter<T: Scalar>(op: &mut SparseOperator<T>, el: &[usize], local: &[[T; 3]; 3]) {
    for (a, &i) in el.iter().enumerate() {
        for (b, &j) in el.iter().enumerate() {
            op.add_at(i, j, local[a][b]);
        }
    }
}

/// Consistent P1 mass matrix `M_AB = (N_A, N_B)` over the listed elements,
/// on the full-mesh sparsity pattern.
pub fn assemble_mass_subset<T: Scalar>(mesh: &SimplicialMesh<T>, elements: &[usize]) -> Result<SparseOperator<T>, FemError> {
    let mut op = SparseOperator::zeros_like_mesh(mesh);
    for &e in elements {
        let local = element_mass(mesh, e)?;
        scatter(&mut op, mesh.element(e), &local);
    }
    Ok(op)
}

pub fn assemble_mass<T: Scalar>(mesh: &SimplicialMesh<T>) -> Result<SparseOperator<T>, FemError> {
    let all: Vec<usize> = (0..mesh.n_elements()).collect();
    assemble_mass_subset(mesh, &all)
}

/// Row-summed mass matrix, returned as its diagonal.
pub fn lump_mass<T: Scalar>(mass: &SparseOperator<T>) -> Vec<T> {
    mass.row_sums()
}

/// Stiffness matrix `K_AB = (grad N_A, D grad N_B)` over the listed elements
/// with `D = (sigma_f f0 f0^T + sigma_s s0 s0^T) / chi` per element.
pub fn assemble_stiffness_subset<T: Scalar>(
    mesh: &SimplicialMesh<T>,
    fibers: &FiberField<T>,
    spec: &DiffusionSpec<T>,
    elements: &[usize],
) -> Result<SparseOperator<T>, FemError> {
    spec.validate()?;
    if fibers.len() != mesh.n_elements() {
        return Err(FemError::FiberCount { expected: mesh.n_elements(), got: fibers.len() });
    }
    let mut op = SparseOperator::zeros_like_mesh(mesh);
    for &e in elements {
        let local = element_stiffness(mesh, fibers, spec, e)?;
        scatter(&mut op, mesh.element(e), &local);
    }
    Ok(op)
}

pub fn assemble_stiffness<T: Scalar>(
    mesh: &SimplicialMesh<T>,
    fibers: &FiberField<T>,
    spec: &DiffusionSpec<T>,
) -> Result<SparseOperator<T>, FemError> {
    let all: Vec<usize> = (0..mesh.n_elements()).collect();
    assemble_stiffness_subset(mesh, fibers, spec, &all)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
    /// Symmetric successive over-relaxation with the given factor in (0, 2).
    Ssor(f64),
}

impl std::str::FromStr for Preconditioner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "jacobi" => Ok(Self::Jacobi),
            "ssor" => Ok(Self::Ssor(1.0)),
            other => Err(format!("unknown preconditioner `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// Defaults to `10 n` when `None`.
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
    /// Restrict the solve to zero-mean vectors, for pure-Neumann operators
    /// whose kernel is the constants.
    pub deflate: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iter: None, precond: Preconditioner::Jacobi, deflate: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CgReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
}

fn remove_mean<T: Scalar>(x: &mut [T]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().copied().sum::<T>() / T::from_usize_lossy(x.len());
    for v in x {
        *v -= mean;
    }
}

struct Precond<'a, T> {
    a: &'a SparseOperator<T>,
    kind: Preconditioner,
    diag: Vec<T>,
}

impl<'a, T: Scalar> Precond<'a, T> {
    fn new(a: &'a SparseOperator<T>, kind: Preconditioner) -> Result<Self, FemError> {
        let diag = a.diagonal();
        if kind != Preconditioner::None && diag.iter().any(|&d| !(d > T::zero())) {
            return Err(FemError::Breakdown);
        }
        Ok(Self { a, kind, diag })
    }

    fn apply(&self, r: &[T], z: &mut [T]) {
        match self.kind {
            Preconditioner::None => z.copy_from_slice(r),
            Preconditioner::Jacobi => {
                for ((zi, &ri), &di) in z.iter_mut().zip(r).zip(&self.diag) {
                    *zi = ri / di;
                }
            }
            Preconditioner::Ssor(omega) => {
                let w = T::lit(omega);
                let n = r.len();
                for i in 0..n {
                    let (cols, vals) = self.a.row(i);
                    let mut s = r[i];
                    for (&j, &v) in cols.iter().zip(vals) {
                        if j >= i {
                            break;
                        }
                        s -= v * z[j];
                    }
                    z[i] = s * w / self.diag[i];
                }
                for i in 0..n {
                    z[i] = z[i] * self.diag[i] / w;
                }
                for i in (0..n).rev() {
                    let (cols, vals) = self.a.row(i);
                    let mut s = z[i];
                    for (&j, &v) in cols.iter().zip(vals).rev() {
                        if j <= i {
                            break;
                        }
                        s -= v * z[j];
                    }
                    z[i] = s * w / self.diag[i];
                }
                let scale = (T::lit(2.0) - w) / w;
                for v in z.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
}

/// Preconditioned conjugate gradients for `A x = b`, starting from the
/// content of `x`. Converged when `|b - A x| <= rel_tol |b|`.
pub fn cg_solve<T: Scalar>(a: &SparseOperator<T>, b: &[T], x: &mut [T], opts: &CgOptions) -> Result<CgReport, FemError> {
    let n = a.n();
    if b.len() != n {
        return Err(FemError::Dimension { expected: n, got: b.len() });
    }
    if x.len() != n {
        return Err(FemError::Dimension { expected: n, got: x.len() });
    }
    let mut rhs = b.to_vec();
    if opts.deflate {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let b_norm = norm2(&rhs);
    if b_norm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgReport { iterations: 0, final_relative_residual: 0.0 });
    }
    let tol = T::lit(opts.rel_tol) * b_norm;
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let pc = Precond::new(a, opts.precond)?;

    let mut r = vec![T::zero(); n];
    a.matvec(x, &mut r);
    for (ri, &bi) in r.iter_mut().zip(&rhs) {
        *ri = bi - *ri;
    }
    if opts.deflate {
        remove_mean(&mut r);
    }
    let mut z = vec![T::zero(); n];
    let mut ap = vec![T::zero(); n];
    let mut res = norm2(&r);
    if res <= tol {
        return Ok(CgReport { iterations: 0, final_relative_residual: (res / b_norm).to_f64().unwrap_or(f64::NAN) });
    }
    pc.apply(&r, &mut z);
    if opts.deflate {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(FemError::Breakdown);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.deflate {
            remove_mean(&mut r);
        }
        res = norm2(&r);
        if res <= tol {
            if opts.deflate {
                remove_mean(x);
            }
            return Ok(CgReport { iterations: it, final_relative_residual: (res / b_norm).to_f64().unwrap_or(f64::NAN) });
        }
        pc.apply(&r, &mut z);
        if opts.deflate {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NotConverged { iterations: max_iter, residual: (res / b_norm).to_f64().unwrap_or(f64::NAN) })
}
