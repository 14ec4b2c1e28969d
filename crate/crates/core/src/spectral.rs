//! Laplace–Beltrami discretizations and truncated eigenbases.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Shape;
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

/// Default number of eigenfunctions.
pub const DEFAULT_K: usize = 30;

/// Above this vertex count the iterative solver is used.
pub const DENSE_EIGEN_LIMIT: usize = 1000;

/// Stiffness `W` (positive semidefinite, zero row sums) and lumped mass `A`.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub stiffness: CsrMatrix,
    pub mass: Vec<f64>,
}

impl LaplacianPair {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// Dirichlet form `fᵀ W f` for each column.
    pub fn quadratic_form(&self, f: &DVector<f64>) -> f64 {
        self.stiffness.mul_vec(f).dot(f)
    }
}

fn cot(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    // Cotangent of the angle at `a` in triangle (a, b, c).
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    dot / (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
}

/// Cotangent stiffness with barycentric lumped mass.
pub fn cotan_laplacian(shape: &Shape) -> Result<LaplacianPair> {
    if !shape.is_mesh() {
        return Err(Error::InvalidArgument(
            "cotangent Laplacian needs a triangle mesh".into(),
        ));
    }
    let n = shape.n_vertices();
    let v = shape.vertices();
    let mut edge_faces: std::collections::HashMap<(usize, usize), u8> = Default::default();
    let mut trip = Vec::with_capacity(shape.faces().len() * 12);
    let mut mass = vec![0.0; n];
    for f in shape.faces() {
        let area = crate::geometry::triangle_area(&v[f[0]], &v[f[1]], &v[f[2]]);
        if !(area > 0.0) {
            return Err(Error::Degenerate("zero-area face".into()));
        }
        for k in 0..3 {
            let (i, j, o) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let cnt = edge_faces.entry((i.min(j), i.max(j))).or_insert(0);
            *cnt += 1;
            if *cnt > 2 {
                return Err(Error::NonManifoldEdge(i.min(j), i.max(j)));
            }
            let w = 0.5 * cot(&v[o], &v[i], &v[j]);
            trip.push((i, j, -w));
            trip.push((j, i, -w));
            trip.push((i, i, w));
            trip.push((j, j, w));
            mass[f[k]] += area / 3.0;
        }
    }
    Ok(LaplacianPair {
        stiffness: CsrMatrix::from_triplets(n, &trip),
        mass,
    })
}

/// Symmetrized Gaussian kNN graph Laplacian.
///
/// Weights are `exp(-d²/h²)` on the max-symmetrized kNN graph; the mass is
/// the degree vector normalized to unit trace. The stiffness is scaled by
/// `4 / (h² Σ deg)` so that, for uniform dense samplings, the generalized
/// eigenvalues estimate those of the unit-area surface Laplacian.
pub fn pointcloud_laplacian(shape: &Shape, k_nn: usize, bandwidth: f64) -> Result<LaplacianPair> {
    let n = shape.n_vertices();
    if k_nn < 3 || k_nn >= n {
        return Err(Error::InvalidArgument(format!(
            "k_nn must satisfy 3 <= k_nn < n = {n}, got {k_nn}"
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let v = shape.vertices();
    let h2 = bandwidth * bandwidth;
    let mut weights: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        dist.clear();
        dist.extend((0..n).filter(|&j| j != i).map(|j| {
            let d2 = (v[i][0] - v[j][0]).powi(2)
                + (v[i][1] - v[j][1]).powi(2)
                + (v[i][2] - v[j][2]).powi(2);
            (d2, j)
        }));
        dist.select_nth_unstable_by(k_nn - 1, |a, b| a.partial_cmp(b).unwrap());
        for &(d2, j) in &dist[..k_nn] {
            let w = (-d2 / h2).exp();
            let key = (i.min(j), i.max(j));
            let e = weights.entry(key).or_insert(0.0);
            *e = e.max(w);
        }
    }
    let mut degree = vec![0.0; n];
    for (&(i, j), &w) in &weights {
        degree[i] += w;
        degree[j] += w;
    }
    let total: f64 = degree.iter().sum();
    if degree.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Degenerate(
            "isolated point in kNN graph (bandwidth too small)".into(),
        ));
    }
    let scale = 4.0 / (h2 * total);
    let mut trip = Vec::with_capacity(4 * weights.len());
    for (&(i, j), &w) in &weights {
        let w = scale * w;
        trip.extend([(i, j, -w), (j, i, -w), (i, i, w), (j, j, w)]);
    }
    Ok(LaplacianPair {
        stiffness: CsrMatrix::from_triplets(n, &trip),
        mass: degree.iter().map(|d| d / total).collect(),
    })
}

/// Truncated generalized eigenbasis of `(W, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// n×k, A-orthonormal columns.
    pub phi: DMatrix<f64>,
    /// Nondecreasing eigenvalues.
    pub evals: DVector<f64>,
    /// Diagonal of the lumped mass matrix.
    pub mass: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub dense_limit: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            dense_limit: DENSE_EIGEN_LIMIT,
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

pub fn eigenbasis(lap: &LaplacianPair, k: usize) -> Result<SpectralBasis> {
    eigenbasis_with(lap, k, &EigenOptions::default())
}

pub fn eigenbasis_with(
    lap: &LaplacianPair,
    k: usize,
    opts: &EigenOptions,
) -> Result<SpectralBasis> {
    let n = lap.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 0 < k < n = {n}, got k = {k}"
        )));
    }
    if lap.mass.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Degenerate(
            "mass matrix has non-positive entries".into(),
        ));
    }
    let (evals, mut phi) = if n <= opts.dense_limit {
        dense_eigen(lap, k)
    } else {
        subspace_eigen(lap, k, opts)?
    };
    fix_signs(&mut phi);
    let basis = SpectralBasis {
        phi,
        evals,
        mass: DVector::from_vec(lap.mass.clone()),
    };
    let res = basis.residual(lap);
    if !(res <= 1e-6) {
        return Err(Error::EigenNotConverged { residual: res });
    }
    Ok(basis)
}

fn dense_eigen(lap: &LaplacianPair, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = lap.n();
    let inv_sqrt: Vec<f64> = lap.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut b = lap.stiffness.to_dense();
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // Exact symmetrization guards against rounding in assembly.
    let b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[c])
            .then(a.cmp(&c))
    });
    let evals = DVector::from_fn(k, |j, _| eig.eigenvalues[order[j]]);
    let phi = DMatrix::from_fn(n, k, |i, j| eig.eigenvectors[(i, order[j])] * inv_sqrt[i]);
    (evals, phi)
}

/// Shift-invert block subspace iteration with Rayleigh–Ritz extraction.
fn subspace_eigen(
    lap: &LaplacianPair,
    k: usize,
    opts: &EigenOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = lap.n();
    let w = &lap.stiffness;
    let mass = &lap.mass;
    let p = (2 * k).max(k + 8).min(n);
    let scale = w.diagonal().iter().sum::<f64>() / mass.iter().sum::<f64>() / n as f64;
    let shift = 1e-3 * scale.max(f64::MIN_POSITIVE);
    let factor = EnvelopeCholesky::factor(&w.add_diagonal(shift, mass))?;

    // Deterministic, well-spread start block.
    let mut x = DMatrix::from_fn(n, p, |i, j| {
        let t = ((i * 7919 + j * 104_729) % 1_000_003) as f64 / 1_000_003.0;
        (2.0 * std::f64::consts::PI * (t + 0.37 * j as f64)).sin() + if j == 0 { 1.0 } else { 0.0 }
    });
    let mut last_res = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut y = DMatrix::zeros(n, p);
        for c in 0..p {
            let ax = DVector::from_fn(n, |i, _| mass[i] * x[(i, c)]);
            y.set_column(c, &factor.solve(&ax));
        }
        let q = y.qr().q();
        let wq = w.mul_dense(&q);
        let mut aq = q.clone();
        for (i, mut row) in aq.row_iter_mut().enumerate() {
            row *= mass[i];
        }
        let wr = q.transpose() * &wq;
        let ar = q.transpose() * &aq;
        let wr = (&wr + wr.transpose()) * 0.5;
        let ar = (&ar + ar.transpose()) * 0.5;
        let chol = ar
            .cholesky()
            .ok_or(Error::EigenNotConverged { residual: f64::NAN })?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or(Error::EigenNotConverged { residual: f64::NAN })?;
        let red = &l_inv * wr * l_inv.transpose();
        let red = (&red + red.transpose()) * 0.5;
        let eig = red.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        let coeffs = l_inv.transpose() * &eig.eigenvectors;
        let ritz = &q * coeffs;
        x = DMatrix::from_fn(n, p, |i, j| ritz[(i, order[j])]);
        let evals = DVector::from_fn(k, |j, _| eig.eigenvalues[order[j]]);

        let phi = x.columns(0, k).into_owned();
        let wphi = w.mul_dense(&phi);
        let mut r = wphi.clone();
        for j in 0..k {
            for i in 0..n {
                r[(i, j)] -= mass[i] * phi[(i, j)] * evals[j];
            }
        }
        last_res = r.norm() / wphi.norm().max(f64::MIN_POSITIVE);
        if last_res <= opts.tol {
            return Ok((evals, phi));
        }
    }
    Err(Error::EigenNotConverged { residual: last_res })
}

/// First entry above a small relative threshold is made positive in each column.
fn fix_signs(phi: &mut DMatrix<f64>) {
    for mut col in phi.column_iter_mut() {
        let max = col.amax();
        if let Some(v) = col.iter().copied().find(|v| v.abs() > 1e-8 * max) {
            if v < 0.0 {
                col.neg_mut();
            }
        }
    }
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    /// The first `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> SpectralBasis {
        let k = k.min(self.k());
        SpectralBasis {
            phi: self.phi.columns(0, k).into_owned(),
            evals: self.evals.rows(0, k).into_owned(),
            mass: self.mass.clone(),
        }
    }

    /// `Φᵀ A` (k×n), the mass-weighted pseudo-inverse.
    pub fn pinv(&self) -> DMatrix<f64> {
        let mut t = self.phi.transpose();
        for (j, mut col) in t.column_iter_mut().enumerate() {
            col *= self.mass[j];
        }
        t
    }

    /// Spectral coefficients `Φᵀ A F`.
    pub fn project(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.nrows() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} rows, basis has {}",
                f.nrows(),
                self.n()
            )));
        }
        let mut af = f.clone();
        for (i, mut row) in af.row_iter_mut().enumerate() {
            row *= self.mass[i];
        }
        Ok(self.phi.tr_mul(&af))
    }

    /// `Φ · coeffs`.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coeffs.nrows() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients have {} rows, basis has k = {}",
                coeffs.nrows(),
                self.k()
            )));
        }
        Ok(&self.phi * coeffs)
    }

    /// `‖WΦ − AΦΛ‖_F / ‖WΦ‖_F`.
    pub fn residual(&self, lap: &LaplacianPair) -> f64 {
        let wphi = lap.stiffness.mul_dense(&self.phi);
        let mut r = wphi.clone();
        for j in 0..self.k() {
            for i in 0..self.n() {
                r[(i, j)] -= self.mass[i] * self.phi[(i, j)] * self.evals[j];
            }
        }
        let denom = wphi.norm();
        if denom == 0.0 {
            r.norm()
        } else {
            r.norm() / denom
        }
    }

    /// `max |ΦᵀAΦ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.pinv() * &self.phi;
        (g - DMatrix::identity(self.k(), self.k())).amax()
    }

    /// Per-channel spectral heat diffusion `Φ diag(e^{-λ t_c}) Φᵀ A F[:, c]`.
    pub fn heat_diffuse(&self, f: &DMatrix<f64>, times: &[f64]) -> Result<DMatrix<f64>> {
        if times.len() != f.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} diffusion times for {} channels",
                times.len(),
                f.ncols()
            )));
        }
        if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "negative diffusion time {t}"
            )));
        }
        let mut coeffs = self.project(f)?;
        for (c, mut col) in coeffs.column_iter_mut().enumerate() {
            for (j, x) in col.iter_mut().enumerate() {
                *x *= (-self.evals[j] * times[c]).exp();
            }
        }
        Ok(&self.phi * coeffs)
    }

    fn check_descriptor_spectrum(&self) -> Result<(f64, f64)> {
        let k = self.k();
        let l1 = if k > 1 { self.evals[1] } else { 0.0 };
        if !(l1 > 1e-10) {
            return Err(Error::Degenerate(
                "descriptor needs at least two distinct eigenvalues".into(),
            ));
        }
        Ok((l1, self.evals[k - 1]))
    }

    /// Heat kernel signature at `n_times` log-spaced times in
    /// `[4 ln 10 / λ_max, 4 ln 10 / λ_1]`.
    pub fn hks(&self, n_times: usize) -> Result<Descriptor> {
        let (l1, lk) = self.check_descriptor_spectrum()?;
        let (tmin, tmax) = (4.0 * 10f64.ln() / lk, 4.0 * 10f64.ln() / l1);
        let times = log_space(tmin, tmax, n_times);
        Ok(Descriptor {
            values: self.hks_at(&times),
            kind: DescriptorKind::Hks,
        })
    }

    pub fn hks_at(&self, times: &[f64]) -> DMatrix<f64> {
        let sq = self.phi.map(|x| x * x);
        let mut out = DMatrix::zeros(self.n(), times.len());
        for (c, &t) in times.iter().enumerate() {
            let w = self.evals.map(|l| (-l.max(0.0) * t).exp());
            out.set_column(c, &(&sq * w));
        }
        out
    }

    /// Wave kernel signature with log-normal energy filters.
    pub fn wks(&self, n_energies: usize) -> Result<Descriptor> {
        self.check_descriptor_spectrum()?;
        let logs: Vec<(usize, f64)> = (0..self.k())
            .filter(|&j| self.evals[j] > 1e-10)
            .map(|j| (j, self.evals[j].ln()))
            .collect();
        let emin = logs.first().unwrap().1;
        let emax = logs.last().unwrap().1;
        let sigma = 7.0 * (emax - emin) / n_energies as f64;
        let energies = lin_space(emin + 2.0 * sigma, emax - 2.0 * sigma, n_energies);
        let mut out = DMatrix::zeros(self.n(), n_energies);
        for (c, &e) in energies.iter().enumerate() {
            let coefs: Vec<(usize, f64)> = logs
                .iter()
                .map(|&(j, le)| (j, (-(e - le).powi(2) / (2.0 * sigma * sigma)).exp()))
                .collect();
            let norm: f64 = coefs.iter().map(|c| c.1).sum();
            for i in 0..self.n() {
                out[(i, c)] = coefs
                    .iter()
                    .map(|&(j, w)| w * self.phi[(i, j)].powi(2))
                    .sum::<f64>()
                    / norm;
            }
        }
        Ok(Descriptor {
            values: out,
            kind: DescriptorKind::Wks,
        })
    }
}

fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    lin_space(a.ln(), b.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

fn lin_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    Hks,
    Wks,
    Xyz,
    Learned,
}

#[derive(Debug, Clone)]
pub struct Descriptor {
    pub values: DMatrix<f64>,
    pub kind: DescriptorKind,
}

/// SHA-256 of arbitrary source bytes, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a shape's vertex and face data.
pub fn shape_hash(shape: &Shape) -> String {
    let mut h = Sha256::new();
    for v in shape.vertices() {
        for c in v {
            h.update(c.to_le_bytes());
        }
    }
    for f in shape.faces() {
        for i in f {
            h.update((*i as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

const CACHE_MAGIC: &[u8; 8] = b"NCPBASIS";
const CACHE_VERSION: u32 = 1;

/// Writes the binary basis cache: magic, version, n, k, source hash,
/// evals, Φ (column-major), mass. All numbers little-endian.
pub fn write_basis_cache(path: &Path, basis: &SpectralBasis, source_hash: &str) -> Result<()> {
    let hash = hex::decode(source_hash)
        .ok()
        .filter(|h| h.len() == 32)
        .ok_or_else(|| Error::InvalidArgument("source hash must be 64 hex chars".into()))?;
    let mut buf = Vec::with_capacity(64 + 8 * (basis.n() * (basis.k() + 1) + basis.k()));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(basis.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(basis.k() as u64).to_le_bytes());
    buf.extend_from_slice(&hash);
    for x in basis
        .evals
        .iter()
        .chain(basis.phi.iter())
        .chain(basis.mass.iter())
    {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a basis cache, returning it with the stored source hash.
pub fn read_basis_cache(path: &Path) -> Result<(SpectralBasis, String)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if buf.len() < 60 || &buf[..8] != CACHE_MAGIC {
        return Err(bad("not a basis cache"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let k = u64::from_le_bytes(buf[20..28].try_into().unwrap()) as usize;
    let hash = hex::encode(&buf[28..60]);
    let body = &buf[60..];
    let expected = 8 * (k + n * k + n);
    if body.len() != expected {
        return Err(bad(&format!(
            "expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let evals = DVector::from_iterator(k, vals.by_ref().take(k));
    let phi = DMatrix::from_iterator(n, k, vals.by_ref().take(n * k));
    let mass = DVector::from_iterator(n, vals);
    Ok((SpectralBasis { phi, evals, mass }, hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use crate::synth::icosphere;

    fn equilateral() -> Shape {
        let h = 3f64.sqrt() / 2.0;
        // Two equilateral triangles sharing edge (1, 2); the four outer edges
        // have a single incident face, as in a lone triangle.
        Shape::new(
            "fan",
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.5, h, 0.0],
                [1.5, h, 0.0],
            ],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap()
    }

    #[test]
    fn equilateral_cotan_weights() {
        let lap = cotan_laplacian(&equilateral()).unwrap();
        let w = -(60f64.to_radians().tan().recip()) / 2.0;
        assert!((w + 0.288_675_134_594_812_9).abs() < 1e-15);
        // Boundary edges (0,1), (0,2), (1,3), (2,3) have one face.
        for (i, j) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            assert!((lap.stiffness.get(i, j) - w).abs() < 1e-12);
        }
        // The shared edge (1,2) sees two 60° angles.
        assert!((lap.stiffness.get(1, 2) - 2.0 * w).abs() < 1e-12);
        let area = 3f64.sqrt() / 4.0;
        assert!((lap.mass[0] - area / 3.0).abs() < 1e-15);
        assert!((lap.mass[1] - 2.0 * area / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cotan_row_sums_and_area() {
        let s = normalize(&icosphere(2)).unwrap();
        let lap = cotan_laplacian(&s).unwrap();
        assert!(lap.stiffness.row_sums().iter().all(|r| r.abs() < 1e-10));
        assert!(lap.stiffness.max_asymmetry() < 1e-14);
        assert!((lap.mass.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let s = Shape::new(
            "nm",
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        )
        .unwrap();
        assert!(matches!(
            cotan_laplacian(&s),
            Err(Error::NonManifoldEdge(0, 1))
        ));
    }

    #[test]
    fn dense_matches_subspace_iteration() {
        let s = normalize(&icosphere(3)).unwrap();
        let lap = cotan_laplacian(&s).unwrap();
        let dense = eigenbasis(&lap, 20).unwrap();
        let iter = eigenbasis_with(
            &lap,
            20,
            &EigenOptions {
                dense_limit: 0,
                ..Default::default()
            },
        )
        .unwrap();
        for j in 0..20 {
            assert!((dense.evals[j] - iter.evals[j]).abs() < 1e-6 * (1.0 + dense.evals[j]));
        }
        assert!(iter.residual(&lap) < 1e-6);
        assert!(iter.orthonormality_error() < 1e-8);
    }

    #[test]
    fn invalid_k() {
        let lap = cotan_laplacian(&icosphere(1)).unwrap();
        assert!(eigenbasis(&lap, 0).is_err());
        assert!(eigenbasis(&lap, 42).is_err());
    }

    #[test]
    fn negative_time_rejected() {
        let lap = cotan_laplacian(&normalize(&icosphere(1)).unwrap()).unwrap();
        let b = eigenbasis(&lap, 10).unwrap();
        let f = DMatrix::from_element(b.n(), 1, 1.0);
        assert!(b.heat_diffuse(&f, &[-0.1]).is_err());
        assert!(b.heat_diffuse(&f, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn pointcloud_k_range() {
        let s = icosphere(1);
        assert!(pointcloud_laplacian(&s, 2, 1.0).is_err());
        assert!(pointcloud_laplacian(&s, 42, 1.0).is_err());
        assert!(pointcloud_laplacian(&s, 6, 1.0).is_ok());
    }
}
