//! Conjugated operator P_φ = e^{φ/h}(−h²Δ)e^{−φ/h} for φ = ±x₁, its Green operator G_φ and the single-layer operator S_φ.
//!
//! Spaces: X = all nodes with lumped weights D, Y = interior equation rows with weights D_I.
//! E: Y → X is zero extension and R = E† is restriction. Dense work is done in orthonormal
//! coordinates x̃ = D^{1/2} x, where all adjoints are plain transposes.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, NodeKind};
use crate::linalg::{mat_vec, mat_vec_c, spectral_norm};
use crate::sparse::Csr;

/// Largest admissible |φ|/h on the mesh.
pub const MAX_EXPONENT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HGrid {
    pub values: Vec<f64>,
}

impl Default for HGrid {
    fn default() -> Self {
        Self { values: vec![0.3, 0.2, 0.15, 0.1, 0.07, 0.05] }
    }
}

impl HGrid {
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MAX, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("empty h grid".into()));
        }
        for &h in &self.values {
            if !(0.05 - 1e-12..=0.5 + 1e-12).contains(&h) {
                return Err(Error::ParameterOutOfRange { h, min: 0.05, max: 0.5 });
            }
        }
        Ok(())
    }

    pub fn contains(&self, h: f64) -> Result<()> {
        if h < self.min() - 1e-12 || h > self.max() + 1e-12 {
            return Err(Error::ParameterOutOfRange { h, min: self.min(), max: self.max() });
        }
        Ok(())
    }
}

/// Weight φ = sign·x₁ with semiclassical parameter h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanWeight {
    pub h: f64,
    pub sign: f64,
}

impl CarlemanWeight {
    pub fn new(h: f64, sign: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::ParameterOutOfRange { h, min: 0.0, max: 1.0 });
        }
        Ok(Self { h, sign: sign.signum() })
    }

    pub fn in_grid(h: f64, sign: f64, grid: &HGrid) -> Result<Self> {
        grid.contains(h)?;
        Self::new(h, sign)
    }

    pub fn opposite(&self) -> Self {
        Self { h: self.h, sign: -self.sign }
    }

    /// φ(x)/h at x₁.
    pub fn exponent(&self, x1: f64) -> f64 {
        self.sign * x1 / self.h
    }

    pub fn check_exponent(&self, mesh: &Mesh) -> Result<()> {
        let e = mesh.x1_levels().iter().map(|&x| self.exponent(x).abs()).fold(0.0, f64::max);
        if e > MAX_EXPONENT {
            return Err(Error::WeightOverflow { exponent: e, limit: MAX_EXPONENT });
        }
        Ok(())
    }

    /// Principal symbol |ξ|² − |∇φ|² + 2i∇φ·ξ.
    pub fn symbol(&self, xi: [f64; 3]) -> Complex64 {
        Complex64::new(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2] - 1.0, 2.0 * self.sign * xi[0])
    }
}

/// Rows of the interior equations of P_φ over all node columns.
#[derive(Debug, Clone)]
pub struct ConjugatedOperator {
    pub weight: CarlemanWeight,
    rows: Csr,
    full: Csr,
}

pub fn assemble_conjugated(mesh: &Mesh, weight: CarlemanWeight) -> Result<ConjugatedOperator> {
    weight.check_exponent(mesh)?;
    let h2 = weight.h * weight.h;
    let d = mesh.mass();
    let n = mesh.len();
    let mut full = Vec::with_capacity(mesh.stiffness().nnz());
    let mut rows = Vec::new();
    for v in 0..n {
        let ev = weight.exponent(mesh.x1_of(v));
        for (c, k) in mesh.stiffness().row(v) {
            let val = h2 * k / d[v] * (ev - weight.exponent(mesh.x1_of(c))).exp();
            full.push((v, c, val));
            if let NodeKind::Interior(r) = mesh.kind(v) {
                rows.push((r, c, val));
            }
        }
    }
    Ok(ConjugatedOperator {
        weight,
        rows: Csr::from_triplets(mesh.interior().len(), n, rows),
        full: Csr::from_triplets(n, n, full),
    })
}

impl ConjugatedOperator {
    pub fn rows(&self) -> &Csr {
        &self.rows
    }

    /// P_φ u on interior rows.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows.matvec(u)
    }

    pub fn apply_c(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.rows.matvec_complex(u)
    }

    /// Full-row operator F_φ = e^{φ/h} h² D⁻¹K e^{−φ/h} on all nodes.
    pub fn apply_full(&self, u: &[f64]) -> Vec<f64> {
        self.full.matvec(u)
    }

    /// D_I^{1/2} P_φ D^{-1/2} as a dense matrix.
    pub fn orthonormal_matrix(&self, mesh: &Mesh) -> Mat<f64> {
        let sd: Vec<f64> = mesh.mass().iter().map(|d| d.sqrt()).collect();
        let mut m = Mat::zeros(self.rows.n_rows(), self.rows.n_cols());
        for (r, &i) in mesh.interior().iter().enumerate() {
            for (c, v) in self.rows.row(r) {
                m[(r, c)] = sd[i] * v / sd[c];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenOptions {
    pub kernel_tol: f64,
    pub gap_factor: f64,
    /// Negative control: drop the kernel-projection term of G_φ.
    #[serde(default)]
    pub zero_projection: bool,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self { kernel_tol: 1e-8, gap_factor: 10.0, zero_projection: false }
    }
}

/// Right inverse G_φ = H_φ R + π_φ E H_{−φ}† of P_φ, stored in orthonormal coordinates.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    pub weight: CarlemanWeight,
    /// Minimal-norm right inverse H̃ (all nodes × interior rows).
    pub h_inv: Mat<f64>,
    /// Orthogonal projection π̃ onto Ker P̃.
    pub projection: Mat<f64>,
    /// G̃ on all nodes.
    pub matrix: Mat<f64>,
    pub singular_values: Vec<f64>,
    pub kernel_dim: usize,
    pub gap: f64,
    sqrt_mass: Vec<f64>,
    interior: Vec<usize>,
}

struct Factor {
    h_inv: Mat<f64>,
    projection: Mat<f64>,
    singular_values: Vec<f64>,
    kernel_dim: usize,
    gap: f64,
}

fn factor(p: &Mat<f64>, opts: &GreenOptions) -> Result<Factor> {
    let (ni, n) = (p.nrows(), p.ncols());
    let svd = p.thin_svd().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let smax = s[0];
    let rank = s.iter().take_while(|&&v| v > opts.kernel_tol * smax).count();
    let gap = if rank < s.len() { s[rank - 1] / s[rank].max(f64::MIN_POSITIVE) } else { f64::INFINITY };
    if gap < opts.gap_factor {
        return Err(Error::KernelAmbiguous { gap, required: opts.gap_factor, spectrum: s });
    }
    let u = svd.U().subcols(0, rank);
    let v = svd.V().subcols(0, rank);
    let vs = Mat::from_fn(n, rank, |i, j| v[(i, j)] / s[j]);
    let h_inv = &vs * u.transpose();
    let vvt = v * v.transpose();
    let projection = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - vvt[(i, j)]);
    let _ = ni;
    Ok(Factor { h_inv, projection, singular_values: s, kernel_dim: n - rank, gap })
}

/// Builds G_φ and G_{−φ} together; each needs the other's minimal-norm inverse.
pub fn build_green_pair(mesh: &Mesh, h: f64, opts: &GreenOptions) -> Result<(GreenOperator, GreenOperator)> {
    let plus = assemble_conjugated(mesh, CarlemanWeight::new(h, 1.0)?)?;
    let minus = assemble_conjugated(mesh, CarlemanWeight::new(h, -1.0)?)?;
    let fp = factor(&plus.orthonormal_matrix(mesh), opts)?;
    let fm = factor(&minus.orthonormal_matrix(mesh), opts)?;
    let gp = assemble_green(mesh, plus.weight, &fp, &fm, opts);
    let gm = assemble_green(mesh, minus.weight, &fm, &fp, opts);
    Ok((gp.with_factor(fp), gm.with_factor(fm)))
}

/// Green operator for a single weight (builds the opposite factor internally).
pub fn build_green(mesh: &Mesh, weight: CarlemanWeight, opts: &GreenOptions) -> Result<GreenOperator> {
    let (gp, gm) = build_green_pair(mesh, weight.h, opts)?;
    Ok(if weight.sign > 0.0 { gp } else { gm })
}

struct Partial {
    weight: CarlemanWeight,
    matrix: Mat<f64>,
    sqrt_mass: Vec<f64>,
    interior: Vec<usize>,
}

impl Partial {
    fn with_factor(self, f: Factor) -> GreenOperator {
        GreenOperator {
            weight: self.weight,
            h_inv: f.h_inv,
            projection: f.projection,
            matrix: self.matrix,
            singular_values: f.singular_values,
            kernel_dim: f.kernel_dim,
            gap: f.gap,
            sqrt_mass: self.sqrt_mass,
            interior: self.interior,
        }
    }
}

fn assemble_green(mesh: &Mesh, weight: CarlemanWeight, own: &Factor, other: &Factor, opts: &GreenOptions) -> Partial {
    let n = mesh.len();
    let interior = mesh.interior().to_vec();
    let mut g = if opts.zero_projection {
        Mat::zeros(n, n)
    } else {
        let pi_cols = Mat::from_fn(n, interior.len(), |i, j| own.projection[(i, interior[j])]);
        &pi_cols * other.h_inv.transpose()
    };
    for (j, &c) in interior.iter().enumerate() {
        for i in 0..n {
            g[(i, c)] += own.h_inv[(i, j)];
        }
    }
    Partial { weight, matrix: g, sqrt_mass: mesh.mass().iter().map(|d| d.sqrt()).collect(), interior }
}

impl GreenOperator {
    /// G_φ x for a nodal field x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let xt: Vec<f64> = x.iter().zip(&self.sqrt_mass).map(|(v, s)| v * s).collect();
        mat_vec(self.matrix.as_ref(), &xt).into_iter().zip(&self.sqrt_mass).map(|(v, s)| v / s).collect()
    }

    pub fn apply_c(&self, x: &[Complex64]) -> Vec<Complex64> {
        let xt: Vec<Complex64> = x.iter().zip(&self.sqrt_mass).map(|(v, s)| v * s).collect();
        mat_vec_c(self.matrix.as_ref(), &xt).into_iter().zip(&self.sqrt_mass).map(|(v, s)| v / s).collect()
    }

    /// Batched G_φ applications sharing one matrix product.
    pub fn apply_many_c(&self, xs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let scaled: Vec<Vec<Complex64>> =
            xs.iter().map(|x| x.iter().zip(&self.sqrt_mass).map(|(v, s)| v * s).collect()).collect();
        crate::linalg::mat_vecs_c(self.matrix.as_ref(), &scaled)
            .into_iter()
            .map(|y| y.into_iter().zip(&self.sqrt_mass).map(|(v, s)| v / s).collect())
            .collect()
    }

    /// Rows of G_φ at the given nodes, applied to a batch of fields.
    pub fn apply_rows_many_c(&self, rows: &[usize], xs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let sub = Mat::from_fn(rows.len(), self.matrix.ncols(), |i, j| self.matrix[(rows[i], j)]);
        let scaled: Vec<Vec<Complex64>> =
            xs.iter().map(|x| x.iter().zip(&self.sqrt_mass).map(|(v, s)| v * s).collect()).collect();
        crate::linalg::mat_vecs_c(sub.as_ref(), &scaled)
            .into_iter()
            .map(|y| y.into_iter().zip(rows).map(|(v, &r)| v / self.sqrt_mass[r]).collect())
            .collect()
    }

    /// Entry of G_φ in nodal coordinates.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)] * self.sqrt_mass[j] / self.sqrt_mass[i]
    }

    /// Operator norm of G_φ on L²(dV).
    pub fn norm(&self) -> f64 {
        spectral_norm(self.matrix.as_ref(), 60)
    }

    /// T̃_φ = H̃_φ R (1 − π̃_{−φ}).
    pub fn t_operator(&self, opposite: &GreenOperator) -> Mat<f64> {
        let n = self.matrix.nrows();
        let rows = Mat::from_fn(self.interior.len(), n, |a, j| {
            let i = self.interior[a];
            (if i == j { 1.0 } else { 0.0 }) - opposite.projection[(i, j)]
        });
        &self.h_inv * &rows
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }
}

/// Residuals of the Green-operator properties at one h.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreenReport {
    pub h: f64,
    pub kernel_dim: usize,
    pub expected_kernel_dim: usize,
    pub gap: f64,
    pub right_inverse: f64,
    pub adjoint: f64,
    pub left_inverse: f64,
    pub projection_idempotent: f64,
    pub projection_symmetric: f64,
    pub projection_kernel: f64,
    pub t_adjoint: f64,
    pub norm: f64,
    pub trace_rank_margin: f64,
}

/// Deterministic pseudo-random fields for property checks.
pub fn test_vectors(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
                })
                .collect()
        })
        .collect()
}

fn rel(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - y) * (x - y)).sum();
    let den: f64 = b.iter().zip(w).map(|(y, w)| w * y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn verify_green(mesh: &Mesh, g: &GreenOperator, g_opp: &GreenOperator, seed: u64) -> Result<GreenReport> {
    let p = assemble_conjugated(mesh, g.weight)?;
    let n = mesh.len();
    let d = mesh.mass();
    let d_int: Vec<f64> = mesh.interior().iter().map(|&i| d[i]).collect();
    let mut right: f64 = 0.0;
    for y in test_vectors(mesh.interior().len(), 20, seed) {
        let mut x = vec![0.0; n];
        for (k, &i) in mesh.interior().iter().enumerate() {
            x[i] = y[k];
        }
        right = right.max(rel(&p.apply(&g.apply(&x)), &y, &d_int));
    }
    let layer = mesh.boundary_layer();
    let mut left: f64 = 0.0;
    for mut u in test_vectors(n, 20, seed + 1) {
        for (v, &l) in u.iter_mut().zip(&layer) {
            if l {
                *v = 0.0;
            }
        }
        left = left.max(rel(&g.apply(&p.apply_full(&u)), &u, d));
    }
    let adj = &g.matrix.transpose().to_owned() - &g_opp.matrix;
    let adjoint = adj.norm_l2() / g.matrix.norm_l2();
    let pi = &g.projection;
    let pi2 = pi * pi;
    let projection_idempotent = (&pi2 - pi).norm_l2() / pi.norm_l2();
    let projection_symmetric = (pi - pi.transpose()).norm_l2() / pi.norm_l2();
    let pt = p.orthonormal_matrix(mesh);
    let mut projection_kernel: f64 = 0.0;
    for v in test_vectors(n, 5, seed + 2) {
        let pv = mat_vec(pi.as_ref(), &v);
        let ppv = mat_vec(pt.as_ref(), &pv);
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        projection_kernel = projection_kernel.max(ppv.iter().map(|x| x * x).sum::<f64>().sqrt() / nv);
    }
    let t = g.t_operator(g_opp);
    let t_opp = g_opp.t_operator(g);
    let t_adjoint = (&t.transpose().to_owned() - &t_opp).norm_l2() / t.norm_l2().max(f64::MIN_POSITIVE);
    let trace_rows = Mat::from_fn(mesh.boundary().len(), n, |a, j| pi[(mesh.boundary()[a], j)]);
    let sv = crate::linalg::singular_values(trace_rows.as_ref())?;
    Ok(GreenReport {
        h: g.weight.h,
        kernel_dim: g.kernel_dim,
        expected_kernel_dim: mesh.boundary().len(),
        gap: g.gap,
        right_inverse: right,
        adjoint,
        left_inverse: left,
        projection_idempotent,
        projection_symmetric,
        projection_kernel,
        t_adjoint,
        norm: g.norm(),
        trace_rank_margin: *sv.last().unwrap() / sv[0],
    })
}

/// Smallest singular value of P_φ on compactly supported fields (vanishing on the boundary layer), in L²(dV) norms.
pub fn carleman_lower_bound(mesh: &Mesh, weight: CarlemanWeight) -> Result<f64> {
    let p = assemble_conjugated(mesh, weight)?;
    let full = p.orthonormal_matrix(mesh);
    let layer = mesh.boundary_layer();
    let support: Vec<usize> = (0..mesh.len()).filter(|&v| !layer[v]).collect();
    if support.is_empty() {
        return Err(Error::DegenerateResolution("no node lies outside the boundary layer".into()));
    }
    let block = Mat::from_fn(full.nrows(), support.len(), |i, j| full[(i, support[j])]);
    let s = crate::linalg::singular_values(block.as_ref())?;
    Ok(*s.last().unwrap())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarlemanRow {
    pub h: f64,
    pub bound: f64,
    pub ratio: f64,
}

pub fn carleman_table(mesh: &Mesh, grid: &HGrid) -> Result<Vec<CarlemanRow>> {
    grid.values
        .iter()
        .map(|&h| {
            let bound = carleman_lower_bound(mesh, CarlemanWeight::new(h, 1.0)?)?;
            Ok(CarlemanRow { h, bound, ratio: bound / h })
        })
        .collect()
}

/// S_φ = e^{−φ/h} γ G_φ γ† e^{φ/h} on boundary nodes, with γ† = D⁻¹ R_Bᵀ B.
#[derive(Debug, Clone)]
pub struct SingleLayerOp {
    pub weight: CarlemanWeight,
    pub matrix: Mat<f64>,
    /// φ/h at each boundary node.
    pub boundary_exponent: Vec<f64>,
}

pub fn build_single_layer(g: &GreenOperator, mesh: &Mesh) -> SingleLayerOp {
    let b = mesh.boundary();
    let bm = mesh.boundary_mass();
    let d = mesh.mass();
    let w = g.weight;
    let matrix = Mat::from_fn(b.len(), b.len(), |i, j| {
        let (bi, bj) = (b[i], b[j]);
        let e = w.exponent(mesh.x1_of(bj)) - w.exponent(mesh.x1_of(bi));
        g.entry(bi, bj) * bm[j] / d[bj] * e.exp()
    });
    let boundary_exponent = b.iter().map(|&v| w.exponent(mesh.x1_of(v))).collect();
    SingleLayerOp { weight: w, matrix, boundary_exponent }
}

impl SingleLayerOp {
    pub fn apply(&self, f: &[Complex64]) -> Vec<Complex64> {
        mat_vec_c(self.matrix.as_ref(), f)
    }
}

/// (γ G_φ)† k = D⁻¹ G_φᵀ D-adjoint applied to the boundary function k.
pub fn trace_adjoint(g: &GreenOperator, mesh: &Mesh, k: &[f64]) -> Vec<f64> {
    let n = mesh.len();
    let mut x = vec![0.0; n];
    for (a, &b) in mesh.boundary().iter().enumerate() {
        x[b] = k[a] * mesh.boundary_mass()[a] / mesh.mass()[b];
    }
    // G† = D⁻¹GᵀD, so in orthonormal coordinates it is the transpose.
    let s: Vec<f64> = mesh.mass().iter().map(|d| d.sqrt()).collect();
    let xt: Vec<f64> = x.iter().zip(&s).map(|(v, s)| v * s).collect();
    mat_vec(g.matrix.transpose(), &xt).into_iter().zip(&s).map(|(v, s)| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CylinderGeometry, Resolution};

    fn mesh() -> Mesh {
        CylinderGeometry::default().build_mesh(Resolution::new(3, 6)).unwrap()
    }

    #[test]
    fn conjugation_identity() {
        let m = mesh();
        let w = CarlemanWeight::new(0.2, 1.0).unwrap();
        let p = assemble_conjugated(&m, w).unwrap();
        let p0 = assemble_conjugated(&m, CarlemanWeight::new(0.2, 1.0).unwrap()).unwrap();
        for u in test_vectors(m.len(), 3, 5) {
            let ew: Vec<f64> = u.iter().enumerate().map(|(v, x)| x * w.exponent(m.x1_of(v)).exp()).collect();
            let lhs = p.apply(&ew);
            let lap = m.stiffness().matvec(&u);
            for (r, &i) in m.interior().iter().enumerate() {
                let rhs = w.exponent(m.x1_of(i)).exp() * 0.04 * lap[i] / m.mass()[i];
                assert!((lhs[r] - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
            }
        }
        let _ = p0;
    }

    #[test]
    fn green_properties_hold() {
        let m = mesh();
        let (gp, gm) = build_green_pair(&m, 0.2, &GreenOptions::default()).unwrap();
        let r = verify_green(&m, &gp, &gm, 1).unwrap();
        assert_eq!(r.kernel_dim, m.boundary().len());
        assert!(r.right_inverse < 1e-8, "{r:?}");
        assert!(r.adjoint < 1e-8, "{r:?}");
        assert!(r.left_inverse < 1e-8, "{r:?}");
        assert!(r.t_adjoint < 1e-8, "{r:?}");
        assert!(r.projection_idempotent < 1e-10 && r.projection_symmetric < 1e-10);
    }

    #[test]
    fn zeroed_projection_breaks_adjointness() {
        let m = mesh();
        let opts = GreenOptions { zero_projection: true, ..Default::default() };
        let (gp, gm) = build_green_pair(&m, 0.2, &opts).unwrap();
        let r = verify_green(&m, &gp, &gm, 1).unwrap();
        assert!(r.adjoint > 1e-3);
    }
}
