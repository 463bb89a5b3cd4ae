//! Ray transforms on the transversal disk: forward quadrature, constant-attenuation
//! (exponential Radon) filtered backprojection, and the λ-Taylor recursion.
//!
//! Sinogram convention: row-major (θ_i, p_j) over the chord family of `GeodesicGrid`, with t = 0 at the
//! entry point. `reversed` holds the same chords traversed from the other end, which is the
//! θ + π, −p chord of the full-circle family.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{direction, normal, DiskMesh, Geodesic, GeodesicGrid, TransversalManifold, TriangleLocator};
use crate::quasimodes::LAMBDA_MAX;

pub const SAMPLES_PER_UNIT: f64 = 200.0;
/// Smallest angle and offset counts accepted by the inversions.
pub const MIN_GRID: usize = 60;
/// Start of the cosine roll-off, as a fraction of the Nyquist frequency.
pub const TAPER_START: f64 = 0.8;
/// Fixed-point corrections applied for a conformal disk.
pub const CURVED_ITERATIONS: usize = 4;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// P1 field on a disk mesh with point evaluation.
#[derive(Debug, Clone)]
pub struct NodalField {
    pub mesh: Arc<DiskMesh>,
    locator: Arc<TriangleLocator>,
    pub values: Vec<Complex64>,
}

impl NodalField {
    pub fn new(mesh: Arc<DiskMesh>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} disk nodes", values.len(), mesh.len())));
        }
        let locator = Arc::new(TriangleLocator::new(&mesh));
        Ok(Self { mesh, locator, values })
    }

    pub fn from_fn(mesh: Arc<DiskMesh>, f: impl Fn([f64; 2]) -> Complex64) -> Self {
        let values = mesh.nodes().iter().map(|&p| f(p)).collect();
        let locator = Arc::new(TriangleLocator::new(&mesh));
        Self { mesh, locator, values }
    }

    pub fn with_values(&self, values: Vec<Complex64>) -> Self {
        Self { mesh: self.mesh.clone(), locator: self.locator.clone(), values }
    }

    pub fn eval(&self, p: [f64; 2]) -> Complex64 {
        self.locator.interpolate(&self.mesh, &self.values, p)
    }

    /// Relative L² distance on the lumped flat mass.
    pub fn relative_error(&self, reference: &[Complex64]) -> f64 {
        let m = self.mesh.lumped_mass(&crate::geometry::ConformalProfile::flat());
        let num: f64 = self.values.iter().zip(reference).zip(&m).map(|((a, b), w)| (a - b).norm_sqr() * w).sum();
        let den: f64 = reference.iter().zip(&m).map(|(b, w)| b.norm_sqr() * w).sum();
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }
}

/// ∫₀^L w(t) f(γ(t)) dt by composite Simpson with 200 samples per unit length.
pub fn line_integral(g: &Geodesic, f: &(dyn Fn([f64; 2]) -> Complex64 + Sync), w: impl Fn(f64) -> Complex64) -> Complex64 {
    let mut panels = (SAMPLES_PER_UNIT * g.length).ceil() as usize;
    panels += panels % 2;
    let panels = panels.max(2);
    let dt = g.length / panels as f64;
    let mut acc = ZERO;
    for k in 0..=panels {
        let t = k as f64 * dt;
        let c = if k == 0 || k == panels { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w(t) * f(g.point(t)) * c;
    }
    acc * (dt / 3.0)
}

/// Transform samples over the chord family.
#[derive(Debug, Clone, Serialize)]
pub struct RaySampleGrid {
    pub grid: GeodesicGrid,
    pub lambda: f64,
    /// D(λ, γ) with t = 0 at entry.
    pub values: Vec<Complex64>,
    /// The same chords parametrized from their exit point.
    pub reversed: Vec<Complex64>,
    /// Chord lengths.
    pub lengths: Vec<f64>,
}

impl RaySampleGrid {
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.grid.n_p + j]
    }

    /// Fills `reversed` from data at −λ of a real potential: D_rev(λ) = e^{−2λL} conj(D(−λ)).
    pub fn complete_from_negative(&mut self, negative: &RaySampleGrid) -> Result<()> {
        if negative.grid != self.grid || (negative.lambda + self.lambda).abs() > 1e-12 {
            return Err(Error::ShapeMismatch("orientation completion needs the same grid at −λ".into()));
        }
        let lambda = self.lambda;
        self.reversed = negative
            .values
            .iter()
            .zip(&self.lengths)
            .map(|(v, l)| v.conj() * (-2.0 * lambda * l).exp())
            .collect();
        Ok(())
    }
}

fn sample(f: &(dyn Fn([f64; 2]) -> Complex64 + Sync), lambda: f64, grid: &GeodesicGrid, geodesics: &[Geodesic]) -> RaySampleGrid {
    let pairs: Vec<(Complex64, Complex64)> = geodesics
        .par_iter()
        .map(|g| {
            let l = g.length;
            let fwd = line_integral(g, f, |t| Complex64::new((-2.0 * lambda * t).exp(), 0.0));
            let rev = if lambda == 0.0 { fwd } else { line_integral(g, f, |t| Complex64::new((-2.0 * lambda * (l - t)).exp(), 0.0)) };
            (fwd, rev)
        })
        .collect();
    RaySampleGrid {
        grid: grid.clone(),
        lambda,
        values: pairs.iter().map(|p| p.0).collect(),
        reversed: pairs.iter().map(|p| p.1).collect(),
        lengths: geodesics.iter().map(|g| g.length).collect(),
    }
}

/// I f(γ) = ∫₀^L f(γ(t)) dt over the grid.
pub fn forward_ray(f: &(dyn Fn([f64; 2]) -> Complex64 + Sync), grid: &GeodesicGrid, m0: &TransversalManifold) -> Result<RaySampleGrid> {
    forward_attenuated(f, 0.0, grid, m0)
}

/// D(λ, γ) = ∫₀^L e^{−2λt} f(γ(t)) dt over the grid.
pub fn forward_attenuated(f: &(dyn Fn([f64; 2]) -> Complex64 + Sync), lambda: f64, grid: &GeodesicGrid, m0: &TransversalManifold) -> Result<RaySampleGrid> {
    let geodesics = grid.trace(m0)?;
    Ok(sample(f, lambda, grid, &geodesics))
}

/// ∫₀^L (−2t)^m f(γ(t)) dt over pre-traced geodesics.
pub fn forward_weighted(f: &(dyn Fn([f64; 2]) -> Complex64 + Sync), power: u32, geodesics: &[Geodesic]) -> Vec<Complex64> {
    geodesics.par_iter().map(|g| line_integral(g, f, |t| Complex64::new((-2.0 * t).powi(power as i32), 0.0))).collect()
}

/// Band-limited ramp response on the padded frequency grid, tapered and with |σ| < |μ| removed.
fn filter_response(n_p: usize, dp: f64, mu: f64) -> (usize, Vec<f64>) {
    let n = (8 * n_p).next_power_of_two();
    let mut kernel = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let m = if k <= n / 2 { k as i64 } else { k as i64 - n as i64 };
        kernel[k].re = if m == 0 {
            1.0 / (4.0 * dp * dp)
        } else if m % 2 != 0 {
            -1.0 / (PI * PI * (m * m) as f64 * dp * dp)
        } else {
            0.0
        };
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut kernel);
    // The sampled kernel realizes |ν| in cycles; K_μ uses |σ| = 2π|ν|.
    let nyquist = PI / dp;
    let response = (0..n)
        .map(|k| {
            let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let sigma = (2.0 * PI * m / (n as f64 * dp)).abs();
            if sigma < mu.abs() {
                return 0.0;
            }
            let taper = if sigma <= TAPER_START * nyquist {
                1.0
            } else {
                let x = (sigma - TAPER_START * nyquist) / ((1.0 - TAPER_START) * nyquist);
                (0.5 * PI * x.min(1.0)).cos().powi(2)
            };
            2.0 * PI * kernel[k].re * dp * taper
        })
        .collect();
    (n, response)
}

fn check_grid(grid: &GeodesicGrid) -> Result<()> {
    if grid.n_theta < MIN_GRID || grid.n_p < MIN_GRID {
        return Err(Error::GridTooCoarse(format!("{}×{} chords, need at least {MIN_GRID}×{MIN_GRID}", grid.n_theta, grid.n_p)));
    }
    Ok(())
}

/// Exponential-Radon backprojection for g(θ, p) = ∫ f(pn + τd) e^{μτ} dτ on θ ∈ [0, 2π):
/// f(x) = (1/4π) ∫ e^{−μ x·d} (K_μ g)(θ, x·n) dθ.
fn exponential_fbp(full: &[Vec<Complex64>], grid: &GeodesicGrid, mu: f64, points: &[[f64; 2]]) -> Vec<Complex64> {
    let n_p = grid.n_p;
    let dp = grid.offset_step();
    let (n, response) = filter_response(n_p, dp, mu);
    let mut planner = FftPlanner::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n);
    let filtered: Vec<Vec<Complex64>> = full
        .par_iter()
        .map(|row| {
            let mut buf = vec![ZERO; n];
            buf[..n_p].copy_from_slice(row);
            fwd.process(&mut buf);
            for (b, r) in buf.iter_mut().zip(&response) {
                *b *= *r;
            }
            inv.process(&mut buf);
            buf.truncate(n_p);
            buf.iter().map(|v| v / n as f64).collect()
        })
        .collect();
    let angles = full.len();
    let dtheta = 2.0 * PI / angles as f64;
    points
        .par_iter()
        .map(|&x| {
            let mut acc = ZERO;
            for (a, row) in filtered.iter().enumerate() {
                let theta = PI * a as f64 / grid.n_theta as f64;
                let (d, nn) = (direction(theta), normal(theta));
                let p = x[0] * nn[0] + x[1] * nn[1];
                let s = (p + 1.0) / dp - 0.5;
                if s < -0.5 || s > n_p as f64 - 0.5 {
                    continue;
                }
                let k = (s.floor().max(0.0) as usize).min(n_p - 1);
                let k1 = (k + 1).min(n_p - 1);
                let u = (s - k as f64).clamp(0.0, 1.0);
                let v = row[k] * (1.0 - u) + row[k1] * u;
                acc += v * (-mu * (x[0] * d[0] + x[1] * d[1])).exp();
            }
            acc * (dtheta / (4.0 * PI))
        })
        .collect()
}

/// Full-circle sinogram g_μ(θ, p) from entry-parametrized data, with μ = −2λ.
fn full_sinogram(samples: &RaySampleGrid) -> Vec<Vec<Complex64>> {
    let (nt, np) = (samples.grid.n_theta, samples.grid.n_p);
    let lambda = samples.lambda;
    let mut rows = Vec::with_capacity(2 * nt);
    for rev in [false, true] {
        for i in 0..nt {
            let row = (0..np)
                .map(|j| {
                    // Chord (θ + π, p_j) is chord (θ, −p_j) read backwards.
                    let (jj, src) = if rev { (np - 1 - j, &samples.reversed) } else { (j, &samples.values) };
                    let idx = i * np + jj;
                    src[idx] * (lambda * samples.lengths[idx]).exp()
                })
                .collect();
            rows.push(row);
        }
    }
    rows
}

/// Unattenuated inversion onto the disk nodes; fixed-point corrected on a conformal disk.
pub fn invert_ray(samples: &RaySampleGrid, disk: Arc<DiskMesh>, m0: &TransversalManifold) -> Result<NodalField> {
    check_grid(&samples.grid)?;
    if samples.lambda != 0.0 {
        return Err(Error::Config("invert_ray expects unattenuated samples".into()));
    }
    let fbp = |s: &RaySampleGrid| exponential_fbp(&full_sinogram(s), &s.grid, 0.0, disk.nodes());
    let mut field = NodalField::new(disk.clone(), fbp(samples))?;
    if !m0.is_flat() {
        let geodesics = samples.grid.trace(m0)?;
        for _ in 0..CURVED_ITERATIONS {
            let current = sample(&|p| field.eval(p), 0.0, &samples.grid, &geodesics);
            let mut defect = samples.clone();
            for (d, c) in defect.values.iter_mut().zip(&current.values) {
                *d -= c;
            }
            for (d, c) in defect.reversed.iter_mut().zip(&current.reversed) {
                *d -= c;
            }
            let update = fbp(&defect);
            let values = field.values.iter().zip(&update).map(|(a, b)| a + b).collect();
            field = field.with_values(values);
        }
    }
    Ok(field)
}

/// Constant-attenuation inversion of D(λ, ·) on the flat disk; needs both orientations.
pub fn invert_attenuated_const(samples: &RaySampleGrid, disk: Arc<DiskMesh>, m0: &TransversalManifold) -> Result<NodalField> {
    check_grid(&samples.grid)?;
    if !m0.is_flat() {
        return Err(Error::Config("constant-attenuation inversion is implemented for the flat disk".into()));
    }
    let lambda = samples.lambda;
    let mu = -2.0 * lambda;
    let nyquist = PI / samples.grid.offset_step();
    if lambda.abs() > LAMBDA_MAX || mu.abs() >= TAPER_START * nyquist {
        return Err(Error::AttenuationTooStrong { lambda, limit: LAMBDA_MAX.min(TAPER_START * nyquist / 2.0) });
    }
    let values = exponential_fbp(&full_sinogram(samples), &samples.grid, mu, disk.nodes());
    NodalField::new(disk, values)
}

/// q̂(2λ, ·) sampled on the disk mesh.
#[derive(Debug, Clone)]
pub struct FourierSlice {
    pub lambda: f64,
    pub field: NodalField,
}

impl FourierSlice {
    /// max |q̂(−μ) − conj q̂(μ)| relative to the slice size.
    pub fn conjugate_asymmetry(&self, other: &FourierSlice) -> f64 {
        let scale = self.field.values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        self.field.values.iter().zip(&other.field.values).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max) / scale
    }
}

/// Finite-difference weights for derivatives 0..=m at x0 (Fornberg's recursion); weights[k][j] for node j.
pub fn fornberg_weights(x0: f64, nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Largest relative discrepancy allowed between the 7- and 9-point derivative estimates.
pub const TAYLOR_TOLERANCE: f64 = 0.05;
/// Highest Taylor order attempted.
pub const TAYLOR_MAX_ORDER: usize = 4;

#[derive(Debug, Clone)]
pub struct TaylorRecovery {
    /// ∂_μ^k q̂(0, ·) for k = 0..slices.len().
    pub slices: Vec<NodalField>,
    /// Relative 7- vs 9-point discrepancy per order.
    pub discrepancy: Vec<f64>,
    /// First order that failed the stability check, if any.
    pub truncated: Option<Error>,
}

/// The λ-Taylor route: derivatives of D at λ = 0 from central differences, then the triangular recursion
/// 2^k I[∂^k q̂] = ∂_λ^k D − Σ_{j<k} C(k,j) 2^j I[(−2t)^{k−j} ∂^j q̂], each step inverted with `invert_ray`.
pub fn taylor_recovery(data: &[RaySampleGrid], order: usize, disk: Arc<DiskMesh>, m0: &TransversalManifold) -> Result<TaylorRecovery> {
    if data.is_empty() {
        return Err(Error::Config("no λ samples".into()));
    }
    let grid = data[0].grid.clone();
    if data.iter().any(|d| d.grid != grid) {
        return Err(Error::ShapeMismatch("λ samples on different chord grids".into()));
    }
    let order = order.min(TAYLOR_MAX_ORDER);
    let mut by_distance: Vec<&RaySampleGrid> = data.iter().collect();
    by_distance.sort_by(|a, b| a.lambda.abs().total_cmp(&b.lambda.abs()).then(a.lambda.total_cmp(&b.lambda)));
    if by_distance.len() < 9 || by_distance[0].lambda.abs() > 1e-12 {
        return Err(Error::Config("Taylor route needs at least 9 λ samples including λ = 0".into()));
    }
    let stencil = |count: usize| -> Vec<&RaySampleGrid> {
        let mut s: Vec<&RaySampleGrid> = by_distance[..count].to_vec();
        s.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        s
    };
    let (s9, s7) = (stencil(9), stencil(7));
    let w9 = fornberg_weights(0.0, &s9.iter().map(|d| d.lambda).collect::<Vec<_>>(), order);
    let w7 = fornberg_weights(0.0, &s7.iter().map(|d| d.lambda).collect::<Vec<_>>(), order);
    let geodesics = grid.trace(m0)?;
    let mut slices: Vec<NodalField> = Vec::new();
    let mut discrepancy = Vec::new();
    let mut truncated = None;
    for k in 0..=order {
        let deriv = |s: &[&RaySampleGrid], w: &[f64], forward: bool| -> Vec<Complex64> {
            (0..grid.len())
                .map(|g| s.iter().zip(w).map(|(d, w)| if forward { d.values[g] } else { d.reversed[g] } * *w).sum())
                .collect()
        };
        let (d9, d7) = (deriv(&s9, &w9[k], true), deriv(&s7, &w7[k], true));
        let r9 = deriv(&s9, &w9[k], false);
        let norm9 = d9.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let diff = d9.iter().zip(&d7).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let scale = data.iter().flat_map(|d| d.values.iter()).map(|v| v.norm_sqr()).sum::<f64>().sqrt() / (data.len() as f64).sqrt();
        let disc = diff / norm9.max(1e-12 * scale).max(f64::MIN_POSITIVE);
        discrepancy.push(disc);
        if disc > TAYLOR_TOLERANCE && norm9 > 1e-6 * scale {
            truncated = Some(Error::TaylorUnstable { order: k, discrepancy: disc });
            break;
        }
        let mut rhs = d9;
        let mut rhs_rev = r9;
        for (j, slice) in slices.iter().enumerate() {
            let c = binomial(k, j) * 2f64.powi(j as i32);
            let f = |p: [f64; 2]| slice.eval(p);
            let fwd = forward_weighted(&f, (k - j) as u32, &geodesics);
            // Reading a chord backwards turns t into L − t.
            let rev: Vec<Complex64> = geodesics
                .par_iter()
                .map(|g| line_integral(g, &f, |t| Complex64::new((-2.0 * (g.length - t)).powi((k - j) as i32), 0.0)))
                .collect();
            for g in 0..grid.len() {
                rhs[g] -= fwd[g] * c;
                rhs_rev[g] -= rev[g] * c;
            }
        }
        let scale_k = 2f64.powi(k as i32);
        let samples = RaySampleGrid {
            grid: grid.clone(),
            lambda: 0.0,
            values: rhs.iter().map(|v| v / scale_k).collect(),
            reversed: rhs_rev.iter().map(|v| v / scale_k).collect(),
            lengths: data[0].lengths.clone(),
        };
        slices.push(invert_ray(&samples, disk.clone(), m0)?);
    }
    Ok(TaylorRecovery { slices, discrepancy, truncated })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> TransversalManifold {
        TransversalManifold::flat()
    }

    #[test]
    fn chord_values() {
        let m0 = flat();
        let grid = GeodesicGrid::new(4, 10);
        let one = forward_ray(&|_| Complex64::new(1.0, 0.0), &grid, &m0).unwrap();
        for j in 0..grid.n_p {
            let p = grid.offset(j);
            assert!((one.at(1, j).re - 2.0 * (1.0 - p * p).sqrt()).abs() < 1e-12);
        }
        let g = crate::geometry::trace_geodesic(&m0, 0.0, 0.0).unwrap();
        let d = line_integral(&g, &|_| Complex64::new(1.0, 0.0), |t| Complex64::new((-t).exp(), 0.0));
        assert!((d.re - (1.0 - (-2f64).exp())).abs() < 1e-8);
        let odd = line_integral(&crate::geometry::trace_geodesic(&m0, PI / 2.0, 0.0).unwrap(), &|p| Complex64::new(p[0], 0.0), |_| Complex64::new(1.0, 0.0));
        assert!(odd.norm() < 1e-12);
    }

    #[test]
    fn reversal_relation() {
        let m0 = flat();
        let grid = GeodesicGrid::new(3, 5);
        let f = |p: [f64; 2]| Complex64::new((-(p[0] - 0.2).powi(2) - p[1] * p[1]).exp(), 0.0);
        let plus = forward_attenuated(&f, 0.4, &grid, &m0).unwrap();
        let minus = forward_attenuated(&f, -0.4, &grid, &m0).unwrap();
        let mut completed = plus.clone();
        completed.complete_from_negative(&minus).unwrap();
        for (a, b) in completed.reversed.iter().zip(&plus.reversed) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fornberg_central_second_derivative() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[2][0] - 1.0).abs() < 1e-14 && (w[2][1] + 2.0).abs() < 1e-14 && (w[2][2] - 1.0).abs() < 1e-14);
        assert!((w[1][0] + 0.5).abs() < 1e-14 && w[1][1].abs() < 1e-14);
    }

    #[test]
    fn coarse_grid_rejected() {
        let m0 = flat();
        let grid = GeodesicGrid::new(10, 10);
        let s = forward_ray(&|_| Complex64::new(1.0, 0.0), &grid, &m0).unwrap();
        let disk = Arc::new(DiskMesh::rings(4).unwrap());
        assert!(matches!(invert_ray(&s, disk, &m0), Err(Error::GridTooCoarse(_))));
    }
}
