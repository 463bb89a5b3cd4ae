//! Attenuated ray data D(λ, γ) from the DN maps: CGO traces, the boundary integral equation and an h → 0 fit.
//!
//! For each h, u₀ and u₂ are only needed on ∂M, so G_{±φ}P_{±φ} is formed once on boundary rows and every
//! (γ, λ) pair becomes one column of a dense product.

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::carleman::{assemble_conjugated, build_green_pair, build_single_layer, ConjugatedOperator, GreenOperator, GreenOptions};
use crate::error::{Error, Result};
use crate::forward::{DnMap, Potential};
use crate::geometry::{Geodesic, GeodesicGrid, Mesh};
use crate::linalg::DenseLu;
use crate::quasimodes::{build_quasimode, BeamOptions, SpectralParameter};
use crate::raytransform::RaySampleGrid;
use crate::traces::{trace_operator, Margin};

use super::boundary::Extension;

/// Geodesics per batch; each contributes one column per λ.
const CHUNK: usize = 48;

/// Inputs shared by every recovery stage.
#[derive(Clone, Copy)]
pub struct RecoverySetup<'a> {
    pub mesh: &'a Mesh,
    pub dn_q: &'a DnMap,
    pub dn_0: &'a DnMap,
    pub green: GreenOptions,
    pub beam: BeamOptions,
    pub margin_threshold: f64,
}

/// Where the trace of u₁ comes from.
#[derive(Debug, Clone)]
pub enum TraceSource {
    /// Solve the boundary integral equation (data only).
    Equation,
    /// Build u₁ from the known potential (stage-isolation oracle).
    Oracle(Potential),
}

/// Split real and imaginary parts of a complex matrix.
struct CMat {
    re: Mat<f64>,
    im: Mat<f64>,
}

impl CMat {
    fn zeros(r: usize, c: usize) -> Self {
        Self { re: Mat::zeros(r, c), im: Mat::zeros(r, c) }
    }

    fn left(a: &Mat<f64>, x: &CMat) -> CMat {
        CMat { re: a * &x.re, im: a * &x.im }
    }

    fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[(i, j)], self.im[(i, j)])
    }

    fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.re[(i, j)] = z.re;
        self.im[(i, j)] = z.im;
    }
}

/// Nodal (G P)[rows, :] with G in nodal coordinates.
fn green_times_operator(mesh: &Mesh, g: &GreenOperator, p: &ConjugatedOperator, rows: &[usize]) -> Mat<f64> {
    let interior = mesh.interior();
    let gsub = Mat::from_fn(rows.len(), interior.len(), |i, a| g.entry(rows[i], interior[a]));
    let mut pd = Mat::zeros(interior.len(), mesh.len());
    for a in 0..interior.len() {
        for (c, v) in p.rows().row(a) {
            pd[(a, c)] = v;
        }
    }
    &gsub * &pd
}

/// Oracle-side operators for u₁: the full G P, the factored I + h²qG̃ and G̃ on boundary rows.
struct OracleParts {
    full: Mat<f64>,
    lu: DenseLu,
    g_boundary: Mat<f64>,
    q: Vec<f64>,
    sqrt_mass: Vec<f64>,
}

/// Per-h diagnostics and the raw pairings.
#[derive(Debug, Clone, Serialize)]
pub struct HStage {
    pub h: f64,
    pub margin: Margin,
    pub kernel_dim: usize,
    pub gap: f64,
    /// Largest ‖A f − u₀|∂M‖_B / ‖u₀|∂M‖_B over the batch.
    pub trace_residual: f64,
    pub min_im_riccati: f64,
    /// ⟨(Λ_q − Λ₀) f, conj γu₂⟩ indexed λ-major: k·(#geodesics) + γ.
    #[serde(skip)]
    pub pairings: Vec<Complex64>,
    /// ∫|v_s|²·(1, x, y) dx′ per item, for the extension term.
    #[serde(skip)]
    pub moments: Vec<[f64; 3]>,
}

impl HStage {
    /// value(h) = pairing + ∫_{T∖M} q_ext e^{−2iλx₁}|v_s|².
    pub fn values(&self, lambdas: &[f64], extension: &Extension) -> Vec<Complex64> {
        let ng = self.pairings.len() / lambdas.len().max(1);
        let mut out = self.pairings.clone();
        if extension.is_zero() {
            return out;
        }
        for (k, &l) in lambdas.iter().enumerate() {
            let (bottom, top) = extension.slab_transforms(2.0 * l);
            for g in 0..ng {
                let m = self.moments[k * ng + g];
                let cap = |c: [f64; 3]| c[0] * m[0] + c[1] * m[1] + c[2] * m[2];
                out[k * ng + g] += bottom * cap(extension.bottom) + top * cap(extension.top);
            }
        }
        out
    }
}

/// All pairings ⟨(Λ_q − Λ₀) f, conj γu₂⟩ and beam moments for one h.
pub fn pairings_at_h(setup: &RecoverySetup<'_>, h: f64, geodesics: &[Geodesic], lambdas: &[f64], source: &TraceSource) -> Result<HStage> {
    let mesh = setup.mesh;
    let m0 = &mesh.geometry().transversal;
    let disk = mesh.disk();
    let (nb, n) = (mesh.boundary().len(), mesh.len());
    let (gp, gm) = build_green_pair(mesh, h, &setup.green)?;
    let (pp, pm) = (assemble_conjugated(mesh, gp.weight)?, assemble_conjugated(mesh, gm.weight)?);
    let boundary = mesh.boundary();
    let q_plus = green_times_operator(mesh, &gp, &pp, boundary);
    let q_minus = green_times_operator(mesh, &gm, &pm, boundary);

    let single = build_single_layer(&gp, mesh);
    let op = trace_operator(&single, setup.dn_q, setup.dn_0, h)?;
    let margin = op.margin()?;
    if margin.eigen < setup.margin_threshold {
        return Err(Error::EquationIllConditioned { h, margin: margin.eigen });
    }
    let lu = DenseLu::new(op.matrix.as_ref())?;
    let delta = setup.dn_q.difference(setup.dn_0)?;
    let bmass = &setup.dn_q.boundary_mass;

    let oracle = match source {
        TraceSource::Equation => None,
        TraceSource::Oracle(q) => {
            if q.values().len() != n {
                return Err(Error::ShapeMismatch("oracle potential does not match the mesh".into()));
            }
            let all: Vec<usize> = (0..n).collect();
            let qv = q.values().to_vec();
            let mut m = Mat::from_fn(n, n, |i, j| h * h * qv[i] * gp.matrix[(i, j)]);
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            Some(OracleParts {
                full: green_times_operator(mesh, &gp, &pp, &all),
                lu: DenseLu::new(m.as_ref())?,
                g_boundary: Mat::from_fn(nb, n, |i, j| gp.matrix[(boundary[i], j)]),
                q: qv,
                sqrt_mass: mesh.mass().iter().map(|d| d.sqrt()).collect(),
            })
        }
    };

    let x1: Vec<f64> = (0..n).map(|v| mesh.x1_of(v)).collect();
    let decay: Vec<f64> = boundary.iter().map(|&b| (-x1[b] / h).exp()).collect();
    let growth: Vec<f64> = boundary.iter().map(|&b| (x1[b] / h).exp()).collect();
    let disk_mass = disk.lumped_mass(&m0.profile);
    let nl = lambdas.len();
    let ng = geodesics.len();
    let mut pairings = vec![Complex64::new(0.0, 0.0); ng * nl];
    let mut moments = vec![[0.0; 3]; ng * nl];
    let nodes = disk.nodes();
    let mut trace_residual: f64 = 0.0;
    let mut min_im = f64::INFINITY;

    for (c0, chunk) in geodesics.chunks(CHUNK).enumerate() {
        let beams: Vec<(Vec<Vec<Complex64>>, f64)> = chunk
            .par_iter()
            .map(|g| {
                let sp = SpectralParameter { h, lambda: 0.0 };
                let beam = build_quasimode(m0, g, sp, setup.beam)?;
                Ok((beam.nodal_spectral(disk, h, lambdas), beam.min_im_h()))
            })
            .collect::<Result<_>>()?;
        let m = chunk.len() * nl;
        // Column j = k·|chunk| + local geodesic.
        let col = |k: usize, g: usize| k * chunk.len() + g;
        let mut seed_p = CMat::zeros(n, m);
        let mut seed_m = CMat::zeros(n, m);
        for (g, (vs, im)) in beams.iter().enumerate() {
            min_im = min_im.min(*im);
            for (k, &l) in lambdas.iter().enumerate() {
                let j = col(k, g);
                for v in 0..n {
                    let z = vs[k][mesh.disk_index(v)];
                    seed_p.set(v, j, z * Complex64::from_polar(1.0, -l * x1[v]));
                    seed_m.set(v, j, z * Complex64::from_polar(1.0, l * x1[v]));
                }
            }
        }
        let yp = CMat::left(&q_plus, &seed_p);
        let ym = CMat::left(&q_minus, &seed_m);
        let mut u0 = CMat::zeros(nb, m);
        let mut k2 = CMat::zeros(nb, m);
        for j in 0..m {
            for (i, &b) in boundary.iter().enumerate() {
                u0.set(i, j, (seed_p.get(b, j) - yp.get(i, j)) * decay[i]);
                k2.set(i, j, ((seed_m.get(b, j) - ym.get(i, j)) * growth[i]).conj());
            }
        }
        let f = match &oracle {
            None => {
                let mut f = CMat { re: lu.solve_mat(u0.re.as_ref()), im: lu.solve_mat(u0.im.as_ref()) };
                let af = CMat::left(&op.matrix, &f);
                let r = CMat { re: &u0.re - &af.re, im: &u0.im - &af.im };
                let d = CMat { re: lu.solve_mat(r.re.as_ref()), im: lu.solve_mat(r.im.as_ref()) };
                f.re += &d.re;
                f.im += &d.im;
                let af = CMat::left(&op.matrix, &f);
                for j in 0..m {
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in 0..nb {
                        num += bmass[i] * (af.get(i, j) - u0.get(i, j)).norm_sqr();
                        den += bmass[i] * u0.get(i, j).norm_sqr();
                    }
                    if den > 0.0 {
                        trace_residual = trace_residual.max((num / den).sqrt());
                    }
                }
                f
            }
            Some(o) => {
                // e^{φ/h}u₀ = seed − G P seed on all nodes.
                let gps = CMat::left(&o.full, &seed_p);
                let lifted = CMat { re: &seed_p.re - &gps.re, im: &seed_p.im - &gps.im };
                let mut bt = CMat::zeros(n, m);
                for j in 0..m {
                    for v in 0..n {
                        bt.set(v, j, lifted.get(v, j) * (-h * h * o.q[v] * o.sqrt_mass[v]));
                    }
                }
                let rt = CMat { re: o.lu.solve_mat(bt.re.as_ref()), im: o.lu.solve_mat(bt.im.as_ref()) };
                let gr = CMat::left(&o.g_boundary, &rt);
                let mut f = CMat::zeros(nb, m);
                for j in 0..m {
                    for (i, &b) in boundary.iter().enumerate() {
                        f.set(i, j, (lifted.get(b, j) + gr.get(i, j) / o.sqrt_mass[b]) * decay[i]);
                    }
                }
                f
            }
        };
        let dk = CMat::left(&delta, &k2);
        for k in 0..nl {
            for (g, (vs, _)) in beams.iter().enumerate() {
                let j = col(k, g);
                let idx = k * ng + c0 * CHUNK + g;
                pairings[idx] = (0..nb).map(|i| f.get(i, j) * dk.get(i, j)).sum();
                let mut mom = [0.0; 3];
                for ((z, w), p) in vs[k].iter().zip(&disk_mass).zip(nodes) {
                    let a = z.norm_sqr() * w;
                    mom[0] += a;
                    mom[1] += a * p[0];
                    mom[2] += a * p[1];
                }
                moments[idx] = mom;
            }
        }
    }
    Ok(HStage { h, margin, kernel_dim: gp.kernel_dim, gap: gp.gap, trace_residual, min_im_riccati: min_im, pairings, moments })
}

/// Least-squares line through (h, value); returns (intercept, slope, max |misfit|).
pub fn linear_fit(hs: &[f64], vs: &[Complex64]) -> (Complex64, Complex64, f64) {
    let n = hs.len() as f64;
    if hs.len() < 2 {
        return (vs[0], Complex64::new(0.0, 0.0), 0.0);
    }
    let mh = hs.iter().sum::<f64>() / n;
    let mv = vs.iter().sum::<Complex64>() / n;
    let sxx: f64 = hs.iter().map(|h| (h - mh) * (h - mh)).sum();
    let sxy: Complex64 = hs.iter().zip(vs).map(|(h, v)| (v - mv) * (h - mh)).sum();
    let slope = sxy / sxx;
    let intercept = mv - slope * mh;
    let misfit = hs.iter().zip(vs).map(|(h, v)| (v - intercept - slope * h).norm()).fold(0.0, f64::max);
    (intercept, slope, misfit)
}

/// D(λ, γ) for one chord.
#[derive(Debug, Clone, Serialize)]
pub struct DataEstimate {
    pub h: Vec<f64>,
    pub values: Vec<Complex64>,
    pub estimate: Complex64,
    /// Largest misfit of the linear fit relative to max |value(h)|.
    pub residual: f64,
}

/// Single-chord data recovery, extrapolated linearly to h = 0.
pub fn recover_data(
    setup: &RecoverySetup<'_>,
    geodesic: &Geodesic,
    geodesic_index: usize,
    lambda: f64,
    h_values: &[f64],
    extension: &Extension,
    tolerance: f64,
) -> Result<DataEstimate> {
    let mut values = Vec::new();
    for &h in h_values {
        let stage = pairings_at_h(setup, h, std::slice::from_ref(geodesic), &[lambda], &TraceSource::Equation)?;
        values.push(stage.values(&[lambda], extension)[0]);
    }
    let (estimate, _, misfit) = linear_fit(h_values, &values);
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let residual = if scale > 0.0 { misfit / scale } else { 0.0 };
    if residual > tolerance {
        return Err(Error::DataRecoveryNoisy { geodesic: geodesic_index, lambda, residual });
    }
    Ok(DataEstimate { h: h_values.to_vec(), values, estimate, residual })
}

/// Recovered data over the whole (λ, γ) grid.
#[derive(Debug, Clone)]
pub struct RecoveredData {
    pub grid: GeodesicGrid,
    pub lambdas: Vec<f64>,
    pub stages: Vec<HStage>,
    /// Extrapolated D(λ, ·) per λ with both orientations filled.
    pub samples: Vec<RaySampleGrid>,
    /// Largest relative fit misfit per λ.
    pub fit_residual: Vec<f64>,
    /// Number of chords above the tolerance per λ.
    pub noisy: Vec<usize>,
    pub errors: Vec<Error>,
}

/// Data recovery over the chord grid and a λ-grid symmetric about 0; failing h values are recorded and skipped.
pub fn recover_grid(
    setup: &RecoverySetup<'_>,
    h_values: &[f64],
    grid: &GeodesicGrid,
    lambdas: &[f64],
    extension: &Extension,
    source: &TraceSource,
    tolerance: f64,
) -> Result<RecoveredData> {
    let m0 = &setup.mesh.geometry().transversal;
    let geodesics = grid.trace(m0)?;
    let mut stages = Vec::new();
    let mut errors = Vec::new();
    for &h in h_values {
        match pairings_at_h(setup, h, &geodesics, lambdas, source) {
            Ok(s) => stages.push(s),
            Err(e @ Error::EquationIllConditioned { .. }) | Err(e @ Error::ContractionFailure { .. }) => errors.push(e),
            Err(e) => return Err(e),
        }
    }
    if stages.is_empty() {
        return Err(errors.pop().unwrap_or_else(|| Error::Config("empty recovery h list".into())));
    }
    let lengths: Vec<f64> = geodesics.iter().map(|g| g.length).collect();
    let mut out = extrapolate_to_zero(stages, grid, lambdas, &lengths, extension, tolerance)?;
    errors.append(&mut out.errors);
    out.errors = errors;
    Ok(out)
}

/// Linear h → 0 fit per chord and orientation completion from the −λ data.
pub fn extrapolate_to_zero(
    stages: Vec<HStage>,
    grid: &GeodesicGrid,
    lambdas: &[f64],
    lengths: &[f64],
    extension: &Extension,
    tolerance: f64,
) -> Result<RecoveredData> {
    let ng = grid.len();
    let hs: Vec<f64> = stages.iter().map(|s| s.h).collect();
    let values: Vec<Vec<Complex64>> = stages.iter().map(|s| s.values(lambdas, extension)).collect();
    let mut errors = Vec::new();
    let mut fit_residual = Vec::with_capacity(lambdas.len());
    let mut noisy = Vec::with_capacity(lambdas.len());
    let mut forward = Vec::with_capacity(lambdas.len());
    for (k, &l) in lambdas.iter().enumerate() {
        let per_chord: Vec<(Complex64, f64)> = (0..ng)
            .map(|g| {
                let vs: Vec<Complex64> = values.iter().map(|v| v[k * ng + g]).collect();
                let (a, _, misfit) = linear_fit(&hs, &vs);
                (a, misfit)
            })
            .collect();
        let scale = values.iter().flat_map(|v| v[k * ng..(k + 1) * ng].iter()).map(|v| v.norm()).fold(0.0, f64::max);
        let rel: Vec<f64> = per_chord.iter().map(|(_, m)| if scale > 0.0 { m / scale } else { 0.0 }).collect();
        if let Some(g) = rel.iter().position(|&r| r > tolerance) {
            errors.push(Error::DataRecoveryNoisy { geodesic: g, lambda: l, residual: rel[g] });
        }
        fit_residual.push(rel.iter().cloned().fold(0.0, f64::max));
        noisy.push(rel.iter().filter(|&&r| r > tolerance).count());
        forward.push(RaySampleGrid { grid: grid.clone(), lambda: l, values: per_chord.iter().map(|p| p.0).collect(), reversed: Vec::new(), lengths: lengths.to_vec() });
    }
    let mut samples = forward.clone();
    for (k, s) in samples.iter_mut().enumerate() {
        let partner = lambdas
            .iter()
            .position(|&l| (l + lambdas[k]).abs() < 1e-12)
            .ok_or_else(|| Error::Config("λ-grid must be symmetric about 0".into()))?;
        s.complete_from_negative(&forward[partner])?;
    }
    Ok(RecoveredData { grid: grid.clone(), lambdas: lambdas.to_vec(), stages, samples, fit_residual, noisy, errors })
}
