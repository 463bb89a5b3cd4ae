//! Invariant and rate suites for the operator stack. `validate` gates on the invariants;
//! the acceptance run also applies the asymptotic rate targets.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use crate::carleman::{build_green_pair, build_single_layer, carleman_lower_bound, test_vectors, verify_green, CarlemanWeight, GreenOptions};
use crate::cgo::{build_u0, build_u1_oracle, build_u2, U1Solver};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forward::{assemble_dn_map, DirichletSolver, Potential};
use crate::geometry::{trace_geodesic, ChartBase, DiskMesh, GeodesicGrid, Mesh, TransversalManifold};
use crate::pipeline::boundary::{boundary_determination, BoundaryProbe};
use crate::pipeline::probe_bases;
use crate::quasimodes::{beam_norm, build_quasimode, concentration_integral, concentration_target, residual_norm, BeamOptions, SpectralParameter};
use crate::raytransform::{forward_attenuated, forward_ray, invert_attenuated_const, invert_ray, line_integral, taylor_recovery, NodalField, RaySampleGrid};
use crate::traces::{boundary_gap, invertibility_margin, single_layer_identity_residual, solve_trace_equation, verify_equivalence};

/// Chords (angle, offset) used by the beam and remainder suites.
pub const SUITE_GEODESICS: [(f64, f64); 5] = [(0.0, 0.0), (0.7, 0.3), (1.9, -0.5), (2.6, 0.6), (4.0, -0.2)];
pub const SUITE_LAMBDAS: [f64; 2] = [0.0, 0.5];
/// Disk refinement for the beam suite; resolves the smallest grid h.
pub const BEAM_SUITE_RINGS: usize = 40;
const ROUND_OFF: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    /// True for `value ≤ limit`, false for `value ≥ limit`.
    pub upper: bool,
    /// Discrete invariants gate `validate`; asymptotic rates only inform it.
    pub gating: bool,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64, gating: bool) -> Self {
        Self { name: name.into(), value, limit, upper: true, gating, pass: value <= limit, detail: String::new() }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64, gating: bool) -> Self {
        Self { name: name.into(), value, limit, upper: false, gating, pass: value >= limit, detail: String::new() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn line(&self) -> String {
        let op = if self.upper { "<=" } else { ">=" };
        let mut s = format!("{} {}: {:.4e} {op} {:.4e}", if self.pass { "ok  " } else { "FAIL" }, self.name, self.value, self.limit);
        if !self.detail.is_empty() {
            s += &format!(" ({})", self.detail);
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    fn new(suite: &str, checks: Vec<Check>, start: Instant) -> Self {
        Self { suite: suite.into(), checks, seconds: start.elapsed().as_secs_f64() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn invariants_hold(&self) -> bool {
        self.checks.iter().filter(|c| c.gating).all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Least-squares slope of log|v| against log h; positive means decay as h → 0.
pub fn loglog_slope(hs: &[f64], vs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hs.iter().zip(vs).filter(|(_, v)| v.abs() > 0.0).map(|(h, v)| (h.ln(), v.abs().ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Worst item by value; a NaN counts as worst and sticks.
fn worst(items: impl Iterator<Item = (f64, String)>, max: bool) -> (f64, String) {
    let mut best = (if max { f64::NEG_INFINITY } else { f64::INFINITY }, String::new());
    for (v, label) in items {
        if best.0.is_nan() {
            break;
        }
        if v.is_nan() || (max && v > best.0) || (!max && v < best.0) {
            best = (v, label);
        }
    }
    best
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn random_boundary(n: usize, seed: u64) -> Vec<Complex64> {
    let v = test_vectors(n, 2, seed);
    v[0].iter().zip(&v[1]).map(|(a, b)| Complex64::new(*a, *b)).collect()
}

/// Green operator properties at every h, norm growth and Carleman-constant stability.
pub fn green_suite(mesh: &Mesh, hs: &[f64], opts: &GreenOptions, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let (mut norms, mut ratios) = (Vec::new(), Vec::new());
    for &h in hs {
        let (gp, gm) = build_green_pair(mesh, h, opts)?;
        let r = verify_green(mesh, &gp, &gm, seed)?;
        checks.push(Check::at_most(format!("h = {h}: right inverse"), r.right_inverse, 1e-6, true));
        checks.push(Check::at_most(format!("h = {h}: adjoint of the opposite weight"), r.adjoint, 1e-6, true));
        checks.push(Check::at_most(format!("h = {h}: left inverse on compact support"), r.left_inverse, 1e-6, true));
        checks.push(Check::at_most(format!("h = {h}: kernel projection"), r.projection_idempotent.max(r.projection_symmetric).max(r.projection_kernel), 1e-6, true));
        let dim_defect = (r.kernel_dim as f64 - r.expected_kernel_dim as f64).abs();
        checks.push(Check::at_most(format!("h = {h}: kernel dimension defect"), dim_defect, 0.0, true));
        norms.push(r.norm);
        ratios.push(carleman_lower_bound(mesh, CarlemanWeight::new(h, 1.0)?)? / h);
    }
    if hs.len() >= 2 {
        let growth = -loglog_slope(hs, &norms);
        checks.push(Check::at_most("norm growth exponent", growth, 1.3, false).with_detail(format!("norms {norms:.3?}")));
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        checks.push(Check::at_most("Carleman constant spread", hi / lo, 3.0, false).with_detail(format!("bound / h {ratios:.3?}")));
    }
    Ok(SuiteReport::new("green", checks, start))
}

/// Single-layer identity, boundary/volume equivalence and the invertibility margin.
pub fn operator_suite(mesh: &Mesh, hs: &[f64], q: &Potential, opts: &GreenOptions, seed: u64, margin_threshold: f64) -> Result<SuiteReport> {
    let start = Instant::now();
    let sq = DirichletSolver::new(mesh, q)?;
    let s0 = DirichletSolver::new(mesh, &Potential::zero(mesh))?;
    let (dq, d0) = (sq.dn_map(mesh), s0.dn_map(mesh));
    let nb = mesh.boundary().len();
    let mut checks = Vec::new();
    let mut margins = Vec::new();
    for &h in hs {
        let (gp, _) = build_green_pair(mesh, h, opts)?;
        let s = build_single_layer(&gp, mesh);
        let (mut identity, mut equivalence) = (0.0f64, 0.0f64);
        for k in 0..2 {
            let f = random_boundary(nb, seed.wrapping_add(100 + k));
            identity = identity.max(single_layer_identity_residual(mesh, &s, &gp, &sq, &dq, &d0, &f)?);
            let e = verify_equivalence(mesh, &s, &gp, &sq, &s0, &dq, &d0, &f)?;
            equivalence = equivalence.max(e.volume_residual).max(e.boundary_residual).max(e.trace_consistency);
        }
        checks.push(Check::at_most(format!("h = {h}: single-layer identity"), identity, 1e-4, true));
        checks.push(Check::at_most(format!("h = {h}: boundary/volume equivalence"), equivalence, 1e-4, true));
        let m = invertibility_margin(&s, &dq, &d0, h)?;
        if h <= 0.1 + 1e-12 {
            checks.push(Check::at_least(format!("h = {h}: invertibility margin"), m.singular, margin_threshold, true).with_detail(format!("eigenvalue margin {:.4}", m.eigen)));
        }
        margins.push((h, m.singular));
    }
    if margins.len() >= 2 {
        let mut sorted = margins.clone();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        // Largest drop of the margin as h decreases; zero when monotone toward 1.
        let drop = sorted.windows(2).map(|w| w[0].1 - w[1].1).fold(0.0f64, f64::max);
        checks.push(Check::at_most("margin drop as h decreases", drop, 0.0, false).with_detail(format!("margins {:.4?}", sorted.iter().map(|m| m.1).collect::<Vec<_>>())));
    }
    Ok(SuiteReport::new("operator", checks, start))
}

/// Beam residual decay and concentration order along `SUITE_GEODESICS` for λ ∈ `SUITE_LAMBDAS`.
pub fn quasimode_suite(m0: &TransversalManifold, hs: &[f64], opts: BeamOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let disk = DiskMesh::rings(BEAM_SUITE_RINGS)?;
    let psis: [(&str, fn([f64; 2]) -> f64); 3] = [("1", |_| 1.0), ("x", |p| p[0]), ("y", |p| p[1])];
    let mut min_im = f64::INFINITY;
    let mut residual_slopes = Vec::new();
    let mut orders = Vec::new();
    for &(theta, offset) in &SUITE_GEODESICS {
        let g = trace_geodesic(m0, theta, offset)?;
        for &lambda in &SUITE_LAMBDAS {
            let mut res = Vec::new();
            let mut errs = vec![Vec::new(); psis.len()];
            for &h in hs {
                let b = build_quasimode(m0, &g, SpectralParameter::new(h, lambda)?, opts)?;
                min_im = min_im.min(b.min_im_h());
                res.push(residual_norm(&b, &disk, m0)? / beam_norm(&b, &disk, m0));
                for (k, (_, psi)) in psis.iter().enumerate() {
                    errs[k].push(concentration_integral(&b, &disk, m0, psi) - concentration_target(&b, psi));
                }
            }
            let label = format!("θ = {theta}, p = {offset}, λ = {lambda}");
            residual_slopes.push((loglog_slope(hs, &res), label.clone()));
            for (k, (name, _)) in psis.iter().enumerate() {
                // Errors at round-off level (odd ψ on a symmetric chord) are exact at every h.
                let exact = errs[k].iter().all(|e| e.abs() < ROUND_OFF);
                let order = if exact { f64::INFINITY } else { loglog_slope(hs, &errs[k]) };
                orders.push((order, format!("{label}, ψ = {name}")));
            }
        }
    }
    let mut checks = vec![Check::at_least("min Im of the Riccati solution", min_im, 0.0, true)];
    if hs.len() >= 2 {
        let (v, l) = worst(residual_slopes.into_iter(), false);
        checks.push(Check::at_least("residual decay slope", v, 0.4, false).with_detail(l));
        let (v, l) = worst(orders.into_iter(), false);
        checks.push(Check::at_least("concentration order", v, 0.5, false).with_detail(l));
    }
    Ok(SuiteReport::new("quasimode", checks, start))
}

/// Remainder decay of the harmonic and the q-dependent CGO solutions.
pub fn cgo_suite(mesh: &Mesh, hs: &[f64], q: &Potential, beam: BeamOptions, opts: &GreenOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let m0 = &mesh.geometry().transversal;
    let cases = [(0.0, 0.0, 0.0), (0.7, 0.3, 0.5), (2.0, -0.4, 1.0)];
    let mut norms = vec![[Vec::new(), Vec::new(), Vec::new()]; cases.len()];
    let mut harmonic = 0.0f64;
    let mut pde = 0.0f64;
    for &h in hs {
        let (gp, gm) = build_green_pair(mesh, h, opts)?;
        for (c, &(theta, offset, lambda)) in cases.iter().enumerate() {
            let g = trace_geodesic(m0, theta, offset)?;
            let b = build_quasimode(m0, &g, SpectralParameter::new(h, lambda)?, beam)?;
            let u0 = build_u0(mesh, &b, &gp)?;
            let u2 = build_u2(mesh, &b, &gm)?;
            let u1 = build_u1_oracle(mesh, &u0, q, &gp, U1Solver::Direct)?;
            harmonic = harmonic.max(u0.harmonicity_residual).max(u2.harmonicity_residual);
            pde = pde.max(u1.pde_residual);
            norms[c][0].push(u0.remainder_norm);
            norms[c][1].push(u2.remainder_norm);
            norms[c][2].push(u1.remainder_norm);
        }
    }
    let mut checks = vec![
        Check::at_most("harmonic solutions: interior residual", harmonic, 1e-8, true),
        Check::at_most("q-solution: interior residual", pde, 1e-8, true),
    ];
    if hs.len() >= 2 {
        for (k, (name, limit)) in [("decaying-weight remainder slope", 1.3), ("growing-weight remainder slope", 1.3), ("q-remainder slope", 0.9)].into_iter().enumerate() {
            let items = cases.iter().enumerate().map(|(c, case)| (loglog_slope(hs, &norms[c][k]), format!("case {case:?}, norms {}", sci(&norms[c][k]))));
            let (v, l) = worst(items, false);
            checks.push(Check::at_least(name, v, limit, false).with_detail(l));
        }
    }
    Ok(SuiteReport::new("cgo", checks, start))
}

/// Trace-equation solutions against the oracle traces of the q-solution at one h.
pub fn trace_suite(mesh: &Mesh, h: f64, q: &Potential, beam: BeamOptions, opts: &GreenOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let m0 = &mesh.geometry().transversal;
    let sq = DirichletSolver::new(mesh, q)?;
    let s0 = DirichletSolver::new(mesh, &Potential::zero(mesh))?;
    let (dq, d0) = (sq.dn_map(mesh), s0.dn_map(mesh));
    let (gp, _) = build_green_pair(mesh, h, opts)?;
    let s = build_single_layer(&gp, mesh);
    let mut gaps = Vec::new();
    let mut residual = 0.0f64;
    for &(theta, offset) in &SUITE_GEODESICS {
        for &lambda in &SUITE_LAMBDAS {
            let g = trace_geodesic(m0, theta, offset)?;
            let b = build_quasimode(m0, &g, SpectralParameter::new(h, lambda)?, beam)?;
            let u0 = build_u0(mesh, &b, &gp)?;
            let u1 = build_u1_oracle(mesh, &u0, q, &gp, U1Solver::Direct)?;
            let sol = solve_trace_equation(&s, &dq, &d0, &u0.trace(mesh), h)?;
            residual = residual.max(sol.residual);
            gaps.push((boundary_gap(mesh, &sol.f, &u1.trace(mesh)), format!("θ = {theta}, p = {offset}, λ = {lambda}")));
        }
    }
    let (v, l) = worst(gaps.into_iter(), true);
    let checks = vec![
        Check::at_most(format!("h = {h}: trace vs oracle (B-norm)"), v, 0.05, true).with_detail(l),
        Check::at_most(format!("h = {h}: trace equation residual"), residual, 1e-8, true),
    ];
    Ok(SuiteReport::new("traces", checks, start))
}

fn gaussian(center: [f64; 2], sigma: f64) -> impl Fn([f64; 2]) -> Complex64 + Sync {
    move |p| Complex64::new((-((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)) / (2.0 * sigma * sigma)).exp(), 0.0)
}

/// Chord quadrature, inversions and the λ-Taylor recursion on the flat disk.
pub fn ray_suite() -> Result<SuiteReport> {
    let start = Instant::now();
    let m0 = TransversalManifold::flat();
    let mut checks = Vec::new();

    // Closed forms: ∫(1 + a·x) = L(1 + a·mid), ∫e^{−2λt} = (1 − e^{−2λL})/2λ.
    let grid = GeodesicGrid::new(60, 60);
    let geodesics = grid.trace(&m0)?;
    let mut quad = 0.0f64;
    for g in geodesics.iter().step_by(7) {
        let mid = g.point(0.5 * g.length);
        let lin = line_integral(g, &|p| Complex64::new(1.0 + 0.3 * p[0] - 0.2 * p[1], 0.0), |_| Complex64::new(1.0, 0.0));
        let exact = g.length * (1.0 + 0.3 * mid[0] - 0.2 * mid[1]);
        quad = quad.max((lin.re - exact).abs() / exact.abs());
        for lambda in [-1.0, 0.5, 1.0] {
            let att = line_integral(g, &|_| Complex64::new(1.0, 0.0), |t| Complex64::new((-2.0 * lambda * t).exp(), 0.0));
            let exact = (1.0 - (-2.0 * lambda * g.length).exp()) / (2.0 * lambda);
            quad = quad.max((att.re - exact).abs() / exact.abs());
        }
    }
    checks.push(Check::at_most("chord quadrature vs closed forms", quad, 1e-6, true));

    let disk = Arc::new(DiskMesh::rings(20)?);
    let fields: [(&str, [f64; 2], f64); 2] = [("centred", [0.0, 0.0], 0.3), ("off-centre", [0.3, -0.2], 0.3)];
    let (mut fbp, mut att) = (Vec::new(), Vec::new());
    for (name, c, s) in fields {
        let f = gaussian(c, s);
        let truth: Vec<Complex64> = disk.nodes().iter().map(|&p| f(p)).collect();
        let rec = invert_ray(&forward_ray(&f, &grid, &m0)?, disk.clone(), &m0)?;
        fbp.push((rec.relative_error(&truth), name.to_string()));
        for lambda in [-1.0, -0.5, 0.5, 1.0] {
            let rec = invert_attenuated_const(&forward_attenuated(&f, lambda, &grid, &m0)?, disk.clone(), &m0)?;
            att.push((rec.relative_error(&truth), format!("{name}, λ = {lambda}")));
        }
    }
    let (v, l) = worst(fbp.into_iter(), true);
    checks.push(Check::at_most("unattenuated roundtrip", v, 0.05, true).with_detail(l));
    let (v, l) = worst(att.into_iter(), true);
    checks.push(Check::at_most("attenuated roundtrip, |λ| <= 1", v, 0.08, true).with_detail(l));

    // Separable data c(μ)g(x) with c(μ) = √π e^{−μ²/4}: derivatives √π, 0, −√π/2 at μ = 0.
    let g = gaussian([0.1, 0.0], 0.3);
    let lambdas: Vec<f64> = (0..17).map(|k| -1.0 + k as f64 * 0.125).collect();
    let data: Vec<RaySampleGrid> = lambdas
        .iter()
        .map(|&l| {
            let mut s = forward_attenuated(&g, l, &grid, &m0)?;
            let c = PI.sqrt() * (-l * l).exp();
            for v in s.values.iter_mut().chain(s.reversed.iter_mut()) {
                *v *= c;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let tr = taylor_recovery(&data, 2, disk.clone(), &m0)?;
    if let Some(e) = tr.truncated {
        return Err(e);
    }
    let base: Vec<Complex64> = disk.nodes().iter().map(|&p| g(p)).collect();
    let field = NodalField::new(disk.clone(), base.clone())?;
    let targets = [PI.sqrt(), 0.0, -PI.sqrt() / 2.0];
    let mut taylor = Vec::new();
    for (k, slice) in tr.slices.iter().enumerate() {
        let err = if targets[k] != 0.0 {
            let t: Vec<Complex64> = base.iter().map(|v| v * targets[k]).collect();
            slice.relative_error(&t)
        } else {
            // Zero target: size relative to the leading slice.
            norm_ratio(slice, &field) / PI.sqrt()
        };
        taylor.push((err, format!("order {k}")));
    }
    let (v, l) = worst(taylor.into_iter(), true);
    checks.push(Check::at_most("Taylor slices, order <= 2", v, 0.1, true).with_detail(l));
    Ok(SuiteReport::new("raytransform", checks, start))
}

fn norm_ratio(a: &NodalField, b: &NodalField) -> f64 {
    let m = a.mesh.lumped_mass(&crate::geometry::ConformalProfile::flat());
    let na: f64 = a.values.iter().zip(&m).map(|(v, w)| v.norm_sqr() * w).sum();
    let nb: f64 = b.values.iter().zip(&m).map(|(v, w)| v.norm_sqr() * w).sum();
    (na / nb.max(f64::MIN_POSITIVE)).sqrt()
}

/// Boundary values for a constant and an x₁-linear potential from their DN maps.
pub fn boundary_suite(config: &RunConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let mesh = config.geometry.build_mesh()?;
    let geometry = mesh.geometry();
    let zero = Potential::zero(&mesh);
    let solver_0 = DirichletSolver::new(&mesh, &zero)?;
    let d0 = solver_0.dn_map(&mesh);
    let estimate = |q: &Potential, bases: &[ChartBase]| -> Result<Vec<(ChartBase, f64)>> {
        let dq = assemble_dn_map(&mesh, q)?;
        let mut out = Vec::new();
        for &base in bases {
            let probe = BoundaryProbe::new(geometry, base, &config.probe)?;
            match boundary_determination(&mesh, &dq, &d0, &solver_0, &probe) {
                Ok(e) => out.push((base, e.value)),
                Err(Error::UnderResolved { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    };
    let bases = probe_bases(config);
    let constant = estimate(&Potential::constant(&mesh, 0.5), &bases)?;
    if constant.is_empty() {
        return Err(Error::UnderResolved { nodes_per_wavelength: 0.0 });
    }
    let items = constant.iter().map(|(b, v)| ((v - 0.5).abs() / 0.5, format!("{b:?}: {v:.4}")));
    let (v, l) = worst(items, true);
    let mut checks = vec![Check::at_most("constant potential, relative error", v, 0.05, true).with_detail(format!("{} probes, worst {l}", constant.len()))];

    // Increment between the two lateral probes furthest apart in x₁.
    let lateral: Vec<ChartBase> = bases.iter().copied().filter(|b| matches!(b, ChartBase::Lateral { .. })).collect();
    let x1 = |b: &ChartBase| if let ChartBase::Lateral { x1, .. } = b { *x1 } else { f64::NAN };
    let lo = lateral.iter().copied().min_by(|a, b| x1(a).total_cmp(&x1(b)));
    let hi = lateral.iter().copied().max_by(|a, b| x1(a).total_cmp(&x1(b)));
    if let (Some(lo), Some(hi)) = (lo, hi) {
        if x1(&hi) - x1(&lo) > 1e-9 {
            let linear = Potential::from_fn(&mesh, "0.5 + x1", |p| 0.5 + p[0])?;
            let est = estimate(&linear, &[lo, hi])?;
            let value = if est.len() == 2 {
                let inc = est[1].1 - est[0].1;
                let exact = x1(&hi) - x1(&lo);
                ((inc - exact) / exact).abs()
            } else {
                f64::NAN
            };
            checks.push(Check::at_most("x1-linear increment, relative error", value, 0.1, true).with_detail(format!("{est:?}")));
        }
    }
    Ok(SuiteReport::new("boundary", checks, start))
}
