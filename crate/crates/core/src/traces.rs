//! Boundary integral equation (1 + h²S_φ(Λ_q − Λ₀))f = u₀|∂M and its verification.

use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::carleman::{GreenOperator, SingleLayerOp};
use crate::error::{Error, Result};
use crate::forward::{DirichletSolver, DnMap, Potential};
use crate::geometry::Mesh;
use crate::linalg::{eigenvalues, mat_vec_c, singular_values, weighted_norm, DenseLu};

/// Below this margin the equation is declared ill-conditioned.
pub const MARGIN_THRESHOLD: f64 = 0.1;

/// The nodal operator A = 1 + h² S_φ B⁻¹(S_q − S₀) on boundary functions.
#[derive(Debug, Clone)]
pub struct TraceOperator {
    pub h: f64,
    pub matrix: Mat<f64>,
    boundary_mass: Vec<f64>,
    boundary_exponent: Vec<f64>,
}

pub fn trace_operator(s: &SingleLayerOp, dn_q: &DnMap, dn_0: &DnMap, h: f64) -> Result<TraceOperator> {
    if (s.weight.h - h).abs() > 1e-14 {
        return Err(Error::ShapeMismatch(format!("single layer at h = {} used at h = {h}", s.weight.h)));
    }
    let diff = dn_q.difference(dn_0)?;
    let nb = diff.nrows();
    if s.matrix.nrows() != nb {
        return Err(Error::ShapeMismatch("single layer and DN maps disagree on the boundary".into()));
    }
    let b = &dn_q.boundary_mass;
    let lam = Mat::from_fn(nb, nb, |i, j| diff[(i, j)] / b[i]);
    let mut matrix = (&s.matrix * &lam) * faer::Scale(h * h);
    for i in 0..nb {
        matrix[(i, i)] += 1.0;
    }
    Ok(TraceOperator { h, matrix, boundary_mass: b.clone(), boundary_exponent: s.boundary_exponent.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Margin {
    /// Smallest singular value of W A W⁻¹ with W = B^{1/2} e^{φ/h}, i.e. of A in the weighted
    /// boundary norm where the perturbation h²S_φ(Λ_q − Λ₀) is uniformly small.
    pub singular: f64,
    /// Smallest |eigenvalue| of A (invariant under the e^{±φ/h} similarity).
    pub eigen: f64,
}

impl TraceOperator {
    pub fn apply(&self, f: &[Complex64]) -> Vec<Complex64> {
        mat_vec_c(self.matrix.as_ref(), f)
    }

    pub fn margin(&self) -> Result<Margin> {
        let n = self.matrix.nrows();
        // Shift exponents so the largest is zero; the similarity is unchanged by a common factor.
        let top = self.boundary_exponent.iter().cloned().fold(f64::MIN, f64::max);
        let w: Vec<f64> = self.boundary_mass.iter().zip(&self.boundary_exponent).map(|(b, e)| b.sqrt() * (e - top).exp()).collect();
        let sym = Mat::from_fn(n, n, |i, j| w[i] * self.matrix[(i, j)] / w[j]);
        let singular = *singular_values(sym.as_ref())?.last().unwrap_or(&1.0);
        let eigen = eigenvalues(self.matrix.as_ref())?.iter().map(|z| z.norm()).fold(f64::MAX, f64::min);
        Ok(Margin { singular, eigen })
    }
}

pub fn invertibility_margin(s: &SingleLayerOp, dn_q: &DnMap, dn_0: &DnMap, h: f64) -> Result<Margin> {
    trace_operator(s, dn_q, dn_0, h)?.margin()
}

#[derive(Debug, Clone)]
pub struct TraceSolution {
    pub f: Vec<Complex64>,
    /// ‖A f − g‖_B / ‖g‖_B.
    pub residual: f64,
    pub margin: Margin,
}

/// Direct solve; refuses when the eigenvalue margin is below the threshold.
pub fn solve_trace_equation(s: &SingleLayerOp, dn_q: &DnMap, dn_0: &DnMap, u0_trace: &[Complex64], h: f64) -> Result<TraceSolution> {
    let op = trace_operator(s, dn_q, dn_0, h)?;
    if u0_trace.len() != op.matrix.nrows() {
        return Err(Error::ShapeMismatch(format!("boundary data has {} entries, expected {}", u0_trace.len(), op.matrix.nrows())));
    }
    let margin = op.margin()?;
    if margin.eigen < MARGIN_THRESHOLD {
        return Err(Error::EquationIllConditioned { h, margin: margin.eigen });
    }
    let f = solve_with(&op, u0_trace)?;
    let residual = relative_residual(&op, &f, u0_trace);
    Ok(TraceSolution { f, residual, margin })
}

fn solve_with(op: &TraceOperator, g: &[Complex64]) -> Result<Vec<Complex64>> {
    let lu = DenseLu::new(op.matrix.as_ref())?;
    let mut f = lu.solve_c(g);
    // One step of iterative refinement against the e^{±φ/h} scaling.
    let r: Vec<Complex64> = op.apply(&f).iter().zip(g).map(|(a, b)| b - a).collect();
    let d = lu.solve_c(&r);
    for (x, y) in f.iter_mut().zip(d) {
        *x += y;
    }
    Ok(f)
}

fn relative_residual(op: &TraceOperator, f: &[Complex64], g: &[Complex64]) -> f64 {
    let r: Vec<Complex64> = op.apply(f).iter().zip(g).map(|(a, b)| a - b).collect();
    weighted_norm(&r, &op.boundary_mass) / weighted_norm(g, &op.boundary_mass).max(f64::MIN_POSITIVE)
}

/// ‖a − b‖_B / ‖b‖_B for boundary functions.
pub fn boundary_gap(mesh: &Mesh, a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    weighted_norm(&d, mesh.boundary_mass()) / weighted_norm(b, mesh.boundary_mass()).max(f64::MIN_POSITIVE)
}

/// e^{−φ/h} G_φ e^{φ/h} (q u) on all nodes.
fn conjugated_green_q(mesh: &Mesh, g: &GreenOperator, q: &Potential, u: &[Complex64]) -> Vec<Complex64> {
    let w = g.weight;
    let x: Vec<Complex64> = (0..mesh.len()).map(|v| u[v] * (q.values()[v] * w.exponent(mesh.x1_of(v)).exp())).collect();
    g.apply_c(&x).into_iter().enumerate().map(|(v, y)| y * (-w.exponent(mesh.x1_of(v))).exp()).collect()
}

/// ‖S_φ(Λ_q − Λ₀)k − γ e^{−φ/h}G_φ e^{φ/h} q P_q k‖_B / ‖k‖_B.
pub fn single_layer_identity_residual(
    mesh: &Mesh,
    s: &SingleLayerOp,
    g: &GreenOperator,
    solver: &DirichletSolver,
    dn_q: &DnMap,
    dn_0: &DnMap,
    k: &[Complex64],
) -> Result<f64> {
    let q = solver.potential();
    let lam_k: Vec<Complex64> = {
        let a = dn_q.apply(k);
        let b = dn_0.apply(k);
        a.iter().zip(&b).map(|(x, y)| x - y).collect()
    };
    let lhs = s.apply(&lam_k);
    let u = solver.solve(mesh, k)?.values;
    let vol = conjugated_green_q(mesh, g, q, &u);
    let rhs: Vec<Complex64> = mesh.boundary().iter().map(|&b| vol[b]).collect();
    let d: Vec<Complex64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    Ok(weighted_norm(&d, mesh.boundary_mass()) / weighted_norm(k, mesh.boundary_mass()).max(f64::MIN_POSITIVE))
}

/// Residuals of the equivalence between the boundary equation and its volume form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// Volume form (1 + e^{−φ/h}G_φ e^{φ/h}h²q)P_q k − P₀ f, relative, for f produced by the boundary equation.
    pub volume_residual: f64,
    /// Boundary equation residual for f taken as the trace of the volume form.
    pub boundary_residual: f64,
    /// Trace of the volume form against the boundary operator applied to k.
    pub trace_consistency: f64,
}

pub fn verify_equivalence(
    mesh: &Mesh,
    s: &SingleLayerOp,
    g: &GreenOperator,
    solver_q: &DirichletSolver,
    solver_0: &DirichletSolver,
    dn_q: &DnMap,
    dn_0: &DnMap,
    k: &[Complex64],
) -> Result<EquivalenceReport> {
    let h = g.weight.h;
    let op = trace_operator(s, dn_q, dn_0, h)?;
    let f = op.apply(k);
    let pk = solver_q.solve(mesh, k)?.values;
    let corr = conjugated_green_q(mesh, g, solver_q.potential(), &pk);
    let volume: Vec<Complex64> = pk.iter().zip(&corr).map(|(a, b)| a + b * (h * h)).collect();
    let p0f = solver_0.solve(mesh, &f)?.values;
    let d: Vec<Complex64> = volume.iter().zip(&p0f).map(|(a, b)| a - b).collect();
    let volume_residual = weighted_norm(&d, mesh.mass()) / weighted_norm(&p0f, mesh.mass()).max(f64::MIN_POSITIVE);
    let trace: Vec<Complex64> = mesh.boundary().iter().map(|&b| volume[b]).collect();
    let trace_consistency = boundary_gap(mesh, &trace, &f);
    let boundary_residual = relative_residual(&op, k, &trace);
    Ok(EquivalenceReport { volume_residual, boundary_residual, trace_consistency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carleman::{build_green_pair, build_single_layer, test_vectors, GreenOptions};
    use crate::cgo::{build_u0, build_u1_oracle, U1Solver};
    use crate::forward::PotentialSpec;
    use crate::geometry::{trace_geodesic, CylinderGeometry, Resolution, TransversalManifold};
    use crate::quasimodes::{build_quasimode, BeamOptions, SpectralParameter};

    struct Fixture {
        mesh: Mesh,
        gp: GreenOperator,
        s: SingleLayerOp,
        sq: DirichletSolver,
        s0: DirichletSolver,
        dq: DnMap,
        d0: DnMap,
    }

    fn fixture(h: f64) -> Fixture {
        let mesh = CylinderGeometry::default().build_mesh(Resolution::new(3, 6)).unwrap();
        let (gp, _) = build_green_pair(&mesh, h, &GreenOptions::default()).unwrap();
        let s = build_single_layer(&gp, &mesh);
        let q = Potential::from_spec(&mesh, &PotentialSpec::acceptance_bump()).unwrap();
        let sq = DirichletSolver::new(&mesh, &q).unwrap();
        let s0 = DirichletSolver::new(&mesh, &Potential::zero(&mesh)).unwrap();
        let (dq, d0) = (sq.dn_map(&mesh), s0.dn_map(&mesh));
        Fixture { mesh, gp, s, sq, s0, dq, d0 }
    }

    fn random_k(n: usize, seed: u64) -> Vec<Complex64> {
        let v = test_vectors(n, 2, seed);
        v[0].iter().zip(&v[1]).map(|(a, b)| Complex64::new(*a, *b)).collect()
    }

    #[test]
    fn zero_potential_gives_identity() {
        let fx = fixture(0.2);
        let m = invertibility_margin(&fx.s, &fx.d0, &fx.d0, 0.2).unwrap();
        assert!((m.singular - 1.0).abs() < 1e-12 && (m.eigen - 1.0).abs() < 1e-12);
        let g = random_k(fx.mesh.boundary().len(), 3);
        let sol = solve_trace_equation(&fx.s, &fx.d0, &fx.d0, &g, 0.2).unwrap();
        assert!(boundary_gap(&fx.mesh, &sol.f, &g) < 1e-14);
    }

    #[test]
    fn single_layer_identity_and_equivalence() {
        let fx = fixture(0.15);
        let nb = fx.mesh.boundary().len();
        for seed in 0..3 {
            let k = random_k(nb, seed);
            let r = single_layer_identity_residual(&fx.mesh, &fx.s, &fx.gp, &fx.sq, &fx.dq, &fx.d0, &k).unwrap();
            assert!(r < 1e-8, "{r}");
            let e = verify_equivalence(&fx.mesh, &fx.s, &fx.gp, &fx.sq, &fx.s0, &fx.dq, &fx.d0, &k).unwrap();
            assert!(e.volume_residual < 1e-8 && e.boundary_residual < 1e-8 && e.trace_consistency < 1e-8, "{e:?}");
        }
    }

    #[test]
    fn trace_solution_matches_oracle() {
        let fx = fixture(0.15);
        let m0 = TransversalManifold::flat();
        let geo = trace_geodesic(&m0, 0.3, -0.2).unwrap();
        let beam = build_quasimode(&m0, &geo, SpectralParameter::new(0.15, 0.5).unwrap(), BeamOptions::default()).unwrap();
        let u0 = build_u0(&fx.mesh, &beam, &fx.gp).unwrap();
        let u1 = build_u1_oracle(&fx.mesh, &u0, fx.sq.potential(), &fx.gp, U1Solver::Direct).unwrap();
        let sol = solve_trace_equation(&fx.s, &fx.dq, &fx.d0, &u0.trace(&fx.mesh), 0.15).unwrap();
        assert!(sol.residual < 1e-10, "{}", sol.residual);
        let gap = boundary_gap(&fx.mesh, &sol.f, &u1.trace(&fx.mesh));
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn linear_in_the_data() {
        let fx = fixture(0.2);
        let nb = fx.mesh.boundary().len();
        let (a, b) = (random_k(nb, 7), random_k(nb, 8));
        let sum: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let fa = solve_trace_equation(&fx.s, &fx.dq, &fx.d0, &a, 0.2).unwrap().f;
        let fb = solve_trace_equation(&fx.s, &fx.dq, &fx.d0, &b, 0.2).unwrap().f;
        let fs = solve_trace_equation(&fx.s, &fx.dq, &fx.d0, &sum, 0.2).unwrap().f;
        let combined: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x + y).collect();
        assert!(boundary_gap(&fx.mesh, &fs, &combined) < 1e-10);
    }
}
