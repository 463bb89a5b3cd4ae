//! Complex geometric optics solutions built from a Gaussian beam and the Green operators.
//!
//! With φ = x₁ and s = 1/h + iλ:
//! u₀ = e^{−sx₁}(v_s + r̃₀) and u₂ = e^{sx₁}(v_s + r̃₂) are harmonic,
//! and u₁ = u₀ + e^{−φ/h}G_φ r₁ solves (−Δ + q)u₁ = 0 (oracle side only).

use faer::Mat;
use num_complex::Complex64;

use crate::carleman::{assemble_conjugated, GreenOperator};
use crate::error::{Error, Result};
use crate::forward::{interior_residual, Potential};
use crate::geometry::Mesh;
use crate::linalg::{spectral_norm, weighted_norm};
use crate::quasimodes::GaussianBeam;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// v_s lifted to the cylinder mesh (independent of x₁).
pub fn beam_on_mesh(beam: &GaussianBeam, mesh: &Mesh) -> Vec<Complex64> {
    let disk = beam.nodal(mesh.disk());
    (0..mesh.len()).map(|v| disk[mesh.disk_index(v)]).collect()
}

/// A harmonic CGO solution e^{∓sx₁}(v_s + r̃).
#[derive(Debug, Clone)]
pub struct HarmonicCgo {
    /// +1 for u₀ (weight φ), −1 for u₂ (weight −φ).
    pub sign: f64,
    pub h: f64,
    pub lambda: f64,
    pub values: Vec<Complex64>,
    /// Nodal v_s on the cylinder.
    pub beam: Vec<Complex64>,
    /// r̃ on all nodes.
    pub remainder: Vec<Complex64>,
    /// r on interior rows, zero-extended to all nodes.
    pub rhs: Vec<Complex64>,
    pub remainder_norm: f64,
    pub rhs_norm: f64,
    /// h²‖D⁻¹K u‖ / ‖u‖ over interior rows.
    pub harmonicity_residual: f64,
}

impl HarmonicCgo {
    pub fn trace(&self, mesh: &Mesh) -> Vec<Complex64> {
        mesh.boundary().iter().map(|&b| self.values[b]).collect()
    }
}

fn semiclassical_residual(mesh: &Mesh, q: &Potential, u: &[Complex64], h: f64) -> f64 {
    let norm = weighted_norm(u, mesh.mass());
    if norm == 0.0 {
        return 0.0;
    }
    h * h * interior_residual(mesh, q, u) / norm
}

fn build_harmonic(mesh: &Mesh, beam: &GaussianBeam, g: &GreenOperator, sign: f64) -> Result<HarmonicCgo> {
    let w = g.weight;
    if w.sign != sign {
        return Err(Error::ShapeMismatch("Green operator weight has the wrong sign".into()));
    }
    if (w.h - beam.sp.h).abs() > 1e-14 {
        return Err(Error::ShapeMismatch(format!("Green operator at h = {} but beam at h = {}", w.h, beam.sp.h)));
    }
    let (h, lambda) = (beam.sp.h, beam.sp.lambda);
    let p = assemble_conjugated(mesh, w)?;
    let vs = beam_on_mesh(beam, mesh);
    // Oscillating factor e^{∓iλx₁} that accompanies the real weight e^{±φ/h}.
    let osc: Vec<Complex64> = (0..mesh.len()).map(|v| Complex64::from_polar(1.0, -sign * lambda * mesh.x1_of(v))).collect();
    let seed: Vec<Complex64> = vs.iter().zip(&osc).map(|(a, b)| a * b).collect();
    let rows = p.apply_c(&seed);
    let mut rhs = vec![ZERO; mesh.len()];
    for (r, &i) in mesh.interior().iter().enumerate() {
        rhs[i] = -rows[r];
    }
    let gr = g.apply_c(&rhs);
    let remainder: Vec<Complex64> = gr.iter().zip(&osc).map(|(a, b)| a / b).collect();
    let values: Vec<Complex64> = (0..mesh.len())
        .map(|v| (vs[v] + remainder[v]) * Complex64::from_polar((-w.exponent(mesh.x1_of(v))).exp(), -sign * lambda * mesh.x1_of(v)))
        .collect();
    let zero = Potential::zero(mesh);
    Ok(HarmonicCgo {
        sign,
        h,
        lambda,
        harmonicity_residual: semiclassical_residual(mesh, &zero, &values, h),
        remainder_norm: weighted_norm(&remainder, mesh.mass()),
        rhs_norm: weighted_norm(&rhs, mesh.mass()),
        values,
        beam: vs,
        remainder,
        rhs,
    })
}

/// u₀ = e^{−sx₁}(v_s + r̃₀) with r̃₀ = e^{iλx₁}G_φ r₀ and r₀ = −P_φ(e^{−iλx₁}v_s).
pub fn build_u0(mesh: &Mesh, beam: &GaussianBeam, g_phi: &GreenOperator) -> Result<HarmonicCgo> {
    build_harmonic(mesh, beam, g_phi, 1.0)
}

/// u₂ = e^{sx₁}(v_s + r̃₂) with r̃₂ = e^{−iλx₁}G_{−φ} r₂ and r₂ = −P_{−φ}(e^{iλx₁}v_s).
pub fn build_u2(mesh: &Mesh, beam: &GaussianBeam, g_minus: &GreenOperator) -> Result<HarmonicCgo> {
    build_harmonic(mesh, beam, g_minus, -1.0)
}

/// λ = 0 closed form of r₀ on a product mesh: h²(σ² − L₀)v_s with the discrete x₁-symbol σ² = (2cosh(Δ/h) − 2)/Δ²
/// and L₀ the lumped transversal Laplacian, evaluated on interior rows.
pub fn r0_closed_form(mesh: &Mesh, beam: &GaussianBeam) -> Vec<Complex64> {
    let h = beam.sp.h;
    let dx = mesh.x1_step();
    let sigma2 = (2.0 * (dx / h).cosh() - 2.0) / (dx * dx);
    let disk = mesh.disk();
    let vs = beam.nodal(disk);
    let k0 = disk.stiffness();
    let m0 = mesh.disk_mass();
    let mut out = vec![ZERO; mesh.len()];
    for &i in mesh.interior() {
        let j = mesh.disk_index(i);
        let lap: Complex64 = k0.row(j).map(|(c, v)| vs[c] * v).sum::<Complex64>() / m0[j];
        out[i] = (vs[j] * sigma2 - lap) * (h * h);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum U1Solver {
    Direct,
    Neumann { max_iter: usize },
}

/// Oracle-side solution of (−Δ + q)u₁ = 0 of the form u₁ = u₀ + e^{−sx₁} r̃₁.
#[derive(Debug, Clone)]
pub struct OracleCgo {
    pub values: Vec<Complex64>,
    /// r₁ solving (I + h²qG_φ)r₁ = −h² e^{φ/h} q u₀.
    pub r1: Vec<Complex64>,
    /// r̃₁ = e^{iλx₁}G_φ r₁.
    pub remainder: Vec<Complex64>,
    pub remainder_norm: f64,
    /// ‖h²qG_φ‖ on L²(dV).
    pub contraction: f64,
    /// h²‖D⁻¹(K + Dq)u₁‖ / ‖u₁‖ over interior rows.
    pub pde_residual: f64,
    /// ‖(I + h²e^{−φ/h}G_φ q e^{φ/h})u₁ − u₀‖ / ‖u₀‖.
    pub identity_residual: f64,
}

impl OracleCgo {
    pub fn trace(&self, mesh: &Mesh) -> Vec<Complex64> {
        mesh.boundary().iter().map(|&b| self.values[b]).collect()
    }
}

/// h² q G_φ in orthonormal coordinates D^{1/2} · D^{-1/2}.
fn qg_matrix(g: &GreenOperator, q: &Potential, mesh: &Mesh) -> Mat<f64> {
    let h2 = g.weight.h * g.weight.h;
    let q = q.values();
    Mat::from_fn(mesh.len(), mesh.len(), |i, j| h2 * q[i] * g.matrix[(i, j)])
}

pub fn build_u1_oracle(mesh: &Mesh, u0: &HarmonicCgo, q: &Potential, g_phi: &GreenOperator, solver: U1Solver) -> Result<OracleCgo> {
    let w = g_phi.weight;
    if w.sign <= 0.0 || u0.sign <= 0.0 || (w.h - u0.h).abs() > 1e-14 {
        return Err(Error::ShapeMismatch("u₁ needs u₀ and G_φ at the same h".into()));
    }
    if q.values().len() != mesh.len() {
        return Err(Error::ShapeMismatch("potential does not match mesh".into()));
    }
    let (h, lambda) = (u0.h, u0.lambda);
    let n = mesh.len();
    let sd: Vec<f64> = mesh.mass().iter().map(|d| d.sqrt()).collect();
    let a = qg_matrix(g_phi, q, mesh);
    let contraction = spectral_norm(a.as_ref(), 60);
    // e^{φ/h}u₀ = e^{−iλx₁}(v_s + r̃₀), formed without the large factors.
    let lifted: Vec<Complex64> = (0..n)
        .map(|v| (u0.beam[v] + u0.remainder[v]) * Complex64::from_polar(1.0, -lambda * mesh.x1_of(v)))
        .collect();
    let b: Vec<Complex64> = (0..n).map(|v| lifted[v] * (-h * h * q.values()[v])).collect();
    let bt: Vec<Complex64> = b.iter().zip(&sd).map(|(x, s)| x * s).collect();
    let rt = match solver {
        U1Solver::Direct => {
            if contraction >= 1.0 {
                return Err(Error::ContractionFailure { h, detail: format!("‖h²qG_φ‖ = {contraction:.3}") });
            }
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            crate::linalg::DenseLu::new(m.as_ref())?.solve_c(&bt)
        }
        U1Solver::Neumann { max_iter } => {
            if contraction >= 1.0 {
                return Err(Error::ContractionFailure { h, detail: format!("‖h²qG_φ‖ = {contraction:.3}") });
            }
            let mut r = bt.clone();
            let scale = bt.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let mut converged = false;
            for _ in 0..max_iter {
                let ar = crate::linalg::mat_vec_c(a.as_ref(), &r);
                let next: Vec<Complex64> = bt.iter().zip(&ar).map(|(x, y)| x - y).collect();
                let step = next.iter().zip(&r).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                r = next;
                if step <= 1e-15 * scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::ContractionFailure { h, detail: format!("Neumann series did not settle in {max_iter} terms") });
            }
            r
        }
    };
    let r1: Vec<Complex64> = rt.iter().zip(&sd).map(|(x, s)| x / s).collect();
    let gr = g_phi.apply_c(&r1);
    let remainder: Vec<Complex64> = (0..n).map(|v| gr[v] * Complex64::from_polar(1.0, lambda * mesh.x1_of(v))).collect();
    let values: Vec<Complex64> = (0..n).map(|v| u0.values[v] + gr[v] * (-w.exponent(mesh.x1_of(v))).exp()).collect();
    // (3.15): u₁ + h² e^{−φ/h}G_φ(q e^{φ/h}u₁) − u₀.
    let qu: Vec<Complex64> = (0..n).map(|v| values[v] * (q.values()[v] * w.exponent(mesh.x1_of(v)).exp())).collect();
    let gqu = g_phi.apply_c(&qu);
    let defect: Vec<Complex64> =
        (0..n).map(|v| values[v] + gqu[v] * (h * h * (-w.exponent(mesh.x1_of(v))).exp()) - u0.values[v]).collect();
    let u0_norm = weighted_norm(&u0.values, mesh.mass()).max(f64::MIN_POSITIVE);
    Ok(OracleCgo {
        pde_residual: semiclassical_residual(mesh, q, &values, h),
        identity_residual: weighted_norm(&defect, mesh.mass()) / u0_norm,
        remainder_norm: weighted_norm(&remainder, mesh.mass()),
        contraction,
        values,
        r1,
        remainder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carleman::{build_green_pair, GreenOptions};
    use crate::forward::PotentialSpec;
    use crate::geometry::{trace_geodesic, CylinderGeometry, Resolution, TransversalManifold};
    use crate::quasimodes::{build_quasimode, BeamOptions, SpectralParameter};

    fn setup(h: f64, lambda: f64) -> (Mesh, GaussianBeam, GreenOperator, GreenOperator) {
        let mesh = CylinderGeometry::default().build_mesh(Resolution::new(3, 6)).unwrap();
        let m0 = TransversalManifold::flat();
        let g = trace_geodesic(&m0, 0.4, 0.1).unwrap();
        let beam = build_quasimode(&m0, &g, SpectralParameter::new(h, lambda).unwrap(), BeamOptions::default()).unwrap();
        let (gp, gm) = build_green_pair(&mesh, h, &GreenOptions::default()).unwrap();
        (mesh, beam, gp, gm)
    }

    #[test]
    fn harmonic_solutions_are_harmonic() {
        let (mesh, beam, gp, gm) = setup(0.2, 0.5);
        let u0 = build_u0(&mesh, &beam, &gp).unwrap();
        let u2 = build_u2(&mesh, &beam, &gm).unwrap();
        assert!(u0.harmonicity_residual < 1e-10, "{}", u0.harmonicity_residual);
        assert!(u2.harmonicity_residual < 1e-10, "{}", u2.harmonicity_residual);
        assert!(build_u0(&mesh, &beam, &gm).is_err());
    }

    #[test]
    fn zero_lambda_rhs_matches_closed_form() {
        let (mesh, beam, gp, _) = setup(0.15, 0.0);
        let u0 = build_u0(&mesh, &beam, &gp).unwrap();
        let closed = r0_closed_form(&mesh, &beam);
        let scale = weighted_norm(&closed, mesh.mass());
        let diff: Vec<Complex64> = u0.rhs.iter().zip(&closed).map(|(a, b)| a - b).collect();
        let e = weighted_norm(&diff, mesh.mass());
        assert!(e <= 1e-8 * scale.max(1.0), "{e} {scale}");
    }

    #[test]
    fn oracle_solution_and_solver_agreement() {
        let (mesh, beam, gp, _) = setup(0.2, 0.5);
        let u0 = build_u0(&mesh, &beam, &gp).unwrap();
        let zero = Potential::zero(&mesh);
        let u1 = build_u1_oracle(&mesh, &u0, &zero, &gp, U1Solver::Direct).unwrap();
        assert!(u1.r1.iter().all(|v| *v == ZERO));
        assert_eq!(u1.values, u0.values);

        let q = Potential::from_spec(&mesh, &PotentialSpec::acceptance_bump()).unwrap();
        let direct = build_u1_oracle(&mesh, &u0, &q, &gp, U1Solver::Direct).unwrap();
        let neumann = build_u1_oracle(&mesh, &u0, &q, &gp, U1Solver::Neumann { max_iter: 500 }).unwrap();
        assert!(direct.pde_residual < 1e-10 && direct.identity_residual < 1e-10);
        let diff: Vec<Complex64> = direct.r1.iter().zip(&neumann.r1).map(|(a, b)| a - b).collect();
        assert!(weighted_norm(&diff, mesh.mass()) <= 1e-8 * weighted_norm(&direct.r1, mesh.mass()));
    }
}
