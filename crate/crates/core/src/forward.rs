//! Finite-element forward problem for −Δ + q and the Dirichlet-to-Neumann map as a Schur complement.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{hex, CylinderGeometry, Mesh, NodeKind};
use crate::linalg::{symmetric_eigenvalues, DenseLu};

/// Pipelines refuse to proceed when zero is this close to the Dirichlet spectrum.
pub const SPECTRUM_THRESHOLD: f64 = 1e-6;

/// Closed-form potentials used for forward simulation and as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Constant { value: f64 },
    /// value + slope·x₁.
    LinearX1 { value: f64, slope: f64 },
    /// amplitude·G(x₁ − center_x1; σ₁)·G(|x′|; σ₂), each factor truncated where it drops to its value at
    /// min(truncation·σ, distance to the boundary) and shifted to vanish there.
    GaussianBump {
        amplitude: f64,
        center_x1: f64,
        sigma_x1: f64,
        sigma_transverse: f64,
        #[serde(default = "default_truncation")]
        truncation: f64,
    },
}

fn default_truncation() -> f64 {
    4.0
}

impl PotentialSpec {
    pub fn acceptance_bump() -> Self {
        PotentialSpec::GaussianBump { amplitude: 1.0, center_x1: 0.5, sigma_x1: 0.15, sigma_transverse: 0.25, truncation: 4.0 }
    }

    pub fn eval(&self, geometry: &CylinderGeometry, p: [f64; 3]) -> f64 {
        match *self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Constant { value } => value,
            PotentialSpec::LinearX1 { value, slope } => value + slope * p[0],
            PotentialSpec::GaussianBump { amplitude, center_x1, sigma_x1, sigma_transverse, truncation } => {
                let cut1 = (truncation * sigma_x1).min(center_x1.min(geometry.length - center_x1));
                let cut2 = (truncation * sigma_transverse).min(1.0);
                let r = (p[1] * p[1] + p[2] * p[2]).sqrt();
                amplitude * truncated_gaussian(p[0] - center_x1, sigma_x1, cut1) * truncated_gaussian(r, sigma_transverse, cut2)
            }
        }
    }

    /// True when the closed form vanishes identically on ∂M.
    pub fn is_interior_supported(&self) -> bool {
        matches!(self, PotentialSpec::Zero | PotentialSpec::GaussianBump { .. })
    }
}

/// Gaussian e^{−u²/2σ²} lowered by its value at |u| = cut and rescaled to peak 1; zero beyond cut.
pub fn truncated_gaussian(u: f64, sigma: f64, cut: f64) -> f64 {
    if u.abs() >= cut - 1e-12 {
        return 0.0;
    }
    let floor = (-cut * cut / (2.0 * sigma * sigma)).exp();
    ((-u * u / (2.0 * sigma * sigma)).exp() - floor) / (1.0 - floor)
}

/// Real nodal potential with piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
    interior_supported: bool,
    label: String,
}

impl Potential {
    pub fn from_values(mesh: &Mesh, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::ShapeMismatch(format!("potential has {} values for {} nodes", values.len(), mesh.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential(format!("non-finite nodal value {v}")));
        }
        Ok(Self { values, interior_supported: false, label: label.into() })
    }

    pub fn zero(mesh: &Mesh) -> Self {
        Self { values: vec![0.0; mesh.len()], interior_supported: true, label: "zero".into() }
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        Self { values: vec![c; mesh.len()], interior_supported: c == 0.0, label: format!("constant {c}") }
    }

    pub fn from_fn(mesh: &Mesh, label: impl Into<String>, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        Self::from_values(mesh, (0..mesh.len()).map(|v| f(mesh.node(v))).collect(), label)
    }

    pub fn from_spec(mesh: &Mesh, spec: &PotentialSpec) -> Result<Self> {
        let g = mesh.geometry();
        let label = serde_json::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
        let q = Self::from_fn(mesh, label, |p| spec.eval(g, p))?;
        if spec.is_interior_supported() {
            q.with_interior_support(mesh)
        } else {
            Ok(q)
        }
    }

    /// Sets the interior-support flag after checking that q vanishes on every boundary node.
    pub fn with_interior_support(mut self, mesh: &Mesh) -> Result<Self> {
        if let Some(&b) = mesh.boundary().iter().find(|&&b| self.values[b] != 0.0) {
            return Err(Error::InvalidPotential(format!("q = {} at boundary node {b}", self.values[b])));
        }
        self.interior_supported = true;
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_interior_supported(&self) -> bool {
        self.interior_supported
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            interior_supported: self.interior_supported,
            label: format!("{s} * ({})", self.label),
        }
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"potential-v1");
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

/// Nodal field with its interior residual ‖(A u)_I‖ in the dual-weighted norm √(Σ |r_i|²/D_i).
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub values: Vec<Complex64>,
    pub residual: f64,
}

impl FieldSolution {
    pub fn trace(&self, mesh: &Mesh) -> Vec<Complex64> {
        mesh.boundary().iter().map(|&b| self.values[b]).collect()
    }
}

/// Interior residual of (K + D q) u in the dual-weighted norm.
pub fn interior_residual(mesh: &Mesh, q: &Potential, u: &[Complex64]) -> f64 {
    let k = mesh.stiffness();
    let d = mesh.mass();
    mesh.interior()
        .iter()
        .map(|&i| {
            let r: Complex64 = k.row(i).map(|(c, v)| u[c] * v).sum::<Complex64>() + u[i] * (d[i] * q.values[i]);
            r.norm_sqr() / d[i]
        })
        .sum::<f64>()
        .sqrt()
}

struct Blocks {
    a_ii: Mat<f64>,
    a_ib: Mat<f64>,
    a_bb: Mat<f64>,
}

fn assemble_blocks(mesh: &Mesh, q: &Potential) -> Blocks {
    let (ni, nb) = (mesh.interior().len(), mesh.boundary().len());
    let mut a_ii = Mat::zeros(ni, ni);
    let mut a_ib = Mat::zeros(ni, nb);
    let mut a_bb = Mat::zeros(nb, nb);
    let d = mesh.mass();
    for v in 0..mesh.len() {
        let potential = d[v] * q.values[v];
        for (c, val) in mesh.stiffness().row(v) {
            let val = if c == v { val + potential } else { val };
            match (mesh.kind(v), mesh.kind(c)) {
                (NodeKind::Interior(a), NodeKind::Interior(b)) => a_ii[(a, b)] = val,
                (NodeKind::Interior(a), NodeKind::Boundary(b)) => a_ib[(a, b)] = val,
                (NodeKind::Boundary(a), NodeKind::Boundary(b)) => a_bb[(a, b)] = val,
                (NodeKind::Boundary(_), NodeKind::Interior(_)) => {}
            }
        }
    }
    Blocks { a_ii, a_ib, a_bb }
}

/// Smallest |eigenvalue| of D_I^{-1/2} A_II D_I^{-1/2}, the distance of 0 from the discrete Dirichlet spectrum.
pub fn check_spectrum(mesh: &Mesh, q: &Potential) -> Result<f64> {
    let a = assemble_blocks(mesh, q).a_ii;
    let d: Vec<f64> = mesh.interior().iter().map(|&i| mesh.mass()[i].sqrt()).collect();
    let scaled = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / (d[i] * d[j]));
    let ev = symmetric_eigenvalues(scaled.as_ref())?;
    Ok(ev.iter().map(|v| v.abs()).fold(f64::MAX, f64::min))
}

/// Factorized Dirichlet problem for a fixed potential, reusable across right-hand sides.
pub struct DirichletSolver {
    lu: DenseLu,
    blocks: Blocks,
    q: Potential,
    pub margin: f64,
}

impl DirichletSolver {
    pub fn new(mesh: &Mesh, q: &Potential) -> Result<Self> {
        if q.values.len() != mesh.len() {
            return Err(Error::ShapeMismatch("potential does not match mesh".into()));
        }
        let margin = check_spectrum(mesh, q)?;
        if margin < SPECTRUM_THRESHOLD {
            return Err(Error::EigenvalueProximity { margin });
        }
        let blocks = assemble_blocks(mesh, q);
        let lu = DenseLu::new(blocks.a_ii.as_ref())?;
        Ok(Self { lu, blocks, q: q.clone(), margin })
    }

    pub fn potential(&self) -> &Potential {
        &self.q
    }

    /// Discrete weak solution with Dirichlet data f (boundary order).
    pub fn solve(&self, mesh: &Mesh, f: &[Complex64]) -> Result<FieldSolution> {
        Ok(self.solve_many(mesh, &[f.to_vec()])?.pop().unwrap())
    }

    pub fn solve_many(&self, mesh: &Mesh, fs: &[Vec<Complex64>]) -> Result<Vec<FieldSolution>> {
        let nb = mesh.boundary().len();
        if let Some(f) = fs.iter().find(|f| f.len() != nb) {
            return Err(Error::ShapeMismatch(format!("boundary data has {} entries, expected {nb}", f.len())));
        }
        let rhs: Vec<Vec<Complex64>> = fs.iter().map(|f| crate::linalg::mat_vec_c(self.blocks.a_ib.as_ref(), f)).collect();
        let interior = self.lu.solve_many_c(&rhs);
        Ok(fs
            .iter()
            .zip(interior)
            .map(|(f, ui)| {
                let mut values = vec![Complex64::new(0.0, 0.0); mesh.len()];
                for (k, &b) in mesh.boundary().iter().enumerate() {
                    values[b] = f[k];
                }
                for (k, &i) in mesh.interior().iter().enumerate() {
                    values[i] = -ui[k];
                }
                let residual = interior_residual(mesh, &self.q, &values);
                FieldSolution { values, residual }
            })
            .collect())
    }

    /// S = A_BB − A_BI A_II⁻¹ A_IB.
    pub fn dn_map(&self, mesh: &Mesh) -> DnMap {
        let x = self.lu.solve_mat(self.blocks.a_ib.as_ref());
        let correction = self.blocks.a_ib.transpose() * &x;
        let form = &self.blocks.a_bb - &correction;
        DnMap {
            form,
            boundary_mass: mesh.boundary_mass().to_vec(),
            mesh_hash: mesh.hash().to_string(),
            potential_hash: self.q.hash(),
        }
    }
}

pub fn solve_dirichlet(mesh: &Mesh, q: &Potential, f: &[Complex64]) -> Result<FieldSolution> {
    DirichletSolver::new(mesh, q)?.solve(mesh, f)
}

pub fn assemble_dn_map(mesh: &Mesh, q: &Potential) -> Result<DnMap> {
    Ok(DirichletSolver::new(mesh, q)?.dn_map(mesh))
}

/// Bilinear DN form S with ⟨Λf, k⟩ = fᵀ S k; the nodal function Λf is B⁻¹ S f.
#[derive(Debug, Clone)]
pub struct DnMap {
    pub form: Mat<f64>,
    pub boundary_mass: Vec<f64>,
    pub mesh_hash: String,
    pub potential_hash: String,
}

impl DnMap {
    pub fn boundary_count(&self) -> usize {
        self.form.nrows()
    }

    pub fn pair(&self, f: &[Complex64], k: &[Complex64]) -> Complex64 {
        let sk = crate::linalg::mat_vec_c(self.form.as_ref(), k);
        crate::linalg::dot_c(f, &sk)
    }

    /// Nodal representative of Λf.
    pub fn apply(&self, f: &[Complex64]) -> Vec<Complex64> {
        crate::linalg::mat_vec_c(self.form.as_ref(), f).into_iter().zip(&self.boundary_mass).map(|(v, b)| v / *b).collect()
    }

    /// Largest |S_ij − S_ji| relative to max |S_ij|.
    pub fn asymmetry(&self) -> f64 {
        let n = self.form.nrows();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.form[(i, j)] - self.form[(j, i)]).abs());
                scale = scale.max(self.form[(i, j)].abs());
            }
        }
        worst / scale
    }

    pub fn check_compatible(&self, other: &DnMap) -> Result<()> {
        if self.boundary_count() != other.boundary_count() {
            return Err(Error::ShapeMismatch(format!(
                "DN maps have {} and {} boundary nodes",
                self.boundary_count(),
                other.boundary_count()
            )));
        }
        if self.mesh_hash != other.mesh_hash {
            return Err(Error::ShapeMismatch("DN maps were assembled on different meshes".into()));
        }
        Ok(())
    }

    /// Form of the difference Λ_a − Λ_b.
    pub fn difference(&self, other: &DnMap) -> Result<Mat<f64>> {
        self.check_compatible(other)?;
        Ok(&self.form - &other.form)
    }
}

/// ⟨(Λ_a − Λ_b) f, k⟩ in the bilinear boundary duality.
pub fn pair_dn(a: &DnMap, b: &DnMap, f: &[Complex64], k: &[Complex64]) -> Result<Complex64> {
    a.check_compatible(b)?;
    let n = a.boundary_count();
    if f.len() != n || k.len() != n {
        return Err(Error::ShapeMismatch(format!("boundary vectors of length {} and {}, expected {n}", f.len(), k.len())));
    }
    Ok(a.pair(f, k) - b.pair(f, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Resolution;

    fn mesh() -> Mesh {
        CylinderGeometry::default().build_mesh(Resolution::new(3, 5)).unwrap()
    }

    #[test]
    fn constants_and_x1_are_harmonic() {
        let m = mesh();
        let s = DirichletSolver::new(&m, &Potential::zero(&m)).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); m.boundary().len()];
        let u = s.solve(&m, &ones).unwrap();
        assert!(u.values.iter().all(|v| (v - 1.0).norm() < 1e-12));
        let f: Vec<Complex64> = m.boundary().iter().map(|&b| Complex64::new(m.x1_of(b), 0.0)).collect();
        let u = s.solve(&m, &f).unwrap();
        for v in 0..m.len() {
            assert!((u.values[v].re - m.x1_of(v)).abs() < 1e-12);
        }
        assert!(u.residual < 1e-10);
    }

    #[test]
    fn dn_of_constant_vanishes() {
        let m = mesh();
        let l0 = assemble_dn_map(&m, &Potential::zero(&m)).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); m.boundary().len()];
        assert!(l0.apply(&ones).iter().all(|v| v.norm() < 1e-10));
        assert!(l0.asymmetry() < 1e-12);
    }

    #[test]
    fn truncated_bump_vanishes_on_boundary() {
        let m = mesh();
        let q = Potential::from_spec(&m, &PotentialSpec::acceptance_bump()).unwrap();
        assert!(q.is_interior_supported());
        assert!(q.values().iter().cloned().fold(0.0, f64::max) > 0.5);
    }

    #[test]
    fn shifted_spectrum_is_detected() {
        let m = mesh();
        let margin = check_spectrum(&m, &Potential::zero(&m)).unwrap();
        let q = Potential::constant(&m, -margin);
        assert!(check_spectrum(&m, &q).unwrap() < 1e-9);
        assert!(matches!(DirichletSolver::new(&m, &q), Err(Error::EigenvalueProximity { .. })));
    }
}
