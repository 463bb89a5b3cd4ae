//! Boundary values of q from concentrated oscillatory probes, and the extension of q into the end slabs.

use num_complex::Complex64;
use serde::Serialize;

use crate::config::ProbeConfig;
use crate::error::{Error, Result};
use crate::forward::{pair_dn, truncated_gaussian, DirichletSolver, DnMap};
use crate::geometry::chart::simpson;
use crate::geometry::{BoundaryChart, ChartBase, CylinderGeometry, DiskMesh, Mesh};
use crate::linalg::weighted_norm;

/// Truncation of each Gaussian factor of η, in widths.
const ETA_CUT: f64 = 4.0;

/// v_λ = λ^{−α−1/2} η(y/λ^α) e^{iτ′·y/λ} in boundary normal coordinates, with ∫η² = 1.
#[derive(Debug, Clone)]
pub struct BoundaryProbe {
    pub chart: BoundaryChart,
    pub alpha: f64,
    pub sigma: f64,
    /// Unit covector τ′ in the tangential chart coordinates.
    pub tau: [f64; 2],
    pub lambdas: Vec<f64>,
    pub nodes_per_wavelength: f64,
    /// 1 / ∫g² for one Gaussian factor g, so that η = g(z₁)g(z₂)/∫g².
    factor_scale: f64,
}

impl BoundaryProbe {
    pub fn new(geometry: &CylinderGeometry, base: ChartBase, cfg: &ProbeConfig) -> Result<Self> {
        if !(cfg.alpha >= 1.0 / 3.0 - 1e-12 && cfg.alpha <= 0.5) {
            return Err(Error::Config(format!("probe exponent α = {} outside [1/3, 1/2]", cfg.alpha)));
        }
        let chart = BoundaryChart::new(geometry, base, cfg.chart_radius)?;
        let lambdas = cfg.lambdas();
        // The support |y_i| ≤ 4σλ^α must stay inside the chart for every λ ≤ 1.
        let reach = ETA_CUT * cfg.eta_sigma * lambdas.iter().cloned().fold(0.0, f64::max).powf(cfg.alpha);
        if reach >= cfg.chart_radius {
            return Err(Error::Config(format!("probe support {reach:.3} exceeds the chart radius {}", cfg.chart_radius)));
        }
        let sigma = cfg.eta_sigma;
        let cut = ETA_CUT * sigma;
        let g2 = simpson(|u| truncated_gaussian(u, sigma, cut).powi(2), -cut, cut, 4000);
        Ok(Self { chart, alpha: cfg.alpha, sigma, tau: [1.0, 0.0], lambdas, nodes_per_wavelength: cfg.nodes_per_wavelength, factor_scale: 1.0 / g2 })
    }

    pub fn eta(&self, z: [f64; 2]) -> f64 {
        let cut = ETA_CUT * self.sigma;
        truncated_gaussian(z[0], self.sigma, cut) * truncated_gaussian(z[1], self.sigma, cut) * self.factor_scale
    }

    /// |∫η² − 1| by a composite Gauss–Legendre rule independent of the normalizing quadrature.
    pub fn normalization_defect(&self) -> f64 {
        let cut = ETA_CUT * self.sigma;
        let nodes = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        let weights = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let panels = 400;
        let w = 2.0 * cut / panels as f64;
        let mut one = 0.0;
        for k in 0..panels {
            let mid = -cut + (k as f64 + 0.5) * w;
            for (x, c) in nodes.iter().zip(&weights) {
                let u = mid + 0.5 * w * x;
                one += 0.5 * w * c * truncated_gaussian(u, self.sigma, cut).powi(2);
            }
        }
        (one * one * self.factor_scale * self.factor_scale - 1.0).abs()
    }

    /// Node spacing along τ′ on the probed face: the x₁ step laterally, the mean disk edge on a cap.
    pub fn spacing(&self, mesh: &Mesh) -> f64 {
        match self.chart.base {
            ChartBase::Lateral { .. } => mesh.x1_step(),
            ChartBase::Cap { .. } => mesh.disk().mean_edge(),
        }
    }

    /// Nodes per oscillation period 2πλ.
    pub fn resolution(&self, mesh: &Mesh, lambda: f64) -> f64 {
        2.0 * std::f64::consts::PI * lambda / self.spacing(mesh)
    }

    pub fn usable(&self, mesh: &Mesh, lambda: f64) -> bool {
        self.resolution(mesh, lambda) >= self.nodes_per_wavelength
    }

    /// Boundary values of v_λ (boundary order); zero off the probed face.
    pub fn trace(&self, mesh: &Mesh, lambda: f64) -> Vec<Complex64> {
        let scale = lambda.powf(-self.alpha - 0.5);
        let width = lambda.powf(self.alpha);
        mesh.boundary()
            .iter()
            .map(|&b| {
                let p = mesh.node(b);
                if !self.chart.on_face(p) {
                    return Complex64::new(0.0, 0.0);
                }
                let y = self.chart.tangential_coords(p);
                let e = self.eta([y[0] / width, y[1] / width]);
                if e == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                Complex64::from_polar(scale * e, (self.tau[0] * y[0] + self.tau[1] * y[1]) / lambda)
            })
            .collect()
    }

    pub fn point(&self, geometry: &CylinderGeometry) -> [f64; 3] {
        match self.chart.base {
            ChartBase::Lateral { x1, angle } => [x1, angle.cos(), angle.sin()],
            ChartBase::Cap { top, point } => [if top { geometry.length } else { 0.0 }, point[0], point[1]],
        }
    }
}

/// Estimate of q at one boundary point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryEstimate {
    pub face: String,
    pub point: [f64; 3],
    pub lambdas: Vec<f64>,
    /// 2⟨(Λ_q − Λ₀)v_λ, v̄_λ⟩.
    pub raw: Vec<f64>,
    /// ⟨(Λ_q − Λ₀)v_λ, v̄_λ⟩ / ‖P₀v_λ‖²_D.
    pub normalized: Vec<f64>,
    pub raw_limit: f64,
    pub value: f64,
    pub extrapolated: bool,
}

/// Linear-in-λ Richardson step from the two smallest λ; requires shrinking successive differences.
fn extrapolate(lambdas: &[f64], values: &[f64]) -> std::result::Result<(f64, bool), String> {
    let n = values.len();
    if n < 2 {
        return Ok((values[0], false));
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for w in diffs.windows(2) {
        if w[1] > w[0] + 1e-9 * scale {
            return Err(format!("successive differences {:.3e} then {:.3e}", w[0], w[1]));
        }
    }
    let (la, lb) = (lambdas[n - 2], lambdas[n - 1]);
    let (va, vb) = (values[n - 2], values[n - 1]);
    Ok(((la * vb - lb * va) / (la - lb), true))
}

/// q(x₀) from the probe pairing at each resolvable λ, then λ → 0 by Richardson extrapolation.
pub fn boundary_determination(mesh: &Mesh, dn_q: &DnMap, dn_0: &DnMap, solver_0: &DirichletSolver, probe: &BoundaryProbe) -> Result<BoundaryEstimate> {
    let point = probe.point(mesh.geometry());
    let (x1, angle) = match probe.chart.base {
        ChartBase::Lateral { x1, angle } => (x1, angle),
        ChartBase::Cap { point, .. } => (point[0], point[1]),
    };
    let face = match probe.chart.base {
        ChartBase::Lateral { .. } => "lateral",
        ChartBase::Cap { top: false, .. } => "bottom",
        ChartBase::Cap { top: true, .. } => "top",
    }
    .to_string();
    let lambdas: Vec<f64> = probe.lambdas.iter().copied().filter(|&l| probe.usable(mesh, l)).collect();
    if lambdas.is_empty() {
        let best = probe.lambdas.iter().cloned().fold(0.0, f64::max);
        return Err(Error::UnderResolved { nodes_per_wavelength: probe.resolution(mesh, best) });
    }
    let mut raw = Vec::new();
    let mut normalized = Vec::new();
    for &l in &lambdas {
        let f = probe.trace(mesh, l);
        let fc: Vec<Complex64> = f.iter().map(|z| z.conj()).collect();
        let pairing = pair_dn(dn_q, dn_0, &f, &fc)?.re;
        let u = solver_0.solve(mesh, &f)?;
        let energy = weighted_norm(&u.values, mesh.mass()).powi(2);
        raw.push(2.0 * pairing);
        normalized.push(if pairing == 0.0 { 0.0 } else { pairing / energy });
    }
    if normalized.iter().all(|&v| v == 0.0) {
        return Ok(BoundaryEstimate { face, point, lambdas, raw, normalized, raw_limit: 0.0, value: 0.0, extrapolated: false });
    }
    let (value, extrapolated) = extrapolate(&lambdas, &normalized).map_err(|detail| Error::BoundaryLimitUnstable { x1, angle, detail })?;
    let raw_limit = extrapolate(&lambdas, &raw).map(|r| r.0).unwrap_or(*raw.last().unwrap());
    Ok(BoundaryEstimate { face, point, lambdas, raw, normalized, raw_limit, value, extrapolated })
}

/// Affine fit a + b·x + c·y of boundary values on one cap (constant when fewer than three points).
fn fit_cap(points: &[([f64; 2], f64)]) -> [f64; 3] {
    if points.is_empty() {
        return [0.0; 3];
    }
    if points.len() < 3 {
        return [points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64, 0.0, 0.0];
    }
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (p, v) in points {
        let row = [1.0, p[0], p[1]];
        for i in 0..3 {
            atb[i] += row[i] * v;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let m = faer::Mat::from_fn(3, 3, |i, j| ata[i][j]);
    let b = faer::Mat::from_fn(3, 1, |i, _| atb[i]);
    match crate::linalg::DenseLu::new(m.as_ref()) {
        Ok(lu) => {
            let x = lu.solve_mat(b.as_ref());
            let out = [x[(0, 0)], x[(1, 0)], x[(2, 0)]];
            if out.iter().all(|v| v.is_finite()) {
                out
            } else {
                [points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64, 0.0, 0.0]
            }
        }
        Err(_) => [points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64, 0.0, 0.0],
    }
}

/// Smooth taper from 1 at the cap to 0 at the slab end; s ∈ [0, 1] is the relative depth.
pub fn taper(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * s).cos())
    }
}

/// q on T ∖ M = ([−m, 0) ∪ (L₁, L₁ + m]) × M₀: the cap values propagated outward with a taper.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extension {
    pub length: f64,
    pub margin: f64,
    pub bottom: [f64; 3],
    pub top: [f64; 3],
}

impl Extension {
    pub fn zero(geometry: &CylinderGeometry) -> Self {
        Self { length: geometry.length, margin: geometry.margin, bottom: [0.0; 3], top: [0.0; 3] }
    }

    /// Extension from boundary values sampled on the caps.
    pub fn from_cap_values(geometry: &CylinderGeometry, bottom: &[([f64; 2], f64)], top: &[([f64; 2], f64)]) -> Self {
        Self { length: geometry.length, margin: geometry.margin, bottom: fit_cap(bottom), top: fit_cap(top) }
    }

    pub fn is_zero(&self) -> bool {
        self.bottom == [0.0; 3] && self.top == [0.0; 3]
    }

    pub fn cap_value(&self, top: bool, p: [f64; 2]) -> f64 {
        let c = if top { self.top } else { self.bottom };
        c[0] + c[1] * p[0] + c[2] * p[1]
    }

    /// q_ext(x₁, x′); zero inside M and beyond the slabs.
    pub fn eval(&self, x1: f64, p: [f64; 2]) -> f64 {
        if x1 < 0.0 && x1 >= -self.margin {
            self.cap_value(false, p) * taper(-x1 / self.margin)
        } else if x1 > self.length && x1 <= self.length + self.margin {
            self.cap_value(true, p) * taper((x1 - self.length) / self.margin)
        } else {
            0.0
        }
    }

    /// (∫_{−m}^0, ∫_{L₁}^{L₁+m}) of taper·e^{−iμx₁} dx₁.
    pub fn slab_transforms(&self, mu: f64) -> (Complex64, Complex64) {
        let m = self.margin;
        let n = 400;
        let part = |f: &dyn Fn(f64) -> f64| simpson(f, 0.0, m, n);
        let bottom_re = part(&|s| taper(s / m) * (mu * s).cos());
        let bottom_im = part(&|s| taper(s / m) * (mu * s).sin());
        // x₁ = −s on the bottom slab, x₁ = L₁ + s on the top slab.
        let bottom = Complex64::new(bottom_re, bottom_im);
        let top = Complex64::from_polar(1.0, -mu * self.length) * Complex64::new(bottom_re, -bottom_im);
        (bottom, top)
    }

    /// ∫_{T∖M} e^{−iμx₁} q_ext dx₁ at each disk node.
    pub fn transform_on(&self, disk: &DiskMesh, mu: f64) -> Vec<Complex64> {
        if self.is_zero() {
            return vec![Complex64::new(0.0, 0.0); disk.len()];
        }
        let (b, t) = self.slab_transforms(mu);
        disk.nodes().iter().map(|&p| b * self.cap_value(false, p) + t * self.cap_value(true, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_dn_map, Potential};
    use crate::geometry::Resolution;

    #[test]
    fn eta_is_normalized() {
        let g = CylinderGeometry::default();
        let p = BoundaryProbe::new(&g, ChartBase::Lateral { x1: 0.5, angle: 0.0 }, &ProbeConfig::default()).unwrap();
        assert!(p.normalization_defect() < 1e-6, "{}", p.normalization_defect());
        assert_eq!(p.eta([ETA_CUT * p.sigma, 0.0]), 0.0);
    }

    #[test]
    fn zero_potential_gives_zero() {
        let g = CylinderGeometry::default();
        let mesh = g.build_mesh(Resolution::new(3, 8)).unwrap();
        let zero = Potential::zero(&mesh);
        let d0 = assemble_dn_map(&mesh, &zero).unwrap();
        let solver = DirichletSolver::new(&mesh, &zero).unwrap();
        let p = BoundaryProbe::new(&g, ChartBase::Lateral { x1: 0.5, angle: 0.0 }, &ProbeConfig::default()).unwrap();
        let est = boundary_determination(&mesh, &d0, &d0, &solver, &p).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(!est.extrapolated);
    }

    #[test]
    fn extension_is_continuous_and_tapered() {
        let g = CylinderGeometry::default();
        let ext = Extension::from_cap_values(&g, &[([0.0, 0.0], 0.7)], &[([0.1, 0.2], 0.7)]);
        assert!((ext.eval(-1e-15, [0.3, 0.1]) - 0.7).abs() < 1e-12);
        assert!((ext.eval(1.0 + 1e-15, [0.3, 0.1]) - 0.7).abs() < 1e-12);
        assert_eq!(ext.eval(-g.margin, [0.3, 0.1]), 0.0);
        assert_eq!(ext.eval(0.5, [0.3, 0.1]), 0.0);
        let (b, t) = ext.slab_transforms(0.0);
        assert!((b.re - 0.5 * g.margin).abs() < 1e-10 && (t.re - 0.5 * g.margin).abs() < 1e-10);
        assert!(Extension::zero(&g).is_zero());
    }

    #[test]
    fn affine_fit_is_exact_on_affine_data() {
        let pts: Vec<([f64; 2], f64)> = [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [-0.3, 0.2]].iter().map(|&p| (p, 1.0 + 2.0 * p[0] - p[1])).collect();
        let c = fit_cap(&pts);
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 2.0).abs() < 1e-12 && (c[2] + 1.0).abs() < 1e-12);
    }
}
