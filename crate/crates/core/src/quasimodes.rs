//! Gaussian beam quasimodes v_s on the transversal disk concentrated along a geodesic.
//!
//! Phase Θ = t + ½H(t)y² in Fermi coordinates (t, y) with Ḣ + H² + K = 0, H(0) = i; amplitude
//! ȧ + ½Ha = 0, a(0) = 1. On the flat disk an optional first-order amplitude factor
//! B = 1 + (c₀ + c₂ s y² + c₄ s² y⁴)/s removes the O(1) part of the residual.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{chart::simpson, radius, DiskMesh, Geodesic, TransversalManifold};
use crate::sparse::{conjugate_gradient, Csr};

/// Largest admissible |λ|.
pub const LAMBDA_MAX: f64 = 2.0;
/// Smallest admissible Im H along the beam.
pub const IM_H_MIN: f64 = 1e-3;
/// Resolution floor for residual evaluation.
pub const NODES_PER_WAVELENGTH: f64 = 6.0;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParameter {
    pub h: f64,
    pub lambda: f64,
}

impl SpectralParameter {
    pub fn new(h: f64, lambda: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::ParameterOutOfRange { h, min: 0.0, max: 1.0 });
        }
        if !(lambda.abs() <= LAMBDA_MAX) {
            return Err(Error::Config(format!("|lambda| = {} exceeds {LAMBDA_MAX}", lambda.abs())));
        }
        Ok(Self { h, lambda })
    }

    /// s = 1/h + iλ.
    pub fn s(&self) -> Complex64 {
        Complex64::new(1.0 / self.h, self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamOptions {
    /// Cutoff radius: χ(y/δ) equals 1 for |y| ≤ δ/2 and vanishes for |y| ≥ δ.
    pub delta: f64,
    /// First-order amplitude correction (flat disk only).
    pub corrected: bool,
    /// ODE steps per geodesic length.
    pub steps: usize,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self { delta: 2.0, corrected: true, steps: 2000 }
    }
}

/// ODE state (H, a, c₄, c₂, c₀).
type State = [Complex64; 5];

#[derive(Debug, Clone)]
pub struct GaussianBeam {
    pub geodesic: Geodesic,
    pub sp: SpectralParameter,
    pub opts: BeamOptions,
    pub normalization: f64,
    t0: f64,
    dt: f64,
    states: Vec<State>,
    rates: Vec<State>,
    profile_scale: Option<crate::geometry::ConformalProfile>,
    corrected: bool,
}

fn rhs(state: &State, curvature: f64, corrected: bool) -> State {
    let [h, a, c4, c2, _] = *state;
    let dh = -h * h - curvature;
    let da = -0.5 * h * a;
    if !corrected {
        return [dh, da, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
    }
    let h2 = h * h;
    let dc4 = -4.0 * h * c4 - I * h2 * h2 / 8.0;
    let dc2 = -0.75 * h2 * h + 6.0 * I * c4 - 2.0 * h * c2;
    let dc0 = 0.375 * I * h2 + I * c2;
    [dh, da, dc4, dc2, dc0]
}

fn rk4_step(y: &State, dt: f64, k: impl Fn(f64) -> f64, t: f64, corrected: bool) -> State {
    let add = |a: &State, b: &State, s: f64| -> State { std::array::from_fn(|i| a[i] + b[i] * s) };
    let k1 = rhs(y, k(t), corrected);
    let k2 = rhs(&add(y, &k1, dt / 2.0), k(t + dt / 2.0), corrected);
    let k3 = rhs(&add(y, &k2, dt / 2.0), k(t + dt / 2.0), corrected);
    let k4 = rhs(&add(y, &k3, dt), k(t + dt), corrected);
    std::array::from_fn(|i| y[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0))
}

/// Beam along γ; the ODE is integrated over [−1, L + 1] so that points of the disk beyond the endpoints are covered.
pub fn build_quasimode(m0: &TransversalManifold, geodesic: &Geodesic, sp: SpectralParameter, opts: BeamOptions) -> Result<GaussianBeam> {
    let (cos_in, cos_out) = geodesic.incidence_cosines();
    if cos_in.min(cos_out) < m0.angle_tol {
        return Err(Error::NonTangentialViolation { offset: geodesic.offset, limit: 1.0 - m0.angle_tol });
    }
    let corrected = opts.corrected && m0.is_flat();
    let dt = geodesic.length / opts.steps as f64;
    let ext = 1.0;
    let back = (ext / dt).ceil() as usize;
    let fwd = ((geodesic.length + ext) / dt).ceil() as usize;
    let curvature = |t: f64| {
        if m0.is_flat() {
            0.0
        } else {
            m0.profile.gauss_curvature(radius(geodesic.point(t)))
        }
    };
    let zero = Complex64::new(0.0, 0.0);
    let init: State = [I, Complex64::new(1.0, 0.0), zero, zero, zero];
    let mut forward = vec![init];
    for k in 0..fwd {
        let y = rk4_step(forward.last().unwrap(), dt, curvature, k as f64 * dt, corrected);
        forward.push(y);
    }
    let mut backward = vec![init];
    for k in 0..back {
        let y = rk4_step(backward.last().unwrap(), -dt, curvature, -(k as f64) * dt, corrected);
        backward.push(y);
    }
    backward.reverse();
    backward.pop();
    let mut states = backward;
    states.extend(forward);
    let t0 = -(back as f64) * dt;
    for (k, s) in states.iter().enumerate() {
        let t = t0 + k as f64 * dt;
        if (0.0..=geodesic.length).contains(&t) && s[0].im < IM_H_MIN {
            return Err(Error::BeamDegenerate { t, im_h: s[0].im });
        }
    }
    let rates = states.iter().enumerate().map(|(k, s)| rhs(s, curvature(t0 + k as f64 * dt), corrected)).collect();
    Ok(GaussianBeam {
        geodesic: geodesic.clone(),
        sp,
        opts,
        normalization: PI.powf(-0.25) * sp.h.powf(-0.25),
        t0,
        dt,
        states,
        rates,
        profile_scale: if m0.is_flat() { None } else { Some(m0.profile.clone()) },
        corrected,
    })
}

/// Smooth cutoff: 1 on [0, ½], 0 on [1, ∞); returns (χ, χ′) in |u|.
fn cutoff(u: f64) -> (f64, f64) {
    let u = u.abs();
    if u <= 0.5 {
        return (1.0, 0.0);
    }
    if u >= 1.0 {
        return (0.0, 0.0);
    }
    // x runs from 1 at u = ½ to 0 at u = 1.
    let x = 2.0 * (1.0 - u);
    let f = |x: f64| if x <= 0.0 { 0.0 } else { (-1.0 / x).exp() };
    let df = |x: f64| if x <= 0.0 { 0.0 } else { (-1.0 / x).exp() / (x * x) };
    let (a, b) = (f(x), f(1.0 - x));
    let (da, db) = (df(x), -df(1.0 - x));
    let s = a / (a + b);
    let ds_dx = (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
    (s, -2.0 * ds_dx)
}

impl GaussianBeam {
    /// ODE state and its t-derivative at t by cubic Hermite interpolation.
    fn state(&self, t: f64) -> (State, State) {
        let n = self.states.len();
        let x = ((t - self.t0) / self.dt).clamp(0.0, (n - 1) as f64);
        let k = (x.floor() as usize).min(n - 2);
        let u = x - k as f64;
        let (y0, y1, d0, d1) = (&self.states[k], &self.states[k + 1], &self.rates[k], &self.rates[k + 1]);
        let h = self.dt;
        let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
        let h10 = u * u * u - 2.0 * u * u + u;
        let h01 = -2.0 * u * u * u + 3.0 * u * u;
        let h11 = u * u * u - u * u;
        let g00 = (6.0 * u * u - 6.0 * u) / h;
        let g10 = 3.0 * u * u - 4.0 * u + 1.0;
        let g01 = (-6.0 * u * u + 6.0 * u) / h;
        let g11 = 3.0 * u * u - 2.0 * u;
        let val = std::array::from_fn(|i| y0[i] * h00 + d0[i] * (h10 * h) + y1[i] * h01 + d1[i] * (h11 * h));
        let der = std::array::from_fn(|i| y0[i] * g00 + d0[i] * g10 + y1[i] * g01 + d1[i] * g11);
        (val, der)
    }

    /// H(t) from the stored ODE solution at grid index k (t = t₀ + k·dt).
    pub fn riccati_samples(&self) -> Vec<(f64, Complex64)> {
        self.states.iter().enumerate().map(|(k, s)| (self.t0 + k as f64 * self.dt, s[0])).collect()
    }

    pub fn amplitude_samples(&self) -> Vec<(f64, Complex64)> {
        self.states.iter().enumerate().map(|(k, s)| (self.t0 + k as f64 * self.dt, s[1])).collect()
    }

    pub fn min_im_h(&self) -> f64 {
        self.riccati_samples()
            .into_iter()
            .filter(|(t, _)| (0.0..=self.geodesic.length).contains(t))
            .map(|(_, h)| h.im)
            .fold(f64::MAX, f64::min)
    }

    /// Fermi coordinates (t, y) and the Euclidean gradients of t and y.
    fn fermi(&self, p: [f64; 2]) -> (f64, f64, [f64; 2], [f64; 2]) {
        let (t, dist) = self.geodesic.closest(p);
        let q = self.geodesic.point(t);
        let v = self.geodesic.velocity(t);
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let d = [v[0] / speed, v[1] / speed];
        let n = [-d[1], d[0]];
        let side = (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1];
        let scale = match &self.profile_scale {
            None => 1.0,
            Some(prof) => prof.value(radius(q)).sqrt(),
        };
        let y = scale * if self.geodesic.is_chord() { side } else { dist.copysign(side) };
        (t, y, [scale * d[0], scale * d[1]], [scale * n[0], scale * n[1]])
    }

    /// v_s and its Euclidean gradient at p.
    pub fn eval(&self, p: [f64; 2]) -> (Complex64, [Complex64; 2]) {
        self.eval_with(p, self.sp.s())
    }

    /// Same beam profile with a different spectral parameter (the ODE states do not depend on s).
    fn eval_with(&self, p: [f64; 2], s: Complex64) -> (Complex64, [Complex64; 2]) {
        let zero = Complex64::new(0.0, 0.0);
        let (t, y, grad_t, grad_y) = self.fermi(p);
        let (chi, dchi) = cutoff(y / self.opts.delta);
        if chi == 0.0 {
            return (zero, [zero, zero]);
        }
        let ([h, a, c4, c2, c0], [dh, da, dc4, dc2, dc0]) = self.state(t);
        let y2 = y * y;
        let theta = t + 0.5 * h * y2;
        let phase = (I * s * theta).exp();
        let (b, db_t, db_y) = if self.corrected {
            let b = 1.0 + (c0 + c2 * s * y2 + c4 * s * s * y2 * y2) / s;
            let bt = (dc0 + dc2 * s * y2 + dc4 * s * s * y2 * y2) / s;
            let by = (2.0 * c2 * s * y + 4.0 * c4 * s * s * y2 * y) / s;
            (b, bt, by)
        } else {
            (Complex64::new(1.0, 0.0), zero, zero)
        };
        let core = a * b * phase * self.normalization;
        let value = core * chi;
        let dv_t = value * (da / a + db_t / b + I * s * (1.0 + 0.5 * dh * y2));
        let dv_y = value * (db_y / b + I * s * h * y) + core * (dchi.copysign(y) / self.opts.delta);
        let grad = [dv_t * grad_t[0] + dv_y * grad_y[0], dv_t * grad_t[1] + dv_y * grad_y[1]];
        (value, grad)
    }

    pub fn nodal(&self, disk: &DiskMesh) -> Vec<Complex64> {
        disk.nodes().iter().map(|&p| self.eval(p).0).collect()
    }

    /// Nodal samples of v_s at s = 1/h + iλ for each λ; the ODE states do not depend on s, so one beam serves every (h, λ).
    pub fn nodal_spectral(&self, disk: &DiskMesh, h: f64, lambdas: &[f64]) -> Vec<Vec<Complex64>> {
        let rescale = (self.sp.h / h).powf(0.25);
        let mut out = vec![Vec::with_capacity(disk.len()); lambdas.len()];
        for &p in disk.nodes() {
            for (k, &l) in lambdas.iter().enumerate() {
                out[k].push(self.eval_with(p, Complex64::new(1.0 / h, l)).0 * rescale);
            }
        }
        out
    }
}

/// Degree-5 seven-point rule on the reference triangle: (barycentric, weight).
const DUNAVANT7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

/// Quadrature points of triangle t after one midpoint refinement: (point, barycentric in t, weight incl. area).
fn quadrature(disk: &DiskMesh, t: usize) -> Vec<([f64; 2], [f64; 3], f64)> {
    let area = disk.triangle_area(t);
    let corners: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mid = |a: usize, b: usize| -> [f64; 3] { std::array::from_fn(|i| 0.5 * (corners[a][i] + corners[b][i])) };
    let (m01, m12, m20) = (mid(0, 1), mid(1, 2), mid(2, 0));
    let subs = [[corners[0], m01, m20], [m01, corners[1], m12], [m20, m12, corners[2]], [m12, m20, m01]];
    let tri = disk.triangles()[t];
    let nodes = disk.nodes();
    let mut out = Vec::with_capacity(28);
    for sub in subs {
        for (bc, w) in DUNAVANT7 {
            let lam: [f64; 3] = std::array::from_fn(|i| bc[0] * sub[0][i] + bc[1] * sub[1][i] + bc[2] * sub[2][i]);
            let p = [
                lam[0] * nodes[tri[0]][0] + lam[1] * nodes[tri[1]][0] + lam[2] * nodes[tri[2]][0],
                lam[0] * nodes[tri[0]][1] + lam[1] * nodes[tri[1]][1] + lam[2] * nodes[tri[2]][1],
            ];
            out.push((p, lam, w * area / 4.0));
        }
    }
    out
}

/// ‖(−Δ_{g₀} − s²)v_s‖ in L²(M₀): the weak residual against interior hat functions, measured through the consistent mass.
pub fn residual_norm(beam: &GaussianBeam, disk: &DiskMesh, m0: &TransversalManifold) -> Result<f64> {
    let npw = 2.0 * PI * beam.sp.h / disk.max_edge();
    if npw < NODES_PER_WAVELENGTH {
        return Err(Error::UnderResolved { nodes_per_wavelength: npw });
    }
    let s2 = beam.sp.s() * beam.sp.s();
    let mut rho = vec![Complex64::new(0.0, 0.0); disk.len()];
    for t in 0..disk.triangles().len() {
        let g = disk.hat_gradients(t);
        let tri = disk.triangles()[t];
        for (p, lam, w) in quadrature(disk, t) {
            let (v, dv) = beam.eval(p);
            if v == Complex64::new(0.0, 0.0) && dv[0] == v && dv[1] == v {
                continue;
            }
            let c = m0.conformal_factor(p);
            for a in 0..3 {
                rho[tri[a]] += (dv[0] * g[a][0] + dv[1] * g[a][1] - s2 * c * v * lam[a]) * w;
            }
        }
    }
    let interior: Vec<usize> = (0..disk.len()).filter(|&v| !disk.is_boundary(v)).collect();
    let mut slot = vec![usize::MAX; disk.len()];
    for (k, &v) in interior.iter().enumerate() {
        slot[v] = k;
    }
    let mass = disk.consistent_mass(&m0.profile);
    let mut trip = Vec::new();
    for &v in &interior {
        for (c, val) in mass.row(v) {
            if slot[c] != usize::MAX {
                trip.push((slot[v], slot[c], val));
            }
        }
    }
    let m_ii = Csr::from_triplets(interior.len(), interior.len(), trip);
    let re: Vec<f64> = interior.iter().map(|&v| rho[v].re).collect();
    let im: Vec<f64> = interior.iter().map(|&v| rho[v].im).collect();
    let (x_re, _) = conjugate_gradient(&m_ii, &re, 1e-12, 2000);
    let (x_im, _) = conjugate_gradient(&m_ii, &im, 1e-12, 2000);
    let norm2: f64 = re.iter().zip(&x_re).map(|(a, b)| a * b).sum::<f64>() + im.iter().zip(&x_im).map(|(a, b)| a * b).sum::<f64>();
    Ok(norm2.max(0.0).sqrt())
}

/// ∫ |v_s|² ψ dV_{g₀} by refined element quadrature.
pub fn concentration_integral(beam: &GaussianBeam, disk: &DiskMesh, m0: &TransversalManifold, psi: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let mut total = 0.0;
    for t in 0..disk.triangles().len() {
        for (p, _, w) in quadrature(disk, t) {
            let v = beam.eval(p).0;
            total += v.norm_sqr() * psi(p) * m0.conformal_factor(p) * w;
        }
    }
    total
}

pub fn beam_norm(beam: &GaussianBeam, disk: &DiskMesh, m0: &TransversalManifold) -> f64 {
    concentration_integral(beam, disk, m0, &|_| 1.0).sqrt()
}

/// Limit ∫₀^L e^{−2λt} ψ(γ(t)) dt.
pub fn concentration_target(beam: &GaussianBeam, psi: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let g = &beam.geodesic;
    let lambda = beam.sp.lambda;
    simpson(|t| (-2.0 * lambda * t).exp() * psi(g.point(t)), 0.0, g.length, 2000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::trace_geodesic;

    #[test]
    fn flat_riccati_matches_closed_form() {
        let m0 = TransversalManifold::flat();
        let g = trace_geodesic(&m0, 0.3, 0.2).unwrap();
        let beam = build_quasimode(&m0, &g, SpectralParameter::new(0.1, 0.0).unwrap(), BeamOptions::default()).unwrap();
        for (t, h) in beam.riccati_samples() {
            let exact = I / (1.0 + I * t);
            assert!((h - exact).norm() < 1e-8, "t = {t}");
        }
        for (t, a) in beam.amplitude_samples() {
            let exact = (1.0 + I * t).powf(-0.5);
            assert!((a - exact).norm() < 1e-8);
        }
    }

    #[test]
    fn cutoff_is_smooth_step() {
        assert_eq!(cutoff(0.3), (1.0, 0.0));
        assert_eq!(cutoff(1.2), (0.0, 0.0));
        let (c, d) = cutoff(0.75);
        assert!((c - 0.5).abs() < 1e-12 && d < 0.0);
        let e = 1e-6;
        let fd = (cutoff(0.7 + e).0 - cutoff(0.7 - e).0) / (2.0 * e);
        assert!((fd - cutoff(0.7).1).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m0 = TransversalManifold::flat();
        let g = trace_geodesic(&m0, 0.9, -0.3).unwrap();
        let beam = build_quasimode(&m0, &g, SpectralParameter::new(0.2, 0.5).unwrap(), BeamOptions::default()).unwrap();
        let p = [0.2, 0.1];
        let e = 1e-6;
        let (_, grad) = beam.eval(p);
        let fx = (beam.eval([p[0] + e, p[1]]).0 - beam.eval([p[0] - e, p[1]]).0) / (2.0 * e);
        let fy = (beam.eval([p[0], p[1] + e]).0 - beam.eval([p[0], p[1] - e]).0) / (2.0 * e);
        assert!((fx - grad[0]).norm() < 1e-5 * grad[0].norm().max(1.0));
        assert!((fy - grad[1]).norm() < 1e-5 * grad[1].norm().max(1.0));
    }

    #[test]
    fn one_beam_serves_every_spectral_parameter() {
        let m0 = TransversalManifold::flat();
        let g = trace_geodesic(&m0, 0.4, 0.2).unwrap();
        let disk = DiskMesh::rings(4).unwrap();
        let base = build_quasimode(&m0, &g, SpectralParameter::new(0.3, 0.0).unwrap(), BeamOptions::default()).unwrap();
        let samples = base.nodal_spectral(&disk, 0.15, &[-0.5, 0.75]);
        for (k, l) in [-0.5, 0.75].into_iter().enumerate() {
            let fresh = build_quasimode(&m0, &g, SpectralParameter::new(0.15, l).unwrap(), BeamOptions::default()).unwrap().nodal(&disk);
            let err = samples[k].iter().zip(&fresh).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "λ = {l}: {err}");
        }
    }
}
