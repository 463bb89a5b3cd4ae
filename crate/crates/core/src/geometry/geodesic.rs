//! Boundary-to-boundary unit-speed geodesics of the transversal disk.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{radius, TransversalManifold};

/// Chord family parameter convention: direction d = (cos θ, sin θ), normal n = (−sin θ, cos θ);
/// the flat chord is {p n + τ d}, entered at τ = −√(1−p²) where t = 0.
#[derive(Debug, Clone)]
pub struct Geodesic {
    pub theta: f64,
    pub offset: f64,
    pub length: f64,
    pub entry: [f64; 2],
    pub exit: [f64; 2],
    path: Path,
}

#[derive(Debug, Clone)]
enum Path {
    Chord { dir: [f64; 2] },
    Traced { samples: Vec<State> },
}

#[derive(Debug, Clone, Copy)]
struct State {
    t: f64,
    pos: [f64; 2],
    vel: [f64; 2],
}

pub fn direction(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

pub fn normal(theta: f64) -> [f64; 2] {
    [-theta.sin(), theta.cos()]
}

pub fn trace_geodesic(m0: &TransversalManifold, theta: f64, offset: f64) -> Result<Geodesic> {
    trace_geodesic_with_step(m0, theta, offset, 2e-3)
}

pub fn trace_geodesic_with_step(m0: &TransversalManifold, theta: f64, offset: f64, step: f64) -> Result<Geodesic> {
    let limit = 1.0 - m0.angle_tol;
    if !(offset.abs() < limit) {
        return Err(Error::NonTangentialViolation { offset, limit });
    }
    let d = direction(theta);
    let n = normal(theta);
    let w = (1.0 - offset * offset).sqrt();
    let entry = [offset * n[0] - w * d[0], offset * n[1] - w * d[1]];
    if m0.is_flat() {
        let exit = [offset * n[0] + w * d[0], offset * n[1] + w * d[1]];
        return Ok(Geodesic { theta, offset, length: 2.0 * w, entry, exit, path: Path::Chord { dir: d } });
    }
    let c = m0.profile.value(1.0).sqrt();
    let mut state = State { t: 0.0, pos: entry, vel: [d[0] / c, d[1] / c] };
    let mut samples = vec![state];
    let max_steps = (20.0 / step) as usize;
    for _ in 0..max_steps {
        let next = rk4(m0, state, step);
        if radius(next.pos) >= 1.0 && next.t > 10.0 * step {
            // Bisection on the sub-step length for the exit crossing.
            let (mut lo, mut hi) = (0.0, step);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if radius(rk4(m0, state, mid).pos) >= 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let last = rk4(m0, state, 0.5 * (lo + hi));
            samples.push(last);
            return Ok(Geodesic { theta, offset, length: last.t, entry, exit: last.pos, path: Path::Traced { samples } });
        }
        state = next;
        samples.push(state);
    }
    Err(Error::InvalidGeometry(format!("geodesic ({theta}, {offset}) did not exit the disk")))
}

fn accel(m0: &TransversalManifold, pos: [f64; 2], vel: [f64; 2]) -> [f64; 2] {
    // ẍ = −2(∇w·ẋ)ẋ + |ẋ|²∇w with w = ½ ln c₀.
    let r = radius(pos);
    let (c, dc, _) = m0.profile.eval(r);
    let gw = if r < 1e-12 { [0.0, 0.0] } else { [0.5 * dc / c * pos[0] / r, 0.5 * dc / c * pos[1] / r] };
    let dot = gw[0] * vel[0] + gw[1] * vel[1];
    let speed2 = vel[0] * vel[0] + vel[1] * vel[1];
    [-2.0 * dot * vel[0] + speed2 * gw[0], -2.0 * dot * vel[1] + speed2 * gw[1]]
}

fn rk4(m0: &TransversalManifold, s: State, dt: f64) -> State {
    let f = |p: [f64; 2], v: [f64; 2]| (v, accel(m0, p, v));
    let add = |a: [f64; 2], b: [f64; 2], k: f64| [a[0] + k * b[0], a[1] + k * b[1]];
    let (k1p, k1v) = f(s.pos, s.vel);
    let (k2p, k2v) = f(add(s.pos, k1p, dt / 2.0), add(s.vel, k1v, dt / 2.0));
    let (k3p, k3v) = f(add(s.pos, k2p, dt / 2.0), add(s.vel, k2v, dt / 2.0));
    let (k4p, k4v) = f(add(s.pos, k3p, dt), add(s.vel, k3v, dt));
    let comb = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]| {
        [(a[0] + 2.0 * b[0] + 2.0 * c[0] + d[0]) / 6.0, (a[1] + 2.0 * b[1] + 2.0 * c[1] + d[1]) / 6.0]
    };
    State { t: s.t + dt, pos: add(s.pos, comb(k1p, k2p, k3p, k4p), dt), vel: add(s.vel, comb(k1v, k2v, k3v, k4v), dt) }
}

impl Geodesic {
    pub fn is_chord(&self) -> bool {
        matches!(self.path, Path::Chord { .. })
    }

    /// Position at parameter t; outside [0, L] the curve continues along the end tangent.
    pub fn point(&self, t: f64) -> [f64; 2] {
        match &self.path {
            Path::Chord { dir } => [self.entry[0] + t * dir[0], self.entry[1] + t * dir[1]],
            Path::Traced { samples } => self.interpolate(samples, t).0,
        }
    }

    /// Coordinate velocity; unit length in g₀.
    pub fn velocity(&self, t: f64) -> [f64; 2] {
        match &self.path {
            Path::Chord { dir } => *dir,
            Path::Traced { samples } => self.interpolate(samples, t).1,
        }
    }

    fn interpolate(&self, samples: &[State], t: f64) -> ([f64; 2], [f64; 2]) {
        let first = samples[0];
        let last = *samples.last().unwrap();
        if t <= first.t {
            return ([first.pos[0] + t * first.vel[0], first.pos[1] + t * first.vel[1]], first.vel);
        }
        if t >= last.t {
            let dt = t - last.t;
            return ([last.pos[0] + dt * last.vel[0], last.pos[1] + dt * last.vel[1]], last.vel);
        }
        let k = samples.partition_point(|s| s.t <= t).saturating_sub(1).min(samples.len() - 2);
        let (a, b) = (samples[k], samples[k + 1]);
        let h = b.t - a.t;
        let u = (t - a.t) / h;
        let (h00, h10, h01, h11) = (
            2.0 * u * u * u - 3.0 * u * u + 1.0,
            u * u * u - 2.0 * u * u + u,
            -2.0 * u * u * u + 3.0 * u * u,
            u * u * u - u * u,
        );
        let (d00, d10, d01, d11) = (6.0 * u * u - 6.0 * u, 3.0 * u * u - 4.0 * u + 1.0, -6.0 * u * u + 6.0 * u, 3.0 * u * u - 2.0 * u);
        let mut pos = [0.0; 2];
        let mut vel = [0.0; 2];
        for i in 0..2 {
            pos[i] = h00 * a.pos[i] + h10 * h * a.vel[i] + h01 * b.pos[i] + h11 * h * b.vel[i];
            vel[i] = (d00 * a.pos[i] + d01 * b.pos[i]) / h + d10 * a.vel[i] + d11 * b.vel[i];
        }
        (pos, vel)
    }

    /// max_t | |γ̇|_{g₀} − 1 | over the stored samples (exact zero for chords).
    pub fn unit_speed_defect(&self, m0: &TransversalManifold) -> f64 {
        match &self.path {
            Path::Chord { .. } => 0.0,
            Path::Traced { samples } => samples
                .iter()
                .map(|s| {
                    let c = m0.profile.value(radius(s.pos));
                    ((c * (s.vel[0] * s.vel[0] + s.vel[1] * s.vel[1])).sqrt() - 1.0).abs()
                })
                .fold(0.0, f64::max),
        }
    }

    /// |cos| of the angle between the curve and the boundary normal at entry and exit.
    pub fn incidence_cosines(&self) -> (f64, f64) {
        let unit = |v: [f64; 2]| {
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            [v[0] / n, v[1] / n]
        };
        let v0 = unit(self.velocity(0.0));
        let v1 = unit(self.velocity(self.length));
        ((v0[0] * self.entry[0] + v0[1] * self.entry[1]).abs(), (v1[0] * self.exit[0] + v1[1] * self.exit[1]).abs())
    }

    /// Euclidean distance from p to the curve and the closest parameter, by sampling then Newton refinement.
    pub fn closest(&self, p: [f64; 2]) -> (f64, f64) {
        if let Path::Chord { dir } = self.path {
            let t = (p[0] - self.entry[0]) * dir[0] + (p[1] - self.entry[1]) * dir[1];
            let q = self.point(t);
            return (t, ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
        let n = 200;
        let lo = -1.0;
        let hi = self.length + 1.0;
        let dist2 = |t: f64| {
            let q = self.point(t);
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        };
        let mut best_t = lo;
        let mut best = f64::MAX;
        for i in 0..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            let d = dist2(t);
            if d < best {
                best = d;
                best_t = t;
            }
        }
        let mut t = best_t;
        for _ in 0..20 {
            let q = self.point(t);
            let v = self.velocity(t);
            let g = (q[0] - p[0]) * v[0] + (q[1] - p[1]) * v[1];
            let vv = v[0] * v[0] + v[1] * v[1];
            let step = g / vv;
            t -= step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        (t, dist2(t).sqrt())
    }
}

/// Uniform chord family: n_θ angles on [0, π) times n_p offsets centred in (−1, 1).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeodesicGrid {
    pub n_theta: usize,
    pub n_p: usize,
}

impl GeodesicGrid {
    pub fn new(n_theta: usize, n_p: usize) -> Self {
        Self { n_theta, n_p }
    }

    pub fn theta(&self, i: usize) -> f64 {
        PI * i as f64 / self.n_theta as f64
    }

    pub fn offset(&self, j: usize) -> f64 {
        -1.0 + (2 * j + 1) as f64 / self.n_p as f64
    }

    pub fn offset_step(&self) -> f64 {
        2.0 / self.n_p as f64
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Geodesics in row-major (angle, offset) order.
    pub fn trace(&self, m0: &TransversalManifold) -> Result<Vec<Geodesic>> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n_theta {
            for j in 0..self.n_p {
                out.push(trace_geodesic(m0, self.theta(i), self.offset(j))?);
            }
        }
        Ok(out)
    }

    /// Largest distance from a point to its nearest chord line.
    pub fn coverage_radius(&self, points: &[[f64; 2]]) -> f64 {
        points
            .iter()
            .map(|p| {
                (0..self.n_theta)
                    .map(|i| {
                        let n = normal(self.theta(i));
                        let s = p[0] * n[0] + p[1] * n[1];
                        (0..self.n_p).map(|j| (s - self.offset(j)).abs()).fold(f64::MAX, f64::min)
                    })
                    .fold(f64::MAX, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConformalProfile;

    #[test]
    fn chord_lengths() {
        let m0 = TransversalManifold::flat();
        assert!((trace_geodesic(&m0, 0.3, 0.0).unwrap().length - 2.0).abs() < 1e-15);
        assert!((trace_geodesic(&m0, 1.1, 0.5).unwrap().length - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn grazing_rejected() {
        let m0 = TransversalManifold::flat();
        assert!(matches!(trace_geodesic(&m0, 0.0, 0.9995), Err(Error::NonTangentialViolation { .. })));
    }

    #[test]
    fn conformal_geodesic_matches_refined_oracle() {
        let p = ConformalProfile::from_fn(21, |r| 1.0 + 0.05 * (1.0 - r * r)).unwrap();
        let m0 = TransversalManifold::conformal(p);
        let coarse = trace_geodesic_with_step(&m0, 0.4, 0.3, 2e-3).unwrap();
        let fine = trace_geodesic_with_step(&m0, 0.4, 0.3, 2e-4).unwrap();
        let e = ((coarse.exit[0] - fine.exit[0]).powi(2) + (coarse.exit[1] - fine.exit[1]).powi(2)).sqrt();
        assert!(e < 1e-6, "endpoint gap {e}");
        assert!(coarse.unit_speed_defect(&m0) < 1e-6);
        assert!((radius(coarse.exit) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_offsets_respect_tolerance() {
        let g = GeodesicGrid::new(60, 60);
        for j in 0..60 {
            assert!(g.offset(j).abs() <= 1.0 - ANGLE_TOL_TEST);
        }
    }

    const ANGLE_TOL_TEST: f64 = 1e-3;
}
