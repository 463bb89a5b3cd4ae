//! Boundary normal coordinates (x′, x_n) at lateral and end-cap boundary points.

use crate::error::{Error, Result};
use crate::geometry::{radius, CylinderGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartBase {
    /// Point (x₁, cos a, sin a) on the lateral surface.
    Lateral { x1: f64, angle: f64 },
    /// Point on the bottom (x₁ = 0) or top (x₁ = L₁) cap.
    Cap { top: bool, point: [f64; 2] },
}

/// Coordinates: lateral y = (x₁ − x₁⁰, √c₀(1)·(a − a₀), x_n); cap y = (√c₀(p₀)(p − p₀), x_n).
#[derive(Debug, Clone)]
pub struct BoundaryChart {
    pub base: ChartBase,
    pub radius: f64,
    geometry: CylinderGeometry,
}

pub const DEFAULT_CHART_RADIUS: f64 = 0.2;

impl BoundaryChart {
    pub fn new(geometry: &CylinderGeometry, base: ChartBase, chart_radius: f64) -> Result<Self> {
        match base {
            ChartBase::Lateral { x1, .. } => {
                if x1 - chart_radius <= 0.0 || x1 + chart_radius >= geometry.length {
                    return Err(Error::ChartUnavailable {
                        x1,
                        reason: format!("within chart radius {chart_radius} of the corner set"),
                    });
                }
            }
            ChartBase::Cap { top, point } => {
                if radius(point) + chart_radius >= 1.0 {
                    let x1 = if top { geometry.length } else { 0.0 };
                    return Err(Error::ChartUnavailable { x1, reason: "cap point too close to the rim".into() });
                }
            }
        }
        Ok(Self { base, radius: chart_radius, geometry: geometry.clone() })
    }

    pub fn lateral(geometry: &CylinderGeometry, x1: f64, angle: f64) -> Result<Self> {
        Self::new(geometry, ChartBase::Lateral { x1, angle }, DEFAULT_CHART_RADIUS)
    }

    fn c0(&self, r: f64) -> f64 {
        self.geometry.transversal.profile.value(r)
    }

    /// g₀-distance from radius r to the unit circle along the radial line.
    fn depth_of_radius(&self, r: f64) -> f64 {
        if self.geometry.transversal.is_flat() {
            return 1.0 - r;
        }
        simpson(|s| self.c0(s).sqrt(), r, 1.0, 64)
    }

    fn radius_of_depth(&self, depth: f64) -> f64 {
        if self.geometry.transversal.is_flat() {
            return 1.0 - depth;
        }
        let mut r = 1.0 - depth / self.c0(1.0).sqrt();
        for _ in 0..40 {
            let f = self.depth_of_radius(r) - depth;
            r += f / self.c0(r).sqrt();
            if f.abs() < 1e-15 {
                break;
            }
        }
        r
    }

    /// Chart coordinates (y₁, y₂, x_n) to the ambient point (x₁, x, y).
    pub fn to_ambient(&self, y: [f64; 3]) -> [f64; 3] {
        match self.base {
            ChartBase::Lateral { x1, angle } => {
                let a = angle + y[1] / self.c0(1.0).sqrt();
                let r = self.radius_of_depth(y[2]);
                [x1 + y[0], r * a.cos(), r * a.sin()]
            }
            ChartBase::Cap { top, point } => {
                let s = self.c0(radius(point)).sqrt();
                let x1 = if top { self.geometry.length - y[2] } else { y[2] };
                [x1, point[0] + y[0] / s, point[1] + y[1] / s]
            }
        }
    }

    /// Ambient boundary point to tangential chart coordinates (x_n = 0).
    pub fn tangential_coords(&self, p: [f64; 3]) -> [f64; 2] {
        match self.base {
            ChartBase::Lateral { x1, angle } => {
                let a = p[2].atan2(p[1]);
                let mut da = a - angle;
                while da > std::f64::consts::PI {
                    da -= 2.0 * std::f64::consts::PI;
                }
                while da < -std::f64::consts::PI {
                    da += 2.0 * std::f64::consts::PI;
                }
                [p[0] - x1, self.c0(1.0).sqrt() * da]
            }
            ChartBase::Cap { point, .. } => {
                let s = self.c0(radius(point)).sqrt();
                [s * (p[1] - point[0]), s * (p[2] - point[1])]
            }
        }
    }

    /// True when the ambient boundary point lies on the boundary face carrying this chart.
    pub fn on_face(&self, p: [f64; 3]) -> bool {
        match self.base {
            ChartBase::Lateral { .. } => (radius([p[1], p[2]]) - 1.0).abs() < 1e-9,
            ChartBase::Cap { top, .. } => {
                let target = if top { self.geometry.length } else { 0.0 };
                (p[0] - target).abs() < 1e-12
            }
        }
    }

    /// Metric coefficients g_ij in chart coordinates by central differences of the chart map.
    pub fn metric(&self, y: [f64; 3]) -> [[f64; 3]; 3] {
        let e = 1e-5;
        let mut jac = [[0.0; 3]; 3];
        for (k, col) in jac.iter_mut().enumerate() {
            let mut yp = y;
            let mut ym = y;
            yp[k] += e;
            ym[k] -= e;
            let (a, b) = (self.to_ambient(yp), self.to_ambient(ym));
            for i in 0..3 {
                col[i] = (a[i] - b[i]) / (2.0 * e);
            }
        }
        let p = self.to_ambient(y);
        let c = self.c0(radius([p[1], p[2]]));
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] = jac[i][0] * jac[j][0] + c * (jac[i][1] * jac[j][1] + jac[i][2] * jac[j][2]);
            }
        }
        g
    }

    /// Inverse of the tangential 2×2 block at x_n = 0, minus the identity, in max norm.
    pub fn tangential_defect(&self, tangential: [f64; 2]) -> f64 {
        let g = self.metric([tangential[0], tangential[1], 0.0]);
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let inv = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((inv[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        d
    }
}

pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConformalProfile, TransversalManifold};

    #[test]
    fn flat_depth_is_one_minus_radius() {
        let g = CylinderGeometry::default();
        let c = BoundaryChart::lateral(&g, 0.5, 0.0).unwrap();
        let p = c.to_ambient([0.0, 0.0, 0.1]);
        assert!((radius([p[1], p[2]]) - 0.9).abs() < 1e-14);
    }

    #[test]
    fn normal_coefficient_is_one_for_conformal_profile() {
        let prof = ConformalProfile::from_fn(21, |r| 1.0 + 0.05 * (1.0 - r * r)).unwrap();
        let g = CylinderGeometry::new(1.0, 0.25, TransversalManifold::conformal(prof)).unwrap();
        let c = BoundaryChart::lateral(&g, 0.5, 0.7).unwrap();
        let m = c.metric([0.03, -0.05, 0.08]);
        assert!((m[2][2] - 1.0).abs() < 1e-8, "g_nn = {}", m[2][2]);
        assert!(m[0][2].abs() < 1e-8 && m[1][2].abs() < 1e-8);
    }

    #[test]
    fn corner_region_rejected() {
        let g = CylinderGeometry::default();
        assert!(matches!(BoundaryChart::lateral(&g, 0.1, 0.0), Err(Error::ChartUnavailable { .. })));
    }
}
