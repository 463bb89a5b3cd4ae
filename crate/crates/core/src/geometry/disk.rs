//! Ring triangulation of the unit disk and its P1 finite-element matrices.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::ConformalProfile;
use crate::sparse::Csr;

/// Unit-disk triangulation built from concentric rings: ring k carries 6k equally spaced nodes at radius k/rings.
#[derive(Debug, Clone)]
pub struct DiskMesh {
    rings: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<usize>,
}

impl DiskMesh {
    pub fn rings(rings: usize) -> Result<Self> {
        if rings < 2 {
            return Err(Error::DegenerateResolution(format!("disk needs at least 2 rings, got {rings}")));
        }
        let mut nodes = vec![[0.0, 0.0]];
        let mut ring_start = vec![0usize];
        for k in 1..=rings {
            ring_start.push(nodes.len());
            let r = k as f64 / rings as f64;
            let count = 6 * k;
            for j in 0..count {
                let a = 2.0 * PI * j as f64 / count as f64;
                // The outermost ring sits exactly on the unit circle.
                let (s, c) = a.sin_cos();
                nodes.push([r * c, r * s]);
            }
        }
        let mut triangles = Vec::new();
        for j in 0..6 {
            triangles.push([0, 1 + j, 1 + (j + 1) % 6]);
        }
        for k in 2..=rings {
            let (inner, outer) = (ring_start[k - 1], ring_start[k]);
            let (n_in, n_out) = (6 * (k - 1), 6 * k);
            let (mut i, mut o) = (0usize, 0usize);
            while i < n_in || o < n_out {
                let next_in = 2.0 * PI * (i + 1) as f64 / n_in as f64;
                let next_out = 2.0 * PI * (o + 1) as f64 / n_out as f64;
                let a = inner + i % n_in;
                let b = outer + o % n_out;
                if o < n_out && (i >= n_in || next_out <= next_in + 1e-12) {
                    triangles.push([a, b, outer + (o + 1) % n_out]);
                    o += 1;
                } else {
                    triangles.push([a, b, inner + (i + 1) % n_in]);
                    i += 1;
                }
            }
        }
        for t in triangles.iter_mut() {
            if signed_area(&nodes, t) < 0.0 {
                t.swap(1, 2);
            }
        }
        let boundary = (ring_start[rings]..nodes.len()).collect();
        Ok(Self { rings, nodes, triangles, boundary })
    }

    pub fn ring_count(&self) -> usize {
        self.rings
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Boundary nodes in increasing angle, starting at angle 0.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        node >= self.boundary[0]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.nodes, &self.triangles[t])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn max_edge(&self) -> f64 {
        let mut m: f64 = 0.0;
        for t in &self.triangles {
            for e in 0..3 {
                let (p, q) = (self.nodes[t[e]], self.nodes[t[(e + 1) % 3]]);
                m = m.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        m
    }

    /// Mean edge length over triangle sides (interior edges counted twice).
    pub fn mean_edge(&self) -> f64 {
        let mut sum = 0.0;
        for t in &self.triangles {
            for e in 0..3 {
                let (p, q) = (self.nodes[t[e]], self.nodes[t[(e + 1) % 3]]);
                sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            }
        }
        sum / (3 * self.triangles.len()) as f64
    }

    /// Gradients of the three barycentric hat functions on triangle t.
    pub fn hat_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let two_area = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
        [
            [(q[1] - r[1]) / two_area, (r[0] - q[0]) / two_area],
            [(r[1] - p[1]) / two_area, (p[0] - r[0]) / two_area],
            [(p[1] - q[1]) / two_area, (q[0] - p[0]) / two_area],
        ]
    }

    /// Euclidean P1 stiffness; the two-dimensional Dirichlet energy is conformally invariant.
    pub fn stiffness(&self) -> Csr {
        let mut trip = Vec::with_capacity(9 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let g = self.hat_gradients(t);
            let area = self.triangle_area(t);
            for a in 0..3 {
                for b in 0..3 {
                    trip.push((tri[a], tri[b], area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
                }
            }
        }
        Csr::from_triplets(self.len(), self.len(), trip)
    }

    /// Row-sum lumped mass of c₀ dx, with c₀ taken at the vertex.
    pub fn lumped_mass(&self, profile: &ConformalProfile) -> Vec<f64> {
        let mut m = vec![0.0; self.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let third = self.triangle_area(t) / 3.0;
            for &v in tri {
                m[v] += third;
            }
        }
        for (v, w) in m.iter_mut().enumerate() {
            *w *= profile.value(radius(self.nodes[v]));
        }
        m
    }

    /// Consistent P1 mass of c₀ dx with c₀ frozen at the centroid.
    pub fn consistent_mass(&self, profile: &ConformalProfile) -> Csr {
        let mut trip = Vec::with_capacity(9 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let c = self.centroid(t);
            let w = self.triangle_area(t) * profile.value(radius(c)) / 12.0;
            for a in 0..3 {
                for b in 0..3 {
                    trip.push((tri[a], tri[b], if a == b { 2.0 * w } else { w }));
                }
            }
        }
        Csr::from_triplets(self.len(), self.len(), trip)
    }

    /// Lumped arc length of the boundary polygon per boundary node, scaled to the g₀ length element.
    pub fn boundary_arc_weights(&self, profile: &ConformalProfile) -> Vec<f64> {
        let n = self.boundary.len();
        let scale = profile.value(1.0).sqrt();
        (0..n)
            .map(|i| {
                let p = self.nodes[self.boundary[i]];
                let prev = self.nodes[self.boundary[(i + n - 1) % n]];
                let next = self.nodes[self.boundary[(i + 1) % n]];
                0.5 * scale * (dist(p, prev) + dist(p, next))
            })
            .collect()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }
}

pub fn radius(p: [f64; 2]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn signed_area(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (p, q, r) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

/// Uniform bucket grid for locating the triangle containing a point.
#[derive(Debug, Clone)]
pub struct TriangleLocator {
    cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl TriangleLocator {
    pub fn new(mesh: &DiskMesh) -> Self {
        let cells = ((mesh.triangles().len() as f64).sqrt().ceil() as usize).max(4);
        let mut buckets = vec![Vec::new(); cells * cells];
        let to_cell = |x: f64| (((x + 1.0) / 2.0 * cells as f64).floor().max(0.0) as usize).min(cells - 1);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let xs = tri.map(|v| mesh.nodes()[v][0]);
            let ys = tri.map(|v| mesh.nodes()[v][1]);
            let (x0, x1) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
            let (y0, y1) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
            for cx in to_cell(x0)..=to_cell(x1) {
                for cy in to_cell(y0)..=to_cell(y1) {
                    buckets[cy * cells + cx].push(t);
                }
            }
        }
        Self { cells, buckets }
    }

    /// Triangle index and barycentric coordinates; points slightly outside the polygon snap to the nearest candidate.
    pub fn locate(&self, mesh: &DiskMesh, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let to_cell = |x: f64| (((x + 1.0) / 2.0 * self.cells as f64).floor().max(0.0) as usize).min(self.cells - 1);
        let bucket = &self.buckets[to_cell(p[1]) * self.cells + to_cell(p[0])];
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in bucket {
            let bc = barycentric(mesh, t, p);
            let worst = bc.iter().cloned().fold(f64::MAX, f64::min);
            if worst >= -1e-12 {
                return Some((t, bc));
            }
            if best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, bc, worst));
            }
        }
        best.filter(|b| b.2 > -0.05).map(|(t, bc, _)| {
            let clipped = bc.map(|v| v.max(0.0));
            let s: f64 = clipped.iter().sum();
            (t, clipped.map(|v| v / s))
        })
    }

    /// P1 interpolation of nodal values; zero outside the mesh.
    pub fn interpolate<T>(&self, mesh: &DiskMesh, values: &[T], p: [f64; 2]) -> T
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        match self.locate(mesh, p) {
            Some((t, bc)) => {
                let tri = mesh.triangles()[t];
                values[tri[0]] * bc[0] + values[tri[1]] * bc[1] + values[tri[2]] * bc[2]
            }
            None => T::default(),
        }
    }
}

fn barycentric(mesh: &DiskMesh, t: usize, p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = mesh.triangles()[t];
    let (pa, pb, pc) = (mesh.nodes()[a], mesh.nodes()[b], mesh.nodes()[c]);
    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    let l1 = ((p[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (p[1] - pa[1])) / det;
    let l2 = ((pb[0] - pa[0]) * (p[1] - pa[1]) - (p[0] - pa[0]) * (pb[1] - pa[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_counts() {
        let d = DiskMesh::rings(4).unwrap();
        assert_eq!(d.len(), 1 + 3 * 4 * 5);
        assert_eq!(d.boundary().len(), 24);
        assert_eq!(d.triangles().len(), 6 * 16);
        assert!((0..d.triangles().len()).all(|t| d.triangle_area(t) > 0.0));
    }

    #[test]
    fn boundary_nodes_on_circle() {
        let d = DiskMesh::rings(5).unwrap();
        for &b in d.boundary() {
            assert!((radius(d.nodes()[b]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let d = DiskMesh::rings(3).unwrap();
        let k = d.stiffness();
        assert!(k.matvec(&vec![1.0; d.len()]).iter().all(|v| v.abs() < 1e-12));
        assert!(k.is_symmetric(1e-13));
    }

    #[test]
    fn locator_reproduces_linear_field() {
        let d = DiskMesh::rings(6).unwrap();
        let loc = TriangleLocator::new(&d);
        let f: Vec<f64> = d.nodes().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        for p in [[0.1, 0.2], [-0.7, 0.3], [0.0, -0.95], [0.33, -0.41]] {
            let v: f64 = loc.interpolate(&d, &f, p);
            assert!((v - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-12);
        }
    }
}
