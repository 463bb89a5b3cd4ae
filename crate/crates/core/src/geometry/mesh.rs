//! Cylinder mesh: uniform x₁ grid times the ring triangulation of the disk, with prism elements.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{CylinderGeometry, DiskMesh};
use crate::sparse::Csr;

/// Requested discretization: rings of the disk triangulation and cells along x₁.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Resolution {
    pub disk_rings: usize,
    pub x1_cells: usize,
}

impl Resolution {
    pub fn new(disk_rings: usize, x1_cells: usize) -> Self {
        Self { disk_rings, x1_cells }
    }

    /// Balanced resolution whose node count does not exceed `target`.
    pub fn from_node_target(target: usize, length: f64) -> Result<Self> {
        let mut best = None;
        for rings in 2..200usize {
            let cells = ((length * rings as f64).round() as usize).max(4);
            let count = (3 * rings * (rings + 1) + 1) * (cells + 1);
            if count > target {
                break;
            }
            best = Some(Self::new(rings, cells));
        }
        best.ok_or_else(|| Error::DegenerateResolution(format!("node target {target} too small")))
    }

    pub fn node_count(&self) -> usize {
        (3 * self.disk_rings * (self.disk_rings + 1) + 1) * (self.x1_cells + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior(usize),
    Boundary(usize),
}

/// Node index is `i1 * disk.len() + j` for x₁ level i1 and disk node j.
#[derive(Debug, Clone)]
pub struct Mesh {
    geometry: CylinderGeometry,
    disk: DiskMesh,
    x1: Vec<f64>,
    kind: Vec<NodeKind>,
    boundary: Vec<usize>,
    interior: Vec<usize>,
    disk_mass: Vec<f64>,
    x1_mass: Vec<f64>,
    mass: Vec<f64>,
    boundary_mass: Vec<f64>,
    stiffness: Csr,
    hash: String,
}

impl Mesh {
    pub fn build(geometry: &CylinderGeometry, resolution: Resolution) -> Result<Self> {
        if resolution.x1_cells < 4 || resolution.disk_rings < 2 {
            return Err(Error::DegenerateResolution(format!(
                "need at least 4 elements per axis, got {} x1 cells and {} rings",
                resolution.x1_cells, resolution.disk_rings
            )));
        }
        let disk = DiskMesh::rings(resolution.disk_rings)?;
        let n1 = resolution.x1_cells;
        let step = geometry.length / n1 as f64;
        let x1: Vec<f64> = (0..=n1).map(|i| if i == n1 { geometry.length } else { i as f64 * step }).collect();
        let nd = disk.len();
        let n = nd * (n1 + 1);

        let mut kind = Vec::with_capacity(n);
        let (mut boundary, mut interior) = (Vec::new(), Vec::new());
        for i1 in 0..=n1 {
            for j in 0..nd {
                let node = i1 * nd + j;
                if i1 == 0 || i1 == n1 || disk.is_boundary(j) {
                    kind.push(NodeKind::Boundary(boundary.len()));
                    boundary.push(node);
                } else {
                    kind.push(NodeKind::Interior(interior.len()));
                    interior.push(node);
                }
            }
        }

        let profile = &geometry.transversal.profile;
        let disk_mass = disk.lumped_mass(profile);
        let x1_mass: Vec<f64> = (0..=n1).map(|i| if i == 0 || i == n1 { 0.5 * step } else { step }).collect();
        let mass: Vec<f64> = (0..n).map(|v| x1_mass[v / nd] * disk_mass[v % nd]).collect();

        // Lateral surface weight: x₁ lumping times arc length; caps: lumped disk area.
        let arc = disk.boundary_arc_weights(profile);
        let boundary_mass: Vec<f64> = boundary
            .iter()
            .map(|&v| {
                let (i1, j) = (v / nd, v % nd);
                let mut w = 0.0;
                if disk.is_boundary(j) {
                    w += x1_mass[i1] * arc[j - disk.boundary()[0]];
                }
                if i1 == 0 || i1 == n1 {
                    w += disk_mass[j];
                }
                w
            })
            .collect();

        // K = K₁ ⊗ D₀ + D₁ ⊗ K₀, exact for the product metric dx₁² + c₀ g_e.
        let k0 = disk.stiffness();
        let mut trip = Vec::with_capacity(n * 10);
        for i1 in 0..=n1 {
            for j in 0..nd {
                let row = i1 * nd + j;
                let mut diag1 = 0.0;
                if i1 > 0 {
                    trip.push((row, row - nd, -disk_mass[j] / step));
                    diag1 += 1.0 / step;
                }
                if i1 < n1 {
                    trip.push((row, row + nd, -disk_mass[j] / step));
                    diag1 += 1.0 / step;
                }
                trip.push((row, row, diag1 * disk_mass[j]));
                for (c, v) in k0.row(j) {
                    trip.push((row, i1 * nd + c, x1_mass[i1] * v));
                }
            }
        }
        let stiffness = Csr::from_triplets(n, n, trip);

        let mut hasher = Sha256::new();
        hasher.update(b"cylinder-mesh-v1");
        hasher.update(geometry.length.to_le_bytes());
        hasher.update((resolution.disk_rings as u64).to_le_bytes());
        hasher.update((n1 as u64).to_le_bytes());
        for s in profile.samples() {
            hasher.update(s.to_le_bytes());
        }
        for p in disk.nodes() {
            hasher.update(p[0].to_le_bytes());
            hasher.update(p[1].to_le_bytes());
        }
        let hash = hex(&hasher.finalize());

        Ok(Self {
            geometry: geometry.clone(),
            disk,
            x1,
            kind,
            boundary,
            interior,
            disk_mass,
            x1_mass,
            mass,
            boundary_mass,
            stiffness,
            hash,
        })
    }

    pub fn geometry(&self) -> &CylinderGeometry {
        &self.geometry
    }

    pub fn disk(&self) -> &DiskMesh {
        &self.disk
    }

    pub fn x1_levels(&self) -> &[f64] {
        &self.x1
    }

    pub fn x1_step(&self) -> f64 {
        self.x1[1] - self.x1[0]
    }

    pub fn len(&self) -> usize {
        self.kind.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kind.is_empty()
    }

    pub fn node(&self, v: usize) -> [f64; 3] {
        let nd = self.disk.len();
        let p = self.disk.nodes()[v % nd];
        [self.x1[v / nd], p[0], p[1]]
    }

    pub fn x1_of(&self, v: usize) -> f64 {
        self.x1[v / self.disk.len()]
    }

    pub fn disk_index(&self, v: usize) -> usize {
        v % self.disk.len()
    }

    pub fn level_index(&self, v: usize) -> usize {
        v / self.disk.len()
    }

    pub fn kind(&self, v: usize) -> NodeKind {
        self.kind[v]
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Lumped volume weights realizing dV_g.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn disk_mass(&self) -> &[f64] {
        &self.disk_mass
    }

    pub fn x1_mass(&self) -> &[f64] {
        &self.x1_mass
    }

    /// Lumped surface weights on boundary nodes, in boundary order.
    pub fn boundary_mass(&self) -> &[f64] {
        &self.boundary_mass
    }

    pub fn stiffness(&self) -> &Csr {
        &self.stiffness
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn volume(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Prism elements (triangle × x₁ cell) as six node indices, bottom triangle then top.
    pub fn prisms(&self) -> Vec<[usize; 6]> {
        let nd = self.disk.len();
        let mut out = Vec::with_capacity(self.disk.triangles().len() * (self.x1.len() - 1));
        for i1 in 0..self.x1.len() - 1 {
            for t in self.disk.triangles() {
                let lo = i1 * nd;
                let hi = lo + nd;
                out.push([lo + t[0], lo + t[1], lo + t[2], hi + t[0], hi + t[1], hi + t[2]]);
            }
        }
        out
    }

    pub fn prism_volumes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i1 in 0..self.x1.len() - 1 {
            let dx = self.x1[i1 + 1] - self.x1[i1];
            for t in 0..self.disk.triangles().len() {
                out.push(dx * self.disk.triangle_area(t));
            }
        }
        out
    }

    /// Boundary nodes and their immediate neighbours; fields vanishing there are compactly supported.
    pub fn boundary_layer(&self) -> Vec<bool> {
        let mut layer = vec![false; self.len()];
        for &b in &self.boundary {
            layer[b] = true;
            for (c, _) in self.stiffness.row(b) {
                layer[c] = true;
            }
        }
        layer
    }

    /// Node/element CSV pair.
    pub fn to_csv(&self) -> (String, String) {
        let mut nodes = String::from("index,x1,x2,x3,boundary\n");
        for v in 0..self.len() {
            let p = self.node(v);
            let b = matches!(self.kind[v], NodeKind::Boundary(_)) as u8;
            nodes.push_str(&format!("{v},{:.17e},{:.17e},{:.17e},{b}\n", p[0], p[1], p[2]));
        }
        let mut elems = String::from("index,n0,n1,n2,n3,n4,n5,volume\n");
        for (e, (p, vol)) in self.prisms().iter().zip(self.prism_volumes()).enumerate() {
            elems.push_str(&format!("{e},{},{},{},{},{},{},{:.17e}\n", p[0], p[1], p[2], p[3], p[4], p[5], vol));
        }
        (nodes, elems)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_and_counts() {
        let g = CylinderGeometry::default();
        let m = Mesh::build(&g, Resolution::new(3, 4)).unwrap();
        assert_eq!(m.len(), 37 * 5);
        assert_eq!(m.boundary().len() + m.interior().len(), m.len());
        assert_eq!(m.boundary().len(), 2 * 37 + 3 * 18);
    }

    #[test]
    fn stiffness_annihilates_constants_and_x1() {
        let g = CylinderGeometry::default();
        let m = Mesh::build(&g, Resolution::new(3, 5)).unwrap();
        let k = m.stiffness();
        let ones = vec![1.0; m.len()];
        assert!(k.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
        let x1: Vec<f64> = (0..m.len()).map(|v| m.x1_of(v)).collect();
        let r = k.matvec(&x1);
        for &v in m.interior() {
            assert!(r[v].abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_resolution() {
        let g = CylinderGeometry::default();
        assert!(matches!(Mesh::build(&g, Resolution::new(3, 2)), Err(Error::DegenerateResolution(_))));
    }
}
