//! Product cylinder [0, L₁] × disk, its mesh, geodesics of the disk and boundary charts.

pub(crate) mod chart;
mod disk;
mod geodesic;
mod mesh;
mod profile;

pub use chart::{BoundaryChart, ChartBase};
pub use disk::{radius, DiskMesh, TriangleLocator};
pub use geodesic::{direction, normal, trace_geodesic, trace_geodesic_with_step, Geodesic, GeodesicGrid};
pub use mesh::{Mesh, NodeKind, Resolution};
pub use profile::{ConformalProfile, C_MIN};

pub(crate) use mesh::hex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default non-tangentiality tolerance.
pub const ANGLE_TOL: f64 = 1e-3;

/// The unit disk with metric c₀(r)(dx² + dy²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalManifold {
    pub profile: ConformalProfile,
    #[serde(default = "default_angle_tol")]
    pub angle_tol: f64,
}

fn default_angle_tol() -> f64 {
    ANGLE_TOL
}

impl Default for TransversalManifold {
    fn default() -> Self {
        Self { profile: ConformalProfile::flat(), angle_tol: ANGLE_TOL }
    }
}

impl TransversalManifold {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn conformal(profile: ConformalProfile) -> Self {
        Self { profile, angle_tol: ANGLE_TOL }
    }

    pub fn is_flat(&self) -> bool {
        self.profile.is_flat()
    }

    pub fn conformal_factor(&self, p: [f64; 2]) -> f64 {
        self.profile.value(radius(p))
    }
}

/// [0, L₁] × M₀ with product metric dx₁² + g₀ and an extension margin m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderGeometry {
    pub length: f64,
    pub margin: f64,
    pub transversal: TransversalManifold,
}

impl Default for CylinderGeometry {
    fn default() -> Self {
        Self { length: 1.0, margin: 0.25, transversal: TransversalManifold::default() }
    }
}

impl CylinderGeometry {
    pub fn new(length: f64, margin: f64, transversal: TransversalManifold) -> Result<Self> {
        let g = Self { length, margin, transversal };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidGeometry(format!("length {} must be positive", self.length)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidGeometry(format!("margin {} must be positive", self.margin)));
        }
        if !(self.transversal.angle_tol > 0.0 && self.transversal.angle_tol < 0.5) {
            return Err(Error::InvalidGeometry("angle_tol must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn build_mesh(&self, resolution: Resolution) -> Result<Mesh> {
        self.validate()?;
        Mesh::build(self, resolution)
    }
}
