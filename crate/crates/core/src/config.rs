//! Plain-text (TOML) configuration. Every field has a default and the resolved
//! configuration is echoed into each report.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carleman::{GreenOptions, HGrid};
use crate::error::{Error, Result};
use crate::forward::PotentialSpec;
use crate::geometry::{hex, ConformalProfile, CylinderGeometry, GeodesicGrid, Mesh, Resolution, TransversalManifold, ANGLE_TOL};
use crate::quasimodes::{BeamOptions, LAMBDA_MAX};
use crate::raytransform::MIN_GRID;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub length: f64,
    pub margin: f64,
    /// Samples of the conformal factor c₀(r) on a uniform grid of [0, 1]; empty means flat.
    pub conformal_profile: Vec<f64>,
    pub angle_tol: f64,
    pub disk_rings: usize,
    pub x1_cells: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { length: 1.0, margin: 0.25, conformal_profile: Vec::new(), angle_tol: ANGLE_TOL, disk_rings: 6, x1_cells: 10 }
    }
}

impl GeometryConfig {
    pub fn geometry(&self) -> Result<CylinderGeometry> {
        let mut m0 = if self.conformal_profile.is_empty() {
            TransversalManifold::flat()
        } else {
            TransversalManifold::conformal(ConformalProfile::from_samples(self.conformal_profile.clone())?)
        };
        m0.angle_tol = self.angle_tol;
        CylinderGeometry::new(self.length, self.margin, m0)
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.disk_rings, self.x1_cells)
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        self.geometry()?.build_mesh(self.resolution())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    PerLambda,
    Taylor,
}

impl std::str::FromStr for Route {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-lambda" => Ok(Route::PerLambda),
            "taylor" => Ok(Route::Taylor),
            other => Err(Error::Config(format!("unknown route '{other}' (expected per-lambda or taylor)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub alpha: f64,
    /// Width of each Gaussian factor of η in chart units.
    pub eta_sigma: f64,
    pub chart_radius: f64,
    pub lambda_start: f64,
    pub lambda_ratio: f64,
    pub lambda_count: usize,
    /// Minimum boundary nodes per probe wavelength 2πλ.
    pub nodes_per_wavelength: f64,
    /// Probe points on the lateral surface as (x₁, angle) pairs.
    pub lateral_points: Vec<[f64; 2]>,
    /// Radius of the ring of cap probes (plus the cap centre).
    pub cap_ring_radius: f64,
    pub cap_ring_count: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            eta_sigma: 0.08,
            chart_radius: 0.2,
            lambda_start: 0.2,
            lambda_ratio: 0.7,
            lambda_count: 8,
            nodes_per_wavelength: 6.0,
            lateral_points: vec![[0.3, 0.0], [0.5, 0.0], [0.7, 0.0], [0.5, 2.0], [0.5, 4.0]],
            cap_ring_radius: 0.5,
            cap_ring_count: 6,
        }
    }
}

impl ProbeConfig {
    pub fn lambdas(&self) -> Vec<f64> {
        (0..self.lambda_count).map(|k| self.lambda_start * self.lambda_ratio.powi(k as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    /// Ground-truth potential for `forward` runs and oracle comparisons.
    pub potential: PotentialSpec,
    pub h_grid: Vec<f64>,
    /// h values used for data recovery and the h → 0 extrapolation.
    pub recovery_h: Vec<f64>,
    pub lambda_count: usize,
    pub lambda_max: f64,
    pub n_theta: usize,
    pub n_p: usize,
    pub beam: BeamOptions,
    /// Ring count of the disk mesh carrying the reconstructed slices.
    pub slice_rings: usize,
    pub route: Route,
    pub taylor_order: usize,
    pub probe: ProbeConfig,
    /// Prior knowledge that q vanishes near ∂M; the extension is then exactly zero.
    pub interior_supported: bool,
    pub kernel_tol: f64,
    pub gap_factor: f64,
    pub margin_threshold: f64,
    /// Relative misfit of the linear h-fit above which recovered data are rejected.
    pub recovery_tolerance: f64,
    pub seed: u64,
    /// Worker threads; 0 means all logical cores.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            potential: PotentialSpec::acceptance_bump(),
            h_grid: HGrid::default().values,
            recovery_h: vec![0.3, 0.2, 0.15],
            lambda_count: 17,
            lambda_max: 1.0,
            n_theta: 60,
            n_p: 60,
            beam: BeamOptions::default(),
            slice_rings: 12,
            route: Route::PerLambda,
            taylor_order: 4,
            probe: ProbeConfig::default(),
            interior_supported: false,
            kernel_tol: 1e-8,
            gap_factor: 10.0,
            margin_threshold: crate::traces::MARGIN_THRESHOLD,
            recovery_tolerance: 0.5,
            seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Resolved configuration with all defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.geometry()?;
        HGrid { values: self.h_grid.clone() }.validate()?;
        let grid = HGrid { values: self.h_grid.clone() };
        for &h in &self.recovery_h {
            grid.contains(h)?;
        }
        if self.recovery_h.is_empty() {
            return Err(Error::Config("recovery_h is empty".into()));
        }
        if self.lambda_count < 3 || self.lambda_count % 2 == 0 {
            return Err(Error::Config(format!("lambda_count = {} must be odd and at least 3", self.lambda_count)));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max <= LAMBDA_MAX) {
            return Err(Error::Config(format!("lambda_max = {} outside (0, {LAMBDA_MAX}]", self.lambda_max)));
        }
        if self.n_theta < MIN_GRID || self.n_p < MIN_GRID {
            return Err(Error::Config(format!("chord grid {}x{} is below the {MIN_GRID}x{MIN_GRID} the inversions need", self.n_theta, self.n_p)));
        }
        if self.slice_rings < 2 {
            return Err(Error::Config("slice_rings must be at least 2".into()));
        }
        if !(self.probe.alpha >= 1.0 / 3.0 - 1e-12 && self.probe.alpha <= 0.5) {
            return Err(Error::Config(format!("probe alpha = {} outside [1/3, 1/2]", self.probe.alpha)));
        }
        if !(self.probe.lambda_ratio > 0.0 && self.probe.lambda_ratio < 1.0) || self.probe.lambda_count == 0 {
            return Err(Error::Config("probe λ sequence must be geometric with ratio in (0, 1)".into()));
        }
        Ok(())
    }

    /// Symmetric uniform λ-grid.
    pub fn lambdas(&self) -> Vec<f64> {
        let half = (self.lambda_count / 2) as i64;
        (-half..=half).map(|k| self.lambda_max * k as f64 / half as f64).collect()
    }

    pub fn geodesic_grid(&self) -> GeodesicGrid {
        GeodesicGrid::new(self.n_theta, self.n_p)
    }

    pub fn green_options(&self) -> GreenOptions {
        GreenOptions { kernel_tol: self.kernel_tol, gap_factor: self.gap_factor, zero_projection: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.lambdas().len(), 17);
        assert_eq!(cfg.lambdas()[8], 0.0);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml_str("n_theta = 64\n[geometry]\ndisk_rings = 4\n").unwrap();
        assert_eq!(cfg.n_theta, 64);
        assert_eq!(cfg.geometry.disk_rings, 4);
        assert_eq!(cfg.geometry.x1_cells, 10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_toml_str("h_grid = [0.3, 0.01]").is_err());
        assert!(RunConfig::from_toml_str("recovery_h = [0.6]").is_err());
        assert!(RunConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml_str("lambda_count = 16").is_err());
        assert!(RunConfig::from_toml_str("n_p = 40").is_err());
    }
}
