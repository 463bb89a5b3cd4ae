//! Slices q̂(2λ, ·) from recovered ray data and the windowed inverse Fourier transform in x₁.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::PotentialSpec;
use crate::geometry::chart::simpson;
use crate::geometry::{DiskMesh, Mesh};
use crate::raytransform::{invert_attenuated_const, taylor_recovery, NodalField, RaySampleGrid, TaylorRecovery};

use super::boundary::Extension;

/// Per-λ constant-attenuation inversion; failing λ are reported and left out.
pub fn slices_per_lambda(samples: &[RaySampleGrid], disk: Arc<DiskMesh>, mesh: &Mesh) -> (Vec<(f64, NodalField)>, Vec<Error>) {
    let m0 = &mesh.geometry().transversal;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for s in samples {
        match invert_attenuated_const(s, disk.clone(), m0) {
            Ok(f) => out.push((s.lambda, f)),
            Err(e) => errors.push(e),
        }
    }
    (out, errors)
}

/// Taylor route: derivatives ∂_μ^k q̂(0, ·), summed back into slices at every λ of the grid.
pub fn slices_taylor(samples: &[RaySampleGrid], order: usize, disk: Arc<DiskMesh>, mesh: &Mesh) -> Result<(Vec<(f64, NodalField)>, TaylorRecovery)> {
    let m0 = &mesh.geometry().transversal;
    let rec = taylor_recovery(samples, order, disk.clone(), m0)?;
    let slices = samples
        .iter()
        .map(|s| {
            let mu = 2.0 * s.lambda;
            let mut values = vec![Complex64::new(0.0, 0.0); disk.len()];
            let mut coeff = 1.0;
            for (k, d) in rec.slices.iter().enumerate() {
                if k > 0 {
                    coeff *= mu / k as f64;
                }
                for (v, x) in values.iter_mut().zip(&d.values) {
                    *v += x * coeff;
                }
            }
            Ok((s.lambda, NodalField::new(disk.clone(), values)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((slices, rec))
}

/// Cosine window on the μ-band.
pub fn window(mu: f64, mu_max: f64) -> f64 {
    if mu.abs() >= mu_max {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * mu / mu_max).cos())
    }
}

/// q(x₁, x′) = (1/2π)∫ e^{iμx₁} W(μ) q̂(μ, x′) dμ by the trapezoid rule in μ = 2λ on a uniform λ-grid.
/// `slices[k][j]` is q̂(2λ_k) at disk node j of the cylinder mesh. Returns nodal q and ‖Im‖/‖Re‖.
pub fn fourier_synthesis(mesh: &Mesh, lambdas: &[f64], lambda_max: f64, slices: &[Vec<Complex64>]) -> (Vec<f64>, f64) {
    let nl = lambdas.len();
    let mu_max = 2.0 * lambda_max;
    let mut order: Vec<usize> = (0..nl).collect();
    order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
    let weight: Vec<f64> = (0..nl)
        .map(|r| {
            let k = order[r];
            let left = if r > 0 { lambdas[k] - lambdas[order[r - 1]] } else { 0.0 };
            let right = if r + 1 < nl { lambdas[order[r + 1]] - lambdas[k] } else { 0.0 };
            // dμ = 2 dλ.
            (left + right) * window(2.0 * lambdas[k], mu_max)
        })
        .collect();
    let mut re = vec![0.0; mesh.len()];
    let mut im_norm = 0.0;
    let mut re_norm = 0.0;
    for v in 0..mesh.len() {
        let (x1, j) = (mesh.x1_of(v), mesh.disk_index(v));
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..nl {
            let k = order[r];
            acc += slices[k][j] * Complex64::from_polar(weight[r], 2.0 * lambdas[k] * x1);
        }
        acc /= 2.0 * std::f64::consts::PI;
        re[v] = acc.re;
        re_norm += mesh.mass()[v] * acc.re * acc.re;
        im_norm += mesh.mass()[v] * acc.im * acc.im;
    }
    (re, if re_norm > 0.0 { (im_norm / re_norm).sqrt() } else { 0.0 })
}

/// Slice fields sampled at the cylinder mesh's disk nodes.
pub fn on_mesh_disk(mesh: &Mesh, fields: &[&NodalField]) -> Vec<Vec<Complex64>> {
    fields.iter().map(|f| mesh.disk().nodes().iter().map(|&p| f.eval(p)).collect()).collect()
}

/// ∫_T e^{−iμx₁} q dx₁ for the closed-form potential plus its extension, at the given transversal points.
pub fn oracle_slice(spec: &PotentialSpec, mesh: &Mesh, extension: &Extension, mu: f64, points: &[[f64; 2]]) -> Vec<Complex64> {
    let geometry = mesh.geometry();
    let (bottom, top) = extension.slab_transforms(mu);
    points
        .iter()
        .map(|&p| {
            let f = |x1: f64| spec.eval(geometry, [x1, p[0], p[1]]);
            let re = simpson(|x1| f(x1) * (mu * x1).cos(), 0.0, geometry.length, 400);
            let im = simpson(|x1| -f(x1) * (mu * x1).sin(), 0.0, geometry.length, 400);
            Complex64::new(re, im) + bottom * extension.cap_value(false, p) + top * extension.cap_value(true, p)
        })
        .collect()
}

/// Relative L²(dV) distance between nodal fields.
pub fn relative_l2(mesh: &Mesh, a: &[f64], reference: &[f64]) -> f64 {
    let d = mesh.mass();
    let num: f64 = a.iter().zip(reference).zip(d).map(|((x, y), w)| w * (x - y) * (x - y)).sum();
    let den: f64 = reference.iter().zip(d).map(|(y, w)| w * y * y).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CylinderGeometry, Resolution};

    #[test]
    fn synthesis_of_exact_slices_is_the_band_projection() {
        // A smooth x₁-profile whose spectrum lies well inside a wide band: the windowed synthesis recovers it.
        let mesh = CylinderGeometry::default().build_mesh(Resolution::new(2, 40)).unwrap();
        let spec = PotentialSpec::GaussianBump { amplitude: 1.0, center_x1: 0.5, sigma_x1: 0.1, sigma_transverse: 10.0, truncation: 100.0 };
        let lambdas: Vec<f64> = (-80..=80).map(|k| 40.0 * k as f64 / 80.0).collect();
        let ext = Extension::zero(mesh.geometry());
        let slices: Vec<Vec<Complex64>> = lambdas.iter().map(|&l| oracle_slice(&spec, &mesh, &ext, 2.0 * l, mesh.disk().nodes())).collect();
        let (q, imag) = fourier_synthesis(&mesh, &lambdas, 40.0, &slices);
        let truth: Vec<f64> = (0..mesh.len()).map(|v| spec.eval(mesh.geometry(), mesh.node(v))).collect();
        assert!(imag < 1e-10, "{imag}");
        assert!(relative_l2(&mesh, &q, &truth) < 0.05, "{}", relative_l2(&mesh, &q, &truth));
    }

    #[test]
    fn window_vanishes_at_band_edge() {
        assert_eq!(window(2.0, 2.0), 0.0);
        assert_eq!(window(0.0, 2.0), 1.0);
    }
}
