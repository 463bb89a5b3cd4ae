use calderon::config::RunConfig;
use calderon::forward::{assemble_dn_map, Potential};
use calderon::geometry::trace_geodesic;
use calderon::pipeline::boundary::Extension;
use calderon::pipeline::recovery::{linear_fit, recover_data, RecoverySetup};
use calderon::Complex64;

fn small_config() -> RunConfig {
    RunConfig::from_toml_str("h_grid = [0.3, 0.2]\nrecovery_h = [0.3, 0.2]\n[geometry]\ndisk_rings = 4\nx1_cells = 8\n").unwrap()
}

#[test]
fn zero_potential_gives_zero_data() {
    let cfg = small_config();
    let mesh = cfg.geometry.build_mesh().unwrap();
    let dn_0 = assemble_dn_map(&mesh, &Potential::zero(&mesh)).unwrap();
    let setup = RecoverySetup { mesh: &mesh, dn_q: &dn_0, dn_0: &dn_0, green: cfg.green_options(), beam: cfg.beam, margin_threshold: cfg.margin_threshold };
    let ext = Extension::zero(mesh.geometry());
    for (theta, offset, lambda) in [(0.0, 0.0, 0.0), (1.1, 0.4, 0.5), (2.7, -0.3, -1.0)] {
        let g = trace_geodesic(&mesh.geometry().transversal, theta, offset).unwrap();
        let d = recover_data(&setup, &g, 0, lambda, &cfg.recovery_h, &ext, cfg.recovery_tolerance).unwrap();
        assert!(d.estimate.norm() < 1e-12, "D = {} for ({theta}, {offset}, {lambda})", d.estimate);
    }
}

#[test]
fn positive_bump_gives_positive_unattenuated_data() {
    let cfg = small_config();
    let mesh = cfg.geometry.build_mesh().unwrap();
    let q = Potential::from_spec(&mesh, &cfg.potential).unwrap();
    let dn_q = assemble_dn_map(&mesh, &q).unwrap();
    let dn_0 = assemble_dn_map(&mesh, &Potential::zero(&mesh)).unwrap();
    let setup = RecoverySetup { mesh: &mesh, dn_q: &dn_q, dn_0: &dn_0, green: cfg.green_options(), beam: cfg.beam, margin_threshold: cfg.margin_threshold };
    let ext = Extension::zero(mesh.geometry());
    let g = trace_geodesic(&mesh.geometry().transversal, 0.3, 0.0).unwrap();
    let d = recover_data(&setup, &g, 0, 0.0, &cfg.recovery_h, &ext, cfg.recovery_tolerance).unwrap();
    // At λ = 0 the data is a blurred line integral of q̂(0, ·) > 0 through the bump centre.
    assert!(d.estimate.re > 0.0, "D = {}", d.estimate);
    assert!(d.estimate.im.abs() < 0.2 * d.estimate.re, "D = {}", d.estimate);
}

#[test]
fn linear_fit_is_exact_on_lines() {
    let hs = [0.3, 0.2, 0.15];
    let a = Complex64::new(0.7, -0.2);
    let b = Complex64::new(-1.5, 0.4);
    let vs: Vec<Complex64> = hs.iter().map(|h| a + b * h).collect();
    let (i, s, misfit) = linear_fit(&hs, &vs);
    assert!((i - a).norm() < 1e-13 && (s - b).norm() < 1e-12 && misfit < 1e-13);
}
