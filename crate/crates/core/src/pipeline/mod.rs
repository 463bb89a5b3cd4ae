//! End-to-end reconstruction: boundary values, extension, data recovery, slices and Fourier synthesis.

pub mod boundary;
pub mod recovery;
pub mod synthesis;
pub mod validation;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Route, RunConfig};
use crate::error::{Error, Result};
use crate::forward::{DirichletSolver, DnMap, Potential, PotentialSpec};
use crate::geometry::{hex, trace_geodesic, ChartBase, DiskMesh, GeodesicGrid, Mesh};
use crate::io::{csv, write_text};
use crate::quasimodes::{beam_norm, build_quasimode, residual_norm, SpectralParameter};
use crate::raytransform::{forward_attenuated, NodalField, RaySampleGrid};

pub use boundary::{boundary_determination, taper, BoundaryEstimate, BoundaryProbe, Extension};
pub use recovery::{extrapolate_to_zero, linear_fit, pairings_at_h, recover_data, recover_grid, DataEstimate, HStage, RecoveredData, RecoverySetup, TraceSource};
pub use synthesis::{fourier_synthesis, oracle_slice, relative_l2, slices_per_lambda, slices_taylor, window};

/// Slack for the stage-isolation comparisons, absorbing round-off between equivalent routes.
pub const ISOLATION_SLACK: f64 = 1e-6;

/// Disk refinement used for quasimode diagnostics, fine enough for the smallest recovery h.
const DIAGNOSTIC_RINGS: usize = 24;

/// Chord subsampling stride for the sinogram oracle comparison.
const ORACLE_STRIDE: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub mesh_hash: String,
    pub dn_q_hash: String,
    pub dn_0_hash: String,
    pub dn_q_potential_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorRow {
    pub h: f64,
    pub kernel_dim: usize,
    pub gap: f64,
    pub margin_singular: f64,
    pub margin_eigen: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasimodeRow {
    pub h: f64,
    pub theta: f64,
    pub offset: f64,
    pub relative_residual: f64,
    pub min_im_riccati: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub h: f64,
    pub max_equation_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SinogramRow {
    pub lambda: f64,
    pub rms: f64,
    pub fit_residual: f64,
    pub noisy_chords: usize,
    /// ‖D − D_oracle‖/‖D_oracle‖ on a chord subsample (ground truth only).
    pub oracle_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceRow {
    pub lambda: f64,
    pub conjugate_asymmetry: Option<f64>,
    pub oracle_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IsolationSwap {
    pub stage: String,
    pub error: f64,
    pub non_increasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorMetrics {
    pub relative_l2: f64,
    /// Error of the windowed band-limited projection of the truth on the same λ-grid.
    pub band_projection_error: f64,
    /// ‖q_rec − q_band‖ / ‖q‖.
    pub band_consistency: f64,
    pub swaps: Vec<IsolationSwap>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub config: RunConfig,
    pub provenance: Provenance,
    pub route: Route,
    pub boundary: Vec<BoundaryEstimate>,
    pub extension: Extension,
    pub operator: Vec<OperatorRow>,
    pub quasimode: Vec<QuasimodeRow>,
    pub traces: Vec<TraceRow>,
    pub sinogram: Vec<SinogramRow>,
    pub slices: Vec<SliceRow>,
    /// Recovered q at the cylinder mesh nodes.
    pub recovered: Vec<f64>,
    /// ‖Im‖/‖Re‖ of the synthesized field before taking the real part.
    pub imaginary_fraction: f64,
    pub errors: Option<ErrorMetrics>,
    pub stage_errors: Vec<String>,
    pub report_hash: String,
}

/// Wall-clock seconds per stage; kept out of the report so that it stays reproducible.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn mark(&mut self, name: &str, since: Instant) {
        self.stages.push((name.to_string(), since.elapsed().as_secs_f64()));
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

pub struct ReconstructInputs<'a> {
    pub config: &'a RunConfig,
    pub mesh: &'a Mesh,
    pub dn_q: &'a DnMap,
    pub dn_q_hash: String,
    pub dn_0: &'a DnMap,
    pub dn_0_hash: String,
    /// Ground truth for error metrics; ignored unless its hash matches the DN file's potential.
    pub truth: Option<PotentialSpec>,
    /// Rerun with oracle intermediates (boundary values, traces, slices).
    pub stage_isolation: bool,
}

/// Probe charts: configured lateral points and, on each cap, the centre and a ring.
pub fn probe_bases(config: &RunConfig) -> Vec<ChartBase> {
    let mut out: Vec<ChartBase> = config.probe.lateral_points.iter().map(|p| ChartBase::Lateral { x1: p[0], angle: p[1] }).collect();
    for top in [false, true] {
        out.push(ChartBase::Cap { top, point: [0.0, 0.0] });
        for k in 0..config.probe.cap_ring_count {
            let a = 2.0 * std::f64::consts::PI * k as f64 / config.probe.cap_ring_count as f64;
            let r = config.probe.cap_ring_radius;
            out.push(ChartBase::Cap { top, point: [r * a.cos(), r * a.sin()] });
        }
    }
    out
}

fn cap_points(estimates: &[(ChartBase, f64)], top: bool) -> Vec<([f64; 2], f64)> {
    estimates
        .iter()
        .filter_map(|(b, v)| match b {
            ChartBase::Cap { top: t, point } if *t == top => Some((*point, *v)),
            _ => None,
        })
        .collect()
}

fn synthesize(mesh: &Mesh, config: &RunConfig, slices: &[(f64, NodalField)]) -> (Vec<f64>, f64) {
    if slices.is_empty() {
        return (vec![0.0; mesh.len()], 0.0);
    }
    let lambdas: Vec<f64> = slices.iter().map(|s| s.0).collect();
    let fields: Vec<&NodalField> = slices.iter().map(|s| &s.1).collect();
    fourier_synthesis(mesh, &lambdas, config.lambda_max, &synthesis::on_mesh_disk(mesh, &fields))
}

fn make_slices(mesh: &Mesh, config: &RunConfig, samples: &[RaySampleGrid], disk: Arc<DiskMesh>, errors: &mut Vec<String>) -> Vec<(f64, NodalField)> {
    match config.route {
        Route::PerLambda => {
            let (s, e) = slices_per_lambda(samples, disk, mesh);
            errors.extend(e.iter().map(|e| format!("slices: {e}")));
            s
        }
        Route::Taylor => match slices_taylor(samples, config.taylor_order, disk, mesh) {
            Ok((s, rec)) => {
                if let Some(e) = rec.truncated {
                    errors.push(format!("slices: {e}"));
                }
                s
            }
            Err(e) => {
                errors.push(format!("slices: {e}"));
                Vec::new()
            }
        },
    }
}

/// Full reconstruction from the two DN maps. Input errors abort; stage errors are recorded in the report.
pub fn reconstruct(inputs: &ReconstructInputs<'_>) -> Result<(ReconstructionReport, Timings)> {
    let ReconstructInputs { config, mesh, dn_q, dn_0, .. } = *inputs;
    config.validate()?;
    crate::io::check_dn_mesh(dn_q, mesh)?;
    crate::io::check_dn_mesh(dn_0, mesh)?;
    dn_q.check_compatible(dn_0)?;
    let zero = Potential::zero(mesh);
    if dn_0.potential_hash != zero.hash() {
        return Err(Error::ShapeMismatch("the reference DN map was not assembled for q = 0".into()));
    }
    let truth = match &inputs.truth {
        Some(spec) => {
            let p = Potential::from_spec(mesh, spec)?;
            (p.hash() == dn_q.potential_hash).then_some((spec.clone(), p))
        }
        None => None,
    };
    let mut timings = Timings::default();
    let mut stage_errors = Vec::new();
    let geometry = mesh.geometry();

    // Boundary values.
    let t = Instant::now();
    let solver_0 = DirichletSolver::new(mesh, &zero)?;
    let mut boundary_rows = Vec::new();
    let mut estimates = Vec::new();
    for base in probe_bases(config) {
        let est = BoundaryProbe::new(geometry, base, &config.probe).and_then(|p| boundary_determination(mesh, dn_q, dn_0, &solver_0, &p));
        match est {
            Ok(e) => {
                estimates.push((base, e.value));
                boundary_rows.push(e);
            }
            Err(e) => stage_errors.push(format!("boundary {base:?}: {e}")),
        }
    }
    let extension = if config.interior_supported {
        Extension::zero(geometry)
    } else {
        Extension::from_cap_values(geometry, &cap_points(&estimates, false), &cap_points(&estimates, true))
    };
    timings.mark("boundary", t);

    // Data recovery.
    let t = Instant::now();
    let lambdas = config.lambdas();
    let grid = config.geodesic_grid();
    let setup = RecoverySetup {
        mesh,
        dn_q,
        dn_0,
        green: config.green_options(),
        beam: config.beam,
        margin_threshold: config.margin_threshold,
    };
    let recovered = recover_grid(&setup, &config.recovery_h, &grid, &lambdas, &extension, &TraceSource::Equation, config.recovery_tolerance);
    timings.mark("recovery", t);

    let t = Instant::now();
    let slice_disk = Arc::new(DiskMesh::rings(config.slice_rings)?);
    let (data, slices) = match recovered {
        Ok(mut data) => {
            stage_errors.extend(data.errors.drain(..).map(|e| format!("recovery: {e}")));
            let slices = make_slices(mesh, config, &data.samples, slice_disk.clone(), &mut stage_errors);
            (Some(data), slices)
        }
        Err(e) => {
            stage_errors.push(format!("recovery: {e}"));
            (None, Vec::new())
        }
    };
    let (q_rec, imaginary_fraction) = synthesize(mesh, config, &slices);
    timings.mark("slices", t);

    // Diagnostics.
    let t = Instant::now();
    let operator: Vec<OperatorRow> = data
        .iter()
        .flat_map(|d| d.stages.iter())
        .map(|s| OperatorRow { h: s.h, kernel_dim: s.kernel_dim, gap: s.gap, margin_singular: s.margin.singular, margin_eigen: s.margin.eigen })
        .collect();
    let traces: Vec<TraceRow> = data.iter().flat_map(|d| d.stages.iter()).map(|s| TraceRow { h: s.h, max_equation_residual: s.trace_residual }).collect();
    let quasimode = quasimode_rows(config, data.as_ref(), &mut stage_errors);
    let oracle_extension = truth.as_ref().map(|(spec, _)| oracle_extension(config, geometry, spec, &estimates));
    let sinogram = sinogram_rows(mesh, data.as_ref(), truth.as_ref().map(|t| &t.0), oracle_extension.as_ref(), &mut stage_errors);
    let slice_rows = slice_rows(mesh, &slices, &slice_disk, truth.as_ref().map(|t| &t.0), oracle_extension.as_ref());
    timings.mark("diagnostics", t);

    // Error metrics and stage isolation.
    let t = Instant::now();
    let errors = match (&truth, &oracle_extension) {
        (Some((spec, q_true)), Some(ext_true)) => {
            let base = relative_l2(mesh, &q_rec, q_true.values());
            let band_slices: Vec<Vec<Complex64>> = lambdas.iter().map(|&l| oracle_slice(spec, mesh, ext_true, 2.0 * l, mesh.disk().nodes())).collect();
            let (q_band, _) = fourier_synthesis(mesh, &lambdas, config.lambda_max, &band_slices);
            let band_projection_error = relative_l2(mesh, &q_band, q_true.values());
            let diff: Vec<f64> = q_rec.iter().zip(&q_band).map(|(a, b)| a - b).collect();
            let zeros = vec![0.0; mesh.len()];
            let band_consistency = relative_l2(mesh, &diff, &zeros) / relative_l2(mesh, q_true.values(), &zeros).max(f64::MIN_POSITIVE);
            let mut swaps = Vec::new();
            if inputs.stage_isolation {
                let mut record = |stage: &str, err: f64| {
                    swaps.push(IsolationSwap { stage: stage.into(), error: err, non_increasing: err <= base * (1.0 + ISOLATION_SLACK) + 1e-12 })
                };
                if let Some(d) = &data {
                    // Boundary values: refit the same pairings with the oracle extension.
                    let ext = if config.interior_supported { extension.clone() } else { ext_true.clone() };
                    let lengths = d.samples[0].lengths.clone();
                    match extrapolate_to_zero(d.stages.clone(), &grid, &lambdas, &lengths, &ext, config.recovery_tolerance) {
                        Ok(swapped) => {
                            let mut sink = Vec::new();
                            let s = make_slices(mesh, config, &swapped.samples, slice_disk.clone(), &mut sink);
                            record("boundary_values", relative_l2(mesh, &synthesize(mesh, config, &s).0, q_true.values()));
                        }
                        Err(e) => stage_errors.push(format!("isolation boundary_values: {e}")),
                    }
                }
                match recover_grid(&setup, &config.recovery_h, &grid, &lambdas, &extension, &TraceSource::Oracle(q_true.clone()), config.recovery_tolerance) {
                    Ok(swapped) => {
                        let mut sink = Vec::new();
                        let s = make_slices(mesh, config, &swapped.samples, slice_disk.clone(), &mut sink);
                        record("traces", relative_l2(mesh, &synthesize(mesh, config, &s).0, q_true.values()));
                    }
                    Err(e) => stage_errors.push(format!("isolation traces: {e}")),
                }
                let oracle_fields: Vec<(f64, NodalField)> = lambdas
                    .iter()
                    .map(|&l| {
                        let v = oracle_slice(spec, mesh, ext_true, 2.0 * l, slice_disk.nodes());
                        (l, NodalField::new(slice_disk.clone(), v).expect("slice matches its disk"))
                    })
                    .collect();
                record("slices", relative_l2(mesh, &synthesize(mesh, config, &oracle_fields).0, q_true.values()));
            }
            Some(ErrorMetrics { relative_l2: base, band_projection_error, band_consistency, swaps })
        }
        _ => None,
    };
    timings.mark("isolation", t);

    let provenance = Provenance {
        config_hash: config.hash(),
        mesh_hash: mesh.hash().to_string(),
        dn_q_hash: inputs.dn_q_hash.clone(),
        dn_0_hash: inputs.dn_0_hash.clone(),
        dn_q_potential_hash: dn_q.potential_hash.clone(),
        seed: config.seed,
    };
    let mut report = ReconstructionReport {
        config: config.clone(),
        provenance,
        route: config.route,
        boundary: boundary_rows,
        extension,
        operator,
        quasimode,
        traces,
        sinogram,
        slices: slice_rows,
        recovered: q_rec,
        imaginary_fraction,
        errors,
        stage_errors,
        report_hash: String::new(),
    };
    report.report_hash = report.content_hash();
    Ok((report, timings))
}

fn oracle_extension(config: &RunConfig, geometry: &crate::geometry::CylinderGeometry, spec: &PotentialSpec, estimates: &[(ChartBase, f64)]) -> Extension {
    if config.interior_supported {
        return Extension::zero(geometry);
    }
    let truth_at = |top: bool| -> Vec<([f64; 2], f64)> {
        let x1 = if top { geometry.length } else { 0.0 };
        let mut pts: Vec<[f64; 2]> = cap_points(estimates, top).into_iter().map(|p| p.0).collect();
        if pts.is_empty() {
            pts = probe_bases(config)
                .into_iter()
                .filter_map(|b| match b {
                    ChartBase::Cap { top: t, point } if t == top => Some(point),
                    _ => None,
                })
                .collect();
        }
        pts.into_iter().map(|p| (p, spec.eval(geometry, [x1, p[0], p[1]]))).collect()
    };
    Extension::from_cap_values(geometry, &truth_at(false), &truth_at(true))
}

/// Beam residuals at three reference chords for each recovery h, on a refined disk.
fn quasimode_rows(config: &RunConfig, data: Option<&RecoveredData>, errors: &mut Vec<String>) -> Vec<QuasimodeRow> {
    let m0 = match config.geometry.geometry() {
        Ok(g) => g.transversal,
        Err(_) => return Vec::new(),
    };
    let disk = match DiskMesh::rings(DIAGNOSTIC_RINGS) {
        Ok(d) => d,
        Err(_) => return Vec::new(),
    };
    let mut rows = Vec::new();
    for &h in &config.recovery_h {
        let min_im = data.and_then(|d| d.stages.iter().find(|s| s.h == h)).map(|s| s.min_im_riccati).unwrap_or(f64::NAN);
        for (theta, offset) in [(0.0, 0.0), (1.0, 0.4), (2.2, -0.6)] {
            let row = trace_geodesic(&m0, theta, offset)
                .and_then(|g| build_quasimode(&m0, &g, SpectralParameter::new(h, 0.0)?, config.beam))
                .and_then(|b| Ok(residual_norm(&b, &disk, &m0)? / beam_norm(&b, &disk, &m0)));
            match row {
                Ok(r) => rows.push(QuasimodeRow { h, theta, offset, relative_residual: r, min_im_riccati: min_im }),
                Err(e) => errors.push(format!("quasimode h = {h}: {e}")),
            }
        }
    }
    rows
}

fn sinogram_rows(
    mesh: &Mesh,
    data: Option<&RecoveredData>,
    truth: Option<&PotentialSpec>,
    ext_true: Option<&Extension>,
    errors: &mut Vec<String>,
) -> Vec<SinogramRow> {
    let Some(data) = data else { return Vec::new() };
    let grid = &data.grid;
    let sub = GeodesicGrid::new(grid.n_theta / ORACLE_STRIDE, grid.n_p / ORACLE_STRIDE);
    let oracle_disk = DiskMesh::rings(DIAGNOSTIC_RINGS).map(Arc::new);
    data.samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rms = (s.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / s.values.len() as f64).sqrt();
            let oracle_error = match (truth, ext_true, &oracle_disk) {
                (Some(spec), Some(ext), Ok(disk)) => {
                    let slice = oracle_slice(spec, mesh, ext, 2.0 * s.lambda, disk.nodes());
                    let field = NodalField::new(disk.clone(), slice).expect("slice matches its disk");
                    match forward_attenuated(&|p| field.eval(p), s.lambda, &sub, &mesh.geometry().transversal) {
                        Ok(o) => {
                            let (mut num, mut den) = (0.0, 0.0);
                            for i in 0..sub.n_theta {
                                for j in 0..sub.n_p {
                                    // Same chord in the full grid: identical angle and offset.
                                    let (fi, fj) = (i * ORACLE_STRIDE, j * ORACLE_STRIDE + (ORACLE_STRIDE - 1) / 2);
                                    let full = s.at(fi, fj);
                                    let th_ok = (grid.theta(fi) - sub.theta(i)).abs() < 1e-12;
                                    let off_ok = (grid.offset(fj) - sub.offset(j)).abs() < 1e-12;
                                    if th_ok && off_ok {
                                        num += (full - o.at(i, j)).norm_sqr();
                                        den += o.at(i, j).norm_sqr();
                                    }
                                }
                            }
                            (den > 0.0).then(|| (num / den).sqrt())
                        }
                        Err(e) => {
                            errors.push(format!("sinogram oracle: {e}"));
                            None
                        }
                    }
                }
                _ => None,
            };
            SinogramRow { lambda: s.lambda, rms, fit_residual: data.fit_residual[k], noisy_chords: data.noisy[k], oracle_error }
        })
        .collect()
}

fn slice_rows(mesh: &Mesh, slices: &[(f64, NodalField)], disk: &Arc<DiskMesh>, truth: Option<&PotentialSpec>, ext_true: Option<&Extension>) -> Vec<SliceRow> {
    slices
        .iter()
        .map(|(l, f)| {
            let partner = slices.iter().find(|(m, _)| (m + l).abs() < 1e-12);
            let conjugate_asymmetry = partner.map(|(_, g)| {
                let scale = f.values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
                f.values.iter().zip(&g.values).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max) / scale
            });
            let oracle_error = match (truth, ext_true) {
                (Some(spec), Some(ext)) => {
                    let o = oracle_slice(spec, mesh, ext, 2.0 * l, disk.nodes());
                    Some(f.relative_error(&o))
                }
                _ => None,
            };
            SliceRow { lambda: *l, conjugate_asymmetry, oracle_error }
        })
        .collect()
}

impl ReconstructionReport {
    /// SHA-256 of the JSON report with an empty hash field.
    pub fn content_hash(&self) -> String {
        let mut copy = self.clone();
        copy.report_hash = String::new();
        hex(&Sha256::digest(serde_json::to_string(&copy).expect("report serializes").as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// report.json, the nodal q and every stage table as CSV.
    pub fn write_outputs(&self, dir: &Path, mesh: &Mesh, truth: Option<&[f64]>, timings: &Timings) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_text(&dir.join("report.json"), &self.to_json())?;
        let f = |x: f64| format!("{x:.17e}");
        write_text(
            &dir.join("q_nodal.csv"),
            &csv(
                &["node", "x1", "x", "y", "q_recovered", "q_true"],
                (0..mesh.len()).map(|v| {
                    let p = mesh.node(v);
                    vec![v.to_string(), f(p[0]), f(p[1]), f(p[2]), f(self.recovered[v]), truth.map(|t| f(t[v])).unwrap_or_default()]
                }),
            ),
        )?;
        write_text(
            &dir.join("boundary.csv"),
            &csv(
                &["face", "x1", "x", "y", "value", "raw_limit", "extrapolated", "lambdas_used"],
                self.boundary.iter().map(|b| {
                    vec![b.face.clone(), f(b.point[0]), f(b.point[1]), f(b.point[2]), f(b.value), f(b.raw_limit), b.extrapolated.to_string(), b.lambdas.len().to_string()]
                }),
            ),
        )?;
        write_text(
            &dir.join("operator.csv"),
            &csv(
                &["h", "kernel_dim", "gap", "margin_singular", "margin_eigen"],
                self.operator.iter().map(|r| vec![f(r.h), r.kernel_dim.to_string(), f(r.gap), f(r.margin_singular), f(r.margin_eigen)]),
            ),
        )?;
        write_text(
            &dir.join("quasimode.csv"),
            &csv(
                &["h", "theta", "offset", "relative_residual", "min_im_riccati"],
                self.quasimode.iter().map(|r| vec![f(r.h), f(r.theta), f(r.offset), f(r.relative_residual), f(r.min_im_riccati)]),
            ),
        )?;
        write_text(&dir.join("traces.csv"), &csv(&["h", "max_equation_residual"], self.traces.iter().map(|r| vec![f(r.h), f(r.max_equation_residual)])))?;
        let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
        write_text(
            &dir.join("sinogram.csv"),
            &csv(
                &["lambda", "rms", "fit_residual", "noisy_chords", "oracle_error"],
                self.sinogram.iter().map(|r| vec![f(r.lambda), f(r.rms), f(r.fit_residual), r.noisy_chords.to_string(), opt(r.oracle_error)]),
            ),
        )?;
        write_text(
            &dir.join("slices.csv"),
            &csv(
                &["lambda", "conjugate_asymmetry", "oracle_error"],
                self.slices.iter().map(|r| vec![f(r.lambda), opt(r.conjugate_asymmetry), opt(r.oracle_error)]),
            ),
        )?;
        write_text(&dir.join("timings.csv"), &csv(&["stage", "seconds"], timings.stages.iter().map(|(s, t)| vec![s.clone(), format!("{t:.3}")])))?;
        Ok(())
    }
}
