use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calderon::config::{Route, RunConfig};
use calderon::forward::{DirichletSolver, Potential};
use calderon::io::{check_dn_mesh, read_dn, write_dn, write_text};
use calderon::pipeline::validation::{green_suite, operator_suite, quasimode_suite, trace_suite, SuiteReport};
use calderon::pipeline::{reconstruct, ReconstructInputs};
use calderon::{Complex64, Error, Result};
use clap::{Args, Parser, Subcommand};

/// Reconstruct a potential on a cylinder from its Dirichlet-to-Neumann map.
#[derive(Parser)]
#[command(name = "calderon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured slice route.
    #[arg(long)]
    route: Option<Route>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble Λ_q and Λ_0 for the configured potential and write them to disk.
    Forward(Common),
    /// Run the discrete invariant suites (Green operator, trace operator, beams, traces).
    Validate {
        #[command(flatten)]
        common: Common,
        /// Restrict the suites to one h from the configured grid.
        #[arg(long)]
        h: Option<f64>,
        /// Deliberately drop the kernel projection; property checks must then fail.
        #[arg(long)]
        zero_projection: bool,
    },
    /// Recover q from two DN files.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/dn_q.bin.
        #[arg(long)]
        dn_q: Option<PathBuf>,
        /// Defaults to <out>/dn_0.bin.
        #[arg(long)]
        dn_0: Option<PathBuf>,
        /// Rerun with oracle intermediates to attribute the error to stages.
        #[arg(long)]
        isolate: bool,
    },
}

/// Input and configuration errors exit 2; everything else that stops a run exits 1.
fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Io(_)
            | Error::ShapeMismatch(_)
            | Error::ParameterOutOfRange { .. }
            | Error::InvalidGeometry(_)
            | Error::InvalidPotential(_)
            | Error::DegenerateResolution(_)
            | Error::GridTooCoarse(_)
    )
}

enum Outcome {
    Ok,
    InvariantFailure,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::from_path(&common.config)?;
    if let Some(route) = common.route {
        config.route = route;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Ok(w) = std::env::var("CALDERON_WORKERS") {
        config.workers = w.parse().map_err(|_| Error::Config(format!("CALDERON_WORKERS = {w:?} is not a count")))?;
    }
    config.validate()?;
    if config.workers > 0 {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global();
    }
    Ok(config)
}

fn forward(common: &Common) -> Result<Outcome> {
    let config = load_config(common)?;
    let mesh = config.geometry.build_mesh()?;
    let q = Potential::from_spec(&mesh, &config.potential)?;
    let q = if config.interior_supported { q.with_interior_support(&mesh)? } else { q };
    std::fs::create_dir_all(&common.out)?;

    let solver_q = DirichletSolver::new(&mesh, &q)?;
    let dn_q = solver_q.dn_map(&mesh);
    let dn_0 = DirichletSolver::new(&mesh, &Potential::zero(&mesh))?.dn_map(&mesh);
    let dn_q_hash = write_dn(&common.out.join("dn_q.bin"), &dn_q)?;
    let dn_0_hash = write_dn(&common.out.join("dn_0.bin"), &dn_0)?;

    // Constants are harmonic, so Λ₀1 vanishes up to solver error.
    let ones = vec![Complex64::new(1.0, 0.0); dn_0.boundary_count()];
    let constant_residual = dn_0.apply(&ones).iter().map(|v| v.norm()).fold(0.0, f64::max);

    let (nodes, cells) = mesh.to_csv();
    write_text(&common.out.join("mesh_nodes.csv"), &nodes)?;
    write_text(&common.out.join("mesh_cells.csv"), &cells)?;
    write_text(&common.out.join("config.toml"), &config.to_toml())?;
    let summary = serde_json::json!({
        "config_hash": config.hash(),
        "mesh_hash": mesh.hash(),
        "potential_hash": q.hash(),
        "dn_q_hash": dn_q_hash,
        "dn_0_hash": dn_0_hash,
        "nodes": mesh.len(),
        "boundary_nodes": dn_q.boundary_count(),
        "dn_q_asymmetry": dn_q.asymmetry(),
        "dn_0_constant_residual": constant_residual,
    });
    write_text(&common.out.join("forward.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    println!("mesh {} ({} nodes, {} on the boundary)", mesh.hash(), mesh.len(), dn_q.boundary_count());
    println!("dn_q {dn_q_hash}");
    println!("dn_0 {dn_0_hash}");
    println!("max |Λ₀1| = {constant_residual:.3e}");
    Ok(Outcome::Ok)
}

fn validate(common: &Common, h: Option<f64>, zero_projection: bool) -> Result<Outcome> {
    let config = load_config(common)?;
    let hs = match h {
        Some(h) => {
            if !config.h_grid.iter().any(|g| (g - h).abs() < 1e-9) {
                let (min, max) = config.h_grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
                return Err(Error::ParameterOutOfRange { h, min, max });
            }
            vec![h]
        }
        None => config.h_grid.clone(),
    };
    let mesh = config.geometry.build_mesh()?;
    let q = Potential::from_spec(&mesh, &config.potential)?;
    let mut opts = config.green_options();
    opts.zero_projection = zero_projection;
    let trace_h = if hs.iter().any(|g| (g - 0.1).abs() < 1e-9) { 0.1 } else { hs.iter().cloned().fold(f64::INFINITY, f64::min) };

    let suites: Vec<SuiteReport> = vec![
        green_suite(&mesh, &hs, &opts, config.seed)?,
        operator_suite(&mesh, &hs, &q, &opts, config.seed, config.margin_threshold)?,
        quasimode_suite(&mesh.geometry().transversal, &hs, config.beam)?,
        trace_suite(&mesh, trace_h, &q, config.beam, &opts)?,
    ];
    let mut ok = true;
    for s in &suites {
        println!("{} ({:.1} s)", s.suite, s.seconds);
        for c in &s.checks {
            println!("  {}{}", c.line(), if c.gating { "" } else { " [rate]" });
        }
        ok &= s.invariants_hold();
    }
    std::fs::create_dir_all(&common.out)?;
    let summary = serde_json::json!({
        "config_hash": config.hash(),
        "mesh_hash": mesh.hash(),
        "h": hs,
        "zero_projection": zero_projection,
        "invariants_hold": ok,
        "suites": suites,
    });
    write_text(&common.out.join("validate.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
    println!("{}", if ok { "invariants hold" } else { "invariant violated" });
    Ok(if ok { Outcome::Ok } else { Outcome::InvariantFailure })
}

fn reconstruct_cmd(common: &Common, dn_q: Option<&Path>, dn_0: Option<&Path>, isolate: bool) -> Result<Outcome> {
    let config = load_config(common)?;
    let mesh = config.geometry.build_mesh()?;
    let dn_q_path = dn_q.map(Path::to_path_buf).unwrap_or_else(|| common.out.join("dn_q.bin"));
    let dn_0_path = dn_0.map(Path::to_path_buf).unwrap_or_else(|| common.out.join("dn_0.bin"));
    let (dn_q, dn_q_hash) = read_dn(&dn_q_path).map_err(|e| Error::Io(format!("{}: {e}", dn_q_path.display())))?;
    let (dn_0, dn_0_hash) = read_dn(&dn_0_path).map_err(|e| Error::Io(format!("{}: {e}", dn_0_path.display())))?;
    check_dn_mesh(&dn_q, &mesh)?;
    check_dn_mesh(&dn_0, &mesh)?;
    let inputs = ReconstructInputs {
        config: &config,
        mesh: &mesh,
        dn_q: &dn_q,
        dn_q_hash,
        dn_0: &dn_0,
        dn_0_hash,
        truth: Some(config.potential.clone()),
        stage_isolation: isolate,
    };
    let (report, timings) = reconstruct(&inputs)?;
    let truth = match &report.errors {
        Some(_) => Some(Potential::from_spec(&mesh, &config.potential)?),
        None => None,
    };
    report.write_outputs(&common.out, &mesh, truth.as_ref().map(|q| q.values()), &timings)?;

    for (stage, secs) in &timings.stages {
        println!("{stage:>12}: {secs:.1} s");
    }
    println!("slices recovered: {} of {}", report.slices.len(), config.lambda_count);
    for e in &report.stage_errors {
        println!("stage error: {e}");
    }
    if let Some(m) = &report.errors {
        println!("relative L2 error {:.4} (band projection {:.4})", m.relative_l2, m.band_projection_error);
        for s in &m.swaps {
            println!("  with oracle {:<16} {:.4}", s.stage, s.error);
        }
    }
    println!("report {}", report.report_hash);
    Ok(if report.slices.is_empty() { Outcome::InvariantFailure } else { Outcome::Ok })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Forward(common) => forward(common),
        Command::Validate { common, h, zero_projection } => validate(common, *h, *zero_projection),
        Command::Reconstruct { common, dn_q, dn_0, isolate } => reconstruct_cmd(common, dn_q.as_deref(), dn_0.as_deref(), *isolate),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::InvariantFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_input_error(&e) { 2 } else { 1 })
        }
    }
}
