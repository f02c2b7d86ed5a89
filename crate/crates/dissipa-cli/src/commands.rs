//! Subcommand implementations.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use dissipa::analysis::{self, rebuild_gradients, AnalysisError, AnalysisResult};
use dissipa::lmi::Headline;
use dissipa::expr::BoxRegion;
use dissipa::mesh::kuhn_triangulate;
use dissipa::verify::{full_suite, SupplyRate};

use crate::config::RunConfig;

/// Error wrapper mapping failures to the documented exit codes.
#[derive(Debug)]
pub struct ExitClass {
    code: u8,
    message: String,
}

impl ExitClass {
    pub fn code(&self) -> u8 {
        self.code
    }
    fn new(code: u8, message: impl Into<String>) -> anyhow::Error {
        anyhow::Error::new(ExitClass { code, message: message.into() })
    }
}

impl fmt::Display for ExitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ExitClass {}

fn classify(err: AnalysisError) -> anyhow::Error {
    let code = match &err {
        AnalysisError::Infeasible { .. } => 2,
        AnalysisError::SolverFailure { .. } => 3,
        AnalysisError::VerificationFailed(_) => 4,
        _ => 1,
    };
    ExitClass::new(code, err.to_string())
}

fn run_analysis(
    config: &RunConfig,
    divisions: Option<&[usize]>,
    seed: Option<u64>,
    verbosity: u8,
) -> Result<AnalysisResult> {
    let req = config.build_request(divisions, seed, verbosity)?;
    analysis::analyze(&req).map_err(classify)
}

fn result_tri(config: &RunConfig, result: &AnalysisResult) -> Result<dissipa::mesh::Triangulation> {
    let exclusion = match (&result.mesh.exclusion_lo, &result.mesh.exclusion_hi) {
        (Some(lo), Some(hi)) => Some(BoxRegion::new(lo.clone(), hi.clone())),
        _ => None,
    };
    kuhn_triangulate(&config.region(), &result.mesh.divisions, exclusion.as_ref())
        .context("rebuilding the triangulation recorded in the result")
}

pub fn analyze(config_path: &PathBuf, out: &Path, seed: Option<u64>, verbosity: u8) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let result = run_analysis(&config, None, seed, verbosity)?;
    std::fs::create_dir_all(out)?;
    let result_path = out.join(&config.output.result);
    std::fs::write(&result_path, serde_json::to_string_pretty(&result)?)?;
    let tri = result_tri(&config, &result)?;
    let csv = analysis::storage_surface_csv(
        &{
            let mut cert = result.certificate.clone();
            rebuild_gradients(&mut cert, &tri);
            cert
        },
        &tri,
        config.output.storage_samples,
    );
    std::fs::write(out.join(&config.output.storage_csv), csv)?;
    if verbosity >= 1 {
        eprintln!(
            "wrote {} ({} simplices, {})",
            result_path.display(),
            result.mesh.simplices,
            headline_text(&result.headline),
        );
    }
    println!("{}", summary_line(&result));
    Ok(())
}

pub fn verify(
    config_path: &PathBuf,
    out: &Path,
    result_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let default_path = out.join(&config.output.result);
    let path = result_path.unwrap_or(&default_path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read result {}", path.display()))?;
    let result: AnalysisResult = serde_json::from_str(&text).context("invalid result file")?;
    let model = config.build_model()?;
    let tri = result_tri(&config, &result)?;
    let mut cert = result.certificate.clone();
    rebuild_gradients(&mut cert, &tri);
    let supply = SupplyRate::new(
        rows_to_mat(&result.qsr.q),
        rows_to_mat(&result.qsr.s),
        rows_to_mat(&result.qsr.r),
    );
    let settings = config.verify_settings(seed.or(Some(result.verification.seed)));
    let report = full_suite(&model, &tri, &cert, &supply, &settings);
    println!(
        "verification: hji max eig {:.3e} ({} samples/simplex), {} / {} trajectory violations -> {}",
        report.hji_max_eigenvalue,
        report.hji_samples_per_simplex,
        report.trajectory_violations,
        report.trajectory_trials,
        if report.pass { "PASS" } else { "FAIL" },
    );
    if !report.pass {
        return Err(ExitClass::new(4, "verification failed"));
    }
    Ok(())
}

fn rows_to_mat(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
}

pub fn mesh(config_path: &PathBuf, out: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let req = config.build_request(None, None, 0)?;
    // Mirror the analysis variant's exclusion construction.
    let exclusion = if req.variant == dissipa::analysis::Variant::WithAffine {
        let n = req.model.n;
        let deltas: Vec<f64> = (0..n)
            .map(|k| (req.region.hi[k] - req.region.lo[k]) / req.divisions[k] as f64)
            .collect();
        let e = req.exclusion_cells as f64;
        Some(BoxRegion::new(
            deltas.iter().map(|d| -e * d).collect(),
            deltas.iter().map(|d| e * d).collect(),
        ))
    } else {
        None
    };
    let tri = kuhn_triangulate(&req.region, &req.divisions, exclusion.as_ref())?;
    std::fs::create_dir_all(out)?;
    let prefix = &config.output.mesh_prefix;
    std::fs::write(out.join(format!("{prefix}_vertices.csv")), tri.vertices_csv())?;
    std::fs::write(out.join(format!("{prefix}_simplices.csv")), tri.simplices_csv())?;
    println!(
        "mesh: {} vertices, {} simplices, max diameter {:.6}",
        tri.num_vertices(),
        tri.num_simplices(),
        tri.max_diameter
    );
    Ok(())
}

pub fn sweep(config_path: &PathBuf, out: &Path, seed: Option<u64>, verbosity: u8) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| ExitClass::new(1, "config has no [sweep] section"))?;
    std::fs::create_dir_all(out)?;
    let mut table = String::from(
        "divisions,simplices,status,objective,headline,value_a,value_b,iterations,verified\n",
    );
    for &d in &sweep.divisions {
        let divisions = vec![d; config.model.n];
        if verbosity >= 1 {
            eprintln!("sweep: divisions {d}");
        }
        match run_analysis(&config, Some(&divisions), seed, verbosity) {
            Ok(result) => {
                let (va, vb) = headline_values(&result.headline);
                table.push_str(&format!(
                    "{d},{},optimal,{},{},{},{},{},{}\n",
                    result.mesh.simplices,
                    result.solver.objective,
                    headline_label(&result.headline),
                    va,
                    vb,
                    result.solver.iterations,
                    result.verification.pass,
                ));
            }
            Err(err) => {
                let status = err
                    .downcast_ref::<ExitClass>()
                    .map(|c| match c.code() {
                        2 => "infeasible",
                        3 => "solver_failure",
                        4 => "verification_failure",
                        _ => "error",
                    })
                    .unwrap_or("error");
                if verbosity >= 1 {
                    eprintln!("sweep: divisions {d}: {err:#}");
                }
                table.push_str(&format!("{d},,{status},,,,,,\n"));
            }
        }
    }
    let path = out.join(&config.output.sweep_csv);
    std::fs::write(&path, &table)?;
    print!("{table}");
    Ok(())
}

pub fn report(result_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(result_path)
        .with_context(|| format!("cannot read result {}", result_path.display()))?;
    let result: AnalysisResult = serde_json::from_str(&text).context("invalid result file")?;
    println!("{}", summary_line(&result));
    println!(
        "  mode {} ({:?}{}), delta {:.1e}, {} vertices, objective {:.6e}",
        result.mode,
        result.variant,
        if result.preset_reduced { ", preset-reduced" } else { "" },
        result.delta,
        result.mesh.vertices,
        result.solver.objective,
    );
    println!(
        "  residuals: blocks {:.3e}, linear {:.3e}; dual bound {:.6e}; {} iterations",
        result.solver.max_block_residual,
        result.solver.max_linear_residual,
        result.solver.dual_objective,
        result.solver.iterations,
    );
    println!(
        "  verification: hji max eig {:.3e}, {} / {} trajectory violations{}",
        result.verification.hji_max_eigenvalue,
        result.verification.trajectory_violations,
        result.verification.trajectory_trials,
        if result.rigorous { "" } else { " (sampled bounds: NOT certified)" },
    );
    Ok(())
}

fn headline_label(h: &Headline) -> &'static str {
    match h {
        Headline::L2Gain { .. } => "gamma",
        Headline::InputPassivity { .. } => "nu",
        Headline::OutputPassivity { .. } => "rho",
        Headline::Cone { .. } => "cone",
        Headline::DegenerateCone { .. } => "d",
        Headline::Feasibility => "feasible",
    }
}

fn headline_values(h: &Headline) -> (String, String) {
    match h {
        Headline::L2Gain { gamma } => (gamma.to_string(), String::new()),
        Headline::InputPassivity { nu } => (nu.to_string(), String::new()),
        Headline::OutputPassivity { rho } => (rho.to_string(), String::new()),
        Headline::Cone { a, b } => (a.to_string(), b.to_string()),
        Headline::DegenerateCone { d } => (d.to_string(), String::new()),
        Headline::Feasibility => (String::new(), String::new()),
    }
}

fn headline_text(h: &Headline) -> String {
    match h {
        Headline::L2Gain { gamma } => format!("L2 gain gamma = {gamma:.6}"),
        Headline::InputPassivity { nu } => format!("input passivity nu = {nu:.6}"),
        Headline::OutputPassivity { rho } => format!("output passivity rho = {rho:.6}"),
        Headline::Cone { a, b } => format!("cone(a={a:.3}, b={b:.3})"),
        Headline::DegenerateCone { d } => format!("degenerate cone, d = {d:.6}"),
        Headline::Feasibility => "QSR feasibility certified".into(),
    }
}

fn summary_line(result: &AnalysisResult) -> String {
    format!(
        "{}, {} simplices, {}",
        headline_text(&result.headline),
        result.mesh.simplices,
        if result.verification.pass { "verified" } else { "NOT verified" },
    )
}
