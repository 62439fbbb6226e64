//! Experiment driver: command-line argument handling, parameter sweeps,
//! and deterministic CSV / summary artifacts for batch runs.
//!
//! A run produces `energy.csv` (per-slab end-time energy), `error.csv`
//! (nodal and accumulated errors against the analytic fixture), `iters.csv`
//! (solver iterations and final dual norms per slab), `adapt.csv` (one row
//! per adaptation round) and `summary.txt`. Sweeps repeat the run with one
//! configuration key overridden and append observed convergence orders to
//! the summary when a log-log fit is possible.

use crate::adaptivity::{adapt_slab, AdaptConfig, Discretization};
use crate::config::{convergence_fit, parse_config, preset, ConfigError, RunConfig};
use crate::fespace::{dof_layout, DegreeVector, SpatialField};
use crate::mesh::{build_mesh, MeshSpec};
use crate::solver::{SolverConfig, ToleranceMode};
use crate::timeloop::{
    end_trace, energy, l2_project_spatial, make_tm_mode, make_verwer, run_fixed_space,
    slab_error_norms, AnalyticSolution, RunOptions,
};
use clap::Parser;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Command-line arguments of the batch driver.
#[derive(Debug, Parser)]
#[command(name = "stdg", about = "space-time Galerkin Maxwell solver")]
pub struct CliArgs {
    /// Path to a JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Name of a built-in preset (alternative to --config).
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory (overrides the configuration's `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Repeat the run over comma-separated values: KEY=v1,v2,...
    #[arg(long)]
    pub sweep: Option<String>,
    /// Echo the effective configuration and exit without solving.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("exactly one of --config or --preset is required")]
    NoConfig,
    #[error("malformed --sweep, expected KEY=v1,v2,...")]
    BadSweep,
    #[error("mesh construction failed: {0}")]
    Mesh(String),
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Resolve the effective configuration from --config / --preset.
pub fn load_config(args: &CliArgs) -> Result<RunConfig, CliError> {
    match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(parse_config(&text)?)
        }
        (None, Some(name)) => Ok(preset(name)?),
        _ => Err(CliError::NoConfig),
    }
}

/// Override one configuration key (dotted paths reach nested sections) with
/// a JSON-parsed value, then re-validate the whole document.
pub fn apply_override(cfg: &RunConfig, key: &str, value: &str) -> Result<RunConfig, ConfigError> {
    let mut doc = serde_json::to_value(cfg).expect("config serializes");
    let mut slot = &mut doc;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| ConfigError::Parse(format!("unknown sweep key `{key}`")))?;
    }
    *slot = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    parse_config(&doc.to_string())
}

fn analytic_for(cfg: &RunConfig) -> Option<AnalyticSolution> {
    match cfg.fixture.as_str() {
        "tm_mode" => Some(make_tm_mode(cfg.tm_m, cfg.tm_n)),
        "verwer" => Some(make_verwer(cfg.epsilon)),
        _ => None,
    }
}

fn mesh_spec(cfg: &RunConfig) -> MeshSpec {
    MeshSpec {
        box_size: cfg.box_size,
        coarse: cfg.coarse,
        eps: cfg.epsilon,
        mu: cfg.mu,
        regions: cfg.regions.clone(),
    }
}

fn broadcast_levels(cfg: &RunConfig, n: usize) -> Vec<u8> {
    match cfg.temporal_levels.len() {
        0 => vec![0; n],
        1 => vec![cfg.temporal_levels[0]; n],
        _ => {
            let mut v = cfg.temporal_levels.clone();
            v.resize(n, *v.last().unwrap());
            v
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // full-precision decimal form keeps the CSVs bit-identical across runs
    format!("{v:.17e}")
}

/// Numbers collected from one completed run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dt: f64,
    pub n_slabs: usize,
    pub final_energy: f64,
    pub energy_drift: f64,
    pub accumulated_error: f64,
    pub max_nodal_error: f64,
    pub total_iterations: usize,
    pub dof: usize,
    pub eta: Option<f64>,
    pub solver_ok: bool,
}

fn run_fixed(cfg: &RunConfig, dir: &Path) -> Result<RunSummary, CliError> {
    let mesh = Arc::new(build_mesh(&mesh_spec(cfg)).map_err(|e| CliError::Mesh(e.to_string()))?);
    let n = mesh.n_elements();
    let levels = broadcast_levels(cfg, n);
    let degrees = vec![
        DegreeVector {
            p_t: cfg.p_t,
            p: cfg.p,
        };
        n
    ];
    let dt = cfg
        .dt
        .unwrap_or_else(|| crate::timeloop::default_dt(&mesh, &degrees));
    let n_slabs = (cfg.t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let analytic = analytic_for(cfg);
    let opts = RunOptions {
        t_end: cfg.t_end,
        n_slabs,
        dissipation_c: cfg.dissipation_c,
        solver: SolverConfig {
            restart: cfg.solver.restart,
            max_iterations: cfg.solver.max_iterations,
            mode: ToleranceMode::Exact {
                rel_tol: cfg.solver.rel_tol,
            },
        },
        eta_budget: cfg.solver.eta_budget,
        warm_start: true,
        compute_errors: analytic.is_some(),
    };
    let trace = run_fixed_space(mesh.clone(), levels.clone(), degrees.clone(), analytic.as_ref(), &opts);

    let dt_eff = cfg.t_end / n_slabs as f64;
    let mut energy_csv = String::from("t,energy\n");
    let _ = writeln!(
        energy_csv,
        "{},{}",
        fmt_f64(0.0),
        fmt_f64(trace.initial_energy)
    );
    let mut error_csv = String::from("t,nodal_error,accumulated_error\n");
    let _ = writeln!(
        error_csv,
        "{},{},{}",
        fmt_f64(0.0),
        fmt_f64(trace.initial_error),
        fmt_f64(0.0)
    );
    let mut iters_csv = String::from("slab,iterations,dual_e,dual_h,converged\n");
    let mut acc_sq = 0.0;
    let mut solver_ok = true;
    for (s, rec) in trace.records.iter().enumerate() {
        acc_sq += rec.slab_error_sq;
        let _ = writeln!(energy_csv, "{},{}", fmt_f64(rec.t_end), fmt_f64(rec.energy));
        let _ = writeln!(
            error_csv,
            "{},{},{}",
            fmt_f64(rec.t_end),
            fmt_f64(rec.nodal_error),
            fmt_f64(acc_sq.max(0.0).sqrt())
        );
        let _ = writeln!(
            iters_csv,
            "{},{},{},{},{}",
            s,
            rec.report.iterations,
            fmt_f64(rec.report.dual_e),
            fmt_f64(rec.report.dual_h),
            rec.report.converged
        );
        solver_ok &= rec.report.converged;
    }
    write_file(&dir.join("energy.csv"), &energy_csv)?;
    write_file(&dir.join("error.csv"), &error_csv)?;
    write_file(&dir.join("iters.csv"), &iters_csv)?;
    write_file(&dir.join("adapt.csv"), "slab,round,eta,dof\n")?;

    // slab count times per-slab unknowns
    let part = crate::mesh::set_temporal_levels(0.0, dt_eff, levels);
    let space = crate::fespace::SpaceDescriptor::new(mesh, part, degrees);
    let dof = dof_layout(&space).trial_total * n_slabs;

    Ok(RunSummary {
        dt: dt_eff,
        n_slabs,
        final_energy: trace.final_energy(),
        energy_drift: trace
            .records
            .iter()
            .map(|r| (r.energy - trace.initial_energy).abs())
            .fold(0.0, f64::max),
        accumulated_error: trace.accumulated_error(),
        max_nodal_error: trace.max_nodal_error(),
        total_iterations: trace.total_iterations,
        dof,
        eta: trace.eta_it,
        solver_ok,
    })
}

fn run_adaptive(cfg: &RunConfig, dir: &Path) -> Result<RunSummary, CliError> {
    let mesh = Arc::new(build_mesh(&mesh_spec(cfg)).map_err(|e| CliError::Mesh(e.to_string()))?);
    let n = mesh.n_elements();
    let mut disc = Discretization {
        mesh: mesh.clone(),
        levels: broadcast_levels(cfg, n),
        degrees: vec![
            DegreeVector {
                p_t: cfg.p_t,
                p: cfg.p,
            };
            n
        ],
    };
    let dt = cfg.dt.unwrap_or_else(|| {
        crate::timeloop::default_dt(&mesh, &disc.degrees)
    });
    let n_slabs = (cfg.t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let dt_eff = cfg.t_end / n_slabs as f64;
    let analytic = analytic_for(cfg);
    let acfg = AdaptConfig {
        tol: cfg.adaptivity.tol,
        theta: cfg.adaptivity.theta,
        max_rounds: cfg.adaptivity.max_rounds,
        dissipation_c: cfg.dissipation_c,
        solver: SolverConfig {
            restart: cfg.solver.restart,
            max_iterations: cfg.solver.max_iterations,
            mode: ToleranceMode::Exact {
                rel_tol: cfg.solver.rel_tol,
            },
        },
    };

    // initial trace on the starting discretization
    let space0 = disc.space(0.0, dt_eff);
    let layout0 = dof_layout(&space0);
    let trace0 = match &analytic {
        Some(a) => l2_project_spatial(&space0, &layout0, &|field, x| {
            if field == crate::residual::FIELD_E {
                (a.e)(x, 0.0)
            } else {
                (a.h)(x, 0.0)
            }
        }),
        None => SpatialField::zeros(&layout0),
    };
    let initial_energy = energy(&space0, &layout0, &trace0);

    let mut energy_csv = String::from("t,energy\n");
    let _ = writeln!(energy_csv, "{},{}", fmt_f64(0.0), fmt_f64(initial_energy));
    let mut error_csv = String::from("t,nodal_error,accumulated_error\n");
    let mut iters_csv = String::from("slab,iterations,dual_e,dual_h,converged\n");
    let mut adapt_csv = String::from("slab,round,eta,dof\n");

    let mut prev_space = space0;
    let mut prev_layout = layout0;
    let mut prev_trace = trace0;
    let mut acc_sq = 0.0;
    let mut max_eta: f64 = 0.0;
    let mut max_nodal: f64 = 0.0;
    let mut max_drift: f64 = 0.0;
    let mut total_iterations = 0;
    let mut total_dof = 0;
    let mut solver_ok = true;
    let mut final_energy = initial_energy;

    for s in 0..n_slabs {
        let t0 = s as f64 * dt_eff;
        let out = adapt_slab(
            disc,
            (t0, t0 + dt_eff),
            (&prev_space, &prev_layout, &prev_trace),
            analytic.as_ref(),
            &acfg,
        );
        for r in &out.rounds {
            let _ = writeln!(adapt_csv, "{},{},{},{}", s, r.round, fmt_f64(r.eta), r.dof);
        }
        max_eta = max_eta.max(out.eta);
        total_iterations += out.coarse_iterations + out.fine_iterations;
        total_dof += out.layout.trial_total;
        solver_ok &= out.converged || out.eta <= acfg.tol;

        let trace = end_trace(&out.layout, &out.state);
        final_energy = energy(&out.space, &out.layout, &trace);
        max_drift = max_drift.max((final_energy - initial_energy).abs());
        let _ = writeln!(
            energy_csv,
            "{},{}",
            fmt_f64(t0 + dt_eff),
            fmt_f64(final_energy)
        );
        if let Some(a) = &analytic {
            let (nodal, slab_sq) = slab_error_norms(&out.space, &out.layout, &out.state, a);
            acc_sq += slab_sq;
            max_nodal = max_nodal.max(nodal);
            let _ = writeln!(
                error_csv,
                "{},{},{}",
                fmt_f64(t0 + dt_eff),
                fmt_f64(nodal),
                fmt_f64(acc_sq.max(0.0).sqrt())
            );
        }
        let _ = writeln!(
            iters_csv,
            "{},{},{},{},{}",
            s,
            out.coarse_iterations + out.fine_iterations,
            fmt_f64(out.eta),
            fmt_f64(0.0),
            out.converged
        );
        prev_space = out.space;
        prev_layout = out.layout;
        prev_trace = trace;
        disc = out.disc;
    }

    write_file(&dir.join("energy.csv"), &energy_csv)?;
    write_file(&dir.join("error.csv"), &error_csv)?;
    write_file(&dir.join("iters.csv"), &iters_csv)?;
    write_file(&dir.join("adapt.csv"), &adapt_csv)?;

    Ok(RunSummary {
        dt: dt_eff,
        n_slabs,
        final_energy,
        energy_drift: max_drift,
        accumulated_error: acc_sq.max(0.0).sqrt(),
        max_nodal_error: max_nodal,
        total_iterations,
        dof: total_dof,
        eta: Some(max_eta),
        solver_ok,
    })
}

/// Execute one run, writing all artifacts into `dir`.
pub fn run_single(cfg: &RunConfig, dir: &Path) -> Result<RunSummary, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_file(&dir.join("config.json"), &cfg.to_canonical_json())?;
    if cfg.adaptivity.enabled {
        run_adaptive(cfg, dir)
    } else {
        run_fixed(cfg, dir)
    }
}

fn summary_block(label: &str, s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run: {label}");
    let _ = writeln!(out, "  dt = {:.6e}, slabs = {}", s.dt, s.n_slabs);
    let _ = writeln!(out, "  final energy          = {:.12e}", s.final_energy);
    let _ = writeln!(out, "  max energy drift      = {:.12e}", s.energy_drift);
    let _ = writeln!(out, "  accumulated L2 error  = {:.12e}", s.accumulated_error);
    let _ = writeln!(out, "  max nodal error       = {:.12e}", s.max_nodal_error);
    let _ = writeln!(out, "  total iterations      = {}", s.total_iterations);
    let _ = writeln!(out, "  trial unknowns        = {}", s.dof);
    if let Some(eta) = s.eta {
        let _ = writeln!(out, "  error estimate eta    = {:.12e}", eta);
    }
    let _ = writeln!(out, "  solver ok             = {}", s.solver_ok);
    out
}

/// Top-level experiment driver. Returns the process exit code: 0 on
/// success, 1 if any solve failed to converge (artifacts are still written).
pub fn run_experiment(args: &CliArgs) -> Result<i32, CliError> {
    let base = load_config(args)?;
    if args.dry_run {
        println!("{}", base.to_canonical_json());
        return Ok(0);
    }
    let out_dir: PathBuf = args
        .out
        .clone()
        .or_else(|| base.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut summary = String::new();
    let mut ok = true;

    match &args.sweep {
        None => {
            let s = run_single(&base, &out_dir)?;
            ok &= s.solver_ok;
            summary.push_str(&summary_block("single", &s));
        }
        Some(spec) => {
            let (key, list) = spec.split_once('=').ok_or(CliError::BadSweep)?;
            let values: Vec<&str> = list.split(',').filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(CliError::BadSweep);
            }
            let mut acc_pts = Vec::new();
            let mut nodal_pts = Vec::new();
            for (i, v) in values.iter().enumerate() {
                let cfg = apply_override(&base, key, v)?;
                let dir = out_dir.join(format!("sweep_{i}"));
                let s = run_single(&cfg, &dir)?;
                ok &= s.solver_ok;
                summary.push_str(&summary_block(&format!("{key}={v}"), &s));
                if s.accumulated_error > 0.0 {
                    acc_pts.push((s.dt, s.accumulated_error));
                }
                if s.max_nodal_error > 0.0 {
                    nodal_pts.push((s.dt, s.max_nodal_error));
                }
            }
            if let Ok((order, res)) = convergence_fit(&acc_pts) {
                let _ = writeln!(
                    summary,
                    "observed L2 order vs dt    = {order:.4} (fit residual {res:.2e})"
                );
            }
            if let Ok((order, res)) = convergence_fit(&nodal_pts) {
                let _ = writeln!(
                    summary,
                    "observed nodal order vs dt = {order:.4} (fit residual {res:.2e})"
                );
            }
        }
    }

    write_file(&out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(if ok { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_reaches_nested_keys() {
        let base = preset("tm").unwrap();
        let cfg = apply_override(&base, "solver.rel_tol", "1e-8").unwrap();
        assert_eq!(cfg.solver.rel_tol, 1e-8);
        let cfg = apply_override(&base, "dt", "0.125").unwrap();
        assert_eq!(cfg.dt, Some(0.125));
        assert!(apply_override(&base, "no_such", "1").is_err());
        // overrides are re-validated
        assert!(apply_override(&base, "epsilon", "-2.0").is_err());
    }

    #[test]
    fn fixed_run_writes_deterministic_artifacts() {
        let mut cfg = preset("verwer").unwrap();
        cfg.t_end = 0.25;
        cfg.dt = Some(0.25);
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let s1 = run_single(&cfg, &a).unwrap();
        let s2 = run_single(&cfg, &b).unwrap();
        assert!(s1.solver_ok && s2.solver_ok);
        for f in ["energy.csv", "error.csv", "iters.csv", "config.json"] {
            let x = std::fs::read_to_string(a.join(f)).unwrap();
            let y = std::fs::read_to_string(b.join(f)).unwrap();
            assert_eq!(x, y, "artifact {f} must be bit-identical");
            assert!(!x.is_empty());
        }
        // driven problem is spatially exact at p = 2, so errors are tiny
        assert!(s1.accumulated_error < 1e-3, "{}", s1.accumulated_error);
    }

    #[test]
    fn sweep_summary_reports_order() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = preset("verwer").unwrap();
        cfg.t_end = 0.25;
        cfg.p = [1, 0, 1];
        cfg.out_dir = Some(tmp.path().display().to_string());
        let path = tmp.path().join("cfg.json");
        std::fs::write(&path, cfg.to_canonical_json()).unwrap();
        let args = CliArgs {
            config: Some(path),
            preset: None,
            out: None,
            sweep: Some("dt=0.25,0.125,0.0625".into()),
            dry_run: false,
        };
        let code = run_experiment(&args).unwrap();
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
        assert!(text.contains("observed L2 order vs dt"), "{text}");
        assert!(tmp.path().join("sweep_2/energy.csv").exists());
    }

    #[test]
    fn dry_run_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let args = CliArgs {
            config: None,
            preset: Some("tm".into()),
            out: Some(tmp.path().join("never")),
            sweep: None,
            dry_run: true,
        };
        let code = run_experiment(&args).unwrap();
        assert_eq!(code, 0);
        assert!(!tmp.path().join("never").exists());
    }

    #[test]
    fn adaptive_run_produces_adapt_log() {
        let mut cfg = preset("verwer-adaptive").unwrap();
        cfg.coarse = [1, 1, 1];
        cfg.t_end = 0.25;
        cfg.dt = Some(0.25);
        cfg.adaptivity.tol = 1e-4;
        cfg.adaptivity.max_rounds = 1;
        let tmp = tempfile::tempdir().unwrap();
        let s = run_single(&cfg, tmp.path()).unwrap();
        let adapt = std::fs::read_to_string(tmp.path().join("adapt.csv")).unwrap();
        assert!(adapt.lines().count() >= 2, "{adapt}");
        assert!(s.eta.unwrap() >= 0.0);
    }
}
