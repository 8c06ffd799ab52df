//! Batch front end: load a JSON experiment config, run the requested
//! experiment, and emit machine-readable outputs (report.json plus,
//! depending on the experiment, profiles.csv, estimates.csv, and
//! barriers.json). Exit codes: 0 success, 2 validation, 3
//! non-convergence, 4 I/O.

pub mod config;
pub mod expr;
pub mod output;

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::barriers::{
    abp_bound, distance_barrier, distance_barrier_delta, exterior_sphere_barrier,
    global_supersolution, nondegeneracy_constant, surface_distance, verify_supersolution,
    BarrierSide,
};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::reglab::{
    boundary_growth_check, deadcore_exponent, default_radii, fit_exponent, node_at,
    oscillation_profile, pointwise_alpha, scale_equivariance_test, sharp_alpha,
    ExponentEstimate, OscOrder, OscillationProfile,
};
use crate::solver::{solve_any, SolveReport};
use config::{ExperimentConfig, ExperimentKind};
use output::{estimates_csv, profiles_csv, write_error_json, write_json};

/// Command-line level inputs of a run, independent of the config file.
#[derive(Clone, Debug)]
pub struct RunInputs {
    pub expected: ExperimentKind,
    pub config_path: PathBuf,
    pub out_override: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

/// Write report.json and, when nonempty, profiles.csv and estimates.csv.
pub fn emit_report(
    report: &serde_json::Value,
    profiles: &[OscillationProfile],
    estimates: &[(usize, u8, ExponentEstimate)],
    out_dir: &Path,
) -> Result<()> {
    write_json(&out_dir.join("report.json"), report)?;
    if !profiles.is_empty() {
        output::atomic_write(&out_dir.join("profiles.csv"), profiles_csv(profiles).as_bytes())?;
    }
    if !estimates.is_empty() {
        output::atomic_write(
            &out_dir.join("estimates.csv"),
            estimates_csv(estimates).as_bytes(),
        )?;
    }
    Ok(())
}

fn problem_summary(spec: &ProblemSpec) -> serde_json::Value {
    json!({
        "dim": spec.grid.dim(),
        "h": spec.grid.h,
        "n_nodes": spec.grid.n_nodes,
        "interior_nodes": spec.grid.interior.len(),
        "dirichlet_nodes": spec.grid.dirichlet.len(),
        "p_min": spec.law.exponents.p_min,
        "p_max": spec.law.exponents.p_max,
        "q_min": spec.law.exponents.q_min,
        "q_max": spec.law.exponents.q_max,
        "a_sup": spec.law.exponents.a_sup,
        "f_sup": spec.f_sup(),
        "g_sup": spec.g_sup(),
        "variant": spec.variant.name(),
    })
}

fn base_report(inputs: &RunInputs, spec: Option<&ProblemSpec>) -> serde_json::Value {
    let mut v = json!({
        "schema_version": config::SCHEMA_VERSION,
        "experiment": inputs.expected.name(),
        "config_path": inputs.config_path.display().to_string(),
        "threads": inputs.threads,
        "seed": inputs.seed,
    });
    if let Some(spec) = spec {
        v["problem"] = problem_summary(spec);
    }
    v
}

struct ProbeOutput {
    profiles: Vec<OscillationProfile>,
    estimates: Vec<(usize, u8, ExponentEstimate)>,
    details: serde_json::Value,
}

/// Oscillation profiles and exponent fits at the configured centers of a
/// solved field.
fn run_probes(
    spec: &ProblemSpec,
    u: &crate::grid::GridFunction,
    probe: &config::ProbeConfig,
) -> Result<ProbeOutput> {
    let mut profiles = Vec::new();
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    for (id, center) in probe.centers.iter().enumerate() {
        let radii = match &probe.radii {
            Some(r) => r.clone(),
            None => default_radii(spec, center)?,
        };
        let prof = oscillation_profile(u, center, &radii)?;
        let mut entry = json!({
            "center_id": id,
            "center": center,
            "radii": radii,
            "grad_norm": prof.grad_norm,
        });
        for (order, tag) in [(OscOrder::Zeroth, 0u8), (OscOrder::First, 1u8)] {
            match fit_exponent(&prof, order) {
                Ok(est) => {
                    entry[format!("fit_order_{tag}")] = serde_json::to_value(est)?;
                    if tag == 1 {
                        entry["alpha_measured"] = json!(est.holder_alpha());
                    }
                    estimates.push((id, tag, est));
                }
                Err(Error::DegenerateFit(msg)) => {
                    entry[format!("fit_order_{tag}")] = json!({ "skipped": msg });
                }
                Err(e) => return Err(e),
            }
        }
        let node = node_at(&spec.grid, center)?;
        entry["pointwise_alpha"] = json!(pointwise_alpha(spec.law.exponents.p[node])?);
        rows.push(entry);
        profiles.push(prof);
    }
    let sharp = sharp_alpha(
        probe.alpha_f,
        spec.law.exponents.p_max,
        spec.beta_g,
        probe.alpha_f_attained,
    )?;
    Ok(ProbeOutput {
        profiles,
        estimates,
        details: json!({
            "sharp_alpha": sharp,
            "alpha_f": probe.alpha_f,
            "alpha_f_attained": probe.alpha_f_attained,
            "beta_g": spec.beta_g,
            "centers": rows,
        }),
    })
}

fn require_variant(spec: &ProblemSpec, name: &str) -> Result<()> {
    if spec.variant.name() != name {
        return Err(Error::Validation(format!(
            "this command needs a '{name}' variant problem, config declares '{}'",
            spec.variant.name()
        )));
    }
    Ok(())
}

fn solve_with_report(
    spec: &ProblemSpec,
    cfg: &ExperimentConfig,
) -> Result<(crate::grid::GridFunction, SolveReport)> {
    solve_any(spec, &cfg.solve)
}

fn dispatch(inputs: &RunInputs, cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let spec = cfg.problem.build()?;
    let mut report = base_report(inputs, Some(&spec));

    match inputs.expected {
        ExperimentKind::Validate => {
            report["valid"] = json!(true);
            emit_report(&report, &[], &[], out_dir)
        }
        ExperimentKind::Solve => {
            let (u, solve_rep) = solve_with_report(&spec, cfg)?;
            report["report"] = serde_json::to_value(&solve_rep)?;
            report["sup_u"] = json!(u.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            report["min_u"] = json!(u.values.iter().cloned().fold(f64::INFINITY, f64::min));
            emit_report(&report, &[], &[], out_dir)
        }
        ExperimentKind::Probe => {
            let probe = cfg.probe.as_ref().ok_or_else(|| {
                Error::Validation("probe experiments need a 'probe' section".into())
            })?;
            let (u, solve_rep) = solve_with_report(&spec, cfg)?;
            let out = run_probes(&spec, &u, probe)?;
            report["report"] = serde_json::to_value(&solve_rep)?;
            report["probe"] = out.details;
            emit_report(&report, &out.profiles, &out.estimates, out_dir)
        }
        ExperimentKind::Deadcore => {
            require_variant(&spec, "deadcore")?;
            let (u, solve_rep) = solve_with_report(&spec, cfg)?;
            let (sigma, beta) = match &spec.variant {
                crate::model::Variant::DeadCore { sigma, .. } => (
                    *sigma,
                    deadcore_exponent(spec.law.exponents.p_max, *sigma)?,
                ),
                _ => unreachable!(),
            };
            report["report"] = serde_json::to_value(&solve_rep)?;
            report["deadcore"] = json!({
                "sigma": sigma,
                "beta_theory": beta,
                "undershoot": solve_rep.deadcore_undershoot,
                "core_nodes": spec
                    .grid
                    .interior
                    .iter()
                    .filter(|&&i| u.values[i] <= 10.0 * cfg.solve.tol_residual)
                    .count(),
            });
            let (profiles, estimates) = match &cfg.probe {
                Some(probe) => {
                    let out = run_probes(&spec, &u, probe)?;
                    report["probe"] = out.details;
                    (out.profiles, out.estimates)
                }
                None => (Vec::new(), Vec::new()),
            };
            emit_report(&report, &profiles, &estimates, out_dir)
        }
        ExperimentKind::Obstacle => {
            require_variant(&spec, "obstacle")?;
            let (u, solve_rep) = solve_with_report(&spec, cfg)?;
            let phi = match &spec.variant {
                crate::model::Variant::Obstacle { phi } => phi,
                _ => unreachable!(),
            };
            let tol = 10.0 * cfg.solve.tol_residual;
            let mut active = 0usize;
            let mut min_gap = f64::INFINITY;
            for &i in &spec.grid.interior {
                let gap = u.values[i] - phi[i];
                min_gap = min_gap.min(gap);
                if gap <= tol {
                    active += 1;
                }
            }
            report["report"] = serde_json::to_value(&solve_rep)?;
            report["obstacle"] = json!({
                "active_nodes": active,
                "min_gap": min_gap,
            });
            let (profiles, estimates) = match &cfg.probe {
                Some(probe) => {
                    let out = run_probes(&spec, &u, probe)?;
                    report["probe"] = out.details;
                    (out.profiles, out.estimates)
                }
                None => (Vec::new(), Vec::new()),
            };
            emit_report(&report, &profiles, &estimates, out_dir)
        }
        ExperimentKind::Barriers => {
            let bcfg = cfg.barriers.clone().unwrap_or(config::BarrierRunConfig {
                x0: None,
                gamma: 0.5,
                r: 0.5,
                k_geom: 0.0,
                eta: None,
                exterior: None,
                m: None,
                c_abp: 1.0,
            });
            let mut barriers = serde_json::Map::new();

            let x0: Vec<f64> = bcfg.x0.clone().unwrap_or_else(|| {
                (0..spec.grid.dim())
                    .map(|k| 0.5 * (spec.grid.domain.lo[k] + spec.grid.domain.hi[k]))
                    .collect()
            });
            let (_, params) = global_supersolution(&spec, &x0)?;
            barriers.insert(
                "global_super".into(),
                json!({ "params": params, "verified": params.verify() }),
            );

            let (delta0, dparams) =
                distance_barrier_delta(&spec, bcfg.gamma, bcfg.r, bcfg.k_geom, bcfg.eta)?;
            let v = distance_barrier(&spec, delta0, bcfg.gamma, bcfg.r)?;
            let collar: Vec<usize> = spec
                .grid
                .interior
                .iter()
                .copied()
                .filter(|&i| {
                    let d = surface_distance(&spec, &spec.grid.node_point(i));
                    d > 0.0 && d <= delta0
                })
                .collect();
            let collar_check = if collar.is_empty() {
                json!({ "skipped": "no interior nodes inside the collar at this h" })
            } else {
                let chk = verify_supersolution(
                    &v,
                    &spec,
                    BarrierSide::Upper,
                    10.0 * spec.grid.h,
                    Some(&collar),
                )?;
                serde_json::to_value(&chk)?
            };
            barriers.insert(
                "distance".into(),
                json!({
                    "delta0": delta0,
                    "params": dparams,
                    "verified": dparams.verify(),
                    "collar_nodes": collar.len(),
                    "collar_check": collar_check,
                }),
            );

            if let Some(ext) = &bcfg.exterior {
                let (_, eparams) = exterior_sphere_barrier(&spec, &ext.z, &ext.x_z, ext.r)?;
                barriers.insert(
                    "exterior_sphere".into(),
                    json!({ "params": eparams, "verified": eparams.verify() }),
                );
            }

            let abp = abp_bound(&spec, bcfg.c_abp)?;
            barriers.insert("abp".into(), json!({ "c_user": bcfg.c_abp, "bound": abp }));

            let m = bcfg.m.or_else(|| {
                let inf_f = spec
                    .grid
                    .interior
                    .iter()
                    .map(|&i| spec.f[i])
                    .fold(f64::INFINITY, f64::min);
                (inf_f > 0.0).then_some(inf_f)
            });
            match m {
                Some(m) => {
                    let root = nondegeneracy_constant(&spec, m)?;
                    barriers.insert("nondegeneracy".into(), json!({ "m": m, "root": root }));
                }
                None => {
                    barriers.insert(
                        "nondegeneracy".into(),
                        json!({ "skipped": "f has no positive interior lower bound; set barriers.m" }),
                    );
                }
            }

            let barriers = serde_json::Value::Object(barriers);
            write_json(&out_dir.join("barriers.json"), &barriers)?;
            report["barriers"] = barriers;
            emit_report(&report, &[], &[], out_dir)
        }
        ExperimentKind::Scaling => {
            let scfg = cfg.scaling.as_ref().ok_or_else(|| {
                Error::Validation("scaling experiments need a 'scaling' section".into())
            })?;
            let (mismatch, solve_rep) =
                scale_equivariance_test(&spec, scfg.kappa, scfg.tau, &scfg.x0, &cfg.solve)?;
            report["report"] = serde_json::to_value(&solve_rep)?;
            report["scaling"] = json!({
                "kappa": scfg.kappa,
                "tau": scfg.tau,
                "x0": scfg.x0,
                "mismatch": mismatch,
            });
            emit_report(&report, &[], &[], out_dir)
        }
    }
}

/// Growth-envelope check helper used by half-space experiments through
/// the library; exposed here so the CLI surface and the acceptance tests
/// share one code path.
pub fn growth_check_json(
    u: &crate::grid::GridFunction,
    spec: &ProblemSpec,
    delta: f64,
    gamma: f64,
) -> Result<serde_json::Value> {
    let chk = boundary_growth_check(u, spec, delta, gamma)?;
    Ok(json!({
        "pass": chk.pass,
        "checked": chk.checked,
        "worst_excess": chk.worst_excess,
        "tolerance": chk.tolerance,
    }))
}

/// Run one experiment end to end and return the process exit code.
/// Always attempts to leave a diagnostic in the output directory: on
/// non-convergence the partial solve report is still written.
pub fn run(inputs: &RunInputs) -> i32 {
    let text = match std::fs::read_to_string(&inputs.config_path) {
        Ok(t) => t,
        Err(e) => {
            let err = Error::Io(e);
            eprintln!("degenlab: {err}");
            let dir = inputs.out_override.clone().unwrap_or_else(|| PathBuf::from("."));
            write_error_json(&dir, &err);
            return err.exit_code();
        }
    };
    let out_guess = inputs.out_override.clone().unwrap_or_else(|| PathBuf::from("."));
    let cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("degenlab: {e}");
            write_error_json(&out_guess, &e);
            return e.exit_code();
        }
    };
    let out_dir = inputs
        .out_override
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        let err = Error::Io(e);
        eprintln!("degenlab: {err}");
        return err.exit_code();
    }
    if cfg.experiment != inputs.expected {
        let e = Error::Validation(format!(
            "config declares experiment '{}', command expects '{}'",
            cfg.experiment.name(),
            inputs.expected.name()
        ));
        eprintln!("degenlab: {e}");
        write_error_json(&out_dir, &e);
        return e.exit_code();
    }
    match dispatch(inputs, &cfg, &out_dir) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("degenlab: {e}");
            // Non-convergence still carries a usable report.
            if let Error::NonConvergence {
                report: Some(rep), ..
            } = &e
            {
                let mut doc = base_report(inputs, None);
                if let Ok(val) = serde_json::to_value(rep.as_ref()) {
                    doc["report"] = val;
                }
                doc["converged"] = json!(false);
                let _ = write_json(&out_dir.join("report.json"), &doc);
            }
            write_error_json(&out_dir, &e);
            e.exit_code()
        }
    }
}
