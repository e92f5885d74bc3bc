//! Run orchestration behind the command line: each command writes its files
//! into the configured output directory and reports pass/fail.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::config::{InitialValue, ProbeKind, RunConfig};
use crate::discretization::Discretization;
use crate::driver::{compare_static_moving, simulate_from, Monitoring, Simulation};
use crate::error::{Error, Result};
use crate::mesh::{all_dirichlet, Mesh, Point};
use crate::output::{fields_csv, indicators_csv, solve_report, vtk, vtk_name, write_file};
use crate::probes::{
    appendix_probe, apriori_diagnostics, coercivity_probe, inconsistency_probe, sup_samples, velocity_sups, RateRow,
};
use crate::scenarios::{convergence_study, initial_interpolant, initial_projection};
use crate::time::Kinematics;

/// Quadrature exactness beyond 2p reserved for the geometric factors.
pub const GEO_ALLOWANCE: usize = 4;

/// Element samples drawn by the appendix probe.
pub const APPENDIX_ELEMENTS: usize = 20;

/// Random fields per coercivity case.
pub const COERCIVITY_SAMPLES: usize = 200;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    /// One line per check, printed by the CLI.
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Structured n×n mesh with Dirichlet boundary.
pub fn discretization(cfg: &RunConfig, n: usize) -> Result<Discretization> {
    Discretization::new(Mesh::structured_unit_square(n, cfg.diagonal, all_dirichlet)?, cfg.p, GEO_ALLOWANCE)
}

/// S₀ = exp(T · sup|∇·Ṽ|), sup over a 100×100 grid and the final point positions.
pub fn reliability_factor(sim: &Simulation, cfg: &RunConfig) -> Result<f64> {
    let sc = cfg.build_scenario()?;
    let t = sim.final_state.t;
    let extra: Vec<Point> = sim.final_state.vol.iter().map(|q| q.position()).collect();
    let (_, dv) = velocity_sups(&sc.vel, t, &sup_samples(100, &extra));
    Ok((dv * t).exp())
}

/// Runs the configured scenario and returns the discretization with its record.
pub fn run_simulation(cfg: &RunConfig) -> Result<(Discretization, Simulation)> {
    let sc = cfg.build_scenario()?;
    let d = discretization(cfg, cfg.n)?;
    let tl = cfg.time_loop(d.constants.trace);
    let u0 = match cfg.initial {
        InitialValue::Projection => initial_projection(&d, &sc)?,
        InitialValue::Interpolant => initial_interpolant(&d, &sc),
    };
    let sim = simulate_from(&d, &sc, tl, Kinematics::Moving, Monitoring::default(), u0)?;
    Ok((d, sim))
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let (d, sim) = run_simulation(cfg)?;
    let s0 = reliability_factor(&sim, cfg)?;
    let alpha = cfg.alpha_value(d.constants.trace);
    let dir = &cfg.output;
    let mut files = vec![
        write_file(dir, "config.txt", &cfg.to_string())?,
        write_file(dir, "fields.csv", &fields_csv(&d, &sim.levels))?,
        write_file(dir, "indicators.csv", &indicators_csv(&d, &sim.levels))?,
        write_file(dir, "report.txt", &solve_report(&d, &sim, alpha, s0))?,
        write_file(dir, "flow.csv", &sim.final_state.to_csv())?,
        write_file(dir, "mesh.txt", &d.mesh.to_text())?,
    ];
    for l in &sim.levels {
        files.push(write_file(dir, &vtk_name(l.step), &vtk(&d, l, &sim.scenario))?);
    }
    let last = sim.last();
    let mut summary = format!("solve {}: {} steps to t={:.6e}", sim.scenario, cfg.steps, last.t);
    if let Some(e) = &last.errors {
        let _ = write!(summary, ", l2 error {:.6e}", e.l2);
    }
    summary.push('\n');
    Ok(Outcome { passed: true, summary, files })
}

pub fn converge(cfg: &RunConfig) -> Result<Outcome> {
    let sc = cfg.build_scenario()?;
    let c_t = discretization(cfg, cfg.sizes[0])?.constants.trace;
    let table = convergence_study(&sc, cfg.p, &cfg.sizes, cfg.time_loop(c_t), GEO_ALLOWANCE)?;
    let file = write_file(&cfg.output, "convergence.txt", &table.to_text())?;
    let rate = table.min_rate_l2().map_or("-".to_string(), |r| format!("{r:.3}"));
    Ok(Outcome {
        passed: true,
        summary: format!("converge {} p={}: min L2 rate {rate}\n", sc.name, cfg.p),
        files: vec![file],
    })
}

pub fn compare(cfg: &RunConfig) -> Result<Outcome> {
    let sc = cfg.build_scenario()?;
    let d = discretization(cfg, cfg.n)?;
    let c = compare_static_moving(&d, &sc, cfg.time_loop(d.constants.trace))?;
    let file = write_file(&cfg.output, "compare.txt", &c.summary())?;
    let passed = c.moving_is_more_accurate();
    Ok(Outcome {
        passed,
        summary: format!(
            "compare-static-moving: moving l2 {:.6e} static l2 {:.6e} {}\n",
            c.moving.l2,
            c.still.l2,
            if passed { "PASS" } else { "FAIL" }
        ),
        files: vec![file],
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn probe(cfg: &RunConfig, kind: ProbeKind) -> Result<Outcome> {
    match kind {
        ProbeKind::Coercivity => probe_coercivity(cfg),
        ProbeKind::Inconsistency => probe_inconsistency(cfg),
        ProbeKind::Appendix => probe_appendix(cfg),
        ProbeKind::Apriori => probe_apriori(cfg),
    }
}

/// NIPG must keep half the energy norm up to quadrature. SIPG must stay
/// positive, and above 0.2 once α ≥ 4·C_T. Runs the configured α, 2·C_T and 4·C_T.
fn probe_coercivity(cfg: &RunConfig) -> Result<Outcome> {
    let c_t = crate::probes::coercivity_setup(cfg.n, cfg.p, cfg.seed)?.0.constants.trace;
    let mut alphas = vec![cfg.alpha_value(c_t), 2.0 * c_t, 4.0 * c_t];
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut csv = String::from("n,p,theta,alpha,c_t,samples,min_ratio,max_ratio,pass\n");
    let mut summary = String::new();
    let mut passed = true;
    for alpha in alphas {
        let c = coercivity_probe(cfg.n, cfg.p, cfg.theta, alpha, COERCIVITY_SAMPLES, cfg.seed)?;
        let ok = match (cfg.theta < 0.0, alpha >= 4.0 * c_t) {
            (true, _) => c.min_ratio >= 0.45,
            (false, true) => c.min_ratio >= 0.2,
            (false, false) => c.min_ratio > 0.0,
        };
        passed &= ok;
        let _ = writeln!(
            csv,
            "{},{},{},{:.16e},{:.16e},{},{:.16e},{:.16e},{ok}",
            c.n, c.p, c.theta, c.alpha, c.c_t, c.samples, c.min_ratio, c.max_ratio
        );
        let _ = writeln!(
            summary,
            "probe coercivity theta={} alpha={alpha:.4}: min ratio {:.4} {}",
            cfg.theta,
            c.min_ratio,
            verdict(ok)
        );
    }
    let file = write_file(&cfg.output, "probe_coercivity.csv", &csv)?;
    Ok(Outcome { passed, summary, files: vec![file] })
}

/// Observed decay order of the defect must reach 0.9.
fn probe_inconsistency(cfg: &RunConfig) -> Result<Outcome> {
    let c_t = discretization(cfg, cfg.sizes[0])?.constants.trace;
    let rows = inconsistency_probe(&cfg.sizes, cfg.p, cfg.eps, cfg.alpha_value(c_t))?;
    let passed = rows.len() > 1 && rows.iter().filter_map(|r| r.rate).all(|r| r >= 0.9);
    let file = write_file(&cfg.output, "probe_inconsistency.csv", &rate_csv(&rows))?;
    let min = rows.iter().filter_map(|r| r.rate).fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        passed,
        summary: format!("probe inconsistency: min rate {min:.3} {}\n", verdict(passed)),
        files: vec![file],
    })
}

pub fn rate_csv(rows: &[RateRow]) -> String {
    let mut s = String::from("n,h,value,rate\n");
    for r in rows {
        let rate = r.rate.map_or(String::new(), |v| format!("{v:.16e}"));
        let _ = writeln!(s, "{},{:.16e},{:.16e},{rate}", r.n, r.h, r.value);
    }
    s
}

fn probe_appendix(cfg: &RunConfig) -> Result<Outcome> {
    let sc = cfg.build_scenario()?;
    let d = discretization(cfg, cfg.n)?;
    let elements = APPENDIX_ELEMENTS.min(d.n_elements());
    let rep = appendix_probe(&d, &sc.vel.mesh, cfg.dt, cfg.steps, cfg.substeps, elements, cfg.seed)?;
    let file = write_file(&cfg.output, "probe_appendix.csv", &rep.to_csv())?;
    let mut summary = String::new();
    for (i, name) in ["l2", "h1", "h2"].iter().enumerate() {
        let ok = rep.samples.iter().all(|s| s.holds(i));
        let _ = writeln!(summary, "probe appendix {name}: min slack {:.4e} {}", rep.min_slack()[i], verdict(ok));
    }
    Ok(Outcome { passed: rep.all_hold(), summary, files: vec![file] })
}

fn probe_apriori(cfg: &RunConfig) -> Result<Outcome> {
    let sc = cfg.build_scenario()?;
    let d = discretization(cfg, cfg.n)?;
    let rep = apriori_diagnostics(&d, &sc, cfg.time_loop(d.constants.trace))?;
    let file = write_file(&cfg.output, "probe_apriori.csv", &rep.to_csv())?;
    let passed = rep.holds();
    Ok(Outcome {
        passed,
        summary: format!("probe apriori theta={}: {} levels {}\n", rep.theta, rep.rows.len(), verdict(passed)),
        files: vec![file],
    })
}

/// Exit status: 0 success, 1 validation or check failure, 2 runtime failure.
pub fn exit_code(r: &Result<Outcome>) -> i32 {
    match r {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(e) if e.is_runtime() => 2,
        Err(_) => 1,
    }
}

/// Applies `MMDG_OUTPUT_DIR` when it is set and non-empty.
pub fn apply_env(cfg: &mut RunConfig, value: Option<String>) {
    if let Some(v) = value.filter(|v| !v.is_empty()) {
        cfg.output = PathBuf::from(v);
    }
}

pub const OUTPUT_ENV: &str = "MMDG_OUTPUT_DIR";

/// Reads a config file; an unreadable file is a validation failure, not a runtime one.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config { line: 0, msg: format!("cannot read {}: {e}", path.display()) })?;
    RunConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &std::path::Path) -> RunConfig {
        RunConfig { n: 2, p: 1, steps: 2, output: dir.to_path_buf(), ..RunConfig::default() }
    }

    #[test]
    fn solve_writes_every_format() {
        let tmp = tempfile::tempdir().unwrap();
        let o = solve(&small(tmp.path())).unwrap();
        assert!(o.passed);
        for name in
            ["fields.csv", "indicators.csv", "report.txt", "flow.csv", "mesh.txt", "config.txt", "step_00002.vtk"]
        {
            assert!(tmp.path().join(name).exists(), "{name}");
        }
        let vtk = std::fs::read_to_string(tmp.path().join("step_00001.vtk")).unwrap();
        assert!(vtk.contains("CELLS 8 32"));
        assert_eq!(vtk.lines().filter(|l| *l == "5").count(), 8);
    }

    #[test]
    fn zero_scenario_writes_zero_values() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(tmp.path());
        cfg.scenario = crate::config::ScenarioKind::Zero;
        solve(&cfg).unwrap();
        let text = std::fs::read_to_string(tmp.path().join("fields.csv")).unwrap();
        let levels = crate::output::read_fields_csv(&text).unwrap();
        assert!(levels.iter().all(|l| l.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn exit_codes_follow_error_class() {
        let ok = Outcome { passed: true, summary: String::new(), files: vec![] };
        assert_eq!(exit_code(&Ok(ok.clone())), 0);
        assert_eq!(exit_code(&Ok(Outcome { passed: false, ..ok })), 1);
        assert_eq!(exit_code(&Err(Error::InvalidParameter("x".into()))), 1);
        assert_eq!(exit_code(&Err(Error::Entanglement { t: 0.0, j: -1.0, x: 0.0, y: 0.0 })), 2);
    }

    #[test]
    fn env_overrides_output_dir() {
        let mut cfg = RunConfig::default();
        apply_env(&mut cfg, Some(String::new()));
        assert_eq!(cfg.output, PathBuf::from("mmdg-out"));
        apply_env(&mut cfg, Some("elsewhere".into()));
        assert_eq!(cfg.output, PathBuf::from("elsewhere"));
    }
}
