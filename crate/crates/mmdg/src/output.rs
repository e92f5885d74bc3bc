//! Text output formats. Every float is written with 17 significant digits so
//! a re-read reproduces the binary64 value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::discretization::Discretization;
use crate::driver::{LevelRecord, Simulation};
use crate::error::{Error, Result};

pub const FIELDS_HEADER: &str = "step,t,element,node,x,y,value";
pub const INDICATORS_HEADER: &str = "step,t,element,cx,cy,eta_j2,eta_r2,eta_e2,eta_k2,error_l2_sq";

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}

/// One row per Lagrange node per kept level, at the moved node position.
pub fn fields_csv(d: &Discretization, levels: &[LevelRecord]) -> String {
    let m = d.m();
    let mut s = format!("{FIELDS_HEADER}\n");
    for l in levels {
        for (i, (&v, p)) in l.u.coeffs.iter().zip(&l.nodes).enumerate() {
            let x = p.position();
            let _ = writeln!(s, "{},{:.16e},{},{},{:.16e},{:.16e},{:.16e}", l.step, l.t, i / m, i % m, x[0], x[1], v);
        }
    }
    s
}

/// A level read back from `fields.csv`: nodal values in element-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldLevel {
    pub step: usize,
    pub t: f64,
    pub positions: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

pub fn read_fields_csv(text: &str) -> Result<Vec<FieldLevel>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == FIELDS_HEADER => {}
        _ => return Err(Error::Config { line: 1, msg: format!("expected header '{FIELDS_HEADER}'") }),
    }
    let mut out: Vec<FieldLevel> = Vec::new();
    for (i, line) in lines {
        let bad = |msg: &str| Error::Config { line: i + 1, msg: msg.to_string() };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let int = |c: &str| c.parse::<usize>().map_err(|_| bad("bad integer"));
        let real = |c: &str| c.parse::<f64>().map_err(|_| bad("bad number"));
        let step = int(cols[0])?;
        let t = real(cols[1])?;
        if out.last().is_none_or(|l| l.step != step) {
            out.push(FieldLevel { step, t, positions: Vec::new(), values: Vec::new() });
        }
        let level = out.last_mut().expect("pushed above");
        level.positions.push([real(cols[4])?, real(cols[5])?]);
        level.values.push(real(cols[6])?);
    }
    Ok(out)
}

/// Per-element indicator squares at every kept level that has a report.
pub fn indicators_csv(d: &Discretization, levels: &[LevelRecord]) -> String {
    let mut s = format!("{INDICATORS_HEADER}\n");
    let m = d.m();
    for l in levels {
        let Some(r) = &l.indicators else { continue };
        for k in 0..d.n_elements() {
            // Vertices are local nodes 0..3, so the moved centroid is their mean.
            let c = (0..3).fold([0.0; 2], |c, v| {
                let x = l.nodes[k * m + v].position();
                [c[0] + x[0] / 3.0, c[1] + x[1] / 3.0]
            });
            let err = l.errors.as_ref().map_or(f64::NAN, |e| e.element_l2_sq[k]);
            let _ = writeln!(
                s,
                "{},{:.16e},{k},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                l.step, l.t, c[0], c[1], r.eta_j[k], r.eta_r[k], r.eta_e[k], r.eta_k[k], err
            );
        }
    }
    s
}

/// Legacy ASCII unstructured grid of one level. Each element contributes its own
/// three moved vertices, so the field stays discontinuous in the file.
pub fn vtk(d: &Discretization, l: &LevelRecord, title: &str) -> String {
    let m = d.m();
    let ne = d.n_elements();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# vtk DataFile Version 3.0\n{title} step {} t {:.16e}\nASCII\nDATASET UNSTRUCTURED_GRID",
        l.step, l.t
    );
    let _ = writeln!(s, "POINTS {} double", 3 * ne);
    for k in 0..ne {
        for v in 0..3 {
            let x = l.nodes[k * m + v].position();
            let _ = writeln!(s, "{:.16e} {:.16e} 0", x[0], x[1]);
        }
    }
    let _ = writeln!(s, "CELLS {ne} {}", 4 * ne);
    for k in 0..ne {
        let _ = writeln!(s, "3 {} {} {}", 3 * k, 3 * k + 1, 3 * k + 2);
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("5\n");
    }
    if let Some(r) = &l.indicators {
        let _ = writeln!(s, "CELL_DATA {ne}\nSCALARS eta_K2 double 1\nLOOKUP_TABLE default");
        for v in &r.eta_k {
            let _ = writeln!(s, "{v:.16e}");
        }
    }
    let _ = writeln!(s, "POINT_DATA {}\nSCALARS u double 1\nLOOKUP_TABLE default", 3 * ne);
    for k in 0..ne {
        for v in 0..3 {
            let _ = writeln!(s, "{:.16e}", l.u.coeffs[k * m + v]);
        }
    }
    s
}

pub fn vtk_name(step: usize) -> String {
    format!("step_{step:05}.vtk")
}

/// Norm and indicator table per kept level, followed by the reliability summary.
pub fn solve_report(d: &Discretization, sim: &Simulation, alpha: f64, s0: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# solve {} p={} elements={} C_T={:.16e} alpha={:.16e}",
        sim.scenario,
        d.basis.degree,
        d.n_elements(),
        d.constants.trace,
        alpha
    );
    s.push_str("step t l2 energy max_nodal eta1 eta2 eta3 sum_eta_k\n");
    for l in &sim.levels {
        let e = l.errors.as_ref();
        let r = l.indicators.as_ref();
        let f = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.16e}"));
        let _ = writeln!(
            s,
            "{} {:.16e} {} {} {} {} {} {} {}",
            l.step,
            l.t,
            f(e.map(|e| e.l2)),
            f(e.map(|e| e.energy)),
            f(e.map(|e| e.max_nodal)),
            f(r.map(|r| r.eta1)),
            f(r.map(|r| r.eta2)),
            f(r.map(|r| r.eta3)),
            f(r.map(|r| r.total())),
        );
    }
    let bound =
        s0 * (sim.initial_error_sq + sim.eta[0].integral + sim.final_state.t * sim.eta[1].integral + sim.eta[2].max);
    let sharp = sim.sharp.squared();
    let _ = writeln!(s, "sharp_norm_sq {sharp:.16e}");
    let _ = writeln!(s, "s0 {s0:.16e}");
    let _ = writeln!(s, "estimator_bound {bound:.16e}");
    let _ = writeln!(s, "effectivity {:.16e}", (sharp / bound).sqrt());
    s.push_str("# kinematics\n");
    for l in &sim.log {
        s.push_str(&l.line());
        s.push('\n');
    }
    s
}
