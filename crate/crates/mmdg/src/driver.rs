//! Scenario runs with exact-error and indicator monitoring at every level.

use crate::discretization::{DGField, Discretization};
use crate::error::Result;
use crate::estimators::{compute_patch_weights, indicators, IndicatorReport, SharpNorm, TimeAccumulator};
use crate::flowmap::{FlowPoint, FlowState};
use crate::mesh::Point;
use crate::scenarios::{error_norms, initial_projection, node_state, ErrorNorms, Scenario};
use crate::time::{run, Kinematics, StepLog, Stepper, TimeLoopConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monitoring {
    pub errors: bool,
    pub indicators: bool,
    /// Floor for the pointwise β in the indicator weights.
    pub beta_min: f64,
}

impl Default for Monitoring {
    fn default() -> Self {
        Self { errors: true, indicators: true, beta_min: 0.0 }
    }
}

/// Everything recorded at a kept level.
#[derive(Debug, Clone)]
pub struct LevelRecord {
    pub step: usize,
    pub t: f64,
    pub u: DGField,
    /// Moved Lagrange nodes, element-major.
    pub nodes: Vec<FlowPoint>,
    pub indicators: Option<IndicatorReport>,
    pub errors: Option<ErrorNorms>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: String,
    pub kinematics: Kinematics,
    pub levels: Vec<LevelRecord>,
    pub log: Vec<StepLog>,
    /// ‖e‖_# accumulated over all levels.
    pub sharp: SharpNorm,
    /// Time accumulators of η₁², η₂², η₃².
    pub eta: [TimeAccumulator; 3],
    pub initial_error_sq: f64,
    pub final_state: FlowState,
}

impl Simulation {
    pub fn level(&self, step: usize) -> Option<&LevelRecord> {
        self.levels.iter().find(|l| l.step == step)
    }

    pub fn last(&self) -> &LevelRecord {
        self.levels.last().expect("the initial level is always kept")
    }
}

pub fn simulate(
    d: &Discretization,
    sc: &Scenario,
    cfg: TimeLoopConfig,
    kinematics: Kinematics,
    mon: Monitoring,
) -> Result<Simulation> {
    simulate_from(d, sc, cfg, kinematics, mon, initial_projection(d, sc)?)
}

/// As [`simulate`] from a given initial field.
pub fn simulate_from(
    d: &Discretization,
    sc: &Scenario,
    cfg: TimeLoopConfig,
    kinematics: Kinematics,
    mon: Monitoring,
    u0: DGField,
) -> Result<Simulation> {
    let stepper = Stepper::new(d, &sc.vel, sc, cfg, kinematics)?;
    let mut nodes = node_state(d);
    let mut levels = Vec::new();
    let mut sharp = SharpNorm::default();
    let mut eta = [TimeAccumulator::default(); 3];
    let mut initial_error_sq = 0.0;
    let traj = run(&stepper, u0, |snap| {
        if snap.step > 0 {
            nodes = match kinematics {
                Kinematics::Moving => nodes.advance(&sc.vel, cfg.dt, cfg.substeps)?,
                Kinematics::Frozen => FlowState { t: snap.t, ..nodes.clone() },
            };
        }
        let errors = if mon.errors {
            let e = error_norms(d, &snap.u, &sc.exact, &snap.state, &nodes.vol, &sc.vel, sc.eps, cfg.form.alpha);
            sharp.push(snap.t, e.parts.h, e.parts.energy(sc.eps));
            if snap.step == 0 {
                initial_error_sq = e.parts.h;
            }
            Some(e)
        } else {
            None
        };
        let report = if mon.indicators {
            let w = compute_patch_weights(d, &snap.state, &sc.vel, sc.eps, mon.beta_min);
            let r = indicators(d, &snap.u, &snap.du_dt, &snap.state, &sc.vel, sc, &w, &cfg.form)?;
            for (acc, v) in eta.iter_mut().zip([r.eta1, r.eta2, r.eta3]) {
                acc.push(snap.t, v);
            }
            Some(r)
        } else {
            None
        };
        if cfg.keeps(snap.step) {
            levels.push(LevelRecord {
                step: snap.step,
                t: snap.t,
                u: snap.u.clone(),
                nodes: nodes.vol.clone(),
                indicators: report,
                errors,
            });
        }
        Ok(())
    })?;
    Ok(Simulation {
        scenario: sc.name.clone(),
        kinematics,
        levels,
        log: traj.log,
        sharp,
        eta,
        initial_error_sq,
        final_state: traj.snapshots.last().map(|s| s.state.clone()).unwrap_or_else(|| d.initial_state()),
    })
}

/// Where the elementwise error peaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorLocation {
    pub l2: f64,
    pub element: usize,
    pub centroid: Point,
    /// The element owns a boundary edge.
    pub boundary_adjacent: bool,
    /// Interior element with |Ṽ(centroid)| ≥ half the maximum over centroids.
    pub in_band: bool,
}

fn boundary_adjacent(d: &Discretization, k: usize) -> bool {
    d.mesh.element_edges[k].iter().any(|&ed| !d.mesh.edges[ed].is_interior())
}

/// Interior elements where |Ṽ(centroid)| is at least half its largest centroid value.
pub fn band_elements(d: &Discretization, sc: &Scenario) -> Vec<bool> {
    let speed: Vec<f64> = (0..d.n_elements())
        .map(|k| {
            let v = sc.vel.mesh.value(d.mesh.centroid(k));
            v[0].hypot(v[1])
        })
        .collect();
    let vmax = speed.iter().cloned().fold(0.0, f64::max);
    (0..d.n_elements()).map(|k| vmax > 0.0 && !boundary_adjacent(d, k) && speed[k] >= 0.5 * vmax).collect()
}

pub fn locate_error(d: &Discretization, sc: &Scenario, e: &ErrorNorms) -> ErrorLocation {
    let element = e
        .element_l2_sq
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
        .0;
    ErrorLocation {
        l2: e.l2,
        element,
        centroid: d.mesh.centroid(element),
        boundary_adjacent: boundary_adjacent(d, element),
        in_band: band_elements(d, sc)[element],
    }
}

/// Moving run against the same problem on a still mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub step: usize,
    pub moving: ErrorLocation,
    pub still: ErrorLocation,
}

impl Comparison {
    pub fn moving_is_more_accurate(&self) -> bool {
        self.moving.l2 < self.still.l2
    }

    pub fn summary(&self) -> String {
        let line = |name: &str, l: &ErrorLocation| {
            format!(
                "{name:<7} l2={:.16e} argmax={} centroid=({:.6},{:.6}) boundary_adjacent={} high_speed_band={}\n",
                l.l2, l.element, l.centroid[0], l.centroid[1], l.boundary_adjacent, l.in_band
            )
        };
        format!(
            "step {}\n{}{}moving_more_accurate={}\n",
            self.step,
            line("moving", &self.moving),
            line("static", &self.still),
            self.moving_is_more_accurate()
        )
    }
}

/// Runs the scenario with its mesh velocity and with Ṽ = 0; the band is
/// defined by the moving run's Ṽ in both cases.
pub fn compare_static_moving(d: &Discretization, sc: &Scenario, cfg: TimeLoopConfig) -> Result<Comparison> {
    let mon = Monitoring { errors: true, indicators: false, beta_min: 0.0 };
    let still_sc = sc.static_mesh();
    let mv = simulate(d, sc, cfg, Kinematics::Moving, mon)?;
    let st = simulate(d, &still_sc, cfg, Kinematics::Moving, mon)?;
    let err = |s: &Simulation| s.last().errors.clone().expect("errors monitored");
    Ok(Comparison { step: cfg.steps, moving: locate_error(d, sc, &err(&mv)), still: locate_error(d, sc, &err(&st)) })
}
