//! Classical RK4 for M(t) du/dt = l_h − a_h(u, ·) with stage-time geometry.

use crate::discretization::{DGField, Discretization};
use crate::error::{Error, Result};
use crate::flowmap::FlowState;
use crate::forms::{semidiscrete_residual, FormParams, MassOperator, ProblemData};
use crate::velocity::VelocityModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeLoopConfig {
    pub dt: f64,
    pub steps: usize,
    /// Flow-map RK4 substeps per DG step.
    pub substeps: usize,
    pub form: FormParams,
    /// Keep a snapshot every `cadence` steps (the first and last step are always kept).
    pub cadence: usize,
}

impl TimeLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt = {} must be positive", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidParameter("cadence must be at least 1".into()));
        }
        self.form.validate()
    }

    /// Whether level `step` is kept as a snapshot.
    pub fn keeps(&self, step: usize) -> bool {
        step <= 1 || step == self.steps || step.is_multiple_of(self.cadence)
    }
}

/// How the flow state evolves between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kinematics {
    /// Integrate the flow map along Ṽ.
    Moving,
    /// Geometry held at the identity map; one mass matrix reused throughout.
    Frozen,
}

pub struct Stepper<'a> {
    pub d: &'a Discretization,
    pub vel: &'a VelocityModel,
    pub data: &'a dyn ProblemData,
    pub cfg: TimeLoopConfig,
    frozen_mass: Option<MassOperator>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        d: &'a Discretization,
        vel: &'a VelocityModel,
        data: &'a dyn ProblemData,
        cfg: TimeLoopConfig,
        kinematics: Kinematics,
    ) -> Result<Self> {
        cfg.validate()?;
        let frozen_mass = match kinematics {
            Kinematics::Moving => None,
            Kinematics::Frozen => Some(MassOperator::assemble(d, &d.initial_state())?),
        };
        Ok(Self { d, vel, data, cfg, frozen_mass })
    }

    pub fn kinematics(&self) -> Kinematics {
        if self.frozen_mass.is_some() {
            Kinematics::Frozen
        } else {
            Kinematics::Moving
        }
    }

    /// M⁻¹(l_h − a_h(u, ·)) at the state's time.
    pub fn time_derivative(&self, u: &DGField, state: &FlowState) -> Result<DGField> {
        let r = semidiscrete_residual(self.d, u, state, self.vel, self.data, &self.cfg.form);
        let du = match &self.frozen_mass {
            Some(m) => m.solve(&r),
            None => MassOperator::assemble(self.d, state)?.solve(&r),
        };
        if du.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { t: state.t });
        }
        Ok(du)
    }

    fn advance(&self, state: &FlowState, dt: f64, substeps: usize) -> Result<FlowState> {
        match self.frozen_mass {
            Some(_) => Ok(FlowState { t: state.t + dt, ..state.clone() }),
            None => state.advance(self.vel, dt, substeps),
        }
    }

    /// One RK4 step; stage geometries are advanced from the step-start state.
    pub fn rk4_step(&self, u: &DGField, state: &FlowState) -> Result<(DGField, FlowState)> {
        let dt = self.cfg.dt;
        let half_sub = self.cfg.substeps.div_ceil(2);
        let mid = self.advance(state, 0.5 * dt, half_sub)?;
        let end = self.advance(state, dt, self.cfg.substeps)?;
        let k1 = self.time_derivative(u, state)?;
        let mut u2 = u.clone();
        u2.axpy(0.5 * dt, &k1);
        let k2 = self.time_derivative(&u2, &mid)?;
        let mut u3 = u.clone();
        u3.axpy(0.5 * dt, &k2);
        let k3 = self.time_derivative(&u3, &mid)?;
        let mut u4 = u.clone();
        u4.axpy(dt, &k3);
        let k4 = self.time_derivative(&u4, &end)?;
        let mut out = u.clone();
        out.axpy(dt / 6.0, &k1);
        out.axpy(dt / 3.0, &k2);
        out.axpy(dt / 3.0, &k3);
        out.axpy(dt / 6.0, &k4);
        Ok((out, end))
    }

    /// Courant numbers dt·max|V−Ṽ|/h_min and dt·max|V|/h_min over the volume points.
    pub fn courant(&self, state: &FlowState) -> (f64, f64) {
        let h_min = self.d.mesh.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min);
        let (mut res, mut full) = (0.0f64, 0.0f64);
        for p in &state.vol {
            let x = p.position();
            let (w, _) = self.vel.residual(state.t, x);
            let v = self.vel.advection.value(x);
            res = res.max(w[0].hypot(w[1]));
            full = full.max(v[0].hypot(v[1]));
        }
        (self.cfg.dt * res / h_min, self.cfg.dt * full / h_min)
    }
}

/// One emitted time level.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub u: DGField,
    pub du_dt: DGField,
    pub state: FlowState,
}

/// Per-step progress record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    pub min_j: f64,
    pub courant_residual: f64,
    pub courant_full: f64,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "step {:>5}  t={:.6e}  minJ={:.6e}  courant(V-Vt)={:.3e}  courant(V)={:.3e}",
            self.step, self.t, self.min_j, self.courant_residual, self.courant_full
        )
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<StepLog>,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds the initial level")
    }

    pub fn at_step(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }
}

/// Runs `cfg.steps` steps from `u0`. `observe` sees every level, including step 0,
/// with its time derivative.
pub fn run(stepper: &Stepper, u0: DGField, mut observe: impl FnMut(&Snapshot) -> Result<()>) -> Result<Trajectory> {
    let cfg = stepper.cfg;
    let mut state = stepper.d.initial_state();
    let mut u = u0;
    let mut snapshots = Vec::new();
    let mut log = Vec::new();
    for step in 0..=cfg.steps {
        if step > 0 {
            let (un, sn) = stepper.rk4_step(&u, &state)?;
            u = un;
            state = sn;
        }
        let du_dt = stepper.time_derivative(&u, &state)?;
        let snap = Snapshot { step, t: state.t, u: u.clone(), du_dt, state: state.clone() };
        observe(&snap)?;
        let (cr, cf) = stepper.courant(&state);
        log.push(StepLog { step, t: state.t, min_j: state.residuals().min_j, courant_residual: cr, courant_full: cf });
        if cfg.keeps(step) {
            snapshots.push(snap);
        }
    }
    Ok(Trajectory { snapshots, log })
}
