//! Test problems with closed-form solutions, error evaluation on the moving
//! frame, and mesh-refinement studies.

use crate::discretization::{DGField, Discretization, Traces};
use crate::error::{Error, Result};
use crate::estimators::{norm_parts, NormParts};
use crate::flowmap::{FlowPoint, FlowState, Geometry};
use crate::forms::{weighted_projection, MassOperator, ProblemData};
use crate::mesh::{all_dirichlet, Diagonal, Mesh, Point};
use crate::time::{run, Kinematics, Stepper, TimeLoopConfig};
use crate::velocity::{boundary_layer_literal, boundary_layer_stream, cellular, Field, VelocityModel};

/// Amplitude of the boundary-layer mesh velocity.
pub const LAYER_AMPLITUDE: f64 = 65536.0;

/// Closed-form solutions with the derivatives needed for source terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    Zero,
    /// (1 − e^{−t}) g(x) g(y) with g(s) = (e^{(s−1)/ε} − 1)/(e^{−1/ε} − 1) + s − 1.
    BoundaryLayer {
        eps: f64,
    },
    /// (1 + t) sin(πx) sin(πy).
    SineProduct,
    /// Spatially constant 1 − e^{−t}.
    Decay,
}

/// Value, time derivative, gradient and Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub u: f64,
    pub ut: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl Sample {
    pub fn laplacian(&self) -> f64 {
        self.hess[0][0] + self.hess[1][1]
    }
}

/// g, g', g'' of the one-dimensional layer profile.
fn layer_profile(s: f64, eps: f64) -> [f64; 3] {
    let den = (-1.0 / eps).exp_m1();
    let e = ((s - 1.0) / eps).exp();
    [((s - 1.0) / eps).exp_m1() / den + s - 1.0, e / (eps * den) + 1.0, e / (eps * eps * den)]
}

impl ExactSolution {
    pub fn sample(&self, t: f64, x: Point) -> Sample {
        match *self {
            ExactSolution::Zero => Sample { u: 0.0, ut: 0.0, grad: [0.0; 2], hess: [[0.0; 2]; 2] },
            ExactSolution::BoundaryLayer { eps } => {
                let a = -(-t).exp_m1();
                let at = (-t).exp();
                let gx = layer_profile(x[0], eps);
                let gy = layer_profile(x[1], eps);
                Sample {
                    u: a * gx[0] * gy[0],
                    ut: at * gx[0] * gy[0],
                    grad: [a * gx[1] * gy[0], a * gx[0] * gy[1]],
                    hess: [[a * gx[2] * gy[0], a * gx[1] * gy[1]], [a * gx[1] * gy[1], a * gx[0] * gy[2]]],
                }
            }
            ExactSolution::SineProduct => {
                let pi = std::f64::consts::PI;
                let (sx, cx) = (pi * x[0]).sin_cos();
                let (sy, cy) = (pi * x[1]).sin_cos();
                let a = 1.0 + t;
                Sample {
                    u: a * sx * sy,
                    ut: sx * sy,
                    grad: [a * pi * cx * sy, a * pi * sx * cy],
                    hess: [
                        [-a * pi * pi * sx * sy, a * pi * pi * cx * cy],
                        [a * pi * pi * cx * cy, -a * pi * pi * sx * sy],
                    ],
                }
            }
            ExactSolution::Decay => Sample { u: -(-t).exp_m1(), ut: (-t).exp(), grad: [0.0; 2], hess: [[0.0; 2]; 2] },
        }
    }

    pub fn value(&self, t: f64, x: Point) -> f64 {
        self.sample(t, x).u
    }
}

/// Which mesh velocity accompanies the smooth solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothMeshVelocity {
    /// Still mesh.
    Zero,
    /// Ṽ = V: the mesh absorbs all advection.
    Full,
    /// The divergence-free boundary-layer field.
    Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerVariant {
    /// Ṽ = c(h'(x)h(y), −h(x)h'(y)) as printed.
    Literal,
    /// Ṽ = c(h(x)h'(y), −h'(x)h(y)), divergence-free.
    Stream,
}

impl LayerVariant {
    pub fn name(self) -> &'static str {
        match self {
            LayerVariant::Literal => "literal",
            LayerVariant::Stream => "stream",
        }
    }
}

/// Problem definition with the source derived from the exact solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub eps: f64,
    pub vel: VelocityModel,
    pub exact: ExactSolution,
}

impl Scenario {
    pub fn boundary_layer(variant: LayerVariant, eps: f64) -> Self {
        let mesh = match variant {
            LayerVariant::Literal => boundary_layer_literal(LAYER_AMPLITUDE),
            LayerVariant::Stream => boundary_layer_stream(LAYER_AMPLITUDE),
        };
        let advection = Field::constant([1.0, 1.0]).plus(&mesh);
        Self {
            name: format!("boundary-layer-{}", variant.name()),
            eps,
            vel: VelocityModel::new(advection, mesh, 0.0),
            exact: ExactSolution::BoundaryLayer { eps },
        }
    }

    /// Smooth sine solution advected by a cellular flow plus a constant drift.
    pub fn smooth(mesh_velocity: SmoothMeshVelocity, eps: f64) -> Self {
        let cell = cellular(0.5);
        let (advection, mesh) = match mesh_velocity {
            SmoothMeshVelocity::Zero => (Field::constant([0.5, 0.25]).plus(&cell), Field::zero()),
            SmoothMeshVelocity::Full => (cell.clone(), cell),
            SmoothMeshVelocity::Layer => {
                let m = boundary_layer_stream(16.0);
                (Field::constant([0.5, 0.25]).plus(&m), m)
            }
        };
        let tag = match mesh_velocity {
            SmoothMeshVelocity::Zero => "still",
            SmoothMeshVelocity::Full => "full",
            SmoothMeshVelocity::Layer => "layer",
        };
        Self {
            name: format!("smooth-{tag}"),
            eps,
            vel: VelocityModel::new(advection, mesh, 0.0),
            exact: ExactSolution::SineProduct,
        }
    }

    pub fn zero(eps: f64) -> Self {
        Self {
            name: "zero".into(),
            eps,
            vel: VelocityModel::new(
                Field::constant([1.0, 1.0]).plus(&boundary_layer_stream(LAYER_AMPLITUDE)),
                boundary_layer_stream(LAYER_AMPLITUDE),
                0.0,
            ),
            exact: ExactSolution::Zero,
        }
    }

    /// Same problem with the mesh held still; the full V is upwinded.
    pub fn static_mesh(&self) -> Self {
        Self { name: format!("{}-static", self.name), vel: self.vel.static_mesh(), ..self.clone() }
    }

    pub fn with_gamma0(mut self, gamma0: f64) -> Self {
        self.vel.gamma0 = gamma0;
        self
    }

    /// Strong residual operator u_t + V·∇u − εΔu + γ₀u applied to the exact solution.
    pub fn strong_operator(&self, s: &Sample, x: Point) -> f64 {
        let v = self.vel.advection.value(x);
        s.ut + v[0] * s.grad[0] + v[1] * s.grad[1] - self.eps * s.laplacian() + self.vel.gamma0 * s.u
    }

    /// Source minus the finite-difference strong operator, relative to the term sizes.
    pub fn fd_residual(&self, t: f64, x: Point, h: f64) -> f64 {
        let u = |t: f64, x: Point| self.exact.value(t, x);
        // Eighth-order central weights for first and second derivatives.
        let c1 = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let c2 = [8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
        let c20 = -205.0 / 72.0;
        let d1 = |f: &dyn Fn(f64) -> f64| {
            (0..4).map(|i| c1[i] * (f((i + 1) as f64 * h) - f(-((i + 1) as f64) * h))).sum::<f64>() / h
        };
        let d2 = |f: &dyn Fn(f64) -> f64| {
            (c20 * f(0.0) + (0..4).map(|i| c2[i] * (f((i + 1) as f64 * h) + f(-((i + 1) as f64) * h))).sum::<f64>())
                / (h * h)
        };
        let ut = d1(&|s| u(t + s, x));
        let ux = d1(&|s| u(t, [x[0] + s, x[1]]));
        let uy = d1(&|s| u(t, [x[0], x[1] + s]));
        let lap = d2(&|s| u(t, [x[0] + s, x[1]])) + d2(&|s| u(t, [x[0], x[1] + s]));
        let v = self.vel.advection.value(x);
        let val = u(t, x);
        let terms = [ut, v[0] * ux, v[1] * uy, self.eps * lap, self.vel.gamma0 * val];
        let fd = terms[0] + terms[1] + terms[2] - terms[3] + terms[4];
        let scale: f64 = terms.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
        (self.source(t, x) - fd).abs() / scale
    }
}

impl ProblemData for Scenario {
    fn source(&self, t: f64, x: Point) -> f64 {
        let s = self.exact.sample(t, x);
        self.strong_operator(&s, x)
    }

    fn neumann(&self, t: f64, x: Point, n: Point) -> f64 {
        let s = self.exact.sample(t, x);
        self.eps * (s.grad[0] * n[0] + s.grad[1] * n[1])
    }

    fn initial(&self, x: Point) -> f64 {
        self.exact.value(0.0, x)
    }
}

/// û(t, X) = u(t, x(t, X)) with its X-gradient Fᵀ∇u.
pub fn pulled_back(exact: &ExactSolution, t: f64, p: &FlowPoint) -> (f64, [f64; 2]) {
    let s = exact.sample(t, p.position());
    let g = p.f.transpose() * nalgebra::Vector2::new(s.grad[0], s.grad[1]);
    (s.u, [g[0], g[1]])
}

/// Traces of the error û − u_h.
pub fn error_traces(d: &Discretization, u: &DGField, exact: &ExactSolution, state: &FlowState) -> Traces {
    let mut tr = d.traces_of(state, |p| pulled_back(exact, state.t, p));
    let th = d.traces(u);
    for (a, b) in tr.vol_val.iter_mut().zip(&th.vol_val) {
        *a -= b;
    }
    for (a, b) in tr.vol_grad.iter_mut().zip(&th.vol_grad) {
        a[0] -= b[0];
        a[1] -= b[1];
    }
    for (a, b) in tr.edge_val.iter_mut().zip(&th.edge_val) {
        a[0] -= b[0];
        a[1] -= b[1];
    }
    for (a, b) in tr.edge_grad.iter_mut().zip(&th.edge_grad) {
        for s in 0..2 {
            a[s][0] -= b[s][0];
            a[s][1] -= b[s][1];
        }
    }
    tr
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    /// |||û − u_h|||.
    pub energy: f64,
    /// Largest nodal error over the Lagrange nodes.
    pub max_nodal: f64,
    /// Per-element ∫_K J(û − u_h)².
    pub element_l2_sq: Vec<f64>,
    pub parts: NormParts,
}

/// Errors on the reference mesh with J/F weights; `nodes` holds the flow
/// state of the Lagrange nodes, element-major.
pub fn error_norms(
    d: &Discretization,
    u: &DGField,
    exact: &ExactSolution,
    state: &FlowState,
    nodes: &[FlowPoint],
    vel: &VelocityModel,
    eps: f64,
    alpha: f64,
) -> ErrorNorms {
    let tr = error_traces(d, u, exact, state);
    let parts = norm_parts(d, &tr, state, vel, alpha, 0.0);
    let nv = d.nq_vol();
    let element_l2_sq = (0..d.n_elements())
        .map(|k| {
            (0..nv)
                .map(|q| {
                    let i = k * nv + q;
                    d.vol_weight(k, q) * state.vol[i].j * tr.vol_val[i] * tr.vol_val[i]
                })
                .sum()
        })
        .collect();
    let m = d.m();
    let mut max_nodal = 0.0f64;
    for (i, p) in nodes.iter().enumerate() {
        let e = (exact.value(state.t, p.position()) - u.coeffs[i]).abs();
        debug_assert!(i / m < d.n_elements());
        max_nodal = max_nodal.max(e);
    }
    ErrorNorms { l2: parts.h.sqrt(), energy: parts.energy(eps).sqrt(), max_nodal, element_l2_sq, parts }
}

/// Flow state of every Lagrange node, element-major, at rest.
pub fn node_state(d: &Discretization) -> FlowState {
    let pts: Vec<Point> = (0..d.n_elements()).flat_map(|k| d.node_points(k)).collect();
    FlowState::at_rest(&pts, &[])
}

/// Initial value as the J(0)-weighted projection of the exact solution.
pub fn initial_projection(d: &Discretization, data: &dyn ProblemData) -> Result<DGField> {
    let state = d.initial_state();
    let mass = MassOperator::assemble(d, &state)?;
    let samples: Vec<f64> = state.vol.iter().map(|p| data.initial(p.position())).collect();
    Ok(weighted_projection(d, &state, &mass, &samples))
}

/// Nodal interpolation of the initial value.
pub fn initial_interpolant(d: &Discretization, data: &dyn ProblemData) -> DGField {
    DGField::interpolate(d, |x| data.initial(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    /// max over time levels of the L² error.
    pub l2_max: f64,
    /// |||e||| at the final time.
    pub energy_final: f64,
    pub rate_l2: Option<f64>,
    pub rate_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub scenario: String,
    pub p: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn min_rate_l2(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.rate_l2).reduce(f64::min)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# convergence {} p={}\n n        h                 L2max(L2)          rate   energy(T)          rate\n",
            self.scenario, self.p
        );
        for r in &self.rows {
            let f = |o: Option<f64>| o.map_or("   -  ".to_string(), |v| format!("{v:6.3}"));
            s.push_str(&format!(
                "{:3} {:.10e} {:.10e} {} {:.10e} {}\n",
                r.n,
                r.h,
                r.l2_max,
                f(r.rate_l2),
                r.energy_final,
                f(r.rate_energy)
            ));
        }
        s
    }
}

/// Solves the scenario on n×n meshes and records errors with observed rates.
pub fn convergence_study(
    scenario: &Scenario,
    p: usize,
    sizes: &[usize],
    cfg: TimeLoopConfig,
    geo_allowance: usize,
) -> Result<ConvergenceTable> {
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("convergence study needs at least one mesh size".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in sizes {
        let mesh = Mesh::structured_unit_square(n, Diagonal::Uniform, all_dirichlet)?;
        let d = Discretization::new(mesh, p, geo_allowance)?;
        let stepper = Stepper::new(&d, &scenario.vel, scenario, cfg, Kinematics::Moving)?;
        let u0 = initial_projection(&d, scenario)?;
        let mut l2_max = 0.0f64;
        let mut energy = 0.0;
        run(&stepper, u0, |snap| {
            let tr = error_traces(&d, &snap.u, &scenario.exact, &snap.state);
            let parts = norm_parts(&d, &tr, &snap.state, &scenario.vel, cfg.form.alpha, 0.0);
            l2_max = l2_max.max(parts.h.sqrt());
            energy = parts.energy(scenario.eps).sqrt();
            Ok(())
        })?;
        let h = d.mesh.edges.iter().map(|e| e.length).fold(0.0, f64::max);
        let (rate_l2, rate_energy) = match rows.last() {
            Some(prev) => {
                let r = (prev.h / h).ln();
                (Some((prev.l2_max / l2_max).ln() / r), Some((prev.energy_final / energy).ln() / r))
            }
            None => (None, None),
        };
        rows.push(ConvergenceRow { n, h, l2_max, energy_final: energy, rate_l2, rate_energy });
    }
    Ok(ConvergenceTable { scenario: scenario.name.clone(), p, rows })
}

/// Largest |Geometry::j − 1| over all points, a quick kinematic summary.
pub fn max_volume_change(state: &FlowState) -> f64 {
    state.vol.iter().chain(&state.edge).map(|p| (Geometry::of(p).j - 1.0).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::FormParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_solution_vanishes_on_boundary_and_at_start() {
        let e = ExactSolution::BoundaryLayer { eps: 0.01 };
        for i in 0..=10 {
            let s = i as f64 / 10.0;
            assert_eq!(e.value(0.0, [s, 0.3]), 0.0);
            for x in [[0.0, s], [1.0, s], [s, 0.0], [s, 1.0]] {
                assert!(e.value(0.7, x).abs() < 1e-15, "{x:?}");
            }
        }
    }

    #[test]
    fn layer_velocity_is_still_at_centre() {
        let sc = Scenario::boundary_layer(LayerVariant::Literal, 0.01);
        assert_eq!(sc.vel.mesh.value([0.5, 0.5]), [0.0, 0.0]);
    }

    #[test]
    fn sources_pass_the_finite_difference_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scenarios = [
            (Scenario::boundary_layer(LayerVariant::Literal, 0.01), 2e-4),
            (Scenario::boundary_layer(LayerVariant::Stream, 0.01), 2e-4),
            (Scenario::smooth(SmoothMeshVelocity::Zero, 1e-4), 1e-3),
            (Scenario::smooth(SmoothMeshVelocity::Full, 0.1).with_gamma0(0.5), 1e-3),
        ];
        for (sc, h) in &scenarios {
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let t = rng.gen_range(0.01..1.0);
                let x = [rng.gen_range(0.02..0.98), rng.gen_range(0.02..0.98)];
                worst = worst.max(sc.fd_residual(t, x, *h));
            }
            assert!(worst < 1e-8, "{}: {worst}", sc.name);
        }
    }

    #[test]
    fn fd_gate_catches_a_wrong_source() {
        let mut sc = Scenario::smooth(SmoothMeshVelocity::Zero, 0.1);
        let good = sc.fd_residual(0.3, [0.3, 0.4], 1e-3);
        sc.eps = 0.2;
        // Source and operator change together, so also perturb the exact solution's partner.
        let wrong = {
            let other = Scenario::smooth(SmoothMeshVelocity::Zero, 0.1);
            (other.source(0.3, [0.3, 0.4]) - sc.source(0.3, [0.3, 0.4])).abs()
        };
        assert!(good < 1e-9 && wrong > 1e-3);
    }

    #[test]
    fn exact_solution_pullback_matches_moved_point() {
        let sc = Scenario::boundary_layer(LayerVariant::Stream, 0.01);
        let s = FlowState::at_rest(&[[0.3, 0.4], [0.8, 0.9]], &[]).advance(&sc.vel, 12.0 / 65536.0, 24).unwrap();
        for p in &s.vol {
            let (v, _) = pulled_back(&sc.exact, s.t, p);
            assert_eq!(v, sc.exact.value(s.t, p.position()));
        }
    }

    #[test]
    fn polynomial_in_space_gives_roundoff_errors() {
        let d = Discretization::new(Mesh::structured_unit_square(3, Diagonal::Uniform, all_dirichlet).unwrap(), 1, 4)
            .unwrap();
        let exact = ExactSolution::Decay;
        let state = FlowState { t: 0.5, ..d.initial_state() };
        let u = DGField::interpolate(&d, |_| exact.value(0.5, [0.0, 0.0]));
        let nodes = node_state(&d);
        let vel = VelocityModel::new(Field::zero(), Field::zero(), 0.0);
        let e = error_norms(&d, &u, &exact, &state, &nodes.vol, &vel, 0.01, 10.0);
        assert!(e.l2 < 1e-14 && e.max_nodal < 1e-15);
    }

    #[test]
    fn projection_error_is_positive_for_layer() {
        let d = Discretization::new(Mesh::structured_unit_square(4, Diagonal::Uniform, all_dirichlet).unwrap(), 2, 4)
            .unwrap();
        let sc = Scenario::boundary_layer(LayerVariant::Stream, 0.01);
        let state = FlowState { t: 0.5, ..d.initial_state() };
        let mass = MassOperator::assemble(&d, &state).unwrap();
        let samples: Vec<f64> = state.vol.iter().map(|p| sc.exact.value(0.5, p.position())).collect();
        let u = weighted_projection(&d, &state, &mass, &samples);
        let e = error_norms(&d, &u, &sc.exact, &state, &node_state(&d).vol, &sc.vel, 0.01, 10.0);
        assert!(e.l2 > 1e-3 && e.energy > e.l2 * 0.0);
    }

    #[test]
    fn single_size_has_no_rate() {
        let sc = Scenario::smooth(SmoothMeshVelocity::Zero, 0.01);
        let cfg = TimeLoopConfig {
            dt: 1e-3,
            steps: 2,
            substeps: 2,
            form: FormParams { eps: 0.01, theta: 1.0, alpha: 10.0, gamma0: 0.0 },
            cadence: 1,
        };
        let t = convergence_study(&sc, 1, &[3], cfg, 4).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].rate_l2.is_none() && t.rows[0].l2_max > 0.0);
        assert!(convergence_study(&sc, 1, &[], cfg, 4).is_err());
    }
}
