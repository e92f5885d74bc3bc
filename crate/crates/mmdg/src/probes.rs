//! Numerical checks of the stability, consistency, approximation and
//! reliability statements behind the method.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretization::{DGField, Discretization};
use crate::driver::{simulate, Monitoring};
use crate::error::{Error, Result};
use crate::estimators::{compute_patch_weights, flux_average_seminorm, norm_parts, TimeAccumulator};
use crate::flowmap::{grad_matrix, hessian_slice, FlowState, Geometry};
use crate::forms::{
    apply_ah, assemble, averaging_operator, project_l2, weighted_projection, FormParams, MassOperator, Parts,
};
use crate::mesh::{all_dirichlet, Diagonal, Mesh, Point};
use crate::scenarios::{error_traces, Scenario};
use crate::time::{run, Kinematics, Stepper, TimeLoopConfig};
use crate::velocity::{boundary_layer_stream, cellular, Field, Jet, VelocityModel};

/// Sample points for sup-norms over the domain: a uniform grid plus extra points.
pub fn sup_samples(grid: usize, extra: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> =
        (0..=grid).flat_map(|i| (0..=grid).map(move |j| [i as f64 / grid as f64, j as f64 / grid as f64])).collect();
    pts.extend_from_slice(extra);
    pts
}

/// sup |V − Ṽ| and sup |∇·Ṽ| over the samples.
pub fn velocity_sups(vel: &VelocityModel, t: f64, samples: &[Point]) -> (f64, f64) {
    samples.iter().fold((0.0f64, 0.0f64), |(w, dv), &x| {
        let (r, _) = vel.residual(t, x);
        (w.max(r[0].hypot(r[1])), dv.max(vel.mesh_jet(t, x).div().abs()))
    })
}

/// Dense Gram matrix of ε(|·|²_U + j_h) over the basis.
pub fn energy_gram(d: &Discretization, state: &FlowState, eps: f64, alpha: f64) -> DMatrix<f64> {
    let m = d.m();
    let nv = d.nq_vol();
    let ne = d.nq_edge();
    let mut g = DMatrix::zeros(d.n_dofs(), d.n_dofs());
    for k in 0..d.n_elements() {
        for q in 0..nv {
            let geo = Geometry::of(&state.vol[k * nv + q]);
            let w = eps * d.vol_weight(k, q) * geo.j;
            let phys: Vec<Vector2<f64>> =
                (0..m).map(|i| geo.finv_t * Vector2::from(d.maps[k].grad(d.vol_dphi[q][i]))).collect();
            for i in 0..m {
                for j in 0..m {
                    g[(k * m + i, k * m + j)] += w * phys[i].dot(&phys[j]);
                }
            }
        }
    }
    for (e, edge) in d.mesh.edges.iter().enumerate() {
        if !edge.is_penalized() {
            continue;
        }
        let n = Vector2::new(edge.normal[0], edge.normal[1]);
        let sides = &d.sides[e];
        for q in 0..ne {
            let geo = Geometry::of(&state.edge[e * ne + q]);
            let c = eps * d.edge_rule.weights[q] * alpha * geo.j * (geo.finv_t * n).norm_squared();
            let mut entries = Vec::with_capacity(2 * m);
            for (s, tab) in sides.iter().enumerate() {
                let sigma = if s == 0 { 1.0 } else { -1.0 };
                for i in 0..m {
                    entries.push((tab.element * m + i, sigma * tab.phi[q][i]));
                }
            }
            for &(a, va) in &entries {
                for &(b, vb) in &entries {
                    g[(a, b)] += c * va * vb;
                }
            }
        }
    }
    g
}

// ---------------------------------------------------------------- coercivity

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityCase {
    pub n: usize,
    pub p: usize,
    pub theta: f64,
    pub alpha: f64,
    pub c_t: f64,
    pub samples: usize,
    /// min over samples of a_h(u,u)/|||u|||².
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Geometry used by the coercivity probe: a perturbed mesh moved for a short
/// time by a divergence-free field, with γ₀ = 1 so that β = 1.
pub fn coercivity_setup(n: usize, p: usize, seed: u64) -> Result<(Discretization, VelocityModel, FlowState)> {
    let mesh = Mesh::perturbed_unit_square(n, 0.2, seed, all_dirichlet)?;
    let d = Discretization::new(mesh, p, 4)?;
    let mesh_vel = boundary_layer_stream(8.0);
    let vel = VelocityModel::new(cellular(0.5).plus(&mesh_vel), mesh_vel, 1.0);
    let state = d.initial_state().advance(&vel, 0.05, 20)?;
    Ok((d, vel, state))
}

pub fn coercivity_probe(
    n: usize,
    p: usize,
    theta: f64,
    alpha: f64,
    samples: usize,
    seed: u64,
) -> Result<CoercivityCase> {
    let (d, vel, state) = coercivity_setup(n, p, seed)?;
    let prm = FormParams { eps: 0.01, theta, alpha, gamma0: vel.gamma0 };
    prm.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let u = DGField::from_coeffs(&d, (0..d.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let tr = d.traces(&u);
        let a = u.dot(&apply_ah(&d, &tr, &state, &vel, &prm));
        let energy = norm_parts(&d, &tr, &state, &vel, alpha, 0.0).energy(prm.eps);
        let r = a / energy;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(CoercivityCase { n, p, theta, alpha, c_t: d.constants.trace, samples, min_ratio: lo, max_ratio: hi })
}

// ------------------------------------------------------------ inconsistency

/// Dual energy norm of v_h ↦ ε Σ_E ∫ ({{J^{1/2}F⁻ᵀ∇û}} − {{Π(J^{1/2}F⁻ᵀ∇û)}})·J^{1/2}F⁻ᵀ[[v_h]]
/// over interior and Dirichlet edges. `u` returns the physical value and gradient.
pub fn inconsistency_defect(
    d: &Discretization,
    state: &FlowState,
    eps: f64,
    alpha: f64,
    u: impl Fn(Point) -> (f64, [f64; 2]),
) -> Result<f64> {
    if eps == 0.0 {
        return Ok(0.0);
    }
    let m = d.m();
    let ne = d.nq_edge();
    let tr = d.traces_of(state, |p| {
        let (v, g) = u(p.position());
        let gx = p.f.transpose() * Vector2::new(g[0], g[1]);
        (v, [gx[0], gx[1]])
    });
    // θ = 0 keeps only the flux average tested against [[v_h]].
    let prm = FormParams { eps, theta: 0.0, alpha, gamma0: 0.0 };
    let still = VelocityModel::new(Field::zero(), Field::zero(), 0.0);
    let projected = assemble(d, &tr, state, &still, &prm, Parts::PTILDE, 1.0);
    let mut defect = vec![0.0; d.n_dofs()];
    for (e, edge) in d.mesh.edges.iter().enumerate() {
        if !edge.is_penalized() {
            continue;
        }
        let n = Vector2::new(edge.normal[0], edge.normal[1]);
        for q in 0..ne {
            let p = &state.edge[e * ne + q];
            let geo = Geometry::of(p);
            let (_, g) = u(p.position());
            let c = eps * d.edge_rule.weights[q] * edge.length * geo.j * Vector2::from(g).dot(&(geo.finv_t * n));
            for (s, tab) in d.sides[e].iter().enumerate() {
                let sigma = if s == 0 { 1.0 } else { -1.0 };
                for i in 0..m {
                    defect[tab.element * m + i] += sigma * c * tab.phi[q][i];
                }
            }
        }
    }
    for (a, b) in defect.iter_mut().zip(&projected) {
        *a -= b;
    }
    let gram = energy_gram(d, state, eps, alpha);
    let chol = gram.cholesky().ok_or(Error::NonSpdMass { element: usize::MAX })?;
    let dv = DVector::from_vec(defect);
    let y = chol.solve(&dv);
    Ok(dv.dot(&y).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub h: f64,
    pub value: f64,
    pub rate: Option<f64>,
}

fn with_rates(rows: &mut [RateRow]) {
    for i in 1..rows.len() {
        let r = (rows[i - 1].value / rows[i].value).ln() / (rows[i - 1].h / rows[i].h).ln();
        rows[i].rate = Some(r);
    }
}

fn max_edge_length(d: &Discretization) -> f64 {
    d.mesh.edges.iter().map(|e| e.length).fold(0.0, f64::max)
}

/// Kinematics shared by the inconsistency and averaging probes: a structured
/// mesh moved for t = 0.02 by a moderate divergence-free field.
fn moved_setup(n: usize, p: usize) -> Result<(Discretization, VelocityModel, FlowState)> {
    let d = Discretization::new(Mesh::structured_unit_square(n, Diagonal::Uniform, all_dirichlet)?, p, 4)?;
    let mesh_vel = boundary_layer_stream(16.0);
    let vel = VelocityModel::new(mesh_vel.clone(), mesh_vel, 0.0);
    let state = d.initial_state().advance(&vel, 0.02, 8)?;
    Ok((d, vel, state))
}

/// Defect norms for the smooth sine solution on n×n meshes.
pub fn inconsistency_probe(sizes: &[usize], p: usize, eps: f64, alpha: f64) -> Result<Vec<RateRow>> {
    let exact = Scenario::smooth(crate::scenarios::SmoothMeshVelocity::Zero, eps).exact;
    let mut rows = Vec::new();
    for &n in sizes {
        let (d, _, state) = moved_setup(n, p)?;
        let value = inconsistency_defect(&d, &state, eps, alpha, |x| {
            let s = exact.sample(0.5, x);
            (s.u, s.grad)
        })?;
        rows.push(RateRow { n, h: max_edge_length(&d), value, rate: None });
    }
    with_rates(&mut rows);
    Ok(rows)
}

// --------------------------------------------------------------- averaging

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingRow {
    pub n: usize,
    /// max over samples of Σ‖v − 𝒜v‖²_H / Σ h_E J₁ ∫[[v]]².
    pub h_ratio: f64,
    /// max over samples of Σ|v − 𝒜v|²_U / Σ h_E⁻¹ a₁ ∫[[v]]².
    pub u_ratio: f64,
    /// Largest jump of 𝒜v across interior edge points.
    pub max_jump: f64,
    /// Largest |𝒜v| at Dirichlet edge points.
    pub max_dirichlet_trace: f64,
}

pub fn averaging_probe(sizes: &[usize], p: usize, samples: usize, seed: u64) -> Result<Vec<AveragingRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &n in sizes {
        let (d, vel, state) = moved_setup(n, p)?;
        let w = compute_patch_weights(&d, &state, &vel, 1.0, 0.0);
        let ne = d.nq_edge();
        let mut row = AveragingRow { n, h_ratio: 0.0, u_ratio: 0.0, max_jump: 0.0, max_dirichlet_trace: 0.0 };
        for _ in 0..samples {
            let v = DGField::from_coeffs(&d, (0..d.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let av = averaging_operator(&d, &v);
            let mut diff = v.clone();
            diff.axpy(-1.0, &av);
            let parts = norm_parts(&d, &d.traces(&diff), &state, &vel, 1.0, 0.0);
            let tv = d.traces(&v);
            let (mut jh, mut ju) = (0.0, 0.0);
            for (e, edge) in d.mesh.edges.iter().enumerate() {
                if !edge.is_penalized() {
                    continue;
                }
                let s: f64 = (0..ne)
                    .map(|q| {
                        let vals = tv.edge_val[e * ne + q];
                        let jump = vals[0] - if edge.is_interior() { vals[1] } else { 0.0 };
                        d.edge_rule.weights[q] * edge.length * jump * jump
                    })
                    .sum();
                jh += edge.length * w.edge[e].j1 * s;
                ju += w.edge[e].a1 / edge.length * s;
            }
            row.h_ratio = row.h_ratio.max(parts.h / jh);
            row.u_ratio = row.u_ratio.max(parts.u / ju);
            let ta = d.traces(&av);
            for (e, edge) in d.mesh.edges.iter().enumerate() {
                for q in 0..ne {
                    let vals = ta.edge_val[e * ne + q];
                    if edge.is_interior() {
                        row.max_jump = row.max_jump.max((vals[0] - vals[1]).abs());
                    } else if edge.is_penalized() {
                        row.max_dirichlet_trace = row.max_dirichlet_trace.max(vals[0].abs());
                    }
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------- appendix

/// Trajectory state carrying Φ = J^{1/2}F⁻ᵀ and its first and second X-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiPoint {
    pub x: Vector2<f64>,
    pub f: Matrix2<f64>,
    pub df: [Matrix2<f64>; 2],
    pub phi: Matrix2<f64>,
    pub dphi: [Matrix2<f64>; 2],
    pub ddphi: [[Matrix2<f64>; 2]; 2],
}

impl PhiPoint {
    pub fn at_rest(x: Point) -> Self {
        let z = Matrix2::zeros();
        Self {
            x: Vector2::new(x[0], x[1]),
            f: Matrix2::identity(),
            df: [z; 2],
            phi: Matrix2::identity(),
            dphi: [z; 2],
            ddphi: [[z; 2]; 2],
        }
    }

    fn axpy(&self, h: f64, o: &PhiPoint) -> PhiPoint {
        let mut out = *self;
        out.x += o.x * h;
        out.f += o.f * h;
        out.phi += o.phi * h;
        for i in 0..2 {
            out.df[i] += o.df[i] * h;
            out.dphi[i] += o.dphi[i] * h;
            for k in 0..2 {
                out.ddphi[i][k] += o.ddphi[i][k] * h;
            }
        }
        out
    }
}

/// B = ½(∇·Ṽ)I − (∇Ṽ)ᵀ with its first and second spatial derivatives.
pub type BJet = (Matrix2<f64>, [Matrix2<f64>; 2], [[Matrix2<f64>; 2]; 2]);

pub fn b_matrices(jet: &Jet) -> BJet {
    let id = Matrix2::identity();
    let b = id * (0.5 * jet.div()) - grad_matrix(jet).transpose();
    let gd = jet.grad_div();
    let bx = [0, 1].map(|j| id * (0.5 * gd[j]) - hessian_slice(jet, j).transpose());
    let bxx = [0, 1].map(|j| {
        [0, 1].map(|l| {
            let t = &jet.d3;
            let m = Matrix2::new(t[0][0][j][l], t[0][1][j][l], t[1][0][j][l], t[1][1][j][l]);
            id * (0.5 * (t[0][0][j][l] + t[1][1][j][l])) - m.transpose()
        })
    });
    (b, bx, bxx)
}

fn phi_rhs(mesh: &Field, p: &PhiPoint) -> PhiPoint {
    let jet = mesh.jet([p.x[0], p.x[1]]);
    let g = grad_matrix(&jet);
    let h = [hessian_slice(&jet, 0), hessian_slice(&jet, 1)];
    let (b, bx, bxx) = b_matrices(&jet);
    let mut db = [Matrix2::zeros(); 2];
    let mut ddb = [[Matrix2::zeros(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            db[i] += bx[j] * p.f[(j, i)];
        }
        for k in 0..2 {
            for j in 0..2 {
                ddb[i][k] += bx[j] * p.df[k][(j, i)];
                for l in 0..2 {
                    ddb[i][k] += bxx[j][l] * (p.f[(j, i)] * p.f[(l, k)]);
                }
            }
        }
    }
    let mut out = PhiPoint::at_rest([0.0, 0.0]);
    out.x = Vector2::new(jet.v[0], jet.v[1]);
    out.f = g * p.f;
    out.phi = b * p.phi;
    for m in 0..2 {
        out.df[m] = g * p.df[m] + (h[0] * p.f[(0, m)] + h[1] * p.f[(1, m)]) * p.f;
        out.dphi[m] = b * p.dphi[m] + db[m] * p.phi;
        for k in 0..2 {
            out.ddphi[m][k] = b * p.ddphi[m][k] + db[m] * p.dphi[k] + db[k] * p.dphi[m] + ddb[m][k] * p.phi;
        }
    }
    out
}

/// Advances by `dt` with `substeps` classical RK4 steps (Ṽ is time-independent).
pub fn advance_phi(mesh: &Field, p: &PhiPoint, dt: f64, substeps: usize) -> PhiPoint {
    let h = dt / substeps as f64;
    let mut s = *p;
    for _ in 0..substeps {
        let k1 = phi_rhs(mesh, &s);
        let k2 = phi_rhs(mesh, &s.axpy(0.5 * h, &k1));
        let k3 = phi_rhs(mesh, &s.axpy(0.5 * h, &k2));
        let k4 = phi_rhs(mesh, &s.axpy(h, &k3));
        s = s.axpy(h / 6.0, &k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4);
    }
    s
}

fn op_norm(a: &Matrix2<f64>) -> f64 {
    crate::flowmap::max_sym_eigenvalue(&(a.transpose() * a)).max(0.0).sqrt()
}

/// Spatial sup-norms entering C₀, C₁, C₂ for a time-independent Ṽ.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AppendixSups {
    /// |B|_{W^{0,∞}}, |B|_{W^{1,∞}}, |B|_{W^{2,∞}} with operator norms.
    pub b: [f64; 3],
    /// sup ‖D(Ṽ)‖₂ and sup ‖∇D(Ṽ)‖₂ (Frobenius).
    pub d: f64,
    pub grad_d: f64,
}

impl AppendixSups {
    pub fn over(mesh: &Field, samples: &[Point]) -> Self {
        let mut s = Self::default();
        for &x in samples {
            let jet = mesh.jet(x);
            let (b, bx, bxx) = b_matrices(&jet);
            s.b[0] = s.b[0].max(op_norm(&b));
            for j in 0..2 {
                s.b[1] = s.b[1].max(op_norm(&bx[j]));
                for l in 0..2 {
                    s.b[2] = s.b[2].max(op_norm(&bxx[j][l]));
                }
            }
            let g = grad_matrix(&jet);
            s.d = s.d.max(((g + g.transpose()) * 0.5).norm());
            let mut gd = 0.0;
            for j in 0..2 {
                let h = hessian_slice(&jet, j);
                gd += ((h + h.transpose()) * 0.5).norm_squared();
            }
            s.grad_d = s.grad_d.max(gd.sqrt());
        }
        s
    }

    /// (C₀, C₁, C₂) at time t; every ‖·‖_(1,q) is t times the spatial sup.
    pub fn constants(&self, t: f64) -> [f64; 3] {
        let b0 = t * self.b[0];
        let b1 = t * self.b[1];
        let b2 = t * self.b[2];
        let d = t * self.d;
        let gd = t * self.grad_d;
        let r2 = std::f64::consts::SQRT_2;
        [
            2.0 * b0,
            4.0 * b0 + b1 + 2.0 * d + std::f64::consts::LN_2,
            6.0 * b0 + (5.0 + 2.0 * r2 * gd) * b1 + 2.0 * r2 * b2 + 4.0 * r2 * d,
        ]
    }
}

/// Relative slack for bounds that hold with equality.
pub const APPENDIX_ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixSample {
    pub step: usize,
    pub t: f64,
    pub element: usize,
    /// ‖Y‖², |Y|²_{H¹}, |Y|²_{H²} on the element.
    pub measured: [f64; 3],
    /// |K| e^{C_i(t)}.
    pub bound: [f64; 3],
}

impl AppendixSample {
    /// Bounds attained with equality (Ṽ = 0) may differ from the quadrature sum by round-off.
    pub fn holds(&self, i: usize) -> bool {
        self.measured[i] <= self.bound[i] * (1.0 + APPENDIX_ROUNDOFF)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendixReport {
    pub sups: AppendixSups,
    pub samples: Vec<AppendixSample>,
}

impl AppendixReport {
    pub fn all_hold(&self) -> bool {
        self.samples.iter().all(|s| (0..3).all(|i| s.holds(i)))
    }

    /// Smallest bound/measured ratio per inequality (∞ where measured is 0).
    pub fn min_slack(&self) -> [f64; 3] {
        let mut out = [f64::INFINITY; 3];
        for s in &self.samples {
            for i in 0..3 {
                if s.measured[i] > 0.0 {
                    out[i] = out[i].min(s.bound[i] / s.measured[i]);
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,element,l2_sq,l2_bound,h1_sq,h1_bound,h2_sq,h2_bound,pass\n");
        for a in &self.samples {
            let _ = writeln!(
                s,
                "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                a.step,
                a.t,
                a.element,
                a.measured[0],
                a.bound[0],
                a.measured[1],
                a.bound[1],
                a.measured[2],
                a.bound[2],
                (0..3).all(|i| a.holds(i))
            );
        }
        s
    }
}

/// Checks ‖Y‖² ≤ |K|e^{C₀}, |Y|²_{H¹} ≤ |K|e^{C₁}, |Y|²_{H²} ≤ |K|e^{C₂} for
/// Y = J^{1/2}F⁻ᵀq_K on `elements` random elements with random unit q_K, at
/// every step. Sup-norms use a 100×100 grid plus all visited trajectory points.
pub fn appendix_probe(
    d: &Discretization,
    mesh_vel: &Field,
    dt: f64,
    steps: usize,
    substeps: usize,
    elements: usize,
    seed: u64,
) -> Result<AppendixReport> {
    if elements == 0 || elements > d.n_elements() {
        return Err(Error::InvalidParameter(format!("cannot sample {elements} of {} elements", d.n_elements())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..d.n_elements()).collect();
    for i in 0..elements {
        let j = rng.gen_range(i..ids.len());
        ids.swap(i, j);
    }
    ids.truncate(elements);
    let qs: Vec<Vector2<f64>> = ids
        .iter()
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Vector2::new(a.cos(), a.sin())
        })
        .collect();
    let nv = d.nq_vol();
    let mut pts: Vec<Vec<PhiPoint>> =
        ids.iter().map(|&k| (0..nv).map(|q| PhiPoint::at_rest(d.vol_points()[k * nv + q])).collect()).collect();
    // (step, t, per element: measured)
    let mut measured = Vec::new();
    let mut visited: Vec<Point> = Vec::new();
    for step in 0..=steps {
        if step > 0 {
            for el in pts.iter_mut() {
                for p in el.iter_mut() {
                    *p = advance_phi(mesh_vel, p, dt, substeps);
                }
            }
        }
        let t = step as f64 * dt;
        for (i, (&k, el)) in ids.iter().zip(&pts).enumerate() {
            let mut m = [0.0; 3];
            for (q, p) in el.iter().enumerate() {
                let w = d.vol_weight(k, q);
                m[0] += w * (p.phi * qs[i]).norm_squared();
                for a in 0..2 {
                    m[1] += w * (p.dphi[a] * qs[i]).norm_squared();
                    for b in 0..2 {
                        m[2] += w * (p.ddphi[a][b] * qs[i]).norm_squared();
                    }
                }
                if !p.x.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { t });
                }
                visited.push([p.x[0], p.x[1]]);
            }
            measured.push((step, t, k, m));
        }
    }
    let sups = AppendixSups::over(mesh_vel, &sup_samples(100, &visited));
    let samples = measured
        .into_iter()
        .map(|(step, t, k, m)| {
            let area = d.mesh.areas[k];
            let c = sups.constants(t);
            AppendixSample { step, t, element: k, measured: m, bound: c.map(|ci| area * ci.exp()) }
        })
        .collect();
    Ok(AppendixReport { sups, samples })
}

// ------------------------------------------------------ a priori constants

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriRow {
    pub step: usize,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Exponential multiplier C_S or C_N up to this time.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriReport {
    pub theta: f64,
    pub rows: Vec<AprioriRow>,
    /// max over levels of the L² error.
    pub l2_max: f64,
}

impl AprioriReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.lhs <= r.rhs)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,lhs,rhs,constant,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.step,
                r.t,
                r.lhs,
                r.rhs,
                r.constant,
                r.lhs <= r.rhs
            );
        }
        s
    }
}

/// Evaluates both sides of the a priori estimate at every level:
/// max‖e‖² + c_L ε∫N(e)² against C·(‖e(0)‖² + 2max‖e_p‖² + c_N ε∫N(e_p)² + c_B ε∫B(E_p)²).
pub fn apriori_diagnostics(d: &Discretization, sc: &Scenario, cfg: TimeLoopConfig) -> Result<AprioriReport> {
    let theta = cfg.form.theta;
    let eps = sc.eps;
    let alpha = cfg.form.alpha;
    let (c_lhs, c_n, c_b, k0, k1) =
        if theta > 0.0 { (0.25, 30.0, 97.0 / 8.0, 8.0, 12.0) } else { (0.5, 4.0, 17.0 / 8.0, 1.0, 2.0) };
    let c_t = d.constants.trace;
    let grid = sup_samples(50, &[]);
    let stepper = Stepper::new(d, &sc.vel, sc, cfg, Kinematics::Moving)?;
    let u0 = crate::scenarios::initial_projection(d, sc)?;
    let ne = d.nq_edge();
    let mut e_max = 0.0f64;
    let mut e0 = 0.0;
    let mut n_e = TimeAccumulator::default();
    let mut ep_max = 0.0f64;
    let mut n_ep = TimeAccumulator::default();
    let mut b_ep = TimeAccumulator::default();
    let mut w_sq = TimeAccumulator::default();
    let mut div = TimeAccumulator::default();
    let mut rows = Vec::new();
    run(&stepper, u0, |snap| {
        let state = &snap.state;
        let t = snap.t;
        let pe = norm_parts(d, &error_traces(d, &snap.u, &sc.exact, state), state, &sc.vel, alpha, 0.0);
        if snap.step == 0 {
            e0 = pe.h;
        }
        e_max = e_max.max(pe.h);
        n_e.push(t, pe.n_squared());

        let mass = MassOperator::assemble(d, state)?;
        let samples: Vec<f64> = state.vol.iter().map(|p| sc.exact.value(t, p.position())).collect();
        let proj = weighted_projection(d, state, &mass, &samples);
        let pp = norm_parts(d, &error_traces(d, &proj, &sc.exact, state), state, &sc.vel, alpha, 0.0);
        ep_max = ep_max.max(pp.h);
        n_ep.push(t, pp.n_squared());

        // E_p = J^{1/2}∇_x u − Π(J^{1/2}∇_x u), sampled on both sides of every edge point.
        let flux = |p: &crate::flowmap::FlowPoint| {
            let g = sc.exact.sample(t, p.position()).grad;
            let s = Geometry::of(p).j.sqrt();
            [s * g[0], s * g[1]]
        };
        let vol: Vec<[f64; 2]> = state.vol.iter().map(flux).collect();
        let pi = project_l2(d, &vol);
        let mut edge = vec![[[0.0; 2]; 2]; d.mesh.edges.len() * ne];
        for e in 0..d.mesh.edges.len() {
            for s in 0..d.sides[e].len() {
                let (a, _) = d.eval_side(&pi[0], e, s);
                let (b, _) = d.eval_side(&pi[1], e, s);
                for q in 0..ne {
                    let f = flux(&state.edge[e * ne + q]);
                    edge[e * ne + q][s] = [f[0] - a[q], f[1] - b[q]];
                }
            }
        }
        b_ep.push(t, flux_average_seminorm(d, &edge, c_t));

        let extra: Vec<Point> = state.vol.iter().map(|p| p.position()).collect();
        let (w, dv) = velocity_sups(&sc.vel, t, &[grid.as_slice(), extra.as_slice()].concat());
        w_sq.push(t, w * w);
        div.push(t, dv);
        let c0 = 0.5 * div.integral;
        let constant = ((k0 + k1 * (4.0 * c0).exp()) / eps * w_sq.integral + 0.5 * div.integral).exp();
        let lhs = e_max + c_lhs * eps * n_e.integral;
        let data = e0 + 2.0 * ep_max + c_n * eps * n_ep.integral + c_b * eps * b_ep.integral;
        // A zero right-hand side stays zero even when the multiplier overflows.
        let rhs = if data == 0.0 { 0.0 } else { constant * data };
        rows.push(AprioriRow { step: snap.step, t, lhs, rhs, constant });
        Ok(())
    })?;
    Ok(AprioriReport { theta, rows, l2_max: e_max.sqrt() })
}

// ------------------------------------------------------------- reliability

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityRow {
    pub n: usize,
    pub sharp_sq: f64,
    /// S₀(‖e(0)‖² + ∫η₁² + T∫η₂² + max η₃²).
    pub bound: f64,
    pub s0: f64,
    pub effectivity: f64,
}

/// ‖e‖_# against the space-time criteria with S₀ = exp(2C₀(T)), C₀ = ½∫‖∇·Ṽ‖_∞.
pub fn reliability_probe(sc: &Scenario, sizes: &[usize], p: usize, cfg: TimeLoopConfig) -> Result<Vec<ReliabilityRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let d = Discretization::new(Mesh::structured_unit_square(n, Diagonal::Uniform, all_dirichlet)?, p, 4)?;
        let sim = simulate(&d, sc, cfg, Kinematics::Moving, Monitoring::default())?;
        let t_end = sim.final_state.t;
        let extra: Vec<Point> = sim.final_state.vol.iter().map(|q| q.position()).collect();
        let (_, dv) = velocity_sups(&sc.vel, t_end, &sup_samples(100, &extra));
        let s0 = (dv * t_end).exp();
        let bound = s0 * (sim.initial_error_sq + sim.eta[0].integral + t_end * sim.eta[1].integral + sim.eta[2].max);
        let sharp_sq = sim.sharp.squared();
        rows.push(ReliabilityRow { n, sharp_sq, bound, s0, effectivity: (sharp_sq / bound).sqrt() });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmap::FlowPoint;
    use crate::velocity::{rotation, stretch};

    #[test]
    fn phi_matches_inverse_transpose_of_integrated_jacobian() {
        let vel = VelocityModel::new(Field::zero(), boundary_layer_stream(16.0).plus(&rotation(0.3)), 0.0);
        let mut p = PhiPoint::at_rest([0.3, 0.6]);
        let mut f = FlowState::at_rest(&[[0.3, 0.6]], &[]);
        for _ in 0..10 {
            p = advance_phi(&vel.mesh, &p, 0.01, 2);
            f = f.advance(&vel, 0.01, 2).unwrap();
        }
        let fp: &FlowPoint = &f.vol[0];
        let expect = fp.f.try_inverse().unwrap().transpose() * fp.f.determinant().sqrt();
        assert!((p.phi - expect).norm() < 1e-12);
        assert!((p.f - fp.f).norm() < 1e-13 && (p.df[1] - fp.df[1]).norm() < 1e-12);
    }

    #[test]
    fn phi_derivatives_match_finite_differences() {
        let mesh = boundary_layer_stream(30.0);
        let x = [0.35, 0.55];
        let run = |x: Point| advance_phi(&mesh, &PhiPoint::at_rest(x), 0.05, 20);
        let p = run(x);
        let h = 1e-4;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let (a, b) = (run(xp), run(xm));
            let fd = (a.phi - b.phi) / (2.0 * h);
            assert!((fd - p.dphi[i]).norm() < 1e-6 * (1.0 + p.dphi[i].norm()), "{i}");
            for k in 0..2 {
                let fd2 = (a.dphi[k] - b.dphi[k]) / (2.0 * h);
                assert!((fd2 - p.ddphi[k][i]).norm() < 1e-5 * (1.0 + p.ddphi[k][i].norm()), "{i}{k}");
            }
        }
    }

    /// Ṽ = (x, 0): Φ = diag(e^{−t/2}, e^{t/2}), B = diag(−½, ½), C₀ = t.
    #[test]
    fn stretch_field_has_closed_form() {
        let s = stretch();
        let p = advance_phi(&s, &PhiPoint::at_rest([0.4, 0.2]), 0.5, 50);
        assert!((p.phi[(0, 0)] - (-0.25f64).exp()).abs() < 1e-10);
        assert!((p.phi[(1, 1)] - 0.25f64.exp()).abs() < 1e-10);
        assert!(p.dphi.iter().all(|m| m.norm() == 0.0));
        let sups = AppendixSups::over(&s, &sup_samples(4, &[]));
        assert!((sups.b[0] - 0.5).abs() < 1e-15 && sups.b[1] == 0.0 && sups.d == 1.0);
        let c = sups.constants(0.5);
        assert!((c[0] - 0.5).abs() < 1e-15);
        // Worst direction q = e₂ attains the L² bound.
        assert!(p.phi[(1, 1)].powi(2) <= c[0].exp() * (1.0 + 1e-12));
    }

    #[test]
    fn still_field_gives_constant_y() {
        let d = Discretization::new(Mesh::structured_unit_square(3, Diagonal::Uniform, all_dirichlet).unwrap(), 1, 4)
            .unwrap();
        let r = appendix_probe(&d, &Field::zero(), 0.1, 2, 1, 5, 3).unwrap();
        assert!(r.all_hold());
        for s in &r.samples {
            assert!((s.measured[0] - d.mesh.areas[s.element]).abs() < 1e-14);
            assert_eq!(s.measured[1], 0.0);
            assert!((s.bound[0] - s.measured[0]).abs() < 1e-14);
        }
        assert!(appendix_probe(&d, &Field::zero(), 0.1, 1, 1, 0, 3).is_err());
    }

    #[test]
    fn gram_matches_norm_parts() {
        let (d, vel, state) = moved_setup(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = DGField::from_coeffs(&d, (0..d.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let g = energy_gram(&d, &state, 0.3, 7.0);
        let uv = DVector::from_vec(u.coeffs.clone());
        let parts = norm_parts(&d, &d.traces(&u), &state, &vel, 7.0, 0.0);
        let direct = 0.3 * (parts.u + parts.jump);
        assert!((uv.dot(&(&g * &uv)) - direct).abs() < 1e-11 * direct);
    }

    #[test]
    fn polynomial_flux_has_no_defect() {
        let d = Discretization::new(Mesh::structured_unit_square(3, Diagonal::Uniform, all_dirichlet).unwrap(), 2, 4)
            .unwrap();
        let state = d.initial_state();
        let v = inconsistency_defect(&d, &state, 0.01, 10.0, |x| {
            (x[0] * x[0] * x[1] - x[1], [2.0 * x[0] * x[1], x[0] * x[0] - 1.0])
        })
        .unwrap();
        assert!(v < 1e-14, "{v}");
        let z = inconsistency_defect(&d, &state, 0.0, 10.0, |x| (x[0].sin(), [x[0].cos(), 0.0])).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn smooth_defect_is_positive_and_decays() {
        let rows = inconsistency_probe(&[3, 6], 1, 0.01, 10.0).unwrap();
        assert!(rows[0].value > rows[1].value && rows[1].value > 0.0);
        assert!(rows[1].rate.unwrap() > 0.9);
    }

    #[test]
    fn nipg_ratio_is_at_least_one_half() {
        let c = coercivity_probe(3, 1, -1.0, 1.0, 20, 5).unwrap();
        assert!(c.min_ratio >= 0.5, "{}", c.min_ratio);
    }

    #[test]
    fn averaging_output_is_continuous() {
        let rows = averaging_probe(&[3], 2, 5, 1).unwrap();
        assert!(rows[0].max_jump < 1e-12 && rows[0].max_dirichlet_trace < 1e-12);
        assert!(rows[0].h_ratio > 0.0 && rows[0].u_ratio.is_finite());
    }

    #[test]
    fn zero_problem_satisfies_apriori_trivially() {
        let d = Discretization::new(Mesh::structured_unit_square(2, Diagonal::Uniform, all_dirichlet).unwrap(), 1, 4)
            .unwrap();
        let sc = Scenario::zero(0.01);
        let cfg = TimeLoopConfig {
            dt: 2f64.powi(-16),
            steps: 2,
            substeps: 2,
            form: FormParams { eps: 0.01, theta: 1.0, alpha: 10.0, gamma0: 0.0 },
            cadence: 1,
        };
        let r = apriori_diagnostics(&d, &sc, cfg).unwrap();
        assert!(r.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0), "{:?}", r.rows);
        assert!(r.holds());
    }
}
