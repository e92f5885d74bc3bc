//! Weighted DG norms, patch weights, elementwise indicators η_J, η_E, η_R and
//! the space-time criteria η₁, η₂, η₃.

use nalgebra::{Matrix2, Vector2};

use crate::discretization::{DGField, Discretization, Traces};
use crate::error::{Error, Result};
use crate::flowmap::{delta, FlowPoint, FlowState, Geometry};
use crate::forms::{FormParams, ProblemData};
use crate::mesh::BoundaryTag;
use crate::velocity::VelocityModel;

/// Normalized patch quantities g_q^ω for one edge or element patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub j1: f64,
    pub j_inf: f64,
    pub a1: f64,
    pub a_inf: f64,
    pub delta_inf: f64,
    pub m_inf: f64,
    /// Smallest β over the patch.
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct PatchWeights {
    pub edge: Vec<Weights>,
    pub element: Vec<Weights>,
    pub edge_rho: Vec<f64>,
    pub element_rho: Vec<f64>,
}

/// ρ = min(a_∞h/√ε, M_∞/β); a vanishing β drops the second branch.
pub fn rho(w: &Weights, h: f64, eps: f64) -> f64 {
    let first = if eps > 0.0 { w.a_inf * h / eps.sqrt() } else { f64::INFINITY };
    let second = if w.beta > 0.0 { w.m_inf / w.beta } else { f64::INFINITY };
    first.min(second)
}

#[derive(Debug, Clone, Copy)]
struct Local {
    int_j: f64,
    int_a: f64,
    j_inf: f64,
    a_inf: f64,
    delta_inf: f64,
    m_inf: f64,
    beta: f64,
}

pub fn compute_patch_weights(
    d: &Discretization,
    state: &FlowState,
    vel: &VelocityModel,
    eps: f64,
    beta_min: f64,
) -> PatchWeights {
    let nv = d.nq_vol();
    let local: Vec<Local> = (0..d.n_elements())
        .map(|k| {
            let mut l = Local {
                int_j: 0.0,
                int_a: 0.0,
                j_inf: 0.0,
                a_inf: 0.0,
                delta_inf: 0.0,
                m_inf: 0.0,
                beta: f64::INFINITY,
            };
            for q in 0..nv {
                let p = &state.vol[k * nv + q];
                let g = Geometry::of(p);
                let w = d.vol_weight(k, q);
                l.int_j += w * g.j;
                l.int_a += w * g.a;
                l.j_inf = l.j_inf.max(g.j.abs());
                l.a_inf = l.a_inf.max(g.a);
                l.m_inf = l.m_inf.max(g.m);
                l.delta_inf = l.delta_inf.max(delta(vel, state.t, p));
                l.beta = l.beta.min(vel.beta(state.t, p.position(), beta_min));
            }
            l
        })
        .collect();
    let combine = |members: &[usize], area: f64| {
        let mut w =
            Weights { j1: 0.0, j_inf: 0.0, a1: 0.0, a_inf: 0.0, delta_inf: 0.0, m_inf: 0.0, beta: f64::INFINITY };
        for &k in members {
            let l = &local[k];
            w.j1 += l.int_j;
            w.a1 += l.int_a;
            w.j_inf = w.j_inf.max(l.j_inf);
            w.a_inf = w.a_inf.max(l.a_inf);
            w.delta_inf = w.delta_inf.max(l.delta_inf);
            w.m_inf = w.m_inf.max(l.m_inf);
            w.beta = w.beta.min(l.beta);
        }
        w.j1 /= area;
        w.a1 /= area;
        w
    };
    let pm = &d.patches;
    let edge: Vec<Weights> = pm.edge_patches.iter().zip(&pm.edge_patch_areas).map(|(m, &a)| combine(m, a)).collect();
    let element: Vec<Weights> =
        pm.element_patches.iter().zip(&pm.element_patch_areas).map(|(m, &a)| combine(m, a)).collect();
    let edge_rho = edge.iter().zip(&d.mesh.edges).map(|(w, e)| rho(w, e.length, eps)).collect();
    let element_rho = element.iter().zip(&d.mesh.diameters).map(|(w, &h)| rho(w, h, eps)).collect();
    PatchWeights { edge, element, edge_rho, element_rho }
}

/// Per-element indicator squares and the global criteria at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorReport {
    pub t: f64,
    pub eta_j: Vec<f64>,
    pub eta_e: Vec<f64>,
    pub eta_r: Vec<f64>,
    pub eta_k: Vec<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

impl IndicatorReport {
    pub fn total(&self) -> f64 {
        self.eta_k.iter().sum()
    }
}

/// Builds the report from the solution and its time derivative at the state's time.
pub fn indicators(
    d: &Discretization,
    u: &DGField,
    du_dt: &DGField,
    state: &FlowState,
    vel: &VelocityModel,
    data: &dyn ProblemData,
    weights: &PatchWeights,
    prm: &FormParams,
) -> Result<IndicatorReport> {
    if !(prm.eps > 0.0) {
        return Err(Error::InvalidParameter("indicators need eps > 0".into()));
    }
    let (eta_j, eta_e, eta_r) = element_indicators(d, u, du_dt, state, vel, data, weights, prm);
    let eta_k: Vec<f64> = (0..d.n_elements()).map(|k| eta_j[k] + eta_e[k] + eta_r[k]).collect();
    let eta1 = (1.0 + 1.0 / prm.alpha) * eta_k.iter().sum::<f64>();
    let eta2 = weighted_jump_sum(d, du_dt, weights);
    let eta3 = weighted_jump_sum(d, u, weights);
    Ok(IndicatorReport { t: state.t, eta_j, eta_e, eta_r, eta_k, eta1, eta2, eta3 })
}

/// (η_J², η_E², η_R²) per element.
pub fn element_indicators(
    d: &Discretization,
    u: &DGField,
    du_dt: &DGField,
    state: &FlowState,
    vel: &VelocityModel,
    data: &dyn ProblemData,
    weights: &PatchWeights,
    prm: &FormParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nk = d.n_elements();
    let ne = d.nq_edge();
    let nv = d.nq_vol();
    let eps = prm.eps;
    let t = state.t;
    let tr = d.traces(u);
    let mut eta_j = vec![0.0; nk];
    let mut eta_e = vec![0.0; nk];
    let mut eta_r = vec![0.0; nk];

    for (e, edge) in d.mesh.edges.iter().enumerate() {
        let w = &weights.edge[e];
        let rho_e = weights.edge_rho[e];
        let h = edge.length;
        let n = Vector2::new(edge.normal[0], edge.normal[1]);
        let interior = edge.is_interior();
        let (mut plain, mut metric, mut flux) = (0.0, 0.0, 0.0);
        for q in 0..ne {
            let p = &state.edge[e * ne + q];
            let g = Geometry::of(p);
            let ws = d.edge_rule.weights[q] * h;
            let vals = tr.edge_val[e * ne + q];
            let grads = tr.edge_grad[e * ne + q];
            match edge.tag {
                BoundaryTag::Neumann => {
                    let gl = Vector2::from(grads[0]);
                    let fnl = g.finv_t * n;
                    let len = fnl.norm();
                    let nphys = [fnl[0] / len, fnl[1] / len];
                    let target = g.j * len * data.neumann(t, p.position(), nphys);
                    let r = target - eps * (g.metric * gl).dot(&n);
                    flux += ws * r * r;
                }
                _ => {
                    let jump = vals[0] - if interior { vals[1] } else { 0.0 };
                    plain += ws * jump * jump;
                    let fj = g.finv_t * n * jump;
                    metric += ws * g.j * fj.norm_squared();
                    if interior {
                        let dg = Vector2::from(grads[0]) - Vector2::from(grads[1]);
                        let r = eps * (g.metric * dg).dot(&n);
                        flux += ws * r * r;
                    }
                }
            }
        }
        let jump_term = if edge.tag == BoundaryTag::Neumann {
            0.0
        } else {
            w.beta * h * w.j1 * plain
                + (w.delta_inf / eps * h * w.j_inf + w.a1 * eps * prm.alpha / h) * w.a_inf * metric
        };
        let flux_term = if flux > 0.0 { rho_e * (w.a_inf / eps).sqrt() * flux } else { 0.0 };
        let share = if interior { 0.5 } else { 1.0 };
        for side in std::iter::once(edge.left).chain(edge.right) {
            eta_j[side.element] += share * jump_term;
            eta_e[side.element] += share * flux_term;
        }
    }

    for k in 0..nk {
        let (val, grad, hess) = d.eval_vol_hessian(u, k);
        let (dval, _) = d.eval_vol(du_dt, k);
        let mut acc = 0.0;
        for q in 0..nv {
            let p = &state.vol[k * nv + q];
            let g = Geometry::of(p);
            let x = p.position();
            let gu = Vector2::from(grad[q]);
            let div = metric_divergence(p, &g, gu, &hess[q]);
            let (w, _) = vel.residual(t, x);
            let conv = Vector2::new(w[0], w[1]).dot(&(g.finv_t * gu));
            let r = g.j * data.source(t, x) - g.j * dval[q] + eps * div - g.j * conv - prm.gamma0 * g.j * val[q];
            acc += d.vol_weight(k, q) * r * r;
        }
        eta_r[k] = weights.element_rho[k].powi(2) * acc;
    }
    (eta_j, eta_e, eta_r)
}

/// ∇_X·(A∇_X u) = A:∇²u + Σ_i (∂_i A)_{i·}·∇u with A = J F⁻¹F⁻ᵀ, using the
/// integrated ∂F and ∂_i J = J tr(F⁻¹∂_i F).
pub fn metric_divergence(p: &FlowPoint, g: &Geometry, grad: Vector2<f64>, hess: &[[f64; 2]; 2]) -> f64 {
    let finv = g.finv_t.transpose();
    let hm = Matrix2::new(hess[0][0], hess[0][1], hess[1][0], hess[1][1]);
    let mut div = g.metric.component_mul(&hm).sum();
    for i in 0..2 {
        let dfi = p.df[i];
        let dfinv = -finv * dfi * finv;
        let dj = g.j * (finv * dfi).trace();
        let da = (dfinv * g.finv_t + finv * dfinv.transpose()) * g.j + finv * g.finv_t * dj;
        div += (da.row(i) * grad)[0];
    }
    div
}

/// Σ_E h_E J₁^{ω_E} ∫_E [[v]]² over interior and Dirichlet edges.
pub fn weighted_jump_sum(d: &Discretization, v: &DGField, weights: &PatchWeights) -> f64 {
    let ne = d.nq_edge();
    let mut total = 0.0;
    for (e, edge) in d.mesh.edges.iter().enumerate() {
        if !edge.is_penalized() {
            continue;
        }
        let (l, _) = d.eval_side(v, e, 0);
        let r = if edge.is_interior() { d.eval_side(v, e, 1).0 } else { vec![0.0; ne] };
        let s: f64 = (0..ne).map(|q| d.edge_rule.weights[q] * edge.length * (l[q] - r[q]).powi(2)).sum();
        total += edge.length * weights.edge[e].j1 * s;
    }
    total
}

/// Squared pieces of the weighted norms for samples of one field.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormParts {
    /// Σ_K ∫ J v² (physical L²).
    pub h: f64,
    /// Σ_K ∫ β J v².
    pub h_beta: f64,
    /// Σ_K ∫ J |F⁻ᵀ∇v|².
    pub u: f64,
    /// j_h(v, v).
    pub jump: f64,
}

impl NormParts {
    /// |||v|||².
    pub fn energy(&self, eps: f64) -> f64 {
        eps * self.u + self.h_beta + eps * self.jump
    }

    /// N(v)² = |v|²_U + 2 j_h(v, v).
    pub fn n_squared(&self) -> f64 {
        self.u + 2.0 * self.jump
    }
}

/// Norm pieces from traces; pointwise β floored at `beta_min`.
pub fn norm_parts(
    d: &Discretization,
    v: &Traces,
    state: &FlowState,
    vel: &VelocityModel,
    alpha: f64,
    beta_min: f64,
) -> NormParts {
    let nv = d.nq_vol();
    let ne = d.nq_edge();
    let mut out = NormParts::default();
    for k in 0..d.n_elements() {
        for q in 0..nv {
            let i = k * nv + q;
            let p = &state.vol[i];
            let g = Geometry::of(p);
            let w = d.vol_weight(k, q) * g.j;
            let val = v.vol_val[i];
            out.h += w * val * val;
            out.h_beta += w * vel.beta(state.t, p.position(), beta_min) * val * val;
            out.u += w * (g.finv_t * Vector2::from(v.vol_grad[i])).norm_squared();
        }
    }
    for (e, edge) in d.mesh.edges.iter().enumerate() {
        if !edge.is_penalized() {
            continue;
        }
        let n = Vector2::new(edge.normal[0], edge.normal[1]);
        for q in 0..ne {
            let g = Geometry::of(&state.edge[e * ne + q]);
            let vals = v.edge_val[e * ne + q];
            let jump = vals[0] - if edge.is_interior() { vals[1] } else { 0.0 };
            let ws = d.edge_rule.weights[q] * edge.length;
            out.jump += ws * alpha / edge.length * g.j * (g.finv_t * n * jump).norm_squared();
        }
    }
    out
}

/// B(q)² = C_T⁻¹ Σ_E h_E ∫_E |{{q}}|² for vector samples on both sides of each edge point.
pub fn flux_average_seminorm(d: &Discretization, edge_samples: &[[[f64; 2]; 2]], c_t: f64) -> f64 {
    let ne = d.nq_edge();
    let mut total = 0.0;
    for (e, edge) in d.mesh.edges.iter().enumerate() {
        if !edge.is_penalized() {
            continue;
        }
        for q in 0..ne {
            let s = edge_samples[e * ne + q];
            let avg = if edge.is_interior() { [0.5 * (s[0][0] + s[1][0]), 0.5 * (s[0][1] + s[1][1])] } else { s[0] };
            total += edge.length * d.edge_rule.weights[q] * edge.length * (avg[0] * avg[0] + avg[1] * avg[1]);
        }
    }
    total / c_t
}

/// Running max and trapezoid integral over emitted time levels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimeAccumulator {
    pub max: f64,
    pub integral: f64,
    last: Option<(f64, f64)>,
}

impl TimeAccumulator {
    pub fn push(&mut self, t: f64, value: f64) {
        self.max = self.max.max(value);
        if let Some((t0, v0)) = self.last {
            self.integral += 0.5 * (t - t0) * (v0 + value);
        }
        self.last = Some((t, value));
    }
}

/// ‖v‖_#² = max_t ‖v‖²_{L²} + ∫ |||v|||² dt, accumulated level by level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SharpNorm {
    pub l2: TimeAccumulator,
    pub energy: TimeAccumulator,
}

impl SharpNorm {
    pub fn push(&mut self, t: f64, l2_sq: f64, energy_sq: f64) {
        self.l2.push(t, l2_sq);
        self.energy.push(t, energy_sq);
    }

    pub fn squared(&self) -> f64 {
        self.l2.max + self.energy.integral
    }
}
