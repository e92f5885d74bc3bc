//! Mass operator, the interior-penalty form a_h, the load l_h, the split
//! forms ã_h and p̃_h, and the projections used around them.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};

use crate::discretization::{DGField, Discretization, Traces};
use crate::error::{Error, Result};
use crate::flowmap::{FlowPoint, FlowState, Geometry};
use crate::mesh::{BoundaryTag, Point};
use crate::velocity::VelocityModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormParams {
    pub eps: f64,
    /// +1 symmetric (SIPG), −1 non-symmetric (NIPG).
    pub theta: f64,
    pub alpha: f64,
    pub gamma0: f64,
}

impl FormParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha = {} must be positive", self.alpha)));
        }
        if self.theta != 1.0 && self.theta != -1.0 {
            return Err(Error::InvalidParameter(format!("theta = {} must be ±1", self.theta)));
        }
        if !(self.eps >= 0.0) || !(self.gamma0 >= 0.0) {
            return Err(Error::InvalidParameter("eps and gamma0 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Source, Neumann flux and initial value of a problem, in physical coordinates.
pub trait ProblemData {
    fn source(&self, t: f64, x: Point) -> f64;
    /// Prescribed ε∂u/∂n for the outward physical unit normal `n`.
    fn neumann(&self, _t: f64, _x: Point, _n: Point) -> f64 {
        0.0
    }
    fn initial(&self, x: Point) -> f64;
}

/// Per-element factorized blocks ∫_K J φ_i φ_j.
#[derive(Debug, Clone)]
pub struct MassOperator {
    pub blocks: Vec<DMatrix<f64>>,
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl MassOperator {
    pub fn assemble(d: &Discretization, state: &FlowState) -> Result<Self> {
        let m = d.m();
        let nq = d.nq_vol();
        let mut blocks = Vec::with_capacity(d.n_elements());
        let mut factors = Vec::with_capacity(d.n_elements());
        for k in 0..d.n_elements() {
            let mut b = DMatrix::zeros(m, m);
            for q in 0..nq {
                let w = d.vol_weight(k, q) * state.vol[k * nq + q].j;
                let phi = &d.vol_phi[q];
                for i in 0..m {
                    for j in 0..m {
                        b[(i, j)] += w * phi[i] * phi[j];
                    }
                }
            }
            let f = b.clone().cholesky().ok_or(Error::NonSpdMass { element: k })?;
            blocks.push(b);
            factors.push(f);
        }
        Ok(Self { blocks, factors })
    }

    pub fn solve(&self, r: &[f64]) -> DGField {
        let m = self.blocks.first().map_or(0, |b| b.nrows());
        let mut out = Vec::with_capacity(r.len());
        for (k, f) in self.factors.iter().enumerate() {
            let x = f.solve(&DVector::from_column_slice(&r[k * m..(k + 1) * m]));
            out.extend(x.iter());
        }
        DGField { m, coeffs: out }
    }

    pub fn apply(&self, u: &DGField) -> Vec<f64> {
        let mut out = Vec::with_capacity(u.coeffs.len());
        for (k, b) in self.blocks.iter().enumerate() {
            out.extend((b * DVector::from_column_slice(u.element(k))).iter());
        }
        out
    }
}

/// Which pieces of the forms to assemble.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parts {
    pub diffusion: bool,
    /// Volume convection plus the inflow jump term of a_h.
    pub upwind: bool,
    /// −u v ∇·(V−Ṽ) volume term plus f_h (integration-by-parts form).
    pub split_convection: bool,
    pub reaction: bool,
    pub penalty: bool,
    /// +p̃_h (both flux terms, θ-weighted second one).
    pub flux: bool,
}

impl Parts {
    pub const AH: Parts =
        Parts { diffusion: true, upwind: true, split_convection: false, reaction: true, penalty: true, flux: true };
    pub const ATILDE: Parts =
        Parts { diffusion: true, upwind: false, split_convection: true, reaction: true, penalty: true, flux: false };
    pub const PTILDE: Parts =
        Parts { diffusion: false, upwind: false, split_convection: false, reaction: false, penalty: false, flux: true };
}

fn geom(p: &FlowPoint) -> (Geometry, Vector2<f64>) {
    (Geometry::of(p), p.x)
}

/// v ↦ a_h(u, v) for all basis test functions.
pub fn apply_ah(d: &Discretization, u: &Traces, state: &FlowState, vel: &VelocityModel, prm: &FormParams) -> Vec<f64> {
    assemble(d, u, state, vel, prm, Parts::AH, -1.0)
}

/// (ã_h(u, ·), p̃_h(u, ·)); a_h = ã_h − p̃_h.
pub fn apply_split(
    d: &Discretization,
    u: &Traces,
    state: &FlowState,
    vel: &VelocityModel,
    prm: &FormParams,
) -> (Vec<f64>, Vec<f64>) {
    (assemble(d, u, state, vel, prm, Parts::ATILDE, 1.0), assemble(d, u, state, vel, prm, Parts::PTILDE, 1.0))
}

/// Assembles the selected parts; the flux contribution enters with `flux_sign`.
pub fn assemble(
    d: &Discretization,
    u: &Traces,
    state: &FlowState,
    vel: &VelocityModel,
    prm: &FormParams,
    parts: Parts,
    flux_sign: f64,
) -> Vec<f64> {
    let m = d.m();
    let nv = d.nq_vol();
    let ne = d.nq_edge();
    let t = state.t;
    let mut res = vec![0.0; d.n_dofs()];
    // Coefficients of Π(J^{1/2}F⁻ᵀ∇u), one 2-vector per local function.
    let mut proj = vec![[0.0; 2]; d.n_dofs()];
    // Adjoint accumulators for the θ-term: Σ over edges of the test-side weights.
    let mut adj = vec![[0.0; 2]; d.n_dofs()];

    for k in 0..d.n_elements() {
        let r = &mut res[k * m..(k + 1) * m];
        let mut rhs = vec![[0.0; 2]; m];
        for q in 0..nv {
            let p = &state.vol[k * nv + q];
            let (g, x) = geom(p);
            let wq = d.vol_weight(k, q);
            let val = u.vol_val[k * nv + q];
            let gx = Vector2::from(u.vol_grad[k * nv + q]);
            let phys = g.finv_t * gx;
            let (w, gw) = vel.residual(t, [x[0], x[1]]);
            let wv = Vector2::new(w[0], w[1]);
            let finv = g.finv_t.transpose();
            let mut cgrad = Vector2::zeros();
            let mut cval = 0.0;
            if parts.diffusion {
                cgrad += finv * phys * (wq * g.j * prm.eps);
            }
            if parts.upwind {
                cval += wq * g.j * wv.dot(&phys);
            }
            if parts.split_convection {
                cval -= wq * g.j * val * (gw[0][0] + gw[1][1]);
                cgrad -= finv * wv * (wq * g.j * val);
            }
            if parts.reaction {
                cval += wq * g.j * prm.gamma0 * val;
            }
            let dphi = &d.vol_dphi[q];
            let phi = &d.vol_phi[q];
            for i in 0..m {
                let gi = d.maps[k].grad(dphi[i]);
                r[i] += cval * phi[i] + cgrad[0] * gi[0] + cgrad[1] * gi[1];
            }
            if parts.flux {
                let gu = phys * g.j.sqrt() * wq;
                for j in 0..m {
                    rhs[j][0] += gu[0] * phi[j];
                    rhs[j][1] += gu[1] * phi[j];
                }
            }
        }
        if parts.flux {
            let scale = 1.0 / d.maps[k].det;
            for i in 0..m {
                for j in 0..m {
                    let c = d.ref_mass_inv[(i, j)] * scale;
                    proj[k * m + i][0] += c * rhs[j][0];
                    proj[k * m + i][1] += c * rhs[j][1];
                }
            }
        }
    }

    for (e, edge) in d.mesh.edges.iter().enumerate() {
        let sides = &d.sides[e];
        let interior = edge.is_interior();
        let penalized = edge.tag != BoundaryTag::Neumann;
        let n = Vector2::new(edge.normal[0], edge.normal[1]);
        let avg = if interior { 0.5 } else { 1.0 };
        for q in 0..ne {
            let p = &state.edge[e * ne + q];
            let (g, x) = geom(p);
            let ws = d.edge_rule.weights[q] * edge.length;
            let vals = u.edge_val[e * ne + q];
            let jump = n * (vals[0] - if interior { vals[1] } else { 0.0 });
            let fj = g.finv_t * jump;
            let fnl = g.finv_t * n;
            let sqj = g.j.sqrt();
            // Side contributions: coefficient multiplying φ_i on each side.
            let mut coef = [0.0; 2];
            if penalized && (parts.penalty || parts.flux) {
                let mut avg_proj = Vector2::zeros();
                if parts.flux {
                    for tab in sides {
                        let k = tab.element;
                        for j in 0..m {
                            avg_proj[0] += avg * proj[k * m + j][0] * tab.phi[q][j];
                            avg_proj[1] += avg * proj[k * m + j][1] * tab.phi[q][j];
                        }
                    }
                }
                for (s, c) in coef.iter_mut().enumerate().take(sides.len()) {
                    let sigma = if s == 0 { 1.0 } else { -1.0 };
                    if parts.penalty {
                        *c += ws * sigma * prm.alpha * prm.eps / edge.length * g.j * fj.dot(&fnl);
                    }
                    if parts.flux {
                        *c += flux_sign * ws * sigma * prm.eps * sqj * avg_proj.dot(&fnl);
                    }
                }
                if parts.flux {
                    let a = fj * (flux_sign * ws * prm.eps * prm.theta * sqj * avg);
                    for tab in sides {
                        let k = tab.element;
                        for j in 0..m {
                            adj[k * m + j][0] += a[0] * tab.phi[q][j];
                            adj[k * m + j][1] += a[1] * tab.phi[q][j];
                        }
                    }
                }
            }
            if parts.upwind || parts.split_convection {
                let (w, _) = vel.residual(t, [x[0], x[1]]);
                let wv = Vector2::new(w[0], w[1]);
                let wn = wv.dot(&fnl);
                // Outflow side, if any: its trace multiplies the jump of the test function.
                let outflow = if wn >= 0.0 {
                    Some(0)
                } else if interior {
                    Some(1)
                } else {
                    None
                };
                for (s, c) in coef.iter_mut().enumerate().take(sides.len()) {
                    let wn_s = if s == 0 { wn } else { -wn };
                    if parts.upwind && wn_s < 0.0 {
                        *c -= ws * g.j * wv.dot(&fj);
                    }
                    if let (true, Some(o)) = (parts.split_convection, outflow) {
                        *c += ws * g.j * wn_s * vals[o];
                    }
                }
            }
            for (s, tab) in sides.iter().enumerate() {
                let k = tab.element;
                for i in 0..m {
                    res[k * m + i] += coef[s] * tab.phi[q][i];
                }
            }
        }
    }

    if parts.flux {
        for k in 0..d.n_elements() {
            let scale = 1.0 / d.maps[k].det;
            let mut r = vec![[0.0; 2]; m];
            for i in 0..m {
                for j in 0..m {
                    let c = d.ref_mass_inv[(i, j)] * scale;
                    r[i][0] += c * adj[k * m + j][0];
                    r[i][1] += c * adj[k * m + j][1];
                }
            }
            for q in 0..nv {
                let p = &state.vol[k * nv + q];
                let g = Geometry::of(p);
                let phi = &d.vol_phi[q];
                let mut rq = Vector2::zeros();
                for j in 0..m {
                    rq[0] += r[j][0] * phi[j];
                    rq[1] += r[j][1] * phi[j];
                }
                // (J^{1/2}F⁻ᵀ∇φ_i)·R = J^{1/2}(F⁻¹R)·∇φ_i.
                let c = g.finv_t.transpose() * rq * (g.j.sqrt() * d.vol_weight(k, q));
                for i in 0..m {
                    let gi = d.maps[k].grad(d.vol_dphi[q][i]);
                    res[k * m + i] += c[0] * gi[0] + c[1] * gi[1];
                }
            }
        }
    }
    res
}

/// l_h(v) for all basis test functions.
pub fn assemble_lh(d: &Discretization, state: &FlowState, data: &dyn ProblemData) -> Vec<f64> {
    let m = d.m();
    let nv = d.nq_vol();
    let ne = d.nq_edge();
    let t = state.t;
    let mut res = vec![0.0; d.n_dofs()];
    for k in 0..d.n_elements() {
        for q in 0..nv {
            let p = &state.vol[k * nv + q];
            let c = d.vol_weight(k, q) * p.j * data.source(t, p.position());
            for i in 0..m {
                res[k * m + i] += c * d.vol_phi[q][i];
            }
        }
    }
    for (e, edge) in d.mesh.edges.iter().enumerate() {
        if edge.tag != BoundaryTag::Neumann {
            continue;
        }
        let tab = &d.sides[e][0];
        for q in 0..ne {
            let p = &state.edge[e * ne + q];
            let g = Geometry::of(p);
            let fn_ = g.finv_t * Vector2::new(edge.normal[0], edge.normal[1]);
            let len = fn_.norm();
            let nphys = [fn_[0] / len, fn_[1] / len];
            let c = d.edge_rule.weights[q] * edge.length * p.j * data.neumann(t, p.position(), nphys) * len;
            for i in 0..m {
                res[tab.element * m + i] += c * tab.phi[q][i];
            }
        }
    }
    res
}

/// r = l_h − a_h(u, ·).
pub fn semidiscrete_residual(
    d: &Discretization,
    u: &DGField,
    state: &FlowState,
    vel: &VelocityModel,
    data: &dyn ProblemData,
    prm: &FormParams,
) -> Vec<f64> {
    let mut r = assemble_lh(d, state, data);
    let a = apply_ah(d, &d.traces(u), state, vel, prm);
    for (ri, ai) in r.iter_mut().zip(a) {
        *ri -= ai;
    }
    r
}

/// Elementwise L² projection (reference measure) of vector samples at the volume points.
pub fn project_l2(d: &Discretization, samples: &[[f64; 2]]) -> [DGField; 2] {
    let m = d.m();
    let nv = d.nq_vol();
    let mut out = [DGField::zeros(d), DGField::zeros(d)];
    for k in 0..d.n_elements() {
        let mut rhs = [DVector::zeros(m), DVector::zeros(m)];
        for q in 0..nv {
            let w = d.vol_weight(k, q);
            for c in 0..2 {
                for i in 0..m {
                    rhs[c][i] += w * samples[k * nv + q][c] * d.vol_phi[q][i];
                }
            }
        }
        for c in 0..2 {
            let x = &d.ref_mass_inv * &rhs[c] / d.maps[k].det;
            out[c].element_mut(k).copy_from_slice(x.as_slice());
        }
    }
    out
}

/// J-weighted elementwise projection P_h of scalar samples at the volume points.
pub fn weighted_projection(d: &Discretization, state: &FlowState, mass: &MassOperator, samples: &[f64]) -> DGField {
    let m = d.m();
    let nv = d.nq_vol();
    let mut rhs = vec![0.0; d.n_dofs()];
    for k in 0..d.n_elements() {
        for q in 0..nv {
            let c = d.vol_weight(k, q) * state.vol[k * nv + q].j * samples[k * nv + q];
            for i in 0..m {
                rhs[k * m + i] += c * d.vol_phi[q][i];
            }
        }
    }
    mass.solve(&rhs)
}

/// Nodal averaging onto the continuous subspace with zero Dirichlet trace.
pub fn averaging_operator(d: &Discretization, u: &DGField) -> DGField {
    let mut sum = vec![0.0; d.n_nodes];
    let mut count = vec![0usize; d.n_nodes];
    for k in 0..d.n_elements() {
        for (j, &id) in d.node_ids[k].iter().enumerate() {
            sum[id] += u.element(k)[j];
            count[id] += 1;
        }
    }
    let mut out = DGField::zeros(d);
    for k in 0..d.n_elements() {
        for (j, &id) in d.node_ids[k].iter().enumerate() {
            out.element_mut(k)[j] = if d.node_is_dirichlet[id] { 0.0 } else { sum[id] / count[id] as f64 };
        }
    }
    out
}

/// 2×2 helper for callers that need F⁻ᵀ applied to a plain array.
pub fn apply_mat(a: &Matrix2<f64>, v: [f64; 2]) -> [f64; 2] {
    let r = a * Vector2::new(v[0], v[1]);
    [r[0], r[1]]
}
