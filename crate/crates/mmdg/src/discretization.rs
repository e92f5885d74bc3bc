//! Mesh + basis + quadrature bundled with precomputed tables.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::basis::{measure_constants, DiscreteConstants, NodeKind, ReferenceBasis};
use crate::error::Result;
use crate::flowmap::FlowState;
use crate::mesh::{BoundaryTag, Mesh, PatchMap, Point};
use crate::quadrature::{make_edge_rule, make_volume_rule, QuadratureRule};

/// Affine map X = x0 + A ξ of one element.
#[derive(Debug, Clone, Copy)]
pub struct ElementMap {
    pub x0: Point,
    pub a: [[f64; 2]; 2],
    pub ainv: [[f64; 2]; 2],
    /// det A = 2|K|.
    pub det: f64,
}

impl ElementMap {
    pub fn to_physical(&self, xi: [f64; 2]) -> Point {
        [
            self.x0[0] + self.a[0][0] * xi[0] + self.a[0][1] * xi[1],
            self.x0[1] + self.a[1][0] * xi[0] + self.a[1][1] * xi[1],
        ]
    }

    pub fn to_reference(&self, x: Point) -> [f64; 2] {
        let d = [x[0] - self.x0[0], x[1] - self.x0[1]];
        [self.ainv[0][0] * d[0] + self.ainv[0][1] * d[1], self.ainv[1][0] * d[0] + self.ainv[1][1] * d[1]]
    }

    /// ∇_X from ∇_ξ: A⁻ᵀ g.
    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [self.ainv[0][0] * g[0] + self.ainv[1][0] * g[1], self.ainv[0][1] * g[0] + self.ainv[1][1] * g[1]]
    }

    /// Hessian in X from the reference Hessian (xx, xy, yy): A⁻ᵀ H A⁻¹.
    pub fn hessian(&self, h: [f64; 3]) -> [[f64; 2]; 2] {
        let hm = [[h[0], h[1]], [h[1], h[2]]];
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        out[i][j] += self.ainv[k][i] * hm[k][l] * self.ainv[l][j];
                    }
                }
            }
        }
        out
    }
}

/// Basis values and X-gradients at the edge quadrature points of one side.
#[derive(Debug, Clone)]
pub struct SideTable {
    pub element: usize,
    pub phi: Vec<Vec<f64>>,
    pub grad: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub patches: PatchMap,
    pub basis: ReferenceBasis,
    pub vol_rule: QuadratureRule,
    pub edge_rule: QuadratureRule,
    pub constants: DiscreteConstants,
    pub maps: Vec<ElementMap>,
    pub vol_phi: Vec<Vec<f64>>,
    pub vol_dphi: Vec<Vec<[f64; 2]>>,
    pub vol_hess: Vec<Vec<[f64; 3]>>,
    /// Per edge: left side, then right side when interior.
    pub sides: Vec<Vec<SideTable>>,
    /// Inverse of the reference-triangle mass matrix ∫ φ_i φ_j dξ.
    pub ref_mass_inv: DMatrix<f64>,
    /// Global Lagrange node of each (element, local node).
    pub node_ids: Vec<Vec<usize>>,
    pub node_is_dirichlet: Vec<bool>,
    pub n_nodes: usize,
}

impl Discretization {
    /// Uses volume and edge rules exact to degree 2p + `geo_allowance`.
    pub fn new(mesh: Mesh, p: usize, geo_allowance: usize) -> Result<Self> {
        let basis = ReferenceBasis::new(p)?;
        let vol_rule = make_volume_rule(2 * p + geo_allowance)?;
        let edge_rule = make_edge_rule(2 * p + geo_allowance)?;
        let constants = measure_constants(&basis);
        let patches = PatchMap::build(&mesh);
        let maps: Vec<ElementMap> = (0..mesh.n_elements())
            .map(|k| {
                let (x0, a) = mesh.affine(k);
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                let ainv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
                ElementMap { x0, a, ainv, det }
            })
            .collect();
        let m = basis.len();
        let (mut vol_phi, mut vol_dphi, mut vol_hess) = (Vec::new(), Vec::new(), Vec::new());
        let mut ref_mass = DMatrix::zeros(m, m);
        for (x, w) in vol_rule.points.iter().zip(&vol_rule.weights) {
            let (v, g, h) = basis.eval_all(*x);
            for i in 0..m {
                for j in 0..m {
                    ref_mass[(i, j)] += w * v[i] * v[j];
                }
            }
            vol_phi.push(v);
            vol_dphi.push(g);
            vol_hess.push(h);
        }
        let ref_mass_inv = ref_mass.try_inverse().expect("reference mass is invertible");
        let sides = mesh
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (mesh.vertices[e.vertices[0]], mesh.vertices[e.vertices[1]]);
                let pts: Vec<Point> = edge_rule
                    .points
                    .iter()
                    .map(|s| [a[0] + s[0] * (b[0] - a[0]), a[1] + s[0] * (b[1] - a[1])])
                    .collect();
                std::iter::once(e.left)
                    .chain(e.right)
                    .map(|side| {
                        let map = &maps[side.element];
                        let mut phi = Vec::new();
                        let mut grad = Vec::new();
                        for &x in &pts {
                            let (v, g, _) = basis.eval_all(map.to_reference(x));
                            phi.push(v);
                            grad.push(g.into_iter().map(|g| map.grad(g)).collect());
                        }
                        SideTable { element: side.element, phi, grad }
                    })
                    .collect()
            })
            .collect();
        let (node_ids, node_is_dirichlet, n_nodes) = global_nodes(&mesh, &basis);
        Ok(Self {
            mesh,
            patches,
            basis,
            vol_rule,
            edge_rule,
            constants,
            maps,
            vol_phi,
            vol_dphi,
            vol_hess,
            sides,
            ref_mass_inv,
            node_ids,
            node_is_dirichlet,
            n_nodes,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    /// Local functions per element.
    pub fn m(&self) -> usize {
        self.basis.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_elements() * self.m()
    }

    pub fn nq_vol(&self) -> usize {
        self.vol_rule.len()
    }

    pub fn nq_edge(&self) -> usize {
        self.edge_rule.len()
    }

    pub fn vol_points(&self) -> Vec<Point> {
        self.maps.iter().flat_map(|map| self.vol_rule.points.iter().map(move |&xi| map.to_physical(xi))).collect()
    }

    pub fn edge_points(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for e in &self.mesh.edges {
            let (a, b) = (self.mesh.vertices[e.vertices[0]], self.mesh.vertices[e.vertices[1]]);
            for s in &self.edge_rule.points {
                out.push([a[0] + s[0] * (b[0] - a[0]), a[1] + s[0] * (b[1] - a[1])]);
            }
        }
        out
    }

    pub fn initial_state(&self) -> FlowState {
        FlowState::at_rest(&self.vol_points(), &self.edge_points())
    }

    /// Reference-mesh Lagrange node coordinates of element k.
    pub fn node_points(&self, k: usize) -> Vec<Point> {
        self.basis.nodes.iter().map(|&xi| self.maps[k].to_physical(xi)).collect()
    }

    /// Reference-mesh volume quadrature weight of point q in element k.
    pub fn vol_weight(&self, k: usize, q: usize) -> f64 {
        self.vol_rule.weights[q] * self.maps[k].det
    }

    /// Values and X-gradients of u at the volume points of element k.
    pub fn eval_vol(&self, u: &DGField, k: usize) -> (Vec<f64>, Vec<[f64; 2]>) {
        let c = u.element(k);
        let map = &self.maps[k];
        let mut val = vec![0.0; self.nq_vol()];
        let mut grad = vec![[0.0; 2]; self.nq_vol()];
        for q in 0..self.nq_vol() {
            let mut gr = [0.0; 2];
            for (j, cj) in c.iter().enumerate() {
                val[q] += cj * self.vol_phi[q][j];
                gr[0] += cj * self.vol_dphi[q][j][0];
                gr[1] += cj * self.vol_dphi[q][j][1];
            }
            grad[q] = map.grad(gr);
        }
        (val, grad)
    }

    /// Values, X-gradients and X-Hessians at the volume points of element k.
    #[allow(clippy::type_complexity)]
    pub fn eval_vol_hessian(&self, u: &DGField, k: usize) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[[f64; 2]; 2]>) {
        let (val, grad) = self.eval_vol(u, k);
        let c = u.element(k);
        let hess = (0..self.nq_vol())
            .map(|q| {
                let mut h = [0.0; 3];
                for (j, cj) in c.iter().enumerate() {
                    for l in 0..3 {
                        h[l] += cj * self.vol_hess[q][j][l];
                    }
                }
                self.maps[k].hessian(h)
            })
            .collect();
        (val, grad, hess)
    }

    /// Values and X-gradients of u on one side of edge e.
    pub fn eval_side(&self, u: &DGField, e: usize, side: usize) -> (Vec<f64>, Vec<[f64; 2]>) {
        let tab = &self.sides[e][side];
        let c = u.element(tab.element);
        let nq = self.nq_edge();
        let mut val = vec![0.0; nq];
        let mut grad = vec![[0.0; 2]; nq];
        for q in 0..nq {
            for (j, cj) in c.iter().enumerate() {
                val[q] += cj * tab.phi[q][j];
                grad[q][0] += cj * tab.grad[q][j][0];
                grad[q][1] += cj * tab.grad[q][j][1];
            }
        }
        (val, grad)
    }

    /// Samples of u needed by the forms.
    pub fn traces(&self, u: &DGField) -> Traces {
        let mut tr = Traces::zeros(self);
        let nv = self.nq_vol();
        for k in 0..self.n_elements() {
            let (v, g) = self.eval_vol(u, k);
            tr.vol_val[k * nv..(k + 1) * nv].copy_from_slice(&v);
            tr.vol_grad[k * nv..(k + 1) * nv].copy_from_slice(&g);
        }
        let ne = self.nq_edge();
        for e in 0..self.mesh.edges.len() {
            for s in 0..self.sides[e].len() {
                let (v, g) = self.eval_side(u, e, s);
                for q in 0..ne {
                    tr.edge_val[e * ne + q][s] = v[q];
                    tr.edge_grad[e * ne + q][s] = g[q];
                }
            }
        }
        tr
    }

    /// Samples of a smooth function û(X) given with its X-gradient.
    pub fn traces_of(&self, state: &FlowState, f: impl Fn(&crate::flowmap::FlowPoint) -> (f64, [f64; 2])) -> Traces {
        let mut tr = Traces::zeros(self);
        for (i, p) in state.vol.iter().enumerate() {
            let (v, g) = f(p);
            tr.vol_val[i] = v;
            tr.vol_grad[i] = g;
        }
        let ne = self.nq_edge();
        for (i, p) in state.edge.iter().enumerate() {
            let (v, g) = f(p);
            let interior = self.mesh.edges[i / ne].is_interior();
            tr.edge_val[i] = [v, if interior { v } else { 0.0 }];
            tr.edge_grad[i] = [g, if interior { g } else { [0.0; 2] }];
        }
        tr
    }

    /// Boundary tag of edge e.
    pub fn tag(&self, e: usize) -> BoundaryTag {
        self.mesh.edges[e].tag
    }
}

/// Point samples of a scalar field: volume values/X-gradients and both sides
/// of every edge point (exterior side zero on boundary edges).
#[derive(Debug, Clone)]
pub struct Traces {
    pub vol_val: Vec<f64>,
    pub vol_grad: Vec<[f64; 2]>,
    pub edge_val: Vec<[f64; 2]>,
    pub edge_grad: Vec<[[f64; 2]; 2]>,
}

impl Traces {
    pub fn zeros(d: &Discretization) -> Self {
        let nv = d.n_elements() * d.nq_vol();
        let ne = d.mesh.edges.len() * d.nq_edge();
        Self {
            vol_val: vec![0.0; nv],
            vol_grad: vec![[0.0; 2]; nv],
            edge_val: vec![[0.0; 2]; ne],
            edge_grad: vec![[[0.0; 2]; 2]; ne],
        }
    }
}

fn global_nodes(mesh: &Mesh, basis: &ReferenceBasis) -> (Vec<Vec<usize>>, Vec<bool>, usize) {
    #[derive(Hash, PartialEq, Eq)]
    enum Key {
        Vertex(usize),
        Edge(usize, usize),
        Interior(usize, usize),
    }
    let p = basis.degree;
    let mut map: HashMap<Key, usize> = HashMap::new();
    let mut dirichlet = Vec::new();
    let mut vertex_dirichlet = vec![false; mesh.vertices.len()];
    for e in mesh.edges.iter().filter(|e| e.tag == BoundaryTag::Dirichlet) {
        vertex_dirichlet[e.vertices[0]] = true;
        vertex_dirichlet[e.vertices[1]] = true;
    }
    let mut ids = Vec::with_capacity(mesh.n_elements());
    for (k, tri) in mesh.elements.iter().enumerate() {
        let mut local = Vec::with_capacity(basis.len());
        for (j, kind) in basis.kinds.iter().enumerate() {
            let (key, is_d) = match *kind {
                NodeKind::Vertex(l) => (Key::Vertex(tri[l]), vertex_dirichlet[tri[l]]),
                NodeKind::Edge { edge, k: pos } => {
                    let ge = mesh.element_edges[k][edge];
                    let along = if mesh.edges[ge].vertices[0] == tri[edge] { pos } else { p - pos };
                    (Key::Edge(ge, along), mesh.edges[ge].tag == BoundaryTag::Dirichlet)
                }
                NodeKind::Interior => (Key::Interior(k, j), false),
            };
            let next = map.len();
            let id = *map.entry(key).or_insert_with(|| {
                dirichlet.push(is_d);
                next
            });
            local.push(id);
        }
        ids.push(local);
    }
    let n = map.len();
    (ids, dirichlet, n)
}

/// Piecewise polynomial field: `m` nodal coefficients per element.
#[derive(Debug, Clone, PartialEq)]
pub struct DGField {
    pub m: usize,
    pub coeffs: Vec<f64>,
}

impl DGField {
    pub fn zeros(d: &Discretization) -> Self {
        Self { m: d.m(), coeffs: vec![0.0; d.n_dofs()] }
    }

    pub fn from_coeffs(d: &Discretization, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), d.n_dofs(), "coefficient count");
        Self { m: d.m(), coeffs }
    }

    pub fn element(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.m..(k + 1) * self.m]
    }

    pub fn element_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coeffs[k * self.m..(k + 1) * self.m]
    }

    /// Nodal interpolant of f at the reference-mesh Lagrange nodes.
    pub fn interpolate(d: &Discretization, f: impl Fn(Point) -> f64) -> Self {
        let coeffs = (0..d.n_elements()).flat_map(|k| d.node_points(k).into_iter().map(&f)).collect();
        Self { m: d.m(), coeffs }
    }

    pub fn axpy(&mut self, a: f64, x: &DGField) {
        for (y, x) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y += a * x;
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.coeffs.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> DGField {
        DGField { m: self.m, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{all_dirichlet, Diagonal};

    fn disc(n: usize, p: usize) -> Discretization {
        Discretization::new(Mesh::structured_unit_square(n, Diagonal::Alternating, all_dirichlet).unwrap(), p, 4)
            .unwrap()
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let d = disc(3, 2);
        let f = |x: Point| 1.0 + 2.0 * x[0] - x[1] + x[0] * x[1] - 3.0 * x[1] * x[1];
        let u = DGField::interpolate(&d, f);
        let pts = d.vol_points();
        let tr = d.traces(&u);
        for (i, x) in pts.iter().enumerate() {
            assert!((tr.vol_val[i] - f(*x)).abs() < 1e-12);
            let g = [2.0 + x[1], -1.0 + x[0] - 6.0 * x[1]];
            assert!((tr.vol_grad[i][0] - g[0]).abs() < 1e-11 && (tr.vol_grad[i][1] - g[1]).abs() < 1e-11);
        }
        for (e, edge) in d.mesh.edges.iter().enumerate() {
            if edge.is_interior() {
                for q in 0..d.nq_edge() {
                    let v = tr.edge_val[e * d.nq_edge() + q];
                    assert!((v[0] - v[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn global_node_counts() {
        for p in 1..=3 {
            let n = 3;
            let d = disc(n, p);
            assert_eq!(d.n_nodes, (n * p + 1) * (n * p + 1));
            let boundary = d.node_is_dirichlet.iter().filter(|&&b| b).count();
            assert_eq!(boundary, 4 * n * p);
        }
    }

    #[test]
    fn shared_nodes_coincide() {
        let d = disc(3, 3);
        let mut pos: Vec<Option<Point>> = vec![None; d.n_nodes];
        for k in 0..d.n_elements() {
            for (j, x) in d.node_points(k).into_iter().enumerate() {
                let id = d.node_ids[k][j];
                if let Some(p) = pos[id] {
                    assert!((p[0] - x[0]).abs() < 1e-14 && (p[1] - x[1]).abs() < 1e-14);
                }
                pos[id] = Some(x);
            }
        }
    }
}
