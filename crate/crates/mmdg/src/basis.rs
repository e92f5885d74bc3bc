//! Nodal Lagrange bases on the reference triangle.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::quadrature::{make_edge_rule, make_volume_rule};

/// Location of a Lagrange node on the reference triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Local vertex 0, 1 or 2.
    Vertex(usize),
    /// Node `k` (1..p) counted from the start of local edge `edge`, which runs
    /// from local vertex `edge` to local vertex `(edge + 1) % 3`.
    Edge {
        edge: usize,
        k: usize,
    },
    Interior,
}

#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub degree: usize,
    pub nodes: Vec<[f64; 2]>,
    pub kinds: Vec<NodeKind>,
    exponents: Vec<(i32, i32)>,
    /// coeffs[(k, j)]: weight of monomial k in basis function j.
    coeffs: DMatrix<f64>,
}

impl ReferenceBasis {
    pub fn new(p: usize) -> Result<Self> {
        if !(1..=4).contains(&p) {
            return Err(Error::UnsupportedDegree(p));
        }
        let pf = p as f64;
        let mut nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut kinds = vec![NodeKind::Vertex(0), NodeKind::Vertex(1), NodeKind::Vertex(2)];
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for e in 0..3 {
            let (a, b) = (corners[e], corners[(e + 1) % 3]);
            for k in 1..p {
                let s = k as f64 / pf;
                nodes.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                kinds.push(NodeKind::Edge { edge: e, k });
            }
        }
        for j in 1..p {
            for i in 1..p - j {
                nodes.push([i as f64 / pf, j as f64 / pf]);
                kinds.push(NodeKind::Interior);
            }
        }
        let mut exponents = Vec::new();
        for d in 0..=p as i32 {
            for b in 0..=d {
                exponents.push((d - b, b));
            }
        }
        let m = exponents.len();
        let vander = DMatrix::from_fn(m, m, |i, k| {
            let (a, b) = exponents[k];
            nodes[i][0].powi(a) * nodes[i][1].powi(b)
        });
        let coeffs = vander.try_inverse().ok_or(Error::UnsupportedDegree(p))?;
        Ok(Self { degree: p, nodes, kinds, exponents, coeffs })
    }

    /// Number of local functions (p+1)(p+2)/2.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn monomials(&self, x: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 3]>) {
        let pw = |v: f64, k: i32| if k < 0 { 0.0 } else { v.powi(k) };
        let mut val = Vec::with_capacity(self.exponents.len());
        let mut grad = Vec::with_capacity(self.exponents.len());
        let mut hess = Vec::with_capacity(self.exponents.len());
        for &(a, b) in &self.exponents {
            let (af, bf) = (a as f64, b as f64);
            val.push(pw(x[0], a) * pw(x[1], b));
            grad.push([af * pw(x[0], a - 1) * pw(x[1], b), bf * pw(x[0], a) * pw(x[1], b - 1)]);
            hess.push([
                af * (af - 1.0) * pw(x[0], a - 2) * pw(x[1], b),
                af * bf * pw(x[0], a - 1) * pw(x[1], b - 1),
                bf * (bf - 1.0) * pw(x[0], a) * pw(x[1], b - 2),
            ]);
        }
        (val, grad, hess)
    }

    /// Values of all basis functions at a reference point.
    pub fn eval(&self, x: [f64; 2]) -> Vec<f64> {
        self.eval_all(x).0
    }

    /// Values, reference gradients and reference Hessians (xx, xy, yy).
    pub fn eval_all(&self, x: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 3]>) {
        let (mv, mg, mh) = self.monomials(x);
        let m = self.len();
        let mut v = vec![0.0; m];
        let mut g = vec![[0.0; 2]; m];
        let mut h = vec![[0.0; 3]; m];
        for j in 0..m {
            for k in 0..m {
                let c = self.coeffs[(k, j)];
                v[j] += c * mv[k];
                g[j][0] += c * mg[k][0];
                g[j][1] += c * mg[k][1];
                for l in 0..3 {
                    h[j][l] += c * mh[k][l];
                }
            }
        }
        (v, g, h)
    }
}

/// Inverse and trace constants on the reference triangle, h = diameter = √2:
/// ‖v‖²_∂K ≤ C_T h⁻¹ ‖v‖²_K and ‖∇v‖_K ≤ C_I h⁻¹ ‖v‖_K for v of degree p.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteConstants {
    pub trace: f64,
    pub inverse: f64,
}

/// Measures C_T and C_I by generalized eigenvalue problems against the mass matrix.
pub fn measure_constants(basis: &ReferenceBasis) -> DiscreteConstants {
    let m = basis.len();
    let p = basis.degree;
    let vol = make_volume_rule(2 * p).expect("supported degree");
    let edge = make_edge_rule(2 * p).expect("supported degree");
    let mut mass = DMatrix::zeros(m, m);
    let mut stiff = DMatrix::zeros(m, m);
    for (x, w) in vol.points.iter().zip(&vol.weights) {
        let (v, g, _) = basis.eval_all(*x);
        for i in 0..m {
            for j in 0..m {
                mass[(i, j)] += w * v[i] * v[j];
                stiff[(i, j)] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    let corners: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut bnd = DMatrix::zeros(m, m);
    for e in 0..3 {
        let (a, b) = (corners[e], corners[(e + 1) % 3]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        for (s, w) in edge.points.iter().zip(&edge.weights) {
            let x = [a[0] + s[0] * (b[0] - a[0]), a[1] + s[0] * (b[1] - a[1])];
            let v = basis.eval(x);
            for i in 0..m {
                for j in 0..m {
                    bnd[(i, j)] += w * len * v[i] * v[j];
                }
            }
        }
    }
    let h = std::f64::consts::SQRT_2;
    DiscreteConstants {
        trace: h * max_generalized_eigenvalue(&bnd, &mass),
        inverse: h * max_generalized_eigenvalue(&stiff, &mass).sqrt(),
    }
}

/// Largest λ with A v = λ M v, M symmetric positive definite.
pub fn max_generalized_eigenvalue(a: &DMatrix<f64>, mass: &DMatrix<f64>) -> f64 {
    let chol = mass.clone().cholesky().expect("mass matrix is SPD");
    let l = chol.l();
    let linv = l.clone().try_inverse().expect("triangular factor is invertible");
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    SymmetricEigen::new(c).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dimensions() {
        assert_eq!(ReferenceBasis::new(1).unwrap().len(), 3);
        assert_eq!(ReferenceBasis::new(2).unwrap().len(), 6);
        assert_eq!(ReferenceBasis::new(4).unwrap().len(), 15);
        assert!(ReferenceBasis::new(0).is_err());
        assert!(ReferenceBasis::new(5).is_err());
    }

    #[test]
    fn lagrange_and_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in 1..=4 {
            let b = ReferenceBasis::new(p).unwrap();
            for (i, &x) in b.nodes.iter().enumerate() {
                let v = b.eval(x);
                for (j, vj) in v.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vj - want).abs() < 1e-12);
                }
            }
            for _ in 0..20 {
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                let x = if s + t > 1.0 { [1.0 - s, 1.0 - t] } else { [s, t] };
                let (v, g, h) = b.eval_all(x);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(g.iter().map(|g| g[0]).sum::<f64>().abs() < 1e-11);
                assert!(g.iter().map(|g| g[1]).sum::<f64>().abs() < 1e-11);
                assert!(h.iter().map(|h| h[1]).sum::<f64>().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn p1_gradients_are_constant() {
        let b = ReferenceBasis::new(1).unwrap();
        let g0 = b.eval_all([0.1, 0.2]).1;
        let g1 = b.eval_all([0.7, 0.1]).1;
        for (a, c) in g0.iter().zip(&g1) {
            assert!((a[0] - c[0]).abs() < 1e-14 && (a[1] - c[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = ReferenceBasis::new(3).unwrap();
        let x = [0.23, 0.31];
        let d = 1e-6;
        let (_, g, h) = b.eval_all(x);
        let gp = b.eval_all([x[0] + d, x[1]]).1;
        let gm = b.eval_all([x[0] - d, x[1]]).1;
        let vp = b.eval([x[0], x[1] + d]);
        let vm = b.eval([x[0], x[1] - d]);
        for j in 0..b.len() {
            assert!(((vp[j] - vm[j]) / (2.0 * d) - g[j][1]).abs() < 1e-7);
            assert!(((gp[j][0] - gm[j][0]) / (2.0 * d) - h[j][0]).abs() < 1e-6);
            assert!(((gp[j][1] - gm[j][1]) / (2.0 * d) - h[j][1]).abs() < 1e-6);
        }
    }

    /// Rayleigh quotients of random polynomials never exceed the measured constant.
    #[test]
    fn trace_constant_bounds_random_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=3 {
            let b = ReferenceBasis::new(p).unwrap();
            let c = measure_constants(&b);
            let vol = make_volume_rule(2 * p).unwrap();
            let edge = make_edge_rule(2 * p).unwrap();
            let mut best: f64 = 0.0;
            for _ in 0..200 {
                let coef: Vec<f64> = (0..b.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let f = |x: [f64; 2]| b.eval(x).iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>();
                let nk = vol.integrate(|x| f(x).powi(2));
                let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
                let mut nb = 0.0;
                for e in 0..3 {
                    let (a, bb) = (corners[e], corners[(e + 1) % 3]);
                    let len = f64::hypot(bb[0] - a[0], bb[1] - a[1]);
                    nb += len
                        * edge.integrate(|s| f([a[0] + s[0] * (bb[0] - a[0]), a[1] + s[0] * (bb[1] - a[1])]).powi(2));
                }
                best = best.max(std::f64::consts::SQRT_2 * nb / nk);
            }
            assert!(best <= c.trace * (1.0 + 1e-12), "p {p}: {best} > {}", c.trace);
            assert!(best > 0.3 * c.trace);
            assert!(c.inverse > 0.0);
        }
    }
}
