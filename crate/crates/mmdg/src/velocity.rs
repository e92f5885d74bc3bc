//! Analytic velocity fields built from separable terms c·P(x)·Q(y).

use crate::mesh::Point;

/// One-dimensional profile with derivatives up to order four.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// Σ c_k s^k.
    Poly(Vec<f64>),
    /// amp · sin(k s + phase).
    Sine { amp: f64, k: f64, phase: f64 },
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile::Poly(vec![c])
    }

    pub fn identity() -> Self {
        Profile::Poly(vec![0.0, 1.0])
    }

    /// h(s) = (s(1−s))².
    pub fn bump() -> Self {
        Profile::Poly(vec![0.0, 0.0, 1.0, -2.0, 1.0])
    }

    /// h'(s) = 2s(1−s)(1−2s).
    pub fn bump_prime() -> Self {
        Profile::Poly(vec![0.0, 2.0, -6.0, 4.0])
    }

    /// Derivatives of order 0..=4 at s.
    pub fn jet(&self, s: f64) -> [f64; 5] {
        match self {
            Profile::Poly(c) => {
                let mut out = [0.0; 5];
                for (order, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (k, &ck) in c.iter().enumerate().skip(order).rev() {
                        let falling: f64 = (0..order).map(|i| (k - i) as f64).product();
                        acc = acc * s + ck * falling;
                    }
                    *o = acc;
                }
                out
            }
            Profile::Sine { amp, k, phase } => {
                let a = k * s + phase;
                let (sn, cs) = a.sin_cos();
                [amp * sn, amp * k * cs, -amp * k * k * sn, -amp * k.powi(3) * cs, amp * k.powi(4) * sn]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub component: usize,
    pub scale: f64,
    pub px: Profile,
    pub py: Profile,
}

/// Value and spatial derivatives of a 2D vector field.
/// `d1[i][j] = ∂v_i/∂x_j`, `d2[i][j][k] = ∂²v_i/∂x_j∂x_k`, and so on.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: [f64; 2],
    pub d1: [[f64; 2]; 2],
    pub d2: [[[f64; 2]; 2]; 2],
    pub d3: [[[[f64; 2]; 2]; 2]; 2],
}

impl Jet {
    pub fn div(&self) -> f64 {
        self.d1[0][0] + self.d1[1][1]
    }

    /// ∂(∇·v)/∂x_k.
    pub fn grad_div(&self) -> [f64; 2] {
        [self.d2[0][0][0] + self.d2[1][1][0], self.d2[0][0][1] + self.d2[1][1][1]]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Field {
    pub terms: Vec<Term>,
}

impl Field {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: [f64; 2]) -> Self {
        let terms = (0..2)
            .filter(|&i| c[i] != 0.0)
            .map(|i| Term { component: i, scale: c[i], px: Profile::constant(1.0), py: Profile::constant(1.0) })
            .collect();
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Concatenates the terms of two fields.
    pub fn plus(&self, other: &Field) -> Field {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Field { terms }
    }

    pub fn jet(&self, x: Point) -> Jet {
        let mut j = Jet::default();
        for t in &self.terms {
            let a = t.px.jet(x[0]);
            let b = t.py.jet(x[1]);
            let c = t.component;
            // Derivative orders (nx, ny) for a multi-index over {x, y}.
            let d = |idx: &[usize]| {
                let nx = idx.iter().filter(|&&i| i == 0).count();
                t.scale * a[nx] * b[idx.len() - nx]
            };
            j.v[c] += d(&[]);
            for p in 0..2 {
                j.d1[c][p] += d(&[p]);
                for q in 0..2 {
                    j.d2[c][p][q] += d(&[p, q]);
                    for r in 0..2 {
                        j.d3[c][p][q][r] += d(&[p, q, r]);
                    }
                }
            }
        }
        j
    }

    pub fn value(&self, x: Point) -> [f64; 2] {
        let mut v = [0.0; 2];
        for t in &self.terms {
            v[t.component] += t.scale * t.px.jet(x[0])[0] * t.py.jet(x[1])[0];
        }
        v
    }

    /// Value and Jacobian only.
    pub fn value_grad(&self, x: Point) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut v = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for t in &self.terms {
            let a = t.px.jet(x[0]);
            let b = t.py.jet(x[1]);
            v[t.component] += t.scale * a[0] * b[0];
            g[t.component][0] += t.scale * a[1] * b[0];
            g[t.component][1] += t.scale * a[0] * b[1];
        }
        (v, g)
    }
}

/// Velocity pair (V, Ṽ) and the reaction shift γ₀.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub advection: Field,
    pub mesh: Field,
    pub gamma0: f64,
}

impl VelocityModel {
    pub fn new(advection: Field, mesh: Field, gamma0: f64) -> Self {
        Self { advection, mesh, gamma0 }
    }

    /// Same advection with the mesh held still.
    pub fn static_mesh(&self) -> Self {
        Self { advection: self.advection.clone(), mesh: Field::zero(), gamma0: self.gamma0 }
    }

    /// Remaining advection w = V − Ṽ and its Jacobian.
    pub fn residual(&self, _t: f64, x: Point) -> ([f64; 2], [[f64; 2]; 2]) {
        let (v, gv) = self.advection.value_grad(x);
        let (m, gm) = self.mesh.value_grad(x);
        (
            [v[0] - m[0], v[1] - m[1]],
            [[gv[0][0] - gm[0][0], gv[0][1] - gm[0][1]], [gv[1][0] - gm[1][0], gv[1][1] - gm[1][1]]],
        )
    }

    pub fn mesh_jet(&self, _t: f64, x: Point) -> Jet {
        self.mesh.jet(x)
    }

    /// β = γ₀ − ½∇·(V−Ṽ), floored at `beta_min`.
    pub fn beta(&self, t: f64, x: Point, beta_min: f64) -> f64 {
        let (_, g) = self.residual(t, x);
        (self.gamma0 - 0.5 * (g[0][0] + g[1][1])).max(beta_min)
    }
}

/// Ṽ = c·(h'(x)h(y), −h(x)h'(y)) as printed in the boundary-layer experiment.
pub fn boundary_layer_literal(c: f64) -> Field {
    Field {
        terms: vec![
            Term { component: 0, scale: c, px: Profile::bump_prime(), py: Profile::bump() },
            Term { component: 1, scale: -c, px: Profile::bump(), py: Profile::bump_prime() },
        ],
    }
}

/// Divergence-free counterpart c·(h(x)h'(y), −h'(x)h(y)).
pub fn boundary_layer_stream(c: f64) -> Field {
    Field {
        terms: vec![
            Term { component: 0, scale: c, px: Profile::bump(), py: Profile::bump_prime() },
            Term { component: 1, scale: -c, px: Profile::bump_prime(), py: Profile::bump() },
        ],
    }
}

/// Cellular flow c·(sin πx · π cos πy, −π cos πx · sin πy), divergence-free with zero normal trace.
pub fn cellular(c: f64) -> Field {
    let pi = std::f64::consts::PI;
    let s = Profile::Sine { amp: 1.0, k: pi, phase: 0.0 };
    let ds = Profile::Sine { amp: pi, k: pi, phase: 0.5 * pi };
    Field {
        terms: vec![
            Term { component: 0, scale: c, px: s.clone(), py: ds.clone() },
            Term { component: 1, scale: -c, px: ds, py: s },
        ],
    }
}

/// Rigid rotation ω(−y, x).
pub fn rotation(omega: f64) -> Field {
    Field {
        terms: vec![
            Term { component: 0, scale: -omega, px: Profile::constant(1.0), py: Profile::identity() },
            Term { component: 1, scale: omega, px: Profile::identity(), py: Profile::constant(1.0) },
        ],
    }
}

/// Pure stretch (x, 0).
pub fn stretch() -> Field {
    Field { terms: vec![Term { component: 0, scale: 1.0, px: Profile::identity(), py: Profile::constant(1.0) }] }
}
