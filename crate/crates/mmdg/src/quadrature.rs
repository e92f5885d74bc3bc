//! Quadrature on the reference triangle {(0,0), (1,0), (0,1)} and the unit interval.
//!
//! Volume rules are collapsed Gauss-Legendre products (Duffy map), which keeps
//! every weight positive for any exactness degree.

use crate::error::{Error, Result};

/// Highest exactness degree served; covers 2p+4 for p ≤ 4 with headroom.
pub const MAX_EXACTNESS: usize = 24;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(w).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Volume rule on the reference triangle, exact for total degree ≤ `exactness`.
pub fn make_volume_rule(exactness: usize) -> Result<QuadratureRule> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::UnsupportedExactness(exactness));
    }
    // The collapsed integrand gains one degree in the first direction.
    let n = (exactness + 2).div_ceil(2);
    let (x, w) = gauss_legendre_unit(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (&u, &wu) in x.iter().zip(&w) {
        for (&v, &wv) in x.iter().zip(&w) {
            points.push([u, v * (1.0 - u)]);
            weights.push(wu * wv * (1.0 - u));
        }
    }
    Ok(QuadratureRule { points, weights, exactness })
}

/// Edge rule on [0, 1]; points carry the parameter in slot 0.
pub fn make_edge_rule(exactness: usize) -> Result<QuadratureRule> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::UnsupportedExactness(exactness));
    }
    let n = (exactness + 2).div_ceil(2);
    let (x, w) = gauss_legendre_unit(n);
    Ok(QuadratureRule { points: x.into_iter().map(|s| [s, 0.0]).collect(), weights: w, exactness })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// ∫ x^a y^b over the reference triangle = a! b! / (a+b+2)!.
    fn monomial_triangle(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn volume_rule_is_exact_on_monomials() {
        for deg in [1, 4, 6, 8, 10, 12] {
            let rule = make_volume_rule(deg).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for a in 0..=deg as u32 {
                for b in 0..=(deg as u32 - a) {
                    let q = rule.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    assert!((q - monomial_triangle(a, b)).abs() < 1e-13, "deg {deg} a {a} b {b}");
                }
            }
        }
    }

    #[test]
    fn edge_rule_is_exact_on_monomials() {
        for deg in [2, 6, 8, 12] {
            let rule = make_edge_rule(deg).unwrap();
            for k in 0..=deg as i32 {
                let q = rule.integrate(|p| p[0].powi(k));
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constants_and_xy() {
        let v = make_volume_rule(8).unwrap();
        assert!((v.integrate(|_| 1.0) - 0.5).abs() < 1e-15);
        assert!((v.integrate(|p| p[0] * p[1]) - 1.0 / 24.0).abs() < 1e-15);
        let e = make_edge_rule(8).unwrap();
        assert!((e.integrate(|_| 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_huge_exactness() {
        assert!(make_volume_rule(MAX_EXACTNESS + 1).is_err());
    }
}
