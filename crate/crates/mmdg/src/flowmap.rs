//! ALE kinematics: trajectories x(t,X), the Jacobian F with its reference
//! derivatives ∂F/∂X_m, and an independently integrated J.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::velocity::{Jet, VelocityModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub x: Vector2<f64>,
    pub f: Matrix2<f64>,
    /// ∂F/∂X_1 and ∂F/∂X_2.
    pub df: [Matrix2<f64>; 2],
    pub j: f64,
}

impl FlowPoint {
    pub fn at_rest(x: Point) -> Self {
        Self { x: Vector2::new(x[0], x[1]), f: Matrix2::identity(), df: [Matrix2::zeros(); 2], j: 1.0 }
    }

    pub fn position(&self) -> Point {
        [self.x[0], self.x[1]]
    }

    fn axpy(&self, h: f64, d: &FlowPoint) -> FlowPoint {
        FlowPoint {
            x: self.x + d.x * h,
            f: self.f + d.f * h,
            df: [self.df[0] + d.df[0] * h, self.df[1] + d.df[1] * h],
            j: self.j + d.j * h,
        }
    }
}

pub fn grad_matrix(jet: &Jet) -> Matrix2<f64> {
    Matrix2::new(jet.d1[0][0], jet.d1[0][1], jet.d1[1][0], jet.d1[1][1])
}

/// (H_k)_{ij} = ∂²Ṽ_i/∂x_j∂x_k.
pub fn hessian_slice(jet: &Jet, k: usize) -> Matrix2<f64> {
    Matrix2::new(jet.d2[0][0][k], jet.d2[0][1][k], jet.d2[1][0][k], jet.d2[1][1][k])
}

fn rhs(vel: &VelocityModel, t: f64, p: &FlowPoint) -> FlowPoint {
    let jet = vel.mesh_jet(t, p.position());
    let g = grad_matrix(&jet);
    let h = [hessian_slice(&jet, 0), hessian_slice(&jet, 1)];
    let mut df = [Matrix2::zeros(); 2];
    for (m, dfm) in df.iter_mut().enumerate() {
        *dfm = g * p.df[m] + (h[0] * p.f[(0, m)] + h[1] * p.f[(1, m)]) * p.f;
    }
    FlowPoint { x: Vector2::new(jet.v[0], jet.v[1]), f: g * p.f, df, j: p.j * jet.div() }
}

/// One classical RK4 step of the kinematics ODE for a single point.
pub fn rk4_point(vel: &VelocityModel, t: f64, h: f64, p: &FlowPoint) -> FlowPoint {
    let k1 = rhs(vel, t, p);
    let k2 = rhs(vel, t + 0.5 * h, &p.axpy(0.5 * h, &k1));
    let k3 = rhs(vel, t + 0.5 * h, &p.axpy(0.5 * h, &k2));
    let k4 = rhs(vel, t + h, &p.axpy(h, &k3));
    FlowPoint {
        x: p.x + (k1.x + k2.x * 2.0 + k3.x * 2.0 + k4.x) * (h / 6.0),
        f: p.f + (k1.f + k2.f * 2.0 + k3.f * 2.0 + k4.f) * (h / 6.0),
        df: [
            p.df[0] + (k1.df[0] + k2.df[0] * 2.0 + k3.df[0] * 2.0 + k4.df[0]) * (h / 6.0),
            p.df[1] + (k1.df[1] + k2.df[1] * 2.0 + k3.df[1] * 2.0 + k4.df[1]) * (h / 6.0),
        ],
        j: p.j + (k1.j + 2.0 * k2.j + 2.0 * k3.j + k4.j) * (h / 6.0),
    }
}

/// Kinematic state at every volume and edge quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// Volume points, element-major (`k * n_vol + q`).
    pub vol: Vec<FlowPoint>,
    /// Edge points, edge-major (`e * n_edge + q`).
    pub edge: Vec<FlowPoint>,
}

impl FlowState {
    pub fn at_rest(vol_points: &[Point], edge_points: &[Point]) -> Self {
        Self {
            t: 0.0,
            vol: vol_points.iter().map(|&x| FlowPoint::at_rest(x)).collect(),
            edge: edge_points.iter().map(|&x| FlowPoint::at_rest(x)).collect(),
        }
    }

    /// Advances every point by `dt` using `substeps` RK4 steps.
    pub fn advance(&self, vel: &VelocityModel, dt: f64, substeps: usize) -> Result<FlowState> {
        if !(dt > 0.0) || substeps == 0 {
            return Err(Error::InvalidParameter(format!("dt = {dt}, substeps = {substeps}")));
        }
        if vel.mesh.is_zero() {
            return Ok(FlowState { t: self.t + dt, ..self.clone() });
        }
        let h = dt / substeps as f64;
        let step_all = |pts: &[FlowPoint]| -> Vec<FlowPoint> {
            pts.iter()
                .map(|p| {
                    let mut q = *p;
                    for s in 0..substeps {
                        q = rk4_point(vel, self.t + s as f64 * h, h, &q);
                    }
                    q
                })
                .collect()
        };
        let out = FlowState { t: self.t + dt, vol: step_all(&self.vol), edge: step_all(&self.edge) };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        for p in self.vol.iter().chain(&self.edge) {
            if !(p.j.is_finite() && p.f.iter().all(|v| v.is_finite())) {
                return Err(Error::NonFinite { t: self.t });
            }
            if p.j <= 0.0 || p.f.determinant() <= 0.0 {
                return Err(Error::Entanglement { t: self.t, j: p.j, x: p.x[0], y: p.x[1] });
            }
        }
        Ok(())
    }

    pub fn residuals(&self) -> KinematicResiduals {
        let mut r = KinematicResiduals { max_j_det_defect: 0.0, min_j: f64::INFINITY, max_mixed_partial_defect: 0.0 };
        for p in self.vol.iter().chain(&self.edge) {
            r.max_j_det_defect = r.max_j_det_defect.max((p.j - p.f.determinant()).abs());
            r.min_j = r.min_j.min(p.j);
            let defect = (p.df[0].column(1) - p.df[1].column(0)).amax();
            r.max_mixed_partial_defect = r.max_mixed_partial_defect.max(defect);
        }
        r
    }

    /// CSV dump: kind, point id, t, x, y, F11, F12, F21, F22, J.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,point,t,x,y,F11,F12,F21,F22,J\n");
        for (kind, pts) in [("vol", &self.vol), ("edge", &self.edge)] {
            for (i, p) in pts.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{kind},{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    self.t,
                    p.x[0],
                    p.x[1],
                    p.f[(0, 0)],
                    p.f[(0, 1)],
                    p.f[(1, 0)],
                    p.f[(1, 1)],
                    p.j
                );
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicResiduals {
    pub max_j_det_defect: f64,
    pub min_j: f64,
    pub max_mixed_partial_defect: f64,
}

/// Pointwise geometric factors.
#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub j: f64,
    pub finv_t: Matrix2<f64>,
    /// J F⁻¹F⁻ᵀ.
    pub metric: Matrix2<f64>,
    /// Largest eigenvalue of the metric.
    pub a: f64,
    /// 1/J.
    pub m: f64,
}

impl Geometry {
    pub fn of(p: &FlowPoint) -> Self {
        let finv = p.f.try_inverse().unwrap_or_else(|| Matrix2::from_element(f64::NAN));
        let finv_t = finv.transpose();
        let metric = finv * finv_t * p.j;
        Self { j: p.j, finv_t, metric, a: max_sym_eigenvalue(&metric), m: 1.0 / p.j }
    }
}

/// Closed-form largest eigenvalue of a symmetric 2×2 matrix.
pub fn max_sym_eigenvalue(a: &Matrix2<f64>) -> f64 {
    let half_tr = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let half_diff = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let off = 0.5 * (a[(0, 1)] + a[(1, 0)]);
    half_tr + half_diff.hypot(off)
}

/// δ = |V − Ṽ|² at the point's current position.
pub fn delta(vel: &VelocityModel, t: f64, p: &FlowPoint) -> f64 {
    let (w, _) = vel.residual(t, p.position());
    w[0] * w[0] + w[1] * w[1]
}
