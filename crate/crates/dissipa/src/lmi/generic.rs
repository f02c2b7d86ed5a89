//! Generic simplex and origin-ball LMI bounds for arbitrary C^2 data.
//!
//! These numeric builders exercise the same remainder machinery the storage
//! synthesis uses, on the prototype matrix
//!
//! ```text
//! M(x) = [ phi(x)   zeta(x)' ]
//!        [ zeta(x)  -I       ]
//! ```
//!
//! Enforcing `M(x_j) + E(x_j) <= 0` at every vertex of a simplex implies
//! `M(x) <= 0` on the whole simplex, where E carries per-vertex remainder
//! constants: the squared-distance scale on origin-free simplices and the
//! distance-product scale (vanishing at the origin vertex) otherwise. The
//! origin-ball variant bounds `zeta'zeta + x'theta(x) <= 0` on a two-norm
//! ball through the Jacobians at zero.

use nalgebra::DMatrix;

use crate::expr::{BoxRegion, Expression, ExprError};
use crate::mesh::SimplexGeometry;

/// Numeric Theorem data for one (phi, zeta, simplex, Pi) instance.
pub struct SimplexLmiBound {
    pub phi: Expression,
    pub zeta: Vec<Expression>,
    pub points: Vec<Vec<f64>>,
    pub geometry: SimplexGeometry,
    /// Diagonal of Pi (positive).
    pub pi: Vec<f64>,
    /// Second-derivative bound of phi over the simplex bounding box.
    pub beta_phi: f64,
    /// Second-derivative bound per zeta element.
    pub mu: Vec<f64>,
}

/// Builds the generic simplex bound data; `points` must list the origin
/// first when it is a vertex.
pub fn assemble_simplex_bound(
    phi: Expression,
    zeta: Vec<Expression>,
    points: Vec<Vec<f64>>,
    pi: Vec<f64>,
) -> Result<SimplexLmiBound, ExprError> {
    assert_eq!(zeta.len(), pi.len());
    let geometry = SimplexGeometry::from_points(&points).expect("non-degenerate simplex");
    let beta_phi = phi.second_derivative_sup(&geometry.bounding_box)?;
    let mu = zeta
        .iter()
        .map(|z| z.second_derivative_sup(&geometry.bounding_box))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimplexLmiBound { phi, zeta, points, geometry, pi, beta_phi, mu })
}

impl SimplexLmiBound {
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    pub fn m(&self) -> usize {
        self.zeta.len()
    }

    /// M(x), dimension 1 + m.
    pub fn m_at(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let m = self.m();
        let mut out = DMatrix::zeros(1 + m, 1 + m);
        out[(0, 0)] = self.phi.evaluate(x)?;
        for k in 0..m {
            let v = self.zeta[k].evaluate(x)?;
            out[(0, 1 + k)] = v;
            out[(1 + k, 0)] = v;
            out[(1 + k, 1 + k)] = -1.0;
        }
        Ok(out)
    }

    /// Remainder constants at vertex j: (phi_hat_j, zeta_hat_j).
    pub fn remainder_constants(&self, j: usize) -> (f64, Vec<f64>) {
        let n = self.n() as f64;
        let c = self.geometry.c[j];
        (
            n * self.beta_phi * c,
            self.mu.iter().map(|mu| n * mu * c).collect(),
        )
    }

    /// E(x_j), dimension 1 + 2m.
    pub fn e_at_vertex(&self, j: usize) -> DMatrix<f64> {
        let m = self.m();
        let (phi_hat, zeta_hat) = self.remainder_constants(j);
        let mut e = DMatrix::zeros(1 + 2 * m, 1 + 2 * m);
        e[(0, 0)] = 0.5 * phi_hat;
        for k in 0..m {
            e[(1 + k, 1 + k)] = 0.5 / self.pi[k];
            e[(1 + m + k, 0)] = zeta_hat[k];
            e[(0, 1 + m + k)] = zeta_hat[k];
            e[(1 + m + k, 1 + m + k)] = -2.0 / self.pi[k];
        }
        e
    }

    /// M(x_j) + E(x_j), the constraint enforced per vertex.
    pub fn vertex_constraint(&self, j: usize) -> Result<DMatrix<f64>, ExprError> {
        let m = self.m();
        let mut out = self.e_at_vertex(j);
        let m_j = self.m_at(&self.points[j])?;
        for r in 0..=m {
            for c in 0..=m {
                out[(r, c)] += m_j[(r, c)];
            }
        }
        Ok(out)
    }
}

/// Numeric data for the origin-ball inequality
/// `zeta(x)'zeta(x) + (x'theta(x) + theta(x)'x)/2 <= 0` on `B_eps(0)`.
pub struct BallLmiBound {
    pub theta: Vec<Expression>,
    pub zeta: Vec<Expression>,
    pub epsilon: f64,
    pub pi: Vec<f64>,
    pub j_theta: DMatrix<f64>,
    pub j_zeta: DMatrix<f64>,
    /// Hessian two-norm bounds over the ball's bounding cube.
    pub theta_hat: f64,
    pub zeta_hat: f64,
}

/// Builds the origin-ball bound; `theta` and `zeta` must vanish at zero.
pub fn assemble_ball_bound(
    theta: Vec<Expression>,
    zeta: Vec<Expression>,
    epsilon: f64,
    pi: Vec<f64>,
) -> Result<BallLmiBound, ExprError> {
    let n = theta.len();
    let m = zeta.len();
    assert_eq!(pi.len(), m);
    assert!(epsilon > 0.0);
    let zero = vec![0.0; n];
    for e in theta.iter().chain(&zeta) {
        debug_assert!(e.evaluate(&zero)?.abs() <= 1e-12, "field must vanish at 0");
    }
    let cube = BoxRegion::centered_cube(n, epsilon);
    // ||H||_2 <= n * max-element bound per component.
    let mut theta_hat = 0.0f64;
    for t in &theta {
        theta_hat = theta_hat.max(n as f64 * t.second_derivative_sup(&cube)?);
    }
    let mut zeta_hat = 0.0f64;
    for z in &zeta {
        zeta_hat = zeta_hat.max(n as f64 * z.second_derivative_sup(&cube)?);
    }
    let jac = |exprs: &[Expression], rows: usize| -> Result<DMatrix<f64>, ExprError> {
        let mut out = DMatrix::zeros(rows, n);
        for (r, e) in exprs.iter().enumerate() {
            for q in 1..=n {
                out[(r, q - 1)] = e.differentiate(q).evaluate(&zero)?;
            }
        }
        Ok(out)
    };
    let j_theta = jac(&theta, n)?;
    let j_zeta = jac(&zeta, m)?;
    Ok(BallLmiBound { theta, zeta, epsilon, pi, j_theta, j_zeta, theta_hat, zeta_hat })
}

impl BallLmiBound {
    /// The certified matrix, dimension n + m + n; nonpositive-definiteness
    /// implies the scalar inequality on the whole ball.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.j_theta.nrows();
        let m = self.zeta.len();
        let eps = self.epsilon;
        let dim = n + m + n;
        let mut out = DMatrix::zeros(dim, dim);
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] = 0.5 * (self.j_theta[(r, c)] + self.j_theta[(c, r)]);
            }
            out[(r, r)] += 0.5 * self.theta_hat * eps;
        }
        for k in 0..m {
            for c in 0..n {
                out[(n + k, c)] = self.j_zeta[(k, c)];
                out[(c, n + k)] = self.j_zeta[(k, c)];
            }
            out[(n + k, n + k)] = -1.0 + 0.5 / self.pi[k];
        }
        // Off-diagonal remainder of zeta, Schur-encoded against the minimal
        // diagonal of Pi^-1; the sqrt(m) factor accounts for stacking the m
        // component Hessians.
        let pi_min_inv = self
            .pi
            .iter()
            .map(|&v| 1.0 / v)
            .fold(f64::INFINITY, f64::min);
        let coupling = (m as f64).sqrt() * self.zeta_hat * eps;
        for r in 0..n {
            out[(r, n + m + r)] = coupling;
            out[(n + m + r, r)] = coupling;
            out[(n + m + r, n + m + r)] = -2.0 * pi_min_inv;
        }
        out
    }

    /// Left-hand side of the certified scalar inequality at `x`.
    pub fn inequality_at(&self, x: &[f64]) -> Result<f64, ExprError> {
        let mut total = 0.0;
        for z in &self.zeta {
            let v = z.evaluate(x)?;
            total += v * v;
        }
        for (t, xi) in self.theta.iter().zip(x) {
            total += xi * t.evaluate(x)?;
        }
        Ok(total)
    }
}
