//! Per-simplex derivative-bound constants and origin-ball data.
//!
//! `beta` bounds every second partial of the drift `f` over a simplex,
//! `rho[a]` those of output element `h_a`, `mu[k]` those of input column
//! `G_k`, and `theta` is a single scalar across all feedthrough elements.
//! Bounding is done on the simplex's axis-aligned bounding box, a superset
//! of the simplex, which only loosens the constants. Results are cached per
//! bounding box since all Kuhn simplices of one grid cell share theirs.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::expr::{BoundMode, BoxRegion, DynamicsModel, ExprError, SecondPartials};
use crate::mesh::SimplexGeometry;

/// Second-derivative bound constants on one simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexDerivativeBounds {
    pub beta: f64,
    /// Per output element, length p.
    pub rho: Vec<f64>,
    /// Per input column, length m.
    pub mu: Vec<f64>,
    pub theta: f64,
}

/// Constants and exact origin Jacobians for the epsilon-ball matrix.
#[derive(Debug, Clone)]
pub struct OriginBallData {
    pub epsilon: f64,
    pub beta_eps: f64,
    pub rho_eps: f64,
    pub mu_eps: f64,
    pub theta_eps: f64,
    /// n x n Jacobian of f at 0.
    pub j_f: DMatrix<f64>,
    /// p x n Jacobian of h at 0.
    pub j_h: DMatrix<f64>,
    /// Per input column k: n x n Jacobian of G_k at 0.
    pub j_g: Vec<DMatrix<f64>>,
    /// Per input column k: p x n Jacobian of J_k at 0.
    pub j_j: Vec<DMatrix<f64>>,
}

/// Precomputed symbolic second-partial tables for every model field.
pub struct ModelHessians<'a> {
    model: &'a DynamicsModel,
    f: Vec<SecondPartials>,
    g: Vec<Vec<SecondPartials>>,
    h: Vec<SecondPartials>,
    j: Vec<Vec<SecondPartials>>,
    mode: BoundMode,
}

impl<'a> ModelHessians<'a> {
    pub fn new(model: &'a DynamicsModel, mode: BoundMode) -> Self {
        ModelHessians {
            model,
            f: model.f.iter().map(SecondPartials::new).collect(),
            g: model
                .g
                .iter()
                .map(|row| row.iter().map(SecondPartials::new).collect())
                .collect(),
            h: model.h.iter().map(SecondPartials::new).collect(),
            j: model
                .j
                .iter()
                .map(|row| row.iter().map(SecondPartials::new).collect())
                .collect(),
            mode,
        }
    }

    pub fn model(&self) -> &DynamicsModel {
        self.model
    }

    fn sup(&self, table: &SecondPartials, region: &BoxRegion) -> Result<f64, ExprError> {
        match self.mode {
            BoundMode::Interval => table.sup_abs(region),
            BoundMode::Sampled { grid } => table.sup_abs_sampled(region, grid),
        }
    }

    /// The four bound constants over one box.
    pub fn bounds_on(&self, region: &BoxRegion) -> Result<SimplexDerivativeBounds, ExprError> {
        let model = self.model;
        let mut beta = 0.0f64;
        for table in &self.f {
            beta = beta.max(self.sup(table, region)?);
        }
        let mut rho = Vec::with_capacity(model.p);
        for table in &self.h {
            rho.push(self.sup(table, region)?);
        }
        // mu_k maximizes over the n elements of input column k.
        let mut mu = vec![0.0f64; model.m];
        for row in &self.g {
            for (k, table) in row.iter().enumerate() {
                mu[k] = mu[k].max(self.sup(table, region)?);
            }
        }
        // theta is a single scalar across all feedthrough elements.
        let mut theta = 0.0f64;
        for row in &self.j {
            for table in row {
                theta = theta.max(self.sup(table, region)?);
            }
        }
        Ok(SimplexDerivativeBounds { beta, rho, mu, theta })
    }
}

/// Derivative bounds for one simplex, computed over its bounding box.
pub fn simplex_bounds(
    hessians: &ModelHessians<'_>,
    g: &SimplexGeometry,
) -> Result<SimplexDerivativeBounds, ExprError> {
    hessians.bounds_on(&g.bounding_box)
}

/// Bounds for every simplex of a mesh, computed in parallel over the unique
/// bounding boxes and shared by the simplices of each cell.
pub fn all_simplex_bounds(
    hessians: &ModelHessians<'_>,
    geoms: &[&SimplexGeometry],
) -> Result<Vec<SimplexDerivativeBounds>, ExprError> {
    let key_of = |b: &BoxRegion| -> Vec<u64> {
        b.lo.iter().chain(b.hi.iter()).map(|v| v.to_bits()).collect()
    };
    let mut unique: Vec<(Vec<u64>, BoxRegion)> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut simplex_to_unique = Vec::with_capacity(geoms.len());
    for g in geoms {
        let key = key_of(&g.bounding_box);
        let id = *index.entry(key.clone()).or_insert_with(|| {
            unique.push((key, g.bounding_box.clone()));
            unique.len() - 1
        });
        simplex_to_unique.push(id);
    }
    let computed: Vec<Result<SimplexDerivativeBounds, ExprError>> = unique
        .par_iter()
        .map(|(_, b)| hessians.bounds_on(b))
        .collect();
    let mut per_unique = Vec::with_capacity(computed.len());
    for r in computed {
        per_unique.push(r?);
    }
    Ok(simplex_to_unique
        .into_iter()
        .map(|id| per_unique[id].clone())
        .collect())
}

/// Constants over the bounding cube of the epsilon ball plus exact origin
/// Jacobians of every field.
pub fn origin_ball_data(
    hessians: &ModelHessians<'_>,
    epsilon: f64,
) -> Result<OriginBallData, ExprError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let model = hessians.model;
    let cube = BoxRegion::centered_cube(model.n, epsilon);
    let b = hessians.bounds_on(&cube)?;

    let zero = vec![0.0; model.n];
    let jac = |exprs: &[&crate::expr::Expression]| -> Result<DMatrix<f64>, ExprError> {
        let rows = exprs.len();
        let mut out = DMatrix::zeros(rows, model.n);
        for (r, e) in exprs.iter().enumerate() {
            for q in 1..=model.n {
                out[(r, q - 1)] = e.differentiate(q).evaluate(&zero)?;
            }
        }
        Ok(out)
    };

    let j_f = jac(&model.f.iter().collect::<Vec<_>>())?;
    let j_h = jac(&model.h.iter().collect::<Vec<_>>())?;
    let mut j_g = Vec::with_capacity(model.m);
    let mut j_j = Vec::with_capacity(model.m);
    for k in 0..model.m {
        let col: Vec<&crate::expr::Expression> = (0..model.n).map(|r| &model.g[r][k]).collect();
        j_g.push(jac(&col)?);
        let col: Vec<&crate::expr::Expression> = (0..model.p).map(|r| &model.j[r][k]).collect();
        j_j.push(jac(&col)?);
    }

    Ok(OriginBallData {
        epsilon,
        beta_eps: b.beta,
        rho_eps: b.rho.iter().cloned().fold(0.0, f64::max),
        mu_eps: b.mu.iter().cloned().fold(0.0, f64::max),
        theta_eps: b.theta,
        j_f,
        j_h,
        j_g,
        j_j,
    })
}

/// Linear one-norm encoding of `||grad V_i||_1 <= l_i`, affine in the n+1
/// vertex values and l_i.
///
/// For n <= 8 this is the 2^n sign-pattern enumeration: each row `r` encodes
/// `sum_j coeff[r][j] * W_j - l_i <= 0`. Above n = 8 an auxiliary-variable
/// encoding keeps the constraint count polynomial: per-axis rows bound
/// `+-(grad V_i)_q <= g_q` and one row sums the auxiliaries.
#[derive(Debug, Clone)]
pub struct GradNormTemplate {
    /// Sign-pattern rows; empty when the auxiliary encoding is used.
    pub sign_rows: Vec<Vec<f64>>,
    /// Auxiliary encoding: rows[q][s] has the vertex-value coefficients of
    /// `s * (grad V_i)_q <= g_q` for s in {+1, -1}.
    pub axis_rows: Option<Vec<[Vec<f64>; 2]>>,
}

/// Threshold above which the sign enumeration is replaced by auxiliaries.
pub const SIGN_ENUMERATION_MAX_DIM: usize = 8;

pub fn gradient_norm_bound_vars(g: &SimplexGeometry) -> GradNormTemplate {
    let n = g.x.nrows();
    // Row q of grad V = sum_j x_inv[q][j-1] (W_j - W_0).
    let grad_row = |q: usize| -> Vec<f64> {
        let mut coeff = vec![0.0; n + 1];
        for j in 1..=n {
            let w = g.x_inv[(q, j - 1)];
            coeff[j] += w;
            coeff[0] -= w;
        }
        coeff
    };
    if n <= SIGN_ENUMERATION_MAX_DIM {
        let rows = (0..(1usize << n))
            .map(|mask| {
                let mut row = vec![0.0; n + 1];
                for q in 0..n {
                    let s = if (mask >> q) & 1 == 1 { 1.0 } else { -1.0 };
                    for (j, c) in grad_row(q).into_iter().enumerate() {
                        row[j] += s * c;
                    }
                }
                row
            })
            .collect();
        GradNormTemplate { sign_rows: rows, axis_rows: None }
    } else {
        let axis = (0..n)
            .map(|q| {
                let base = grad_row(q);
                let neg: Vec<f64> = base.iter().map(|c| -c).collect();
                [base, neg]
            })
            .collect();
        GradNormTemplate { sign_rows: Vec::new(), axis_rows: Some(axis) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use crate::mesh::{kuhn_triangulate, Triangulation};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn conic_model() -> DynamicsModel {
        // x' = x^3 - 3x + u, y = x (k1 = 1, k2 = 2, B = C = 1, D = 0).
        DynamicsModel::new(
            1,
            1,
            1,
            vec![parse_expression("x1^3 - 3*x1", 1).unwrap()],
            vec![vec![parse_expression("0", 1).unwrap()]],
            vec![parse_expression("x1", 1).unwrap()],
            vec![vec![parse_expression("0", 1).unwrap()]],
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    fn pendulum_model() -> DynamicsModel {
        DynamicsModel::new(
            2,
            1,
            1,
            vec![
                parse_expression("x2", 2).unwrap(),
                parse_expression("-sin(x1) - x2", 2).unwrap(),
            ],
            vec![vec![parse_expression("0", 2).unwrap()]; 2],
            vec![parse_expression("x2", 2).unwrap()],
            vec![vec![parse_expression("0", 2).unwrap()]],
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn conic_simplex_beta() {
        let model = conic_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let b = hess
            .bounds_on(&BoxRegion::new(vec![0.5], vec![0.6]))
            .unwrap();
        assert_relative_eq!(b.beta, 3.6, max_relative = 1e-12);
        assert_eq!(b.mu, vec![0.0]);
        assert_eq!(b.rho, vec![0.0]);
        assert_eq!(b.theta, 0.0);
    }

    #[test]
    fn pendulum_beta_vs_dense_grid() {
        let model = pendulum_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let region = BoxRegion::new(vec![0.0, 0.0], vec![0.3, 0.3]);
        let b = hess.bounds_on(&region).unwrap();
        assert_relative_eq!(b.beta, 0.3f64.sin(), max_relative = 1e-12);
        // Dense-grid oracle over both of f's elements.
        let mut sampled = 0.0f64;
        for e in &model.f {
            let table = SecondPartials::new(e);
            sampled = sampled.max(table.sup_abs_sampled(&region, 50).unwrap() / 1.1);
        }
        assert!(b.beta >= sampled - 1e-12);
    }

    #[test]
    fn origin_ball_linear_system() {
        // f = Ax has vanishing Hessians and J_f = A.
        let model = DynamicsModel::new(
            2,
            1,
            1,
            vec![
                parse_expression("-2*x1 + x2", 2).unwrap(),
                parse_expression("0.5*x1 - x2", 2).unwrap(),
            ],
            vec![vec![parse_expression("0", 2).unwrap()]; 2],
            vec![parse_expression("x1", 2).unwrap()],
            vec![vec![parse_expression("0", 2).unwrap()]],
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let ball = origin_ball_data(&hess, 0.3).unwrap();
        assert_eq!(ball.beta_eps, 0.0);
        let expected = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.5, -1.0]);
        assert!((ball.j_f - expected).norm() < 1e-12);
    }

    #[test]
    fn origin_ball_conic_example() {
        let model = conic_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let ball = origin_ball_data(&hess, 0.2).unwrap();
        assert_relative_eq!(ball.j_f[(0, 0)], -3.0, max_relative = 1e-12);
        assert_relative_eq!(ball.beta_eps, 1.2, max_relative = 1e-12);
    }

    #[test]
    fn origin_ball_pendulum_linearization() {
        let model = pendulum_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let ball = origin_ball_data(&hess, 0.2).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        assert!((ball.j_f - expected).norm() < 1e-12);
        assert_relative_eq!(ball.beta_eps, 0.2f64.sin(), max_relative = 1e-12);
    }

    #[test]
    fn grad_norm_template_slope() {
        let t = kuhn_triangulate(&BoxRegion::new(vec![-1.0], vec![1.0]), &[20], None).unwrap();
        let (i, _) = t.locate(&[0.05]).unwrap();
        let g = t.geometry(i);
        let tmpl = gradient_norm_bound_vars(g);
        // Values (0, 0.05) on the origin simplex: slope 0.5, so the binding
        // row reads 0.5 <= l.
        let vals = [0.0, 0.05];
        let worst = tmpl
            .sign_rows
            .iter()
            .map(|row| row.iter().zip(&vals).map(|(c, v)| c * v).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(worst, 0.5, max_relative = 1e-12);
        // Constant values: feasible for any l >= 0.
        let vals = [0.3, 0.3];
        let worst = tmpl
            .sign_rows
            .iter()
            .map(|row| row.iter().zip(&vals).map(|(c, v)| c * v).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst.abs() < 1e-12);
    }

    #[test]
    fn grad_norm_template_matches_one_norm_oracle() {
        let t = kuhn_triangulate(
            &BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]),
            &[4, 4],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let i = rng.gen_range(0..t.num_simplices());
            let g = t.geometry(i);
            let vals: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let grad = Triangulation::cpa_gradient(&vals, g);
            let one_norm: f64 = grad.iter().map(|v| v.abs()).sum();
            let tmpl = gradient_norm_bound_vars(g);
            let worst = tmpl
                .sign_rows
                .iter()
                .map(|row| row.iter().zip(&vals).map(|(c, v)| c * v).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            assert_relative_eq!(worst, one_norm, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn grad_norm_auxiliary_encoding_above_dimension_cap() {
        // A 9-dimensional standard simplex triggers the auxiliary encoding.
        let n = 9;
        let mut pts = vec![vec![0.1; n]];
        for q in 0..n {
            let mut p = vec![0.1; n];
            p[q] += 1.0;
            pts.push(p);
        }
        let g = SimplexGeometry::from_points(&pts).unwrap();
        let tmpl = gradient_norm_bound_vars(&g);
        assert!(tmpl.sign_rows.is_empty());
        let axis = tmpl.axis_rows.unwrap();
        assert_eq!(axis.len(), n);
        // Axis rows reproduce +-(grad)_q.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad = Triangulation::cpa_gradient(&vals, &g);
        for q in 0..n {
            let plus: f64 = axis[q][0].iter().zip(&vals).map(|(c, v)| c * v).sum();
            assert_relative_eq!(plus, grad[q], max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn bounds_monotone_under_box_shrinking() {
        let model = pendulum_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let outer = BoxRegion::new(vec![-0.5, -0.5], vec![0.5, 0.5]);
        let inner = BoxRegion::new(vec![-0.2, -0.1], vec![0.3, 0.4]);
        let bo = hess.bounds_on(&outer).unwrap();
        let bi = hess.bounds_on(&inner).unwrap();
        assert!(bi.beta <= bo.beta + 1e-15);
        assert!(bi.theta <= bo.theta + 1e-15);
    }

    #[test]
    fn affine_system_has_all_zero_constants() {
        let model = DynamicsModel::new(
            1,
            1,
            1,
            vec![parse_expression("-x1", 1).unwrap()],
            vec![vec![parse_expression("2*x1", 1).unwrap()]],
            vec![parse_expression("3*x1", 1).unwrap()],
            vec![vec![parse_expression("0.5*x1", 1).unwrap()]],
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let b = hess
            .bounds_on(&BoxRegion::new(vec![-1.0], vec![1.0]))
            .unwrap();
        assert_eq!(
            (b.beta, b.rho[0], b.mu[0], b.theta),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn cached_bounds_shared_across_cell_simplices() {
        let model = pendulum_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let t = kuhn_triangulate(
            &BoxRegion::new(vec![-0.6, -0.6], vec![0.6, 0.6]),
            &[4, 4],
            None,
        )
        .unwrap();
        let geoms: Vec<&SimplexGeometry> = (0..t.num_simplices()).map(|i| t.geometry(i)).collect();
        let all = all_simplex_bounds(&hess, &geoms).unwrap();
        assert_eq!(all.len(), t.num_simplices());
        // The two simplices of each cell share a bounding box and bounds.
        assert_eq!(all[0], all[1]);
        for (i, b) in all.iter().enumerate() {
            let direct = simplex_bounds(&hess, t.geometry(i)).unwrap();
            assert_eq!(*b, direct);
        }
    }

    #[test]
    fn dominance_over_dense_hessian_sampling() {
        let model = conic_model();
        let hess = ModelHessians::new(&model, BoundMode::Interval);
        let region = BoxRegion::new(vec![-0.9], vec![0.7]);
        let b = hess.bounds_on(&region).unwrap();
        let table = SecondPartials::new(&model.f[0]);
        let sampled = table.sup_abs_sampled(&region, 10_000).unwrap() / 1.1;
        assert!(b.beta >= sampled - 1e-12);
    }
}
