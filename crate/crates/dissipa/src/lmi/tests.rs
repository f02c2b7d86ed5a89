use super::*;
use crate::bounds::{origin_ball_data, ModelHessians, SimplexDerivativeBounds};
use crate::expr::{parse_expression, BoundMode, DynamicsModel};
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn conic_model() -> DynamicsModel {
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

fn linear_decay_model() -> DynamicsModel {
    // x' = -x, y = x, no input path.
    DynamicsModel::new(
        1,
        1,
        1,
        vec![parse_expression("-x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        vec![parse_expression("x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
    )
    .unwrap()
}

fn zero_model() -> DynamicsModel {
    DynamicsModel::new(
        1,
        1,
        1,
        vec![parse_expression("0", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        vec![parse_expression("0", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
    )
    .unwrap()
}

#[test]
fn table_presets_realize_expected_qsr() {
    let mut vars = DecisionVariableMap::new();
    let l2 = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let mut y = vec![0.0; vars.len()];
    y[0] = 4.0; // alpha = gamma^2
    let (q, s, r) = l2.realize(&y);
    assert_eq!(q[(0, 0)], -1.0);
    assert_eq!(s[(0, 0)], 0.0);
    assert_eq!(r[(0, 0)], 4.0);
    assert_eq!(l2.headline(&y), Headline::L2Gain { gamma: 2.0 });
    assert!(!l2.is_reduced());

    let mut vars = DecisionVariableMap::new();
    let osp = preset_qsr(QsrMode::OutputStrictlyPassive, 1, 1, &mut vars, 1e-9).unwrap();
    let y = vec![2.0]; // tau = 2 => rho = 1/2
    let (q, s, r) = osp.realize(&y);
    assert_eq!(q[(0, 0)], -0.5);
    assert_eq!(s[(0, 0)], 0.5);
    assert_eq!(r[(0, 0)], 0.0);
    assert_eq!(osp.headline(&y), Headline::OutputPassivity { rho: 0.5 });

    let mut vars = DecisionVariableMap::new();
    let conic = preset_qsr(QsrMode::Conic, 1, 1, &mut vars, 1e-9).unwrap();
    // alpha = (a+b)/2 = 0.25, beta = ab = -0.1875 for cone (-0.25, 0.75).
    let y = vec![0.25, -0.1875, 0.3, 0.2];
    let (q, s, r) = conic.realize(&y);
    assert_eq!(q[(0, 0)], -1.0);
    assert_eq!(s[(0, 0)], 0.25);
    assert_relative_eq!(r[(0, 0)], 0.1875);
    match conic.headline(&y) {
        Headline::Cone { a, b } => {
            assert_relative_eq!(a, -0.25, max_relative = 1e-12);
            assert_relative_eq!(b, 0.75, max_relative = 1e-12);
        }
        other => panic!("unexpected headline {other:?}"),
    }

    let mut vars = DecisionVariableMap::new();
    let isp = preset_qsr(QsrMode::InputStrictlyPassive, 1, 1, &mut vars, 1e-9).unwrap();
    assert!(isp.is_reduced());
    assert_eq!(isp.hji_dim(), 2);
}

#[test]
fn fixed_qsr_rejects_indefinite_or_singular_q() {
    let mut vars = DecisionVariableMap::new();
    let bad = preset_qsr(
        QsrMode::FixedQsr { q: DMatrix::from_element(1, 1, 0.5) },
        1,
        1,
        &mut vars,
        1e-9,
    );
    assert!(matches!(bad, Err(QsrError::QNotNsd(_))));
    let singular = preset_qsr(
        QsrMode::FixedQsr { q: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]) },
        1,
        2,
        &mut vars,
        1e-9,
    );
    assert!(matches!(singular, Err(QsrError::QSingular)));
}

#[test]
fn assemble_m_linear_system_top_left() {
    // x' = -x, y = x, l2 gain: the (0,0) entry is -0.5 * grad at x = 0.5.
    let model = linear_decay_model();
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let g = vars.push("grad", VarKind::VertexValue(0));
    let grad = vec![AffineExpr::var(g)];
    let m = assemble_m(&model, &qsr, &[0.5], &grad).unwrap();
    let e00 = m.get(0, 0);
    assert_eq!(e00.terms, vec![(g, -0.5)]);
}

#[test]
fn assemble_m_zero_fields_is_block_diagonal() {
    let model = zero_model();
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let g = vars.push("grad", VarKind::VertexValue(0));
    let grad = vec![AffineExpr::var(g)];
    let block = assemble_m(&model, &qsr, &[0.0], &grad).unwrap().into_block("m0");
    // alpha = 3, grad value arbitrary: expect blkdiag(0, -3, -1).
    let y = vec![3.0, 0.7];
    let m = block.eval(&y);
    let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, -3.0, 0.0, 0.0, 0.0, -1.0]);
    assert!((m - expected).amax() < 1e-14);
}

#[test]
fn assemble_m_conic_matches_dense_oracle() {
    // Independent dense assembly of the HJI matrix at x = 0.8 for the conic
    // system, compared entry-by-entry at random variable assignments.
    let model = conic_model();
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::Conic, 1, 1, &mut vars, 1e-9).unwrap();
    let g = vars.push("grad", VarKind::VertexValue(0));
    let grad = vec![AffineExpr::var(g)];
    let x = 0.8;
    let block = assemble_m(&model, &qsr, &[x], &grad).unwrap().into_block("m");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let y: Vec<f64> = (0..vars.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (alpha, beta, grad_v) = (y[0], y[1], y[4]);
        let f = x * x * x - 3.0 * x;
        let gbar = 1.0; // B = 1, G = 0
        let h = x;
        let jbar = 0.0;
        let oracle = DMatrix::from_row_slice(
            3,
            3,
            &[
                grad_v * f,
                0.5 * grad_v * gbar - h * alpha,
                h,
                0.5 * grad_v * gbar - h * alpha,
                beta - 2.0 * alpha * jbar,
                jbar,
                h,
                jbar,
                -1.0,
            ],
        );
        let got = block.eval(&y);
        assert!((got - oracle).amax() < 1e-13);
    }
}

fn affine_bounds(p: usize, m: usize) -> SimplexDerivativeBounds {
    SimplexDerivativeBounds { beta: 0.0, rho: vec![0.0; p], mu: vec![0.0; m], theta: 0.0 }
}

#[test]
fn error_matrix_affine_dynamics_is_the_stated_block_diagonal() {
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let pis = CpaPiVars::register(&mut vars, 1, 1, true);
    let l = vars.push("l_1", VarKind::GradBound(0));
    let e = assemble_error_e(&affine_bounds(1, 1), 0.01, 1, l, &qsr.s_hat, &pis, &qsr)
        .into_block("e");
    assert_eq!(e.dim, 7);
    // Assignment: d1 = 0.8, d2 = 0.6, d3 = 0.4, pi_min1 = 0.3, pi_min3 = 0.2.
    let mut y = vec![0.0; vars.len()];
    y[pis.d1[0].0] = 0.8;
    let q = pis.q_part.as_ref().unwrap();
    y[q.d2[0].0] = 0.6;
    y[q.d3[0].0] = 0.4;
    y[pis.pi_min1.0] = 0.3;
    y[q.pi_min3.0] = 0.2;
    y[l.0] = 5.0;
    let got = e.eval(&y);
    let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        0.0,
        0.5 * 0.8,
        0.5 * (0.6 + 0.4),
        -2.0 * 0.3,
        -4.0 * 0.3,
        -2.0 * 0.6,
        -2.0 * 0.2,
    ]));
    assert!((got - expected).amax() < 1e-14);
}

#[test]
fn error_matrix_scalar_f_hat() {
    // n = m = p = 1: the (0,0) entry is l * beta * c / 2.
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let pis = CpaPiVars::register(&mut vars, 1, 1, true);
    let l = vars.push("l_1", VarKind::GradBound(0));
    let bounds = SimplexDerivativeBounds { beta: 3.6, rho: vec![0.0], mu: vec![0.0], theta: 0.0 };
    let e = assemble_error_e(&bounds, 0.01, 1, l, &qsr.s_hat, &pis, &qsr);
    assert_eq!(e.get(0, 0).terms, vec![(l, 0.5 * 3.6 * 0.01)]);
}

#[test]
fn error_matrix_conic_vertex_matches_hand_scalar_oracle() {
    // Eq.-(32)-style data on the simplex [0.5, 0.6]: only f has curvature,
    // so the couplings reduce to the f-hat scalar and the Pi diagonals.
    let model = conic_model();
    let hess = ModelHessians::new(&model, BoundMode::Interval);
    let b = hess
        .bounds_on(&crate::expr::BoxRegion::new(vec![0.5], vec![0.6]))
        .unwrap();
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::Conic, 1, 1, &mut vars, 1e-9).unwrap();
    let pis = CpaPiVars::register(&mut vars, 1, 1, true);
    let l = vars.push("l_1", VarKind::GradBound(0));
    let c_j = 0.01;
    let e = assemble_error_e(&b, c_j, 1, l, &qsr.s_hat, &pis, &qsr).into_block("e");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let y: Vec<f64> = (0..vars.len()).map(|_| rng.gen_range(0.1..2.0)).collect();
        let got = e.eval(&y);
        let q = pis.q_part.as_ref().unwrap();
        let mut expect = DMatrix::zeros(7, 7);
        expect[(0, 0)] = 0.5 * y[l.0] * 3.6 * c_j;
        expect[(1, 1)] = 0.5 * y[pis.d1[0].0];
        expect[(2, 2)] = 0.5 * (y[q.d2[0].0] + y[q.d3[0].0]);
        expect[(3, 3)] = -2.0 * y[pis.pi_min1.0];
        expect[(4, 4)] = -4.0 * y[pis.pi_min1.0];
        expect[(5, 5)] = -2.0 * y[q.d2[0].0];
        expect[(6, 6)] = -2.0 * y[q.pi_min3.0];
        assert!((got - expect).amax() < 1e-13);
    }
}

#[test]
fn error_matrix_reduced_mode_drops_q_rows() {
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::InputStrictlyPassive, 1, 1, &mut vars, 1e-9).unwrap();
    let pis = CpaPiVars::register(&mut vars, 1, 1, false);
    let l = vars.push("l_1", VarKind::GradBound(0));
    let e = assemble_error_e(&affine_bounds(1, 1), 0.01, 1, l, &qsr.s_hat, &pis, &qsr)
        .into_block("e");
    assert_eq!(e.dim, error_matrix_dim(1, 1, true));
    assert_eq!(e.dim, 4);
}

#[test]
fn m_eps_conic_scalar_coefficients() {
    // Xi_1 = 2 P J_f + l_p * beta_eps * eps = -6 P + 0.24 l_p at eps = 0.2.
    let model = conic_model();
    let hess = ModelHessians::new(&model, BoundMode::Interval);
    let ball = origin_ball_data(&hess, 0.2).unwrap();
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::Conic, 1, 1, &mut vars, 1e-9).unwrap();
    let quad = QuadVars::register(&mut vars, 1);
    let pis = BallPiVars::register(&mut vars, 1, 1, true);
    let block = assemble_m_eps(&model, &qsr, &ball, &quad, &pis, 0.0);
    assert_eq!(block.dim, 5 * 1 + 3 * 1 + 1);
    let p00 = quad.entry(0, 0);
    let coeff_p = block
        .coeffs
        .iter()
        .find(|(id, _)| *id == p00)
        .map(|(_, f)| f[(0, 0)])
        .unwrap();
    assert_relative_eq!(coeff_p, -6.0, max_relative = 1e-12);
    let coeff_lp = block
        .coeffs
        .iter()
        .find(|(id, _)| *id == quad.l_p)
        .map(|(_, f)| f[(0, 0)])
        .unwrap();
    assert_relative_eq!(coeff_lp, 0.24, max_relative = 1e-12);
}

#[test]
fn m_eps_linear_system_reduces_to_kyp_form() {
    // Linear dynamics: all epsilon constants vanish, so the leading blocks
    // are the KYP-style matrix in (J_f, B, J_h, D) plus Pi slack diagonals.
    let model = DynamicsModel::new(
        1,
        1,
        1,
        vec![parse_expression("-2*x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        vec![parse_expression("x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.5),
    )
    .unwrap();
    let hess = ModelHessians::new(&model, BoundMode::Interval);
    let ball = origin_ball_data(&hess, 0.1).unwrap();
    assert_eq!(ball.beta_eps, 0.0);
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let quad = QuadVars::register(&mut vars, 1);
    let pis = BallPiVars::register(&mut vars, 1, 1, true);
    let block = assemble_m_eps(&model, &qsr, &ball, &quad, &pis, 0.0);
    let mut y = vec![0.0; vars.len()];
    y[0] = 4.0; // alpha
    y[quad.entry(0, 0).0] = 1.5; // P
    let m = block.eval(&y);
    // (0,0) = 2 P J_f = -6; (1,0) = B P - S J_h = 1.5; (1,1) = -alpha - 2 S D = -4;
    // (2,0) = J_h = 1; (2,1) = D = 0.5; (2,2) = -1.
    assert_relative_eq!(m[(0, 0)], -6.0);
    assert_relative_eq!(m[(1, 0)], 1.5);
    assert_relative_eq!(m[(1, 1)], -4.0);
    assert_relative_eq!(m[(2, 0)], 1.0);
    assert_relative_eq!(m[(2, 1)], 0.5);
    assert_relative_eq!(m[(2, 2)], -1.0);
    // The Schur rows for the vanished bound terms carry zero couplings.
    for r in 3..block.dim {
        for c in 0..3 {
            assert_eq!(m[(r, c)], 0.0, "row {r} col {c}");
        }
    }
}

#[test]
fn m_eps_theta_bar_vanishes_without_feedthrough_curvature() {
    let model = conic_model();
    let hess = ModelHessians::new(&model, BoundMode::Interval);
    let ball = origin_ball_data(&hess, 0.3).unwrap();
    assert_eq!(ball.theta_eps, 0.0);
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::L2Gain, 1, 1, &mut vars, 1e-9).unwrap();
    let quad = QuadVars::register(&mut vars, 1);
    let pis = BallPiVars::register(&mut vars, 1, 1, true);
    let block = assemble_m_eps(&model, &qsr, &ball, &quad, &pis, 0.0);
    // Last block row couples through theta_eps; it must be zero here.
    let last = block.dim - 1;
    let y = vec![1.0; vars.len()];
    let m = block.eval(&y);
    assert_eq!(m[(last, 1)], 0.0);
}

#[test]
fn vertex_constraint_is_exactly_affine_and_symmetric() {
    let model = conic_model();
    let hess = ModelHessians::new(&model, BoundMode::Interval);
    let b = hess
        .bounds_on(&crate::expr::BoxRegion::new(vec![0.5], vec![0.6]))
        .unwrap();
    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(QsrMode::Conic, 1, 1, &mut vars, 1e-9).unwrap();
    let pis = CpaPiVars::register(&mut vars, 1, 1, true);
    let l = vars.push("l_1", VarKind::GradBound(0));
    let w0 = vars.push("w0", VarKind::VertexValue(0));
    let w1 = vars.push("w1", VarKind::VertexValue(1));
    let grad = vec![AffineExpr {
        constant: 0.0,
        terms: vec![(w0, -10.0), (w1, 10.0)],
    }];
    let block = assemble_vertex_constraint(
        &model, &qsr, &[0.6], &grad, &b, 0.01, l, &pis, 1e-9, "v".into(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base: Vec<f64> = (0..vars.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for i in 0..vars.len() {
        // Second difference along every coordinate vanishes identically.
        let mut y1 = base.clone();
        y1[i] += 0.37;
        let mut y2 = base.clone();
        y2[i] += 0.74;
        let m0 = block.eval(&base);
        let m1 = block.eval(&y1);
        let m2 = block.eval(&y2);
        let second = &m2 - &(&m1 * 2.0) + &m0;
        assert!(second.amax() <= 1e-12);
    }
    let m = block.eval(&base);
    assert!((&m - m.transpose()).amax() <= 1e-14);
}

#[test]
fn generic_simplex_bound_affine_case() {
    // Affine phi and zeta: E reduces to blkdiag(0, Pi^-1/2, -2 Pi^-1).
    let phi = parse_expression("2*x1 - 1", 1).unwrap();
    let zeta = vec![parse_expression("0.5*x1", 1).unwrap()];
    let sys = assemble_simplex_bound(phi, zeta, vec![vec![0.4], vec![0.7]], vec![1.25]).unwrap();
    let e = sys.e_at_vertex(0);
    let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        0.0,
        0.5 / 1.25,
        -2.0 / 1.25,
    ]));
    assert!((e - expected).amax() < 1e-14);
}

#[test]
fn generic_simplex_bound_quadratic_phi_hat() {
    // phi = x^2 on {0.5, 0.6}: phi_hat = 2 * c = 0.02.
    let phi = parse_expression("x1^2", 1).unwrap();
    let sys = assemble_simplex_bound(phi, vec![], vec![vec![0.5], vec![0.6]], vec![]).unwrap();
    let (phi_hat, _) = sys.remainder_constants(0);
    assert_relative_eq!(phi_hat, 0.02, max_relative = 1e-12);
    assert_relative_eq!(sys.e_at_vertex(1)[(0, 0)], 0.01, max_relative = 1e-12);
}

#[test]
fn generic_simplex_bound_quadratic_zeta_hat() {
    // One-dimensional quadratic zeta: the coupling entry is mu * n * c.
    let phi = parse_expression("0", 1).unwrap();
    let zeta = vec![parse_expression("x1^2 - x1", 1).unwrap()];
    let sys =
        assemble_simplex_bound(phi, zeta, vec![vec![0.2], vec![0.45]], vec![1.0]).unwrap();
    let c = sys.geometry.c[0];
    assert_relative_eq!(c, 0.0625, max_relative = 1e-12);
    let e = sys.e_at_vertex(0);
    assert_relative_eq!(e[(2, 0)], 2.0 * c, max_relative = 1e-12);
}

#[test]
fn generic_simplex_origin_rule_uses_distance_product_constants() {
    let phi = parse_expression("x1^2", 1).unwrap();
    let sys = assemble_simplex_bound(phi, vec![], vec![vec![0.0], vec![0.1]], vec![]).unwrap();
    assert!(sys.geometry.contains_origin);
    let (phi_hat0, _) = sys.remainder_constants(0);
    assert_eq!(phi_hat0, 0.0);
    let (phi_hat1, _) = sys.remainder_constants(1);
    assert_relative_eq!(phi_hat1, 2.0 * 0.02, max_relative = 1e-12);
}

#[test]
fn ball_bound_linear_theta_feasible_for_small_eps() {
    // theta = -x, zeta = 0: M_eps < 0 iff the (0,0) block is negative,
    // which holds for any eps since theta has no curvature.
    let theta = vec![parse_expression("-x1", 1).unwrap()];
    let sys = assemble_ball_bound(theta, vec![], 0.05, vec![]).unwrap();
    let m = sys.matrix();
    assert_eq!(m.nrows(), 2);
    assert!(m[(0, 0)] < 0.0);
    assert_eq!(sys.theta_hat, 0.0);
}

#[test]
fn ball_bound_quadratic_theta_scales_with_eps() {
    let theta = vec![parse_expression("-x1 + x1^2", 1).unwrap()];
    let small = assemble_ball_bound(theta.clone(), vec![], 1e-6, vec![]).unwrap();
    // theta_hat * eps -> 0, so the (0,0) entry approaches J_theta = -1.
    assert_relative_eq!(small.matrix()[(0, 0)], -1.0, epsilon = 1e-5);
    let larger = assemble_ball_bound(theta, vec![], 0.3, vec![]).unwrap();
    assert!(larger.matrix()[(0, 0)] > small.matrix()[(0, 0)]);
}

#[test]
fn ball_bound_feasibility_implies_sampled_inequality() {
    // theta = -x + x^2, zeta = x^2 on eps = 0.1: the LMI is feasible for
    // Pi = 1 and the certified inequality holds on a dense grid.
    let theta = vec![parse_expression("-x1 + x1^2", 1).unwrap()];
    let zeta = vec![parse_expression("x1^2", 1).unwrap()];
    let sys = assemble_ball_bound(theta, zeta, 0.1, vec![1.0]).unwrap();
    let m = sys.matrix();
    let max_eig = m
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max_eig <= 0.0, "expected feasible instance, max eig {max_eig}");
    for i in 0..=1000 {
        let x = -0.1 + 0.2 * i as f64 / 1000.0;
        assert!(sys.inequality_at(&[x]).unwrap() <= 1e-8);
    }
}
