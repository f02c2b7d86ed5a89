use super::*;
use crate::expr::parse_expression;
use crate::lmi::QsrMode;
use approx::assert_relative_eq;
use nalgebra::DMatrix;

pub(crate) fn conic_model(b: f64, c: f64) -> DynamicsModel {
    DynamicsModel::new(
        1,
        1,
        1,
        vec![parse_expression("x1^3 - 3*x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        vec![parse_expression(&format!("{c}*x1"), 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        DMatrix::from_element(1, 1, b),
        DMatrix::zeros(1, 1),
    )
    .unwrap()
}

pub(crate) fn pendulum_model() -> DynamicsModel {
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

fn quick_verify() -> VerifySettings {
    VerifySettings {
        hji_samples_per_simplex: 40,
        trials: 20,
        horizon: 2.0,
        ..VerifySettings::default()
    }
}

#[test]
fn no_affine_requires_zero_input_matrices() {
    let model = conic_model(1.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![20],
        QsrMode::L2Gain,
    );
    req.variant = Variant::NoAffine;
    match analyze_no_affine(&req) {
        Err(AnalysisError::Config(msg)) => assert!(msg.contains("B = 0")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn no_affine_cubic_system_certifies_finite_gain() {
    // The benchmark system with the input path removed (B = 0, C = 1):
    // feasible on [-1, 1] at 20 cells with a finite certified gain.
    let model = conic_model(0.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![20],
        QsrMode::L2Gain,
    );
    req.verify = quick_verify();
    let result = analyze_no_affine(&req).expect("feasible");
    match result.headline {
        Headline::L2Gain { gamma } => assert!(gamma.is_finite()),
        other => panic!("unexpected headline {other:?}"),
    }
    assert!(result.verification.pass);
    assert_eq!(result.mesh.simplices, 20);
}

#[test]
fn no_input_path_gives_zero_gain() {
    // x' = -x, y = x, Gbar = 0: gamma^2 rests on its lower bound.
    let model = DynamicsModel::new(
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
    .unwrap();
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![10],
        QsrMode::L2Gain,
    );
    req.verify = quick_verify();
    let result = analyze_no_affine(&req).expect("feasible");
    match result.headline {
        Headline::L2Gain { gamma } => assert!(gamma < 1e-3, "gamma = {gamma}"),
        other => panic!("unexpected headline {other:?}"),
    }
}

#[test]
fn zero_dynamics_hits_objective_lower_bound() {
    let model = DynamicsModel::new(
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
    .unwrap();
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![10],
        QsrMode::L2Gain,
    );
    req.verify = quick_verify();
    let result = analyze_no_affine(&req).expect("feasible");
    // alpha sits at its strictness bound, up to the solver's gap plateau on
    // this fully degenerate instance.
    assert!(result.solver.objective <= 1e-5, "{}", result.solver.objective);
}

#[test]
fn with_affine_conic_benchmark_coarse_mesh() {
    // 20 cells: the cone's upper corner lands near 0.53 and the lower
    // corner stays slightly negative; tight values are acceptance-gated.
    let model = conic_model(1.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![20],
        QsrMode::Conic,
    );
    req.verify = quick_verify();
    let result = analyze_with_affine(&req).expect("feasible");
    assert_eq!(result.mesh.simplices, 18);
    match result.headline {
        Headline::Cone { a, b } => {
            assert!(b > 0.45 && b < 0.60, "b = {b}");
            assert!(a <= 0.0 && a > -0.2, "a = {a}");
        }
        other => panic!("unexpected headline {other:?}"),
    }
    assert!(result.verification.pass);
    assert!(result.certificate.p_matrix.is_some());
}

#[test]
fn with_affine_rejects_unexcluded_origin() {
    let model = conic_model(1.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![20],
        QsrMode::Conic,
    );
    req.exclusion_cells = 0;
    match analyze_with_affine(&req) {
        Err(AnalysisError::Config(msg)) => assert!(msg.contains("exclusion")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn with_affine_rejects_oversized_epsilon() {
    let model = conic_model(1.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![20],
        QsrMode::Conic,
    );
    req.epsilon = EpsilonRule::Fixed(1.5);
    match analyze_with_affine(&req) {
        Err(AnalysisError::EpsilonTooLarge { .. }) => {}
        other => panic!("expected epsilon error, got {other:?}"),
    }
    req.epsilon = EpsilonRule::Fixed(0.05);
    match analyze_with_affine(&req) {
        Err(AnalysisError::Config(msg)) => assert!(msg.contains("cover")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn input_strictly_passive_reduced_path_end_to_end() {
    // x' = -x + u, y = x + u: nu approaches 1 for this plant.
    let model = DynamicsModel::new(
        1,
        1,
        1,
        vec![parse_expression("-x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        vec![parse_expression("x1", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![40],
        QsrMode::InputStrictlyPassive,
    );
    req.verify = quick_verify();
    let result = analyze_with_affine(&req).expect("feasible");
    assert!(result.preset_reduced);
    match result.headline {
        Headline::InputPassivity { nu } => {
            assert!(nu > 0.3 && nu <= 1.0 + 1e-6, "nu = {nu}");
        }
        other => panic!("unexpected headline {other:?}"),
    }
}

#[test]
fn storage_evaluation_variant_two_cases() {
    let model = conic_model(1.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![20],
        QsrMode::Conic,
    );
    req.verify = quick_verify();
    let result = analyze_with_affine(&req).expect("feasible");
    let tri = kuhn_triangulate(
        &req.region,
        &result.mesh.divisions,
        Some(&BoxRegion::new(
            result.mesh.exclusion_lo.clone().unwrap(),
            result.mesh.exclusion_hi.clone().unwrap(),
        )),
    )
    .unwrap();
    let cert = &result.certificate;
    // Quadratic at the origin evaluates to zero.
    assert_eq!(evaluate_storage(cert, &tri, &[0.0]).unwrap(), 0.0);
    // A vertex outside the ball evaluates to its stored value.
    let v = tri
        .vertices
        .iter()
        .position(|p| (p[0] - 0.7).abs() < 1e-12)
        .unwrap();
    assert_relative_eq!(
        evaluate_storage(cert, &tri, &[0.7]).unwrap(),
        cert.vertex_values[v],
        max_relative = 1e-12
    );
    // Continuity across the exclusion boundary: at a boundary point the
    // quadratic branch and the min-composition branch must agree.
    let p = cert.p_as_matrix().unwrap();
    for &x0 in &[0.1f64, -0.1] {
        let quad = p[(0, 0)] * x0 * x0;
        let (i, lam) = tri.locate(&[x0]).unwrap();
        let cpa: f64 = lam
            .iter()
            .zip(&tri.simplices[i])
            .map(|(&l, &v)| l * cert.vertex_values[v])
            .sum();
        let jump = (quad - quad.min(cpa)).abs();
        assert!(jump <= 1e-8, "branch jump {jump} at {x0}");
    }
    // Points outside the region are rejected.
    assert!(evaluate_storage(cert, &tri, &[1.5]).is_err());
}

#[test]
fn storage_continuity_across_exclusion_boundary_2d() {
    let model = pendulum_model();
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.2, -1.2], vec![1.2, 1.2]),
        vec![18, 18],
        QsrMode::L2Gain,
    );
    req.verify = quick_verify();
    let result = analyze_with_affine(&req).expect("feasible");
    let tri = kuhn_triangulate(
        &req.region,
        &result.mesh.divisions,
        Some(&BoxRegion::new(
            result.mesh.exclusion_lo.clone().unwrap(),
            result.mesh.exclusion_hi.clone().unwrap(),
        )),
    )
    .unwrap();
    let cert = &result.certificate;
    let p = cert.p_as_matrix().unwrap();
    let delta = 2.4 / 18.0;
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for i in 0..100 {
        // Random point on the exclusion-box boundary: the quadratic branch
        // and the min-composition branch must agree there.
        let t = rng.gen_range(-delta..delta);
        let (x, y) = match i % 4 {
            0 => (delta, t),
            1 => (-delta, t),
            2 => (t, delta),
            _ => (t, -delta),
        };
        let xv = nalgebra::DVector::from_column_slice(&[x, y]);
        let quad = (xv.transpose() * &p * &xv)[(0, 0)];
        let (si, lam) = tri.locate(&[x, y]).unwrap();
        let cpa: f64 = lam
            .iter()
            .zip(&tri.simplices[si])
            .map(|(&l, &v)| l * cert.vertex_values[v])
            .sum();
        let jump = (quad - quad.min(cpa)).abs();
        assert!(jump <= 1e-8, "branch jump {jump} at ({x}, {y})");
    }
}

#[test]
fn refinement_tightens_conic_objective() {
    // Small instance of the monotone-refinement property; the full series
    // is covered by the acceptance suite.
    let model = conic_model(1.0, 1.0);
    let mut objectives = Vec::new();
    for divisions in [20usize, 60] {
        let mut req = AnalysisRequest::new(
            model.clone(),
            BoxRegion::new(vec![-1.0], vec![1.0]),
            vec![divisions],
            QsrMode::Conic,
        );
        req.verify = quick_verify();
        let result = analyze_with_affine(&req).expect("feasible");
        objectives.push(result.solver.objective);
        if let Headline::Cone { b, .. } = result.headline {
            assert!(b >= 0.5 - 1e-6, "upper corner {b} crossed the analytical bound");
        }
    }
    assert!(objectives[1] <= objectives[0] + 1e-9);
}

#[test]
fn auto_refine_recovers_from_coarse_infeasibility() {
    // 4 cells is too coarse for the benchmark; doubling fixes it.
    let model = conic_model(1.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![4],
        QsrMode::Conic,
    );
    req.verify = quick_verify();
    req.auto_refine = 0;
    let plain = analyze(&req);
    let coarse_infeasible = matches!(plain, Err(AnalysisError::Infeasible { .. }));
    req.auto_refine = 3;
    let refined = analyze(&req).expect("refinement should reach feasibility");
    assert!(refined.mesh.divisions[0] > 4 || !coarse_infeasible);
}

#[test]
fn result_json_is_deterministic() {
    let model = conic_model(0.0, 1.0);
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-1.0], vec![1.0]),
        vec![10],
        QsrMode::L2Gain,
    );
    req.verify = quick_verify();
    let a = serde_json::to_string(&analyze_no_affine(&req).unwrap()).unwrap();
    let b = serde_json::to_string(&analyze_no_affine(&req).unwrap()).unwrap();
    assert_eq!(a, b);
}
