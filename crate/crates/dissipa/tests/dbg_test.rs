use dissipa::analysis::*;
use dissipa::expr::*;
use dissipa::lmi::QsrMode;
use nalgebra::DMatrix;

fn pendulum() -> DynamicsModel {
    DynamicsModel::new(
        2, 1, 1,
        vec![parse_expression("x2", 2).unwrap(), parse_expression("-sin(x1) - x2", 2).unwrap()],
        vec![vec![parse_expression("0", 2).unwrap()]; 2],
        vec![parse_expression("x2", 2).unwrap()],
        vec![vec![parse_expression("0", 2).unwrap()]],
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::zeros(1, 1),
    ).unwrap()
}

#[test]
fn probe_pendulum_meshes() {
    for d in [68usize] {
        let mut req = AnalysisRequest::new(
            pendulum(),
            BoxRegion::new(vec![-1.2, -1.2], vec![1.2, 1.2]),
            vec![d, d],
            QsrMode::L2Gain,
        );
        req.solver.max_iter = 400;
        req.verify.hji_samples_per_simplex = 20;
        req.verify.trials = 10;
        let t0 = std::time::Instant::now();
        match analyze_with_affine(&req) {
            Ok(r) => eprintln!("d={d}: OK gamma per headline {:?} iters {} in {:?}", r.headline, r.solver.iterations, t0.elapsed()),
            Err(e) => eprintln!("d={d}: ERR {e} in {:?}", t0.elapsed()),
        }
    }
}

#[test]
fn probe_poly3d() {
    let model = DynamicsModel::new(
        3, 1, 1,
        vec![
            parse_expression("-x1 - x3 + x2 - x3*x2^2", 3).unwrap(),
            parse_expression("-x2*x3^2 - x2", 3).unwrap(),
            parse_expression("0.5*(x1 - x3)", 3).unwrap(),
        ],
        vec![vec![parse_expression("0", 3).unwrap()]; 3],
        vec![parse_expression("x2", 3).unwrap()],
        vec![vec![parse_expression("0", 3).unwrap()]],
        DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]),
        DMatrix::zeros(1, 1),
    ).unwrap();
    let mut req = AnalysisRequest::new(
        model,
        BoxRegion::new(vec![-0.5; 3], vec![0.5; 3]),
        vec![10, 10, 10],
        QsrMode::L2Gain,
    );
    req.epsilon = EpsilonRule::Fixed(0.25);
    req.solver.max_iter = 300;
    req.verify.hji_samples_per_simplex = 20;
    req.verify.trials = 10;
    let t0 = std::time::Instant::now();
    match analyze_with_affine(&req) {
        Ok(r) => eprintln!("poly3d: OK {:?} iters {} in {:?}", r.headline, r.solver.iterations, t0.elapsed()),
        Err(e) => eprintln!("poly3d: ERR {e} in {:?}", t0.elapsed()),
    }
}

#[test]
fn probe_zero_dynamics() {
    let model = DynamicsModel::new(
        1, 1, 1,
        vec![parse_expression("0", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        vec![parse_expression("0", 1).unwrap()],
        vec![vec![parse_expression("0", 1).unwrap()]],
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
    ).unwrap();
    let mut req = AnalysisRequest::new(model, BoxRegion::new(vec![-1.0], vec![1.0]), vec![10], QsrMode::L2Gain);
    req.solver.verbosity = 3;
    match analyze_no_affine(&req) {
        Ok(r) => eprintln!("OK obj {}", r.solver.objective),
        Err(e) => eprintln!("ERR {e}"),
    }
}
