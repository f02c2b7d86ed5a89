//! End-to-end orchestration: mesh in, certified QSR parameters and storage
//! function out.
//!
//! Two problem variants are supported. `NoAffine` (for systems whose input
//! terms vanish at the origin, B = D = 0) synthesizes a CPA storage function
//! whose vertex constraints carry the per-simplex Taylor inflation.
//! `WithAffine` excludes an origin neighborhood from the triangulation,
//! synthesizes a quadratic storage piece certified on an epsilon ball, and
//! couples the two pieces through boundary inequalities so that their min
//! composition is a continuous storage function.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    all_simplex_bounds, gradient_norm_bound_vars, origin_ball_data, ModelHessians,
    OriginBallData, SIGN_ENUMERATION_MAX_DIM,
};
use crate::expr::{BoundMode, BoxRegion, DynamicsModel, ExprError, ModelError};
use crate::lmi::{
    assemble_m_eps, assemble_vertex_constraint, preset_qsr, AffineExpr, BallPiVars, CpaPiVars,
    DecisionVariableMap, Headline, QsrError, QsrMode, QsrParameterization, QuadVars, VarId,
    VarKind,
};
use crate::mesh::{kuhn_triangulate, MeshError, Triangulation};
use crate::sdp::{self, ConicProgram, SolveStatus, SolverSettings};
use crate::verify::{self, SupplyRate, VerificationReport, VerifySettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoAffine,
    WithAffine,
}

/// How the ball radius of the quadratic storage piece is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// epsilon = 2 * exclusion_cells * max-cell-width * sqrt(n), which
    /// guarantees the exclusion box sits inside the ball.
    TwoDeltaSqrtN,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct AnalysisRequest {
    pub model: DynamicsModel,
    pub region: BoxRegion,
    /// Cells per axis.
    pub divisions: Vec<usize>,
    pub mode: QsrMode,
    pub variant: Variant,
    /// Half-width of the exclusion box, in cells (WithAffine only).
    pub exclusion_cells: usize,
    pub epsilon: EpsilonRule,
    /// Strictness slack: matrix constraints are enforced as <= -delta I.
    pub delta: f64,
    pub bound_mode: BoundMode,
    pub solver: SolverSettings,
    pub verify: VerifySettings,
    /// Automatic mesh refinements (doubling divisions) on infeasibility.
    pub auto_refine: usize,
    /// Tiny objective weight on storage values and gradient bounds. It
    /// anchors directions the supply-rate objective leaves free (the dual
    /// would otherwise lack strict feasibility and the solver stalls);
    /// the perturbation of the headline objective is of this order.
    pub objective_regularization: f64,
}

impl AnalysisRequest {
    pub fn new(
        model: DynamicsModel,
        region: BoxRegion,
        divisions: Vec<usize>,
        mode: QsrMode,
    ) -> Self {
        let variant = if model.b.amax() == 0.0 && model.d.amax() == 0.0 {
            Variant::NoAffine
        } else {
            Variant::WithAffine
        };
        AnalysisRequest {
            model,
            region,
            divisions,
            mode,
            variant,
            exclusion_cells: 1,
            epsilon: EpsilonRule::TwoDeltaSqrtN,
            delta: 1e-9,
            bound_mode: BoundMode::Interval,
            solver: SolverSettings::default(),
            verify: VerifySettings::default(),
            auto_refine: 0,
            objective_regularization: 1e-9,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("mesh error: {0}")]
    Mesh(#[from] MeshError),
    #[error("expression error while assembling bounds: {0}")]
    Expr(#[from] ExprError),
    #[error("supply-rate preset error: {0}")]
    Qsr(#[from] QsrError),
    #[error("{0}")]
    Config(String),
    #[error(
        "problem infeasible on {simplices} simplices (max diameter {diameter:.4e}); \
         refine the mesh (e.g. divisions {suggestion:?}){eps_note}"
    )]
    Infeasible {
        simplices: usize,
        diameter: f64,
        suggestion: Vec<usize>,
        eps_note: String,
    },
    #[error(
        "epsilon = {epsilon:.4e} exceeds the region half-width {half_width:.4e}; \
         use a finer mesh or a smaller fixed epsilon"
    )]
    EpsilonTooLarge { epsilon: f64, half_width: f64 },
    #[error("solver failed: {status:?} after {iterations} iterations (residual {residual:.3e})")]
    SolverFailure {
        status: SolveStatus,
        iterations: usize,
        residual: f64,
    },
    #[error("certificate failed verification: {0}")]
    VerificationFailed(String),
}

/// The synthesized storage function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorageCertificate {
    pub variant: Variant,
    /// One value per triangulation vertex.
    pub vertex_values: Vec<f64>,
    /// Per-simplex gradient of the CPA interpolant (derived, not serialized).
    #[serde(skip, default)]
    pub gradients: Vec<Vec<f64>>,
    /// Quadratic piece (WithAffine), row-major n x n.
    pub p_matrix: Option<Vec<Vec<f64>>>,
    pub epsilon: Option<f64>,
}

impl StorageCertificate {
    pub fn p_as_matrix(&self) -> Option<DMatrix<f64>> {
        self.p_matrix.as_ref().map(|rows| {
            let n = rows.len();
            DMatrix::from_fn(n, n, |r, c| rows[r][c])
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSummary {
    pub region_lo: Vec<f64>,
    pub region_hi: Vec<f64>,
    pub divisions: Vec<usize>,
    pub exclusion_lo: Option<Vec<f64>>,
    pub exclusion_hi: Option<Vec<f64>>,
    pub simplices: usize,
    pub vertices: usize,
    pub max_diameter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub objective: f64,
    pub dual_objective: f64,
    pub max_block_residual: f64,
    pub max_linear_residual: f64,
    pub variables: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QsrValues {
    pub q: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

/// Full analysis output; serializes deterministically to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub status: String,
    pub mode: String,
    pub variant: Variant,
    /// True when bound constants came from interval arithmetic; sampled
    /// bounds are flagged uncertified.
    pub rigorous: bool,
    /// Results labeled preset-reduced use the Q = 0 reduced matrix.
    pub preset_reduced: bool,
    pub headline: Headline,
    pub qsr: QsrValues,
    pub delta: f64,
    pub mesh: MeshSummary,
    pub solver: SolverSummary,
    pub certificate: StorageCertificate,
    pub verification: VerificationReport,
    /// The region is treated as the analysis set; robust positive
    /// invariance of the operating set is an assumption, not a result.
    pub rpi_assumption: String,
}

/// Analyzes with the variant recorded in the request, retrying on a finer
/// mesh when infeasible and allowed.
pub fn analyze(req: &AnalysisRequest) -> Result<AnalysisResult, AnalysisError> {
    let mut divisions = req.divisions.clone();
    let mut last_err = None;
    for attempt in 0..=req.auto_refine {
        let result = match req.variant {
            Variant::NoAffine => analyze_no_affine_at(req, &divisions),
            Variant::WithAffine => analyze_with_affine_at(req, &divisions),
        };
        // The epsilon rule shrinks with the mesh, so an oversized ball is
        // refinable too.
        let refinable = matches!(result, Err(AnalysisError::Infeasible { .. }))
            || (matches!(result, Err(AnalysisError::EpsilonTooLarge { .. }))
                && req.epsilon == EpsilonRule::TwoDeltaSqrtN);
        match result {
            Err(_) if refinable && attempt < req.auto_refine => {
                last_err = Some(result.unwrap_err());
                divisions = divisions.iter().map(|d| d * 2).collect();
            }
            other => return other,
        }
    }
    Err(last_err.expect("refinement loop ran at least once"))
}

/// Problem variant without linear input terms (requires B = 0, D = 0).
pub fn analyze_no_affine(req: &AnalysisRequest) -> Result<AnalysisResult, AnalysisError> {
    analyze_no_affine_at(req, &req.divisions)
}

/// Problem variant with linear input terms and the combined storage.
pub fn analyze_with_affine(req: &AnalysisRequest) -> Result<AnalysisResult, AnalysisError> {
    analyze_with_affine_at(req, &req.divisions)
}

fn analyze_no_affine_at(
    req: &AnalysisRequest,
    divisions: &[usize],
) -> Result<AnalysisResult, AnalysisError> {
    let model = &req.model;
    if model.b.amax() != 0.0 || model.d.amax() != 0.0 {
        return Err(AnalysisError::Config(
            "the no-affine variant requires B = 0 and D = 0".into(),
        ));
    }
    model.validate_on(&req.region)?;
    let origin_inside = (0..model.n).all(|k| req.region.lo[k] < 0.0 && 0.0 < req.region.hi[k]);
    if !origin_inside {
        return Err(AnalysisError::Config(
            "the region must contain the origin strictly inside".into(),
        ));
    }
    let tri = kuhn_triangulate(&req.region, divisions, None)?;
    let hessians = ModelHessians::new(model, req.bound_mode);
    let geoms: Vec<_> = (0..tri.num_simplices()).map(|i| tri.geometry(i)).collect();
    let per_simplex = all_simplex_bounds(&hessians, &geoms)?;

    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(req.mode.clone(), model.m, model.p, &mut vars, req.delta)?;
    let vertex_ids: Vec<VarId> = (0..tri.num_vertices())
        .map(|v| vars.push(format!("V_{v}"), VarKind::VertexValue(v)))
        .collect();
    let grad_ids: Vec<VarId> = (0..tri.num_simplices())
        .map(|i| vars.push(format!("l_{i}"), VarKind::GradBound(i)))
        .collect();
    let pis = CpaPiVars::register(&mut vars, model.m, model.p, !qsr.is_reduced());

    let mut program = ConicProgram::new(vars.len(), vars.names().to_vec());
    install_objective(&mut program, &qsr);
    regularize_free_directions(&mut program, &vertex_ids, &grad_ids, req.objective_regularization);
    install_common_qsr(&mut program, &qsr);
    for (e, label) in pis.coupling_constraints() {
        program.add_scalar_le(&e, label);
    }
    // Storage nonnegativity at every vertex.
    for (v, id) in vertex_ids.iter().enumerate() {
        program.add_lower_bound(*id, 0.0, format!("V_{v} >= 0"));
    }
    install_grad_norm_constraints(&mut program, &tri, &vertex_ids, &grad_ids, &mut vars);

    // Vertex HJI constraints, skipping the origin vertex where the error
    // vanishes; an origin cap pins the weighting diagonals instead.
    let mut origin_capped = false;
    for i in 0..tri.num_simplices() {
        let g = tri.geometry(i);
        let grad = gradient_exprs(&tri, i, &vertex_ids);
        for (j, &v) in tri.simplices[i].iter().enumerate() {
            let x = &tri.vertices[v];
            let is_origin = x.iter().all(|&c| c == 0.0);
            if is_origin {
                if !origin_capped {
                    origin_capped = true;
                    // The origin row of the HJI matrix is identically zero
                    // (the error scale vanishes there), so the cap keeps
                    // only the supply-rate sub-blocks, delta-shifted.
                    let zero_grad = vec![AffineExpr::zero(); model.n];
                    let full = assemble_vertex_constraint(
                        model,
                        &qsr,
                        x,
                        &zero_grad,
                        &per_simplex[i],
                        0.0,
                        grad_ids[i],
                        &pis,
                        0.0,
                        "origin cap".into(),
                    )?;
                    program.add_block(drop_leading_row(&full, req.delta));
                }
                continue;
            }
            let block = assemble_vertex_constraint(
                model,
                &qsr,
                x,
                &grad,
                &per_simplex[i],
                g.c[j],
                grad_ids[i],
                &pis,
                req.delta,
                format!("hji s{i} v{j}"),
            )?;
            program.add_block(block);
        }
    }

    program.ordering_positions = Some(ordering_positions(&vars, &tri));
    let solution = sdp::solve(&program, &req.solver);
    handle_solver_status(&solution, &tri, divisions, "")?;

    let vertex_values: Vec<f64> = vertex_ids.iter().map(|id| solution.y[id.0]).collect();
    let gradients = all_gradients(&tri, &vertex_values);
    let certificate = StorageCertificate {
        variant: Variant::NoAffine,
        vertex_values,
        gradients,
        p_matrix: None,
        epsilon: None,
    };
    finish(req, divisions, &tri, &qsr, &solution, program, certificate)
}

fn analyze_with_affine_at(
    req: &AnalysisRequest,
    divisions: &[usize],
) -> Result<AnalysisResult, AnalysisError> {
    let model = &req.model;
    model.validate_on(&req.region)?;
    let n = model.n;
    let origin_inside = (0..n).all(|k| req.region.lo[k] < 0.0 && 0.0 < req.region.hi[k]);
    if !origin_inside {
        return Err(AnalysisError::Config(
            "the region must contain the origin strictly inside".into(),
        ));
    }
    if req.exclusion_cells == 0 {
        return Err(AnalysisError::Config(
            "the with-affine variant requires an origin exclusion of at least one cell".into(),
        ));
    }
    let deltas: Vec<f64> = (0..n)
        .map(|k| (req.region.hi[k] - req.region.lo[k]) / divisions[k] as f64)
        .collect();
    let e = req.exclusion_cells as f64;
    let exclusion = BoxRegion::new(
        deltas.iter().map(|d| -e * d).collect(),
        deltas.iter().map(|d| e * d).collect(),
    );
    let delta_max = deltas.iter().cloned().fold(0.0, f64::max);
    let epsilon = match req.epsilon {
        EpsilonRule::TwoDeltaSqrtN => 2.0 * e * delta_max * (n as f64).sqrt(),
        EpsilonRule::Fixed(v) => v,
    };
    let corner = deltas.iter().map(|d| (e * d) * (e * d)).sum::<f64>().sqrt();
    if epsilon <= corner {
        return Err(AnalysisError::Config(format!(
            "epsilon = {epsilon:.4e} does not cover the exclusion box (corner at {corner:.4e})"
        )));
    }
    let half_width = (0..n)
        .map(|k| req.region.hi[k].min(-req.region.lo[k]))
        .fold(f64::INFINITY, f64::min);
    if epsilon >= half_width {
        return Err(AnalysisError::EpsilonTooLarge { epsilon, half_width });
    }

    let tri = kuhn_triangulate(&req.region, divisions, Some(&exclusion))?;
    let hessians = ModelHessians::new(model, req.bound_mode);
    let geoms: Vec<_> = (0..tri.num_simplices()).map(|i| tri.geometry(i)).collect();
    let per_simplex = all_simplex_bounds(&hessians, &geoms)?;
    let ball: OriginBallData = origin_ball_data(&hessians, epsilon)?;

    let mut vars = DecisionVariableMap::new();
    let qsr = preset_qsr(req.mode.clone(), model.m, model.p, &mut vars, req.delta)?;
    let vertex_ids: Vec<VarId> = (0..tri.num_vertices())
        .map(|v| vars.push(format!("V_{v}"), VarKind::VertexValue(v)))
        .collect();
    let grad_ids: Vec<VarId> = (0..tri.num_simplices())
        .map(|i| vars.push(format!("l_{i}"), VarKind::GradBound(i)))
        .collect();
    let pis = CpaPiVars::register(&mut vars, model.m, model.p, !qsr.is_reduced());
    let ball_pis = BallPiVars::register(&mut vars, model.m, model.p, !qsr.is_reduced());
    let quad = QuadVars::register(&mut vars, n);

    let mut program = ConicProgram::new(vars.len(), vars.names().to_vec());
    install_objective(&mut program, &qsr);
    regularize_free_directions(&mut program, &vertex_ids, &grad_ids, req.objective_regularization);
    install_common_qsr(&mut program, &qsr);
    for (e, label) in pis.coupling_constraints() {
        program.add_scalar_le(&e, label);
    }
    for (e, label) in ball_pis.coupling_constraints() {
        program.add_scalar_le(&e, label);
    }

    // Quadratic piece: positivity, norm bound, and the ball HJI.
    program.add_block(quad.positivity_block(req.delta));
    program.add_block(quad.norm_bound_block());
    program.add_block(assemble_m_eps(model, &qsr, &ball, &quad, &ball_pis, req.delta));

    // Boundary coupling of the two storage pieces.
    let quad_form = |x: &[f64]| -> AffineExpr {
        let mut e = AffineExpr::zero();
        for r in 0..n {
            for c in 0..n {
                e.add_assign(&AffineExpr::term(quad.entry(r, c), x[r] * x[c]));
            }
        }
        e
    };
    for v in tri.exclusion_boundary_vertices() {
        let e = quad_form(&tri.vertices[v]).sub(&AffineExpr::var(vertex_ids[v]));
        program.add_scalar_le(&e, format!("V_{v} >= xPx on exclusion boundary"));
    }
    for v in tri.vertices_strictly_in_ball(epsilon) {
        let e = AffineExpr::var(vertex_ids[v]).sub(&quad_form(&tri.vertices[v]));
        program.add_scalar_le(&e, format!("V_{v} <= xPx inside the ball"));
    }

    for (v, id) in vertex_ids.iter().enumerate() {
        program.add_lower_bound(*id, 0.0, format!("V_{v} >= 0"));
    }
    install_grad_norm_constraints(&mut program, &tri, &vertex_ids, &grad_ids, &mut vars);

    // CPA vertex HJI constraints; no simplex touches the origin here.
    for i in 0..tri.num_simplices() {
        let g = tri.geometry(i);
        let grad = gradient_exprs(&tri, i, &vertex_ids);
        for (j, &v) in tri.simplices[i].iter().enumerate() {
            let block = assemble_vertex_constraint(
                model,
                &qsr,
                &tri.vertices[v],
                &grad,
                &per_simplex[i],
                g.c[j],
                grad_ids[i],
                &pis,
                req.delta,
                format!("hji s{i} v{j}"),
            )?;
            program.add_block(block);
        }
    }

    program.ordering_positions = Some(ordering_positions(&vars, &tri));
    let solution = sdp::solve(&program, &req.solver);
    let eps_note = format!("; or shrink epsilon (currently {epsilon:.4e})");
    handle_solver_status(&solution, &tri, divisions, &eps_note)?;

    let vertex_values: Vec<f64> = vertex_ids.iter().map(|id| solution.y[id.0]).collect();
    let gradients = all_gradients(&tri, &vertex_values);
    let p = quad.matrix(&solution.y);
    let certificate = StorageCertificate {
        variant: Variant::WithAffine,
        vertex_values,
        gradients,
        p_matrix: Some((0..n).map(|r| (0..n).map(|c| p[(r, c)]).collect()).collect()),
        epsilon: Some(epsilon),
    };
    finish(req, divisions, &tri, &qsr, &solution, program, certificate)
}

fn regularize_free_directions(
    program: &mut ConicProgram,
    vertex_ids: &[VarId],
    grad_ids: &[VarId],
    weight: f64,
) {
    for id in vertex_ids.iter().chain(grad_ids) {
        program.set_objective_term(*id, weight);
    }
}

/// Position hints for the solver's fill-reducing ordering: storage values
/// at their vertices, gradient bounds and their auxiliaries at simplex
/// centroids; everything else ordered structurally.
fn ordering_positions(vars: &DecisionVariableMap, tri: &Triangulation) -> Vec<Option<Vec<f64>>> {
    let centroid = |i: usize| -> Vec<f64> {
        let verts = &tri.simplices[i];
        (0..tri.dim)
            .map(|k| {
                verts.iter().map(|&v| tri.vertices[v][k]).sum::<f64>() / verts.len() as f64
            })
            .collect()
    };
    (0..vars.len())
        .map(|idx| match vars.kind(VarId(idx)) {
            VarKind::VertexValue(v) => Some(tri.vertices[*v].clone()),
            VarKind::GradBound(i) | VarKind::GradAux(i, _) => Some(centroid(*i)),
            _ => None,
        })
        .collect()
}

/// Removes the first row/column of a block and shifts the remaining
/// diagonal by `delta`.
fn drop_leading_row(block: &crate::lmi::LmiBlock, delta: f64) -> crate::lmi::LmiBlock {
    let dim = block.dim - 1;
    let shrink = |m: &DMatrix<f64>| m.view((1, 1), (dim, dim)).into_owned();
    let mut f0 = shrink(&block.f0);
    for k in 0..dim {
        f0[(k, k)] += delta;
    }
    crate::lmi::LmiBlock {
        dim,
        f0,
        coeffs: block
            .coeffs
            .iter()
            .map(|(id, f)| (*id, shrink(f)))
            .filter(|(_, f)| f.amax() != 0.0)
            .collect(),
        label: block.label.clone(),
    }
}

fn install_objective(program: &mut ConicProgram, qsr: &QsrParameterization) {
    program.objective_constant = qsr.objective.constant;
    for &(id, c) in &qsr.objective.terms {
        program.set_objective_term(id, c);
    }
}

fn install_common_qsr(program: &mut ConicProgram, qsr: &QsrParameterization) {
    for (e, label) in &qsr.side_linear {
        program.add_scalar_le(e, label.clone());
    }
    for b in &qsr.side_blocks {
        program.add_block(b.clone());
    }
}

fn install_grad_norm_constraints(
    program: &mut ConicProgram,
    tri: &Triangulation,
    vertex_ids: &[VarId],
    grad_ids: &[VarId],
    vars: &mut DecisionVariableMap,
) {
    for i in 0..tri.num_simplices() {
        let tmpl = gradient_norm_bound_vars(tri.geometry(i));
        let verts = &tri.simplices[i];
        if let Some(axis_rows) = tmpl.axis_rows {
            // Auxiliary encoding above the sign-enumeration cap.
            let mut aux_ids = Vec::with_capacity(axis_rows.len());
            for (q, rows) in axis_rows.iter().enumerate() {
                let g = vars.push(format!("gaux_{i}_{q}"), VarKind::GradAux(i, q));
                program.grow_to(vars.len(), vars.names());
                aux_ids.push(g);
                for row in rows {
                    let mut e = AffineExpr::term(g, -1.0);
                    for (j, &coeff) in row.iter().enumerate() {
                        e.add_assign(&AffineExpr::term(vertex_ids[verts[j]], coeff));
                    }
                    program.add_scalar_le(&e, format!("grad aux s{i} q{q}"));
                }
            }
            let mut sum = AffineExpr::term(grad_ids[i], -1.0);
            for g in aux_ids {
                sum.add_assign(&AffineExpr::var(g));
            }
            program.add_scalar_le(&sum, format!("grad one-norm s{i}"));
        } else {
            debug_assert!(tri.dim <= SIGN_ENUMERATION_MAX_DIM);
            for (r, row) in tmpl.sign_rows.iter().enumerate() {
                let mut e = AffineExpr::term(grad_ids[i], -1.0);
                for (j, &coeff) in row.iter().enumerate() {
                    e.add_assign(&AffineExpr::term(vertex_ids[verts[j]], coeff));
                }
                program.add_scalar_le(&e, format!("grad one-norm s{i} r{r}"));
            }
        }
    }
}

fn gradient_exprs(tri: &Triangulation, i: usize, vertex_ids: &[VarId]) -> Vec<AffineExpr> {
    let g = tri.geometry(i);
    let verts = &tri.simplices[i];
    let n = tri.dim;
    (0..n)
        .map(|q| {
            let mut e = AffineExpr::zero();
            for j in 1..=n {
                let w = g.x_inv[(q, j - 1)];
                e.add_assign(&AffineExpr::term(vertex_ids[verts[j]], w));
                e.add_assign(&AffineExpr::term(vertex_ids[verts[0]], -w));
            }
            e
        })
        .collect()
}

fn all_gradients(tri: &Triangulation, vertex_values: &[f64]) -> Vec<Vec<f64>> {
    (0..tri.num_simplices())
        .map(|i| {
            let local: Vec<f64> = tri.simplices[i].iter().map(|&v| vertex_values[v]).collect();
            Triangulation::cpa_gradient(&local, tri.geometry(i))
                .iter()
                .cloned()
                .collect()
        })
        .collect()
}

fn handle_solver_status(
    solution: &sdp::Solution,
    tri: &Triangulation,
    divisions: &[usize],
    eps_note: &str,
) -> Result<(), AnalysisError> {
    match solution.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(AnalysisError::Infeasible {
            simplices: tri.num_simplices(),
            diameter: tri.max_diameter,
            suggestion: divisions.iter().map(|d| d * 2).collect(),
            eps_note: eps_note.to_string(),
        }),
        SolveStatus::NumericalTrouble => Err(AnalysisError::SolverFailure {
            status: solution.status,
            iterations: solution.iterations,
            residual: solution.max_block_residual.max(solution.max_linear_residual),
        }),
    }
}

fn finish(
    req: &AnalysisRequest,
    divisions: &[usize],
    tri: &Triangulation,
    qsr: &QsrParameterization,
    solution: &sdp::Solution,
    program: ConicProgram,
    certificate: StorageCertificate,
) -> Result<AnalysisResult, AnalysisError> {
    let (q, s, r) = qsr.realize(&solution.y);
    let supply = SupplyRate::new(q.clone(), s.clone(), r.clone());
    let headline = qsr.headline(&solution.y);

    let verification = verify::full_suite(&req.model, tri, &certificate, &supply, &req.verify);
    if !verification.pass {
        return Err(AnalysisError::VerificationFailed(format!(
            "max HJI eigenvalue {:.3e} (tol {:.1e}), {} / {} trajectory violations",
            verification.hji_max_eigenvalue,
            req.verify.hji_tol,
            verification.trajectory_violations,
            verification.trajectory_trials,
        )));
    }

    let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect()
    };
    Ok(AnalysisResult {
        status: "optimal".into(),
        mode: req.mode.name().into(),
        variant: certificate.variant,
        rigorous: matches!(req.bound_mode, BoundMode::Interval),
        preset_reduced: qsr.is_reduced(),
        headline,
        qsr: QsrValues { q: to_rows(&q), s: to_rows(&s), r: to_rows(&r) },
        delta: req.delta,
        mesh: MeshSummary {
            region_lo: req.region.lo.clone(),
            region_hi: req.region.hi.clone(),
            divisions: divisions.to_vec(),
            exclusion_lo: tri.exclusion.as_ref().map(|b| b.lo.clone()),
            exclusion_hi: tri.exclusion.as_ref().map(|b| b.hi.clone()),
            simplices: tri.num_simplices(),
            vertices: tri.num_vertices(),
            max_diameter: tri.max_diameter,
        },
        solver: SolverSummary {
            iterations: solution.iterations,
            objective: solution.objective,
            dual_objective: solution.dual_objective,
            max_block_residual: solution.max_block_residual,
            max_linear_residual: solution.max_linear_residual,
            variables: program.num_vars,
            blocks: program.blocks.len(),
        },
        certificate,
        verification,
        rpi_assumption: "region treated as robustly positive invariant (user input)".into(),
    })
}

/// Rebuilds the derived per-simplex gradients after deserialization.
pub fn rebuild_gradients(cert: &mut StorageCertificate, tri: &Triangulation) {
    cert.gradients = all_gradients(tri, &cert.vertex_values);
}

/// Evaluates the storage function at a point of the analysis region.
pub fn evaluate_storage(
    cert: &StorageCertificate,
    tri: &Triangulation,
    x: &[f64],
) -> Result<f64, MeshError> {
    match cert.variant {
        Variant::NoAffine => {
            let (i, lam) = tri.locate(x)?;
            Ok(lam
                .iter()
                .zip(&tri.simplices[i])
                .map(|(&l, &v)| l * cert.vertex_values[v])
                .sum())
        }
        Variant::WithAffine => {
            if !tri.region.contains(x, 1e-12) {
                return Err(MeshError::PointOutside(x.to_vec()));
            }
            let p = cert.p_as_matrix().expect("with-affine certificate has P");
            let eps = cert.epsilon.expect("with-affine certificate has epsilon");
            let quad = {
                let xv = nalgebra::DVector::from_column_slice(x);
                (xv.transpose() * &p * &xv)[(0, 0)]
            };
            let in_exclusion = tri
                .exclusion
                .as_ref()
                .map(|ex| ex.contains(x, 0.0))
                .unwrap_or(false);
            if in_exclusion {
                return Ok(quad);
            }
            let (i, lam) = tri.locate(x)?;
            let cpa: f64 = lam
                .iter()
                .zip(&tri.simplices[i])
                .map(|(&l, &v)| l * cert.vertex_values[v])
                .sum();
            let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm <= eps {
                Ok(quad.min(cpa))
            } else {
                Ok(cpa)
            }
        }
    }
}

/// Samples the storage surface on a regular grid; columns `x1..xn,V`.
pub fn storage_surface_csv(
    cert: &StorageCertificate,
    tri: &Triangulation,
    samples_per_axis: usize,
) -> String {
    let n = tri.dim;
    let mut out = String::new();
    for k in 1..=n {
        out.push_str(&format!("x{k},"));
    }
    out.push_str("V\n");
    let total = samples_per_axis.pow(n as u32);
    let mut x = vec![0.0; n];
    for flat in 0..total {
        let mut rest = flat;
        for k in 0..n {
            let idx = rest % samples_per_axis;
            rest /= samples_per_axis;
            let t = idx as f64 / (samples_per_axis - 1) as f64;
            x[k] = tri.region.lo[k] + t * (tri.region.hi[k] - tri.region.lo[k]);
        }
        if let Ok(v) = evaluate_storage(cert, tri, &x) {
            for c in &x {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{v}\n"));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests;
