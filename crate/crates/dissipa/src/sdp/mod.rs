//! Conic-program model and the bundled interior-point solver.
//!
//! A program is a linear objective over free variables subject to matrix
//! blocks `F0 + sum_i y_i F_i <= 0`; scalar linear constraints are 1x1
//! blocks. The bundled solver is a primal-dual interior-point method with
//! Nesterov-Todd scaling that exploits the block-diagonal structure: no
//! cross-block factorization, per-block eigendecompositions, and a sparse
//! LDL^T of the Schur complement. The analysis layer talks only to this
//! module's types, so an external conic solver could replace the bundled
//! one behind the same contract.

mod ldl;
mod solver;

pub use solver::solve;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::lmi::{AffineExpr, LmiBlock, VarId};


/// Linear objective plus negative-semidefinite matrix blocks.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub num_vars: usize,
    /// Objective coefficients, length `num_vars`; minimized.
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub blocks: Vec<LmiBlock>,
    pub var_names: Vec<String>,
    /// Geometric position hints for fill-reducing ordering (mesh-attached
    /// variables); None entries are ordered structurally.
    pub ordering_positions: Option<Vec<Option<Vec<f64>>>>,
}

impl ConicProgram {
    pub fn new(num_vars: usize, var_names: Vec<String>) -> Self {
        ConicProgram {
            num_vars,
            objective: vec![0.0; num_vars],
            objective_constant: 0.0,
            blocks: Vec::new(),
            var_names,
            ordering_positions: None,
        }
    }

    /// Extends the variable space to `n` entries (new objective terms zero).
    pub fn grow_to(&mut self, n: usize, names: &[String]) {
        assert!(n >= self.num_vars);
        assert_eq!(names.len(), n);
        self.objective.resize(n, 0.0);
        if let Some(pos) = &mut self.ordering_positions {
            pos.resize(n, None);
        }
        self.var_names = names.to_vec();
        self.num_vars = n;
    }

    pub fn add_block(&mut self, block: LmiBlock) {
        debug_assert!(block.coeffs.iter().all(|(id, _)| id.0 < self.num_vars));
        debug_assert!(crate::lmi::block_is_symmetric(&block, 1e-12));
        self.blocks.push(block);
    }

    /// Adds the scalar constraint `expr <= 0`.
    pub fn add_scalar_le(&mut self, expr: &AffineExpr, label: impl Into<String>) {
        self.add_block(LmiBlock::scalar(expr, label));
    }

    /// Adds `var >= bound`.
    pub fn add_lower_bound(&mut self, var: VarId, bound: f64, label: impl Into<String>) {
        let e = AffineExpr { constant: bound, terms: vec![(var, -1.0)] };
        self.add_scalar_le(&e, label);
    }

    pub fn set_objective_term(&mut self, var: VarId, coeff: f64) {
        self.objective[var.0] = coeff;
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective_constant
            + self
                .objective
                .iter()
                .zip(y)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}

/// Solver settings; defaults match common conic-solver tolerances.
#[derive(Debug, Clone, Serialize)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Feasibility tolerance on block residuals (original units).
    pub tol_feas: f64,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Iteration log to standard error at verbosity >= 2.
    pub verbosity: u8,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { max_iter: 200, tol_feas: 1e-7, tol_gap: 1e-6, verbosity: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

/// Solver output. When `status == Optimal`, every block residual is within
/// the solver feasibility tolerance.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Certified lower bound on the objective (weak duality).
    pub dual_objective: f64,
    pub iterations: usize,
    /// Max over matrix blocks of lambda_max(F0 + sum y F).
    pub max_block_residual: f64,
    /// Max over 1x1 blocks of the constraint value.
    pub max_linear_residual: f64,
    /// Certificate of the dual ray when status is Infeasible.
    pub infeasibility_certificate: Option<String>,
}

/// Independent residual recomputation for a variable assignment.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// lambda_max per block, in block order.
    pub block_eigs: Vec<f64>,
    pub worst_matrix_residual: f64,
    pub worst_linear_residual: f64,
    pub objective: f64,
}

/// Recomputes every block's maximum eigenvalue and the linear residuals
/// directly from the program data and `y`, independent of the solve path.
pub fn check_solution(p: &ConicProgram, y: &[f64]) -> ResidualReport {
    assert_eq!(y.len(), p.num_vars);
    let mut block_eigs = Vec::with_capacity(p.blocks.len());
    let mut worst_matrix = f64::NEG_INFINITY;
    let mut worst_linear = f64::NEG_INFINITY;
    for b in &p.blocks {
        let m = b.eval(y);
        let eig = max_eig(&m);
        block_eigs.push(eig);
        if b.dim == 1 {
            worst_linear = worst_linear.max(eig);
        } else {
            worst_matrix = worst_matrix.max(eig);
        }
    }
    ResidualReport {
        block_eigs,
        worst_matrix_residual: if worst_matrix.is_finite() { worst_matrix } else { 0.0 },
        worst_linear_residual: if worst_linear.is_finite() { worst_linear } else { 0.0 },
        objective: p.objective_value(y),
    }
}

pub(crate) fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let sym = (m + m.transpose()).scale(0.5);
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Per-block and per-variable power-of-two equilibration. Power-of-two
/// factors keep the unscale round trip exact and already-equilibrated
/// programs untouched.
#[derive(Debug, Clone)]
pub struct ScalingMap {
    pub block_scale: Vec<f64>,
    pub var_scale: Vec<f64>,
    pub objective_scale: f64,
}

impl ScalingMap {
    /// Maps scaled variable values back to the original program's.
    pub fn unscale_vars(&self, y_scaled: &[f64]) -> Vec<f64> {
        y_scaled
            .iter()
            .zip(&self.var_scale)
            .map(|(v, d)| v * d)
            .collect()
    }
}

fn pow2_near(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        1.0
    } else {
        2f64.powi(v.log2().round() as i32)
    }
}

/// Equilibrates blocks and variables. `solve` applies this internally; it is
/// exposed for diagnostics and tests.
pub fn scale_program(p: &ConicProgram) -> (ConicProgram, ScalingMap) {
    let mut scaled = p.clone();
    let ent_norm = |m: &DMatrix<f64>| m.amax();

    // Block pass: bring the largest entry of each block near one.
    let mut block_scale = Vec::with_capacity(scaled.blocks.len());
    for b in &mut scaled.blocks {
        let mut norm = ent_norm(&b.f0);
        for (_, f) in &b.coeffs {
            norm = norm.max(ent_norm(f));
        }
        let s = pow2_near(norm);
        if s != 1.0 {
            b.f0 /= s;
            for (_, f) in &mut b.coeffs {
                *f /= s;
            }
        }
        block_scale.push(s);
    }

    // Variable pass: equilibrate each column of the stacked coefficients.
    let mut col_norm = vec![0.0f64; scaled.num_vars];
    for b in &scaled.blocks {
        for (id, f) in &b.coeffs {
            col_norm[id.0] = col_norm[id.0].max(ent_norm(f));
        }
    }
    let var_scale: Vec<f64> = col_norm.iter().map(|&v| 1.0 / pow2_near(v)).collect();
    for b in &mut scaled.blocks {
        for (id, f) in &mut b.coeffs {
            let d = var_scale[id.0];
            if d != 1.0 {
                *f *= d;
            }
        }
    }
    for (c, d) in scaled.objective.iter_mut().zip(&var_scale) {
        *c *= d;
    }

    let obj_norm = scaled.objective.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let objective_scale = pow2_near(obj_norm);
    if objective_scale != 1.0 {
        for c in scaled.objective.iter_mut() {
            *c /= objective_scale;
        }
    }
    scaled.objective_constant = 0.0;

    (
        scaled,
        ScalingMap { block_scale, var_scale, objective_scale },
    )
}

/// Ratio of the largest to smallest nonzero coefficient-matrix norm; the
/// equilibration quality measure.
pub fn condition_measure(p: &ConicProgram) -> f64 {
    let mut max_n = 0.0f64;
    let mut min_n = f64::INFINITY;
    for b in &p.blocks {
        let mut push = |m: &DMatrix<f64>| {
            let v = m.amax();
            if v > 0.0 {
                max_n = max_n.max(v);
                min_n = min_n.min(v);
            }
        };
        push(&b.f0);
        for (_, f) in &b.coeffs {
            push(f);
        }
    }
    if min_n.is_finite() {
        max_n / min_n
    } else {
        1.0
    }
}
