//! Supply-rate parameterizations for the supported input-output
//! characterizations (gain, passivity variants, conic sectors, fixed QSR).
//!
//! Each preset wires the fixed parts of (Q, S, R), registers its scalar
//! design variables, and exposes every matrix the assembly needs as affine
//! expressions: S, R, and Q^-1. Q itself appears in the dissipativity
//! matrix only through its inverse, so the output-strictly-passive preset
//! reparameterizes Q = -rho I through tau = 1/rho, which keeps the block
//! affine while preserving the objective (minimizing tau maximizes rho).
//!
//! Presets with Q = 0 (input strictly passive, degenerate conic) use the
//! reduced dissipativity matrix with the Q block row/column removed, and
//! results are labeled "preset-reduced".

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::vars::{AffineExpr, DecisionVariableMap, LmiBlock, SymMatBuilder, VarId, VarKind};

/// Requested characterization; `FixedQsr` carries the user's Q (<= 0).
#[derive(Debug, Clone, PartialEq)]
pub enum QsrMode {
    L2Gain,
    InputStrictlyPassive,
    OutputStrictlyPassive,
    Conic,
    DegenerateConic,
    FixedQsr { q: DMatrix<f64> },
}

impl QsrMode {
    pub fn name(&self) -> &'static str {
        match self {
            QsrMode::L2Gain => "l2_gain",
            QsrMode::InputStrictlyPassive => "input_strictly_passive",
            QsrMode::OutputStrictlyPassive => "output_strictly_passive",
            QsrMode::Conic => "conic",
            QsrMode::DegenerateConic => "degenerate_conic",
            QsrMode::FixedQsr { .. } => "fixed_qsr",
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum QsrError {
    #[error("preset `{0}` requires a square supply (p = m); got p = {1}, m = {2}")]
    NonSquare(&'static str, usize, usize),
    #[error("fixed Q must be symmetric negative semidefinite (max eigenvalue {0:.3e})")]
    QNotNsd(f64),
    #[error("fixed Q is singular but nonzero; a mode requiring Q < 0 cannot invert it")]
    QSingular,
}

/// The certified headline number(s) recovered from a solved program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Headline {
    L2Gain { gamma: f64 },
    InputPassivity { nu: f64 },
    OutputPassivity { rho: f64 },
    Cone { a: f64, b: f64 },
    DegenerateCone { d: f64 },
    Feasibility,
}

/// Affine realization of one Table-of-characterizations row.
pub struct QsrParameterization {
    pub mode: QsrMode,
    pub m: usize,
    pub p: usize,
    /// None means Q = 0 and the reduced dissipativity matrix applies.
    pub q_inv: Option<Vec<Vec<AffineExpr>>>,
    /// p x m.
    pub s: Vec<Vec<AffineExpr>>,
    /// m x m symmetric.
    pub r: Vec<Vec<AffineExpr>>,
    /// Spectral-norm bound on S (variable or exact constant).
    pub s_hat: AffineExpr,
    /// Minimized.
    pub objective: AffineExpr,
    /// Side constraints `expr <= 0` from the characterization table.
    pub side_linear: Vec<(AffineExpr, String)>,
    /// Auxiliary matrix constraints (objective epigraph, spectral bounds).
    pub side_blocks: Vec<LmiBlock>,
    alpha: Option<VarId>,
    beta: Option<VarId>,
    tau: Option<VarId>,
    s_entries: Vec<VarId>,
    r_entries: Vec<VarId>,
}

impl QsrParameterization {
    pub fn is_reduced(&self) -> bool {
        self.q_inv.is_none()
    }

    /// Dimension of the dissipativity matrix: 1 + m (+ p with a Q block).
    pub fn hji_dim(&self) -> usize {
        1 + self.m + if self.is_reduced() { 0 } else { self.p }
    }

    /// Numeric (Q, S, R) at a solved assignment.
    pub fn realize(&self, y: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let q = match (&self.mode, self.tau) {
            (QsrMode::FixedQsr { q }, _) => q.clone(),
            (QsrMode::L2Gain, _) | (QsrMode::Conic, _) => -DMatrix::identity(self.p, self.p),
            (QsrMode::OutputStrictlyPassive, Some(tau)) => {
                -DMatrix::identity(self.p, self.p) / y[tau.0]
            }
            _ => DMatrix::zeros(self.p, self.p),
        };
        let s = DMatrix::from_fn(self.p, self.m, |a, k| self.s[a][k].eval(y));
        let r = DMatrix::from_fn(self.m, self.m, |k, l| self.r[k][l].eval(y));
        (q, s, r)
    }

    pub fn headline(&self, y: &[f64]) -> Headline {
        match self.mode {
            QsrMode::L2Gain => Headline::L2Gain { gamma: y[self.alpha.unwrap().0].max(0.0).sqrt() },
            QsrMode::InputStrictlyPassive => Headline::InputPassivity { nu: y[self.alpha.unwrap().0] },
            QsrMode::OutputStrictlyPassive => {
                Headline::OutputPassivity { rho: 1.0 / y[self.tau.unwrap().0] }
            }
            QsrMode::Conic => {
                let alpha = y[self.alpha.unwrap().0];
                let beta = y[self.beta.unwrap().0];
                let w = (alpha * alpha - beta).max(0.0).sqrt();
                Headline::Cone { a: alpha - w, b: alpha + w }
            }
            QsrMode::DegenerateConic => Headline::DegenerateCone { d: y[self.alpha.unwrap().0] },
            QsrMode::FixedQsr { .. } => Headline::Feasibility,
        }
    }

    /// Variables whose values define the supply rate, for diagnostics.
    pub fn design_variables(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        out.extend(self.alpha);
        out.extend(self.beta);
        out.extend(self.tau);
        out.extend(self.s_entries.iter().cloned());
        out.extend(self.r_entries.iter().cloned());
        out
    }
}

fn scaled_identity(dim_r: usize, dim_c: usize, e: &AffineExpr) -> Vec<Vec<AffineExpr>> {
    (0..dim_r)
        .map(|r| {
            (0..dim_c)
                .map(|c| if r == c { e.clone() } else { AffineExpr::zero() })
                .collect()
        })
        .collect()
}

/// Builds the parameterization for `mode`, registering its design variables.
/// `strict` is the slack used for the table's strict side constraints.
pub fn preset_qsr(
    mode: QsrMode,
    m: usize,
    p: usize,
    vars: &mut DecisionVariableMap,
    strict: f64,
) -> Result<QsrParameterization, QsrError> {
    let require_square = |name: &'static str| -> Result<(), QsrError> {
        if m == p {
            Ok(())
        } else {
            Err(QsrError::NonSquare(name, p, m))
        }
    };
    match mode {
        QsrMode::L2Gain => {
            // Q = -I, S = 0, R = alpha I with alpha = gamma^2; minimize alpha.
            let alpha = vars.push("alpha", VarKind::Qsr("alpha"));
            Ok(QsrParameterization {
                mode: QsrMode::L2Gain,
                m,
                p,
                q_inv: Some(scaled_identity(p, p, &AffineExpr::constant(-1.0))),
                s: scaled_identity(p, m, &AffineExpr::zero()),
                r: scaled_identity(m, m, &AffineExpr::var(alpha)),
                s_hat: AffineExpr::zero(),
                objective: AffineExpr::var(alpha),
                side_linear: vec![(
                    AffineExpr { constant: strict, terms: vec![(alpha, -1.0)] },
                    "alpha > 0".into(),
                )],
                side_blocks: Vec::new(),
                alpha: Some(alpha),
                beta: None,
                tau: None,
                s_entries: Vec::new(),
                r_entries: Vec::new(),
            })
        }
        QsrMode::InputStrictlyPassive => {
            // Q = 0, S = I/2, R = -alpha I with alpha = nu; maximize alpha.
            require_square("input_strictly_passive")?;
            let alpha = vars.push("alpha", VarKind::Qsr("alpha"));
            Ok(QsrParameterization {
                mode: QsrMode::InputStrictlyPassive,
                m,
                p,
                q_inv: None,
                s: scaled_identity(p, m, &AffineExpr::constant(0.5)),
                r: scaled_identity(m, m, &AffineExpr::term(alpha, -1.0)),
                s_hat: AffineExpr::constant(0.5),
                objective: AffineExpr::term(alpha, -1.0),
                side_linear: vec![(
                    AffineExpr { constant: strict, terms: vec![(alpha, -1.0)] },
                    "alpha > 0".into(),
                )],
                side_blocks: Vec::new(),
                alpha: Some(alpha),
                beta: None,
                tau: None,
                s_entries: Vec::new(),
                r_entries: Vec::new(),
            })
        }
        QsrMode::OutputStrictlyPassive => {
            // Q = -rho I, S = I/2, R = 0; maximize rho. Reparameterized
            // through tau = 1/rho so Q^-1 = -tau I stays affine.
            require_square("output_strictly_passive")?;
            let tau = vars.push("tau", VarKind::Qsr("tau"));
            Ok(QsrParameterization {
                mode: QsrMode::OutputStrictlyPassive,
                m,
                p,
                q_inv: Some(scaled_identity(p, p, &AffineExpr::term(tau, -1.0))),
                s: scaled_identity(p, m, &AffineExpr::constant(0.5)),
                r: scaled_identity(m, m, &AffineExpr::zero()),
                s_hat: AffineExpr::constant(0.5),
                objective: AffineExpr::var(tau),
                side_linear: vec![(
                    AffineExpr { constant: strict, terms: vec![(tau, -1.0)] },
                    "tau > 0".into(),
                )],
                side_blocks: Vec::new(),
                alpha: None,
                beta: None,
                tau: Some(tau),
                s_entries: Vec::new(),
                r_entries: Vec::new(),
            })
        }
        QsrMode::Conic => {
            // Q = -I, S = alpha I (alpha = (a+b)/2), R = -beta I (beta = ab);
            // minimize alpha^2 - 2 beta via an epigraph variable t.
            require_square("conic")?;
            let alpha = vars.push("alpha", VarKind::Qsr("alpha"));
            let beta = vars.push("beta", VarKind::Qsr("beta"));
            let s_hat = vars.push("s_hat", VarKind::SHat);
            let t = vars.push("conic_epigraph", VarKind::Epigraph);
            // [[t, alpha], [alpha, 1]] >= 0 encodes t >= alpha^2.
            let mut epi = SymMatBuilder::new(2);
            epi.set(0, 0, AffineExpr::term(t, -1.0));
            epi.set(0, 1, AffineExpr::term(alpha, -1.0));
            epi.set(1, 1, AffineExpr::constant(-1.0));
            Ok(QsrParameterization {
                mode: QsrMode::Conic,
                m,
                p,
                q_inv: Some(scaled_identity(p, p, &AffineExpr::constant(-1.0))),
                s: scaled_identity(p, m, &AffineExpr::var(alpha)),
                r: scaled_identity(m, m, &AffineExpr::term(beta, -1.0)),
                s_hat: AffineExpr::var(s_hat),
                objective: AffineExpr { constant: 0.0, terms: vec![(beta, -2.0), (t, 1.0)] },
                side_linear: vec![
                    (
                        AffineExpr { constant: strict, terms: vec![(beta, 1.0)] },
                        "beta < 0".into(),
                    ),
                    (
                        AffineExpr { constant: 0.0, terms: vec![(alpha, 1.0), (s_hat, -1.0)] },
                        "s_hat >= alpha".into(),
                    ),
                    (
                        AffineExpr { constant: 0.0, terms: vec![(alpha, -1.0), (s_hat, -1.0)] },
                        "s_hat >= -alpha".into(),
                    ),
                ],
                side_blocks: vec![epi.into_block("conic objective epigraph")],
                alpha: Some(alpha),
                beta: Some(beta),
                tau: None,
                s_entries: Vec::new(),
                r_entries: Vec::new(),
            })
        }
        QsrMode::DegenerateConic => {
            // Q = 0, S = I, R = -alpha I (alpha = d); maximize d, d < 0.
            require_square("degenerate_conic")?;
            let alpha = vars.push("alpha", VarKind::Qsr("alpha"));
            Ok(QsrParameterization {
                mode: QsrMode::DegenerateConic,
                m,
                p,
                q_inv: None,
                s: scaled_identity(p, m, &AffineExpr::constant(1.0)),
                r: scaled_identity(m, m, &AffineExpr::term(alpha, -1.0)),
                s_hat: AffineExpr::constant(1.0),
                objective: AffineExpr::term(alpha, -1.0),
                side_linear: vec![(
                    AffineExpr { constant: strict, terms: vec![(alpha, 1.0)] },
                    "alpha < 0".into(),
                )],
                side_blocks: Vec::new(),
                alpha: Some(alpha),
                beta: None,
                tau: None,
                s_entries: Vec::new(),
                r_entries: Vec::new(),
            })
        }
        QsrMode::FixedQsr { q } => {
            // User-supplied Q <= 0; S and R are searched (feasibility).
            assert_eq!(q.nrows(), p);
            assert_eq!(q.ncols(), p);
            let sym = (&q + q.transpose()).scale(0.5);
            let eigs = sym.clone().symmetric_eigenvalues();
            let max_eig = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max_eig > 1e-12 {
                return Err(QsrError::QNotNsd(max_eig));
            }
            let zero_q = sym.amax() <= 1e-14;
            let q_inv = if zero_q {
                None
            } else {
                if max_eig > -1e-12 {
                    return Err(QsrError::QSingular);
                }
                let inv = sym.clone().try_inverse().ok_or(QsrError::QSingular)?;
                Some(
                    (0..p)
                        .map(|a| (0..p).map(|b| AffineExpr::constant(inv[(a, b)])).collect())
                        .collect(),
                )
            };
            let mut s_entries = Vec::new();
            let s: Vec<Vec<AffineExpr>> = (0..p)
                .map(|a| {
                    (0..m)
                        .map(|k| {
                            let id =
                                vars.push(format!("S_{}{}", a + 1, k + 1), VarKind::QsrMatrix("S", a, k));
                            s_entries.push(id);
                            AffineExpr::var(id)
                        })
                        .collect()
                })
                .collect();
            let mut r_upper = vec![vec![None; m]; m];
            let mut r_entries = Vec::new();
            for k in 0..m {
                for l in k..m {
                    let id = vars.push(format!("R_{}{}", k + 1, l + 1), VarKind::QsrMatrix("R", k, l));
                    r_entries.push(id);
                    r_upper[k][l] = Some(id);
                }
            }
            let r: Vec<Vec<AffineExpr>> = (0..m)
                .map(|k| {
                    (0..m)
                        .map(|l| AffineExpr::var(r_upper[k.min(l)][k.max(l)].unwrap()))
                        .collect()
                })
                .collect();
            let s_hat_var = vars.push("s_hat", VarKind::SHat);

            // R >= 0.
            let mut r_psd = SymMatBuilder::new(m);
            for k in 0..m {
                for l in k..m {
                    r_psd.set(k, l, r[k][l].scale(-1.0));
                }
            }
            // [[s_hat I, S], [S', s_hat I]] >= 0 encodes ||S||_2 <= s_hat.
            let dim = p + m;
            let mut spec = SymMatBuilder::new(dim);
            for a in 0..p {
                spec.set(a, a, AffineExpr::term(s_hat_var, -1.0));
            }
            for k in 0..m {
                spec.set(p + k, p + k, AffineExpr::term(s_hat_var, -1.0));
            }
            for a in 0..p {
                for k in 0..m {
                    spec.set(a, p + k, s[a][k].scale(-1.0));
                }
            }
            Ok(QsrParameterization {
                mode: QsrMode::FixedQsr { q: sym },
                m,
                p,
                q_inv,
                s,
                r,
                s_hat: AffineExpr::var(s_hat_var),
                objective: AffineExpr::zero(),
                side_linear: Vec::new(),
                side_blocks: vec![
                    r_psd.into_block("R >= 0"),
                    spec.into_block("||S||_2 <= s_hat"),
                ],
                alpha: None,
                beta: None,
                tau: None,
                s_entries,
                r_entries,
            })
        }
    }
}
