//! Assembly of the dissipativity LMI blocks as affine functions of the
//! decision variables.
//!
//! `assemble_m` builds the pointwise storage-function HJI matrix
//!
//! ```text
//! [ grad V' f     grad V' Gbar / 2 - h' S    h'      ]
//! [ *             -R - S' Jbar - Jbar' S     Jbar'   ]   <= 0,
//! [ *             *                          Q^-1    ]
//! ```
//!
//! with the Q block dropped for Q = 0 presets. `assemble_error_e` builds
//! the per-vertex Taylor-remainder inflation whose coupled rows Schur-encode
//! the quadratic bound terms, and `assemble_m_eps` builds the origin-ball
//! matrix for the quadratic storage piece. Decision variables enter only
//! affinely: the weighting matrices are represented through their inverse
//! diagonals `d_{z,k}` together with lower bounds `pi_min_z <= d_{z,k}`.

use nalgebra::DMatrix;

use crate::bounds::{OriginBallData, SimplexDerivativeBounds};
use crate::expr::{DynamicsModel, ExprError};

use super::qsr::QsrParameterization;
use super::vars::{
    AffineExpr, DecisionVariableMap, LmiBlock, SymMatBuilder, VarId, VarKind,
};

/// Inverse-weighting diagonals for the per-simplex error matrix.
pub struct CpaPiVars {
    /// Diagonal of Pi_1^-1, length m.
    pub d1: Vec<VarId>,
    pub pi_min1: VarId,
    /// Present only when the mode has a Q block.
    pub q_part: Option<CpaQPiVars>,
}

pub struct CpaQPiVars {
    /// Diagonals of Pi_2^-1 and Pi_3^-1, length p each.
    pub d2: Vec<VarId>,
    pub d3: Vec<VarId>,
    pub pi_min3: VarId,
}

impl CpaPiVars {
    pub fn register(vars: &mut DecisionVariableMap, m: usize, p: usize, with_q: bool) -> Self {
        let d1 = (0..m)
            .map(|k| vars.push(format!("pi1_inv_{}", k + 1), VarKind::PiInvDiag(1, k)))
            .collect();
        let pi_min1 = vars.push("pi_min1", VarKind::PiMin(1));
        let q_part = with_q.then(|| CpaQPiVars {
            d2: (0..p)
                .map(|a| vars.push(format!("pi2_inv_{}", a + 1), VarKind::PiInvDiag(2, a)))
                .collect(),
            d3: (0..p)
                .map(|a| vars.push(format!("pi3_inv_{}", a + 1), VarKind::PiInvDiag(3, a)))
                .collect(),
            pi_min3: vars.push("pi_min3", VarKind::PiMin(3)),
        });
        CpaPiVars { d1, pi_min1, q_part }
    }

    /// `pi_min <= d_k` couplings plus nonnegativity of the minima.
    pub fn coupling_constraints(&self) -> Vec<(AffineExpr, String)> {
        let mut out = Vec::new();
        for (k, d) in self.d1.iter().enumerate() {
            out.push((
                AffineExpr { constant: 0.0, terms: vec![(self.pi_min1, 1.0), (*d, -1.0)] },
                format!("pi_min1 <= pi1_inv_{}", k + 1),
            ));
        }
        out.push((
            AffineExpr { constant: 0.0, terms: vec![(self.pi_min1, -1.0)] },
            "pi_min1 >= 0".into(),
        ));
        if let Some(q) = &self.q_part {
            for (a, d) in q.d3.iter().enumerate() {
                out.push((
                    AffineExpr { constant: 0.0, terms: vec![(q.pi_min3, 1.0), (*d, -1.0)] },
                    format!("pi_min3 <= pi3_inv_{}", a + 1),
                ));
            }
            out.push((
                AffineExpr { constant: 0.0, terms: vec![(q.pi_min3, -1.0)] },
                "pi_min3 >= 0".into(),
            ));
        }
        out
    }
}

/// Inverse-weighting diagonals for the origin-ball matrix.
pub struct BallPiVars {
    /// Diagonals of Pi_4..Pi_6 inverses, length m each.
    pub d4: Vec<VarId>,
    pub d5: Vec<VarId>,
    pub d6: Vec<VarId>,
    pub pi_min4: VarId,
    pub pi_min5: VarId,
    pub pi_min6: VarId,
    pub q_part: Option<BallQPiVars>,
}

pub struct BallQPiVars {
    /// Diagonals of Pi_7..Pi_9 inverses, length p each.
    pub d7: Vec<VarId>,
    pub d8: Vec<VarId>,
    pub d9: Vec<VarId>,
    pub pi_min7: VarId,
    pub pi_min8: VarId,
    pub pi_min9: VarId,
}

impl BallPiVars {
    pub fn register(vars: &mut DecisionVariableMap, m: usize, p: usize, with_q: bool) -> Self {
        let mut diag = |z: usize, count: usize| -> Vec<VarId> {
            (0..count)
                .map(|k| vars.push(format!("pi{z}_inv_{}", k + 1), VarKind::PiInvDiag(z, k)))
                .collect()
        };
        let d4 = diag(4, m);
        let d5 = diag(5, m);
        let d6 = diag(6, m);
        let pi_min4 = vars.push("pi_min4", VarKind::PiMin(4));
        let pi_min5 = vars.push("pi_min5", VarKind::PiMin(5));
        let pi_min6 = vars.push("pi_min6", VarKind::PiMin(6));
        let q_part = with_q.then(|| {
            let d7 = (0..p)
                .map(|a| vars.push(format!("pi7_inv_{}", a + 1), VarKind::PiInvDiag(7, a)))
                .collect();
            let d8 = (0..p)
                .map(|a| vars.push(format!("pi8_inv_{}", a + 1), VarKind::PiInvDiag(8, a)))
                .collect();
            let d9 = (0..p)
                .map(|a| vars.push(format!("pi9_inv_{}", a + 1), VarKind::PiInvDiag(9, a)))
                .collect();
            BallQPiVars {
                d7,
                d8,
                d9,
                pi_min7: vars.push("pi_min7", VarKind::PiMin(7)),
                pi_min8: vars.push("pi_min8", VarKind::PiMin(8)),
                pi_min9: vars.push("pi_min9", VarKind::PiMin(9)),
            }
        });
        BallPiVars { d4, d5, d6, pi_min4, pi_min5, pi_min6, q_part }
    }

    pub fn coupling_constraints(&self) -> Vec<(AffineExpr, String)> {
        let mut out = Vec::new();
        let mut couple = |pi_min: VarId, ds: &[VarId], z: usize| {
            for (k, d) in ds.iter().enumerate() {
                out.push((
                    AffineExpr { constant: 0.0, terms: vec![(pi_min, 1.0), (*d, -1.0)] },
                    format!("pi_min{z} <= pi{z}_inv_{}", k + 1),
                ));
            }
            out.push((
                AffineExpr { constant: 0.0, terms: vec![(pi_min, -1.0)] },
                format!("pi_min{z} >= 0"),
            ));
        };
        couple(self.pi_min4, &self.d4, 4);
        couple(self.pi_min5, &self.d5, 5);
        couple(self.pi_min6, &self.d6, 6);
        if let Some(q) = &self.q_part {
            couple(q.pi_min7, &q.d7, 7);
            couple(q.pi_min8, &q.d8, 8);
            couple(q.pi_min9, &q.d9, 9);
        }
        out
    }
}

/// The symmetric quadratic-storage matrix P plus its spectral bound l_p.
pub struct QuadVars {
    n: usize,
    /// Upper-triangle entries, row-major (r <= c).
    entries: Vec<VarId>,
    pub l_p: VarId,
}

impl QuadVars {
    pub fn register(vars: &mut DecisionVariableMap, n: usize) -> Self {
        let mut entries = Vec::with_capacity(n * (n + 1) / 2);
        for r in 0..n {
            for c in r..n {
                entries.push(vars.push(format!("P_{}{}", r + 1, c + 1), VarKind::PEntry(r, c)));
            }
        }
        let l_p = vars.push("l_p", VarKind::LP);
        QuadVars { n, entries, l_p }
    }

    pub fn entry(&self, r: usize, c: usize) -> VarId {
        let (r, c) = (r.min(c), r.max(c));
        // Offset of row r in the packed upper triangle.
        let off = r * self.n - r * (r + 1) / 2 + r;
        self.entries[off + (c - r)]
    }

    pub fn expr(&self, r: usize, c: usize) -> AffineExpr {
        AffineExpr::var(self.entry(r, c))
    }

    pub fn matrix(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |r, c| y[self.entry(r, c).0])
    }

    /// delta I - P <= 0 (positive definiteness with the global slack).
    pub fn positivity_block(&self, delta: f64) -> LmiBlock {
        let mut b = SymMatBuilder::new(self.n);
        for r in 0..self.n {
            for c in r..self.n {
                let mut e = self.expr(r, c).scale(-1.0);
                if r == c {
                    e = e.add(&AffineExpr::constant(delta));
                }
                b.set(r, c, e);
            }
        }
        b.into_block("P >= delta I")
    }

    /// P - l_p I <= 0 (spectral-norm bound ||P||_2 <= l_p for P >= 0).
    pub fn norm_bound_block(&self) -> LmiBlock {
        let mut b = SymMatBuilder::new(self.n);
        for r in 0..self.n {
            for c in r..self.n {
                let mut e = self.expr(r, c);
                if r == c {
                    e = e.add(&AffineExpr::term(self.l_p, -1.0));
                }
                b.set(r, c, e);
            }
        }
        b.into_block("P <= l_p I")
    }
}

/// The pointwise HJI matrix at state `x` with the affine CPA gradient.
pub fn assemble_m(
    model: &DynamicsModel,
    qsr: &QsrParameterization,
    x: &[f64],
    grad: &[AffineExpr],
) -> Result<SymMatBuilder, ExprError> {
    let (n, m, p) = (model.n, model.m, model.p);
    assert_eq!(grad.len(), n);
    let f_x = model.eval_f(x)?;
    let gbar = model.eval_gbar(x)?;
    let h_x = model.eval_h(x)?;
    let jbar = model.eval_jbar(x)?;

    let dim = qsr.hji_dim();
    let mut b = SymMatBuilder::new(dim);

    // (0,0): grad V' f.
    let mut e00 = AffineExpr::zero();
    for q in 0..n {
        e00.add_assign(&grad[q].scale(f_x[q]));
    }
    b.set(0, 0, e00);

    // (0, 1+k): grad V' Gbar / 2 - h' S.
    for k in 0..m {
        let mut e = AffineExpr::zero();
        for q in 0..n {
            e.add_assign(&grad[q].scale(0.5 * gbar[(q, k)]));
        }
        for a in 0..p {
            e.add_assign(&qsr.s[a][k].scale(-h_x[a]));
        }
        b.set(0, 1 + k, e);
    }

    // (1+k, 1+l): -R - S' Jbar - Jbar' S.
    for k in 0..m {
        for l in k..m {
            let mut e = qsr.r[k][l].scale(-1.0);
            for a in 0..p {
                e.add_assign(&qsr.s[a][k].scale(-jbar[(a, l)]));
                e.add_assign(&qsr.s[a][l].scale(-jbar[(a, k)]));
            }
            b.set(1 + k, 1 + l, e);
        }
    }

    if let Some(q_inv) = &qsr.q_inv {
        let off = 1 + m;
        for a in 0..p {
            b.set(0, off + a, AffineExpr::constant(h_x[a]));
            for k in 0..m {
                b.set(1 + k, off + a, AffineExpr::constant(jbar[(a, k)]));
            }
            for a2 in a..p {
                b.add(off + a, off + a2, &q_inv[a][a2]);
            }
        }
    }
    Ok(b)
}

/// Row offsets of the error matrix, so tests and the combined constraint
/// agree on the layout.
pub fn error_matrix_dim(m: usize, p: usize, reduced: bool) -> usize {
    if reduced {
        1 + m + p + m
    } else {
        1 + m + p + p + m + p + m
    }
}

/// The Taylor-remainder inflation at one non-origin vertex with remainder
/// scale `c_j`. Affine in `l_i`, `s_hat`, and the inverse-weighting
/// diagonals.
pub fn assemble_error_e(
    bounds: &SimplexDerivativeBounds,
    c_j: f64,
    n: usize,
    l_i: VarId,
    s_hat: &AffineExpr,
    pis: &CpaPiVars,
    qsr: &QsrParameterization,
) -> SymMatBuilder {
    let (m, p) = (qsr.m, qsr.p);
    let reduced = qsr.is_reduced();
    assert_eq!(pis.q_part.is_some(), !reduced, "Pi groups must match the mode");
    let nf = n as f64;
    let spm = ((p * m) as f64).sqrt();
    let dim = error_matrix_dim(m, p, reduced);
    let mut e = SymMatBuilder::new(dim);

    // (0,0): n/2 * l_i * beta * c_j.
    e.set(0, 0, AffineExpr::term(l_i, 0.5 * nf * bounds.beta * c_j));

    // R block: (Pi_1^-1 + s_hat n sqrt(pm) theta c I) / 2.
    for k in 0..m {
        let mut diag = AffineExpr::term(pis.d1[k], 0.5);
        diag.add_assign(&s_hat.scale(0.5 * nf * spm * bounds.theta * c_j));
        e.set(1 + k, 1 + k, diag);
    }

    // Couplings to the first column: s_hat * h_hat and l_i * G_hat.
    let (r4, r5) = if reduced {
        (1 + m, 1 + m + p)
    } else {
        (1 + m + p, 1 + m + p + p)
    };
    for a in 0..p {
        e.set(r4 + a, 0, s_hat.scale(nf * bounds.rho[a] * c_j));
        e.set(r4 + a, r4 + a, AffineExpr::term(pis.pi_min1, -2.0));
    }
    for k in 0..m {
        e.set(r5 + k, 0, AffineExpr::term(l_i, nf * bounds.mu[k] * c_j));
        e.set(r5 + k, r5 + k, AffineExpr::term(pis.pi_min1, -4.0));
    }

    if let Some(q) = &pis.q_part {
        // Q block: (Pi_2^-1 + Pi_3^-1) / 2.
        for a in 0..p {
            let diag = AffineExpr {
                constant: 0.0,
                terms: vec![(q.d2[a], 0.5), (q.d3[a], 0.5)],
            };
            e.set(1 + m + a, 1 + m + a, diag);
        }
        let r6 = 1 + m + p + p + m;
        let r7 = r6 + p;
        for a in 0..p {
            e.set(r6 + a, 0, AffineExpr::constant(nf * bounds.rho[a] * c_j));
            e.set(r6 + a, r6 + a, AffineExpr::term(q.d2[a], -2.0));
        }
        for k in 0..m {
            e.set(r7 + k, 1 + k, AffineExpr::constant(nf * spm * bounds.theta * c_j));
            e.set(r7 + k, r7 + k, AffineExpr::term(q.pi_min3, -2.0));
        }
    }
    e
}

/// The combined vertex constraint `M(x_j) + E(x_j) + delta I <= 0`.
pub fn assemble_vertex_constraint(
    model: &DynamicsModel,
    qsr: &QsrParameterization,
    x: &[f64],
    grad: &[AffineExpr],
    bounds: &SimplexDerivativeBounds,
    c_j: f64,
    l_i: VarId,
    pis: &CpaPiVars,
    delta: f64,
    label: String,
) -> Result<LmiBlock, ExprError> {
    let m_part = assemble_m(model, qsr, x, grad)?;
    let mut e = assemble_error_e(bounds, c_j, model.n, l_i, &qsr.s_hat, pis, qsr);
    e.embed(0, 0, &m_part);
    for i in 0..e.dim() {
        let shifted = e.get(i, i).add(&AffineExpr::constant(delta));
        e.set(i, i, shifted);
    }
    Ok(e.into_block(label))
}

/// The origin-ball matrix for the quadratic storage piece, affine in
/// {P, l_p, s_hat, QSR scalars, inverse-weighting diagonals}.
pub fn assemble_m_eps(
    model: &DynamicsModel,
    qsr: &QsrParameterization,
    ball: &OriginBallData,
    quad: &QuadVars,
    pis: &BallPiVars,
    delta: f64,
) -> LmiBlock {
    let (n, m, p) = (model.n, model.m, model.p);
    let reduced = qsr.is_reduced();
    assert_eq!(pis.q_part.is_some(), !reduced, "Pi groups must match the mode");
    let eps = ball.epsilon;
    let nf = n as f64;
    let nf32 = nf.powf(1.5);
    let sqp = (p as f64).sqrt();
    let sqm = (m as f64).sqrt();
    let smp = ((m * p) as f64).sqrt();
    // sqrt(sum_k ||J_{g_k}(0)||^2) and the feedthrough analogue.
    let jg_norm = ball
        .j_g
        .iter()
        .map(|j| spectral_norm(j).powi(2))
        .sum::<f64>()
        .sqrt();
    let jj_norm = ball
        .j_j
        .iter()
        .map(|j| spectral_norm(j).powi(2))
        .sum::<f64>()
        .sqrt();

    let dim = if reduced { 4 * n + m } else { 5 * n + 3 * m + p };
    let mut b = SymMatBuilder::new(dim);

    // Xi_1 = P J_f + J_f' P + l_p n^{3/2} beta_eps eps I.
    for r in 0..n {
        for c in r..n {
            let mut e = AffineExpr::zero();
            for k in 0..n {
                e.add_assign(&quad.expr(r, k).scale(ball.j_f[(k, c)]));
                e.add_assign(&quad.expr(k, c).scale(ball.j_f[(k, r)]));
            }
            if r == c {
                e.add_assign(&AffineExpr::term(quad.l_p, nf32 * ball.beta_eps * eps));
            }
            b.set(r, c, e);
        }
    }

    // (2,1) block: B' P - S' J_h.
    for k in 0..m {
        for c in 0..n {
            let mut e = AffineExpr::zero();
            for r in 0..n {
                e.add_assign(&quad.expr(r, c).scale(model.b[(r, k)]));
            }
            for a in 0..p {
                e.add_assign(&qsr.s[a][k].scale(-ball.j_h[(a, c)]));
            }
            b.set(n + k, c, e);
        }
    }

    // Xi_2 = -R - S'D - D'S + Pi_4^-1 + (Pi_5^-1 + Pi_6^-1)/2
    //        + (2 s_hat eps jj_norm + s_hat sqrt(mp) n eps^2 theta_eps) I.
    for k in 0..m {
        for l in k..m {
            let mut e = qsr.r[k][l].scale(-1.0);
            for a in 0..p {
                e.add_assign(&qsr.s[a][k].scale(-model.d[(a, l)]));
                e.add_assign(&qsr.s[a][l].scale(-model.d[(a, k)]));
            }
            if k == l {
                e.add_assign(&AffineExpr::var(pis.d4[k]));
                e.add_assign(&AffineExpr::term(pis.d5[k], 0.5));
                e.add_assign(&AffineExpr::term(pis.d6[k], 0.5));
                e.add_assign(
                    &qsr.s_hat
                        .scale(2.0 * eps * jj_norm + smp * nf * eps * eps * ball.theta_eps),
                );
            }
            b.set(n + k, n + l, e);
        }
    }

    let mut row = n + m;
    if let Some(q_inv) = &qsr.q_inv {
        let qpis = pis.q_part.as_ref().unwrap();
        // (3,1) = J_h, (3,2) = D, Xi_3 = Q^-1 + (Pi_7^-1 + Pi_9^-1)/2 + Pi_8^-1.
        for a in 0..p {
            for c in 0..n {
                b.set(row + a, c, AffineExpr::constant(ball.j_h[(a, c)]));
            }
            for k in 0..m {
                b.set(row + a, n + k, AffineExpr::constant(model.d[(a, k)]));
            }
            for a2 in a..p {
                b.add(row + a, row + a2, &q_inv[a][a2]);
            }
            let diag = AffineExpr {
                constant: 0.0,
                terms: vec![(qpis.d7[a], 0.5), (qpis.d8[a], 1.0), (qpis.d9[a], 0.5)],
            };
            b.add(row + a, row + a, &diag);
        }
        row += p;
    }

    // Schur rows for the P-coupled bound terms.
    for r in 0..n {
        b.set(row + r, r, AffineExpr::term(quad.l_p, eps * jg_norm));
        b.set(row + r, row + r, AffineExpr::term(pis.pi_min4, -1.0));
    }
    row += n;
    for r in 0..n {
        b.set(row + r, r, qsr.s_hat.scale(eps * nf * sqp * ball.rho_eps));
        b.set(row + r, row + r, AffineExpr::term(pis.pi_min5, -2.0));
    }
    row += n;
    for r in 0..n {
        b.set(
            row + r,
            r,
            AffineExpr::term(quad.l_p, sqm * nf32 * eps * eps * ball.mu_eps),
        );
        b.set(row + r, row + r, AffineExpr::term(pis.pi_min6, -2.0));
    }
    row += n;
    if let Some(qpis) = &pis.q_part {
        for r in 0..n {
            b.set(row + r, r, AffineExpr::constant(eps * nf * sqp * ball.rho_eps));
            b.set(row + r, row + r, AffineExpr::term(qpis.pi_min7, -2.0));
        }
        row += n;
        for k in 0..m {
            b.set(row + k, n + k, AffineExpr::constant(eps * jj_norm));
            b.set(row + k, row + k, AffineExpr::term(qpis.pi_min8, -1.0));
        }
        row += m;
        for k in 0..m {
            b.set(
                row + k,
                n + k,
                AffineExpr::constant(smp * nf * eps * eps * ball.theta_eps),
            );
            b.set(row + k, row + k, AffineExpr::term(qpis.pi_min9, -2.0));
        }
        row += m;
    }
    debug_assert_eq!(row, dim);

    for i in 0..dim {
        let shifted = b.get(i, i).add(&AffineExpr::constant(delta));
        b.set(i, i, shifted);
    }
    b.into_block("origin-ball HJI")
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.amax() == 0.0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    gram.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}
