//! Decision variables, scalar affine expressions, and affine matrix blocks.

use nalgebra::DMatrix;

/// Index into the decision-variable registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// What a registered variable means; used for certificate extraction and
/// diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    /// Storage value at a triangulation vertex.
    VertexValue(usize),
    /// Gradient one-norm bound l_i of a simplex.
    GradBound(usize),
    /// Spectral-norm bound on S.
    SHat,
    /// Entry (r, c), r <= c, of the symmetric quadratic-storage matrix P.
    PEntry(usize, usize),
    /// Spectral-norm bound on P.
    LP,
    /// Diagonal entry k of the inverse weighting matrix of group z.
    PiInvDiag(usize, usize),
    /// Lower bound on the diagonal of the inverse weighting matrix of group z.
    PiMin(usize),
    /// Supply-rate scalar (alpha, beta, or a reparameterization).
    Qsr(&'static str),
    /// Entry of a full variable S or R matrix in the fixed-QSR mode.
    QsrMatrix(&'static str, usize, usize),
    /// Objective epigraph auxiliary.
    Epigraph,
    /// Auxiliary for the high-dimension gradient-norm encoding.
    GradAux(usize, usize),
}

/// Registry of decision variables. Append-only during a single-threaded
/// registration phase, then frozen and treated as read-only.
#[derive(Debug, Clone, Default)]
pub struct DecisionVariableMap {
    kinds: Vec<VarKind>,
    names: Vec<String>,
}

impl DecisionVariableMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        self.kinds.push(kind);
        self.names.push(name.into());
        VarId(self.kinds.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: VarId) -> &VarKind {
        &self.kinds[id.0]
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Scalar affine function of the decision variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    /// Sorted by variable id, no duplicates, no zero coefficients.
    pub terms: Vec<(VarId, f64)>,
}

impl AffineExpr {
    pub fn zero() -> Self {
        AffineExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        AffineExpr { constant: c, terms: Vec::new() }
    }

    pub fn var(id: VarId) -> Self {
        AffineExpr { constant: 0.0, terms: vec![(id, 1.0)] }
    }

    pub fn term(id: VarId, coeff: f64) -> Self {
        if coeff == 0.0 {
            AffineExpr::zero()
        } else {
            AffineExpr { constant: 0.0, terms: vec![(id, coeff)] }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return AffineExpr::zero();
        }
        AffineExpr {
            constant: self.constant * s,
            terms: self.terms.iter().map(|&(id, c)| (id, c * s)).collect(),
        }
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        let mut out = AffineExpr {
            constant: self.constant + other.constant,
            terms: Vec::with_capacity(self.terms.len() + other.terms.len()),
        };
        let (mut a, mut b) = (self.terms.iter().peekable(), other.terms.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&(ia, ca)), Some(&&(ib, cb))) => {
                    if ia < ib {
                        out.terms.push((ia, ca));
                        a.next();
                    } else if ib < ia {
                        out.terms.push((ib, cb));
                        b.next();
                    } else {
                        let c = ca + cb;
                        if c != 0.0 {
                            out.terms.push((ia, c));
                        }
                        a.next();
                        b.next();
                    }
                }
                (Some(&&t), None) => {
                    out.terms.push(t);
                    a.next();
                }
                (None, Some(&&t)) => {
                    out.terms.push(t);
                    b.next();
                }
                (None, None) => break,
            }
        }
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn add_assign(&mut self, other: &AffineExpr) {
        *self = self.add(other);
    }

    /// Evaluate at a variable assignment.
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(id, c)| c * y[id.0]).sum::<f64>()
    }
}

/// A symmetric matrix constraint `F0 + sum_i y_i F_i <= 0` (negative
/// semidefinite sense).
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub dim: usize,
    pub f0: DMatrix<f64>,
    /// Sorted by variable id; every coefficient matrix is symmetric.
    pub coeffs: Vec<(VarId, DMatrix<f64>)>,
    pub label: String,
}

impl LmiBlock {
    /// The numeric matrix at a variable assignment.
    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (id, f) in &self.coeffs {
            m += f * y[id.0];
        }
        m
    }

    /// Scalar constraint `expr <= 0` as a 1x1 block.
    pub fn scalar(expr: &AffineExpr, label: impl Into<String>) -> Self {
        LmiBlock {
            dim: 1,
            f0: DMatrix::from_element(1, 1, expr.constant),
            coeffs: expr
                .terms
                .iter()
                .map(|&(id, c)| (id, DMatrix::from_element(1, 1, c)))
                .collect(),
            label: label.into(),
        }
    }
}

/// Builder for a symmetric matrix of affine entries.
#[derive(Debug, Clone)]
pub struct SymMatBuilder {
    dim: usize,
    entries: Vec<AffineExpr>,
}

impl SymMatBuilder {
    pub fn new(dim: usize) -> Self {
        SymMatBuilder { dim, entries: vec![AffineExpr::zero(); dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sets entry (r, c) and its mirror.
    pub fn set(&mut self, r: usize, c: usize, e: AffineExpr) {
        self.entries[r * self.dim + c] = e.clone();
        if r != c {
            self.entries[c * self.dim + r] = e;
        }
    }

    pub fn add(&mut self, r: usize, c: usize, e: &AffineExpr) {
        let cur = self.entries[r * self.dim + c].add(e);
        self.set(r, c, cur);
    }

    pub fn get(&self, r: usize, c: usize) -> &AffineExpr {
        &self.entries[r * self.dim + c]
    }

    /// Copies `other` into the top-left corner at offset (r0, c0).
    pub fn embed(&mut self, r0: usize, c0: usize, other: &SymMatBuilder) {
        for r in 0..other.dim {
            for c in 0..other.dim {
                if r0 + r <= c0 + c {
                    let cur = self.entries[(r0 + r) * self.dim + (c0 + c)]
                        .add(other.get(r, c));
                    self.set(r0 + r, c0 + c, cur);
                }
            }
        }
    }

    /// Finalizes into a block, splitting the affine entries into a constant
    /// matrix plus one symmetric coefficient matrix per variable.
    pub fn into_block(self, label: impl Into<String>) -> LmiBlock {
        let dim = self.dim;
        let mut f0 = DMatrix::zeros(dim, dim);
        let mut per_var: std::collections::BTreeMap<VarId, DMatrix<f64>> =
            std::collections::BTreeMap::new();
        for r in 0..dim {
            for c in 0..dim {
                let e = &self.entries[r * dim + c];
                f0[(r, c)] = e.constant;
                for &(id, coeff) in &e.terms {
                    per_var
                        .entry(id)
                        .or_insert_with(|| DMatrix::zeros(dim, dim))[(r, c)] = coeff;
                }
            }
        }
        let block = LmiBlock {
            dim,
            f0,
            coeffs: per_var.into_iter().collect(),
            label: label.into(),
        };
        debug_assert!(block_is_symmetric(&block, 1e-14));
        block
    }
}

pub(crate) fn block_is_symmetric(b: &LmiBlock, tol: f64) -> bool {
    let sym = |m: &DMatrix<f64>| -> bool {
        let scale = m.amax().max(1.0);
        (m - m.transpose()).amax() <= tol * scale
    };
    sym(&b.f0) && b.coeffs.iter().all(|(_, f)| sym(f))
}
