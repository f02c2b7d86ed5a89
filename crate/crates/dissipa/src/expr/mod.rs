//! A small expression language for scalar fields of the state.
//!
//! Expressions are immutable trees over state variables `x1..xn`, decimal
//! literals, `+ - * /`, integer powers and the unary functions
//! `sin cos exp tanh`. They support exact symbolic differentiation (applied
//! twice for Hessians) and interval-arithmetic range bounding, which together
//! produce the second-derivative constants that inflate the vertex LMIs.
//!
//! All values are immutable after construction and safe to share across
//! threads.

mod interval;
mod parser;

pub use interval::Interval;
pub use parser::parse_expression;

use std::fmt;
use std::sync::Arc;

/// Axis-aligned box `[lo_1,hi_1] x ... x [lo_n,hi_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal length");
        assert!(
            lo.iter().zip(&hi).all(|(a, b)| a <= b),
            "box lower bounds must not exceed upper bounds"
        );
        BoxRegion { lo, hi }
    }

    /// Cube `[-r, r]^n`, the bounding box of the two-norm ball of radius `r`.
    pub fn centered_cube(n: usize, r: f64) -> Self {
        BoxRegion::new(vec![-r; n], vec![r; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }

    pub fn axis(&self, k: usize) -> Interval {
        Interval::new(self.lo[k], self.hi[k])
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Const(f64),
    /// 0-based state variable index; surface syntax is 1-based (`x1`).
    Var(usize),
    Neg(Arc<Node>),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    /// Integer power with non-negative exponent.
    Pow(Arc<Node>, u32),
    Sin(Arc<Node>),
    Cos(Arc<Node>),
    Exp(Arc<Node>),
    Tanh(Arc<Node>),
}

/// An immutable scalar expression over `n` state variables.
#[derive(Clone, PartialEq)]
pub struct Expression {
    pub(crate) node: Arc<Node>,
    n: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable x{index} exceeds declared dimension n = {n}")]
    VariableOutOfRange { index: usize, n: usize },
    #[error("division by zero while evaluating expression")]
    DivisionByZero,
    #[error("denominator interval [{lo}, {hi}] contains zero; division rejected")]
    DenominatorContainsZero { lo: f64, hi: f64 },
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({}, n={})", self, self.n)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn rec(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match node {
                Node::Const(c) => write!(f, "{c}"),
                Node::Var(i) => write!(f, "x{}", i + 1),
                Node::Neg(a) => {
                    write!(f, "(-")?;
                    rec(a, f)?;
                    write!(f, ")")
                }
                Node::Add(a, b) => bin(f, a, "+", b),
                Node::Sub(a, b) => bin(f, a, "-", b),
                Node::Mul(a, b) => bin(f, a, "*", b),
                Node::Div(a, b) => bin(f, a, "/", b),
                Node::Pow(a, k) => {
                    write!(f, "(")?;
                    rec(a, f)?;
                    write!(f, "^{k})")
                }
                Node::Sin(a) => un(f, "sin", a),
                Node::Cos(a) => un(f, "cos", a),
                Node::Exp(a) => un(f, "exp", a),
                Node::Tanh(a) => un(f, "tanh", a),
            }
        }
        fn bin(f: &mut fmt::Formatter<'_>, a: &Node, op: &str, b: &Node) -> fmt::Result {
            write!(f, "(")?;
            rec(a, f)?;
            write!(f, " {op} ")?;
            rec(b, f)?;
            write!(f, ")")
        }
        fn un(f: &mut fmt::Formatter<'_>, name: &str, a: &Node) -> fmt::Result {
            write!(f, "{name}(")?;
            rec(a, f)?;
            write!(f, ")")
        }
        rec(&self.node, f)
    }
}

impl Expression {
    pub(crate) fn from_node(node: Arc<Node>, n: usize) -> Self {
        Expression { node, n }
    }

    /// Constant expression over `n` variables.
    pub fn constant(c: f64, n: usize) -> Self {
        Expression::from_node(Arc::new(Node::Const(c)), n)
    }

    /// Number of state variables the expression is declared over.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Structural zero test after constant folding (sufficient, not complete).
    pub fn is_zero(&self) -> bool {
        matches!(&*self.node, Node::Const(c) if *c == 0.0)
    }

    /// Exact arithmetic evaluation of the tree at a point.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ExprError> {
        assert_eq!(x.len(), self.n, "point dimension mismatch");
        eval_node(&self.node, x)
    }

    /// Symbolically exact partial derivative with respect to `x{i}` (1-based).
    ///
    /// Applying the operation twice yields second partials.
    pub fn differentiate(&self, i: usize) -> Expression {
        assert!(i >= 1 && i <= self.n, "variable index out of range");
        let d = diff_node(&self.node, i - 1);
        Expression::from_node(simplify(d), self.n)
    }

    /// An interval containing `{ e(x) : x in box }`.
    pub fn interval_range(&self, region: &BoxRegion) -> Result<Interval, ExprError> {
        assert_eq!(region.dim(), self.n, "box dimension mismatch");
        range_node(&self.node, region)
    }

    /// A value `>= max_{q,r} max_{xi in box} |d^2 e / dx_q dx_r|`, obtained by
    /// interval-bounding every symbolic second partial over the box.
    pub fn second_derivative_sup(&self, region: &BoxRegion) -> Result<f64, ExprError> {
        let table = SecondPartials::new(self);
        table.sup_abs(region)
    }

    /// True if any subtree is a division node.
    pub fn has_division(&self) -> bool {
        fn rec(node: &Node) -> bool {
            match node {
                Node::Const(_) | Node::Var(_) => false,
                Node::Div(_, _) => true,
                Node::Neg(a)
                | Node::Pow(a, _)
                | Node::Sin(a)
                | Node::Cos(a)
                | Node::Exp(a)
                | Node::Tanh(a) => rec(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => rec(a) || rec(b),
            }
        }
        rec(&self.node)
    }
}

fn eval_node(node: &Node, x: &[f64]) -> Result<f64, ExprError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval_node(a, x)?,
        Node::Add(a, b) => eval_node(a, x)? + eval_node(b, x)?,
        Node::Sub(a, b) => eval_node(a, x)? - eval_node(b, x)?,
        Node::Mul(a, b) => eval_node(a, x)? * eval_node(b, x)?,
        Node::Div(a, b) => {
            let den = eval_node(b, x)?;
            if den == 0.0 {
                return Err(ExprError::DivisionByZero);
            }
            eval_node(a, x)? / den
        }
        Node::Pow(a, k) => eval_node(a, x)?.powi(*k as i32),
        Node::Sin(a) => eval_node(a, x)?.sin(),
        Node::Cos(a) => eval_node(a, x)?.cos(),
        Node::Exp(a) => eval_node(a, x)?.exp(),
        Node::Tanh(a) => eval_node(a, x)?.tanh(),
    })
}

fn range_node(node: &Node, region: &BoxRegion) -> Result<Interval, ExprError> {
    Ok(match node {
        Node::Const(c) => Interval::point(*c),
        Node::Var(i) => region.axis(*i),
        Node::Neg(a) => range_node(a, region)?.neg(),
        Node::Add(a, b) => range_node(a, region)?.add(range_node(b, region)?),
        Node::Sub(a, b) => range_node(a, region)?.sub(range_node(b, region)?),
        Node::Mul(a, b) => range_node(a, region)?.mul(range_node(b, region)?),
        Node::Div(a, b) => {
            let den = range_node(b, region)?;
            if den.contains(0.0) {
                return Err(ExprError::DenominatorContainsZero {
                    lo: den.lo,
                    hi: den.hi,
                });
            }
            range_node(a, region)?.div(den)
        }
        Node::Pow(a, k) => range_node(a, region)?.powi(*k),
        Node::Sin(a) => range_node(a, region)?.sin(),
        Node::Cos(a) => range_node(a, region)?.cos(),
        Node::Exp(a) => range_node(a, region)?.exp(),
        Node::Tanh(a) => range_node(a, region)?.tanh(),
    })
}

fn diff_node(node: &Node, v: usize) -> Arc<Node> {
    use Node::*;
    match node {
        Const(_) => Arc::new(Const(0.0)),
        Var(i) => Arc::new(Const(if *i == v { 1.0 } else { 0.0 })),
        Neg(a) => Arc::new(Neg(diff_node(a, v))),
        Add(a, b) => Arc::new(Add(diff_node(a, v), diff_node(b, v))),
        Sub(a, b) => Arc::new(Sub(diff_node(a, v), diff_node(b, v))),
        Mul(a, b) => Arc::new(Add(
            Arc::new(Mul(diff_node(a, v), b.clone())),
            Arc::new(Mul(a.clone(), diff_node(b, v))),
        )),
        // (a/b)' = a'/b - a b' / b^2
        Div(a, b) => Arc::new(Sub(
            Arc::new(Div(diff_node(a, v), b.clone())),
            Arc::new(Div(
                Arc::new(Mul(a.clone(), diff_node(b, v))),
                Arc::new(Pow(b.clone(), 2)),
            )),
        )),
        Pow(a, k) => match *k {
            0 => Arc::new(Const(0.0)),
            1 => diff_node(a, v),
            k => Arc::new(Mul(
                Arc::new(Mul(Arc::new(Const(k as f64)), Arc::new(Pow(a.clone(), k - 1)))),
                diff_node(a, v),
            )),
        },
        Sin(a) => Arc::new(Mul(Arc::new(Cos(a.clone())), diff_node(a, v))),
        Cos(a) => Arc::new(Neg(Arc::new(Mul(Arc::new(Sin(a.clone())), diff_node(a, v))))),
        Exp(a) => Arc::new(Mul(Arc::new(Exp(a.clone())), diff_node(a, v))),
        // tanh' = 1 - tanh^2
        Tanh(a) => Arc::new(Mul(
            Arc::new(Sub(
                Arc::new(Const(1.0)),
                Arc::new(Pow(Arc::new(Tanh(a.clone())), 2)),
            )),
            diff_node(a, v),
        )),
    }
}

/// Constant folding and identity elimination; keeps derivative trees compact.
pub(crate) fn simplify(node: Arc<Node>) -> Arc<Node> {
    use Node::*;
    let out = match &*node {
        Const(_) | Var(_) => return node,
        Neg(a) => {
            let a = simplify(a.clone());
            match &*a {
                Const(c) => Const(-c),
                Neg(inner) => return inner.clone(),
                _ => Neg(a),
            }
        }
        Add(a, b) => {
            let (a, b) = (simplify(a.clone()), simplify(b.clone()));
            match (&*a, &*b) {
                (Const(x), Const(y)) => Const(x + y),
                (Const(z), _) if *z == 0.0 => return b,
                (_, Const(z)) if *z == 0.0 => return a,
                _ => Add(a, b),
            }
        }
        Sub(a, b) => {
            let (a, b) = (simplify(a.clone()), simplify(b.clone()));
            match (&*a, &*b) {
                (Const(x), Const(y)) => Const(x - y),
                (_, Const(z)) if *z == 0.0 => return a,
                (Const(z), _) if *z == 0.0 => Neg(b),
                _ => Sub(a, b),
            }
        }
        Mul(a, b) => {
            let (a, b) = (simplify(a.clone()), simplify(b.clone()));
            match (&*a, &*b) {
                (Const(x), Const(y)) => Const(x * y),
                (Const(z), _) | (_, Const(z)) if *z == 0.0 => Const(0.0),
                (Const(o), _) if *o == 1.0 => return b,
                (_, Const(o)) if *o == 1.0 => return a,
                _ => Mul(a, b),
            }
        }
        Div(a, b) => {
            let (a, b) = (simplify(a.clone()), simplify(b.clone()));
            match (&*a, &*b) {
                (Const(z), _) if *z == 0.0 => Const(0.0),
                (_, Const(o)) if *o == 1.0 => return a,
                _ => Div(a, b),
            }
        }
        Pow(a, k) => {
            let a = simplify(a.clone());
            match (&*a, *k) {
                (_, 0) => Const(1.0),
                (_, 1) => return a,
                (Const(c), k) => Const(c.powi(k as i32)),
                _ => Pow(a, *k),
            }
        }
        Sin(a) => {
            let a = simplify(a.clone());
            match &*a {
                Const(c) => Const(c.sin()),
                _ => Sin(a),
            }
        }
        Cos(a) => {
            let a = simplify(a.clone());
            match &*a {
                Const(c) => Const(c.cos()),
                _ => Cos(a),
            }
        }
        Exp(a) => {
            let a = simplify(a.clone());
            match &*a {
                Const(c) => Const(c.exp()),
                _ => Exp(a),
            }
        }
        Tanh(a) => {
            let a = simplify(a.clone());
            match &*a {
                Const(c) => Const(c.tanh()),
                _ => Tanh(a),
            }
        }
    };
    Arc::new(out)
}

/// Precomputed symbolic second partials of one expression.
///
/// `exprs[q][r]` holds `d^2 e / dx_{q+1} dx_{r+1}`; only the lower triangle is
/// stored since mixed partials commute for the C^2 trees admitted here.
pub struct SecondPartials {
    n: usize,
    exprs: Vec<Vec<Expression>>,
}

impl SecondPartials {
    pub fn new(e: &Expression) -> Self {
        let n = e.dim();
        let firsts: Vec<Expression> = (1..=n).map(|q| e.differentiate(q)).collect();
        let exprs = (1..=n)
            .map(|q| (1..=q).map(|r| firsts[q - 1].differentiate(r)).collect())
            .collect();
        SecondPartials { n, exprs }
    }

    /// Interval-certified bound on `max_{q,r} sup_box |d^2 e|`.
    pub fn sup_abs(&self, region: &BoxRegion) -> Result<f64, ExprError> {
        let mut worst = 0.0f64;
        for q in 0..self.n {
            for r in 0..=q {
                let iv = self.exprs[q][r].interval_range(region)?;
                worst = worst.max(iv.abs_sup());
            }
        }
        Ok(worst)
    }

    /// Non-rigorous grid-sampled bound with a 1.1 safety factor; used only
    /// when interval bounds blow up and results are then flagged uncertified.
    pub fn sup_abs_sampled(&self, region: &BoxRegion, grid: usize) -> Result<f64, ExprError> {
        let mut worst = 0.0f64;
        let mut x = vec![0.0; self.n];
        let total = grid.pow(self.n as u32);
        for flat in 0..total {
            let mut rest = flat;
            for k in 0..self.n {
                let idx = rest % grid;
                rest /= grid;
                let t = if grid == 1 { 0.5 } else { idx as f64 / (grid - 1) as f64 };
                x[k] = region.lo[k] + t * (region.hi[k] - region.lo[k]);
            }
            for q in 0..self.n {
                for r in 0..=q {
                    worst = worst.max(self.exprs[q][r].evaluate(&x)?.abs());
                }
            }
        }
        Ok(worst * 1.1)
    }
}

/// How derivative-bound constants are obtained.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Rigorous interval arithmetic on the simplex bounding box.
    Interval,
    /// Grid sampling with a 1.1 safety factor; results are not certified.
    Sampled { grid: usize },
}

impl Default for BoundMode {
    fn default() -> Self {
        BoundMode::Interval
    }
}

/// The control-affine model of the governing dynamics:
/// `x' = f(x) + (B + G(x)) u`, `y = h(x) + (D + J(x)) u`.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// n drift expressions.
    pub f: Vec<Expression>,
    /// n x m input-gain expressions (row-major: `g[i][k]`).
    pub g: Vec<Vec<Expression>>,
    /// p output expressions.
    pub h: Vec<Expression>,
    /// p x m feedthrough expressions (row-major: `j[a][k]`).
    pub j: Vec<Vec<Expression>>,
    /// n x m constant input matrix.
    pub b: nalgebra::DMatrix<f64>,
    /// p x m constant feedthrough matrix.
    pub d: nalgebra::DMatrix<f64>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch in field {field}: expected {expected}, got {got}")]
    Shape {
        field: &'static str,
        expected: String,
        got: String,
    },
    #[error("{field} must vanish at the origin (|value| = {value:.3e} > 1e-12)")]
    NonzeroAtOrigin { field: String, value: f64 },
    #[error("expression error in {field}: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
}

impl DynamicsModel {
    /// Builds and validates a model. The nonlinear fields must vanish at the
    /// origin (checked numerically at tolerance 1e-12).
    pub fn new(
        n: usize,
        m: usize,
        p: usize,
        f: Vec<Expression>,
        g: Vec<Vec<Expression>>,
        h: Vec<Expression>,
        j: Vec<Vec<Expression>>,
        b: nalgebra::DMatrix<f64>,
        d: nalgebra::DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let shape = |field: &'static str, expected: String, got: String| ModelError::Shape {
            field,
            expected,
            got,
        };
        if f.len() != n {
            return Err(shape("f", format!("{n}"), format!("{}", f.len())));
        }
        if g.len() != n || g.iter().any(|row| row.len() != m) {
            return Err(shape("G", format!("{n}x{m}"), format!("{}x?", g.len())));
        }
        if h.len() != p {
            return Err(shape("h", format!("{p}"), format!("{}", h.len())));
        }
        if j.len() != p || j.iter().any(|row| row.len() != m) {
            return Err(shape("J", format!("{p}x{m}"), format!("{}x?", j.len())));
        }
        if b.nrows() != n || b.ncols() != m {
            return Err(shape("B", format!("{n}x{m}"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if d.nrows() != p || d.ncols() != m {
            return Err(shape("D", format!("{p}x{m}"), format!("{}x{}", d.nrows(), d.ncols())));
        }
        let model = DynamicsModel { n, m, p, f, g, h, j, b, d };
        model.check_zero_at_origin()?;
        Ok(model)
    }

    fn check_zero_at_origin(&self) -> Result<(), ModelError> {
        let zero = vec![0.0; self.n];
        let check = |name: String, e: &Expression| -> Result<(), ModelError> {
            let v = e
                .evaluate(&zero)
                .map_err(|source| ModelError::Expr { field: name.clone(), source })?;
            if v.abs() > 1e-12 {
                return Err(ModelError::NonzeroAtOrigin { field: name, value: v.abs() });
            }
            Ok(())
        };
        for (k, e) in self.f.iter().enumerate() {
            check(format!("f[{}]", k + 1), e)?;
        }
        for (r, row) in self.g.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                check(format!("G[{},{}]", r + 1, c + 1), e)?;
            }
        }
        for (a, e) in self.h.iter().enumerate() {
            check(format!("h[{}]", a + 1), e)?;
        }
        for (r, row) in self.j.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                check(format!("J[{},{}]", r + 1, c + 1), e)?;
            }
        }
        Ok(())
    }

    /// Rejects division nodes whose denominator interval contains zero on the
    /// analysis region, so all downstream bound constants stay finite.
    pub fn validate_on(&self, region: &BoxRegion) -> Result<(), ModelError> {
        let check = |name: String, e: &Expression| -> Result<(), ModelError> {
            e.interval_range(region)
                .map(|_| ())
                .map_err(|source| ModelError::Expr { field: name, source })
        };
        for (k, e) in self.f.iter().enumerate() {
            check(format!("f[{}]", k + 1), e)?;
        }
        for (r, row) in self.g.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                check(format!("G[{},{}]", r + 1, c + 1), e)?;
            }
        }
        for (a, e) in self.h.iter().enumerate() {
            check(format!("h[{}]", a + 1), e)?;
        }
        for (r, row) in self.j.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                check(format!("J[{},{}]", r + 1, c + 1), e)?;
            }
        }
        Ok(())
    }

    /// f(x) as a vector.
    pub fn eval_f(&self, x: &[f64]) -> Result<nalgebra::DVector<f64>, ExprError> {
        let mut out = nalgebra::DVector::zeros(self.n);
        for (k, e) in self.f.iter().enumerate() {
            out[k] = e.evaluate(x)?;
        }
        Ok(out)
    }

    /// Gbar(x) = B + G(x).
    pub fn eval_gbar(&self, x: &[f64]) -> Result<nalgebra::DMatrix<f64>, ExprError> {
        let mut out = self.b.clone();
        for r in 0..self.n {
            for c in 0..self.m {
                out[(r, c)] += self.g[r][c].evaluate(x)?;
            }
        }
        Ok(out)
    }

    /// h(x) as a vector.
    pub fn eval_h(&self, x: &[f64]) -> Result<nalgebra::DVector<f64>, ExprError> {
        let mut out = nalgebra::DVector::zeros(self.p);
        for (a, e) in self.h.iter().enumerate() {
            out[a] = e.evaluate(x)?;
        }
        Ok(out)
    }

    /// Jbar(x) = D + J(x).
    pub fn eval_jbar(&self, x: &[f64]) -> Result<nalgebra::DMatrix<f64>, ExprError> {
        let mut out = self.d.clone();
        for r in 0..self.p {
            for c in 0..self.m {
                out[(r, c)] += self.j[r][c].evaluate(x)?;
            }
        }
        Ok(out)
    }
}
