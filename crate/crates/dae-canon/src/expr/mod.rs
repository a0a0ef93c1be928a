//! Scalar functions of time as immutable symbolic expression trees.
//!
//! Expressions are shared (`Arc`), so the heavy matrix algebra of the
//! canonical-form procedure reuses common subtrees instead of copying them;
//! evaluation and differentiation memoise on node identity and therefore run
//! in the size of the shared graph, not of the unfolded tree.
//!
//! Every constructor applies *local* constant folding and neutral-element
//! elimination (`0 + x → x`, `0 * x → 0`, `x^1 → x`, ...). That is exactly
//! enough to make the structural zeros produced by the canonical-form
//! iterations fold to the literal constant `0`, which the pipeline relies on
//! for its termination argument. There is deliberately no general rewriting
//! engine; whether a non-constant expression vanishes identically is decided
//! by sampling (see [`crate::config::Tolerances`]).
//!
//! Folding caveat (documented contract): `0 * x → 0` and `0 / x → 0` discard
//! `x` even where `x` is not evaluable, so folding can only shrink — never
//! enlarge — the set of points where evaluation fails.

mod parser;

pub use parser::parse;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

/// Built-in univariate functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub(crate) fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

/// Expression tree node. Box-free sharing via `Arc`; see the module docs.
#[derive(Debug)]
pub enum Expr {
    /// Literal constant.
    Const(f64),
    /// The independent variable `t`.
    Time,
    /// Named parameter, bound to a value by the owning [`ScalarFn`].
    Param(String),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    /// Integer power.
    Pow(Arc<Expr>, i32),
    Neg(Arc<Expr>),
    Call(Func, Arc<Expr>),
}

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("cannot evaluate at t = {t}: {what}")]
    Eval { t: f64, what: String },
    #[error("unbound parameter `{name}`")]
    UnboundParam { name: String },
    #[error("expression graph exceeded the node budget ({nodes} > {budget})")]
    Budget { nodes: usize, budget: usize },
}

fn as_const(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(v) => Some(*v),
        _ => None,
    }
}

pub(crate) fn c(v: f64) -> Arc<Expr> {
    Arc::new(Expr::Const(v))
}

pub(crate) fn add(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => c(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Arc::new(Expr::Add(a, b)),
    }
}

pub(crate) fn sub(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => c(x - y),
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        _ => Arc::new(Expr::Sub(a, b)),
    }
}

pub(crate) fn mul(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => c(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => c(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Arc::new(Expr::Mul(a, b)),
    }
}

pub(crate) fn div(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    match (as_const(&a), as_const(&b)) {
        // A constant zero divisor stays a node so evaluation reports it.
        (_, Some(0.0)) => Arc::new(Expr::Div(a, b)),
        (Some(x), Some(y)) => c(x / y),
        (Some(0.0), _) => c(0.0),
        (_, Some(1.0)) => a,
        (_, Some(-1.0)) => neg(a),
        _ => Arc::new(Expr::Div(a, b)),
    }
}

pub(crate) fn pow(a: Arc<Expr>, n: i32) -> Arc<Expr> {
    match n {
        0 => c(1.0),
        1 => a,
        _ => match &*a {
            Expr::Const(v) => c(v.powi(n)),
            Expr::Pow(inner, m) => match m.checked_mul(n) {
                Some(k) => pow(inner.clone(), k),
                None => Arc::new(Expr::Pow(a.clone(), n)),
            },
            _ => Arc::new(Expr::Pow(a, n)),
        },
    }
}

pub(crate) fn neg(a: Arc<Expr>) -> Arc<Expr> {
    match &*a {
        Expr::Const(v) => c(-v),
        Expr::Neg(inner) => inner.clone(),
        _ => Arc::new(Expr::Neg(a)),
    }
}

pub(crate) fn call(f: Func, a: Arc<Expr>) -> Arc<Expr> {
    if let Some(v) = as_const(&a) {
        let y = f.apply(v);
        // Keep the node when folding would bake in a domain error; evaluation
        // will then report it with the offending function attached.
        if y.is_finite() {
            return c(y);
        }
    }
    Arc::new(Expr::Call(f, a))
}

pub(crate) type Params = Arc<BTreeMap<String, f64>>;

/// Evaluate an expression under a caller-held memo table, so the entries of
/// a matrix sharing subtrees (and one parameter map) are evaluated once.
pub(crate) fn eval_shared(
    e: &Arc<Expr>,
    t: f64,
    params: &Params,
    memo: &mut HashMap<*const Expr, f64>,
) -> Result<f64, ExprError> {
    eval_rec(e, t, params, memo)
}

fn empty_params() -> Params {
    static EMPTY: OnceLock<Params> = OnceLock::new();
    EMPTY.get_or_init(|| Arc::new(BTreeMap::new())).clone()
}

/// Merge parameter bindings of two operands.
///
/// Panics if the same name is bound to different values — combining scalar
/// functions from unrelated binding contexts is a programming error, like a
/// dimension mismatch.
fn merge_params(a: &Params, b: &Params) -> Params {
    if Arc::ptr_eq(a, b) || b.is_empty() {
        return a.clone();
    }
    if a.is_empty() {
        return b.clone();
    }
    let mut out = (**a).clone();
    for (k, v) in b.iter() {
        match out.get(k) {
            Some(w) if w.to_bits() != v.to_bits() => {
                panic!("parameter `{k}` bound to both {w} and {v}")
            }
            _ => {
                out.insert(k.clone(), *v);
            }
        }
    }
    Arc::new(out)
}

/// A scalar function of time: an expression tree plus parameter bindings.
#[derive(Clone)]
pub struct ScalarFn {
    expr: Arc<Expr>,
    params: Params,
}

impl ScalarFn {
    pub(crate) fn from_parts(expr: Arc<Expr>, params: Params) -> Self {
        ScalarFn { expr, params }
    }

    pub fn constant(v: f64) -> Self {
        ScalarFn { expr: c(v), params: empty_params() }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn time() -> Self {
        ScalarFn { expr: Arc::new(Expr::Time), params: empty_params() }
    }

    /// A named parameter bound to `value`.
    pub fn parameter(name: &str, value: f64) -> Self {
        let mut map = BTreeMap::new();
        map.insert(name.to_string(), value);
        ScalarFn { expr: Arc::new(Expr::Param(name.to_string())), params: Arc::new(map) }
    }

    pub fn expr(&self) -> &Arc<Expr> {
        &self.expr
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub(crate) fn params_arc(&self) -> &Params {
        &self.params
    }

    /// Structural zero test: the expression is literally the constant `0`.
    pub fn is_zero(&self) -> bool {
        matches!(&*self.expr, Expr::Const(v) if *v == 0.0)
    }

    /// The constant value when the expression is literally a constant.
    pub fn as_const(&self) -> Option<f64> {
        as_const(&self.expr)
    }

    /// Evaluate at time `t`.
    pub fn eval(&self, t: f64) -> Result<f64, ExprError> {
        let mut memo: HashMap<*const Expr, f64> = HashMap::new();
        eval_rec(&self.expr, t, &self.params, &mut memo)
    }

    /// Evaluate on a grid; fails on the first non-evaluable point.
    pub fn eval_grid(&self, ts: &[f64]) -> Result<Vec<f64>, ExprError> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    /// Largest absolute value over the sample points.
    pub fn max_abs_on(&self, ts: &[f64]) -> Result<f64, ExprError> {
        let mut m = 0.0f64;
        for &t in ts {
            m = m.max(self.eval(t)?.abs());
        }
        Ok(m)
    }

    /// Exact derivative with respect to `t`.
    pub fn derivative(&self) -> ScalarFn {
        let mut memo: HashMap<*const Expr, Arc<Expr>> = HashMap::new();
        ScalarFn { expr: d_rec(&self.expr, &mut memo), params: self.params.clone() }
    }

    /// `k`-th derivative.
    pub fn derivative_n(&self, k: usize) -> ScalarFn {
        let mut f = self.clone();
        for _ in 0..k {
            f = f.derivative();
        }
        f
    }

    /// Re-build the tree bottom-up through the folding constructors.
    ///
    /// All arithmetic in this crate already folds on construction, so this
    /// matters only for trees assembled elsewhere; values at sample points
    /// are unchanged (up to the folding caveat in the module docs).
    pub fn simplify(&self) -> ScalarFn {
        let mut memo: HashMap<*const Expr, Arc<Expr>> = HashMap::new();
        ScalarFn { expr: simp_rec(&self.expr, &mut memo), params: self.params.clone() }
    }

    /// Number of distinct nodes in the shared expression graph.
    pub fn node_count(&self) -> usize {
        let mut seen: HashSet<*const Expr> = HashSet::new();
        let mut stack = vec![&self.expr];
        while let Some(e) = stack.pop() {
            if !seen.insert(Arc::as_ptr(e)) {
                continue;
            }
            match &**e {
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Expr::Pow(a, _) | Expr::Neg(a) | Expr::Call(_, a) => stack.push(a),
                Expr::Const(_) | Expr::Time | Expr::Param(_) => {}
            }
        }
        seen.len()
    }

    pub fn powi(&self, n: i32) -> ScalarFn {
        ScalarFn { expr: pow(self.expr.clone(), n), params: self.params.clone() }
    }

    pub fn apply(&self, f: Func) -> ScalarFn {
        ScalarFn { expr: call(f, self.expr.clone()), params: self.params.clone() }
    }

    pub fn sqrt(&self) -> ScalarFn {
        self.apply(Func::Sqrt)
    }

    pub fn sin(&self) -> ScalarFn {
        self.apply(Func::Sin)
    }

    pub fn cos(&self) -> ScalarFn {
        self.apply(Func::Cos)
    }

    pub fn exp(&self) -> ScalarFn {
        self.apply(Func::Exp)
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFn({self})")
    }
}

fn eval_rec(
    e: &Arc<Expr>,
    t: f64,
    params: &Params,
    memo: &mut HashMap<*const Expr, f64>,
) -> Result<f64, ExprError> {
    let key = Arc::as_ptr(e);
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    let v = match &**e {
        Expr::Const(v) => *v,
        Expr::Time => t,
        Expr::Param(name) => params
            .get(name)
            .copied()
            .ok_or_else(|| ExprError::UnboundParam { name: name.clone() })?,
        Expr::Add(a, b) => eval_rec(a, t, params, memo)? + eval_rec(b, t, params, memo)?,
        Expr::Sub(a, b) => eval_rec(a, t, params, memo)? - eval_rec(b, t, params, memo)?,
        Expr::Mul(a, b) => eval_rec(a, t, params, memo)? * eval_rec(b, t, params, memo)?,
        Expr::Div(a, b) => {
            let num = eval_rec(a, t, params, memo)?;
            let den = eval_rec(b, t, params, memo)?;
            if den == 0.0 {
                return Err(ExprError::Eval { t, what: "division by zero".into() });
            }
            num / den
        }
        Expr::Pow(a, n) => eval_rec(a, t, params, memo)?.powi(*n),
        Expr::Neg(a) => -eval_rec(a, t, params, memo)?,
        Expr::Call(f, a) => {
            let x = eval_rec(a, t, params, memo)?;
            match f {
                Func::Log if x <= 0.0 => {
                    return Err(ExprError::Eval { t, what: format!("log of {x} (must be > 0)") })
                }
                Func::Sqrt if x < 0.0 => {
                    return Err(ExprError::Eval { t, what: format!("sqrt of {x} (must be ≥ 0)") })
                }
                _ => f.apply(x),
            }
        }
    };
    if !v.is_finite() {
        return Err(ExprError::Eval { t, what: format!("non-finite value in `{}`", ExprDisplay(e)) });
    }
    memo.insert(key, v);
    Ok(v)
}

fn d_rec(e: &Arc<Expr>, memo: &mut HashMap<*const Expr, Arc<Expr>>) -> Arc<Expr> {
    let key = Arc::as_ptr(e);
    if let Some(d) = memo.get(&key) {
        return d.clone();
    }
    let d = match &**e {
        Expr::Const(_) | Expr::Param(_) => c(0.0),
        Expr::Time => c(1.0),
        Expr::Add(a, b) => add(d_rec(a, memo), d_rec(b, memo)),
        Expr::Sub(a, b) => sub(d_rec(a, memo), d_rec(b, memo)),
        // Product rule: (uv)' = u'v + uv'
        Expr::Mul(a, b) => add(mul(d_rec(a, memo), b.clone()), mul(a.clone(), d_rec(b, memo))),
        // Quotient rule: (u/v)' = (u'v - uv')/v^2
        Expr::Div(a, b) => div(
            sub(mul(d_rec(a, memo), b.clone()), mul(a.clone(), d_rec(b, memo))),
            pow(b.clone(), 2),
        ),
        // (u^n)' = n u^(n-1) u'
        Expr::Pow(a, n) => mul(mul(c(*n as f64), pow(a.clone(), n - 1)), d_rec(a, memo)),
        Expr::Neg(a) => neg(d_rec(a, memo)),
        Expr::Call(f, a) => {
            let da = d_rec(a, memo);
            match f {
                Func::Sin => mul(call(Func::Cos, a.clone()), da),
                Func::Cos => neg(mul(call(Func::Sin, a.clone()), da)),
                // tan' = 1 + tan^2
                Func::Tan => mul(add(c(1.0), pow(call(Func::Tan, a.clone()), 2)), da),
                Func::Exp => mul(e.clone(), da),
                Func::Log => div(da, a.clone()),
                // sqrt' = u' / (2 sqrt(u))
                Func::Sqrt => div(da, mul(c(2.0), e.clone())),
            }
        }
    };
    memo.insert(key, d.clone());
    d
}

fn simp_rec(e: &Arc<Expr>, memo: &mut HashMap<*const Expr, Arc<Expr>>) -> Arc<Expr> {
    let key = Arc::as_ptr(e);
    if let Some(s) = memo.get(&key) {
        return s.clone();
    }
    let s = match &**e {
        Expr::Const(_) | Expr::Time | Expr::Param(_) => e.clone(),
        Expr::Add(a, b) => add(simp_rec(a, memo), simp_rec(b, memo)),
        Expr::Sub(a, b) => sub(simp_rec(a, memo), simp_rec(b, memo)),
        Expr::Mul(a, b) => mul(simp_rec(a, memo), simp_rec(b, memo)),
        Expr::Div(a, b) => div(simp_rec(a, memo), simp_rec(b, memo)),
        Expr::Pow(a, n) => pow(simp_rec(a, memo), *n),
        Expr::Neg(a) => neg(simp_rec(a, memo)),
        Expr::Call(f, a) => call(*f, simp_rec(a, memo)),
    };
    memo.insert(key, s.clone());
    s
}

// ---------------------------------------------------------------------------
// Arithmetic operators (by reference; ScalarFn is cheap to clone but the
// reference form keeps call sites readable).
// ---------------------------------------------------------------------------

impl std::ops::Add for &ScalarFn {
    type Output = ScalarFn;
    fn add(self, rhs: &ScalarFn) -> ScalarFn {
        ScalarFn {
            expr: add(self.expr.clone(), rhs.expr.clone()),
            params: merge_params(&self.params, &rhs.params),
        }
    }
}

impl std::ops::Sub for &ScalarFn {
    type Output = ScalarFn;
    fn sub(self, rhs: &ScalarFn) -> ScalarFn {
        ScalarFn {
            expr: sub(self.expr.clone(), rhs.expr.clone()),
            params: merge_params(&self.params, &rhs.params),
        }
    }
}

impl std::ops::Mul for &ScalarFn {
    type Output = ScalarFn;
    fn mul(self, rhs: &ScalarFn) -> ScalarFn {
        ScalarFn {
            expr: mul(self.expr.clone(), rhs.expr.clone()),
            params: merge_params(&self.params, &rhs.params),
        }
    }
}

impl std::ops::Div for &ScalarFn {
    type Output = ScalarFn;
    fn div(self, rhs: &ScalarFn) -> ScalarFn {
        ScalarFn {
            expr: div(self.expr.clone(), rhs.expr.clone()),
            params: merge_params(&self.params, &rhs.params),
        }
    }
}

impl std::ops::Neg for &ScalarFn {
    type Output = ScalarFn;
    fn neg(self) -> ScalarFn {
        ScalarFn { expr: neg(self.expr.clone()), params: self.params.clone() }
    }
}

// ---------------------------------------------------------------------------
// Display: grammar-compatible, precedence-aware printing.
// ---------------------------------------------------------------------------

struct ExprDisplay<'a>(&'a Arc<Expr>);

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(self.0, 0, f)
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(&self.expr, 0, f)
    }
}

/// Operator precedence levels: 1 additive, 2 multiplicative, 3 unary minus,
/// 4 power, 5 atoms. Parenthesise a subtree whenever its own level is below
/// the level its context requires. The operand of a printed unary minus is
/// held to level 5 because the grammar attaches `^` *after* unary minus:
/// printing `Neg(Pow(t, 2))` as `-t^2` would re-parse as `(-t)^2`.
fn fmt_prec(e: &Arc<Expr>, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let level = match &**e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(..) => 3,
        Expr::Pow(..) => 4,
        Expr::Const(v) if *v < 0.0 => 3,
        _ => 5,
    };
    let parens = level < min;
    if parens {
        f.write_str("(")?;
    }
    match &**e {
        Expr::Const(v) => write!(f, "{v}")?,
        Expr::Time => f.write_str("t")?,
        Expr::Param(name) => f.write_str(name)?,
        Expr::Add(a, b) => {
            fmt_prec(a, 1, f)?;
            f.write_str(" + ")?;
            fmt_prec(b, 2, f)?;
        }
        Expr::Sub(a, b) => {
            fmt_prec(a, 1, f)?;
            f.write_str(" - ")?;
            fmt_prec(b, 2, f)?;
        }
        Expr::Mul(a, b) => {
            fmt_prec(a, 2, f)?;
            f.write_str("*")?;
            fmt_prec(b, 3, f)?;
        }
        Expr::Div(a, b) => {
            fmt_prec(a, 2, f)?;
            f.write_str("/")?;
            fmt_prec(b, 4, f)?;
        }
        Expr::Pow(a, n) => {
            fmt_prec(a, 5, f)?;
            write!(f, "^{n}")?;
        }
        Expr::Neg(a) => {
            f.write_str("-")?;
            fmt_prec(a, 5, f)?;
        }
        Expr::Call(func, a) => {
            f.write_str(func.name())?;
            f.write_str("(")?;
            fmt_prec(a, 0, f)?;
            f.write_str(")")?;
        }
    }
    if parens {
        f.write_str(")")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn p(src: &str) -> ScalarFn {
        parse(src, &BTreeMap::new()).unwrap()
    }

    fn p_with(src: &str, params: &[(&str, f64)]) -> ScalarFn {
        let map: BTreeMap<String, f64> =
            params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        parse(src, &map).unwrap()
    }

    /// Central difference with two shrinking steps, Richardson-combined.
    fn numeric_derivative(f: &ScalarFn, t: f64) -> f64 {
        let h = 1e-5 * (1.0 + t.abs());
        let d1 = (f.eval(t + h).unwrap() - f.eval(t - h).unwrap()) / (2.0 * h);
        let h2 = h / 2.0;
        let d2 = (f.eval(t + h2).unwrap() - f.eval(t - h2).unwrap()) / (2.0 * h2);
        (4.0 * d2 - d1) / 3.0
    }

    #[test]
    fn parse_and_eval_basics() {
        assert_eq!(p("1 + 2*3").eval(0.0).unwrap(), 7.0);
        assert_eq!(p("t^2 - 1").eval(3.0).unwrap(), 8.0);
        assert_eq!(p("(t + 1)/(t - 1)").eval(3.0).unwrap(), 2.0);
        let v = p("sin(t)^2 + cos(t)^2").eval(0.7).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parse_with_parameters() {
        // γ(t) = sqrt((ηt − 1)^2 + 1) at t = 0 with η = 1 is sqrt(2).
        let g = p_with("sqrt((eta*t - 1)^2 + 1)", &[("eta", 1.0)]);
        assert!((g.eval(0.0).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn unknown_identifier_is_rejected() {
        let err = parse("a + t", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, ExprError::Parse { .. }), "got {err:?}");
    }

    #[test]
    fn unary_minus_binds_tighter_than_power() {
        // Grammar: atom := ... | "-" atom, factor := atom ("^" int)?,
        // so -t^2 is (-t)^2. Write -(t^2) for the other reading.
        assert_eq!(p("-t^2").eval(3.0).unwrap(), 9.0);
        assert_eq!(p("-(t^2)").eval(3.0).unwrap(), -9.0);
    }

    #[test]
    fn derivative_of_gamma_vanishes_at_its_minimum() {
        // d/dt sqrt((t−1)^2+1) = (t−1)/sqrt(...) is 0 at t = 1.
        let g = p_with("sqrt((eta*t - 1)^2 + 1)", &[("eta", 1.0)]);
        let dg = g.derivative();
        assert!(dg.eval(1.0).unwrap().abs() < 1e-15);
        // And matches finite differences elsewhere.
        for &t in &[0.3, 0.9, 2.4] {
            let want = numeric_derivative(&g, t);
            assert!((dg.eval(t).unwrap() - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn derivative_rules_match_finite_differences() {
        let cases = [
            "sin(2*t)/2",
            "exp(t)*cos(t)",
            "log(t^2 + 1)",
            "tan(t/4)",
            "sqrt(t^2 + 3)",
            "(t^2 + 1)/(t + 2)",
            "sin(cos(t))",
            "(-(t^2) - 1)*sin(t)",
            "t^-2 + t^3",
        ];
        for src in cases {
            let f = p(src);
            let df = f.derivative();
            for &t in &[0.4, 1.1, 2.7] {
                let want = numeric_derivative(&f, t);
                let got = df.eval(t).unwrap();
                assert!(
                    (got - want).abs() <= 1e-8 * (1.0 + want.abs()),
                    "d/dt {src} at {t}: got {got}, finite difference {want}"
                );
            }
        }
    }

    #[test]
    fn folding_produces_structural_zeros() {
        let zero = ScalarFn::zero();
        let s = p("sin(t)");
        assert!((&zero * &s).is_zero());
        assert!((&s - &s).is_zero() == false); // no cancellation rewriting
        assert!((&(&zero * &s) + &(&s * &zero)).is_zero());
        // 0-elimination keeps the other operand intact.
        assert_eq!((&s + &zero).to_string(), "sin(t)");
    }

    #[test]
    fn simplify_preserves_sampled_values() {
        let f = p("(1*t + 0) * (t^1) + 0*sin(t) + 2^2");
        let g = f.simplify();
        for &t in &[0.1, 0.5, 1.9] {
            assert!((f.eval(t).unwrap() - g.eval(t).unwrap()).abs() < 1e-12);
        }
        assert!(g.node_count() <= f.node_count());
    }

    #[test]
    fn display_round_trips_through_parser() {
        let cases = ["-(t^2) - 1", "sin(2*t)/2", "(t + 1)*(t - 2)^3", "1/(t^2 + 1)", "-sin(t)*t"];
        for src in cases {
            let f = p(src);
            let printed = f.to_string();
            let g = p(&printed);
            for &t in &[0.3, 1.7, 2.9] {
                assert!(
                    (f.eval(t).unwrap() - g.eval(t).unwrap()).abs() < 1e-12,
                    "round trip changed `{src}` (printed `{printed}`)"
                );
            }
        }
    }

    #[test]
    fn domain_errors_are_reported() {
        assert!(matches!(p("log(t - 5)").eval(1.0), Err(ExprError::Eval { .. })));
        assert!(matches!(p("1/(t - 1)").eval(1.0), Err(ExprError::Eval { .. })));
        assert!(matches!(p("sqrt(-t)").eval(2.0), Err(ExprError::Eval { .. })));
    }

    #[test]
    fn node_count_counts_shared_nodes_once() {
        let s = p("sin(t)");
        let prod = &s * &s; // shares the sin(t) subtree
        assert_eq!(prod.node_count(), s.node_count() + 1);
    }

    #[test]
    fn eval_memoisation_is_consistent_on_shared_graphs() {
        let s = p("exp(sin(t) + t^2)");
        let f = &(&s * &s) + &s;
        let t = 0.83;
        let direct = {
            let v = s.eval(t).unwrap();
            v * v + v
        };
        assert!((f.eval(t).unwrap() - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }
}
